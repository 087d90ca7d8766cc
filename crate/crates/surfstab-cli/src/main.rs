//! Command-line front end. Three subcommands: `generate` writes a sample
//! surface to an extended OFF file, `analyze` runs the full pipeline and
//! emits an AnalysisReport, `certify` runs only the pieces needed for the
//! stability-bound certificate.
//!
//! Exit codes: 0 all checks pass, 1 a check failed, 2 parameter error,
//! 3 resolution insufficient, 4 I/O, validation, or solver failure.

mod report;

use clap::{Args, Parser, Subcommand, ValueEnum};
use surfstab::nalgebra::Matrix3;
use report::*;
use serde::Serialize;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use surfstab::ambient::AmbientSpace;
use surfstab::fem::{
    assemble_jacobi_operators, cmc_spectrum, default_tol_zero, jacobi_spectrum, DiscreteOperators,
    Spectrum,
};
use surfstab::generators::{
    clifford_torus, equatorial_sphere, flat_torus_surface, round_sphere, schwarz_p,
    GeneratorError, GeneratorOutput,
};
use surfstab::geometry::{shape_operator, SurfaceGeometry};
use surfstab::hodge::{dec_operators, harmonic_basis, HarmonicBasis, HodgeError};
use surfstab::killing::{
    cmc_certificate, default_tag_tol, lemma1_residuals, lemma2_residual_with_tol,
    theorem_certificate, CertOpts, Certificate, KillingError, Verdict,
};
use surfstab::mesh::{load_mesh, load_mesh_auto, write_mesh, Mesh, TopologyReport};

#[derive(Parser)]
#[command(
    name = "surfstab",
    version,
    about = "Stability index bounds for closed surfaces in ambients with a Killing frame"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a sample surface to an extended OFF file
    Generate(GenerateArgs),
    /// Run the full pipeline and emit an analysis report
    Analyze(AnalyzeArgs),
    /// Run only the pieces needed for the stability-bound certificate
    Certify(CertifyArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// clifford | equatorial | flat-torus | sphere | schwarz-p
    name: String,
    #[command(flatten)]
    params: GenFlags,
    /// Output path for the extended OFF file
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct GenFlags {
    /// Grid count along the first angle (clifford)
    #[arg(long, default_value_t = 32)]
    nu: usize,
    /// Grid count along the second angle (clifford)
    #[arg(long, default_value_t = 32)]
    nv: usize,
    /// Icosphere subdivision level (equatorial, sphere)
    #[arg(long, default_value_t = 4)]
    subdiv: usize,
    /// Sphere radius (sphere)
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    /// Grid count per period (flat-torus)
    #[arg(long, default_value_t = 16)]
    n: usize,
    /// Diagonal lattice periods as LxLyLz, e.g. 1x1x2 (flat-torus)
    #[arg(long, default_value = "1x1x1")]
    lattice: String,
    /// Axis normal to the flat torus surface: 0, 1, or 2
    #[arg(long, default_value_t = 2)]
    normal_axis: usize,
    /// Sample grid resolution for the level set (schwarz-p)
    #[arg(long, default_value_t = 16)]
    resolution: usize,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Mesh file, or a generator spec like clifford:nu=64,nv=64
    input: String,
    #[command(flatten)]
    common: PipelineFlags,
    /// Number of eigenpairs to compute
    #[arg(long, default_value_t = 12)]
    eigs: usize,
    /// Write eigenvalues to this CSV file
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct CertifyArgs {
    /// Mesh file, or a generator spec like clifford:nu=64,nv=64
    input: String,
    #[command(flatten)]
    common: PipelineFlags,
    /// Number of eigenpairs to compute (default: what the certificate needs)
    #[arg(long)]
    eigs: Option<usize>,
}

#[derive(Args)]
struct PipelineFlags {
    /// Ambient of a plain mesh file (otherwise taken from the file)
    #[arg(long, value_enum)]
    ambient: Option<AmbientArg>,
    /// Half-width of the zero eigenvalue band (default: mesh-derived)
    #[arg(long)]
    tol_zero: Option<f64>,
    /// Relative residual bound for accepting harmonic forms
    #[arg(long, default_value_t = 1e-8)]
    harmonic_tol: f64,
    /// Treat the surface as CMC: mean-zero spectrum and index-only bound
    #[arg(long)]
    cmc: bool,
    /// Override the number of witnessed test directions k
    #[arg(long)]
    force_k: Option<usize>,
    /// Largest |H| accepted as minimal; with --cmc, the relative
    /// tolerance on H constancy
    #[arg(long)]
    minimality_tol: Option<f64>,
    /// Write the JSON report to this file
    #[arg(long)]
    json: Option<PathBuf>,
    /// Omit the timestamp so repeated runs are byte-identical
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Copy, Clone, ValueEnum)]
enum AmbientArg {
    Euclidean3,
    Sphere3,
    Flattorus3,
}

impl AmbientArg {
    fn tag(self) -> surfstab::ambient::AmbientTag {
        match self {
            AmbientArg::Euclidean3 => surfstab::ambient::AmbientTag::Euclidean3,
            AmbientArg::Sphere3 => surfstab::ambient::AmbientTag::Sphere3,
            AmbientArg::Flattorus3 => surfstab::ambient::AmbientTag::FlatTorus3,
        }
    }
}

enum Failure {
    Param(String),
    Resolution(String),
    Fatal(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Param(_) => 2,
            Failure::Resolution(_) => 3,
            Failure::Fatal(_) => 4,
        }
    }
    fn message(&self) -> &str {
        match self {
            Failure::Param(m) | Failure::Resolution(m) | Failure::Fatal(m) => m,
        }
    }
}

fn fatal<E: Display>(e: E) -> Failure {
    Failure::Fatal(e.to_string())
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Cmd::Generate(a) => run_generate(&a),
        Cmd::Analyze(a) => run_analyze(&a),
        Cmd::Certify(a) => run_certify(&a),
    };
    let code = outcome.unwrap_or_else(|f| {
        eprintln!("error: {}", f.message());
        f.code()
    });
    std::process::exit(code);
}

fn parse_lattice(s: &str) -> Result<Matrix3<f64>, Failure> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != 3 {
        return Err(Failure::Param(format!(
            "lattice must be three periods like 1x1x2, got '{s}'"
        )));
    }
    let mut diag = [0.0; 3];
    for (d, p) in diag.iter_mut().zip(&parts) {
        *d = p
            .parse()
            .map_err(|_| Failure::Param(format!("bad lattice period '{p}'")))?;
    }
    Ok(Matrix3::from_diagonal(&diag.into()))
}

fn run_named_generator(name: &str, p: &GenFlags) -> Result<GeneratorOutput, Failure> {
    let map_err = |e: GeneratorError| match e {
        GeneratorError::BadParameter(m) => Failure::Param(m),
        other => fatal(other),
    };
    match name {
        "clifford" => clifford_torus(p.nu, p.nv).map_err(map_err),
        "equatorial" => equatorial_sphere(p.subdiv).map_err(map_err),
        "flat-torus" => {
            let lattice = parse_lattice(&p.lattice)?;
            flat_torus_surface(lattice, p.normal_axis, p.n).map_err(map_err)
        }
        "sphere" => round_sphere(p.radius, p.subdiv).map_err(map_err),
        "schwarz-p" => schwarz_p(p.resolution).map_err(map_err),
        _ => Err(Failure::Param(format!(
            "unknown generator '{name}' (expected clifford, equatorial, flat-torus, sphere, schwarz-p)"
        ))),
    }
}

const GENERATOR_NAMES: [&str; 5] = ["clifford", "equatorial", "flat-torus", "sphere", "schwarz-p"];

/// Parses "name:key=value,key=value" into generator flags over defaults.
fn parse_generator_spec(spec: &str) -> Result<(String, GenFlags), Failure> {
    let (name, rest) = match spec.split_once(':') {
        Some((n, r)) => (n, r),
        None => (spec, ""),
    };
    let mut p = GenFlags {
        nu: 32,
        nv: 32,
        subdiv: 4,
        radius: 1.0,
        n: 16,
        lattice: "1x1x1".into(),
        normal_axis: 2,
        resolution: 16,
    };
    for kv in rest.split(',').filter(|s| !s.is_empty()) {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Param(format!("bad generator option '{kv}'")))?;
        let busted = || Failure::Param(format!("bad value '{value}' for '{key}'"));
        match key {
            "nu" => p.nu = value.parse().map_err(|_| busted())?,
            "nv" => p.nv = value.parse().map_err(|_| busted())?,
            "subdiv" => p.subdiv = value.parse().map_err(|_| busted())?,
            "radius" | "r" => p.radius = value.parse().map_err(|_| busted())?,
            "n" => p.n = value.parse().map_err(|_| busted())?,
            "lattice" => p.lattice = value.into(),
            "normal-axis" | "normal_axis" => p.normal_axis = value.parse().map_err(|_| busted())?,
            "resolution" => p.resolution = value.parse().map_err(|_| busted())?,
            _ => return Err(Failure::Param(format!("unknown generator option '{key}'"))),
        }
    }
    Ok((name.to_string(), p))
}

fn ambient_name(a: &AmbientSpace) -> &'static str {
    match a {
        AmbientSpace::Euclidean3 => "euclidean3",
        AmbientSpace::Sphere3 => "sphere3",
        AmbientSpace::FlatTorus3 { .. } => "flattorus3",
    }
}

/// Resolves the analyze/certify input: an existing mesh file (geometry
/// estimated from the triangulation) or a generator spec (closed-form
/// geometry attached).
fn resolve_input(
    input: &str,
    ambient: Option<AmbientArg>,
) -> Result<(Mesh, SurfaceGeometry, InputBlock), Failure> {
    let path = Path::new(input);
    let looks_like_spec = !path.exists()
        && GENERATOR_NAMES.contains(&input.split_once(':').map_or(input, |(n, _)| n));
    if looks_like_spec {
        let (name, flags) = parse_generator_spec(input)?;
        let out = run_named_generator(&name, &flags)?;
        let block = InputBlock {
            source: format!("generator {input}"),
            ambient: ambient_name(&out.mesh.ambient).into(),
        };
        return Ok((out.mesh, out.geometry, block));
    }
    let mesh = match ambient {
        Some(a) => load_mesh(path, a.tag()).map_err(fatal)?,
        None => load_mesh_auto(path).map_err(fatal)?,
    };
    let geometry = shape_operator(&mesh, None).map_err(fatal)?;
    let block = InputBlock {
        source: format!("file {input}"),
        ambient: ambient_name(&mesh.ambient).into(),
    };
    Ok((mesh, geometry, block))
}

fn run_generate(args: &GenerateArgs) -> Result<i32, Failure> {
    let out = run_named_generator(&args.name, &args.params)?;
    write_mesh(&out.mesh, &args.out).map_err(fatal)?;
    println!(
        "wrote {} ({} vertices, {} faces, ambient {})",
        args.out.display(),
        out.mesh.num_vertices(),
        out.mesh.num_faces(),
        ambient_name(&out.mesh.ambient)
    );
    Ok(0)
}

fn timestamp(flags: &PipelineFlags) -> Option<u64> {
    if flags.no_timestamp {
        None
    } else {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .ok()
            .map(|d| d.as_secs())
    }
}

fn compute_spectrum(
    ops: &DiscreteOperators,
    m: usize,
    flags: &PipelineFlags,
) -> Result<Spectrum, Failure> {
    let tol = flags.tol_zero.unwrap_or_else(|| default_tol_zero(ops));
    let spec = if flags.cmc {
        cmc_spectrum(ops, m, tol)
    } else {
        jacobi_spectrum(ops, m, tol)
    };
    spec.map_err(fatal)
}

fn compute_harmonic_basis(
    mesh: &Mesh,
    geom: &SurfaceGeometry,
    genus: usize,
    flags: &PipelineFlags,
) -> Result<(surfstab::hodge::DecOperators, HarmonicBasis), Failure> {
    let dec = dec_operators(mesh, geom);
    let basis = harmonic_basis(mesh, geom, &dec, genus, flags.harmonic_tol).map_err(|e| match e {
        HodgeError::GapNotResolved { .. } | HodgeError::ResidualTooLarge { .. } => {
            Failure::Resolution(e.to_string())
        }
        other => fatal(other),
    })?;
    Ok((dec, basis))
}

fn certificate_blocks(
    cert: Result<Certificate, KillingError>,
) -> Result<(Option<CertificateBlock>, Option<String>), Failure> {
    match cert {
        Ok(c) => Ok((
            Some(CertificateBlock {
                k: c.k,
                rows: c.rows,
                cols: c.cols,
                singular_values: c.singular_values.clone(),
                q_sum: c.q_sum,
                rhs: c.rhs,
                slack: c.slack,
                verdict: c.verdict.as_str().into(),
                bound: c.bound,
            }),
            None,
        )),
        Err(e @ (KillingError::NotMinimal { .. } | KillingError::NonConstantH { .. })) => {
            Ok((None, Some(format!("certificate skipped: {e} (see --minimality-tol)"))))
        }
        Err(other) => Err(fatal(other)),
    }
}

fn spectrum_block(spec: &Spectrum) -> SpectrumBlock {
    SpectrumBlock {
        constrained_mean_zero: spec.mean_zero,
        eigenvalues: spec.eigenvalues.clone(),
        index: spec.index,
        nullity: spec.nullity,
        tol_zero: spec.tol_zero,
        zero_band_margin: spec.gap_report,
        truncated: spec.truncated,
    }
}

fn topology_block(topo: &TopologyReport) -> TopologyBlock {
    TopologyBlock {
        vertices: topo.num_vertices,
        edges: topo.num_edges,
        faces: topo.num_faces,
        euler_characteristic: topo.euler_characteristic,
        genus: topo.genus,
    }
}

fn geometry_block(geom: &SurfaceGeometry) -> GeometryBlock {
    GeometryBlock {
        area: geom.total_area(),
        max_abs_h: geom.max_abs_h(),
        mean_a2: geom.mean_a2(),
        source: geom.source_tag.as_str().into(),
    }
}

fn max_slice(a: &mut [f64; 3], b: [f64; 3]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x = x.max(y);
    }
}

fn run_analyze(args: &AnalyzeArgs) -> Result<i32, Failure> {
    let flags = &args.common;
    let (mesh, geometry, input_block) = resolve_input(&args.input, flags.ambient)?;
    let topo = mesh.topology().map_err(fatal)?;
    let ops = assemble_jacobi_operators(&mesh, &geometry).map_err(fatal)?;
    if args.eigs == 0 {
        return Err(Failure::Param("--eigs must be at least 1".into()));
    }
    let m = args.eigs.min(mesh.num_vertices().saturating_sub(1)).max(1);
    let spectrum = compute_spectrum(&ops, m, flags)?;
    let (_dec, basis) = compute_harmonic_basis(&mesh, &geometry, topo.genus, flags)?;

    let h_tol = flags
        .minimality_tol
        .unwrap_or_else(|| default_tag_tol(geometry.source_tag));
    let lemmas = if basis.count() > 0 {
        let mut worst = [0.0; 3];
        for field in &basis.fields {
            let r = lemma1_residuals(&mesh, &geometry, field).map_err(fatal)?;
            max_slice(&mut worst, r);
        }
        let mut lemma2_worst: Option<f64> = None;
        let mut note = None;
        for j in 0..basis.count() {
            let mut coeffs = vec![0.0; basis.count()];
            coeffs[j] = 1.0;
            match lemma2_residual_with_tol(&mesh, &geometry, &ops, &basis, &coeffs, h_tol) {
                Ok(rep) => {
                    let prev = lemma2_worst.unwrap_or(0.0);
                    lemma2_worst = Some(prev.max(rep.rel_residual));
                }
                Err(e @ (KillingError::NonConstantH { .. } | KillingError::NotMinimal { .. })) => {
                    note = Some(format!("identity check skipped: {e}"));
                    lemma2_worst = None;
                    break;
                }
                Err(other) => return Err(fatal(other)),
            }
        }
        Some(LemmaBlock {
            r1: worst[0],
            r2: worst[1],
            r3: worst[2],
            lemma2_rel_residual: lemma2_worst,
            note,
        })
    } else {
        None
    };

    let opts = CertOpts {
        force_k: flags.force_k,
        minimality_tol: flags.minimality_tol,
        h_constancy_tol: flags.minimality_tol,
    };
    let cert = if flags.cmc {
        cmc_certificate(&mesh, &geometry, &ops, &spectrum, &basis, &opts)
    } else {
        theorem_certificate(&mesh, &geometry, &ops, &spectrum, &basis, &opts)
    };
    let (certificate, certificate_note) = certificate_blocks(cert)?;

    let report = AnalysisReport {
        timestamp: timestamp(flags),
        input: input_block,
        topology: topology_block(&topo),
        geometry: geometry_block(&geometry),
        spectrum: spectrum_block(&spectrum),
        harmonic: basis_block(&basis, topo.genus),
        lemmas,
        certificate,
        certificate_note,
        cmc: flags.cmc,
    };

    if let Some(path) = &flags.json {
        std::fs::write(path, report.to_json().map_err(fatal)?).map_err(fatal)?;
    }
    if let Some(path) = &args.csv {
        std::fs::write(path, spectrum_csv(&report.spectrum, &spectrum.residuals))
            .map_err(fatal)?;
    }
    print_analysis(&report);

    let bound = report.bound();
    let verdict = report.certificate.as_ref().map(|c| c.verdict.clone());
    if verdict.as_deref() == Some("resolution_insufficient") {
        return Ok(3);
    }
    if !bound.pass || verdict.as_deref() == Some("constraints_full_rank") {
        return Ok(1);
    }
    Ok(0)
}

fn basis_block(basis: &HarmonicBasis, genus: usize) -> Option<HarmonicBlock> {
    if basis.count() == 0 && genus == 0 {
        return None;
    }
    let fold_max = |v: &[f64]| v.iter().copied().fold(0.0f64, f64::max);
    Some(HarmonicBlock {
        dimension: basis.count(),
        residual_d: fold_max(&basis.residual_d),
        residual_delta: fold_max(&basis.residual_delta),
        relative_residual: fold_max(&basis.relative_residual),
        gap_ratio: basis.gap_ratio,
    })
}

fn print_analysis(report: &AnalysisReport) {
    let t = &report.topology;
    println!("input: {} (ambient {})", report.input.source, report.input.ambient);
    println!(
        "topology: V={} E={} F={} chi={} genus={}",
        t.vertices, t.edges, t.faces, t.euler_characteristic, t.genus
    );
    let g = &report.geometry;
    println!(
        "geometry: area={:.6} max|H|={:.4e} mean|A|^2={:.6} ({})",
        g.area, g.max_abs_h, g.mean_a2, g.source
    );
    let s = &report.spectrum;
    println!(
        "spectrum: index={} nullity={} tol_zero={:.3e} ({} eigenvalues{})",
        s.index,
        s.nullity,
        s.tol_zero,
        s.eigenvalues.len(),
        if s.constrained_mean_zero { ", mean-zero" } else { "" }
    );
    if let Some(h) = &report.harmonic {
        println!(
            "harmonic: dim={} rel_residual={:.3e} gap_ratio={:.3e}",
            h.dimension, h.relative_residual, h.gap_ratio
        );
    }
    if let Some(l) = &report.lemmas {
        let lemma2 = l
            .lemma2_rel_residual
            .map(|v| format!("{v:.3e}"))
            .unwrap_or_else(|| "skipped".into());
        println!(
            "identities: r1={:.3e} r2={:.3e} r3={:.3e} lemma2={}",
            l.r1, l.r2, l.r3, lemma2
        );
        if let Some(n) = &l.note {
            println!("  note: {n}");
        }
    }
    if let Some(c) = &report.certificate {
        println!(
            "certificate: k={} verdict={} q_sum={:.6e} rhs={:.6e} slack={:.3e}",
            c.k, c.verdict, c.q_sum, c.rhs, c.slack
        );
    }
    if let Some(n) = &report.certificate_note {
        println!("note: {n}");
    }
    println!("{}", report.bound().line);
}

#[derive(Serialize)]
struct CertifyReport {
    schema: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    timestamp: Option<u64>,
    input: InputBlock,
    genus: usize,
    certificate: CertificateBlock,
}

fn run_certify(args: &CertifyArgs) -> Result<i32, Failure> {
    let flags = &args.common;
    let (mesh, geometry, input_block) = resolve_input(&args.input, flags.ambient)?;
    let topo = mesh.topology().map_err(fatal)?;
    let ops = assemble_jacobi_operators(&mesh, &geometry).map_err(fatal)?;
    let genus = topo.genus as i64;
    let planned_k = flags.force_k.map(|k| k as i64).unwrap_or(if flags.cmc {
        (genus - 1).div_euclid(3)
    } else {
        (genus + 2).div_euclid(3)
    });
    let need = (planned_k - 1).max(1) as usize;
    let m = args
        .eigs
        .unwrap_or(need)
        .min(mesh.num_vertices().saturating_sub(1))
        .max(1);
    let spectrum = compute_spectrum(&ops, m, flags)?;
    let (_dec, basis) = compute_harmonic_basis(&mesh, &geometry, topo.genus, flags)?;

    let opts = CertOpts {
        force_k: flags.force_k,
        minimality_tol: flags.minimality_tol,
        h_constancy_tol: flags.minimality_tol,
    };
    let cert = if flags.cmc {
        cmc_certificate(&mesh, &geometry, &ops, &spectrum, &basis, &opts)
    } else {
        theorem_certificate(&mesh, &geometry, &ops, &spectrum, &basis, &opts)
    }
    .map_err(|e| match e {
        KillingError::NotMinimal { .. } | KillingError::NonConstantH { .. } => {
            Failure::Fatal(format!("{e} (see --minimality-tol)"))
        }
        other => fatal(other),
    })?;

    if topo.genus == 0 {
        println!(
            "empty harmonic basis, bound trivial (\u{2308}0/3\u{2309} = 0)"
        );
    }
    println!(
        "certificate: k={} rows={} cols={} verdict={}",
        cert.k,
        cert.rows,
        cert.cols,
        cert.verdict.as_str()
    );
    println!(
        "  q_sum={:.6e} rhs={:.6e} slack={:.3e} bound={}",
        cert.q_sum, cert.rhs, cert.slack, cert.bound
    );

    if let Some(path) = &flags.json {
        let wire = CertifyReport {
            schema: "1",
            timestamp: timestamp(flags),
            input: input_block,
            genus: topo.genus,
            certificate: CertificateBlock {
                k: cert.k,
                rows: cert.rows,
                cols: cert.cols,
                singular_values: cert.singular_values.clone(),
                q_sum: cert.q_sum,
                rhs: cert.rhs,
                slack: cert.slack,
                verdict: cert.verdict.as_str().into(),
                bound: cert.bound,
            },
        };
        let mut text = serde_json::to_string_pretty(&wire).map_err(fatal)?;
        text.push('\n');
        std::fs::write(path, text).map_err(fatal)?;
    }

    Ok(match cert.verdict {
        Verdict::BoundWitnessed => 0,
        Verdict::ResolutionInsufficient => 3,
        Verdict::ConstraintsFullRank => 1,
    })
}
