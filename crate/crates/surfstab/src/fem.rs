//! The discrete Jacobi operator and its spectrum.
//!
//! Quadratic form, fixed crate wide:
//!
//! ```text
//! Q(u) = u' K u - sum_v V(v) M_vv u(v)^2
//! ```
//!
//! with K the cotangent stiffness matrix over lifted faces, M the lumped
//! (diagonal) vertex-area mass and V the potential |A|^2 + Ric(N,N). The
//! eigenproblem is the pencil (K - diag(V) M, M); index counts eigenvalues
//! below -tol_zero, nullity those within tol_zero of zero. Everything is
//! solved through the M^(-1/2) congruence, which the diagonal mass makes
//! exact, so eigenvectors come back M-orthonormal.

use crate::geometry::SurfaceGeometry;
use crate::linalg::{
    dense_symmetric_eigen, solve_smallest, Csr, EigenPairs, IterOpts, LinOp, SolveError,
    DENSE_LIMIT,
};
use crate::mesh::Mesh;
use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FemError {
    #[error("eigensolve failed: {0}")]
    Solve(#[from] SolveError),
    #[error("geometry failure during assembly: {0}")]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error("ambient failure during assembly: {0}")]
    Ambient(#[from] crate::ambient::AmbientError),
    #[error("requested {want} eigenpairs but the mesh has only {have} usable dimensions")]
    TooManyPairs { want: usize, have: usize },
    #[error("spectrum is truncated: largest computed eigenvalue {last:.6e} is below tol_zero = {tol:.6e}; request more pairs")]
    Truncated { last: f64, tol: f64 },
    #[error("rayleigh quotient of the zero function")]
    ZeroVector,
}

/// Stiffness, mass and potential of one surface.
#[derive(Debug, Clone)]
pub struct DiscreteOperators {
    pub stiffness: Csr,
    /// diagonal of the lumped mass matrix
    pub mass: Vec<f64>,
    /// per-vertex potential |A|^2 + Ric(N,N)
    pub potential: Vec<f64>,
    /// edges whose total cotangent weight came out negative (obtuse angle
    /// pairs); harmless for assembly, worth surfacing in reports
    pub negative_weight_edges: usize,
}

impl DiscreteOperators {
    pub fn dim(&self) -> usize {
        self.mass.len()
    }

    /// u' K u - sum_v V M u^2, the discrete second variation.
    pub fn quadratic_form(&self, u: &[f64]) -> f64 {
        let mut ku = vec![0.0; u.len()];
        self.stiffness.mul_vec(u, &mut ku);
        let mut q = 0.0;
        for v in 0..u.len() {
            q += u[v] * ku[v] - self.potential[v] * self.mass[v] * u[v] * u[v];
        }
        q
    }
}

/// The m smallest eigenpairs of the stability pencil plus derived counts.
#[derive(Debug, Clone)]
pub struct Spectrum {
    /// ascending eigenvalues
    pub eigenvalues: Vec<f64>,
    /// M-orthonormal eigenvectors, one column per eigenvalue
    pub eigenvectors: DMatrix<f64>,
    /// relative residual per pair, in the congruent coordinates
    pub residuals: Vec<f64>,
    pub tol_zero: f64,
    pub index: usize,
    pub nullity: usize,
    /// distance from the nearest computed eigenvalue to the boundary of
    /// [-tol_zero, tol_zero]
    pub gap_report: f64,
    /// true when the largest computed eigenvalue is still below tol_zero,
    /// so the counts could miss eigenvalues; callers must enlarge m
    pub truncated: bool,
    /// true for the mean-zero (CMC) variant
    pub mean_zero: bool,
}

/// Cotangent stiffness, lumped mass and potential for a surface.
///
/// Negative cotangent weights on obtuse pairs are kept, only counted.
pub fn assemble_jacobi_operators(
    mesh: &Mesh,
    geom: &SurfaceGeometry,
) -> Result<DiscreteOperators, FemError> {
    let nv = mesh.num_vertices();
    let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(12 * mesh.num_faces());
    let mut edge_weight = vec![0.0; mesh.num_edges()];
    for f in 0..mesh.num_faces() {
        let lifted = crate::ambient::lift_face(&mesh.ambient, mesh, f)?;
        let tri = mesh.faces[f];
        for corner in 0..3 {
            // edge opposite this corner
            let (i, j) = (tri[(corner + 1) % 3], tri[(corner + 2) % 3]);
            let u = lifted[(corner + 1) % 3] - lifted[corner];
            let v = lifted[(corner + 2) % 3] - lifted[corner];
            let cross2 = (u.norm_squared() * v.norm_squared() - u.dot(&v).powi(2)).max(0.0);
            let w = 0.5 * u.dot(&v) / cross2.sqrt().max(1e-300);
            trip.push((i, i, w));
            trip.push((j, j, w));
            trip.push((i, j, -w));
            trip.push((j, i, -w));
            edge_weight[mesh.edge_of(3 * f + (corner + 1) % 3)] += w;
        }
    }
    let stiffness = Csr::from_triplets(nv, nv, trip);
    let negative_weight_edges = edge_weight.iter().filter(|w| **w < 0.0).count();
    let mut potential = Vec::with_capacity(nv);
    for v in 0..nv {
        let ric = mesh.ambient.ricci_normal(&geom.vertex_normal[v])?;
        potential.push(geom.vertex_a2[v] + ric);
    }
    Ok(DiscreteOperators {
        stiffness,
        mass: geom.vertex_area.clone(),
        potential,
        negative_weight_edges,
    })
}

/// Default nullity threshold when no closed-form spectrum suggests one:
/// a small fraction of the operator's natural scale.
pub fn default_tol_zero(ops: &DiscreteOperators) -> f64 {
    let max_v = ops.potential.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diag = ops.stiffness.diag();
    let mean_k_over_m: f64 = diag
        .iter()
        .zip(&ops.mass)
        .map(|(k, m)| k / m)
        .sum::<f64>()
        / ops.dim() as f64;
    1e-3 * (max_v + mean_k_over_m)
}

struct PencilOp<'a> {
    ops: &'a DiscreteOperators,
    inv_sqrt_m: Vec<f64>,
    /// unit vector of the deflated constant direction, with its shift
    deflate: Option<(Vec<f64>, f64)>,
}

impl<'a> PencilOp<'a> {
    fn new(ops: &'a DiscreteOperators, mean_zero: bool) -> Self {
        let inv_sqrt_m: Vec<f64> = ops.mass.iter().map(|m| 1.0 / m.sqrt()).collect();
        let deflate = mean_zero.then(|| {
            // c = M^(1/2) 1, normalized: the constant direction in the
            // congruent coordinates
            let norm: f64 = ops.mass.iter().sum::<f64>().sqrt();
            let c: Vec<f64> = ops.mass.iter().map(|m| m.sqrt() / norm).collect();
            (c, spectral_bound(ops) + 1.0)
        });
        Self {
            ops,
            inv_sqrt_m,
            deflate,
        }
    }

    fn apply_plain(&self, x: &[f64], y: &mut [f64]) {
        let n = x.len();
        let mut t = vec![0.0; n];
        for i in 0..n {
            t[i] = x[i] * self.inv_sqrt_m[i];
        }
        self.ops.stiffness.mul_vec(&t, y);
        for i in 0..n {
            y[i] = y[i] * self.inv_sqrt_m[i] - self.ops.potential[i] * x[i];
        }
    }
}

impl LinOp for PencilOp<'_> {
    fn dim(&self) -> usize {
        self.ops.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        match &self.deflate {
            None => self.apply_plain(x, y),
            Some((c, mu)) => {
                // project out c, apply, project again, and park the c
                // direction at mu so it cannot pollute the small end
                let cx: f64 = c.iter().zip(x).map(|(a, b)| a * b).sum();
                let t: Vec<f64> = x.iter().zip(c).map(|(xi, ci)| xi - cx * ci).collect();
                self.apply_plain(&t, y);
                let cy: f64 = c.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
                for i in 0..y.len() {
                    y[i] += (mu * cx - cy) * c[i];
                }
            }
        }
    }
}

/// Upper bound on the spectral radius of the congruent operator, from row
/// sums of |K_ij| / sqrt(M_i M_j) plus the potential.
fn spectral_bound(ops: &DiscreteOperators) -> f64 {
    let n = ops.dim();
    let mut bound = 0.0f64;
    for i in 0..n {
        let (cols, vals) = ops.stiffness.row(i);
        let mut row = ops.potential[i].abs();
        for (c, v) in cols.iter().zip(vals) {
            row += v.abs() / (ops.mass[i] * ops.mass[*c]).sqrt();
        }
        bound = bound.max(row);
    }
    bound
}

fn dense_congruent(ops: &DiscreteOperators, op: &PencilOp) -> DMatrix<f64> {
    let n = ops.dim();
    let mut b = ops.stiffness.to_dense();
    for i in 0..n {
        for j in 0..n {
            b[(i, j)] *= op.inv_sqrt_m[i] * op.inv_sqrt_m[j];
        }
    }
    for i in 0..n {
        b[(i, i)] -= ops.potential[i];
    }
    if let Some((c, mu)) = &op.deflate {
        // B := P B P + mu c c', P = I - c c'
        let cvec = DMatrix::from_column_slice(n, 1, c);
        let bc = &b * &cvec;
        let sigma = (cvec.transpose() * &bc)[(0, 0)];
        b -= &bc * cvec.transpose();
        b -= &cvec * bc.transpose();
        b += cvec.clone() * cvec.transpose() * (sigma + mu);
    }
    b
}

fn solve(ops: &DiscreteOperators, m: usize, tol_zero: f64, mean_zero: bool) -> Result<Spectrum, FemError> {
    let n = ops.dim();
    let usable = if mean_zero { n.saturating_sub(1) } else { n };
    if m == 0 || m > usable {
        return Err(FemError::TooManyPairs { want: m, have: usable });
    }
    let op = PencilOp::new(ops, mean_zero);
    let mut pairs: EigenPairs = if n <= DENSE_LIMIT {
        let b = dense_congruent(ops, &op);
        let mut p = dense_symmetric_eigen(&b)?;
        p.truncate(m);
        p.residuals = crate::linalg::residual_norms(&op, &p);
        p
    } else {
        solve_smallest(&op, &IterOpts::for_want(m))?
    };

    // back to vertex functions: x = M^(-1/2) y keeps M-orthonormality
    for j in 0..pairs.values.len() {
        for i in 0..n {
            pairs.vectors[(i, j)] *= op.inv_sqrt_m[i];
        }
    }

    let index = pairs.values.iter().filter(|l| **l < -tol_zero).count();
    let nullity = pairs
        .values
        .iter()
        .filter(|l| l.abs() <= tol_zero)
        .count();
    let gap_report = pairs
        .values
        .iter()
        .map(|l| (l - tol_zero).abs().min((l + tol_zero).abs()))
        .fold(f64::INFINITY, f64::min);
    let truncated = usable > m
        && pairs
            .values
            .last()
            .is_some_and(|last| *last < tol_zero);
    Ok(Spectrum {
        eigenvalues: pairs.values,
        eigenvectors: pairs.vectors,
        residuals: pairs.residuals,
        tol_zero,
        index,
        nullity,
        gap_report,
        truncated,
        mean_zero,
    })
}

/// The m smallest eigenpairs of (K - diag(V) M, M).
pub fn jacobi_spectrum(
    ops: &DiscreteOperators,
    m: usize,
    tol_zero: f64,
) -> Result<Spectrum, FemError> {
    solve(ops, m, tol_zero, false)
}

/// The same pencil restricted to mean-zero functions (sum_v M_vv u(v) = 0),
/// the second variation relevant for constant mean curvature surfaces. The
/// constant direction is deflated exactly; returned eigenvectors have zero
/// M-weighted mean.
pub fn cmc_spectrum(
    ops: &DiscreteOperators,
    m: usize,
    tol_zero: f64,
) -> Result<Spectrum, FemError> {
    solve(ops, m, tol_zero, true)
}

/// Index, nullity and the certificate gap of an untruncated spectrum.
pub fn index_nullity(spec: &Spectrum) -> Result<(usize, usize, f64), FemError> {
    if spec.truncated {
        return Err(FemError::Truncated {
            last: *spec.eigenvalues.last().unwrap(),
            tol: spec.tol_zero,
        });
    }
    Ok((spec.index, spec.nullity, spec.gap_report))
}

/// Q(u) / u' M u.
pub fn rayleigh_quotient(ops: &DiscreteOperators, u: &[f64]) -> Result<f64, FemError> {
    let mut umu = 0.0;
    for (m, x) in ops.mass.iter().zip(u) {
        umu += m * x * x;
    }
    if umu <= 0.0 {
        return Err(FemError::ZeroVector);
    }
    Ok(ops.quadratic_form(u) / umu)
}

/// One row per eigenpair: k (1-based), eigenvalue, solver residual.
pub fn spectrum_csv(spec: &Spectrum) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("k,lambda,residual\n");
    for (k, l) in spec.eigenvalues.iter().enumerate() {
        let r = spec.residuals.get(k).copied().unwrap_or(0.0);
        let _ = writeln!(out, "{},{:.16e},{:.16e}", k + 1, l, r);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::shape_operator;
    use crate::mesh::grid_torus_mesh;
    use crate::test_fixtures::icosphere_mesh;
    use nalgebra::Matrix3;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flat_plane_ops(n: usize) -> DiscreteOperators {
        let m = grid_torus_mesh(n, Matrix3::identity(), 2).unwrap();
        let geo = shape_operator(&m, None).unwrap();
        assemble_jacobi_operators(&m, &geo).unwrap()
    }

    fn sphere_ops(levels: u32) -> DiscreteOperators {
        let m = icosphere_mesh(1.0, levels, true);
        let geo = shape_operator(&m, None).unwrap();
        assemble_jacobi_operators(&m, &geo).unwrap()
    }

    #[test]
    fn stiffness_annihilates_constants_and_is_symmetric() {
        for ops in [flat_plane_ops(8), sphere_ops(2)] {
            let n = ops.dim();
            let ones = vec![1.0; n];
            let mut out = vec![0.0; n];
            ops.stiffness.mul_vec(&ones, &mut out);
            let scale = ops.stiffness.diag().iter().fold(0.0f64, |m, d| m.max(*d));
            for r in out {
                assert!(r.abs() <= 1e-10 * scale);
            }
            assert!(ops.stiffness.max_abs_asymmetry() <= 1e-12 * scale);
            assert!(ops.mass.iter().all(|m| *m > 0.0));
        }
    }

    #[test]
    fn flat_plane_potential_vanishes_and_form_is_positive() {
        let ops = flat_plane_ops(8);
        assert!(ops.potential.iter().all(|v| *v == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let u: Vec<f64> = (0..ops.dim()).map(|_| rng.random::<f64>() - 0.5).collect();
            assert!(ops.quadratic_form(&u) >= -1e-10);
        }
    }

    #[test]
    fn flat_plane_spectrum_matches_the_discrete_oracle() {
        // on the right-triangulated unit grid torus the diagonal edges get
        // zero cotangent weight, so K is the classical five-point stencil
        // and the pencil eigenvalues are 4 n^2 (sin^2(pi k/n) + sin^2(pi l/n))
        let n = 16usize;
        let ops = flat_plane_ops(n);
        let spec = jacobi_spectrum(&ops, 8, default_tol_zero(&ops)).unwrap();
        let lam1 = 4.0 * (n * n) as f64 * (std::f64::consts::PI / n as f64).sin().powi(2);
        assert!(spec.eigenvalues[0].abs() <= 1e-9 * lam1);
        for k in 1..5 {
            let rel = (spec.eigenvalues[k] - lam1).abs() / lam1;
            assert!(rel <= 1e-9, "eigenvalue {k} off by {rel:.3e}");
        }
        assert!(spec.eigenvalues[5] > lam1 * 1.5);
        assert_eq!((spec.index, spec.nullity), (0, 1));
        assert!(!spec.truncated);
        let (i, nl, gap) = index_nullity(&spec).unwrap();
        assert_eq!((i, nl), (0, 1));
        assert!(gap > 0.0);
    }

    #[test]
    fn flat_plane_mean_zero_spectrum_drops_the_constant() {
        let n = 16usize;
        let ops = flat_plane_ops(n);
        let spec = cmc_spectrum(&ops, 6, default_tol_zero(&ops)).unwrap();
        let lam1 = 4.0 * (n * n) as f64 * (std::f64::consts::PI / n as f64).sin().powi(2);
        assert!((spec.eigenvalues[0] - lam1).abs() / lam1 <= 1e-9);
        assert_eq!((spec.index, spec.nullity), (0, 0));
        // eigenvectors carry zero M-weighted mean
        for j in 0..spec.eigenvalues.len() {
            let mean: f64 = (0..ops.dim())
                .map(|i| ops.mass[i] * spec.eigenvectors[(i, j)])
                .sum();
            assert!(mean.abs() < 1e-10);
        }
    }

    #[test]
    fn sphere_spectrum_has_index_one_nullity_three() {
        // icosphere, estimated geometry: J = Lap - |A|^2 with |A|^2 near 2,
        // eigenvalues near l(l+1) - 2
        let ops = sphere_ops(3);
        let spec = jacobi_spectrum(&ops, 9, 0.5).unwrap();
        assert!((spec.eigenvalues[0] + 2.0).abs() < 0.1);
        for k in 1..4 {
            assert!(spec.eigenvalues[k].abs() < 0.1);
        }
        for k in 4..9 {
            assert!((spec.eigenvalues[k] - 4.0).abs() < 0.25);
        }
        assert_eq!((spec.index, spec.nullity), (1, 3));

        // the mean-zero variant removes the l = 0 mode and keeps l = 1
        let cmc = cmc_spectrum(&ops, 6, 0.5).unwrap();
        assert_eq!((cmc.index, cmc.nullity), (0, 3));
        assert!(cmc.index <= spec.index);
    }

    #[test]
    fn rayleigh_quotient_basics() {
        let ops = sphere_ops(2);
        let spec = jacobi_spectrum(&ops, 4, 0.5).unwrap();
        let u: Vec<f64> = (0..ops.dim()).map(|i| spec.eigenvectors[(i, 0)]).collect();
        let rq = rayleigh_quotient(&ops, &u).unwrap();
        assert!((rq - spec.eigenvalues[0]).abs() < 1e-8 * spec.eigenvalues[0].abs().max(1.0));
        let scaled: Vec<f64> = u.iter().map(|x| 3.25 * x).collect();
        let rq2 = rayleigh_quotient(&ops, &scaled).unwrap();
        assert!((rq - rq2).abs() < 1e-12 * rq.abs().max(1.0));
        assert!(matches!(
            rayleigh_quotient(&ops, &vec![0.0; ops.dim()]),
            Err(FemError::ZeroVector)
        ));
    }

    #[test]
    fn rayleigh_quotients_respect_min_max() {
        let ops = sphere_ops(2);
        let m = 5;
        let spec = jacobi_spectrum(&ops, m, 0.5).unwrap();
        let n = ops.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for k in 1..=m {
            for _ in 0..10 {
                let mut u: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
                // M-orthogonalize against the first k-1 eigenvectors
                for j in 0..k - 1 {
                    let c: f64 = (0..n)
                        .map(|i| ops.mass[i] * u[i] * spec.eigenvectors[(i, j)])
                        .sum();
                    for (i, ui) in u.iter_mut().enumerate() {
                        *ui -= c * spec.eigenvectors[(i, j)];
                    }
                }
                let rq = rayleigh_quotient(&ops, &u).unwrap();
                assert!(
                    rq >= spec.eigenvalues[k - 1] - 1e-8,
                    "k={k}: {rq} < {}",
                    spec.eigenvalues[k - 1]
                );
            }
        }
    }

    #[test]
    fn spectrum_invariant_under_relabeling() {
        let n = 8usize;
        let mesh = grid_torus_mesh(n, Matrix3::identity(), 2).unwrap();
        let geo = shape_operator(&mesh, None).unwrap();
        let ops = assemble_jacobi_operators(&mesh, &geo).unwrap();
        let spec = jacobi_spectrum(&ops, 6, 1e-6).unwrap();

        let nv = mesh.num_vertices();
        let mut perm: Vec<usize> = (0..nv).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for i in (1..nv).rev() {
            let j = (rng.random::<f64>() * (i + 1) as f64) as usize % (i + 1);
            perm.swap(i, j);
        }
        let mut vertices = vec![crate::ambient::Vec4::zeros(); nv];
        for (old, p) in mesh.vertices.iter().enumerate() {
            vertices[perm[old]] = *p;
        }
        let faces: Vec<[usize; 3]> = mesh
            .faces
            .iter()
            .map(|t| [perm[t[0]], perm[t[1]], perm[t[2]]])
            .collect();
        let shifts: Vec<[i32; 3]> = (0..3 * mesh.num_faces())
            .map(|h| mesh.halfedge_shift(h))
            .collect();
        let mesh2 = crate::mesh::Mesh::build(mesh.ambient.clone(), vertices, faces, Some(shifts))
            .unwrap();
        let geo2 = shape_operator(&mesh2, None).unwrap();
        let ops2 = assemble_jacobi_operators(&mesh2, &geo2).unwrap();
        let spec2 = jacobi_spectrum(&ops2, 6, 1e-6).unwrap();
        for (a, b) in spec.eigenvalues.iter().zip(&spec2.eigenvalues) {
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        }
    }

    #[test]
    fn truncated_spectra_are_flagged_and_rejected() {
        let ops = flat_plane_ops(8);
        let spec = jacobi_spectrum(&ops, 3, 1e6).unwrap();
        assert!(spec.truncated);
        assert!(matches!(
            index_nullity(&spec),
            Err(FemError::Truncated { .. })
        ));
    }

    #[test]
    fn eigenpair_residuals_are_small() {
        let ops = sphere_ops(3);
        let spec = jacobi_spectrum(&ops, 8, 0.5).unwrap();
        // residuals live in the congruent coordinates; compare against the
        // operator scale
        let scale = spectral_bound(&ops).max(1.0);
        for r in &spec.residuals {
            assert!(*r <= 1e-8 * scale, "residual {r}");
        }
    }

    #[test]
    fn spectrum_csv_shape() {
        let ops = flat_plane_ops(4);
        let spec = jacobi_spectrum(&ops, 3, 1e-6).unwrap();
        let csv = spectrum_csv(&spec);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "k,lambda,residual");
        assert!(lines[1].starts_with("1,"));
        // serialization is deterministic
        assert_eq!(csv, spectrum_csv(&spec));
    }

    #[test]
    fn zero_request_and_oversize_request_error() {
        let ops = flat_plane_ops(4);
        assert!(matches!(
            jacobi_spectrum(&ops, 0, 1e-6),
            Err(FemError::TooManyPairs { .. })
        ));
        assert!(matches!(
            jacobi_spectrum(&ops, ops.dim() + 1, 1e-6),
            Err(FemError::TooManyPairs { .. })
        ));
        // the mean-zero variant loses one dimension
        assert!(matches!(
            cmc_spectrum(&ops, ops.dim(), 1e-6),
            Err(FemError::TooManyPairs { .. })
        ));
    }
}
