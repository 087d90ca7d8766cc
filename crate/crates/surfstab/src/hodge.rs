//! Discrete exterior calculus on the mesh: derivatives, Hodge stars, the
//! 1-form Laplacian, harmonic 1-forms, and the sharp map to per-face
//! tangent fields.
//!
//! A 1-form is a value per edge, oriented along the edge's canonical
//! halfedge. The 1-form Laplacian
//! L1 = d0 star0^-1 d0' star1 + star1^-1 d1' star2 d1
//! is self-adjoint in the star1 inner product; its kernel is the
//! 2g-dimensional harmonic space. Because star1 entries can vanish or
//! turn negative on right or obtuse angle pairs, the eigenproblem is
//! solved in symmetrized form
//!
//! ```text
//! S = star1 d0 star0^-1 d0' star1 + d1' star2 d1
//! ```
//!
//! against a positive diagonal metric that floors |star1| at half its
//! median; the kernel of S, and with it the harmonic space, is the same
//! for any choice of positive metric.

use crate::geometry::SurfaceGeometry;
use crate::linalg::{solve_smallest, Csr, FnOp, IterOpts, SolveError};
use crate::mesh::Mesh;
use crate::ambient::Vec4;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HodgeError {
    #[error("eigensolve failed: {0}")]
    Solve(#[from] SolveError),
    #[error("harmonic basis not resolved: eigenvalue {low:.3e} at rank 2g is within a factor {ratio:.2} of the first nonharmonic eigenvalue {high:.3e}")]
    GapNotResolved { low: f64, high: f64, ratio: f64 },
    #[error("harmonic basis not resolved: form {form} has relative residual {value:.3e} above tolerance {tol:.3e}")]
    ResidualTooLarge { form: usize, value: f64, tol: f64 },
    #[error("face {0} is degenerate; cannot reconstruct a tangent vector")]
    DegenerateFace(usize),
    #[error("1-form has {got} entries, mesh has {want} edges")]
    BadFormLength { got: usize, want: usize },
    #[error("mesh needs at least {need} edges for the gap check, has {have}")]
    TooSmall { need: usize, have: usize },
}

/// Exterior derivatives and diagonal Hodge stars of one mesh.
#[derive(Debug, Clone)]
pub struct DecOperators {
    /// E x V signed incidence: (d0 phi)_e = phi(head) - phi(tail)
    pub d0: Csr,
    /// F x E signed incidence: (d1 w)_f = oriented edge sum around f
    pub d1: Csr,
    /// vertex dual areas
    pub star0: Vec<f64>,
    /// cotangent edge weights, (cot a + cot b) / 2; real, possibly <= 0
    pub star1: Vec<f64>,
    /// inverse face areas
    pub star2: Vec<f64>,
    pub negative_star1_edges: usize,
    d0t: Csr,
    d1t: Csr,
}

impl DecOperators {
    /// S w, the symmetrized 1-form Laplacian.
    pub fn apply_symmetrized(&self, w: &[f64], out: &mut [f64]) {
        let ne = self.star1.len();
        let sw: Vec<f64> = w.iter().zip(&self.star1).map(|(x, s)| x * s).collect();
        let mut dv = vec![0.0; self.star0.len()];
        self.d0t.mul_vec(&sw, &mut dv);
        for (x, s) in dv.iter_mut().zip(&self.star0) {
            *x /= s;
        }
        self.d0.mul_vec(&dv, out);
        for (o, s) in out.iter_mut().zip(&self.star1) {
            *o *= s;
        }
        let mut df = vec![0.0; self.star2.len()];
        self.d1.mul_vec(w, &mut df);
        for (x, s) in df.iter_mut().zip(&self.star2) {
            *x *= s;
        }
        let mut t = vec![0.0; ne];
        self.d1t.mul_vec(&df, &mut t);
        for (o, x) in out.iter_mut().zip(&t) {
            *o += x;
        }
    }

    /// |d w| in the star2 norm of 2-forms.
    pub fn d_residual(&self, w: &[f64]) -> f64 {
        let mut df = vec![0.0; self.star2.len()];
        self.d1.mul_vec(w, &mut df);
        df.iter()
            .zip(&self.star2)
            .map(|(x, s)| x * x * s)
            .sum::<f64>()
            .sqrt()
    }

    /// |delta w| in the star0 norm of 0-forms.
    pub fn delta_residual(&self, w: &[f64]) -> f64 {
        let sw: Vec<f64> = w.iter().zip(&self.star1).map(|(x, s)| x * s).collect();
        let mut dv = vec![0.0; self.star0.len()];
        self.d0t.mul_vec(&sw, &mut dv);
        dv.iter()
            .zip(&self.star0)
            .map(|(x, s)| x * x / s)
            .sum::<f64>()
            .sqrt()
    }

    /// Positive diagonal metric used by the eigensolve: |star1| floored at
    /// half the median magnitude, so zero and negative weights cannot
    /// break positive definiteness.
    pub fn safe_metric(&self) -> Vec<f64> {
        let mut mags: Vec<f64> = self.star1.iter().map(|s| s.abs()).collect();
        mags.sort_by(f64::total_cmp);
        let median = mags[mags.len() / 2];
        let floor = if median > 0.0 {
            0.5 * median
        } else {
            let mean = mags.iter().sum::<f64>() / mags.len() as f64;
            0.5 * mean.max(1e-300)
        };
        self.star1.iter().map(|s| s.abs().max(floor)).collect()
    }

    /// star1 inner product of two 1-forms; indefinite in general.
    pub fn star1_inner(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .zip(&self.star1)
            .map(|((x, y), s)| x * y * s)
            .sum()
    }
}

/// Assembles the DEC package. Cotangents are computed on lifted faces.
pub fn dec_operators(mesh: &Mesh, geom: &SurfaceGeometry) -> DecOperators {
    let nv = mesh.num_vertices();
    let ne = mesh.num_edges();
    let nf = mesh.num_faces();

    let mut d0_trip = Vec::with_capacity(2 * ne);
    for e in 0..ne {
        let (tail, head) = mesh.edge_vertices(e);
        d0_trip.push((e, tail, -1.0));
        d0_trip.push((e, head, 1.0));
    }
    let d0 = Csr::from_triplets(ne, nv, d0_trip);

    let mut d1_trip = Vec::with_capacity(3 * nf);
    for f in 0..nf {
        for k in 0..3 {
            let h = 3 * f + k;
            d1_trip.push((f, mesh.edge_of(h), mesh.halfedge_sign(h)));
        }
    }
    let d1 = Csr::from_triplets(nf, ne, d1_trip);

    let mut star1 = vec![0.0; ne];
    for f in 0..nf {
        let lifted = crate::ambient::lift_face(&mesh.ambient, mesh, f)
            .expect("validated mesh lifts");
        for corner in 0..3 {
            let u = lifted[(corner + 1) % 3] - lifted[corner];
            let v = lifted[(corner + 2) % 3] - lifted[corner];
            let cross2 = (u.norm_squared() * v.norm_squared() - u.dot(&v).powi(2)).max(0.0);
            let w = 0.5 * u.dot(&v) / cross2.sqrt().max(1e-300);
            star1[mesh.edge_of(3 * f + (corner + 1) % 3)] += w;
        }
    }
    let negative_star1_edges = star1.iter().filter(|s| **s < 0.0).count();

    let star2 = geom.face_frames.iter().map(|f| 1.0 / f.area).collect();
    let d0t = d0.transpose();
    let d1t = d1.transpose();
    DecOperators {
        d0,
        d1,
        star0: geom.vertex_area.clone(),
        star1,
        star2,
        negative_star1_edges,
        d0t,
        d1t,
    }
}

/// A star1-orthonormal basis of the discrete harmonic 1-forms, with the
/// dual per-face tangent fields and per-form residuals.
#[derive(Debug, Clone)]
pub struct HarmonicBasis {
    /// 2g edge-valued forms
    pub forms: Vec<Vec<f64>>,
    /// per form, per face tangent coordinates in that face's (t1, t2)
    pub fields: Vec<Vec<[f64; 2]>>,
    pub residual_d: Vec<f64>,
    pub residual_delta: Vec<f64>,
    /// (|dw|^2 + |delta w|^2) / (lambda_next |w|^2), dimensionless
    pub relative_residual: Vec<f64>,
    /// smallest eigenvalue outside the harmonic space
    pub first_nonharmonic: f64,
    /// separation between the harmonic cluster and the rest
    pub gap_ratio: f64,
}

impl HarmonicBasis {
    pub fn count(&self) -> usize {
        self.forms.len()
    }

    fn empty() -> Self {
        HarmonicBasis {
            forms: Vec::new(),
            fields: Vec::new(),
            residual_d: Vec::new(),
            residual_delta: Vec::new(),
            relative_residual: Vec::new(),
            first_nonharmonic: 0.0,
            gap_ratio: f64::INFINITY,
        }
    }
}

/// Extracts the 2g lowest modes of the 1-form Laplacian and certifies them
/// harmonic: their eigenvalues must sit below `harmonic_tol` times the
/// first nonharmonic eigenvalue, and the two clusters must be separated by
/// at least a factor of 10.
pub fn harmonic_basis(
    mesh: &Mesh,
    geom: &SurfaceGeometry,
    dec: &DecOperators,
    genus: usize,
    harmonic_tol: f64,
) -> Result<HarmonicBasis, HodgeError> {
    if genus == 0 {
        return Ok(HarmonicBasis::empty());
    }
    let ne = dec.star1.len();
    let want = 2 * genus + 1;
    if want > ne {
        return Err(HodgeError::TooSmall {
            need: want,
            have: ne,
        });
    }
    let metric = dec.safe_metric();
    let inv_sqrt: Vec<f64> = metric.iter().map(|m| 1.0 / m.sqrt()).collect();
    let op = FnOp::new(ne, |x: &[f64], y: &mut [f64]| {
        let t: Vec<f64> = x.iter().zip(&inv_sqrt).map(|(a, b)| a * b).collect();
        dec.apply_symmetrized(&t, y);
        for (o, s) in y.iter_mut().zip(&inv_sqrt) {
            *o *= s;
        }
    });
    let mut opts = IterOpts::for_want(want);
    opts.extra = (2 * genus).max(8);
    let pairs = solve_smallest(&op, &opts)?;

    let low = pairs.values[2 * genus - 1].max(0.0);
    let high = pairs.values[2 * genus];
    let ratio = high / low.max(1e-300);
    if high <= 0.0 || high.is_nan() || ratio < 10.0 {
        return Err(HodgeError::GapNotResolved { low, high, ratio });
    }

    // back to edge coordinates
    let mut forms: Vec<Vec<f64>> = (0..2 * genus)
        .map(|a| {
            (0..ne)
                .map(|e| pairs.vectors[(e, a)] * inv_sqrt[e])
                .collect()
        })
        .collect();

    // orthonormalize in the star1 inner product when it is positive on the
    // harmonic space; otherwise keep the metric-orthonormal basis
    let dim = 2 * genus;
    let mut gram = nalgebra::DMatrix::zeros(dim, dim);
    for a in 0..dim {
        for b in 0..dim {
            gram[(a, b)] = dec.star1_inner(&forms[a], &forms[b]);
        }
    }
    if let Ok(eig) = crate::linalg::dense_symmetric_eigen(&gram) {
        if eig.values[0] > 1e-8 * eig.values[dim - 1].abs().max(1e-300) {
            let mut rotated = vec![vec![0.0; ne]; dim];
            for (a, out) in rotated.iter_mut().enumerate() {
                let scale = 1.0 / eig.values[a].sqrt();
                for (b, form) in forms.iter().enumerate() {
                    let c = eig.vectors[(b, a)] * scale;
                    for (o, x) in out.iter_mut().zip(form) {
                        *o += c * x;
                    }
                }
            }
            forms = rotated;
        }
    }

    let mut residual_d = Vec::with_capacity(dim);
    let mut residual_delta = Vec::with_capacity(dim);
    let mut relative_residual = Vec::with_capacity(dim);
    for (a, w) in forms.iter().enumerate() {
        let rd = dec.d_residual(w);
        let rdel = dec.delta_residual(w);
        let metric_norm2: f64 = w.iter().zip(&metric).map(|(x, m)| x * x * m).sum();
        let rel = (rd * rd + rdel * rdel) / (high * metric_norm2);
        if rel > harmonic_tol {
            return Err(HodgeError::ResidualTooLarge {
                form: a,
                value: rel,
                tol: harmonic_tol,
            });
        }
        residual_d.push(rd);
        residual_delta.push(rdel);
        relative_residual.push(rel);
    }

    let fields = forms
        .iter()
        .map(|w| whitney_vector(mesh, geom, w))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(HarmonicBasis {
        forms,
        fields,
        residual_d,
        residual_delta,
        relative_residual,
        first_nonharmonic: high,
        gap_ratio: ratio,
    })
}

/// Per-face constant tangent vector whose edge integrals best match the
/// 1-form, in the face frame. Exact whenever the three edge values are
/// compatible with one constant field.
pub fn whitney_vector(
    mesh: &Mesh,
    geom: &SurfaceGeometry,
    w: &[f64],
) -> Result<Vec<[f64; 2]>, HodgeError> {
    if w.len() != mesh.num_edges() {
        return Err(HodgeError::BadFormLength {
            got: w.len(),
            want: mesh.num_edges(),
        });
    }
    let mut out = Vec::with_capacity(mesh.num_faces());
    for f in 0..mesh.num_faces() {
        let lifted = crate::ambient::lift_face(&mesh.ambient, mesh, f)
            .expect("validated mesh lifts");
        let frame = &geom.face_frames[f];
        let mut g = [[0.0f64; 2]; 2];
        let mut r = [0.0f64; 2];
        for k in 0..3 {
            let h = 3 * f + k;
            let e = lifted[(k + 1) % 3] - lifted[k];
            let u = [e.dot(&frame.t1), e.dot(&frame.t2)];
            let val = mesh.halfedge_sign(h) * w[mesh.edge_of(h)];
            for a in 0..2 {
                r[a] += u[a] * val;
                for b in 0..2 {
                    g[a][b] += u[a] * u[b];
                }
            }
        }
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        let scale = 0.5 * (g[0][0] + g[1][1]);
        if det <= 1e-14 * scale * scale {
            return Err(HodgeError::DegenerateFace(f));
        }
        out.push([
            (g[1][1] * r[0] - g[0][1] * r[1]) / det,
            (g[0][0] * r[1] - g[1][0] * r[0]) / det,
        ]);
    }
    Ok(out)
}

/// Rotation by +90 degrees in each face frame, the pointwise Hodge star of
/// the dual field: (a, b) -> (-b, a).
pub fn rotate90(field: &[[f64; 2]]) -> Vec<[f64; 2]> {
    field.iter().map(|[a, b]| [-b, *a]).collect()
}

/// Per-face ambient vectors of a frame-coordinate field.
pub fn field_to_ambient(geom: &SurfaceGeometry, field: &[[f64; 2]]) -> Vec<Vec4> {
    field
        .iter()
        .zip(&geom.face_frames)
        .map(|([a, b], fr)| fr.t1 * *a + fr.t2 * *b)
        .collect()
}

/// One row per edge: indices, endpoints, then each form's value.
pub fn harmonic_edges_csv(mesh: &Mesh, basis: &HarmonicBasis) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("edge,tail,head");
    for a in 0..basis.count() {
        let _ = write!(out, ",omega_{}", a + 1);
    }
    out.push('\n');
    for e in 0..mesh.num_edges() {
        let (t, h) = mesh.edge_vertices(e);
        let _ = write!(out, "{e},{t},{h}");
        for w in &basis.forms {
            let _ = write!(out, ",{:.16e}", w[e]);
        }
        out.push('\n');
    }
    out
}

/// One row per face: index, then each field's two frame coordinates.
pub fn harmonic_faces_csv(basis: &HarmonicBasis) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("face");
    for a in 0..basis.count() {
        let _ = write!(out, ",xi{}_t1,xi{}_t2", a + 1, a + 1);
    }
    out.push('\n');
    let nf = basis.fields.first().map_or(0, |f| f.len());
    for f in 0..nf {
        let _ = write!(out, "{f}");
        for field in &basis.fields {
            let _ = write!(out, ",{:.16e},{:.16e}", field[f][0], field[f][1]);
        }
        out.push('\n');
    }
    out
}
