//! Ambient 3-manifolds carrying a global orthonormal Killing frame:
//! Euclidean 3-space, the round unit 3-sphere as the group of unit
//! quaternions, and flat 3-tori R^3 / Lambda.
//!
//! Points and vectors are carried uniformly as 4-vectors. The flat ambients
//! use components 0..2 and keep component 3 at zero; the sphere uses all
//! four, with component 0 the real part of the quaternion.

use crate::mesh::Mesh;
use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use thiserror::Error;

pub type Vec4 = Vector4<f64>;

/// Embeds a 3-vector into the uniform 4-component representation.
pub fn vec4_from3(x: f64, y: f64, z: f64) -> Vec4 {
    Vector4::new(x, y, z, 0.0)
}

#[derive(Debug, Error)]
pub enum AmbientError {
    #[error("point lies off the unit 3-sphere: |p| = {0:.12}")]
    OffSphere(f64),
    #[error("vector is not unit length: |n| = {0:.12}")]
    NotUnit(f64),
    #[error("normal is not tangent to the sphere at p: <n, p> = {0:.3e}")]
    NotTangent(f64),
    #[error("lattice matrix is singular or near singular (det = {0:.3e})")]
    SingularLattice(f64),
    #[error("face {0} too large for chart: edge length {1:.6} exceeds {2:.6}")]
    FaceTooLarge(usize, f64, f64),
}

/// Identifier for the three supported ambients, as written in mesh files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmbientTag {
    Euclidean3,
    Sphere3,
    FlatTorus3,
}

impl AmbientTag {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "euclidean3" => Some(Self::Euclidean3),
            "sphere3" => Some(Self::Sphere3),
            "flattorus3" => Some(Self::FlatTorus3),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Euclidean3 => "euclidean3",
            Self::Sphere3 => "sphere3",
            Self::FlatTorus3 => "flattorus3",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AmbientSpace {
    Euclidean3,
    Sphere3,
    /// Columns of `lattice` generate the translation lattice Lambda.
    FlatTorus3 { lattice: Matrix3<f64> },
}

impl AmbientSpace {
    pub fn flat_torus(lattice: Matrix3<f64>) -> Result<Self, AmbientError> {
        let det = lattice.determinant();
        let scale = lattice.norm().max(1.0);
        if det.abs() <= 1e-12 * scale.powi(3) {
            return Err(AmbientError::SingularLattice(det));
        }
        Ok(Self::FlatTorus3 { lattice })
    }

    pub fn tag(&self) -> AmbientTag {
        match self {
            Self::Euclidean3 => AmbientTag::Euclidean3,
            Self::Sphere3 => AmbientTag::Sphere3,
            Self::FlatTorus3 { .. } => AmbientTag::FlatTorus3,
        }
    }

    /// Coordinates a point carries in mesh files: 3 for the flat ambients,
    /// 4 for the sphere.
    pub fn coord_dim(&self) -> usize {
        match self {
            Self::Sphere3 => 4,
            _ => 3,
        }
    }

    pub fn lattice(&self) -> Option<&Matrix3<f64>> {
        match self {
            Self::FlatTorus3 { lattice } => Some(lattice),
            _ => None,
        }
    }

    /// Length of the shortest nonzero lattice vector, which is twice the
    /// injectivity radius of the quotient torus. Searches integer
    /// combinations with coefficients in [-3, 3]; exact for the diagonal
    /// lattices the generators produce and a sound heuristic otherwise.
    pub fn shortest_lattice_vector(&self) -> Option<f64> {
        let lattice = self.lattice()?;
        let mut best = f64::INFINITY;
        for a in -3i32..=3 {
            for b in -3i32..=3 {
                for c in -3i32..=3 {
                    if a == 0 && b == 0 && c == 0 {
                        continue;
                    }
                    let v = lattice * Vector3::new(a as f64, b as f64, c as f64);
                    best = best.min(v.norm());
                }
            }
        }
        Some(best)
    }

    /// The orthonormal Killing frame at `p`. The flat ambients return the
    /// constant standard frame; the sphere returns the left-invariant
    /// quaternionic frame p*i, p*j, p*k.
    pub fn killing_frame(&self, p: &Vec4) -> Result<[Vec4; 3], AmbientError> {
        match self {
            Self::Euclidean3 | Self::FlatTorus3 { .. } => Ok([
                vec4_from3(1.0, 0.0, 0.0),
                vec4_from3(0.0, 1.0, 0.0),
                vec4_from3(0.0, 0.0, 1.0),
            ]),
            Self::Sphere3 => {
                let nrm = p.norm();
                if (nrm - 1.0).abs() > 1e-9 {
                    return Err(AmbientError::OffSphere(nrm));
                }
                Ok([
                    quat_mul(p, &Vector4::new(0.0, 1.0, 0.0, 0.0)),
                    quat_mul(p, &Vector4::new(0.0, 0.0, 1.0, 0.0)),
                    quat_mul(p, &Vector4::new(0.0, 0.0, 0.0, 1.0)),
                ])
            }
        }
    }

    /// Ricci curvature in the direction of a unit vector `n`. Constant for
    /// each ambient: 0 on the flat ones, 2 on the unit 3-sphere.
    pub fn ricci_normal(&self, n: &Vec4) -> Result<f64, AmbientError> {
        let nrm = n.norm();
        if (nrm - 1.0).abs() > 1e-9 {
            return Err(AmbientError::NotUnit(nrm));
        }
        Ok(match self {
            Self::Sphere3 => 2.0,
            _ => 0.0,
        })
    }

    /// Killing frame together with its normal components and tangential
    /// projections at a surface point with unit normal `n`.
    pub fn frame_at(&self, p: &Vec4, n: &Vec4) -> Result<FramePointData, AmbientError> {
        let nrm = n.norm();
        if (nrm - 1.0).abs() > 1e-9 {
            return Err(AmbientError::NotUnit(nrm));
        }
        if matches!(self, Self::Sphere3) {
            let t = n.dot(p);
            if t.abs() > 1e-9 {
                return Err(AmbientError::NotTangent(t));
            }
        }
        let x = self.killing_frame(p)?;
        let g = [x[0].dot(n), x[1].dot(n), x[2].dot(n)];
        let e = [x[0] - n * g[0], x[1] - n * g[1], x[2] - n * g[2]];
        Ok(FramePointData { x, g, e })
    }
}

/// Killing frame data at one surface point: the frame X, the normal
/// components g_i = <X_i, N>, and the tangential parts E_i = X_i - g_i N.
#[derive(Debug, Clone)]
pub struct FramePointData {
    pub x: [Vec4; 3],
    pub g: [f64; 3],
    pub e: [Vec4; 3],
}

/// Hamilton product of two quaternions, component 0 real.
pub fn quat_mul(a: &Vec4, b: &Vec4) -> Vec4 {
    Vector4::new(
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    )
}

/// Cross product in the first three components; component 3 stays zero.
pub fn cross3(a: &Vec4, b: &Vec4) -> Vec4 {
    vec4_from3(
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    )
}

/// Generalized cross product of three 4-vectors: the unique vector d with
/// <d, x> = det[a, b, c, x] for all x, via cofactor expansion. Up to sign
/// it is orthogonal to a, b and c.
pub fn cross4(a: &Vec4, b: &Vec4, c: &Vec4) -> Vec4 {
    let minor = |i: usize, j: usize, k: usize| -> f64 {
        a[i] * (b[j] * c[k] - b[k] * c[j]) - a[j] * (b[i] * c[k] - b[k] * c[i])
            + a[k] * (b[i] * c[j] - b[j] * c[i])
    };
    // cofactors of the fourth column of [a | b | c | x]
    Vector4::new(
        -minor(1, 2, 3),
        minor(0, 2, 3),
        -minor(0, 1, 3),
        minor(0, 1, 2),
    )
}

/// Positions of a face's three vertices in one common chart. On the flat
/// torus the halfedge lattice shifts lift the second and third vertex next
/// to the first; the other ambients pass raw positions through. Errors when
/// a lifted edge is at least as long as the torus injectivity diameter,
/// because then the chart is ambiguous.
pub fn lift_face(
    ambient: &AmbientSpace,
    mesh: &Mesh,
    face: usize,
) -> Result<[Vec4; 3], AmbientError> {
    let [a, b, c] = mesh.faces[face];
    match ambient {
        AmbientSpace::FlatTorus3 { lattice } => {
            let s_ab = mesh.halfedge_shift(3 * face);
            let s_bc = mesh.halfedge_shift(3 * face + 1);
            let shift = |s: [i32; 3]| -> Vec4 {
                let v = lattice * Vector3::new(s[0] as f64, s[1] as f64, s[2] as f64);
                vec4_from3(v[0], v[1], v[2])
            };
            let pa = mesh.vertices[a];
            let pb = mesh.vertices[b] + shift(s_ab);
            let pc = mesh.vertices[c] + shift(s_ab) + shift(s_bc);
            let limit = ambient
                .shortest_lattice_vector()
                .expect("flat torus has a lattice")
                / 2.0;
            let longest = (pb - pa)
                .norm()
                .max((pc - pb).norm())
                .max((pa - pc).norm());
            if longest >= limit {
                return Err(AmbientError::FaceTooLarge(face, longest, limit));
            }
            Ok([pa, pb, pc])
        }
        _ => Ok([mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]]),
    }
}

/// Determinant of the 4x4 matrix with the given columns. Used to pin the
/// orientation of sphere face frames.
pub fn det4(a: &Vec4, b: &Vec4, c: &Vec4, d: &Vec4) -> f64 {
    Matrix4::from_columns(&[*a, *b, *c, *d]).determinant()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit4(rng: &mut ChaCha8Rng) -> Vec4 {
        loop {
            let v = Vector4::new(
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
            );
            let n = v.norm();
            if n > 1e-3 {
                return v / n;
            }
        }
    }

    #[test]
    fn euclidean_frame_is_standard() {
        let amb = AmbientSpace::Euclidean3;
        let x = amb.killing_frame(&vec4_from3(5.0, -2.0, 7.0)).unwrap();
        assert_eq!(x[0], vec4_from3(1.0, 0.0, 0.0));
        assert_eq!(x[1], vec4_from3(0.0, 1.0, 0.0));
        assert_eq!(x[2], vec4_from3(0.0, 0.0, 1.0));
    }

    #[test]
    fn sphere_frame_at_identity_and_at_i() {
        let amb = AmbientSpace::Sphere3;
        let x = amb
            .killing_frame(&Vector4::new(1.0, 0.0, 0.0, 0.0))
            .unwrap();
        assert_eq!(x[0], Vector4::new(0.0, 1.0, 0.0, 0.0));
        assert_eq!(x[1], Vector4::new(0.0, 0.0, 1.0, 0.0));
        assert_eq!(x[2], Vector4::new(0.0, 0.0, 0.0, 1.0));
        let y = amb
            .killing_frame(&Vector4::new(0.0, 1.0, 0.0, 0.0))
            .unwrap();
        assert_eq!(y[0], Vector4::new(-1.0, 0.0, 0.0, 0.0));
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(y[i].dot(&y[j]), want, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn sphere_rejects_off_manifold_points() {
        let amb = AmbientSpace::Sphere3;
        let p = Vector4::new(1.1, 0.0, 0.0, 0.0);
        assert!(matches!(
            amb.killing_frame(&p),
            Err(AmbientError::OffSphere(_))
        ));
    }

    #[test]
    fn frame_orthonormality_and_tangency_bulk() {
        // the volume property check: a large seeded sample instead of a
        // property testing framework, so the count is explicit
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let amb = AmbientSpace::Sphere3;
        let mut worst_ortho = 0.0f64;
        let mut worst_tangent = 0.0f64;
        for _ in 0..1_000_000 {
            let p = random_unit4(&mut rng);
            let x = amb.killing_frame(&p).unwrap();
            for i in 0..3 {
                worst_tangent = worst_tangent.max(x[i].dot(&p).abs());
                for j in 0..3 {
                    let want = if i == j { 1.0 } else { 0.0 };
                    worst_ortho = worst_ortho.max((x[i].dot(&x[j]) - want).abs());
                }
            }
        }
        assert!(worst_ortho <= 1e-12, "orthonormality {worst_ortho}");
        assert!(worst_tangent <= 1e-12, "tangency {worst_tangent}");
    }

    #[test]
    fn sphere_frame_is_left_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let amb = AmbientSpace::Sphere3;
        let units = [
            Vector4::new(0.0, 1.0, 0.0, 0.0),
            Vector4::new(0.0, 0.0, 1.0, 0.0),
            Vector4::new(0.0, 0.0, 0.0, 1.0),
        ];
        let mut worst = 0.0f64;
        for _ in 0..10_000 {
            let q = random_unit4(&mut rng);
            let p = random_unit4(&mut rng);
            let qp = quat_mul(&q, &p);
            let at_qp = amb.killing_frame(&(qp / qp.norm())).unwrap();
            for (i, _) in units.iter().enumerate() {
                let x_p = amb.killing_frame(&p).unwrap()[i];
                let moved = quat_mul(&q, &x_p);
                worst = worst.max((at_qp[i] - moved).norm());
            }
        }
        assert!(worst <= 1e-12, "left invariance {worst}");
    }

    #[test]
    fn ricci_values_and_unit_check() {
        let e = AmbientSpace::Euclidean3;
        let s = AmbientSpace::Sphere3;
        let t = AmbientSpace::flat_torus(Matrix3::identity()).unwrap();
        let n = vec4_from3(0.0, 0.0, 1.0);
        assert_eq!(e.ricci_normal(&n).unwrap(), 0.0);
        assert_eq!(s.ricci_normal(&n).unwrap(), 2.0);
        assert_eq!(t.ricci_normal(&n).unwrap(), 0.0);
        // constant across 100 random unit directions
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let u = random_unit4(&mut rng);
            assert_eq!(s.ricci_normal(&u).unwrap(), 2.0);
        }
        assert!(matches!(
            e.ricci_normal(&vec4_from3(0.0, 0.0, 2.0)),
            Err(AmbientError::NotUnit(_))
        ));
    }

    #[test]
    fn frame_at_euclidean_example() {
        let amb = AmbientSpace::Euclidean3;
        let d = amb
            .frame_at(&vec4_from3(0.3, 0.4, 0.5), &vec4_from3(0.0, 0.0, 1.0))
            .unwrap();
        assert_eq!(d.g, [0.0, 0.0, 1.0]);
        assert_eq!(d.e[0], vec4_from3(1.0, 0.0, 0.0));
        assert_eq!(d.e[1], vec4_from3(0.0, 1.0, 0.0));
        assert_eq!(d.e[2], vec4_from3(0.0, 0.0, 0.0));
    }

    #[test]
    fn frame_at_reconstructs_tangent_projector() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let amb = AmbientSpace::Sphere3;
        for _ in 0..200 {
            let p = random_unit4(&mut rng);
            // any unit vector tangent to the sphere at p serves as normal
            let mut n = random_unit4(&mut rng);
            n -= p * n.dot(&p);
            n /= n.norm();
            let d = amb.frame_at(&p, &n).unwrap();
            let g2: f64 = d.g.iter().map(|g| g * g).sum();
            assert_relative_eq!(g2, 1.0, epsilon = 1e-12);
            for e in &d.e {
                assert!(e.dot(&n).abs() <= 1e-12);
            }
            // sum E_i E_i^T + N N^T must equal the projector onto T_p S^3
            let mut m = Matrix4::zeros();
            for e in &d.e {
                m += e * e.transpose();
            }
            m += n * n.transpose();
            let proj = Matrix4::identity() - p * p.transpose();
            assert_relative_eq!(m, proj, epsilon = 1e-11);
        }
    }

    #[test]
    fn quaternion_identities() {
        let i = Vector4::new(0.0, 1.0, 0.0, 0.0);
        let j = Vector4::new(0.0, 0.0, 1.0, 0.0);
        let k = Vector4::new(0.0, 0.0, 0.0, 1.0);
        assert_eq!(quat_mul(&i, &j), k);
        assert_eq!(quat_mul(&j, &k), i);
        assert_eq!(quat_mul(&k, &i), j);
        assert_eq!(quat_mul(&i, &i), Vector4::new(-1.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn cross4_is_orthogonal_and_oriented() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..100 {
            let a = random_unit4(&mut rng);
            let b = random_unit4(&mut rng);
            let c = random_unit4(&mut rng);
            let d = cross4(&a, &b, &c);
            assert!(d.dot(&a).abs() <= 1e-12 * d.norm().max(1.0));
            assert!(d.dot(&b).abs() <= 1e-12 * d.norm().max(1.0));
            assert!(d.dot(&c).abs() <= 1e-12 * d.norm().max(1.0));
            if d.norm() > 1e-6 {
                assert!(det4(&a, &b, &c, &d) > 0.0);
            }
        }
    }

    #[test]
    fn singular_lattice_rejected() {
        let mut l = Matrix3::identity();
        l[(2, 2)] = 0.0;
        assert!(matches!(
            AmbientSpace::flat_torus(l),
            Err(AmbientError::SingularLattice(_))
        ));
    }

    #[test]
    fn shortest_lattice_vector_diagonal() {
        let l = Matrix3::from_diagonal(&Vector3::new(2.0, 3.0, 5.0));
        let amb = AmbientSpace::flat_torus(l).unwrap();
        assert_relative_eq!(amb.shortest_lattice_vector().unwrap(), 2.0);
    }
}
