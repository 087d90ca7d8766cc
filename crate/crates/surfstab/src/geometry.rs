//! Discrete first and second fundamental forms.
//!
//! Per face: an orthonormal tangent pair, a unit normal, the flat area of
//! the lifted triangle, and a 2x2 shape operator in the tangent frame.
//! Per vertex: unit normal, barycentric lumped area, mean curvature H and
//! the squared second-fundamental-form norm |A|^2.
//!
//! Curvature convention: 2H = tr S. The shape operator acts on a tangent
//! edge e by S e = -(Delta N)^tangential, so a round sphere of radius r in
//! R^3 carries H = +1/r when its faces are wound with the inward normal.
//!
//! Two sources: `Analytic` copies closed-form vertex data straight from a
//! generator and contracts the generator's ambient curvature tensor into
//! each face frame; `Estimated` reconstructs everything from the mesh with
//! first-order accuracy.

use crate::ambient::{cross4, det4, lift_face, AmbientSpace, Vec4};
use crate::mesh::Mesh;
use nalgebra::{Matrix2, Matrix4};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("face {0} is degenerate; cannot build a tangent frame")]
    DegenerateFace(usize),
    #[error("vertex {0}: averaged normal vanished")]
    DegenerateNormal(usize),
    #[error("face {0}: edge system for the shape fit is rank deficient")]
    ShapeFit(usize),
    #[error("analytic shape data does not match the mesh: {0}")]
    BadAnalyticData(String),
    #[error("mesh lift failed: {0}")]
    Lift(#[from] crate::ambient::AmbientError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceTag {
    Analytic,
    Estimated,
}

impl SourceTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            SourceTag::Analytic => "analytic",
            SourceTag::Estimated => "estimated",
        }
    }
}

#[derive(Debug, Clone)]
pub struct FaceFrame {
    pub t1: Vec4,
    pub t2: Vec4,
    pub normal: Vec4,
    pub area: f64,
}

/// Closed-form geometry attached by a generator. `face_tensor` is the
/// ambient second-fundamental tensor at the face barycenter; contracting it
/// with the face tangent frame gives the 2x2 shape operator, whose trace is
/// then pinned to `2 * face_h` (the contraction picks up an O(h^4) trace
/// error from the discrete tangent plane; the exact mean curvature removes
/// it without touching the trace-free part).
#[derive(Debug, Clone)]
pub struct AnalyticShape {
    pub vertex_normal: Vec<Vec4>,
    pub vertex_h: Vec<f64>,
    pub vertex_a2: Vec<f64>,
    pub face_h: Vec<f64>,
    pub face_tensor: Vec<Matrix4<f64>>,
}

#[derive(Debug, Clone)]
pub struct SurfaceGeometry {
    pub face_frames: Vec<FaceFrame>,
    pub face_shape: Vec<Matrix2<f64>>,
    pub vertex_normal: Vec<Vec4>,
    pub vertex_area: Vec<f64>,
    pub vertex_h: Vec<f64>,
    pub vertex_a2: Vec<f64>,
    pub source_tag: SourceTag,
}

impl SurfaceGeometry {
    pub fn total_area(&self) -> f64 {
        self.face_frames.iter().map(|f| f.area).sum()
    }

    pub fn max_abs_h(&self) -> f64 {
        self.vertex_h.iter().fold(0.0, |m, h| m.max(h.abs()))
    }

    /// Area-weighted mean of the per-vertex mean curvature.
    pub fn mean_h(&self) -> f64 {
        let num: f64 = self
            .vertex_h
            .iter()
            .zip(&self.vertex_area)
            .map(|(h, a)| h * a)
            .sum();
        num / self.vertex_area.iter().sum::<f64>()
    }

    /// Area-weighted mean of |A|^2 over vertices.
    pub fn mean_a2(&self) -> f64 {
        let num: f64 = self
            .vertex_a2
            .iter()
            .zip(&self.vertex_area)
            .map(|(a2, a)| a2 * a)
            .sum();
        num / self.vertex_area.iter().sum::<f64>()
    }
}

/// Tangent frames, normals and areas for every face.
///
/// Flat ambients lift the face into one chart and use the ordinary cross
/// product. On the 3-sphere the normal is the 4-space vector orthogonal to
/// the two chordal edges and to the barycenter direction, so it is tangent
/// to S^3; the tangent pair spans the projection of the edges onto the
/// barycenter's tangent space, making (bary, t1, t2, N) a right-handed
/// orthonormal 4-frame.
pub fn face_frames(mesh: &Mesh) -> Result<Vec<FaceFrame>, GeometryError> {
    let mut frames = Vec::with_capacity(mesh.num_faces());
    let on_sphere = matches!(mesh.ambient, AmbientSpace::Sphere3);
    for f in 0..mesh.num_faces() {
        let [pa, pb, pc] = lift_face(&mesh.ambient, mesh, f)?;
        let e1 = pb - pa;
        let e2 = pc - pa;
        let gram = e1.norm_squared() * e2.norm_squared() - e1.dot(&e2).powi(2);
        let area = 0.5 * gram.max(0.0).sqrt();
        if area <= 0.0 {
            return Err(GeometryError::DegenerateFace(f));
        }
        let (t1, t2, normal) = if on_sphere {
            let bary = ((pa + pb + pc) / 3.0).normalize();
            let normal = cross4(&bary, &e1, &e2);
            let nn = normal.norm();
            if nn <= 0.0 {
                return Err(GeometryError::DegenerateFace(f));
            }
            let normal = normal / nn;
            let p1 = e1 - bary * e1.dot(&bary);
            let t1 = p1.normalize();
            let p2 = e2 - bary * e2.dot(&bary);
            let t2 = (p2 - t1 * p2.dot(&t1)).normalize();
            debug_assert!(det4(&bary, &t1, &t2, &normal) > 0.0);
            (t1, t2, normal)
        } else {
            let t1 = e1.normalize();
            let t2 = (e2 - t1 * e2.dot(&t1)).normalize();
            let c = crate::ambient::cross3(&t1, &t2);
            (t1, t2, c)
        };
        frames.push(FaceFrame {
            t1,
            t2,
            normal,
            area,
        });
    }
    Ok(frames)
}

/// Full discrete geometry of a mesh. With `analytic` the generator's closed
/// forms are trusted; otherwise everything is estimated from the mesh.
pub fn shape_operator(
    mesh: &Mesh,
    analytic: Option<&AnalyticShape>,
) -> Result<SurfaceGeometry, GeometryError> {
    let frames = face_frames(mesh)?;
    let nv = mesh.num_vertices();
    let nf = mesh.num_faces();

    let mut vertex_area = vec![0.0; nv];
    for (f, frame) in frames.iter().enumerate() {
        for &v in &mesh.faces[f] {
            vertex_area[v] += frame.area / 3.0;
        }
    }

    if let Some(data) = analytic {
        check_len("vertex_normal", data.vertex_normal.len(), nv)?;
        check_len("vertex_h", data.vertex_h.len(), nv)?;
        check_len("vertex_a2", data.vertex_a2.len(), nv)?;
        check_len("face_h", data.face_h.len(), nf)?;
        check_len("face_tensor", data.face_tensor.len(), nf)?;
        let mut face_shape = Vec::with_capacity(nf);
        for (f, frame) in frames.iter().enumerate() {
            let t = &data.face_tensor[f];
            let s11 = (t * frame.t1).dot(&frame.t1);
            let s12 = 0.5 * ((t * frame.t2).dot(&frame.t1) + (t * frame.t1).dot(&frame.t2));
            let s22 = (t * frame.t2).dot(&frame.t2);
            let correction = data.face_h[f] - 0.5 * (s11 + s22);
            face_shape.push(Matrix2::new(
                s11 + correction,
                s12,
                s12,
                s22 + correction,
            ));
        }
        return Ok(SurfaceGeometry {
            face_frames: frames,
            face_shape,
            vertex_normal: data.vertex_normal.clone(),
            vertex_area,
            vertex_h: data.vertex_h.clone(),
            vertex_a2: data.vertex_a2.clone(),
            source_tag: SourceTag::Analytic,
        });
    }

    // estimated path: normals first, then a per-face linear fit to the
    // normal increments along the three edges. Face normals enter the
    // vertex average with corner weights area / (|e1|^2 |e2|^2), e1 and e2
    // being the edges leaving the corner; this weighting reproduces the
    // normals of any inscribed sphere exactly, where plain area weights
    // leave an O(1) curvature error near irregular vertices.
    let on_sphere = matches!(mesh.ambient, AmbientSpace::Sphere3);
    let mut vertex_normal = vec![Vec4::zeros(); nv];
    for (f, frame) in frames.iter().enumerate() {
        let lifted = lift_face(&mesh.ambient, mesh, f)?;
        for (c, &v) in mesh.faces[f].iter().enumerate() {
            let e1 = lifted[(c + 1) % 3] - lifted[c];
            let e2 = lifted[(c + 2) % 3] - lifted[c];
            let w = frame.area / (e1.norm_squared() * e2.norm_squared());
            vertex_normal[v] += frame.normal * w;
        }
    }
    for (v, n) in vertex_normal.iter_mut().enumerate() {
        if on_sphere {
            let p = mesh.vertices[v];
            *n -= p * n.dot(&p);
        }
        let len = n.norm();
        if len < 1e-300 {
            return Err(GeometryError::DegenerateNormal(v));
        }
        *n /= len;
    }

    let mut face_shape = Vec::with_capacity(nf);
    for (f, frame) in frames.iter().enumerate() {
        let [pa, pb, pc] = lift_face(&mesh.ambient, mesh, f)?;
        let [va, vb, vc] = mesh.faces[f];
        let pts = [pa, pb, pc];
        let nrm = [
            vertex_normal[va],
            vertex_normal[vb],
            vertex_normal[vc],
        ];
        let mut g: Matrix2<f64> = Matrix2::zeros();
        let mut rhs: Matrix2<f64> = Matrix2::zeros();
        for (i, j) in [(0usize, 1usize), (1, 2), (2, 0)] {
            let d = pts[j] - pts[i];
            let dn = nrm[j] - nrm[i];
            let u = [d.dot(&frame.t1), d.dot(&frame.t2)];
            let w = [-dn.dot(&frame.t1), -dn.dot(&frame.t2)];
            for a in 0..2 {
                for b in 0..2 {
                    g[(a, b)] += u[a] * u[b];
                    rhs[(a, b)] += u[a] * w[b];
                }
            }
        }
        let scale = 0.5 * (g[(0, 0)] + g[(1, 1)]);
        if g.determinant() <= 1e-14 * scale * scale {
            return Err(GeometryError::ShapeFit(f));
        }
        let st = g
            .try_inverse()
            .ok_or(GeometryError::ShapeFit(f))?
            * rhs;
        let s = st.transpose();
        let sym = 0.5 * (s + s.transpose());
        face_shape.push(sym);
    }

    // vertex curvatures as area-weighted face averages; defining H_v this
    // way keeps the tr S = 2H consistency exact
    let mut h_num = vec![0.0; nv];
    let mut a2_num = vec![0.0; nv];
    let mut denom = vec![0.0; nv];
    for (f, frame) in frames.iter().enumerate() {
        let s = &face_shape[f];
        let h_f = 0.5 * s.trace();
        let a2_f = s[(0, 0)].powi(2) + 2.0 * s[(0, 1)].powi(2) + s[(1, 1)].powi(2);
        for &v in &mesh.faces[f] {
            h_num[v] += frame.area * h_f;
            a2_num[v] += frame.area * a2_f;
            denom[v] += frame.area;
        }
    }
    let vertex_h: Vec<f64> = h_num.iter().zip(&denom).map(|(n, d)| n / d).collect();
    let vertex_a2: Vec<f64> = a2_num.iter().zip(&denom).map(|(n, d)| n / d).collect();

    Ok(SurfaceGeometry {
        face_frames: frames,
        face_shape,
        vertex_normal,
        vertex_area,
        vertex_h,
        vertex_a2,
        source_tag: SourceTag::Estimated,
    })
}

fn check_len(name: &str, got: usize, want: usize) -> Result<(), GeometryError> {
    if got == want {
        Ok(())
    } else {
        Err(GeometryError::BadAnalyticData(format!(
            "{name} has {got} entries, mesh needs {want}"
        )))
    }
}
