//! Meshes shared by unit tests in several modules.

use crate::ambient::{vec4_from3, AmbientSpace};
use crate::mesh::Mesh;
use nalgebra::Vector3;
use std::collections::HashMap;

/// Sphere of radius r from repeated midpoint subdivision of the
/// icosahedron. `inward` winds faces so that H comes out +1/r.
pub(crate) fn icosphere_mesh(r: f64, levels: u32, inward: bool) -> Mesh {
    let t = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vector3<f64>> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..levels {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(4 * faces.len());
        for [a, b, c] in faces {
            let mut mid = |u: usize, v: usize| {
                let key = (u.min(v), u.max(v));
                *cache.entry(key).or_insert_with(|| {
                    vertices.push((vertices[u] + vertices[v]).normalize());
                    vertices.len() - 1
                })
            };
            let (ab, bc, ca) = (mid(a, b), mid(b, c), mid(c, a));
            next.push([a, ab, ca]);
            next.push([ab, b, bc]);
            next.push([ca, bc, c]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    if inward {
        for f in &mut faces {
            f.swap(1, 2);
        }
    }
    let vertices = vertices
        .into_iter()
        .map(|p| vec4_from3(r * p.x, r * p.y, r * p.z))
        .collect();
    Mesh::build(AmbientSpace::Euclidean3, vertices, faces, None).unwrap()
}

/// Torus of revolution, ring radius rr, tube radius a, wound so the normal
/// points into the tube. Returns the mesh and the closed-form mean
/// curvature at each vertex for that orientation.
pub(crate) fn revolution_torus(rr: f64, a: f64, n: usize) -> (Mesh, Vec<f64>) {
    let mut vertices = Vec::with_capacity(n * n);
    let mut expected = Vec::with_capacity(n * n);
    for i in 0..n {
        let theta = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
        for j in 0..n {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
            let ring = rr + a * theta.cos();
            vertices.push(vec4_from3(
                ring * phi.cos(),
                ring * phi.sin(),
                a * theta.sin(),
            ));
            expected.push(0.5 * (1.0 / a + theta.cos() / ring));
        }
    }
    let idx = |i: usize, j: usize| (i % n) * n + (j % n);
    let mut faces = Vec::with_capacity(2 * n * n);
    for i in 0..n {
        for j in 0..n {
            faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    let m = Mesh::build(AmbientSpace::Euclidean3, vertices, faces, None).unwrap();
    (m, expected)
}

/// Closed-form shape data for an inward-wound sphere of radius r centered
/// at the origin: N = -p/r, H = 1/r, |A|^2 = 2/r^2.
pub(crate) fn sphere_analytic(mesh: &Mesh, r: f64) -> crate::geometry::AnalyticShape {
    let nv = mesh.num_vertices();
    crate::geometry::AnalyticShape {
        vertex_normal: mesh.vertices.iter().map(|p| -p / r).collect(),
        vertex_h: vec![1.0 / r; nv],
        vertex_a2: vec![2.0 / (r * r); nv],
        face_h: vec![1.0 / r; mesh.num_faces()],
        face_tensor: vec![nalgebra::Matrix4::identity() / r; mesh.num_faces()],
    }
}
