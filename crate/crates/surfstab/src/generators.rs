//! Closed surfaces with known geometry in the three ambients: a minimal
//! torus and a geodesic sphere in S^3, coordinate tori and a level-set
//! genus-3 surface in the flat 3-torus, and round spheres in R^3. The
//! analytic families carry closed-form shape data and Jacobi spectra; the
//! level set is estimated and approximate.

use crate::ambient::{vec4_from3, AmbientSpace, Vec4};
use crate::geometry::{shape_operator, AnalyticShape, GeometryError, SurfaceGeometry};
use crate::mesh::{grid_torus_mesh, Mesh, MeshError};
use nalgebra::{Matrix3, Matrix4};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("bad generator parameter: {0}")]
    BadParameter(String),
    #[error("level-set extraction failed: {0}")]
    Extraction(String),
    #[error(transparent)]
    Ambient(#[from] crate::ambient::AmbientError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Closed-form Jacobi eigenvalues with multiplicities, ascending, plus a
/// zero-mode separation threshold derived from the spectrum's gaps.
#[derive(Debug, Clone)]
pub struct SpectralOracle {
    pub pairs: Vec<(f64, usize)>,
    pub tol_zero: f64,
}

impl SpectralOracle {
    fn from_pairs(mut pairs: Vec<(f64, usize)>) -> Self {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let min_nonzero = pairs
            .iter()
            .map(|(v, _)| v.abs())
            .filter(|v| *v > 1e-9)
            .fold(f64::INFINITY, f64::min);
        SpectralOracle {
            pairs,
            tol_zero: 0.25 * min_nonzero,
        }
    }

    /// Number of negative oracle eigenvalues counted with multiplicity.
    pub fn index(&self) -> usize {
        self.pairs
            .iter()
            .filter(|(v, _)| *v < -self.tol_zero)
            .map(|(_, m)| m)
            .sum()
    }

    /// Multiplicity of the zero eigenvalue.
    pub fn nullity(&self) -> usize {
        self.pairs
            .iter()
            .filter(|(v, _)| v.abs() <= self.tol_zero)
            .map(|(_, m)| m)
            .sum()
    }

    /// The first `m` oracle eigenvalues listed one per multiplicity.
    pub fn flattened(&self, m: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(m);
        for (v, mult) in &self.pairs {
            for _ in 0..*mult {
                if out.len() == m {
                    return out;
                }
                out.push(*v);
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct GeneratorOutput {
    pub mesh: Mesh,
    pub geometry: SurfaceGeometry,
    pub oracle: Option<SpectralOracle>,
}

/// Orientation sign matching an analytic normal candidate to the winding
/// of face 0.
fn winding_sign(mesh: &Mesh, candidate: &Vec4) -> Result<f64, GeneratorError> {
    let frames = crate::geometry::face_frames(mesh)?;
    Ok(if frames[0].normal.dot(candidate) >= 0.0 {
        1.0
    } else {
        -1.0
    })
}

/// The square minimal torus in S^3: (cos u, sin u, cos v, sin v)/sqrt(2)
/// on an nu x nv angular grid. H = 0, |A|^2 = 2, and the normal is the
/// reflection (p1, p2, -p3, -p4) up to orientation. Jacobi eigenvalues are
/// 2(m1^2 + m2^2) - 4 with square-lattice multiplicities.
pub fn clifford_torus(nu: usize, nv: usize) -> Result<GeneratorOutput, GeneratorError> {
    if nu < 3 || nv < 3 {
        return Err(GeneratorError::BadParameter(format!(
            "clifford grid must be at least 3x3, got {nu}x{nv}"
        )));
    }
    let s = 0.5f64.sqrt();
    let mut vertices = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let u = 2.0 * std::f64::consts::PI * i as f64 / nu as f64;
        for j in 0..nv {
            let v = 2.0 * std::f64::consts::PI * j as f64 / nv as f64;
            vertices.push(Vec4::new(
                s * u.cos(),
                s * u.sin(),
                s * v.cos(),
                s * v.sin(),
            ));
        }
    }
    let idx = |i: usize, j: usize| (i % nu) * nv + (j % nv);
    let mut faces = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            faces.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            faces.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    let mesh = Mesh::build(AmbientSpace::Sphere3, vertices, faces, None)?;

    let reflect = |p: &Vec4| Vec4::new(p[0], p[1], -p[2], -p[3]);
    let lifted = crate::ambient::lift_face(&mesh.ambient, &mesh, 0)?;
    let bary = (lifted[0] + lifted[1] + lifted[2]).normalize();
    let sign = winding_sign(&mesh, &reflect(&bary))?;
    let nv_count = mesh.num_vertices();
    let shape = AnalyticShape {
        vertex_normal: mesh.vertices.iter().map(|p| reflect(p) * sign).collect(),
        vertex_h: vec![0.0; nv_count],
        vertex_a2: vec![2.0; nv_count],
        face_h: vec![0.0; mesh.num_faces()],
        face_tensor: vec![
            Matrix4::from_diagonal(&Vec4::new(-sign, -sign, sign, sign));
            mesh.num_faces()
        ],
    };
    let geometry = shape_operator(&mesh, Some(&shape))?;

    let mut counts: HashMap<i64, usize> = HashMap::new();
    let cap = 8i64;
    for m1 in -cap..=cap {
        for m2 in -cap..=cap {
            *counts.entry(m1 * m1 + m2 * m2).or_insert(0) += 1;
        }
    }
    let pairs = counts
        .into_iter()
        .filter(|(s2, _)| *s2 <= cap * cap)
        .map(|(s2, m)| ((2 * s2 - 4) as f64, m))
        .collect();
    Ok(GeneratorOutput {
        mesh,
        geometry,
        oracle: Some(SpectralOracle::from_pairs(pairs)),
    })
}

/// Icosahedron subdivided `levels` times and pushed to the unit sphere,
/// centered at the origin with the fourth coordinate zero. Outward
/// winding; `inward` swaps it.
fn icosphere(levels: usize, inward: bool) -> (Vec<Vec4>, Vec<[usize; 3]>) {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let raw = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let mut vertices: Vec<Vec4> = raw
        .iter()
        .map(|p| vec4_from3(p[0], p[1], p[2]).normalize())
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
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = [0usize; 3];
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mid[k] = *cache.entry(key).or_insert_with(|| {
                    vertices.push((vertices[a] + vertices[b]).normalize());
                    vertices.len() - 1
                });
            }
            next.push([f[0], mid[0], mid[2]]);
            next.push([f[1], mid[1], mid[0]]);
            next.push([f[2], mid[2], mid[1]]);
            next.push(mid);
        }
        faces = next;
    }
    if inward {
        for f in &mut faces {
            f.swap(1, 2);
        }
    }
    (vertices, faces)
}

/// Totally geodesic 2-sphere in S^3, the unit sphere of the hyperplane
/// with vanishing fourth coordinate. A = 0, H = 0, and the Jacobi
/// eigenvalues are l(l+1) - 2 with multiplicity 2l + 1.
pub fn equatorial_sphere(subdiv: usize) -> Result<GeneratorOutput, GeneratorError> {
    if subdiv < 1 {
        return Err(GeneratorError::BadParameter(
            "equatorial sphere needs subdiv >= 1".into(),
        ));
    }
    let (vertices, faces) = icosphere(subdiv, false);
    let mesh = Mesh::build(AmbientSpace::Sphere3, vertices, faces, None)?;
    let e4 = Vec4::new(0.0, 0.0, 0.0, 1.0);
    let sign = winding_sign(&mesh, &e4)?;
    let nv = mesh.num_vertices();
    let shape = AnalyticShape {
        vertex_normal: vec![e4 * sign; nv],
        vertex_h: vec![0.0; nv],
        vertex_a2: vec![0.0; nv],
        face_h: vec![0.0; mesh.num_faces()],
        face_tensor: vec![Matrix4::zeros(); mesh.num_faces()],
    };
    let geometry = shape_operator(&mesh, Some(&shape))?;
    let pairs = (0..16)
        .map(|l| ((l * (l + 1)) as f64 - 2.0, 2 * l + 1))
        .collect();
    Ok(GeneratorOutput {
        mesh,
        geometry,
        oracle: Some(SpectralOracle::from_pairs(pairs)),
    })
}

/// The coordinate 2-torus orthogonal to `normal_axis` in the flat 3-torus
/// with diagonal lattice, as an n x n grid. Totally geodesic: A = 0 and
/// the Jacobi operator is the plain Laplacian, eigenvalues
/// 4 pi^2 ((k/L_a)^2 + (l/L_b)^2) over the two in-plane periods.
pub fn flat_torus_surface(
    lattice: Matrix3<f64>,
    normal_axis: usize,
    n: usize,
) -> Result<GeneratorOutput, GeneratorError> {
    if n < 3 {
        return Err(GeneratorError::BadParameter(format!(
            "flat torus grid must be at least 3, got {n}"
        )));
    }
    if normal_axis > 2 {
        return Err(GeneratorError::BadParameter(format!(
            "normal axis must be 0, 1 or 2, got {normal_axis}"
        )));
    }
    for r in 0..3 {
        for c in 0..3 {
            if r != c && lattice[(r, c)] != 0.0 {
                return Err(GeneratorError::BadParameter(
                    "flat torus surface needs a diagonal lattice".into(),
                ));
            }
        }
    }
    let mesh = grid_torus_mesh(n, lattice, normal_axis)?;
    let mut axis = Vec4::zeros();
    axis[normal_axis] = 1.0;
    let sign = winding_sign(&mesh, &axis)?;
    let nv = mesh.num_vertices();
    let shape = AnalyticShape {
        vertex_normal: vec![axis * sign; nv],
        vertex_h: vec![0.0; nv],
        vertex_a2: vec![0.0; nv],
        face_h: vec![0.0; mesh.num_faces()],
        face_tensor: vec![Matrix4::zeros(); mesh.num_faces()],
    };
    let geometry = shape_operator(&mesh, Some(&shape))?;

    let (a, b) = match normal_axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let (la, lb) = (lattice[(a, a)].abs(), lattice[(b, b)].abs());
    let two_pi = 2.0 * std::f64::consts::PI;
    let cap = 6i64;
    let mut values: Vec<f64> = Vec::new();
    for k in -cap..=cap {
        for l in -cap..=cap {
            values.push((two_pi * k as f64 / la).powi(2) + (two_pi * l as f64 / lb).powi(2));
        }
    }
    values.sort_by(f64::total_cmp);
    let mut pairs: Vec<(f64, usize)> = Vec::new();
    for v in values {
        match pairs.last_mut() {
            Some((last, m)) if (v - *last).abs() <= 1e-9 * v.max(1.0) => *m += 1,
            _ => pairs.push((v, 1)),
        }
    }
    Ok(GeneratorOutput {
        mesh,
        geometry,
        oracle: Some(SpectralOracle::from_pairs(pairs)),
    })
}

/// Round sphere of radius r in R^3, wound so the normal points inward and
/// H = +1/r. Jacobi eigenvalues (l(l+1) - 2)/r^2, multiplicity 2l + 1.
pub fn round_sphere(r: f64, subdiv: usize) -> Result<GeneratorOutput, GeneratorError> {
    if r <= 0.0 || r.is_nan() {
        return Err(GeneratorError::BadParameter(format!(
            "sphere radius must be positive, got {r}"
        )));
    }
    if subdiv < 1 {
        return Err(GeneratorError::BadParameter(
            "round sphere needs subdiv >= 1".into(),
        ));
    }
    let (unit, faces) = icosphere(subdiv, true);
    let vertices: Vec<Vec4> = unit.iter().map(|p| p * r).collect();
    let mesh = Mesh::build(AmbientSpace::Euclidean3, vertices, faces, None)?;
    let nv = mesh.num_vertices();
    let shape = AnalyticShape {
        vertex_normal: mesh.vertices.iter().map(|p| -p / r).collect(),
        vertex_h: vec![1.0 / r; nv],
        vertex_a2: vec![2.0 / (r * r); nv],
        face_h: vec![1.0 / r; mesh.num_faces()],
        face_tensor: vec![Matrix4::identity() / r; mesh.num_faces()],
    };
    let geometry = shape_operator(&mesh, Some(&shape))?;
    let pairs = (0..16)
        .map(|l| (((l * (l + 1)) as f64 - 2.0) / (r * r), 2 * l + 1))
        .collect();
    Ok(GeneratorOutput {
        mesh,
        geometry,
        oracle: Some(SpectralOracle::from_pairs(pairs)),
    })
}

/// Kuhn tetrahedra of the unit cube: six permutations of the coordinate
/// insertion order along the main diagonal, mutually face-compatible
/// across translated cubes.
const KUHN_PERMS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

/// Genus-3 level set cos 2 pi x + cos 2 pi y + cos 2 pi z = 0 in the unit
/// flat 3-torus, extracted by marching tetrahedra on an offset sample
/// grid. The offsets differ per axis: equal offsets would leave samples
/// (i, i + n/3, i + 2n/3) exactly on the level set for any resolution
/// divisible by 3, since the three cosines then cancel identically, and
/// near-zero samples degrade the triangulation. Geometry is estimated;
/// the surface is only approximately minimal and carries no spectral
/// oracle.
pub fn schwarz_p(resolution: usize) -> Result<GeneratorOutput, GeneratorError> {
    if resolution < 16 {
        return Err(GeneratorError::BadParameter(format!(
            "level-set resolution must be at least 16, got {resolution}"
        )));
    }
    let n = resolution;
    let two_pi = 2.0 * std::f64::consts::PI;
    let offsets = [0.5, 0.41, 0.29];
    let coord = |axis: usize, i: i64| (i as f64 + offsets[axis]) / n as f64;
    // sample values, nudged off exact zero so every tet edge crossing is
    // strictly interior
    let mut field = vec![0.0f64; n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let v = (two_pi * coord(0, i as i64)).cos()
                    + (two_pi * coord(1, j as i64)).cos()
                    + (two_pi * coord(2, k as i64)).cos();
                field[(i * n + j) * n + k] = if v.abs() < 1e-9 { 1e-9 } else { v };
            }
        }
    }
    let wrap = |i: i64| i.rem_euclid(n as i64) as usize;
    let gid = |g: [i64; 3]| (wrap(g[0]) * n + wrap(g[1])) * n + wrap(g[2]);
    let fval = |g: [i64; 3]| field[gid(g)];
    let gpos = |g: [i64; 3]| vec4_from3(coord(0, g[0]), coord(1, g[1]), coord(2, g[2]));

    let mut vert_of: HashMap<(usize, usize), usize> = HashMap::new();
    let mut vertices: Vec<Vec4> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    // local unwrapped positions per face corner, for orientation and shifts
    let mut local: Vec<[Vec4; 3]> = Vec::new();

    let mut corner_cut = |a: [i64; 3], b: [i64; 3]| -> (usize, Vec4) {
        let (fa, fb) = (fval(a), fval(b));
        let t = (fa / (fa - fb)).clamp(1e-6, 1.0 - 1e-6);
        let p = gpos(a) * (1.0 - t) + gpos(b) * t;
        let key = (gid(a).min(gid(b)), gid(a).max(gid(b)));
        let id = *vert_of.entry(key).or_insert_with(|| {
            vertices.push(vec4_from3(
                p[0].rem_euclid(1.0),
                p[1].rem_euclid(1.0),
                p[2].rem_euclid(1.0),
            ));
            vertices.len() - 1
        });
        (id, p)
    };

    let mut emit = |tri: [(usize, Vec4); 3], to_positive: Vec4| {
        let normal = crate::ambient::cross3(&(tri[1].1 - tri[0].1), &(tri[2].1 - tri[0].1));
        if normal.dot(&to_positive) >= 0.0 {
            faces.push([tri[0].0, tri[1].0, tri[2].0]);
            local.push([tri[0].1, tri[1].1, tri[2].1]);
        } else {
            faces.push([tri[0].0, tri[2].0, tri[1].0]);
            local.push([tri[0].1, tri[2].1, tri[1].1]);
        }
    };

    for ci in 0..n as i64 {
        for cj in 0..n as i64 {
            for ck in 0..n as i64 {
                for perm in &KUHN_PERMS {
                    let mut c = [[ci, cj, ck]; 4];
                    for (step, axis) in perm.iter().enumerate() {
                        for corner in c.iter_mut().skip(step + 1) {
                            corner[*axis] += 1;
                        }
                    }
                    let pos: Vec<usize> = (0..4).filter(|m| fval(c[*m]) > 0.0).collect();
                    let to_positive = {
                        let mut mean_pos = Vec4::zeros();
                        let mut mean_neg = Vec4::zeros();
                        let mut np = 0.0f64;
                        for (m, corner) in c.iter().enumerate() {
                            if pos.contains(&m) {
                                mean_pos += gpos(*corner);
                                np += 1.0;
                            } else {
                                mean_neg += gpos(*corner);
                            }
                        }
                        mean_pos / np.max(1.0) - mean_neg / (4.0 - np).max(1.0)
                    };
                    match pos.len() {
                        0 | 4 => {}
                        1 | 3 => {
                            let lone = if pos.len() == 1 {
                                pos[0]
                            } else {
                                (0..4).find(|m| !pos.contains(m)).unwrap()
                            };
                            let others: Vec<usize> = (0..4).filter(|m| *m != lone).collect();
                            let cuts: Vec<(usize, Vec4)> = others
                                .iter()
                                .map(|m| corner_cut(c[lone], c[*m]))
                                .collect();
                            emit([cuts[0], cuts[1], cuts[2]], to_positive);
                        }
                        2 => {
                            let neg: Vec<usize> = (0..4).filter(|m| !pos.contains(m)).collect();
                            let q00 = corner_cut(c[pos[0]], c[neg[0]]);
                            let q01 = corner_cut(c[pos[0]], c[neg[1]]);
                            let q10 = corner_cut(c[pos[1]], c[neg[0]]);
                            let q11 = corner_cut(c[pos[1]], c[neg[1]]);
                            emit([q00, q01, q11], to_positive);
                            emit([q00, q11, q10], to_positive);
                        }
                        _ => unreachable!(),
                    }
                }
            }
        }
    }
    if vertices.is_empty() {
        return Err(GeneratorError::Extraction(
            "level set produced no vertices".into(),
        ));
    }

    let mut shifts = Vec::with_capacity(3 * faces.len());
    for (f, tri) in faces.iter().enumerate() {
        for k in 0..3 {
            let rep_u = vertices[tri[k]];
            let rep_v = vertices[tri[(k + 1) % 3]];
            let d_local = local[f][(k + 1) % 3] - local[f][k];
            let mut s = [0i32; 3];
            for c in 0..3 {
                // representative difference minus the true local step is an
                // integer, the negated chart shift
                s[c] = -(rep_v[c] - rep_u[c] - d_local[c]).round() as i32;
            }
            shifts.push(s);
        }
    }
    let ambient = AmbientSpace::flat_torus(Matrix3::identity())
        .expect("identity lattice is valid");
    let mesh = Mesh::build(ambient.clone(), vertices, faces, Some(shifts.clone()))?;

    // the raw extraction has needle triangles wherever a cut lands near a
    // grid vertex; relax tangentially and reproject onto the exact level
    // set to restore quality, then rebuild with the same connectivity
    let grad = |p: &Vec4| {
        vec4_from3(
            -two_pi * (two_pi * p[0]).sin(),
            -two_pi * (two_pi * p[1]).sin(),
            -two_pi * (two_pi * p[2]).sin(),
        )
    };
    let level = |p: &Vec4| {
        (two_pi * p[0]).cos() + (two_pi * p[1]).cos() + (two_pi * p[2]).cos()
    };
    let mut neighbors: Vec<Vec<(usize, [i32; 3])>> = vec![Vec::new(); mesh.num_vertices()];
    for f in 0..mesh.num_faces() {
        let tri = mesh.faces[f];
        for k in 0..3 {
            let s = mesh.halfedge_shift(3 * f + k);
            neighbors[tri[k]].push((tri[(k + 1) % 3], s));
        }
    }
    let mut points: Vec<Vec4> = mesh.vertices.clone();
    for _ in 0..10 {
        let snapshot = points.clone();
        for (v, nbrs) in neighbors.iter().enumerate() {
            if nbrs.is_empty() {
                continue;
            }
            let mut mean = Vec4::zeros();
            for (q, s) in nbrs {
                let lift = vec4_from3(s[0] as f64, s[1] as f64, s[2] as f64);
                mean += snapshot[*q] + lift;
            }
            mean /= nbrs.len() as f64;
            let g = grad(&snapshot[v]);
            let g2 = g.norm_squared();
            if g2 < 1e-12 {
                continue;
            }
            let n_hat = g / g2.sqrt();
            let d = mean - snapshot[v];
            let mut p = snapshot[v] + (d - n_hat * d.dot(&n_hat)) * 0.5;
            for _ in 0..2 {
                let gp = grad(&p);
                let gp2 = gp.norm_squared();
                if gp2 < 1e-12 {
                    break;
                }
                p -= gp * (level(&p) / gp2);
            }
            points[v] = p;
        }
    }
    let mesh = Mesh::build(ambient, points, mesh.faces.clone(), Some(shifts))?;
    let topo = mesh.topology()?;
    if topo.genus != 3 {
        return Err(GeneratorError::Extraction(format!(
            "expected a genus-3 level set, got genus {} (chi = {})",
            topo.genus, topo.euler_characteristic
        )));
    }
    let geometry = shape_operator(&mesh, None)?;
    Ok(GeneratorOutput {
        mesh,
        geometry,
        oracle: None,
    })
}
