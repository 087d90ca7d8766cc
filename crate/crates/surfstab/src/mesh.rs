//! Triangulated closed surfaces with halfedge connectivity.
//!
//! A mesh is built once, validated eagerly, and immutable afterwards.
//! Halfedge `h = 3*f + k` runs from `faces[f][k]` to `faces[f][(k+1)%3]`.
//! On the flat torus every halfedge carries an integer lattice shift; an
//! edge crossing the fundamental domain boundary records how the head
//! vertex is translated into the tail's chart. Twin halfedges are matched
//! by endpoints and shift together, so a coarse mesh may legitimately
//! contain two distinct edges between the same vertex pair as long as they
//! wrap differently.

use crate::ambient::{self, AmbientError, AmbientSpace, AmbientTag, Vec4};
use nalgebra::{Matrix3, Vector4};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("cannot read {path}: {err}")]
    Io { path: String, err: String },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("mesh validation failed:\n  {}", violations.join("\n  "))]
    Invalid { violations: Vec<String> },
    #[error(
        "file carries {found} coordinates per vertex but ambient {ambient} expects {expect}"
    )]
    DimensionMismatch {
        found: usize,
        expect: usize,
        ambient: String,
    },
    #[error("file declares ambient {declared} but {requested} was requested")]
    AmbientMismatch { declared: String, requested: String },
    #[error("flat torus mesh file declares no lattice")]
    MissingLattice,
    #[error("file declares no ambient; pass one explicitly")]
    UnknownAmbient,
    #[error("euler characteristic {0} is not an even number 2 - 2g; surface is not a closed orientable triangulation")]
    BadEuler(i64),
    #[error(transparent)]
    Ambient(#[from] AmbientError),
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub ambient: AmbientSpace,
    pub vertices: Vec<Vec4>,
    pub faces: Vec<[usize; 3]>,
    shifts: Vec<[i32; 3]>,
    twin: Vec<usize>,
    /// twin halfedge pairs `(h, t)` with `h < t`, one per edge
    edges: Vec<(usize, usize)>,
    edge_of_halfedge: Vec<usize>,
}

/// Counts and derived topology of a validated mesh.
#[derive(Debug, Clone)]
pub struct TopologyReport {
    pub num_vertices: usize,
    pub num_edges: usize,
    pub num_faces: usize,
    pub euler_characteristic: i64,
    pub genus: usize,
    pub is_valid: bool,
    pub violations: Vec<String>,
}

impl Mesh {
    /// Builds and validates a mesh. `halfedge_shifts`, when given, has one
    /// lattice shift per halfedge in the `3*f + k` order; `None` means all
    /// zero (mandatory for the non-torus ambients).
    pub fn build(
        ambient: AmbientSpace,
        vertices: Vec<Vec4>,
        faces: Vec<[usize; 3]>,
        halfedge_shifts: Option<Vec<[i32; 3]>>,
    ) -> Result<Self, MeshError> {
        let nv = vertices.len();
        let nh = 3 * faces.len();
        let shifts = halfedge_shifts.unwrap_or_else(|| vec![[0, 0, 0]; nh]);
        let mut violations: Vec<String> = Vec::new();
        if shifts.len() != nh {
            violations.push(format!(
                "shift table has {} entries for {} halfedges",
                shifts.len(),
                nh
            ));
        }
        if faces.is_empty() {
            violations.push("mesh has no faces".into());
        }
        for (f, tri) in faces.iter().enumerate() {
            if tri.iter().any(|&v| v >= nv) {
                violations.push(format!("face {f} references a vertex out of range"));
            } else if tri[0] == tri[1] || tri[1] == tri[2] || tri[2] == tri[0] {
                violations.push(format!("face {f} repeats a vertex index"));
            }
        }
        if !violations.is_empty() {
            return Err(MeshError::Invalid { violations });
        }

        if !matches!(ambient, AmbientSpace::FlatTorus3 { .. })
            && shifts.iter().any(|s| *s != [0, 0, 0])
        {
            violations.push(format!(
                "lattice shifts present but ambient is {}",
                ambient.tag().as_str()
            ));
        }

        // twin matching: an edge is an unordered vertex pair plus a shift,
        // oriented from the smaller vertex index
        type Key = (usize, usize, [i32; 3]);
        let mut groups: HashMap<Key, Vec<(usize, bool)>> = HashMap::new();
        for (h, &s) in shifts.iter().enumerate() {
            let (u, v) = halfedge_ends(&faces, h);
            let (key, forward) = if u < v {
                ((u, v, s), true)
            } else {
                ((v, u, [-s[0], -s[1], -s[2]]), false)
            };
            groups.entry(key).or_default().push((h, forward));
        }
        let mut keys: Vec<Key> = groups.keys().cloned().collect();
        keys.sort();
        let mut twin = vec![usize::MAX; nh];
        for key in &keys {
            let members = &groups[key];
            match members.len() {
                2 => {
                    let (h1, f1) = members[0];
                    let (h2, f2) = members[1];
                    if f1 == f2 {
                        violations.push(format!(
                            "edge {}-{} has two halfedges with the same direction (inconsistent orientation or non-manifold)",
                            key.0, key.1
                        ));
                    } else {
                        twin[h1] = h2;
                        twin[h2] = h1;
                    }
                }
                1 => violations.push(format!(
                    "edge {}-{} has no opposite halfedge (open boundary)",
                    key.0, key.1
                )),
                n => violations.push(format!(
                    "edge {}-{} is shared by {} halfedges (non-manifold)",
                    key.0, key.1, n
                )),
            }
        }
        if !violations.is_empty() {
            return Err(MeshError::Invalid { violations });
        }

        let mut edges = Vec::with_capacity(nh / 2);
        let mut edge_of_halfedge = vec![usize::MAX; nh];
        for h in 0..nh {
            let t = twin[h];
            if h < t {
                edge_of_halfedge[h] = edges.len();
                edge_of_halfedge[t] = edges.len();
                edges.push((h, t));
            }
        }

        let mesh = Mesh {
            ambient,
            vertices,
            faces,
            shifts,
            twin,
            edges,
            edge_of_halfedge,
        };
        mesh.validate_geometry(&mut violations);
        if violations.is_empty() {
            Ok(mesh)
        } else {
            Err(MeshError::Invalid { violations })
        }
    }

    fn validate_geometry(&self, violations: &mut Vec<String>) {
        let nv = self.vertices.len();

        for (i, p) in self.vertices.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                violations.push(format!("vertex {i} has a non-finite coordinate"));
            }
        }
        if !violations.is_empty() {
            return;
        }

        if matches!(self.ambient, AmbientSpace::Sphere3) {
            for (i, p) in self.vertices.iter().enumerate() {
                if (p.norm() - 1.0).abs() > 1e-12 {
                    violations.push(format!(
                        "vertex {i} off the unit sphere: |p| = {:.15}",
                        p.norm()
                    ));
                }
            }
        } else {
            for (i, p) in self.vertices.iter().enumerate() {
                if p[3] != 0.0 {
                    violations.push(format!("vertex {i} has a nonzero fourth coordinate"));
                }
            }
        }

        // every vertex used
        let mut used = vec![false; nv];
        for tri in &self.faces {
            for &v in tri {
                used[v] = true;
            }
        }
        for (i, u) in used.iter().enumerate() {
            if !u {
                violations.push(format!("vertex {i} belongs to no face"));
            }
        }

        // connectivity over face adjacency
        let nf = self.faces.len();
        let mut seen = vec![false; nf];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(f) = stack.pop() {
            for k in 0..3 {
                let g = self.twin[3 * f + k] / 3;
                if !seen[g] {
                    seen[g] = true;
                    stack.push(g);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            violations.push("mesh is disconnected".into());
        }

        // single umbrella per vertex
        let mut outgoing: Vec<Vec<usize>> = vec![Vec::new(); nv];
        for h in 0..3 * nf {
            outgoing[self.from(h)].push(h);
        }
        for (v, out) in outgoing.iter().enumerate() {
            if out.is_empty() {
                continue;
            }
            let start = out[0];
            let mut h = start;
            let mut count = 0;
            loop {
                count += 1;
                h = next_halfedge(self.twin[h]);
                if h == start || count > out.len() {
                    break;
                }
            }
            if count != out.len() {
                violations.push(format!(
                    "vertex {v} is non-manifold: {} incident faces form more than one fan",
                    out.len()
                ));
            }
        }

        // face shift loops must cancel so the per-face chart is well defined
        if matches!(self.ambient, AmbientSpace::FlatTorus3 { .. }) {
            for f in 0..nf {
                let mut s = [0i64; 3];
                for k in 0..3 {
                    for (si, v) in s.iter_mut().zip(self.shifts[3 * f + k]) {
                        *si += v as i64;
                    }
                }
                if s != [0, 0, 0] {
                    violations.push(format!("face {f}: lattice shifts do not cancel around the face"));
                }
            }
        }
        if !violations.is_empty() {
            return;
        }

        // area degeneracy on lifted faces, scale free
        let mut areas = Vec::with_capacity(nf);
        for f in 0..nf {
            match ambient::lift_face(&self.ambient, self, f) {
                Ok([a, b, c]) => {
                    let e1 = b - a;
                    let e2 = c - a;
                    let gram = e1.norm_squared() * e2.norm_squared() - e1.dot(&e2).powi(2);
                    areas.push(0.5 * gram.max(0.0).sqrt());
                }
                Err(err) => {
                    violations.push(err.to_string());
                    areas.push(0.0);
                }
            }
        }
        if violations.is_empty() {
            let mean = areas.iter().sum::<f64>() / areas.len() as f64;
            for (f, a) in areas.iter().enumerate() {
                if *a < 1e-12 * mean {
                    violations.push(format!("face {f} is degenerate: area {a:.3e}"));
                }
            }
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn from(&self, h: usize) -> usize {
        halfedge_ends(&self.faces, h).0
    }

    pub fn to(&self, h: usize) -> usize {
        halfedge_ends(&self.faces, h).1
    }

    pub fn twin(&self, h: usize) -> usize {
        self.twin[h]
    }

    pub fn halfedge_shift(&self, h: usize) -> [i32; 3] {
        self.shifts[h]
    }

    /// The vertex of h's face that h does not touch.
    pub fn opposite_vertex(&self, h: usize) -> usize {
        self.faces[h / 3][(h % 3 + 2) % 3]
    }

    pub fn edge_of(&self, h: usize) -> usize {
        self.edge_of_halfedge[h]
    }

    /// Canonical halfedge of an edge; its direction orients the edge.
    pub fn edge_halfedge(&self, e: usize) -> usize {
        self.edges[e].0
    }

    /// Canonical endpoints (tail, head) of an edge.
    pub fn edge_vertices(&self, e: usize) -> (usize, usize) {
        let h = self.edges[e].0;
        (self.from(h), self.to(h))
    }

    /// +1 when halfedge h runs along its edge's canonical direction.
    pub fn halfedge_sign(&self, h: usize) -> f64 {
        if self.edges[self.edge_of_halfedge[h]].0 == h {
            1.0
        } else {
            -1.0
        }
    }

    pub fn topology(&self) -> Result<TopologyReport, MeshError> {
        let v = self.num_vertices() as i64;
        let e = self.num_edges() as i64;
        let f = self.num_faces() as i64;
        let chi = v - e + f;
        let two_g = 2 - chi;
        if two_g < 0 || two_g % 2 != 0 {
            return Err(MeshError::BadEuler(chi));
        }
        Ok(TopologyReport {
            num_vertices: v as usize,
            num_edges: e as usize,
            num_faces: f as usize,
            euler_characteristic: chi,
            genus: (two_g / 2) as usize,
            is_valid: true,
            violations: Vec::new(),
        })
    }
}

fn halfedge_ends(faces: &[[usize; 3]], h: usize) -> (usize, usize) {
    let f = h / 3;
    let k = h % 3;
    (faces[f][k], faces[f][(k + 1) % 3])
}

/// Next halfedge within the same face, counterclockwise.
pub fn next_halfedge(h: usize) -> usize {
    3 * (h / 3) + (h % 3 + 1) % 3
}

// file input

#[derive(Debug, Default)]
struct FileData {
    coords: Vec<Vec<f64>>,
    faces: Vec<[usize; 3]>,
    ambient: Option<AmbientTag>,
    lattice: Option<Matrix3<f64>>,
    shifts: HashMap<(usize, usize), [i32; 3]>,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> MeshError {
    MeshError::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_extension_comment(
    data: &mut FileData,
    rest: &str,
    path: &Path,
    lineno: usize,
) -> Result<(), MeshError> {
    let mut words = rest.split_whitespace();
    match words.next() {
        Some("ambient") => {
            let tag = words
                .next()
                .and_then(AmbientTag::parse)
                .ok_or_else(|| parse_err(path, lineno, "unknown ambient tag"))?;
            data.ambient = Some(tag);
        }
        Some("lattice") => {
            let vals: Vec<f64> = words.filter_map(|w| w.parse().ok()).collect();
            if vals.len() != 9 {
                return Err(parse_err(path, lineno, "lattice needs 9 numbers"));
            }
            data.lattice = Some(Matrix3::from_row_slice(&vals));
        }
        Some("shift") => {
            let vals: Vec<i64> = words.filter_map(|w| w.parse().ok()).collect();
            if vals.len() != 5 {
                return Err(parse_err(path, lineno, "shift needs 5 integers"));
            }
            data.shifts.insert(
                (vals[0] as usize, vals[1] as usize),
                [vals[2] as i32, vals[3] as i32, vals[4] as i32],
            );
        }
        _ => {} // ordinary comment
    }
    Ok(())
}

fn parse_off(text: &str, path: &Path) -> Result<FileData, MeshError> {
    let mut data = FileData::default();
    let mut body: Vec<(usize, &str)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('#') {
            parse_extension_comment(&mut data, rest.trim(), path, i + 1)?;
        } else if !line.is_empty() {
            body.push((i + 1, line));
        }
    }
    let mut it = body.into_iter();
    let (l0, header) = it
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))?;
    if header != "OFF" {
        return Err(parse_err(path, l0, "missing OFF header"));
    }
    let (l1, counts) = it
        .next()
        .ok_or_else(|| parse_err(path, l0, "missing count line"))?;
    let cs: Vec<usize> = counts
        .split_whitespace()
        .map(|w| w.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| parse_err(path, l1, "bad count line"))?;
    if cs.len() < 2 {
        return Err(parse_err(path, l1, "count line needs V F [E]"));
    }
    let (nv, nf) = (cs[0], cs[1]);
    for _ in 0..nv {
        let (ln, line) = it
            .next()
            .ok_or_else(|| parse_err(path, l1, "unexpected end of vertex list"))?;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|w| w.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| parse_err(path, ln, "bad vertex line"))?;
        if row.len() != 3 && row.len() != 4 {
            return Err(parse_err(path, ln, "vertex needs 3 or 4 coordinates"));
        }
        data.coords.push(row);
    }
    for _ in 0..nf {
        let (ln, line) = it
            .next()
            .ok_or_else(|| parse_err(path, l1, "unexpected end of face list"))?;
        let row: Vec<usize> = line
            .split_whitespace()
            .map(|w| w.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| parse_err(path, ln, "bad face line"))?;
        if row.len() != 4 || row[0] != 3 {
            return Err(parse_err(path, ln, "only triangles are supported"));
        }
        data.faces.push([row[1], row[2], row[3]]);
    }
    Ok(data)
}

fn parse_obj(text: &str, path: &Path) -> Result<FileData, MeshError> {
    let mut data = FileData::default();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('#') {
            parse_extension_comment(&mut data, rest.trim(), path, lineno)?;
            continue;
        }
        let mut words = line.split_whitespace();
        match words.next() {
            Some("v") => {
                let row: Vec<f64> = words
                    .map(|w| w.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| parse_err(path, lineno, "bad vertex line"))?;
                if row.len() != 3 && row.len() != 4 {
                    return Err(parse_err(path, lineno, "vertex needs 3 or 4 coordinates"));
                }
                data.coords.push(row);
            }
            Some("f") => {
                let idx: Vec<usize> = words
                    .map(|w| {
                        let lead = w.split('/').next().unwrap_or("");
                        lead.parse::<usize>()
                            .map_err(|_| parse_err(path, lineno, "bad face index"))
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() != 3 {
                    return Err(parse_err(path, lineno, "only triangles are supported"));
                }
                if idx.contains(&0) {
                    return Err(parse_err(path, lineno, "face indices are 1-based"));
                }
                data.faces.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
            }
            _ => {} // ignore vt, vn, usemtl and friends
        }
    }
    Ok(data)
}

fn read_file_data(path: &Path) -> Result<FileData, MeshError> {
    let text = std::fs::read_to_string(path).map_err(|e| MeshError::Io {
        path: path.display().to_string(),
        err: e.to_string(),
    })?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("obj") => parse_obj(&text, path),
        _ => parse_off(&text, path),
    }
}

fn mesh_from_file_data(data: FileData, ambient: AmbientSpace) -> Result<Mesh, MeshError> {
    let expect = ambient.coord_dim();
    let mut vertices = Vec::with_capacity(data.coords.len());
    for row in &data.coords {
        if row.len() != expect {
            return Err(MeshError::DimensionMismatch {
                found: row.len(),
                expect,
                ambient: ambient.tag().as_str().into(),
            });
        }
        vertices.push(Vector4::new(
            row[0],
            row[1],
            row[2],
            if expect == 4 { row[3] } else { 0.0 },
        ));
    }
    let shifts = if data.shifts.is_empty() {
        None
    } else {
        let mut per_halfedge = vec![[0i32; 3]; 3 * data.faces.len()];
        for (h, s) in per_halfedge.iter_mut().enumerate() {
            let (u, v) = halfedge_ends(&data.faces, h);
            if let Some(fwd) = data.shifts.get(&(u, v)) {
                *s = *fwd;
            } else if let Some(rev) = data.shifts.get(&(v, u)) {
                *s = [-rev[0], -rev[1], -rev[2]];
            }
        }
        Some(per_halfedge)
    };
    Mesh::build(ambient, vertices, data.faces, shifts)
}

/// Loads and validates a mesh, resolving the ambient from the requested tag
/// and, for the flat torus, the lattice declared in the file.
pub fn load_mesh(path: &Path, tag: AmbientTag) -> Result<Mesh, MeshError> {
    let data = read_file_data(path)?;
    if let Some(declared) = data.ambient {
        if declared != tag {
            return Err(MeshError::AmbientMismatch {
                declared: declared.as_str().into(),
                requested: tag.as_str().into(),
            });
        }
    }
    let ambient = match tag {
        AmbientTag::Euclidean3 => AmbientSpace::Euclidean3,
        AmbientTag::Sphere3 => AmbientSpace::Sphere3,
        AmbientTag::FlatTorus3 => {
            let lattice = data.lattice.ok_or(MeshError::MissingLattice)?;
            AmbientSpace::flat_torus(lattice)?
        }
    };
    mesh_from_file_data(data, ambient)
}

/// Loads a mesh using the ambient declared inside the file.
pub fn load_mesh_auto(path: &Path) -> Result<Mesh, MeshError> {
    let data = read_file_data(path)?;
    let tag = data.ambient.ok_or(MeshError::UnknownAmbient)?;
    let ambient = match tag {
        AmbientTag::Euclidean3 => AmbientSpace::Euclidean3,
        AmbientTag::Sphere3 => AmbientSpace::Sphere3,
        AmbientTag::FlatTorus3 => {
            let lattice = data.lattice.ok_or(MeshError::MissingLattice)?;
            AmbientSpace::flat_torus(lattice)?
        }
    };
    mesh_from_file_data(data, ambient)
}

/// Serializes a mesh as extended OFF with full round-trip precision.
pub fn write_mesh(mesh: &Mesh, path: &Path) -> Result<(), MeshError> {
    let mut out = String::new();
    out.push_str("OFF\n");
    let _ = writeln!(out, "# ambient {}", mesh.ambient.tag().as_str());
    if let Some(l) = mesh.ambient.lattice() {
        let _ = write!(out, "# lattice");
        for r in 0..3 {
            for c in 0..3 {
                let _ = write!(out, " {:.16e}", l[(r, c)]);
            }
        }
        out.push('\n');
    }
    let _ = writeln!(
        out,
        "{} {} {}",
        mesh.num_vertices(),
        mesh.num_faces(),
        mesh.num_edges()
    );
    let dim = mesh.ambient.coord_dim();
    for p in &mesh.vertices {
        for d in 0..dim {
            if d > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{:.16e}", p[d]);
        }
        out.push('\n');
    }
    for tri in &mesh.faces {
        let _ = writeln!(out, "3 {} {} {}", tri[0], tri[1], tri[2]);
    }
    if mesh.ambient.lattice().is_some() {
        for e in 0..mesh.num_edges() {
            let h = mesh.edge_halfedge(e);
            let s = mesh.halfedge_shift(h);
            if s != [0, 0, 0] {
                let _ = writeln!(
                    out,
                    "# shift {} {} {} {} {}",
                    mesh.from(h),
                    mesh.to(h),
                    s[0],
                    s[1],
                    s[2]
                );
            }
        }
    }
    std::fs::write(path, out).map_err(|e| MeshError::Io {
        path: path.display().to_string(),
        err: e.to_string(),
    })
}

/// The coordinate 2-torus grid used by tests in several modules: an n x n
/// grid on the axis plane of a diagonal lattice, split lower-left to
/// upper-right, with wrap shifts on the far row and column.
pub fn grid_torus_mesh(n: usize, lattice: Matrix3<f64>, normal_axis: usize) -> Result<Mesh, MeshError> {
    assert!(n >= 3, "grid needs n >= 3");
    assert!(normal_axis < 3);
    let (a1, a2) = match normal_axis {
        0 => (1, 2),
        1 => (2, 0),
        _ => (0, 1),
    };
    let ambient = AmbientSpace::flat_torus(lattice)?;
    let step1 = lattice[(a1, a1)] / n as f64;
    let step2 = lattice[(a2, a2)] / n as f64;
    let mut vertices = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let mut p = Vector4::zeros();
            p[a1] = i as f64 * step1;
            p[a2] = j as f64 * step2;
            vertices.push(p);
        }
    }
    let idx = |i: usize, j: usize| (i % n) * n + (j % n);
    // lattice shift picked up when an index wraps from n-1 back to 0
    let wrap = |from: usize, to_raw: usize, axis: usize| -> [i32; 3] {
        let mut s = [0i32; 3];
        if to_raw == n && from == n - 1 {
            s[axis] = 1;
        }
        s
    };
    let mut faces = Vec::with_capacity(2 * n * n);
    let mut shifts = Vec::with_capacity(6 * n * n);
    for i in 0..n {
        for j in 0..n {
            let v00 = idx(i, j);
            let v10 = idx(i + 1, j);
            let v01 = idx(i, j + 1);
            let v11 = idx(i + 1, j + 1);
            let si = wrap(i, i + 1, a1);
            let sj = wrap(j, j + 1, a2);
            let add = |a: [i32; 3], b: [i32; 3]| [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
            let neg = |a: [i32; 3]| [-a[0], -a[1], -a[2]];
            // lower-left triangle (v00, v10, v11)
            faces.push([v00, v10, v11]);
            shifts.push(si);
            shifts.push(sj);
            shifts.push(neg(add(si, sj)));
            // upper-right triangle (v00, v11, v01)
            faces.push([v00, v11, v01]);
            shifts.push(add(si, sj));
            shifts.push(neg(si));
            shifts.push(neg(sj));
        }
    }
    Mesh::build(ambient, vertices, faces, Some(shifts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ambient::vec4_from3;

    fn tetrahedron() -> Mesh {
        let vertices = vec![
            vec4_from3(1.0, 1.0, 1.0),
            vec4_from3(1.0, -1.0, -1.0),
            vec4_from3(-1.0, 1.0, -1.0),
            vec4_from3(-1.0, -1.0, 1.0),
        ];
        let faces = vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]];
        Mesh::build(AmbientSpace::Euclidean3, vertices, faces, None).unwrap()
    }

    fn octahedron() -> Mesh {
        let vertices = vec![
            vec4_from3(1.0, 0.0, 0.0),
            vec4_from3(-1.0, 0.0, 0.0),
            vec4_from3(0.0, 1.0, 0.0),
            vec4_from3(0.0, -1.0, 0.0),
            vec4_from3(0.0, 0.0, 1.0),
            vec4_from3(0.0, 0.0, -1.0),
        ];
        let faces = vec![
            [0, 2, 4],
            [2, 1, 4],
            [1, 3, 4],
            [3, 0, 4],
            [2, 0, 5],
            [1, 2, 5],
            [3, 1, 5],
            [0, 3, 5],
        ];
        Mesh::build(AmbientSpace::Euclidean3, vertices, faces, None).unwrap()
    }

    #[test]
    fn tetrahedron_counts_and_topology() {
        let m = tetrahedron();
        let t = m.topology().unwrap();
        assert_eq!(
            (t.num_vertices, t.num_edges, t.num_faces),
            (4, 6, 4)
        );
        assert_eq!(t.euler_characteristic, 2);
        assert_eq!(t.genus, 0);
    }

    #[test]
    fn octahedron_counts() {
        let m = octahedron();
        let t = m.topology().unwrap();
        assert_eq!((t.num_vertices, t.num_edges, t.num_faces), (6, 12, 8));
        assert_eq!(t.genus, 0);
    }

    #[test]
    fn grid_torus_topology_and_charts() {
        let m = grid_torus_mesh(4, Matrix3::identity(), 2).unwrap();
        let t = m.topology().unwrap();
        assert_eq!(t.num_vertices, 16);
        assert_eq!(t.euler_characteristic, 0);
        assert_eq!(t.genus, 1);
        // every lifted face stays well inside the injectivity radius
        for f in 0..m.num_faces() {
            let [a, b, c] = ambient::lift_face(&m.ambient, &m, f).unwrap();
            for (p, q) in [(a, b), (b, c), (c, a)] {
                assert!((p - q).norm() < 0.5);
            }
        }
    }

    #[test]
    fn open_surface_rejected() {
        let vertices = vec![
            vec4_from3(0.0, 0.0, 0.0),
            vec4_from3(1.0, 0.0, 0.0),
            vec4_from3(0.0, 1.0, 0.0),
        ];
        let err = Mesh::build(AmbientSpace::Euclidean3, vertices, vec![[0, 1, 2]], None)
            .unwrap_err();
        match err {
            MeshError::Invalid { violations } => {
                assert!(violations.iter().any(|v| v.contains("open boundary")));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn inconsistent_orientation_rejected() {
        // tetrahedron with one face wound backwards
        let vertices = vec![
            vec4_from3(1.0, 1.0, 1.0),
            vec4_from3(1.0, -1.0, -1.0),
            vec4_from3(-1.0, 1.0, -1.0),
            vec4_from3(-1.0, -1.0, 1.0),
        ];
        let faces = vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 2, 3]];
        let err = Mesh::build(AmbientSpace::Euclidean3, vertices, faces, None).unwrap_err();
        match err {
            MeshError::Invalid { violations } => {
                assert!(violations
                    .iter()
                    .any(|v| v.contains("same direction") || v.contains("open boundary")));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn duplicated_face_rejected() {
        let vertices = vec![
            vec4_from3(1.0, 1.0, 1.0),
            vec4_from3(1.0, -1.0, -1.0),
            vec4_from3(-1.0, 1.0, -1.0),
            vec4_from3(-1.0, -1.0, 1.0),
        ];
        let faces = vec![[0, 1, 2], [0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]];
        let err = Mesh::build(AmbientSpace::Euclidean3, vertices, faces, None).unwrap_err();
        match err {
            MeshError::Invalid { violations } => {
                assert!(violations.iter().any(|v| v.contains("same direction")
                    || v.contains("non-manifold")));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn degenerate_face_rejected() {
        // square split into two triangles, one collapsed to a segment
        let vertices = vec![
            vec4_from3(0.0, 0.0, 0.0),
            vec4_from3(1.0, 0.0, 0.0),
            vec4_from3(2.0, 0.0, 0.0),
            vec4_from3(1.0, 1.0, 0.0),
        ];
        // faces around a collinear triple: 0-1-2 is degenerate
        let faces = vec![[0, 1, 2], [0, 2, 3], [0, 3, 1], [1, 3, 2]];
        let err = Mesh::build(AmbientSpace::Euclidean3, vertices, faces, None).unwrap_err();
        match err {
            MeshError::Invalid { violations } => {
                assert!(violations.iter().any(|v| v.contains("degenerate")));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn sphere_vertices_must_be_unit() {
        let vertices = vec![
            Vector4::new(1.0, 0.0, 0.0, 0.0),
            Vector4::new(0.0, 1.1, 0.0, 0.0),
            Vector4::new(0.0, 0.0, 1.0, 0.0),
            Vector4::new(0.0, 0.0, 0.0, 1.0),
        ];
        let faces = vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]];
        let err = Mesh::build(AmbientSpace::Sphere3, vertices, faces, None).unwrap_err();
        match err {
            MeshError::Invalid { violations } => {
                assert!(violations.iter().any(|v| v.contains("off the unit sphere")));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn two_tetrahedra_sharing_a_vertex_rejected() {
        let mut vertices = vec![
            vec4_from3(1.0, 1.0, 1.0),
            vec4_from3(1.0, -1.0, -1.0),
            vec4_from3(-1.0, 1.0, -1.0),
            vec4_from3(-1.0, -1.0, 1.0),
        ];
        for p in [
            vec4_from3(-3.0, -3.0, 1.0),
            vec4_from3(-3.0, -1.0, -1.0),
            vec4_from3(-1.0, -3.0, -1.0),
        ] {
            vertices.push(p);
        }
        // second tetrahedron reuses vertex 3
        let faces = vec![
            [0, 1, 2],
            [0, 3, 1],
            [0, 2, 3],
            [1, 3, 2],
            [3, 4, 5],
            [3, 6, 4],
            [3, 5, 6],
            [4, 6, 5],
        ];
        let err = Mesh::build(AmbientSpace::Euclidean3, vertices, faces, None).unwrap_err();
        match err {
            MeshError::Invalid { violations } => {
                assert!(violations.iter().any(|v| v.contains("non-manifold")));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn topology_invariant_under_relabeling() {
        let m = octahedron();
        let perm = [3usize, 5, 0, 2, 4, 1];
        let mut vertices = vec![Vector4::zeros(); 6];
        for (old, p) in m.vertices.iter().enumerate() {
            vertices[perm[old]] = *p;
        }
        let faces: Vec<[usize; 3]> = m
            .faces
            .iter()
            .map(|t| [perm[t[0]], perm[t[1]], perm[t[2]]])
            .collect();
        let m2 = Mesh::build(AmbientSpace::Euclidean3, vertices, faces, None).unwrap();
        let (t1, t2) = (m.topology().unwrap(), m2.topology().unwrap());
        assert_eq!(t1.euler_characteristic, t2.euler_characteristic);
        assert_eq!(t1.genus, t2.genus);
        assert_eq!(t1.num_edges, t2.num_edges);
    }

    #[test]
    fn shifts_on_euclidean_ambient_rejected() {
        let vertices = vec![
            vec4_from3(1.0, 1.0, 1.0),
            vec4_from3(1.0, -1.0, -1.0),
            vec4_from3(-1.0, 1.0, -1.0),
            vec4_from3(-1.0, -1.0, 1.0),
        ];
        let faces = vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]];
        let mut shifts = vec![[0i32; 3]; 12];
        shifts[0] = [1, 0, 0];
        let err =
            Mesh::build(AmbientSpace::Euclidean3, vertices, faces, Some(shifts)).unwrap_err();
        match err {
            MeshError::Invalid { violations } => {
                assert!(violations.iter().any(|v| v.contains("ambient is euclidean3")));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    fn temp_path(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("surfstab-mesh-tests-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn off_round_trip_is_bit_exact() {
        let m = grid_torus_mesh(5, Matrix3::identity(), 2).unwrap();
        let path = temp_path("grid5.off");
        write_mesh(&m, &path).unwrap();
        let back = load_mesh(&path, AmbientTag::FlatTorus3).unwrap();
        assert_eq!(m.vertices, back.vertices);
        assert_eq!(m.faces, back.faces);
        for h in 0..3 * m.num_faces() {
            assert_eq!(m.halfedge_shift(h), back.halfedge_shift(h));
        }
        // and once more through the auto loader
        let auto = load_mesh_auto(&path).unwrap();
        assert_eq!(m.vertices, auto.vertices);
    }

    #[test]
    fn off_round_trip_sphere_coordinates() {
        let s = 0.5f64.sqrt();
        let vertices = vec![
            Vector4::new(s, s, 0.0, 0.0),
            Vector4::new(-s, s, 0.0, 0.0),
            Vector4::new(0.0, 0.0, s, s),
            Vector4::new(0.0, 0.0, -s, s),
        ];
        let faces = vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]];
        let m = Mesh::build(AmbientSpace::Sphere3, vertices, faces, None).unwrap();
        let path = temp_path("quat_tet.off");
        write_mesh(&m, &path).unwrap();
        let back = load_mesh(&path, AmbientTag::Sphere3).unwrap();
        assert_eq!(m.vertices, back.vertices);
    }

    #[test]
    fn ambient_mismatch_detected() {
        let m = tetrahedron();
        let path = temp_path("tet.off");
        write_mesh(&m, &path).unwrap();
        assert!(matches!(
            load_mesh(&path, AmbientTag::Sphere3),
            Err(MeshError::AmbientMismatch { .. })
        ));
    }

    #[test]
    fn obj_files_load() {
        let path = temp_path("tet.obj");
        let text = "# ambient euclidean3\nv 1 1 1\nv 1 -1 -1\nv -1 1 -1\nv -1 -1 1\nf 1 2 3\nf 1 4 2\nf 1 3 4\nf 2 4 3\n";
        std::fs::write(&path, text).unwrap();
        let m = load_mesh_auto(&path).unwrap();
        assert_eq!(m.num_vertices(), 4);
        assert_eq!(m.num_faces(), 4);
        let t = m.topology().unwrap();
        assert_eq!(t.genus, 0);
    }

    #[test]
    fn obj_with_slash_indices() {
        let path = temp_path("tet_slash.obj");
        let text = "v 1 1 1\nv 1 -1 -1\nv -1 1 -1\nv -1 -1 1\nf 1/1 2/2 3/3\nf 1/1 4/4 2/2\nf 1/1 3/3 4/4\nf 2/2 4/4 3/3\n";
        std::fs::write(&path, text).unwrap();
        let m = load_mesh(&path, AmbientTag::Euclidean3).unwrap();
        assert_eq!(m.num_faces(), 4);
    }

    #[test]
    fn halfedge_navigation_is_consistent() {
        let m = octahedron();
        for h in 0..3 * m.num_faces() {
            let t = m.twin(h);
            assert_eq!(m.twin(t), h);
            assert_eq!(m.from(h), m.to(t));
            assert_eq!(m.to(h), m.from(t));
            assert_ne!(m.halfedge_sign(h), m.halfedge_sign(t));
            assert_eq!(m.edge_of(h), m.edge_of(t));
        }
        for e in 0..m.num_edges() {
            let (u, v) = m.edge_vertices(e);
            assert_ne!(u, v);
        }
    }
}
