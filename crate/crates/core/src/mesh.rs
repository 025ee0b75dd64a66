//! Triangle meshes (optionally with tetrahedra), adjacency and OBJ I/O.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::Vec3;

/// Triangles with area at or below this are rejected.
pub const AREA_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("degenerate triangles (area <= {AREA_EPS:e}): faces {faces:?}")]
    DegenerateTriangles { faces: Vec<usize> },
    #[error("{what} {index} references vertex {vertex}, but the mesh has {n_vertices} vertices")]
    IndexOutOfRange { what: &'static str, index: usize, vertex: usize, n_vertices: usize },
    #[error("tetrahedra with non-positive rest volume: {tets:?}")]
    InvertedTets { tets: Vec<usize> },
    #[error("expected {expected} entries, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Surface triangles plus optional tetrahedra. Edges are derived from the
/// triangles, sorted, each undirected edge stored once as `[lo, hi]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub positions: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub edges: Vec<[usize; 2]>,
    pub tets: Vec<[usize; 4]>,
    /// Owning object of every vertex.
    pub object_ids: Vec<u32>,
}

impl TriMesh {
    /// Validates indices, triangle areas and tet orientation, derives edges.
    /// `object_ids` may be empty, meaning every vertex belongs to object 0.
    pub fn new(
        positions: Vec<Vec3>,
        triangles: Vec<[usize; 3]>,
        tets: Vec<[usize; 4]>,
        object_ids: Vec<u32>,
    ) -> Result<Self, MeshError> {
        let n = positions.len();
        let object_ids = if object_ids.is_empty() { vec![0; n] } else { object_ids };
        if object_ids.len() != n {
            return Err(MeshError::CountMismatch { expected: n, got: object_ids.len() });
        }
        for (i, t) in triangles.iter().enumerate() {
            if let Some(&v) = t.iter().find(|&&v| v >= n) {
                return Err(MeshError::IndexOutOfRange { what: "triangle", index: i, vertex: v, n_vertices: n });
            }
        }
        for (i, t) in tets.iter().enumerate() {
            if let Some(&v) = t.iter().find(|&&v| v >= n) {
                return Err(MeshError::IndexOutOfRange { what: "tet", index: i, vertex: v, n_vertices: n });
            }
        }
        let degenerate: Vec<usize> = triangles
            .iter()
            .enumerate()
            .filter(|(_, t)| triangle_area(&positions, **t) <= AREA_EPS)
            .map(|(i, _)| i)
            .collect();
        if !degenerate.is_empty() {
            return Err(MeshError::DegenerateTriangles { faces: degenerate });
        }
        let inverted: Vec<usize> = tets
            .iter()
            .enumerate()
            .filter(|(_, t)| !(tet_signed_volume(&positions, **t) > 0.0))
            .map(|(i, _)| i)
            .collect();
        if !inverted.is_empty() {
            return Err(MeshError::InvertedTets { tets: inverted });
        }
        let edges = derive_edges(&triangles);
        Ok(TriMesh { positions, triangles, edges, tets, object_ids })
    }

    pub fn n_vertices(&self) -> usize {
        self.positions.len()
    }

    /// True for vertices that can take part in contact: those on some
    /// triangle, plus isolated vertices that are not buried inside tets.
    pub fn contact_vertex_mask(&self) -> Vec<bool> {
        let mut on_tri = vec![false; self.n_vertices()];
        for t in &self.triangles {
            for &v in t {
                on_tri[v] = true;
            }
        }
        let mut in_tet = vec![false; self.n_vertices()];
        for t in &self.tets {
            for &v in t {
                in_tet[v] = true;
            }
        }
        on_tri.iter().zip(&in_tet).map(|(&s, &b)| s || !b).collect()
    }

    /// Concatenates meshes, offsetting indices. Object ids are kept.
    pub fn merge(parts: &[TriMesh]) -> Result<TriMesh, MeshError> {
        let mut positions = Vec::new();
        let mut triangles = Vec::new();
        let mut tets = Vec::new();
        let mut object_ids = Vec::new();
        for m in parts {
            let off = positions.len();
            positions.extend_from_slice(&m.positions);
            object_ids.extend_from_slice(&m.object_ids);
            triangles.extend(m.triangles.iter().map(|t| t.map(|v| v + off)));
            tets.extend(m.tets.iter().map(|t| t.map(|v| v + off)));
        }
        TriMesh::new(positions, triangles, tets, object_ids)
    }
}

fn derive_edges(triangles: &[[usize; 3]]) -> Vec<[usize; 2]> {
    let mut set = BTreeSet::new();
    for t in triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            set.insert([a.min(b), a.max(b)]);
        }
    }
    set.into_iter().collect()
}

pub fn triangle_area(positions: &[Vec3], t: [usize; 3]) -> f64 {
    let [a, b, c] = t.map(|i| positions[i]);
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Six times the signed volume is avoided on purpose: callers compare signs
/// and magnitudes against rest volumes, so the true volume is less confusing.
pub fn tet_signed_volume(positions: &[Vec3], t: [usize; 4]) -> f64 {
    let [a, b, c, d] = t.map(|i| positions[i]);
    signed_volume(a, b, c, d)
}

pub fn signed_volume(a: Vec3, b: Vec3, c: Vec3, d: Vec3) -> f64 {
    (b - a).dot(&(c - a).cross(&(d - a))) / 6.0
}

/// One-ring sets per vertex. Lists are sorted ascending.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Adjacency {
    pub vertex_triangles: Vec<Vec<usize>>,
    pub vertex_edges: Vec<Vec<usize>>,
}

impl Adjacency {
    pub fn build(mesh: &TriMesh) -> Self {
        let n = mesh.n_vertices();
        let mut vertex_triangles = vec![Vec::new(); n];
        let mut vertex_edges = vec![Vec::new(); n];
        for (i, t) in mesh.triangles.iter().enumerate() {
            for &v in t {
                vertex_triangles[v].push(i);
            }
        }
        for (i, e) in mesh.edges.iter().enumerate() {
            for &v in e {
                vertex_edges[v].push(i);
            }
        }
        Adjacency { vertex_triangles, vertex_edges }
    }
}

pub fn build_adjacency(mesh: &TriMesh) -> Adjacency {
    Adjacency::build(mesh)
}

/// A pair of primitives expressed directly through vertex indices. Used for
/// contact pairs as well as for the intra-tet inversion pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PrimPair {
    VertexTriangle { v: usize, tri: [usize; 3] },
    EdgeEdge { a: [usize; 2], b: [usize; 2] },
}

impl PrimPair {
    pub fn vertices(&self) -> [usize; 4] {
        match *self {
            PrimPair::VertexTriangle { v, tri } => [v, tri[0], tri[1], tri[2]],
            PrimPair::EdgeEdge { a, b } => [a[0], a[1], b[0], b[1]],
        }
    }
}

/// For each tet: the four (vertex, opposite face) pairs followed by the three
/// pairs of opposite edges. A tet can only flatten if one of these collides.
pub fn tet_inversion_pairs(tets: &[[usize; 4]]) -> Vec<PrimPair> {
    let mut out = Vec::with_capacity(tets.len() * 7);
    for t in tets {
        // Faces listed so that the vertex sits on the positive side for a
        // positively oriented tet; orientation is irrelevant downstream.
        out.push(PrimPair::VertexTriangle { v: t[0], tri: [t[1], t[3], t[2]] });
        out.push(PrimPair::VertexTriangle { v: t[1], tri: [t[0], t[2], t[3]] });
        out.push(PrimPair::VertexTriangle { v: t[2], tri: [t[0], t[3], t[1]] });
        out.push(PrimPair::VertexTriangle { v: t[3], tri: [t[0], t[1], t[2]] });
        out.push(PrimPair::EdgeEdge { a: [t[0], t[1]], b: [t[2], t[3]] });
        out.push(PrimPair::EdgeEdge { a: [t[0], t[2]], b: [t[1], t[3]] });
        out.push(PrimPair::EdgeEdge { a: [t[0], t[3]], b: [t[1], t[2]] });
    }
    out
}

/// Boundary faces of a tet mesh (faces used by exactly one tet), oriented
/// outward for positively oriented tets, in a deterministic order.
pub fn tet_boundary(tets: &[[usize; 4]]) -> Vec<[usize; 3]> {
    use std::collections::BTreeMap;
    let mut faces: BTreeMap<[usize; 3], (usize, [usize; 3])> = BTreeMap::new();
    for t in tets {
        let fs = [[t[1], t[2], t[3]], [t[0], t[3], t[2]], [t[0], t[1], t[3]], [t[0], t[2], t[1]]];
        for f in fs {
            let mut key = f;
            key.sort_unstable();
            faces.entry(key).and_modify(|e| e.0 += 1).or_insert((1, f));
        }
    }
    faces.into_values().filter(|(c, _)| *c == 1).map(|(_, f)| f).collect()
}

// ---------------------------------------------------------------- OBJ I/O

pub fn load_obj(path: &Path) -> Result<TriMesh, MeshError> {
    let text = std::fs::read_to_string(path)?;
    let tets_path = tets_sidecar(path);
    let tets = if tets_path.exists() {
        let t = std::fs::read_to_string(&tets_path)?;
        parse_tets(&t, &tets_path.display().to_string())?
    } else {
        Vec::new()
    };
    let (positions, triangles) = parse_obj(&text, &path.display().to_string())?;
    TriMesh::new(positions, triangles, tets, Vec::new())
}

pub fn tets_sidecar(path: &Path) -> PathBuf {
    path.with_extension("tets")
}

type ObjData = (Vec<Vec3>, Vec<[usize; 3]>);

pub fn parse_obj(text: &str, name: &str) -> Result<ObjData, MeshError> {
    let err = |line: usize, msg: String| MeshError::Parse { path: name.to_string(), line, msg };
    let mut positions = Vec::new();
    let mut triangles = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        let mut it = body.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut c = [0.0; 3];
                for slot in &mut c {
                    let tok = it.next().ok_or_else(|| err(line, "vertex needs 3 coordinates".into()))?;
                    *slot = tok.parse().map_err(|_| err(line, format!("bad coordinate `{tok}`")))?;
                }
                positions.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<&str> = it.collect();
                if idx.len() != 3 {
                    return Err(err(line, format!("only triangles are supported, got {} indices", idx.len())));
                }
                let mut t = [0usize; 3];
                for (slot, tok) in t.iter_mut().zip(&idx) {
                    // accept `i`, `i/j`, `i//k`; only the position index matters
                    let head = tok.split('/').next().unwrap_or("");
                    let i: usize = head.parse().map_err(|_| err(line, format!("bad face index `{tok}`")))?;
                    if i == 0 {
                        return Err(err(line, "face indices are 1-based".into()));
                    }
                    *slot = i - 1;
                }
                triangles.push(t);
            }
            // normals, texture coordinates, groups etc. are ignored
            _ => {}
        }
    }
    Ok((positions, triangles))
}

pub fn parse_tets(text: &str, name: &str) -> Result<Vec<[usize; 4]>, MeshError> {
    let mut tets = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let body = raw.split('#').next().unwrap_or("").trim();
        let mut it = body.split_whitespace();
        match it.next() {
            Some("t") => {
                let mut t = [0usize; 4];
                for slot in &mut t {
                    let i: usize =
                        it.next().and_then(|s| s.parse().ok()).filter(|&i| i > 0).ok_or_else(|| MeshError::Parse {
                            path: name.to_string(),
                            line: ln + 1,
                            msg: "tet needs 4 positive 1-based indices".into(),
                        })?;
                    *slot = i - 1;
                }
                tets.push(t);
            }
            None => {}
            Some(other) => {
                return Err(MeshError::Parse {
                    path: name.to_string(),
                    line: ln + 1,
                    msg: format!("unknown record `{other}`"),
                })
            }
        }
    }
    Ok(tets)
}

/// Formats an OBJ with the given positions; `{:e}` prints the shortest
/// representation that round-trips exactly.
pub fn format_obj(mesh: &TriMesh, positions: &[Vec3]) -> Result<String, MeshError> {
    if positions.len() != mesh.n_vertices() {
        return Err(MeshError::CountMismatch { expected: mesh.n_vertices(), got: positions.len() });
    }
    let mut s = String::with_capacity(positions.len() * 80 + mesh.triangles.len() * 24);
    for p in positions {
        let _ = writeln!(s, "v {:e} {:e} {:e}", p.x, p.y, p.z);
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    Ok(s)
}

pub fn write_obj_frame(mesh: &TriMesh, positions: &[Vec3], path: &Path) -> Result<(), MeshError> {
    let s = format_obj(mesh, positions)?;
    std::fs::write(path, s)?;
    if !mesh.tets.is_empty() {
        let mut t = String::new();
        for tet in &mesh.tets {
            let _ = writeln!(t, "t {} {} {} {}", tet[0] + 1, tet[1] + 1, tet[2] + 1, tet[3] + 1);
        }
        std::fs::write(tets_sidecar(path), t)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri_mesh() -> TriMesh {
        TriMesh::new(
            vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
            vec![],
            vec![],
        )
        .unwrap()
    }

    fn tet_surface() -> TriMesh {
        let p = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ];
        let tets = vec![[0, 1, 2, 3]];
        let tris = tet_boundary(&tets);
        TriMesh::new(p, tris, tets, vec![]).unwrap()
    }

    #[test]
    fn single_triangle_obj() {
        let (p, t) = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n", "x").unwrap();
        let m = TriMesh::new(p, t, vec![], vec![]).unwrap();
        assert_eq!((m.n_vertices(), m.edges.len(), m.triangles.len()), (3, 3, 1));
    }

    #[test]
    fn shared_edge_is_deduplicated() {
        let src = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3\nf 2 4 3\n";
        let (p, t) = parse_obj(src, "x").unwrap();
        let m = TriMesh::new(p, t, vec![], vec![]).unwrap();
        assert_eq!((m.n_vertices(), m.edges.len(), m.triangles.len()), (4, 5, 2));
    }

    #[test]
    fn repeated_index_is_degenerate() {
        let (p, t) = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 1 2\n", "x").unwrap();
        match TriMesh::new(p, t, vec![], vec![]) {
            Err(MeshError::DegenerateTriangles { faces }) => assert_eq!(faces, vec![0]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_error_has_line_number() {
        match parse_obj("v 0 0 0\nv 1 x 0\n", "bad.obj") {
            Err(MeshError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn adjacency_single_triangle() {
        let a = build_adjacency(&tri_mesh());
        for v in 0..3 {
            assert_eq!(a.vertex_triangles[v].len(), 1);
            assert_eq!(a.vertex_edges[v].len(), 2);
        }
    }

    #[test]
    fn adjacency_fan() {
        let k = 7;
        let mut p = vec![Vec3::zeros()];
        for i in 0..k {
            let a = i as f64 / k as f64 * std::f64::consts::TAU;
            p.push(Vec3::new(a.cos(), a.sin(), 0.0));
        }
        let tris = (0..k).map(|i| [0, 1 + i, 1 + (i + 1) % k]).collect();
        let m = TriMesh::new(p, tris, vec![], vec![]).unwrap();
        let a = build_adjacency(&m);
        assert_eq!(a.vertex_triangles[0].len(), k);
        assert_eq!(a.vertex_edges[0].len(), k);
    }

    #[test]
    fn adjacency_tet_surface() {
        let m = tet_surface();
        assert_eq!(m.triangles.len(), 4);
        assert_eq!(m.edges.len(), 6);
        let a = build_adjacency(&m);
        for v in 0..4 {
            assert_eq!(a.vertex_triangles[v].len(), 3);
            assert_eq!(a.vertex_edges[v].len(), 3);
        }
        // membership is symmetric with the index lists
        for (v, ts) in a.vertex_triangles.iter().enumerate() {
            for &t in ts {
                assert!(m.triangles[t].contains(&v));
            }
        }
    }

    #[test]
    fn tet_boundary_is_outward() {
        let m = tet_surface();
        let c = m.positions.iter().sum::<Vec3>() / 4.0;
        for t in &m.triangles {
            let [a, b, d] = t.map(|i| m.positions[i]);
            let n = (b - a).cross(&(d - a));
            assert!(n.dot(&(a - c)) > 0.0);
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.obj");
        let m = tri_mesh();
        let pos = vec![
            Vec3::new(0.1, 1.0 / 3.0, -2.0e-17),
            Vec3::new(std::f64::consts::PI, 1e300, -0.0),
            Vec3::new(5e-324, 0.7, 123456.789),
        ];
        write_obj_frame(&m, &pos, &path).unwrap();
        let (p2, _) = parse_obj(&std::fs::read_to_string(&path).unwrap(), "t").unwrap();
        for (a, b) in pos.iter().zip(&p2) {
            for k in 0..3 {
                assert_eq!(a[k].to_bits(), b[k].to_bits());
            }
        }
    }

    #[test]
    fn tets_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tet.obj");
        let m = tet_surface();
        write_obj_frame(&m, &m.positions, &path).unwrap();
        let back = load_obj(&path).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn empty_mesh_writes_empty_obj() {
        let m = TriMesh::default();
        assert_eq!(format_obj(&m, &[]).unwrap(), "");
        let (p, t) = parse_obj("", "e").unwrap();
        assert!(p.is_empty() && t.is_empty());
    }

    #[test]
    fn position_count_mismatch() {
        assert!(matches!(
            format_obj(&tri_mesh(), &[Vec3::zeros()]),
            Err(MeshError::CountMismatch { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn inversion_pairs_per_tet() {
        let pairs = tet_inversion_pairs(&[[0, 1, 2, 3]]);
        assert_eq!(pairs.len(), 7);
        for p in &pairs {
            let mut v = p.vertices();
            v.sort_unstable();
            assert_eq!(v, [0, 1, 2, 3]);
        }
    }
}
