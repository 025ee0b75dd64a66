//! Random triangle soups and test scenes.

use std::collections::HashMap;

use rand::Rng;

use crate::geom::{closest_point_triangle, closest_points_segments};
use crate::mesh::TriMesh;
use crate::Vec3;

/// Unsigned distance between two triangles (exact for disjoint ones: the
/// minimum over the 6 vertex-face and 9 edge-edge distances).
pub fn triangle_distance(a: [Vec3; 3], b: [Vec3; 3]) -> f64 {
    let mut d = f64::INFINITY;
    for (p, t) in [(a, b), (b, a)] {
        for q in p {
            if let Ok(r) = closest_point_triangle(q, t) {
                d = d.min(r.distance);
            }
        }
    }
    for i in 0..3 {
        for j in 0..3 {
            if let Ok(r) = closest_points_segments([a[i], a[(i + 1) % 3]], [b[j], b[(j + 1) % 3]]) {
                d = d.min(r.distance);
            }
        }
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoupParams {
    pub n_tris: usize,
    /// Side of the cube the triangle centres are drawn from.
    pub extent: f64,
    /// Triangle vertices lie within `tri_size / 2` of the centre.
    pub tri_size: f64,
    /// Minimum distance between any two triangles.
    pub margin: f64,
    pub max_attempts: usize,
}

fn random_in_ball(rng: &mut impl Rng, r: f64) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if v.norm_squared() <= 1.0 {
            return v * r;
        }
    }
}

pub fn random_unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = random_in_ball(rng, 1.0);
        let n = v.norm();
        if n > 1e-3 {
            return v / n;
        }
    }
}

/// Disjoint triangles by rejection sampling; each triangle is its own
/// object. Stops early (with fewer triangles) after `max_attempts`.
pub fn random_soup(rng: &mut impl Rng, p: &SoupParams) -> TriMesh {
    let cell = p.tri_size + p.margin;
    let mut grid: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    let mut tris: Vec<[Vec3; 3]> = Vec::with_capacity(p.n_tris);
    let key = |c: &Vec3| [(c.x / cell).floor() as i64, (c.y / cell).floor() as i64, (c.z / cell).floor() as i64];
    let mut attempts = 0;
    while tris.len() < p.n_tris && attempts < p.max_attempts {
        attempts += 1;
        let c = Vec3::new(rng.gen_range(0.0..p.extent), rng.gen_range(0.0..p.extent), rng.gen_range(0.0..p.extent));
        let t = [0, 1, 2].map(|_| c + random_in_ball(rng, 0.5 * p.tri_size));
        if 0.5 * (t[1] - t[0]).cross(&(t[2] - t[0])).norm() < 0.02 * p.tri_size * p.tri_size {
            continue;
        }
        let k = key(&c);
        let mut ok = true;
        'scan: for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(list) = grid.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        for &j in list {
                            if triangle_distance(t, tris[j]) < p.margin {
                                ok = false;
                                break 'scan;
                            }
                        }
                    }
                }
            }
        }
        if ok {
            grid.entry(k).or_default().push(tris.len());
            tris.push(t);
        }
    }
    let positions: Vec<Vec3> = tris.iter().flatten().copied().collect();
    let triangles = (0..tris.len()).map(|i| [3 * i, 3 * i + 1, 3 * i + 2]).collect();
    let object_ids = (0..positions.len()).map(|v| (v / 3) as u32).collect();
    TriMesh::new(positions, triangles, vec![], object_ids).expect("generated soup is valid")
}

/// Smallest distance between distinct triangles (brute force).
pub fn min_triangle_gap(mesh: &TriMesh) -> f64 {
    let tri = |i: usize| mesh.triangles[i].map(|k| mesh.positions[k]);
    let mut d = f64::INFINITY;
    for i in 0..mesh.triangles.len() {
        for j in i + 1..mesh.triangles.len() {
            if mesh.triangles[i].iter().any(|v| mesh.triangles[j].contains(v)) {
                continue;
            }
            d = d.min(triangle_distance(tri(i), tri(j)));
        }
    }
    d
}

/// A random intersection-free soup of `n_tris` triangles packed densely in
/// a unit box, plus its minimum gap.
pub fn random_scene(rng: &mut impl Rng, n_tris: usize) -> (TriMesh, f64) {
    let extent = (n_tris as f64).cbrt() * 0.25;
    let margin = rng.gen_range(1e-3..2e-2);
    let mesh = random_soup(rng, &SoupParams { n_tris, extent, tri_size: 0.3, margin, max_attempts: 200 * n_tris });
    let gap = min_triangle_gap(&mesh);
    (mesh, gap)
}

/// Per-vertex random displacements of length up to `max_len`.
pub fn random_deltas(rng: &mut impl Rng, n: usize, max_len: f64) -> Vec<Vec3> {
    (0..n).map(|_| random_in_ball(rng, max_len)).collect()
}
