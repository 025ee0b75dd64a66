//! BVH broadphase, contact-set queries and nearest-primitive distances.

use rayon::prelude::*;

use crate::geom::{closest_point_triangle, closest_points_segments, Interval3};
use crate::mesh::TriMesh;
use crate::Vec3;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
enum Node {
    Leaf { bbox: Interval3, start: usize, count: usize },
    Inner { bbox: Interval3, left: usize, right: usize },
}

impl Node {
    fn bbox(&self) -> &Interval3 {
        match self {
            Node::Leaf { bbox, .. } | Node::Inner { bbox, .. } => bbox,
        }
    }
}

/// Median-split bounding volume hierarchy over arbitrary primitive boxes.
#[derive(Debug, Clone, Default)]
pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
    boxes: Vec<Interval3>,
}

impl Bvh {
    /// Builds over the given primitive boxes; primitive `i` is `boxes[i]`.
    pub fn build(boxes: Vec<Interval3>) -> Self {
        let mut bvh = Bvh { nodes: Vec::new(), order: (0..boxes.len()).collect(), boxes };
        if !bvh.boxes.is_empty() {
            let n = bvh.order.len();
            bvh.build_node(0, n);
        }
        bvh
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let bbox = self.order[start..end].iter().fold(Interval3::empty(), |b, &i| b.union(&self.boxes[i]));
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { bbox, start, count: end - start });
            return id;
        }
        let mut cb = Interval3::empty();
        for &i in &self.order[start..end] {
            cb.expand_point(self.boxes[i].center());
        }
        let ext = cb.upper - cb.lower;
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let boxes = &self.boxes;
        self.order[start..end]
            .sort_by(|&a, &b| boxes[a].center()[axis].total_cmp(&boxes[b].center()[axis]).then(a.cmp(&b)));
        let mid = (start + end) / 2;
        self.nodes.push(Node::Leaf { bbox, start: 0, count: 0 }); // placeholder
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[id] = Node::Inner { bbox, left, right };
        id
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn root_box(&self) -> Option<Interval3> {
        self.nodes.first().map(|n| *n.bbox())
    }

    pub fn primitive_box(&self, i: usize) -> &Interval3 {
        &self.boxes[i]
    }

    /// Calls `f` for every primitive whose box intersects `query`.
    pub fn query(&self, query: &Interval3, mut f: impl FnMut(usize)) {
        if self.nodes.is_empty() {
            return;
        }
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if !node.bbox().intersects(query) {
                continue;
            }
            match *node {
                Node::Leaf { start, count, .. } => {
                    for &i in &self.order[start..start + count] {
                        if self.boxes[i].intersects(query) {
                            f(i);
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
    }

    /// Checks that every node box contains its children / primitives.
    pub fn check_nesting(&self) -> bool {
        self.nodes.iter().all(|n| match *n {
            Node::Leaf { bbox, start, count } => {
                self.order[start..start + count].iter().all(|&i| bbox.contains_box(&self.boxes[i]))
            }
            Node::Inner { bbox, left, right } => {
                bbox.contains_box(self.nodes[left].bbox()) && bbox.contains_box(self.nodes[right].bbox())
            }
        })
    }
}

/// BVH over the triangles with leaf boxes inflated by `inflate`.
pub fn build_bvh_triangles(mesh: &TriMesh, positions: &[Vec3], inflate: f64) -> Bvh {
    Bvh::build(
        mesh.triangles
            .iter()
            .map(|t| Interval3::from_points(t.iter().map(|&i| &positions[i])).inflate(inflate))
            .collect(),
    )
}

pub fn build_bvh_edges(mesh: &TriMesh, positions: &[Vec3], inflate: f64) -> Bvh {
    Bvh::build(
        mesh.edges.iter().map(|e| Interval3::from_points(e.iter().map(|&i| &positions[i])).inflate(inflate)).collect(),
    )
}

/// Triangle BVH inflated by `r_q / 2`, so two primitives closer than `r_q`
/// always have intersecting boxes once the query box is inflated likewise.
pub fn build_bvh(mesh: &TriMesh, positions: &[Vec3], r_q: f64) -> Bvh {
    build_bvh_triangles(mesh, positions, 0.5 * r_q)
}

/// Vertex-triangle and edge-edge pairs closer than `query_radius`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContactSet {
    pub vt_pairs: Vec<(usize, usize)>,
    /// Edge index pairs with `first < second`.
    pub ee_pairs: Vec<(usize, usize)>,
    pub query_radius: f64,
}

impl ContactSet {
    pub fn len(&self) -> usize {
        self.vt_pairs.len() + self.ee_pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub(crate) fn vt_distance(positions: &[Vec3], v: usize, t: [usize; 3]) -> f64 {
    closest_point_triangle(positions[v], t.map(|i| positions[i])).map(|r| r.distance).unwrap_or(0.0)
}

pub(crate) fn ee_distance(positions: &[Vec3], a: [usize; 2], b: [usize; 2]) -> f64 {
    closest_points_segments(a.map(|i| positions[i]), b.map(|i| positions[i])).map(|r| r.distance).unwrap_or(0.0)
}

fn disjoint(a: &[usize], b: &[usize]) -> bool {
    a.iter().all(|x| !b.contains(x))
}

/// `(a, b, distance)`.
type NearPair = (usize, usize, f64);

/// Candidate pair generation shared by the contact and distance queries:
/// calls back with exact distances below `radius`.
fn near_pairs(mesh: &TriMesh, positions: &[Vec3], radius: f64) -> (Vec<NearPair>, Vec<NearPair>) {
    let half = 0.5 * radius;
    let tri_bvh = build_bvh_triangles(mesh, positions, half);
    let edge_bvh = build_bvh_edges(mesh, positions, half);
    let mask = mesh.contact_vertex_mask();

    let mut vt: Vec<(usize, usize, f64)> = (0..mesh.n_vertices())
        .into_par_iter()
        .filter(|&v| mask[v])
        .flat_map_iter(|v| {
            let q = Interval3::from_point(positions[v]).inflate(half);
            let mut out = Vec::new();
            tri_bvh.query(&q, |t| {
                let tri = mesh.triangles[t];
                if tri.contains(&v) {
                    return;
                }
                let d = vt_distance(positions, v, tri);
                if d < radius {
                    out.push((v, t, d));
                }
            });
            out.into_iter()
        })
        .collect();
    vt.sort_by_key(|a| (a.0, a.1));

    let mut ee: Vec<(usize, usize, f64)> = (0..mesh.edges.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let ei = mesh.edges[i];
            let q = *edge_bvh.primitive_box(i);
            let mut out = Vec::new();
            edge_bvh.query(&q, |j| {
                if j <= i {
                    return;
                }
                let ej = mesh.edges[j];
                if !disjoint(&ei, &ej) {
                    return;
                }
                let d = ee_distance(positions, ei, ej);
                if d < radius {
                    out.push((i, j, d));
                }
            });
            out.into_iter()
        })
        .collect();
    ee.sort_by_key(|a| (a.0, a.1));
    (vt, ee)
}

/// All non-adjacent vertex-triangle and edge-edge pairs at distance `< r_q`,
/// sorted lexicographically.
pub fn query_contact_set(mesh: &TriMesh, positions: &[Vec3], r_q: f64) -> ContactSet {
    let (vt, ee) = near_pairs(mesh, positions, r_q);
    ContactSet {
        vt_pairs: vt.into_iter().map(|(a, b, _)| (a, b)).collect(),
        ee_pairs: ee.into_iter().map(|(a, b, _)| (a, b)).collect(),
        query_radius: r_q,
    }
}

/// Per-primitive distance to the nearest non-adjacent opposing primitive.
#[derive(Debug, Clone, PartialEq)]
pub struct MinDistances {
    pub vertex: Vec<f64>,
    pub triangle: Vec<f64>,
    pub edge: Vec<f64>,
}

/// Exact nearest distances among pairs closer than `search_bound`;
/// everything farther is reported as `+∞`.
pub fn min_distance_per_primitive(mesh: &TriMesh, positions: &[Vec3], search_bound: f64) -> MinDistances {
    let mut out = MinDistances {
        vertex: vec![f64::INFINITY; mesh.n_vertices()],
        triangle: vec![f64::INFINITY; mesh.triangles.len()],
        edge: vec![f64::INFINITY; mesh.edges.len()],
    };
    let (vt, ee) = near_pairs(mesh, positions, search_bound);
    for (v, t, d) in vt {
        out.vertex[v] = out.vertex[v].min(d);
        out.triangle[t] = out.triangle[t].min(d);
    }
    for (i, j, d) in ee {
        out.edge[i] = out.edge[i].min(d);
        out.edge[j] = out.edge[j].min(d);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    fn two_parallel(gap: f64) -> TriMesh {
        TriMesh::new(
            vec![
                v(0.0, 0.0, 0.0),
                v(1.0, 0.0, 0.0),
                v(0.0, 1.0, 0.0),
                v(0.0, 0.0, gap),
                v(1.0, 0.0, gap),
                v(0.0, 1.0, gap),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
            vec![],
            vec![0, 0, 0, 1, 1, 1],
        )
        .unwrap()
    }

    pub(crate) fn soup(n: usize, seed: u64) -> TriMesh {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Vec::new();
        let mut t = Vec::new();
        while t.len() < n {
            let c = v(rng.gen(), rng.gen(), rng.gen());
            let a = c + v(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5) * 0.2;
            let b = c + v(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5) * 0.2;
            let d = c + v(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5) * 0.2;
            if (b - a).cross(&(d - a)).norm() < 1e-3 {
                continue;
            }
            let o = p.len();
            p.extend([a, b, d]);
            t.push([o, o + 1, o + 2]);
        }
        TriMesh::new(p, t, vec![], vec![]).unwrap()
    }

    fn brute_contacts(m: &TriMesh, r: f64) -> ContactSet {
        let p = &m.positions;
        let mut vt = Vec::new();
        for vi in 0..m.n_vertices() {
            for (ti, t) in m.triangles.iter().enumerate() {
                if !t.contains(&vi) && vt_distance(p, vi, *t) < r {
                    vt.push((vi, ti));
                }
            }
        }
        let mut ee = Vec::new();
        for i in 0..m.edges.len() {
            for j in i + 1..m.edges.len() {
                if disjoint(&m.edges[i], &m.edges[j]) && ee_distance(p, m.edges[i], m.edges[j]) < r {
                    ee.push((i, j));
                }
            }
        }
        ContactSet { vt_pairs: vt, ee_pairs: ee, query_radius: r }
    }

    #[test]
    fn single_triangle_single_leaf() {
        let m =
            TriMesh::new(vec![v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(0.0, 1.0, 0.0)], vec![[0, 1, 2]], vec![], vec![])
                .unwrap();
        let b = build_bvh(&m, &m.positions, 0.1);
        assert_eq!(b.nodes.len(), 1);
        assert!(matches!(b.nodes[0], Node::Leaf { count: 1, .. }));
    }

    #[test]
    fn far_triangles_root_is_union() {
        let m = TriMesh::new(
            vec![
                v(0.0, 0.0, 0.0),
                v(1.0, 0.0, 0.0),
                v(0.0, 1.0, 0.0),
                v(10.0, 0.0, 0.0),
                v(11.0, 0.0, 0.0),
                v(10.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [3, 4, 5]],
            vec![],
            vec![],
        )
        .unwrap();
        let b = build_bvh(&m, &m.positions, 0.0);
        let root = b.root_box().unwrap();
        assert_eq!(root, b.primitive_box(0).union(b.primitive_box(1)));
        assert!(!b.primitive_box(0).intersects(b.primitive_box(1)));
    }

    #[test]
    fn self_query_finds_every_primitive() {
        let m = soup(100, 3);
        let b = build_bvh(&m, &m.positions, 0.0);
        assert!(b.check_nesting());
        for (i, t) in m.triangles.iter().enumerate() {
            let c = t.iter().map(|&k| m.positions[k]).sum::<Vec3>() / 3.0;
            let mut hit = false;
            b.query(&Interval3::from_point(c), |j| hit |= j == i);
            assert!(hit, "triangle {i} not found");
        }
    }

    #[test]
    fn contact_examples() {
        let r = 0.1;
        assert!(query_contact_set(&two_parallel(2.0 * r), &two_parallel(2.0 * r).positions, r).is_empty());
        let m = TriMesh::new(
            vec![v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(0.0, 1.0, 0.0), v(0.2, 0.2, 0.5 * r)],
            vec![[0, 1, 2]],
            vec![],
            vec![],
        )
        .unwrap();
        let c = query_contact_set(&m, &m.positions, r);
        assert_eq!(c.vt_pairs, vec![(3, 0)]);
    }

    #[test]
    fn contacts_match_brute_force() {
        for seed in 0..6 {
            let m = soup(50, seed);
            for r in [0.02, 0.08] {
                let fast = query_contact_set(&m, &m.positions, r);
                assert_eq!(fast, brute_contacts(&m, r), "seed {seed} r {r}");
            }
        }
    }

    #[test]
    fn contacts_independent_of_primitive_order() {
        let m = soup(60, 9);
        let mut tris = m.triangles.clone();
        tris.reverse();
        let rev = TriMesh::new(m.positions.clone(), tris, vec![], vec![]).unwrap();
        let a = query_contact_set(&m, &m.positions, 0.08);
        let b = query_contact_set(&rev, &rev.positions, 0.08);
        let nt = m.triangles.len();
        let mut mapped: Vec<_> = b.vt_pairs.iter().map(|&(v, t)| (v, nt - 1 - t)).collect();
        mapped.sort();
        assert_eq!(a.vt_pairs, mapped);
        // edges are derived in sorted order, so the ee lists agree directly
        assert_eq!(a.ee_pairs, b.ee_pairs);
    }

    #[test]
    fn min_distance_examples() {
        let m = two_parallel(1.0);
        let d = min_distance_per_primitive(&m, &m.positions, 10.0);
        assert!(d.vertex.iter().chain(&d.triangle).chain(&d.edge).all(|&x| (x - 1.0).abs() < 1e-15));
        let single =
            TriMesh::new(vec![v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(0.0, 1.0, 0.0)], vec![[0, 1, 2]], vec![], vec![])
                .unwrap();
        let d = min_distance_per_primitive(&single, &single.positions, 10.0);
        assert!(d.vertex.iter().chain(&d.triangle).chain(&d.edge).all(|x| x.is_infinite()));
    }

    #[test]
    fn min_distance_matches_brute_force() {
        let m = soup(40, 17);
        let p = &m.positions;
        let d = min_distance_per_primitive(&m, p, 1e9);
        let mut bv = vec![f64::INFINITY; m.n_vertices()];
        let mut bt = vec![f64::INFINITY; m.triangles.len()];
        let mut be = vec![f64::INFINITY; m.edges.len()];
        for (vi, bvi) in bv.iter_mut().enumerate() {
            for (ti, t) in m.triangles.iter().enumerate() {
                if !t.contains(&vi) {
                    let x = vt_distance(p, vi, *t);
                    *bvi = bvi.min(x);
                    bt[ti] = bt[ti].min(x);
                }
            }
        }
        for i in 0..m.edges.len() {
            for j in i + 1..m.edges.len() {
                if disjoint(&m.edges[i], &m.edges[j]) {
                    let x = ee_distance(p, m.edges[i], m.edges[j]);
                    be[i] = be[i].min(x);
                    be[j] = be[j].min(x);
                }
            }
        }
        assert_eq!(d.vertex, bv);
        assert_eq!(d.triangle, bt);
        assert_eq!(d.edge, be);
    }

    #[test]
    fn min_distance_parallel_matches_serial_pool() {
        let m = soup(80, 5);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let serial = pool.install(|| min_distance_per_primitive(&m, &m.positions, 0.3));
        let par = min_distance_per_primitive(&m, &m.positions, 0.3);
        assert_eq!(serial, par);
    }

    #[test]
    fn random_soups_up_to_200_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for k in 0..4 {
            let n = rng.gen_range(10..=66); // 66 triangles = 198 triangles+edges+vertices-ish budget
            let m = soup(n, 1000 + k);
            assert_eq!(query_contact_set(&m, &m.positions, 0.05), brute_contacts(&m, 0.05));
        }
    }
}
