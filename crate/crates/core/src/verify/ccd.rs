//! Exact-as-practical linear CCD oracle: coplanarity roots of the cubic
//! `det(p1−p0, p2−p0, p3−p0)(t)` isolated on monotone pieces and refined
//! by bisection on the directly evaluated determinant, followed by a
//! distance test at the root.

use rayon::prelude::*;

use crate::broadphase::Bvh;
use crate::geom::{closest_point_triangle, closest_points_segments, Interval3};
use crate::mesh::{tet_inversion_pairs, PrimPair, TriMesh};
use crate::Vec3;

/// What a CCD hit refers to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CcdHit {
    Pair(PrimPair),
    /// Vertex `vertex` crossed plane number `plane` of its list.
    Plane {
        vertex: usize,
        plane: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CcdReport {
    pub toi: Option<f64>,
    pub pair: Option<CcdHit>,
    /// Smallest distance seen among the checked pairs (at the start, the
    /// end, and every coplanarity event); `+∞` without candidates.
    pub min_separation: f64,
}

impl CcdReport {
    pub fn clear() -> Self {
        CcdReport { toi: None, pair: None, min_separation: f64::INFINITY }
    }

    pub fn is_clear(&self) -> bool {
        self.toi.is_none()
    }

    fn merge(self, o: CcdReport) -> CcdReport {
        let (toi, pair) = match (self.toi, o.toi) {
            (Some(a), Some(b)) if b < a => (o.toi, o.pair),
            (Some(_), _) => (self.toi, self.pair),
            (None, Some(_)) => (o.toi, o.pair),
            (None, None) => (None, None),
        };
        CcdReport { toi, pair, min_separation: self.min_separation.min(o.min_separation) }
    }
}

/// Linear CCD of `positions + t·delta`, `t ∈ [0,1]`, over all non-adjacent
/// vertex-triangle and edge-edge pairs of the mesh.
pub fn ccd_linear(positions: &[Vec3], delta: &[Vec3], mesh: &TriMesh) -> CcdReport {
    let pairs = candidate_pairs(positions, delta, mesh);
    ccd_pairs(positions, delta, &pairs)
}

/// As [`ccd_linear`], additionally checking every tet's internal
/// vertex-face and edge-edge pairs (a tet flattens only through one).
pub fn ccd_linear_with_tets(positions: &[Vec3], delta: &[Vec3], mesh: &TriMesh) -> CcdReport {
    let mut pairs = candidate_pairs(positions, delta, mesh);
    pairs.extend(tet_inversion_pairs(&mesh.tets));
    ccd_pairs(positions, delta, &pairs)
}

/// CCD over an explicit list of pairs; the earliest hit wins, ties broken
/// by list order.
pub fn ccd_pairs(positions: &[Vec3], delta: &[Vec3], pairs: &[PrimPair]) -> CcdReport {
    pairs
        .par_iter()
        .map(|p| pair_ccd(p, positions, delta))
        .collect::<Vec<_>>()
        .into_iter()
        .fold(CcdReport::clear(), CcdReport::merge)
}

/// Swept-box broadphase: pairs whose boxes over the whole motion overlap.
pub fn candidate_pairs(positions: &[Vec3], delta: &[Vec3], mesh: &TriMesh) -> Vec<PrimPair> {
    let end: Vec<Vec3> = positions.iter().zip(delta).map(|(p, d)| p + d).collect();
    let scale = Interval3::from_points(positions.iter().chain(&end)).half_extent().norm();
    let pad = 1e-9 * scale.max(1e-300) + 1e-300;
    let swept = |ids: &[usize]| {
        let mut b = Interval3::empty();
        for &i in ids {
            b.expand_point(positions[i]);
            b.expand_point(end[i]);
        }
        b.inflate(pad)
    };
    let tri_bvh = Bvh::build(mesh.triangles.iter().map(|t| swept(t)).collect());
    let edge_bvh = Bvh::build(mesh.edges.iter().map(|e| swept(e)).collect());
    let mask = mesh.contact_vertex_mask();
    let mut out: Vec<PrimPair> = (0..mesh.n_vertices())
        .into_par_iter()
        .filter(|&v| mask[v])
        .flat_map_iter(|v| {
            let q = swept(&[v]);
            let mut o = Vec::new();
            tri_bvh.query(&q, |t| {
                let tri = mesh.triangles[t];
                if !tri.contains(&v) {
                    o.push(PrimPair::VertexTriangle { v, tri });
                }
            });
            o.into_iter()
        })
        .collect();
    let ee: Vec<PrimPair> = (0..mesh.edges.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let a = mesh.edges[i];
            let mut o = Vec::new();
            edge_bvh.query(edge_bvh.primitive_box(i), |j| {
                let b = mesh.edges[j];
                if j > i && !a.iter().any(|x| b.contains(x)) {
                    o.push(PrimPair::EdgeEdge { a, b });
                }
            });
            o.into_iter()
        })
        .collect();
    out.extend(ee);
    out.sort();
    out
}

/// Distance between the two primitives of a pair at parameter `t`.
fn pair_distance(p: &PrimPair, pos: &[Vec3], d: &[Vec3], t: f64) -> f64 {
    let at = |i: usize| pos[i] + d[i] * t;
    match *p {
        PrimPair::VertexTriangle { v, tri } => hull_distance(&[at(v)], &tri.map(at)),
        PrimPair::EdgeEdge { a, b } => hull_distance(&a.map(at), &b.map(at)),
    }
}

/// Distance between a point and a triangle or between two segments,
/// tolerating collapsed primitives.
fn hull_distance(a: &[Vec3], b: &[Vec3]) -> f64 {
    match (a.len(), b.len()) {
        (1, 3) => match closest_point_triangle(a[0], [b[0], b[1], b[2]]) {
            Ok(r) => r.distance,
            // a collapsed triangle: fall back to its three edges
            Err(_) => [[b[0], b[1]], [b[1], b[2]], [b[2], b[0]]]
                .iter()
                .map(|e| point_segment_distance(a[0], e[0], e[1]))
                .fold(f64::INFINITY, f64::min),
        },
        (2, 2) => match closest_points_segments([a[0], a[1]], [b[0], b[1]]) {
            Ok(r) => r.distance,
            Err(_) => {
                // a collapsed edge is a point
                let (p, s) = if a[0] == a[1] { (a[0], b) } else { (b[0], a) };
                point_segment_distance(p, s[0], s[1])
            }
        },
        (3, 1) => hull_distance(b, a),
        _ => unreachable!("unsupported primitive pair"),
    }
}

fn point_segment_distance(p: Vec3, a: Vec3, b: Vec3) -> f64 {
    let ab = b - a;
    let l2 = ab.norm_squared();
    let s = if l2 > 0.0 { ((p - a).dot(&ab) / l2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * s)).norm()
}

fn det(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    a.dot(&b.cross(c))
}

fn pair_ccd(p: &PrimPair, pos: &[Vec3], d: &[Vec3]) -> CcdReport {
    // the four points ordered so that coplanarity is det(p1-p0, p2-p0, p3-p0)
    let ids: [usize; 4] = match *p {
        PrimPair::VertexTriangle { v, tri } => [tri[0], tri[1], tri[2], v],
        PrimPair::EdgeEdge { a, b } => [a[0], a[1], b[0], b[1]],
    };
    let x = ids.map(|i| pos[i]);
    let dx = ids.map(|i| d[i]);
    let f = |t: f64| {
        let q = [x[0] + dx[0] * t, x[1] + dx[1] * t, x[2] + dx[2] * t, x[3] + dx[3] * t];
        det(&(q[1] - q[0]), &(q[2] - q[0]), &(q[3] - q[0]))
    };
    let (b0, b1) = (x[1] - x[0], dx[1] - dx[0]);
    let (c0, c1) = (x[2] - x[0], dx[2] - dx[0]);
    let (d0, d1) = (x[3] - x[0], dx[3] - dx[0]);
    let k0 = det(&b0, &c0, &d0);
    let k1 = det(&b1, &c0, &d0) + det(&b0, &c1, &d0) + det(&b0, &c0, &d1);
    let k2 = det(&b1, &c1, &d0) + det(&b1, &c0, &d1) + det(&b0, &c1, &d1);
    let k3 = det(&b1, &c1, &d1);
    let s = [b0, b1, c0, c1, d0, d1].iter().map(|v| v.norm()).fold(0.0, f64::max);
    let eps = 1e-11 * s + 1e-300;

    let dist = |t: f64| pair_distance(p, pos, d, t);
    let mut min_sep = dist(0.0).min(dist(1.0));
    let hit = |t: f64| CcdReport { toi: Some(t), pair: Some(CcdHit::Pair(*p)), min_separation: 0.0 };
    if dist(0.0) <= eps {
        return hit(0.0);
    }

    let kmax = k0.abs().max(k1.abs()).max(k2.abs()).max(k3.abs());
    if kmax <= 1e-13 * s * s * s {
        // motion stays (numerically) coplanar: certified distance sweep
        let split = if matches!(p, PrimPair::VertexTriangle { .. }) { 3 } else { 2 };
        return match subdivided_sweep(&x, &dx, split, eps) {
            Some(t) => hit(t),
            None => CcdReport { toi: None, pair: None, min_separation: min_sep },
        };
    }

    // split [0,1] at the derivative's roots into monotone pieces
    let mut cuts = vec![0.0, 1.0];
    cuts.extend(quadratic_roots(3.0 * k3, 2.0 * k2, k1).into_iter().filter(|&r| r > 0.0 && r < 1.0));
    cuts.sort_by(f64::total_cmp);
    let mut events: Vec<(f64, f64)> = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (fa, fb) = (f(a), f(b));
        if fa == 0.0 {
            events.push((a, a));
        }
        if fa.signum() * fb.signum() < 0.0 {
            let (mut lo, mut hi, mut flo) = (a, b, fa);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                let fm = f(mid);
                if fm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if fm.signum() == flo.signum() {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            events.push((lo, hi));
        }
        // tangential touches: also examine interior extrema
        if b < 1.0 {
            events.push((b, b));
        }
    }
    if f(1.0) == 0.0 {
        events.push((1.0, 1.0));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (lo, hi) in events {
        let dm = dist(lo).min(dist(hi));
        min_sep = min_sep.min(dm);
        if dm <= eps {
            return hit(lo);
        }
    }
    CcdReport { toi: None, pair: None, min_separation: min_sep }
}

/// A piece of a moving primitive: 1, 2 or 3 corners with their positions
/// at `t = 0` and displacements over the step.
#[derive(Clone, Copy)]
struct Piece {
    n: usize,
    x: [Vec3; 3],
    v: [Vec3; 3],
}

impl Piece {
    fn at(&self, t: f64) -> ([Vec3; 3], usize) {
        (std::array::from_fn(|i| self.x[i] + self.v[i] * t), self.n)
    }

    /// Fastest point relative to a frame moving with `c`: speed is convex,
    /// so a corner attains it.
    fn speed(&self, c: &Vec3) -> f64 {
        self.v[..self.n].iter().map(|v| (v - c).norm()).fold(0.0, f64::max)
    }

    fn split(&self) -> Vec<Piece> {
        let mid = |i: usize, j: usize| ((self.x[i] + self.x[j]) * 0.5, (self.v[i] + self.v[j]) * 0.5);
        let mk = |c: [(Vec3, Vec3); 3], n| Piece { n, x: c.map(|p| p.0), v: c.map(|p| p.1) };
        let c = |i: usize| (self.x[i], self.v[i]);
        match self.n {
            2 => {
                let m = mid(0, 1);
                vec![mk([c(0), m, m], 2), mk([m, c(1), m], 2)]
            }
            3 => {
                let (m01, m12, m20) = (mid(0, 1), mid(1, 2), mid(2, 0));
                vec![mk([c(0), m01, m20], 3), mk([m01, c(1), m12], 3), mk([m20, m12, c(2)], 3), mk([m01, m12, m20], 3)]
            }
            _ => vec![*self],
        }
    }
}

/// Bound on the rate of change of the distance between two pieces: the
/// fastest corners relative to the best of a few common frames (distances
/// are invariant under a common translation).
fn rel_speed(a: &Piece, b: &Piece) -> f64 {
    std::iter::once(Vec3::zeros())
        .chain(a.v[..a.n].iter().chain(&b.v[..b.n]).copied())
        .map(|c| a.speed(&c) + b.speed(&c))
        .fold(f64::INFINITY, f64::min)
}

fn piece_distance(a: &Piece, b: &Piece, t: f64) -> f64 {
    let ((pa, na), (pb, nb)) = (a.at(t), b.at(t));
    hull_distance(&pa[..na], &pb[..nb])
}

/// Certified sweep for motions that stay coplanar, where the cubic gives no
/// information: branch and bound over time and over sub-pieces of both
/// primitives, each cell cleared by a Lipschitz bound with its own corner
/// speeds. Returns the earliest cell time where the distance reaches `eps`.
fn subdivided_sweep(x: &[Vec3; 4], dx: &[Vec3; 4], split: usize, eps: f64) -> Option<f64> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;
    let piece = |ids: std::ops::Range<usize>| {
        let mut p = Piece { n: ids.len(), x: [Vec3::zeros(); 3], v: [Vec3::zeros(); 3] };
        for (k, i) in ids.enumerate() {
            p.x[k] = x[i];
            p.v[k] = dx[i];
        }
        p
    };
    let (a, b) = (piece(0..split), piece(split..4));
    struct Cell(f64, f64, Piece, Piece);
    impl PartialEq for Cell {
        fn eq(&self, o: &Self) -> bool {
            self.0 == o.0
        }
    }
    impl Eq for Cell {}
    impl PartialOrd for Cell {
        fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(o))
        }
    }
    impl Ord for Cell {
        fn cmp(&self, o: &Self) -> std::cmp::Ordering {
            self.0.total_cmp(&o.0)
        }
    }
    let mut heap = BinaryHeap::new();
    heap.push(Reverse(Cell(0.0, 1.0, a, b)));
    let mut budget = 400_000usize;
    while let Some(Reverse(Cell(t0, t1, a, b))) = heap.pop() {
        if piece_distance(&a, &b, t0) <= eps {
            return Some(t0);
        }
        let tm = 0.5 * (t0 + t1);
        let dm = piece_distance(&a, &b, tm);
        if dm <= eps {
            return Some(tm);
        }
        let rel = rel_speed(&a, &b);
        let drift = 0.5 * (t1 - t0) * rel;
        if dm - drift > eps {
            continue;
        }
        if budget == 0 {
            // did not resolve: report conservatively
            return Some(t0);
        }
        budget -= 1;
        // a spatial split pays when the children that survive the bound
        // are slower; splitting never improves the critical distance
        let survivors = |ps: Vec<Piece>, other: &Piece, first: bool| {
            ps.iter()
                .map(|p| {
                    let (x, y) = if first { (p, other) } else { (other, p) };
                    let r = rel_speed(x, y);
                    let dm = piece_distance(x, y, tm);
                    if dm - 0.5 * (t1 - t0) * r > eps {
                        0.0
                    } else {
                        r
                    }
                })
                .fold(0.0, f64::max)
        };
        let ra = if a.n > 1 { survivors(a.split(), &b, true) } else { f64::INFINITY };
        let rb = if b.n > 1 { survivors(b.split(), &a, false) } else { f64::INFINITY };
        if ra.min(rb) > 0.6 * rel {
            heap.push(Reverse(Cell(t0, tm, a, b)));
            heap.push(Reverse(Cell(tm, t1, a, b)));
        } else if ra <= rb {
            for p in a.split() {
                heap.push(Reverse(Cell(t0, t1, p, b)));
            }
        } else {
            for p in b.split() {
                heap.push(Reverse(Cell(t0, t1, a, p)));
            }
        }
    }
    None
}

/// Real roots of `a t² + b t + c`.
fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a == 0.0 {
        return if b != 0.0 { vec![-c / b] } else { vec![] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return vec![];
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let mut r = Vec::new();
    if q != 0.0 {
        r.push(q / a);
        r.push(c / q);
    } else {
        r.push(0.0);
    }
    r
}

/// Piecewise-linear CCD along a sampled path of configurations, e.g. chords
/// of a rotating rigid body. Returns the toi in units of the whole path.
pub fn ccd_path(configs: &[Vec<Vec3>], mesh: &TriMesh, with_tets: bool) -> CcdReport {
    let n = configs.len().saturating_sub(1);
    let mut min_sep = f64::INFINITY;
    for k in 0..n {
        let delta: Vec<Vec3> = configs[k + 1].iter().zip(&configs[k]).map(|(b, a)| b - a).collect();
        let r = if with_tets {
            ccd_linear_with_tets(&configs[k], &delta, mesh)
        } else {
            ccd_linear(&configs[k], &delta, mesh)
        };
        min_sep = min_sep.min(r.min_separation);
        if let Some(t) = r.toi {
            return CcdReport { toi: Some((k as f64 + t) / n as f64), pair: r.pair, min_separation: min_sep };
        }
    }
    CcdReport { toi: None, pair: None, min_separation: min_sep }
}
