//! Geometric kernels: closest points, planes, Rodrigues rotation and
//! interval enclosures of rigid trajectories.

use thiserror::Error;

use crate::mesh::AREA_EPS;
use crate::rigid::{RigidIncrement, RigidPose};
use crate::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("degenerate triangle (area {area:e})")]
    DegenerateTriangle { area: f64 },
    #[error("zero-length segment")]
    ZeroLengthSegment,
}

/// Voronoi feature of a primitive on which a witness point lies.
/// Triangle edges are numbered `0 = ab`, `1 = bc`, `2 = ca`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feature {
    Face,
    Edge(u8),
    Vertex(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureClass {
    FaceInterior,
    Edge,
    Vertex,
}

impl Feature {
    pub fn class(self) -> FeatureClass {
        match self {
            Feature::Face => FeatureClass::FaceInterior,
            Feature::Edge(_) => FeatureClass::Edge,
            Feature::Vertex(_) => FeatureClass::Vertex,
        }
    }
}

/// Closest pair between two primitives. `weights_*` are the convex
/// coordinates of each witness w.r.t. the primitive's vertices (unused
/// slots are zero): a point uses `[1,0,0]`, a segment `[1-s, s, 0]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestPointResult {
    pub point_on_a: Vec3,
    pub point_on_b: Vec3,
    pub distance: f64,
    pub feature_a: Feature,
    pub feature_b: Feature,
    pub weights_a: [f64; 3],
    pub weights_b: [f64; 3],
}

/// Closest point on triangle `tri` to `q` (side a is the point).
pub fn closest_point_triangle(q: Vec3, tri: [Vec3; 3]) -> Result<ClosestPointResult, GeomError> {
    let [a, b, c] = tri;
    let ab = b - a;
    let ac = c - a;
    let area = 0.5 * ab.cross(&ac).norm();
    if !(area > AREA_EPS) {
        return Err(GeomError::DegenerateTriangle { area });
    }
    let (w, feature) = triangle_region(q, a, b, c, ab, ac);
    let p = a * w[0] + b * w[1] + c * w[2];
    // vertex regions return the vertex itself, not a rounded combination
    let p = match feature {
        Feature::Vertex(k) => tri[k as usize],
        _ => p,
    };
    Ok(ClosestPointResult {
        point_on_a: q,
        point_on_b: p,
        distance: (q - p).norm(),
        feature_a: Feature::Vertex(0),
        feature_b: feature,
        weights_a: [1.0, 0.0, 0.0],
        weights_b: w,
    })
}

fn triangle_region(p: Vec3, a: Vec3, b: Vec3, c: Vec3, ab: Vec3, ac: Vec3) -> ([f64; 3], Feature) {
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ([1.0, 0.0, 0.0], Feature::Vertex(0));
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return ([0.0, 1.0, 0.0], Feature::Vertex(1));
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return ([1.0 - v, v, 0.0], Feature::Edge(0));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return ([0.0, 0.0, 1.0], Feature::Vertex(2));
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return ([1.0 - w, 0.0, w], Feature::Edge(2));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return ([0.0, 1.0 - w, w], Feature::Edge(1));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    ([1.0 - v - w, v, w], Feature::Face)
}

/// Closest points between closed segments `e1` (side a) and `e2` (side b).
///
/// Non-parallel inputs are evaluated in a canonical argument order so that
/// swapping the arguments swaps the witnesses bit for bit. For parallel
/// segments with a continuum of closest pairs, the pair with the smallest
/// a-side parameter is returned.
pub fn closest_points_segments(e1: [Vec3; 2], e2: [Vec3; 2]) -> Result<ClosestPointResult, GeomError> {
    let d1 = e1[1] - e1[0];
    let d2 = e2[1] - e2[0];
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    if a == 0.0 || e == 0.0 {
        return Err(GeomError::ZeroLengthSegment);
    }
    let b = d1.dot(&d2);
    let denom = a * e - b * b;
    let parallel = denom <= PARALLEL_EPS * a * e;
    if !parallel && canonical_less(e2, e1) {
        let r = segment_pair(e2, e1, false);
        return Ok(swap_sides(r));
    }
    Ok(segment_pair(e1, e2, parallel))
}

const PARALLEL_EPS: f64 = 1e-14;

fn canonical_less(x: [Vec3; 2], y: [Vec3; 2]) -> bool {
    let xs = x.iter().flat_map(|v| v.iter().copied());
    let ys = y.iter().flat_map(|v| v.iter().copied());
    for (p, q) in xs.zip(ys) {
        match p.total_cmp(&q) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    false
}

fn swap_sides(r: ClosestPointResult) -> ClosestPointResult {
    ClosestPointResult {
        point_on_a: r.point_on_b,
        point_on_b: r.point_on_a,
        distance: r.distance,
        feature_a: r.feature_b,
        feature_b: r.feature_a,
        weights_a: r.weights_b,
        weights_b: r.weights_a,
    }
}

fn segment_pair(e1: [Vec3; 2], e2: [Vec3; 2], parallel: bool) -> ClosestPointResult {
    let d1 = e1[1] - e1[0];
    let d2 = e2[1] - e2[0];
    let r = e1[0] - e2[0];
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let c = d1.dot(&r);
    let b = d1.dot(&d2);
    let denom = a * e - b * b;
    let mut s = if parallel { 0.0 } else { ((b * f - c * e) / denom).clamp(0.0, 1.0) };
    let mut t = (b * s + f) / e;
    if t < 0.0 {
        t = 0.0;
        s = (-c / a).clamp(0.0, 1.0);
    } else if t > 1.0 {
        t = 1.0;
        s = ((b - c) / a).clamp(0.0, 1.0);
    }
    let pa = point_on_segment(e1, s);
    let pb = point_on_segment(e2, t);
    ClosestPointResult {
        point_on_a: pa,
        point_on_b: pb,
        distance: (pa - pb).norm(),
        feature_a: segment_feature(s),
        feature_b: segment_feature(t),
        weights_a: [1.0 - s, s, 0.0],
        weights_b: [1.0 - t, t, 0.0],
    }
}

fn point_on_segment(e: [Vec3; 2], s: f64) -> Vec3 {
    if s == 0.0 {
        e[0]
    } else if s == 1.0 {
        e[1]
    } else {
        e[0] + (e[1] - e[0]) * s
    }
}

fn segment_feature(s: f64) -> Feature {
    if s == 0.0 {
        Feature::Vertex(0)
    } else if s == 1.0 {
        Feature::Vertex(1)
    } else {
        Feature::Edge(0)
    }
}

/// Below this angle the first-order expansion `v + θ×v` is used.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Rotates `v` by the rotation vector `theta`.
pub fn rodrigues(theta: Vec3, v: Vec3) -> Vec3 {
    let a = theta.norm();
    let wv = theta.cross(&v);
    if a < SMALL_ANGLE {
        return v + wv;
    }
    v + wv * sinc(a) + theta.cross(&wv) * versc(a)
}

/// sin(a)/a
fn sinc(a: f64) -> f64 {
    if a < 1e-4 {
        let a2 = a * a;
        1.0 - a2 / 6.0 + a2 * a2 / 120.0
    } else {
        a.sin() / a
    }
}

/// (1 - cos a)/a², written without cancellation.
fn versc(a: f64) -> f64 {
    if a < 1e-4 {
        let a2 = a * a;
        0.5 - a2 / 24.0 + a2 * a2 / 720.0
    } else {
        let h = (0.5 * a).sin();
        2.0 * h * h / (a * a)
    }
}

/// Oriented plane `{x : n·(x − p) = 0}` with unit normal `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivisionPlane {
    pub normal: Vec3,
    pub point: Vec3,
}

impl DivisionPlane {
    /// `normal` is normalised; `None` when it has zero or non-finite length.
    pub fn new(normal: Vec3, point: Vec3) -> Option<Self> {
        let l = normal.norm();
        (l > 0.0 && l.is_finite()).then(|| DivisionPlane { normal: normal / l, point })
    }

    pub fn signed_distance(&self, x: Vec3) -> f64 {
        self.normal.dot(&(x - self.point))
    }

    pub fn flipped(&self) -> Self {
        DivisionPlane { normal: -self.normal, point: self.point }
    }
}

/// Ray/plane parameter `t` with `origin + t·dir` on the plane, possibly
/// negative. `None` when the ray is parallel to the plane up to a relative
/// tolerance of 1e-14.
pub fn ray_plane_intersection(origin: Vec3, dir: Vec3, plane: &DivisionPlane) -> Option<f64> {
    let denom = dir.dot(&plane.normal);
    if denom.abs() <= 1e-14 * dir.norm() || denom == 0.0 {
        return None;
    }
    Some(plane.normal.dot(&(plane.point - origin)) / denom)
}

// ------------------------------------------------------------ intervals

const INFLATE_ULPS: u32 = 8;

fn down(mut x: f64) -> f64 {
    for _ in 0..INFLATE_ULPS {
        x = x.next_down();
    }
    x
}

fn up(mut x: f64) -> f64 {
    for _ in 0..INFLATE_ULPS {
        x = x.next_up();
    }
    x
}

/// Closed interval with outward inflation after every operation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(a: f64, b: f64) -> Self {
        Interval { lo: a.min(b), hi: a.max(b) }
    }

    pub fn point(x: f64) -> Self {
        Interval { lo: x, hi: x }
    }

    fn widened(lo: f64, hi: f64) -> Self {
        Interval { lo: down(lo), hi: up(hi) }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn scale(self, k: f64) -> Self {
        Self::widened((self.lo * k).min(self.hi * k), (self.lo * k).max(self.hi * k))
    }
}

impl std::ops::Add for Interval {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self::widened(self.lo + o.lo, self.hi + o.hi)
    }
}

impl std::ops::Sub for Interval {
    type Output = Self;

    fn sub(self, o: Self) -> Self {
        Self::widened(self.lo - o.hi, self.hi - o.lo)
    }
}

impl std::ops::Mul for Interval {
    type Output = Self;

    fn mul(self, o: Self) -> Self {
        let c = [self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi];
        let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self::widened(lo, hi)
    }
}

/// Axis-aligned box, `lower <= upper` componentwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval3 {
    pub lower: Vec3,
    pub upper: Vec3,
}

impl Interval3 {
    pub fn empty() -> Self {
        Interval3 { lower: Vec3::repeat(f64::INFINITY), upper: Vec3::repeat(f64::NEG_INFINITY) }
    }

    pub fn from_point(p: Vec3) -> Self {
        Interval3 { lower: p, upper: p }
    }

    pub fn from_points<'a>(pts: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut b = Self::empty();
        for p in pts {
            b.expand_point(*p);
        }
        b
    }

    pub fn from_intervals(c: [Interval; 3]) -> Self {
        Interval3 { lower: Vec3::new(c[0].lo, c[1].lo, c[2].lo), upper: Vec3::new(c[0].hi, c[1].hi, c[2].hi) }
    }

    pub fn component(&self, k: usize) -> Interval {
        Interval { lo: self.lower[k], hi: self.upper[k] }
    }

    pub fn expand_point(&mut self, p: Vec3) {
        self.lower = self.lower.inf(&p);
        self.upper = self.upper.sup(&p);
    }

    pub fn union(&self, o: &Self) -> Self {
        Interval3 { lower: self.lower.inf(&o.lower), upper: self.upper.sup(&o.upper) }
    }

    pub fn inflate(&self, r: f64) -> Self {
        Interval3 { lower: self.lower.add_scalar(-r), upper: self.upper.add_scalar(r) }
    }

    pub fn contains_point(&self, p: &Vec3) -> bool {
        (0..3).all(|k| self.lower[k] <= p[k] && p[k] <= self.upper[k])
    }

    pub fn contains_box(&self, o: &Self) -> bool {
        (0..3).all(|k| self.lower[k] <= o.lower[k] && o.upper[k] <= self.upper[k])
    }

    pub fn intersects(&self, o: &Self) -> bool {
        (0..3).all(|k| self.lower[k] <= o.upper[k] && o.lower[k] <= self.upper[k])
    }

    pub fn center(&self) -> Vec3 {
        (self.lower + self.upper) * 0.5
    }

    pub fn half_extent(&self) -> Vec3 {
        (self.upper - self.lower) * 0.5
    }

    /// Range of signed distances of the box to `plane`, slightly widened.
    pub fn plane_range(&self, plane: &DivisionPlane) -> Interval {
        let c = plane.signed_distance(self.center());
        let r: f64 = (0..3).map(|k| plane.normal[k].abs() * self.half_extent()[k]).sum();
        Interval::widened(c - r, c + r)
    }

    /// Largest distance from `p` to a point of the box.
    pub fn max_distance_from(&self, p: &Vec3) -> f64 {
        let d = Vec3::from_fn(|k, _| (p[k] - self.lower[k]).abs().max((self.upper[k] - p[k]).abs()));
        up(d.norm())
    }
}

// Lipschitz constants (rounded up) of sin(a)/a and (1-cos a)/a² on a >= 0.
const SINC_LIP: f64 = 0.44;
const VERSC_LIP: f64 = 0.14;
const SINC_MIN: f64 = -0.2173;

fn lipschitz_range(f: fn(f64) -> f64, lip: f64, a: Interval, lo: f64, hi: f64) -> Interval {
    let fa = f(a.lo);
    let fb = f(a.hi);
    let slack = lip * 0.5 * a.width() + 1e-15;
    Interval { lo: (fa.min(fb) - slack).max(lo), hi: (fa.max(fb) + slack).min(hi) }
}

/// Range of |θ + tΔθ| for t ∈ [t0, t1].
fn angle_range(theta: Vec3, dtheta: Vec3, t0: f64, t1: f64) -> Interval {
    let a0 = theta + dtheta * t0;
    let a1 = theta + dtheta * t1;
    let hi = a0.norm().max(a1.norm());
    let seg = a1 - a0;
    let l2 = seg.norm_squared();
    let lo = if l2 > 0.0 {
        let s = (-a0.dot(&seg) / l2).clamp(0.0, 1.0);
        (a0 + seg * s).norm()
    } else {
        a0.norm()
    };
    Interval { lo: (down(lo)).max(0.0), hi: up(hi) }
}

fn linear_range(a: f64, b: f64, t0: f64, t1: f64) -> Interval {
    let v0 = a + b * t0;
    let v1 = a + b * t1;
    Interval::widened(v0.min(v1), v0.max(v1))
}

fn cross_iv(a: [Interval; 3], b: [Interval; 3]) -> [Interval; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Enclosure of `R(θ + tΔθ)·x̂ + x + tΔx` over `t ∈ [t0, t1]`.
pub fn trajectory_interval_bbox(
    pose: &RigidPose,
    incr: &RigidIncrement,
    ref_point: Vec3,
    t_range: [f64; 2],
) -> Interval3 {
    trajectory_bbox_raw(pose.theta, pose.x, incr.delta_theta, incr.delta_x, ref_point, t_range[0], t_range[1])
}

pub(crate) fn trajectory_bbox_raw(
    theta: Vec3,
    x: Vec3,
    dtheta: Vec3,
    dx: Vec3,
    xhat: Vec3,
    t0: f64,
    t1: f64,
) -> Interval3 {
    let trans: [Interval; 3] = std::array::from_fn(|k| linear_range(x[k], dx[k], t0, t1));
    let rotated: [Interval; 3] = if dtheta == Vec3::zeros() {
        // fixed orientation: a single exact rotation
        let r = rodrigues(theta, xhat);
        std::array::from_fn(|k| Interval::point(r[k]))
    } else {
        let w: [Interval; 3] = std::array::from_fn(|k| linear_range(theta[k], dtheta[k], t0, t1));
        let v: [Interval; 3] = std::array::from_fn(|k| Interval::point(xhat[k]));
        let a = angle_range(theta, dtheta, t0, t1);
        let f1 = lipschitz_range(sinc, SINC_LIP, a, SINC_MIN, 1.0);
        let f2 = lipschitz_range(versc, VERSC_LIP, a, 0.0, 0.5);
        let wv = cross_iv(w, v);
        let wwv = cross_iv(w, wv);
        std::array::from_fn(|k| v[k] + f1 * wv[k] + f2 * wwv[k])
    };
    let c: [Interval; 3] = std::array::from_fn(|k| rotated[k] + trans[k]);
    Interval3::from_intervals(c)
}
