//! Rigid bodies moving along screw-like paths
//! `φ(t) = R(θ + tΔθ)·x̂ + x + tΔx`, and their truncation against division
//! planes.

use rayon::prelude::*;

use crate::geom::{rodrigues, trajectory_bbox_raw, DivisionPlane, Interval};
use crate::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct RigidPose {
    pub theta: Vec3,
    pub x: Vec3,
    /// Body-frame vertex positions `x̂_i`.
    pub ref_vertices: Vec<Vec3>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RigidIncrement {
    pub delta_theta: Vec3,
    pub delta_x: Vec3,
}

impl RigidIncrement {
    pub fn scaled(&self, t: f64) -> Self {
        RigidIncrement { delta_theta: self.delta_theta * t, delta_x: self.delta_x * t }
    }

    pub fn is_zero(&self) -> bool {
        self.delta_theta == Vec3::zeros() && self.delta_x == Vec3::zeros()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvedTruncConfig {
    pub k_samples: usize,
    pub n_bisect: u32,
    pub gamma_r: f64,
}

impl Default for CurvedTruncConfig {
    fn default() -> Self {
        CurvedTruncConfig { k_samples: 8, n_bisect: 16, gamma_r: 0.9 }
    }
}

impl CurvedTruncConfig {
    /// Sample count scaled with the time step: 8 samples at `dt = 1/600`.
    pub fn samples_for_dt(dt: f64) -> usize {
        ((8.0 * dt * 600.0).round() as usize).max(2)
    }
}

#[derive(Debug, Clone, Copy)]
struct Path {
    theta: Vec3,
    x: Vec3,
    dtheta: Vec3,
    dx: Vec3,
    xhat: Vec3,
}

impl Path {
    fn new(pose: &RigidPose, incr: &RigidIncrement, i: usize) -> Self {
        Path { theta: pose.theta, x: pose.x, dtheta: incr.delta_theta, dx: incr.delta_x, xhat: pose.ref_vertices[i] }
    }

    fn at(&self, t: f64) -> Vec3 {
        rodrigues(self.theta + self.dtheta * t, self.xhat) + self.x + self.dx * t
    }

    /// Interval enclosure of the signed distance to `plane` over `[t0, t1]`.
    /// The translational part is linear in `t` and is evaluated exactly at
    /// the endpoints; only the rotated offset goes through the box.
    fn plane_range(&self, plane: &DivisionPlane, t0: f64, t1: f64) -> Interval {
        let rot = trajectory_bbox_raw(self.theta, Vec3::zeros(), self.dtheta, Vec3::zeros(), self.xhat, t0, t1);
        let r = rot.plane_range(&DivisionPlane { normal: plane.normal, point: Vec3::zeros() });
        let lin = |t: f64| plane.normal.dot(&(self.x + self.dx * t - plane.point));
        let (a, b) = (lin(t0), lin(t1));
        r + Interval::new(a, b)
    }

    fn clear_of(&self, plane: &DivisionPlane, sign: f64, t0: f64, t1: f64) -> bool {
        let r = self.plane_range(plane, t0, t1);
        if sign > 0.0 {
            r.lo > 0.0
        } else {
            r.hi < 0.0
        }
    }

    fn within_ball(&self, center: &Vec3, radius: f64, t0: f64, t1: f64) -> bool {
        let b = trajectory_bbox_raw(self.theta, self.x, self.dtheta, self.dx, self.xhat, t0, t1);
        b.max_distance_from(center) <= radius
    }
}

/// Checks a predicate on `[0, t]` split into `pieces` sub-intervals.
fn covered(pieces: usize, t: f64, mut ok: impl FnMut(f64, f64) -> bool) -> bool {
    (0..pieces).all(|k| ok(t * k as f64 / pieces as f64, t * (k + 1) as f64 / pieces as f64))
}

/// Largest `t` in `[0, hi]` (found by bisection) for which `ok(t)` holds,
/// assuming `ok(0)`.
fn bisect_last(hi: f64, n: u32, mut ok: impl FnMut(f64) -> bool) -> f64 {
    if ok(hi) {
        return hi;
    }
    let (mut lo, mut hi) = (0.0, hi);
    for _ in 0..n {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

pub fn eval_trajectory(pose: &RigidPose, incr: &RigidIncrement, i: usize, t: f64) -> Vec3 {
    Path::new(pose, incr, i).at(t)
}

/// Position of body-frame point `xhat` at parameter `t`.
pub fn trajectory_point(pose_theta: Vec3, pose_x: Vec3, incr: &RigidIncrement, xhat: Vec3, t: f64) -> Vec3 {
    rodrigues(pose_theta + incr.delta_theta * t, xhat) + pose_x + incr.delta_x * t
}

/// Curved-path truncation ratio against one plane: sampled search for the
/// first sign change refined by bisection, then an interval check of the
/// whole arc `[0, t*]`, shrinking `t*` until the enclosure is clear.
/// Returns `γ·t*`.
pub fn curved_truncation_ratio(
    pose: &RigidPose,
    incr: &RigidIncrement,
    i: usize,
    plane: &DivisionPlane,
    cfg: &CurvedTruncConfig,
) -> f64 {
    curved_ratio_path(&Path::new(pose, incr, i), plane, cfg)
}

fn curved_ratio_path(path: &Path, plane: &DivisionPlane, cfg: &CurvedTruncConfig) -> f64 {
    let s0 = plane.signed_distance(path.at(0.0));
    if s0 == 0.0 || !s0.is_finite() {
        return 0.0;
    }
    let sign = s0.signum();
    let k = cfg.k_samples.max(1);
    // fast path: the whole arc is provably clear
    if covered(k, 1.0, |a, b| path.clear_of(plane, sign, a, b)) {
        return cfg.gamma_r;
    }
    let same_side = |t: f64| sign * plane.signed_distance(path.at(t)) > 0.0;
    let mut t_star = 1.0;
    for j in 1..=k {
        let tj = j as f64 / k as f64;
        if !same_side(tj) {
            let (mut lo, mut hi) = ((j - 1) as f64 / k as f64, tj);
            for _ in 0..cfg.n_bisect {
                let mid = 0.5 * (lo + hi);
                if same_side(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            t_star = lo;
            break;
        }
    }
    let t_star = bisect_last(t_star, cfg.n_bisect, |t| covered(k, t, |a, b| path.clear_of(plane, sign, a, b)));
    cfg.gamma_r * t_star
}

/// Largest `t ≤ 1` such that the path over `[0, t]` provably stays inside
/// the ball of `radius` around its start.
pub fn sphere_bound_ratio(
    pose: &RigidPose,
    incr: &RigidIncrement,
    i: usize,
    radius: f64,
    cfg: &CurvedTruncConfig,
) -> f64 {
    sphere_ratio_path(&Path::new(pose, incr, i), radius, cfg)
}

fn sphere_ratio_path(path: &Path, radius: f64, cfg: &CurvedTruncConfig) -> f64 {
    let c = path.at(0.0);
    let k = cfg.k_samples.max(1);
    bisect_last(1.0, cfg.n_bisect, |t| covered(k, t, |a, b| path.within_ball(&c, radius, a, b)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RigidTruncation {
    pub t_b: Vec<f64>,
    pub increments: Vec<RigidIncrement>,
}

/// Per-body truncation: `t_b` is the smallest curved ratio over all
/// vertices and their planes (starting from `γ`), further limited so no
/// vertex leaves the ball of radius `0.5·γ·r_q` around its start.
/// `planes[b][i]` holds the planes of vertex `i` of body `b`.
pub fn rigid_truncate(
    bodies: &[(RigidPose, RigidIncrement)],
    planes: &[Vec<Vec<DivisionPlane>>],
    r_q: f64,
    cfg: &CurvedTruncConfig,
) -> RigidTruncation {
    let radius = 0.5 * cfg.gamma_r * r_q;
    let t_b: Vec<f64> = bodies
        .iter()
        .zip(planes)
        .map(|((pose, incr), body_planes)| {
            if incr.is_zero() {
                return cfg.gamma_r;
            }
            (0..pose.ref_vertices.len())
                .into_par_iter()
                .map(|i| {
                    let path = Path::new(pose, incr, i);
                    let mut t = sphere_ratio_path(&path, radius, cfg).min(cfg.gamma_r);
                    for pl in body_planes.get(i).map(|v| v.as_slice()).unwrap_or(&[]) {
                        t = t.min(curved_ratio_path(&path, pl, cfg));
                    }
                    t
                })
                .reduce(|| f64::INFINITY, f64::min)
                .min(cfg.gamma_r)
        })
        .collect();
    let increments = bodies.iter().zip(&t_b).map(|((_, inc), &t)| inc.scaled(t)).collect();
    RigidTruncation { t_b, increments }
}

/// Isotropic variant: only per-vertex ball radii limit the body.
pub fn rigid_sphere_truncate(pose: &RigidPose, incr: &RigidIncrement, radii: &[f64], cfg: &CurvedTruncConfig) -> f64 {
    if incr.is_zero() {
        return 1.0;
    }
    (0..pose.ref_vertices.len())
        .into_par_iter()
        .map(|i| sphere_ratio_path(&Path::new(pose, incr, i), radii[i], cfg))
        .reduce(|| 1.0, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::TAU;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    fn pose1(xhat: Vec3) -> RigidPose {
        RigidPose { theta: Vec3::zeros(), x: Vec3::zeros(), ref_vertices: vec![xhat] }
    }

    #[test]
    fn trajectory_examples() {
        let p = RigidPose { theta: v(0.1, 0.2, 0.3), x: v(1.0, 2.0, 3.0), ref_vertices: vec![v(0.5, 0.0, 0.0)] };
        let inc = RigidIncrement { delta_theta: v(1.0, 0.0, 0.0), delta_x: v(0.0, 1.0, 0.0) };
        assert_eq!(eval_trajectory(&p, &inc, 0, 0.0), rodrigues(p.theta, p.ref_vertices[0]) + p.x);
        let lin = RigidIncrement { delta_theta: Vec3::zeros(), delta_x: v(0.3, 0.0, -0.1) };
        let a = eval_trajectory(&p, &lin, 0, 0.0);
        let mid = eval_trajectory(&p, &lin, 0, 0.5);
        assert!((mid - (a + lin.delta_x * 0.5)).norm() < 1e-15);
        let spin = RigidIncrement { delta_theta: v(0.0, 0.0, TAU), delta_x: Vec3::zeros() };
        assert!((eval_trajectory(&pose1(v(1.0, 0.0, 0.0)), &spin, 0, 0.25) - v(0.0, 1.0, 0.0)).norm() < 1e-15);
    }

    fn zplane(h: f64) -> DivisionPlane {
        DivisionPlane { normal: v(0.0, 0.0, 1.0), point: v(0.0, 0.0, h) }
    }

    #[test]
    fn translation_crossing_at_half() {
        let cfg = CurvedTruncConfig { k_samples: 8, n_bisect: 20, gamma_r: 0.9 };
        let inc = RigidIncrement { delta_theta: Vec3::zeros(), delta_x: v(0.0, 0.0, -2.0) };
        let t = curved_truncation_ratio(&pose1(v(0.0, 0.0, 1.0)), &inc, 0, &zplane(0.0), &cfg);
        assert!((t - 0.45).abs() < 1e-5, "{t}");
        assert!(t <= 0.45);
    }

    #[test]
    fn no_crossing_gives_gamma() {
        let cfg = CurvedTruncConfig::default();
        let inc = RigidIncrement { delta_theta: v(0.0, 0.0, 1.0), delta_x: v(0.1, 0.0, 0.0) };
        let t = curved_truncation_ratio(&pose1(v(1.0, 0.0, 1.0)), &inc, 0, &zplane(0.0), &cfg);
        assert_eq!(t, 0.9);
    }

    /// First dense-sampled crossing (the oracle value used below).
    fn dense_first_crossing(p: &RigidPose, inc: &RigidIncrement, pl: &DivisionPlane, n: usize) -> Option<f64> {
        let s0 = pl.signed_distance(eval_trajectory(p, inc, 0, 0.0)).signum();
        (1..=n).map(|k| k as f64 / n as f64).find(|&t| s0 * pl.signed_distance(eval_trajectory(p, inc, 0, t)) <= 0.0)
    }

    #[test]
    fn arc_dipping_below_plane() {
        // unit circle in the xz plane starting at (1,0,0), full turn about y;
        // it dips to z = -1 and comes back, so the endpoint is safe
        let p = pose1(v(1.0, 0.0, 0.0));
        let inc = RigidIncrement { delta_theta: v(0.0, TAU, 0.0), delta_x: Vec3::zeros() };
        let pl = zplane(-0.5);
        assert!(pl.signed_distance(eval_trajectory(&p, &inc, 0, 1.0)) > 0.0);
        let first = dense_first_crossing(&p, &inc, &pl, 100_000).unwrap();
        // R_y(φ)(1,0,0) = (cos φ, 0, -sin φ): z = -0.5 at φ = π/6
        assert!((first - 1.0 / 12.0).abs() < 2e-5);
        let t = curved_truncation_ratio(&p, &inc, 0, &pl, &CurvedTruncConfig::default());
        assert!(t < first && t > 0.0);
    }

    #[test]
    fn rigid_truncate_examples() {
        let cfg = CurvedTruncConfig::default();
        let body = RigidPose {
            theta: Vec3::zeros(),
            x: Vec3::zeros(),
            ref_vertices: vec![v(0.0, 0.0, 0.0), v(0.1, 0.0, 0.0)],
        };
        let tiny = RigidIncrement { delta_theta: v(0.0, 0.0, 1e-4), delta_x: v(1e-4, 0.0, 0.0) };
        let r = rigid_truncate(&[(body.clone(), tiny)], &[vec![vec![], vec![]]], 1.0, &cfg);
        assert_eq!(r.t_b, vec![0.9]);

        // translating 1.0 toward a wall at gap 0.5, plane on the wall
        let wall = DivisionPlane { normal: v(-1.0, 0.0, 0.0), point: v(0.6, 0.0, 0.0) };
        let go = RigidIncrement { delta_theta: Vec3::zeros(), delta_x: v(1.0, 0.0, 0.0) };
        let r = rigid_truncate(&[(body.clone(), go)], &[vec![vec![wall], vec![wall]]], 100.0, &cfg);
        assert!((r.t_b[0] - 0.45).abs() < 1e-4, "{}", r.t_b[0]);
        assert!((r.increments[0].delta_x.x - r.t_b[0]).abs() < 1e-15);
    }

    #[test]
    fn sphere_bound_inactive_for_short_arcs() {
        let cfg = CurvedTruncConfig::default();
        let rho = 0.1;
        let body = RigidPose {
            theta: v(0.3, -0.2, 0.1),
            x: v(1.0, 0.0, 0.0),
            ref_vertices: vec![v(rho, 0.0, 0.0), v(0.0, -rho, 0.0), v(0.0, 0.0, rho)],
        };
        let inc = RigidIncrement { delta_theta: v(0.05, 0.02, 0.0), delta_x: v(0.002, 0.0, 0.0) };
        let arc = rho * inc.delta_theta.norm() + inc.delta_x.norm();
        let r_q = 4.0 * arc / 0.9; // ball radius 2·arc
        let res = rigid_truncate(&[(body.clone(), inc)], &[vec![vec![]; 3]], r_q, &cfg);
        assert_eq!(res.t_b[0], 0.9);
        // dense check of the arc-length bound
        for i in 0..3 {
            let a = eval_trajectory(&body, &inc, i, 0.0);
            for k in 0..=1000 {
                let p = eval_trajectory(&body, &inc, i, k as f64 / 1000.0);
                assert!((p - a).norm() <= arc + 1e-12);
            }
        }
        // and a tight ball does bind
        let res = rigid_truncate(&[(body, inc)], &[vec![vec![]; 3]], 0.5 * arc, &cfg);
        assert!(res.t_b[0] < 0.9);
    }

    #[test]
    fn linear_sphere_bound_matches_closed_form() {
        let cfg = CurvedTruncConfig::default();
        let inc = RigidIncrement { delta_theta: Vec3::zeros(), delta_x: v(0.3, 0.4, 0.0) };
        let t = sphere_bound_ratio(&pose1(v(0.2, 0.0, 0.0)), &inc, 0, 0.1, &cfg);
        assert!(t <= 0.2 && t > 0.2 - 2f64.powi(-16));
    }
}
