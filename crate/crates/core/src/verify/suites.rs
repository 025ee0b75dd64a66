//! Seeded randomized suites: each draws its instances from a ChaCha8
//! stream per case and counts counterexamples against an independent
//! check. Shared by the acceptance target and the smaller integration
//! tests.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dat::{pair_vertex_planes, truncation_ratio_linear, DatConfig, LambdaPolicy, ROOM_SHARE_FLOOR};
use crate::geom::{rodrigues, DivisionPlane};
use crate::mesh::{PrimPair, TriMesh};
use crate::project::{dykstra_project, HalfSpace, HalfSpaceSet, SpdMetric3};
use crate::rigid::{curved_truncation_ratio, CurvedTruncConfig, RigidIncrement, RigidPose};
use crate::sim::{truncate_linear, TruncationMode};
use crate::verify::ccd::ccd_linear;
use crate::verify::qp::qp_oracle;
use crate::verify::random::{min_triangle_gap, random_deltas, random_scene, random_unit};
use crate::{Mat3, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutcome {
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    pub first_failure: Option<String>,
    pub seconds: f64,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.cases > 0 && self.failures == 0
    }

    pub fn line(&self) -> String {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        let mut s =
            format!("{status} {}: {} cases, {} failures, {:.1}s", self.name, self.cases, self.failures, self.seconds);
        if let Some(f) = &self.first_failure {
            s.push_str(&format!(" (first: {f})"));
        }
        s
    }
}

/// The rng of case `k` of a suite.
pub fn case_rng(seed: u64, k: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(k as u64);
    r
}

/// Runs `check` on cases `0..n` in parallel; `Err` marks a counterexample.
fn run_cases(
    name: &str,
    seed: u64,
    n: usize,
    check: impl Fn(&mut ChaCha8Rng) -> Result<(), String> + Sync,
) -> SuiteOutcome {
    let t0 = Instant::now();
    let results: Vec<Option<String>> =
        (0..n).into_par_iter().map(|k| check(&mut case_rng(seed, k)).err().map(|e| format!("case {k}: {e}"))).collect();
    let failures = results.iter().filter(|r| r.is_some()).count();
    SuiteOutcome {
        name: name.to_string(),
        cases: n,
        failures,
        first_failure: results.into_iter().flatten().next(),
        seconds: t0.elapsed().as_secs_f64(),
    }
}

// ------------------------------------------------------------ safety

const POLICIES: [LambdaPolicy; 3] =
    [LambdaPolicy::Half, LambdaPolicy::ProportionalOwn, LambdaPolicy::ProportionalOther];

/// A random safety instance: a disjoint soup of 10–200 triangles, random
/// displacements up to 5× its minimum gap, and a query radius between
/// half and twenty times the gap.
pub fn safety_instance(rng: &mut impl Rng) -> (TriMesh, Vec<Vec3>, DatConfig) {
    let n_tris = rng.gen_range(10..=200);
    let (mesh, gap) = random_scene(rng, n_tris);
    let delta = random_deltas(rng, mesh.n_vertices(), 5.0 * gap);
    let mut cfg = DatConfig::new(gap * rng.gen_range(0.5..20.0));
    cfg.lambda_policy = POLICIES[rng.gen_range(0..3)];
    (mesh, delta, cfg)
}

/// Truncates with `mode`, then checks the swept motion with the exact CCD
/// oracle and the end state with a brute-force separation scan.
pub fn check_safety(mode: TruncationMode, mesh: &TriMesh, delta: &[Vec3], cfg: &DatConfig) -> Result<(), String> {
    let out = truncate_linear(mode, mesh, &mesh.positions, delta, cfg, None).map_err(|e| e.to_string())?;
    let r = ccd_linear(&mesh.positions, &out, mesh);
    if let Some(t) = r.toi {
        return Err(format!("crossing at toi {t:e}: {:?}", r.pair));
    }
    let end: Vec<Vec3> = mesh.positions.iter().zip(&out).map(|(p, d)| p + d).collect();
    let mut moved = mesh.clone();
    moved.positions = end;
    let sep = min_triangle_gap(&moved);
    if !(sep > 0.0) {
        return Err(format!("post-step separation {sep:e}"));
    }
    Ok(())
}

/// One outcome per truncation mode over `n` random scenes.
pub fn safety_suite(seed: u64, n: usize) -> Vec<SuiteOutcome> {
    TruncationMode::ALL
        .iter()
        .map(|&mode| {
            run_cases(&format!("safety/{}", mode.name()), seed, n, |rng| {
                let (mesh, delta, cfg) = safety_instance(rng);
                check_safety(mode, &mesh, &delta, &cfg)
            })
        })
        .collect()
}

// ------------------------------------------------------------ face containment

fn random_point(rng: &mut impl Rng, r: f64) -> Vec3 {
    random_unit(rng) * (r * rng.gen::<f64>().cbrt())
}

/// Uniform barycentric weights.
pub fn random_weights(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    w
}

/// A random disjoint vertex-triangle or edge-edge pair in a 4-vertex
/// buffer, with random displacements.
fn random_pair(rng: &mut impl Rng) -> (PrimPair, Vec<Vec3>, Vec<Vec3>) {
    loop {
        let pos: Vec<Vec3> = (0..4).map(|_| random_point(rng, 1.0)).collect();
        let delta: Vec<Vec3> = (0..4)
            .map(|_| {
                let r = rng.gen_range(0.1..2.0);
                random_point(rng, r)
            })
            .collect();
        let pair = if rng.gen_bool(0.5) {
            PrimPair::VertexTriangle { v: 3, tri: [0, 1, 2] }
        } else {
            PrimPair::EdgeEdge { a: [0, 1], b: [2, 3] }
        };
        let ok = match pair {
            PrimPair::VertexTriangle { tri, .. } => {
                (pos[tri[1]] - pos[tri[0]]).cross(&(pos[tri[2]] - pos[tri[0]])).norm() > 1e-3
            }
            PrimPair::EdgeEdge { .. } => (pos[1] - pos[0]).norm() > 1e-3 && (pos[3] - pos[2]).norm() > 1e-3,
        };
        if ok {
            return (pair, pos, delta);
        }
    }
}

/// Faces of a pair as vertex lists sharing one plane each.
fn pair_faces(pair: &PrimPair) -> Vec<Vec<usize>> {
    match *pair {
        PrimPair::VertexTriangle { v, tri } => vec![vec![v], tri.to_vec()],
        PrimPair::EdgeEdge { a, b } => vec![a.to_vec(), b.to_vec()],
    }
}

/// Convex-combination containment: with every vertex truncated against its
/// division plane, random points of each face at random times stay strictly
/// on the face's side; with untruncated motion, any vertex that ends past its
/// plane makes some sampled face point end past it too.
pub fn face_containment_suite(seed: u64, n: usize, samples: usize) -> SuiteOutcome {
    run_cases("face-containment", seed, n, |rng| {
        let (pair, pos, delta) = random_pair(rng);
        let policy = POLICIES[rng.gen_range(0..3)];
        let planes = match pair_vertex_planes(&pair, &pos, &delta, policy, ROOM_SHARE_FLOOR) {
            Ok(p) => p,
            Err(_) => return Ok(()),
        };
        let plane_of = |v: usize| planes.iter().find(|(w, _)| *w == v).expect("pair vertex").1;
        let gamma = rng.gen_range(0.5..0.99);
        let truncated: Vec<Vec3> =
            (0..4).map(|v| delta[v] * truncation_ratio_linear(pos[v], delta[v], &plane_of(v), gamma)).collect();
        for face in pair_faces(&pair) {
            let pl = plane_of(face[0]);
            let at = |w: &[f64], d: &[Vec3], t: f64| -> Vec3 {
                face.iter().zip(w).map(|(&v, &wi)| (pos[v] + d[v] * t) * wi).sum()
            };
            for _ in 0..samples {
                let w = random_weights(rng, face.len());
                let t = rng.gen::<f64>();
                for tt in [t, 1.0] {
                    let s = pl.signed_distance(at(&w, &truncated, tt));
                    if !(s > 0.0) {
                        return Err(format!("face point at t={tt} has signed distance {s:e}"));
                    }
                }
            }
            // converse: a violated vertex shows up among face points
            let violated = face.iter().any(|&v| pl.signed_distance(pos[v] + delta[v]) <= 0.0);
            if violated {
                let mut seen = false;
                for k in 0..face.len() {
                    let mut w = vec![0.0; face.len()];
                    w[k] = 1.0;
                    seen |= pl.signed_distance(at(&w, &delta, 1.0)) <= 0.0;
                }
                for _ in 0..samples {
                    let w = random_weights(rng, face.len());
                    seen |= pl.signed_distance(at(&w, &delta, 1.0)) <= 0.0;
                }
                if !seen {
                    return Err("violated vertex not reflected by any face point".into());
                }
            }
        }
        Ok(())
    })
}

// ------------------------------------------------------------ rigid faces

/// A random rigid triangle with a random screw increment (rotation up to
/// `max_angle`) and a plane placed so that roughly half the cases cross.
pub fn random_rigid_face(rng: &mut impl Rng, max_angle: f64) -> (RigidPose, RigidIncrement, DivisionPlane) {
    let ref_vertices: Vec<Vec3> = (0..3).map(|_| random_point(rng, 1.0)).collect();
    let pose = RigidPose { theta: random_point(rng, 3.0), x: random_point(rng, 1.0), ref_vertices };
    let incr = RigidIncrement {
        delta_theta: random_unit(rng) * rng.gen_range(0.0..max_angle),
        delta_x: random_point(rng, 2.0),
    };
    let n = random_unit(rng);
    let start =
        pose.ref_vertices.iter().map(|x| n.dot(&(rodrigues(pose.theta, *x) + pose.x))).fold(f64::INFINITY, f64::min);
    // every vertex starts on the positive side
    let offset = rng.gen_range(1e-3..1.5);
    let plane = DivisionPlane { normal: n, point: n * (start - offset) };
    (pose, incr, plane)
}

fn rigid_point(pose: &RigidPose, incr: &RigidIncrement, xhat: Vec3, t: f64) -> Vec3 {
    rodrigues(pose.theta + incr.delta_theta * t, xhat) + pose.x + incr.delta_x * t
}

/// Rigid-face crossing equivalence: on a dense time grid, some sampled
/// face point reaches the plane iff some vertex does.
pub fn rigid_face_suite(seed: u64, n: usize, time_samples: usize, face_samples: usize) -> SuiteOutcome {
    run_cases("rigid-face-crossing", seed, n, |rng| {
        let (pose, incr, plane) = random_rigid_face(rng, std::f64::consts::PI);
        let weights: Vec<Vec<f64>> = (0..face_samples).map(|_| random_weights(rng, 3)).collect();
        let mut vertex_cross = false;
        let mut face_cross = false;
        for k in 0..=time_samples {
            let t = k as f64 / time_samples as f64;
            let v: Vec<Vec3> = pose.ref_vertices.iter().map(|x| rigid_point(&pose, &incr, *x, t)).collect();
            vertex_cross |= v.iter().any(|p| plane.signed_distance(*p) <= 0.0);
            for w in &weights {
                // a face point is the image of the same combination of the
                // body-frame vertices
                let xhat: Vec3 = pose.ref_vertices.iter().zip(w).map(|(x, wi)| x * *wi).sum();
                face_cross |= plane.signed_distance(rigid_point(&pose, &incr, xhat, t)) <= 0.0;
            }
        }
        if face_cross && !vertex_cross {
            return Err("a face point crossed while no vertex did".into());
        }
        Ok(())
    })
}

// ------------------------------------------------------------ curved ratio

/// Returned `γ·t*` never passes the first dense-sampled crossing.
pub fn curved_conservative_suite(seed: u64, n: usize, samples: usize) -> SuiteOutcome {
    run_cases("curved-conservative", seed, n, |rng| {
        let (pose, incr, plane) = random_rigid_face(rng, std::f64::consts::PI);
        let cfg =
            CurvedTruncConfig { k_samples: rng.gen_range(2..=16), n_bisect: 16, gamma_r: rng.gen_range(0.5..0.99) };
        let i = rng.gen_range(0..3);
        let r = curved_truncation_ratio(&pose, &incr, i, &plane, &cfg);
        if !(0.0..=cfg.gamma_r).contains(&r) {
            return Err(format!("ratio {r} outside [0, γ]"));
        }
        let xhat = pose.ref_vertices[i];
        for k in 0..=samples {
            let t = k as f64 / samples as f64;
            if t > r {
                break;
            }
            if plane.signed_distance(rigid_point(&pose, &incr, xhat, t)) <= 0.0 {
                return Err(format!("returned {r:e} but the path crosses at {t:e}"));
            }
        }
        Ok(())
    })
}

/// Without rotation the curved ratio reproduces the straight-line one:
/// within `2^-n_bisect` when the crossing lies in the step, otherwise `γ`.
pub fn curved_linear_suite(seed: u64, n: usize) -> SuiteOutcome {
    run_cases("curved-vs-linear", seed, n, |rng| {
        let (pose, mut incr, plane) = random_rigid_face(rng, 1.0);
        incr.delta_theta = Vec3::zeros();
        let cfg =
            CurvedTruncConfig { k_samples: rng.gen_range(2..=16), n_bisect: 16, gamma_r: rng.gen_range(0.5..0.99) };
        let i = rng.gen_range(0..3);
        let curved = curved_truncation_ratio(&pose, &incr, i, &plane, &cfg);
        let x0 = rigid_point(&pose, &incr, pose.ref_vertices[i], 0.0);
        let linear = truncation_ratio_linear(x0, incr.delta_x, &plane, cfg.gamma_r);
        let crosses_in_step = plane.signed_distance(x0 + incr.delta_x) <= 0.0;
        let tol = (-(cfg.n_bisect as f64)).exp2();
        let ok =
            if crosses_in_step { (curved - linear).abs() <= tol } else { curved == cfg.gamma_r && linear >= curved };
        if ok {
            Ok(())
        } else {
            Err(format!("curved {curved:e} vs linear {linear:e} (crossing in step: {crosses_in_step})"))
        }
    })
}

// ------------------------------------------------------------ projection

/// Random SPD matrix with condition number at most `max_cond`.
pub fn random_spd(rng: &mut impl Rng, max_cond: f64) -> SpdMetric3 {
    let q = nalgebra::Rotation3::new(random_point(rng, std::f64::consts::PI)).into_inner();
    let ev = [1.0, max_cond.powf(rng.gen::<f64>()), max_cond.powf(rng.gen::<f64>())];
    let m: Mat3 = q * Mat3::from_diagonal(&Vec3::from(ev)) * q.transpose();
    let m = (m + m.transpose()) * 0.5 * rng.gen_range(0.1..10.0);
    SpdMetric3::new(m).expect("random SPD")
}

/// A feasible instance: up to six half-spaces sharing an interior point,
/// and a start point likely to violate some of them.
pub fn random_projection_instance(rng: &mut impl Rng) -> (Vec3, Vec<HalfSpace>, SpdMetric3) {
    let inside = random_point(rng, 1.0);
    let k = rng.gen_range(1..=6);
    let hs = (0..k)
        .map(|_| {
            let n = random_unit(rng);
            HalfSpace { normal: n, point: inside - n * rng.gen_range(0.0..1.0) }
        })
        .collect();
    (random_point(rng, 2.0), hs, random_spd(rng, 1e3))
}

/// Dykstra in the metric agrees with the brute-force active-set QP.
pub fn dykstra_qp_suite(seed: u64, n: usize, tol: f64) -> SuiteOutcome {
    run_cases("dykstra-vs-qp", seed, n, |rng| {
        let (x0, hs, m) = random_projection_instance(rng);
        let want = qp_oracle(x0, &hs, &m).map_err(|e| e.to_string())?;
        let got = dykstra_project(x0, &mut HalfSpaceSet::new(hs), &m, 200_000, 1e-14);
        let err = m.norm(&(got.x - want));
        if err <= tol {
            Ok(())
        } else {
            Err(format!("M-norm error {err:e} (converged: {}, sweeps {})", got.converged, got.sweeps))
        }
    })
}

// ------------------------------------------------------------ ratio branches

/// Hand-computed cases of the straight-line ratio, one per branch:
/// `(name, computed, expected)`.
pub fn ratio_branch_cases() -> Vec<(&'static str, f64, f64)> {
    let plane = DivisionPlane { normal: Vec3::z(), point: Vec3::zeros() };
    let x = Vec3::new(0.0, 0.0, 0.5);
    let g = 0.9;
    vec![
        ("t_i < 0 (moving away)", truncation_ratio_linear(x, Vec3::new(0.0, 0.0, 0.6), &plane, g), 1.0),
        // t_i = 0.5 / 0.6, t* = 0.9 · 0.8333…
        ("t_i in (0, 1/γ)", truncation_ratio_linear(x, Vec3::new(0.0, 0.0, -0.6), &plane, g), 0.75),
        ("t_i = 2.5 >= 1/γ", truncation_ratio_linear(x, Vec3::new(0.0, 0.0, -0.2), &plane, g), 1.0),
        ("parallel ray", truncation_ratio_linear(x, Vec3::new(0.3, -0.4, 0.0), &plane, g), 1.0),
        (
            "touching start",
            truncation_ratio_linear(Vec3::new(0.2, 0.1, 0.0), Vec3::new(0.0, 0.0, -1.0), &plane, g),
            0.0,
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_branches_match_hand_arithmetic() {
        for (name, got, want) in ratio_branch_cases() {
            assert!((got - want).abs() <= 1e-12, "{name}: {got} vs {want}");
        }
    }

    #[test]
    fn small_suites_pass() {
        for o in safety_suite(11, 4) {
            assert!(o.passed(), "{}", o.line());
        }
        for o in [
            face_containment_suite(11, 50, 100),
            rigid_face_suite(11, 20, 64, 16),
            curved_conservative_suite(11, 50, 2000),
            curved_linear_suite(11, 50),
            dykstra_qp_suite(11, 50, 1e-6),
        ] {
            assert!(o.passed(), "{}", o.line());
        }
    }

    #[test]
    fn case_streams_are_independent_of_order() {
        let a: u64 = case_rng(5, 3).gen();
        let _: u64 = case_rng(5, 2).gen();
        assert_eq!(a, case_rng(5, 3).gen::<u64>());
        assert_ne!(a, case_rng(5, 4).gen::<u64>());
    }
}
