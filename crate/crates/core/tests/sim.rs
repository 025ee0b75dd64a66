//! Simulation-level properties: the commit oracle stays clean, free motion
//! is inertial, runs are reproducible, and rigid truncation survives a
//! dense-sampling check.

use std::path::PathBuf;

use dat_core::geom::DivisionPlane;
use dat_core::rigid::{eval_trajectory, rigid_truncate};
use dat_core::scenario::Scenario;
use dat_core::sim::{SimState, Simulator, StepMetrics};
use dat_core::verify::ccd::ccd_linear;
use dat_core::verify::random::random_unit;
use dat_core::verify::sampled::ccd_sampled_rigid;
use dat_core::{CurvedTruncConfig, RigidIncrement, RigidPose, TruncationMode, Vec3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn simulator(json: &str) -> Simulator {
    let config = Scenario::parse(json, "test").unwrap();
    let scene = Scenario { config: config.clone(), base_dir: PathBuf::from(".") }.build().unwrap();
    Simulator::new(scene, config.sim).unwrap()
}

fn run(sim: &mut Simulator, steps: usize) -> Vec<StepMetrics> {
    (0..steps).map(|_| sim.step().unwrap_or_else(|e| panic!("step {}: {e}", sim.state.step))).collect()
}

fn two_patches(mode: TruncationMode, cd_every: usize) -> String {
    format!(
        r#"{{
  "seed": 3,
  "sim": {{ "dt": 0.01, "n_iter": 10, "cd_every": {cd_every}, "r_c": 0.002, "r_q": 0.004,
           "truncation_mode": "{}", "k_c": 500.0, "elastic_mu": 50.0, "vertex_mass": 1e-4 }},
  "objects": [
    {{ "kind": "static", "shape": {{ "type": "grid", "size": [0.4, 0.4], "resolution": [2, 2] }} }},
    {{ "kind": "deformable", "shape": {{ "type": "grid", "size": [0.15, 0.15], "resolution": [8, 8] }},
       "transform": {{ "translate": [0.0, 0.02, 0.0] }}, "jitter": 1e-4 }},
    {{ "kind": "deformable", "shape": {{ "type": "grid", "size": [0.12, 0.12], "resolution": [8, 8] }},
       "transform": {{ "rotate": [0.0, 0.4, 0.0], "translate": [0.01, 0.04, 0.0] }}, "velocity": [0.0, -0.5, 0.0] }}
  ]
}}"#,
        mode.name()
    )
}

#[test]
fn stacked_patches_stay_penetration_free_in_every_mode() {
    for mode in TruncationMode::ALL {
        let mut sim = simulator(&two_patches(mode, 5));
        let before = sim.state.positions.clone();
        let m = run(&mut sim, 100);
        assert!(m.iter().all(|m| m.min_separation > 0.0), "{}", mode.name());
        assert!(m.iter().any(|m| m.n_pairs > 0), "{}: no contact ever", mode.name());
        // the top patch really came down
        let drop = before.iter().zip(&sim.state.positions).map(|(a, b)| a.y - b.y).fold(0.0, f64::max);
        assert!(drop > 0.01, "{}: {drop}", mode.name());
    }
}

#[test]
fn collision_detection_every_step_is_also_clean() {
    for cd in [1, 5] {
        let mut sim = simulator(&two_patches(TruncationMode::Planar, cd));
        run(&mut sim, 60);
        assert!(sim.tets_keep_orientation());
    }
}

#[test]
fn runs_are_bitwise_reproducible() {
    let go = |threads: usize| -> (SimState, Vec<StepMetrics>) {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut sim = simulator(&two_patches(TruncationMode::Dap, 5));
            let m = run(&mut sim, 30);
            (sim.state, m)
        })
    };
    let a = go(1);
    assert_eq!(a, go(1));
    assert_eq!(a, go(4));
}

#[test]
fn free_motion_keeps_its_velocity() {
    let json = r#"{
  "sim": { "dt": 0.01, "n_iter": 20, "r_c": 0.01, "r_q": 0.02, "gravity": [0, 0, 0] },
  "objects": [
    { "kind": "deformable", "shape": { "type": "grid", "size": [0.1, 0.1], "resolution": [4, 4] },
      "velocity": [0.3, -0.1, 0.2] }
  ]
}"#;
    let mut sim = simulator(json);
    // |v|·dt stays under the step bound 0.5·γ·r_q
    let v0 = Vec3::new(0.3, -0.1, 0.2);
    let start = sim.state.positions.clone();
    let m = run(&mut sim, 20);
    for v in &sim.state.velocities {
        assert!((v - v0).norm() <= 1e-9, "{v:?}");
    }
    for (a, b) in start.iter().zip(&sim.state.positions) {
        assert!(((b - a) - v0 * 0.2).norm() <= 1e-9);
    }
    // the sheet's own non-adjacent pairs are in range, yet a rigid
    // translation is never truncated
    assert!(m.iter().all(|m| m.n_pairs > 0 && m.mean_t_v == 1.0 && m.mean_preserved == 1.0), "{:?}", m[0]);
    let ke = 0.5 * 1e-3 * v0.norm_squared() * sim.state.positions.len() as f64;
    assert!((m.last().unwrap().kinetic_energy - ke).abs() <= 1e-12);
}

#[test]
fn every_shape_builds() {
    let json = r#"{
  "sim": { "r_c": 0.01, "r_q": 0.02 },
  "objects": [
    { "kind": "static", "shape": { "type": "grid", "size": [1, 1], "resolution": [3, 2] } },
    { "kind": "rigid", "shape": { "type": "box", "size": [0.1, 0.2, 0.3] }, "transform": { "translate": [0, 1, 0] } },
    { "kind": "deformable", "shape": { "type": "spiral", "inner_radius": 0.01, "pitch": 0.01, "turns": 2,
      "width": 0.05, "resolution": [20, 2] }, "transform": { "translate": [2, 0, 0] } },
    { "kind": "deformable", "shape": { "type": "tet_box", "size": [0.1, 0.1, 0.1], "resolution": [2, 2, 2] },
      "transform": { "translate": [0, 3, 0] } },
    { "kind": "static", "shape": { "type": "triangle", "vertices": [[0, 5, 0], [1, 5, 0], [0, 5, 1]] } },
    { "kind": "deformable", "shape": { "type": "point", "position": [0, 6, 0] } },
    { "kind": "animated", "shape": { "type": "gear", "radius": 0.05, "tooth_depth": 0.01, "teeth": 6,
      "thickness": 0.02 }, "transform": { "translate": [0, 7, 0] },
      "motion": { "rates": { "angular_velocity": [0, 0, 1], "velocity": [0, 0, 0] } } }
  ]
}"#;
    let config = Scenario::parse(json, "shapes").unwrap();
    let scene = Scenario { config, base_dir: PathBuf::from(".") }.build().unwrap();
    assert_eq!(scene.bodies.len(), 7);
    assert!(!scene.mesh.tets.is_empty());
    let n = scene.mesh.n_vertices();
    assert_eq!(scene.bodies.last().unwrap().vertices.end, n);
    for w in scene.bodies.windows(2) {
        assert_eq!(w[0].vertices.end, w[1].vertices.start);
    }
    let mut sim = Simulator::new(scene, Default::default()).unwrap();
    run(&mut sim, 3);
    assert!(ccd_linear(&sim.state.positions, &vec![Vec3::zeros(); n], &sim.scene.mesh).is_clear());
}

fn random_rigid(rng: &mut impl Rng) -> (RigidPose, RigidIncrement, Vec<Vec<DivisionPlane>>) {
    let n = rng.gen_range(1..8);
    let size = rng.gen_range(0.05..1.0);
    let pose = RigidPose {
        theta: random_unit(rng) * rng.gen_range(0.0..3.0),
        x: random_unit(rng),
        ref_vertices: (0..n).map(|_| random_unit(rng) * size * rng.gen::<f64>()).collect(),
    };
    let incr = RigidIncrement {
        delta_theta: random_unit(rng) * rng.gen_range(0.0..3.0),
        delta_x: random_unit(rng) * rng.gen_range(0.0..1.0),
    };
    let planes = (0..n)
        .map(|i| {
            let x0 = eval_trajectory(&pose, &incr, i, 0.0);
            (0..rng.gen_range(0..4))
                .map(|_| {
                    let nrm = random_unit(rng);
                    DivisionPlane { normal: nrm, point: x0 - nrm * rng.gen_range(1e-3..0.5) }
                })
                .collect()
        })
        .collect();
    (pose, incr, planes)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 300, ..ProptestConfig::default() })]

    #[test]
    fn truncated_rigid_increment_passes_the_sampled_oracle(seed in any::<u64>(), r_q in 0.01f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (pose, incr, planes) = random_rigid(&mut rng);
        let cfg = CurvedTruncConfig::default();
        let out = rigid_truncate(&[(pose.clone(), incr)], std::slice::from_ref(&planes), r_q, &cfg);
        let t = out.t_b[0];
        prop_assert!((0.0..=cfg.gamma_r).contains(&t));
        prop_assert_eq!(out.increments[0], incr.scaled(t));
        let report = ccd_sampled_rigid(&pose, &out.increments[0], &planes, 20_000);
        prop_assert!(report.is_clear(), "t_b {} hit {:?} at {:?}", t, report.pair, report.toi);
        // and every vertex stays inside the step ball
        for i in 0..pose.ref_vertices.len() {
            let x0 = eval_trajectory(&pose, &out.increments[0], i, 0.0);
            for k in 1..=200 {
                let x = eval_trajectory(&pose, &out.increments[0], i, k as f64 / 200.0);
                prop_assert!((x - x0).norm() <= 0.5 * cfg.gamma_r * r_q * (1.0 + 1e-9));
            }
        }
    }
}
