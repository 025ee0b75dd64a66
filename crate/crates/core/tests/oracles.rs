//! Cross-checks between the exact oracles and independent brute-force ones,
//! plus mesh I/O round trips.

use std::collections::BTreeSet;

use dat_core::dat::{divide_ee, divide_vt, ROOM_SHARE_FLOOR};
use dat_core::mesh::{load_obj, write_obj_frame, TriMesh};
use dat_core::project::{dykstra_project, HalfSpaceSet};
use dat_core::verify::ccd::ccd_linear;
use dat_core::verify::qp::qp_oracle;
use dat_core::verify::random::{random_unit, triangle_distance};
use dat_core::verify::suites::random_projection_instance;
use dat_core::{LambdaPolicy, Vec3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn orient(a: Vec3, b: Vec3, c: Vec3, d: Vec3) -> f64 {
    (b - a).cross(&(c - a)).dot(&(d - a))
}

fn segment_hits_triangle(p: Vec3, q: Vec3, t: [Vec3; 3]) -> bool {
    let (sp, sq) = (orient(t[0], t[1], t[2], p), orient(t[0], t[1], t[2], q));
    if sp * sq > 0.0 || (sp == 0.0 && sq == 0.0) {
        return false;
    }
    let s = [orient(p, q, t[0], t[1]), orient(p, q, t[1], t[2]), orient(p, q, t[2], t[0])];
    s.iter().all(|&x| x >= 0.0) || s.iter().all(|&x| x <= 0.0)
}

/// Brute-force triangle-triangle intersection via the six edge-face tests.
fn triangles_intersect(a: [Vec3; 3], b: [Vec3; 3]) -> bool {
    (0..3).any(|i| segment_hits_triangle(a[i], a[(i + 1) % 3], b) || segment_hits_triangle(b[i], b[(i + 1) % 3], a))
}

fn two_triangles(rng: &mut impl Rng) -> (Vec<Vec3>, Vec<Vec3>) {
    loop {
        let p: Vec<Vec3> = (0..6).map(|_| random_unit(rng) * rng.gen_range(0.0..1.0)).collect();
        let a = [p[0], p[1], p[2]];
        let b = [p[3], p[4], p[5]];
        let area = |t: [Vec3; 3]| (t[1] - t[0]).cross(&(t[2] - t[0])).norm();
        // the feature distance alone misses interpenetrating pairs
        if area(a) > 1e-2 && area(b) > 1e-2 && !triangles_intersect(a, b) && triangle_distance(a, b) > 1e-3 {
            let d = (0..6).map(|_| random_unit(rng) * rng.gen_range(0.0..2.0)).collect();
            return (p, d);
        }
    }
}

fn at(p: &[Vec3], d: &[Vec3], t: f64) -> ([Vec3; 3], [Vec3; 3]) {
    let x = |i: usize| p[i] + d[i] * t;
    ([x(0), x(1), x(2)], [x(3), x(4), x(5)])
}

#[test]
fn ccd_linear_agrees_with_a_sampled_sweep() {
    const SUBSTEPS: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut crossings, mut hits) = (0, 0);
    for case in 0..10_000 {
        let (p, d) = two_triangles(&mut rng);
        let mesh = TriMesh::new(p.clone(), vec![[0, 1, 2], [3, 4, 5]], vec![], vec![]).unwrap();
        let report = ccd_linear(&p, &d, &mesh);
        let sampled = (1..=SUBSTEPS).map(|k| k as f64 / SUBSTEPS as f64).find(|&t| {
            let (a, b) = at(&p, &d, t);
            triangles_intersect(a, b)
        });
        if let Some(ts) = sampled {
            crossings += 1;
            let toi = report.toi.unwrap_or_else(|| panic!("case {case}: crossing at {ts} missed"));
            let (a, b) = at(&p, &d, toi);
            assert!(toi <= ts, "case {case}: toi {toi} after sampled crossing {ts}");
            // a much earlier toi must be a genuine graze
            assert!(ts - toi <= 1e-4 || triangle_distance(a, b) <= 1e-7, "case {case}: toi {toi} vs {ts}");
        }
        if let Some(toi) = report.toi {
            hits += 1;
            let (a, b) = at(&p, &d, toi);
            assert!(triangle_distance(a, b) <= 1e-7, "case {case}: hit at {toi} is not a contact");
        }
    }
    assert!(crossings > 1000, "{crossings}");
    assert!(hits >= crossings);
}

fn disjoint_pair(rng: &mut impl Rng, vt: bool) -> Option<(Vec<Vec3>, Vec<Vec3>)> {
    let p: Vec<Vec3> = (0..4).map(|_| random_unit(rng) * rng.gen_range(0.0..1.0)).collect();
    let d: Vec<Vec3> = (0..4).map(|_| random_unit(rng) * rng.gen_range(0.0..0.5)).collect();
    let ok = if vt {
        (p[1] - p[0]).cross(&(p[2] - p[0])).norm() > 1e-3
    } else {
        (p[1] - p[0]).norm() > 1e-3 && (p[3] - p[2]).norm() > 1e-3
    };
    ok.then_some((p, d))
}

fn policy(k: u8) -> LambdaPolicy {
    [LambdaPolicy::Half, LambdaPolicy::ProportionalOwn, LambdaPolicy::ProportionalOther][k as usize % 3]
}

fn share(mu: f64) -> f64 {
    mu.clamp(ROOM_SHARE_FLOOR, 1.0 - ROOM_SHARE_FLOOR)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 2000, ..ProptestConfig::default() })]

    #[test]
    fn vt_plane_strictly_separates(seed in any::<u64>(), k in any::<u8>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let Some((p, d)) = disjoint_pair(&mut rng, true) else { return Ok(()) };
        let tri = [p[0], p[1], p[2]];
        let div = divide_vt(p[3], d[3], tri, [d[0], d[1], d[2]], policy(k)).unwrap();
        let pl = div.with_share(share(div.mu));
        prop_assert!((pl.normal.norm() - 1.0).abs() < 1e-12);
        prop_assert!(pl.signed_distance(p[3]) > 0.0);
        for x in tri {
            prop_assert!(pl.signed_distance(x) < 0.0);
        }
    }

    #[test]
    fn ee_plane_strictly_separates(seed in any::<u64>(), k in any::<u8>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let Some((p, d)) = disjoint_pair(&mut rng, false) else { return Ok(()) };
        let Ok(div) = divide_ee([p[0], p[1]], [d[0], d[1]], [p[2], p[3]], [d[2], d[3]], policy(k)) else {
            return Ok(());
        };
        // side A (the first edge) is on the positive side
        let pl = div.with_share(share(div.mu));
        prop_assert!((pl.normal.norm() - 1.0).abs() < 1e-12);
        for x in [p[0], p[1]] {
            prop_assert!(pl.signed_distance(x) > 0.0);
        }
        for x in [p[2], p[3]] {
            prop_assert!(pl.signed_distance(x) < 0.0);
        }
    }

    #[test]
    fn dykstra_matches_the_qp_oracle_and_is_idempotent(seed in any::<u64>()) {
        let (x0, hs, m) = random_projection_instance(&mut ChaCha8Rng::seed_from_u64(seed));
        let want = qp_oracle(x0, &hs, &m).unwrap();
        let got = dykstra_project(x0, &mut HalfSpaceSet::new(hs.clone()), &m, 200_000, 1e-14);
        prop_assert!(m.norm(&(got.x - want)) <= 1e-6, "error {:e}", m.norm(&(got.x - want)));
        let again = dykstra_project(got.x, &mut HalfSpaceSet::new(hs), &m, 200_000, 1e-14);
        prop_assert!(m.norm(&(again.x - got.x)) <= 1e-10);
    }

    #[test]
    fn obj_round_trip_is_exact(seed in any::<u64>(), n_tris in 1usize..40, with_tets in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = n_tris + 3;
        let positions: Vec<Vec3> = (0..n)
            .map(|_| Vec3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() * 1e-7, rng.gen::<f64>() * 3e5))
            .collect();
        let mut tris = Vec::new();
        while tris.len() < n_tris {
            let t = [rng.gen_range(0..n), rng.gen_range(0..n), rng.gen_range(0..n)];
            if t[0] != t[1] && t[1] != t[2] && t[0] != t[2] {
                tris.push(t);
            }
        }
        let tets = if with_tets { vec![[0, 1, 2, 3]] } else { vec![] };
        let Ok(mesh) = TriMesh::new(positions, tris, vec![], vec![]) else { return Ok(()) };
        let vol = dat_core::mesh::tet_signed_volume(&mesh.positions, [0, 1, 2, 3]);
        let tets = if vol > 0.0 { tets } else { vec![] };
        let mesh = TriMesh { tets, ..mesh };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.obj");
        write_obj_frame(&mesh, &mesh.positions, &path).unwrap();
        let back = load_obj(&path).unwrap();
        let bits = |m: &TriMesh| m.positions.iter().flat_map(|p| p.iter().map(|x| x.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&mesh));
        prop_assert_eq!(&back.triangles, &mesh.triangles);
        prop_assert_eq!(&back.tets, &mesh.tets);
        let distinct: BTreeSet<(usize, usize)> = mesh
            .triangles
            .iter()
            .flat_map(|t| (0..3).map(move |i| (t[i].min(t[(i + 1) % 3]), t[i].max(t[(i + 1) % 3]))))
            .collect();
        prop_assert_eq!(back.edges.len(), distinct.len());
        prop_assert!(back.edges.iter().all(|e| distinct.contains(&(e[0], e[1]))));
    }
}
