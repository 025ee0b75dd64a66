//! Random-triangle benchmark: how much of a proposed displacement each
//! truncation mode keeps, and planar-over-isotropic / planar-over-CCD
//! per-vertex ratios.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::broadphase::{min_distance_per_primitive, query_contact_set};
use crate::dat::{isotropic_radii, isotropic_truncate, planar_dat, DatConfig};
use crate::geom::rodrigues;
use crate::mesh::{build_adjacency, TriMesh};
use crate::sim::global_ccd_truncate;
use crate::verify::random::{random_soup, random_unit, SoupParams};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchmarkParams {
    pub seed: u64,
    pub n_meshes: usize,
    pub n_tris: usize,
    pub n_deforms: usize,
    /// Deformation magnitude as a fraction of the soup extent.
    pub deform_scale: f64,
    /// `r_q = r_q_factor · deform_scale · extent`.
    pub r_q_factor: f64,
    pub gamma_r: f64,
    /// Triangle size as a fraction of the extent.
    pub tri_size: f64,
    /// Minimum gap between triangles, in units of `deform_scale · extent`.
    pub margin_factor: f64,
    pub keep_samples: bool,
}

impl Default for BenchmarkParams {
    fn default() -> Self {
        BenchmarkParams {
            seed: 0,
            n_meshes: 10,
            n_tris: 3000,
            n_deforms: 100,
            deform_scale: 0.01,
            r_q_factor: 2.0,
            gamma_r: 0.9,
            tri_size: 0.1,
            margin_factor: 0.01,
            keep_samples: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DeformKind {
    Linear,
    RotLin,
}

impl DeformKind {
    pub const ALL: [DeformKind; 2] = [DeformKind::Linear, DeformKind::RotLin];

    pub fn name(self) -> &'static str {
        match self {
            DeformKind::Linear => "linear",
            DeformKind::RotLin => "rot_lin",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchMode {
    Isotropic,
    Planar,
    Ccd,
}

impl BenchMode {
    pub const ALL: [BenchMode; 3] = [BenchMode::Isotropic, BenchMode::Planar, BenchMode::Ccd];

    pub fn name(self) -> &'static str {
        match self {
            BenchMode::Isotropic => "isotropic",
            BenchMode::Planar => "planar",
            BenchMode::Ccd => "ccd",
        }
    }
}

/// Summary of a ratio sample, nearest-rank percentiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioStats {
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    pub p75: f64,
    pub p90: f64,
    pub p95: f64,
    pub p99: f64,
    pub count: usize,
}

impl RatioStats {
    pub fn from_samples(mut v: Vec<f32>) -> Self {
        if v.is_empty() {
            return RatioStats {
                mean: f64::NAN,
                median: f64::NAN,
                max: f64::NAN,
                p75: f64::NAN,
                p90: f64::NAN,
                p95: f64::NAN,
                p99: f64::NAN,
                count: 0,
            };
        }
        let mean = v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
        v.sort_by(f32::total_cmp);
        let pct = |p: f64| {
            let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
            v[rank.clamp(1, v.len()) - 1] as f64
        };
        RatioStats {
            mean,
            median: pct(50.0),
            max: *v.last().unwrap() as f64,
            p75: pct(75.0),
            p90: pct(90.0),
            p95: pct(95.0),
            p99: pct(99.0),
            count: v.len(),
        }
    }

    /// `(label, value)` rows in table order.
    pub fn rows(&self) -> [(&'static str, f64); 7] {
        [
            ("mean", self.mean),
            ("median", self.median),
            ("max", self.max),
            ("p75", self.p75),
            ("p90", self.p90),
            ("p95", self.p95),
            ("p99", self.p99),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchSample {
    pub mode: BenchMode,
    pub kind: DeformKind,
    pub vertex_id: u64,
    pub preserved_fraction: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkStats {
    pub params: BenchmarkParams,
    /// Indexed by `DeformKind as usize`.
    pub planar_over_isotropic: [RatioStats; 2],
    pub planar_over_ccd: [RatioStats; 2],
    /// `[kind][mode]` mean preserved fraction.
    pub mean_preserved: [[f64; 3]; 2],
    /// Number of triangles actually placed per mesh.
    pub tris_per_mesh: Vec<usize>,
    #[serde(skip)]
    pub samples: Vec<BenchSample>,
}

/// Preserved fractions of one deformation under each mode.
struct CaseResult {
    pf: [Vec<f32>; 3],
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn deformation(rng: &mut impl Rng, mesh: &TriMesh, kind: DeformKind, s: f64) -> Vec<Vec3> {
    match kind {
        DeformKind::Linear => {
            (0..mesh.n_vertices()).map(|_| random_unit(rng) * (s * rng.gen::<f64>().cbrt())).collect()
        }
        DeformKind::RotLin => {
            let mut d = vec![Vec3::zeros(); mesh.n_vertices()];
            for t in &mesh.triangles {
                let c = t.iter().map(|&i| mesh.positions[i]).sum::<Vec3>() / 3.0;
                let r = t.iter().map(|&i| (mesh.positions[i] - c).norm()).fold(0.0, f64::max);
                let dx = random_unit(rng) * (s * rng.gen::<f64>().cbrt());
                let dth = random_unit(rng) * (rng.gen::<f64>() * s / r);
                for &i in t {
                    let x = mesh.positions[i];
                    d[i] = rodrigues(dth, x - c) + c + dx - x;
                }
            }
            d
        }
    }
}

pub fn run_random_triangle_benchmark(params: &BenchmarkParams) -> BenchmarkStats {
    let extent = 1.0;
    let s = params.deform_scale * extent;
    let r_q = (params.r_q_factor * s).max(1e-12);
    let cfg = DatConfig { gamma_r: params.gamma_r, r_q, lambda_policy: Default::default(), enable_inversion: false };

    let mut ratios_iso: [Vec<f32>; 2] = Default::default();
    let mut ratios_ccd: [Vec<f32>; 2] = Default::default();
    let mut pf_sum = [[0.0f64; 3]; 2];
    let mut pf_n = [0usize; 2];
    let mut samples = Vec::new();
    let mut tris_per_mesh = Vec::new();

    for m in 0..params.n_meshes {
        let mut rng = rng_for(params.seed, m as u64);
        let mesh = random_soup(
            &mut rng,
            &SoupParams {
                n_tris: params.n_tris,
                extent,
                tri_size: params.tri_size * extent,
                margin: (params.margin_factor * s).max(1e-9),
                max_attempts: 500 * params.n_tris.max(1),
            },
        );
        tris_per_mesh.push(mesh.triangles.len());
        log::info!("mesh {m}: {} triangles", mesh.triangles.len());
        let adj = build_adjacency(&mesh);
        let contacts = query_contact_set(&mesh, &mesh.positions, r_q);
        let dmin = min_distance_per_primitive(&mesh, &mesh.positions, 10.0 * r_q);
        let radii = isotropic_radii(&dmin, params.gamma_r, r_q);

        for (ki, &kind) in DeformKind::ALL.iter().enumerate() {
            let cases: Vec<CaseResult> = (0..params.n_deforms)
                .into_par_iter()
                .map(|k| {
                    let stream = ((m * params.n_deforms + k) as u64 + 1) << 1 | ki as u64;
                    let mut rng = rng_for(params.seed ^ 0x5e_ed0f_be4c, stream);
                    let delta = deformation(&mut rng, &mesh, kind, s);
                    let iso = isotropic_truncate(&adj, &delta, &radii);
                    let pla = planar_dat(&mesh, &mesh.positions, &delta, &contacts, &cfg);
                    let t = global_ccd_truncate(&mesh, &mesh.positions, &delta, params.gamma_r, false);
                    let ccd: Vec<f32> =
                        delta.iter().map(|d| if *d == Vec3::zeros() { 1.0 } else { t as f32 }).collect();
                    let to32 = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<f32>>();
                    CaseResult { pf: [to32(&iso.preserved_fraction), to32(&pla.preserved_fraction), ccd] }
                })
                .collect();
            for (k, c) in cases.iter().enumerate() {
                for v in 0..c.pf[1].len() {
                    let (i, p, cc) = (c.pf[0][v], c.pf[1][v], c.pf[2][v]);
                    pf_sum[ki][0] += i as f64;
                    pf_sum[ki][1] += p as f64;
                    pf_sum[ki][2] += cc as f64;
                    pf_n[ki] += 1;
                    if i > 0.0 {
                        ratios_iso[ki].push(p / i);
                    }
                    if cc > 0.0 {
                        ratios_ccd[ki].push(p / cc);
                    }
                    if params.keep_samples {
                        let id = ((m * params.n_deforms + k) * c.pf[1].len() + v) as u64;
                        for (mi, &mode) in BenchMode::ALL.iter().enumerate() {
                            samples.push(BenchSample { mode, kind, vertex_id: id, preserved_fraction: c.pf[mi][v] });
                        }
                    }
                }
            }
        }
    }
    let mean_preserved = std::array::from_fn(|k| std::array::from_fn(|mo| pf_sum[k][mo] / pf_n[k].max(1) as f64));
    let [iso_l, iso_r] = ratios_iso;
    let [ccd_l, ccd_r] = ratios_ccd;
    BenchmarkStats {
        params: *params,
        planar_over_isotropic: [RatioStats::from_samples(iso_l), RatioStats::from_samples(iso_r)],
        planar_over_ccd: [RatioStats::from_samples(ccd_l), RatioStats::from_samples(ccd_r)],
        mean_preserved,
        tris_per_mesh,
        samples,
    }
}

/// Plain-text table in the usual layout (rows: statistics, columns:
/// planar/isotropic and planar/CCD for both deformation kinds).
pub fn format_table(stats: &BenchmarkStats) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "{:<8} {:>14} {:>14} {:>14} {:>14}\n",
        "", "plan/iso lin", "plan/iso rot", "plan/ccd lin", "plan/ccd rot"
    ));
    let cols = [
        &stats.planar_over_isotropic[0],
        &stats.planar_over_isotropic[1],
        &stats.planar_over_ccd[0],
        &stats.planar_over_ccd[1],
    ];
    for r in 0..7 {
        let label = cols[0].rows()[r].0;
        s.push_str(&format!("{label:<8}"));
        for c in cols {
            s.push_str(&format!(" {:>14.3}", c.rows()[r].1));
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchmarkParams {
        BenchmarkParams { seed: 1, n_meshes: 1, n_tris: 60, n_deforms: 3, tri_size: 0.2, ..Default::default() }
    }

    #[test]
    fn zero_deformation_ratios_are_one() {
        let st = run_random_triangle_benchmark(&BenchmarkParams { deform_scale: 0.0, keep_samples: true, ..small() });
        for r in st.planar_over_isotropic.iter().chain(&st.planar_over_ccd) {
            assert_eq!((r.mean, r.max, r.median), (1.0, 1.0, 1.0));
        }
        assert!(st.samples.iter().all(|s| s.preserved_fraction == 1.0));
    }

    #[test]
    fn percentiles_monotone() {
        let r = RatioStats::from_samples((0..1000).map(|i| ((i * 7919) % 1000) as f32).collect());
        assert!(r.median <= r.p75 && r.p75 <= r.p90 && r.p90 <= r.p95 && r.p95 <= r.p99 && r.p99 <= r.max);
        assert_eq!(r.median, 499.0);
        assert_eq!(r.max, 999.0);
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let a = run_random_triangle_benchmark(&small());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| run_random_triangle_benchmark(&small()));
        assert_eq!(a, b);
    }
}
