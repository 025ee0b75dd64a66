//! Scenario runner and benchmark front end: loads a JSON scene, steps it,
//! and writes OBJ frames plus CSV metrics; runs the random-triangle
//! benchmark and writes its CSVs.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use dat_core::mesh::format_obj;
use dat_core::scenario::Scenario;
use dat_core::sim::{SimError, Simulator, StepMetrics, StepTimings};
use dat_core::verify::bench::{
    format_table, run_random_triangle_benchmark, BenchmarkParams, BenchmarkStats, DeformKind,
};
use dat_core::TruncationMode;
use serde::Serialize;

/// Benchmarks with more sample rows than this skip the samples CSV unless
/// forced.
pub const MAX_SAMPLE_ROWS: usize = 20_000_000;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config: PathBuf,
    pub frames: Option<usize>,
    pub mode: Option<TruncationMode>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub name: String,
    pub out_dir: PathBuf,
    pub frames: usize,
    pub steps: usize,
    pub min_separation: f64,
    pub metrics: Vec<StepMetrics>,
    /// Set when the oracle stopped the run.
    pub failure: Option<String>,
}

impl RunSummary {
    pub fn line(&self) -> String {
        match &self.failure {
            None => format!(
                "{}: {} frames, {} steps, min separation {:.3e}, oracle clean",
                self.name, self.frames, self.steps, self.min_separation
            ),
            Some(f) => format!("{}: FAILED after {} steps: {}", self.name, self.steps, f),
        }
    }
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(k) = workers {
        b = b.num_threads(k.max(1));
    }
    b.build().context("building the worker pool")
}

#[derive(Serialize)]
struct TimingRow {
    step: usize,
    collision: f64,
    solve: f64,
    truncate: f64,
    oracle: f64,
}

fn write_frame(sim: &Simulator, dir: &Path, frame: usize) -> Result<()> {
    let text = format_obj(&sim.scene.mesh, &sim.state.positions)?;
    let path = dir.join(format!("frame_{frame:06}.obj"));
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

/// Runs a scenario, writing `frame_%06d.obj` (frame 0 is the initial
/// state), `metrics.csv` (deterministic) and `timings.csv` (wall clock).
/// A penetration or inversion caught by the oracle ends the run early and
/// is reported in `failure`.
pub fn run_scenario(opts: &RunOptions) -> Result<RunSummary> {
    let scenario = Scenario::load(&opts.config)?;
    let mut cfg = scenario.config.clone();
    if let Some(f) = opts.frames {
        cfg.frames = f;
    }
    if let Some(m) = opts.mode {
        cfg.sim.truncation_mode = m;
    }
    let name = if cfg.name.is_empty() {
        opts.config.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    } else {
        cfg.name.clone()
    };
    let out_dir = match (&opts.out, &cfg.output_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) if o.is_relative() => scenario.base_dir.join(o),
        (None, Some(o)) => o.clone(),
        (None, None) => PathBuf::from("out").join(&name),
    };
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let scenario = Scenario { config: cfg.clone(), base_dir: scenario.base_dir };
    let scene = scenario.build()?;
    let pool = pool(opts.workers)?;
    pool.install(|| {
        let mut sim = Simulator::new(scene, cfg.sim.clone())?;
        let mut metrics_w = csv::Writer::from_path(out_dir.join("metrics.csv"))?;
        let mut timings_w = csv::Writer::from_path(out_dir.join("timings.csv"))?;
        write_frame(&sim, &out_dir, 0)?;
        let mut metrics = Vec::new();
        let mut failure = None;
        'frames: for frame in 1..=cfg.frames {
            for _ in 0..cfg.steps_per_frame.max(1) {
                sim.timings = StepTimings::default();
                let t0 = Instant::now();
                match sim.step() {
                    Ok(m) => {
                        log::debug!("step {} ({:.3}s): {:?}", m.step, t0.elapsed().as_secs_f64(), m);
                        metrics_w.serialize(m)?;
                        let t = sim.timings;
                        timings_w.serialize(TimingRow {
                            step: m.step,
                            collision: t.collision,
                            solve: t.solve,
                            truncate: t.truncate,
                            oracle: t.oracle,
                        })?;
                        metrics.push(m);
                    }
                    Err(e @ (SimError::Penetration { .. } | SimError::Inversion { .. })) => {
                        log::error!("{e}");
                        failure = Some(e.to_string());
                        break 'frames;
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            write_frame(&sim, &out_dir, frame)?;
        }
        metrics_w.flush()?;
        timings_w.flush()?;
        let min_separation = metrics.iter().map(|m| m.min_separation).fold(f64::INFINITY, f64::min);
        Ok(RunSummary {
            name: name.clone(),
            out_dir: out_dir.clone(),
            frames: cfg.frames,
            steps: metrics.len(),
            min_separation,
            metrics,
            failure,
        })
    })
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub params: BenchmarkParams,
    pub out: PathBuf,
    pub workers: Option<usize>,
    /// `None`: write samples when they fit under [`MAX_SAMPLE_ROWS`].
    pub samples: Option<bool>,
}

pub fn sample_rows(p: &BenchmarkParams) -> usize {
    p.n_meshes * p.n_tris * 3 * p.n_deforms * 2 * 3
}

/// Runs the benchmark and writes `samples.csv` (`mode, deform_kind,
/// vertex_id, preserved_fraction`) and `stats.csv` (one row per statistic,
/// one column per ratio).
pub fn run_bench(opts: &BenchOptions) -> Result<BenchmarkStats> {
    let mut params = opts.params;
    params.keep_samples = opts.samples.unwrap_or(sample_rows(&params) <= MAX_SAMPLE_ROWS);
    if !params.keep_samples {
        log::warn!("skipping samples.csv ({} rows)", sample_rows(&params));
    }
    fs::create_dir_all(&opts.out).with_context(|| format!("creating {}", opts.out.display()))?;
    let stats = pool(opts.workers)?.install(|| run_random_triangle_benchmark(&params));
    if params.keep_samples {
        write_samples(&stats, &opts.out.join("samples.csv"))?;
    }
    write_stats(&stats, &opts.out.join("stats.csv"))?;
    let mut f = File::create(opts.out.join("table.txt"))?;
    f.write_all(format_table(&stats).as_bytes())?;
    Ok(stats)
}

pub fn write_samples(stats: &BenchmarkStats, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["mode", "deform_kind", "vertex_id", "preserved_fraction"])?;
    for s in &stats.samples {
        w.write_record([s.mode.name(), s.kind.name(), &s.vertex_id.to_string(), &s.preserved_fraction.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_stats(stats: &BenchmarkStats, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let cols = [
        ("planar_over_isotropic", DeformKind::Linear),
        ("planar_over_isotropic", DeformKind::RotLin),
        ("planar_over_ccd", DeformKind::Linear),
        ("planar_over_ccd", DeformKind::RotLin),
    ];
    let mut header = vec!["statistic".to_string()];
    header.extend(cols.iter().map(|(r, k)| format!("{r}_{}", k.name())));
    w.write_record(&header)?;
    let pick = |i: usize| match i {
        0 => &stats.planar_over_isotropic[0],
        1 => &stats.planar_over_isotropic[1],
        2 => &stats.planar_over_ccd[0],
        _ => &stats.planar_over_ccd[1],
    };
    for r in 0..7 {
        let mut row = vec![pick(0).rows()[r].0.to_string()];
        row.extend((0..4).map(|i| pick(i).rows()[r].1.to_string()));
        w.write_record(&row)?;
    }
    let mut row = vec!["count".to_string()];
    row.extend((0..4).map(|i| pick(i).count.to_string()));
    w.write_record(&row)?;
    w.flush()?;
    Ok(())
}
