//! Divide-and-project: per-vertex projection of the proposed position onto
//! the vertex's half-space polytope in a metric `M`, using Dykstra's
//! alternating projections, followed by a planar truncation pass.

use rayon::prelude::*;
use thiserror::Error;

use crate::broadphase::ContactSet;
use crate::dat::{collect_pairs, pair_vertex_planes, planar_dat, DatConfig, TruncationResult, ROOM_SHARE_FLOOR};
use crate::geom::DivisionPlane;
use crate::mesh::TriMesh;
use crate::{Mat3, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectError {
    #[error("metric is not symmetric (asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("metric is not positive definite")]
    NotPositiveDefinite,
    #[error("expected {expected} metrics, got {got}")]
    MetricCount { expected: usize, got: usize },
}

/// Symmetric positive-definite 3×3 metric with its inverse cached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpdMetric3 {
    m: Mat3,
    inv: Mat3,
}

impl SpdMetric3 {
    pub fn new(m: Mat3) -> Result<Self, ProjectError> {
        let scale = m.abs().max().max(f64::MIN_POSITIVE);
        let asym = (m - m.transpose()).abs().max();
        if asym > 1e-12 * scale {
            return Err(ProjectError::NotSymmetric(asym));
        }
        let chol = nalgebra::Cholesky::new(m).ok_or(ProjectError::NotPositiveDefinite)?;
        let inv = chol.inverse();
        if !inv.iter().all(|x| x.is_finite()) {
            return Err(ProjectError::NotPositiveDefinite);
        }
        Ok(SpdMetric3 { m, inv })
    }

    pub fn identity() -> Self {
        SpdMetric3 { m: Mat3::identity(), inv: Mat3::identity() }
    }

    pub fn scaled_identity(s: f64) -> Result<Self, ProjectError> {
        Self::new(Mat3::identity() * s)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.m
    }

    pub fn inverse(&self) -> &Mat3 {
        &self.inv
    }

    pub fn norm(&self, v: &Vec3) -> f64 {
        v.dot(&(self.m * v)).max(0.0).sqrt()
    }
}

/// `{x : n·(x − p) ≥ 0}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfSpace {
    pub normal: Vec3,
    pub point: Vec3,
}

impl HalfSpace {
    pub fn violation(&self, x: &Vec3) -> f64 {
        self.normal.dot(&(x - self.point))
    }
}

impl From<DivisionPlane> for HalfSpace {
    fn from(p: DivisionPlane) -> Self {
        HalfSpace { normal: p.normal, point: p.point }
    }
}

/// Constraints plus the per-constraint Dykstra corrections `M⁻¹λ_i`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HalfSpaceSet {
    pub constraints: Vec<HalfSpace>,
    pub corrections: Vec<Vec3>,
}

impl HalfSpaceSet {
    pub fn new(constraints: Vec<HalfSpace>) -> Self {
        let corrections = vec![Vec3::zeros(); constraints.len()];
        HalfSpaceSet { constraints, corrections }
    }
}

/// M-norm closest point of the half-space to `x`.
pub fn project_halfspace_metric(x: Vec3, plane: &HalfSpace, m: &SpdMetric3) -> Vec3 {
    let s = plane.violation(&x);
    if s >= 0.0 {
        return x;
    }
    let mn = m.inverse() * plane.normal;
    x - mn * (s / plane.normal.dot(&mn))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DykstraResult {
    pub x: Vec3,
    pub converged: bool,
    pub sweeps: usize,
}

pub const DYKSTRA_TOL: f64 = 1e-10;
pub const DYKSTRA_MAX_SWEEPS: usize = 200;

/// Dykstra's algorithm in the metric `M`: for each set `i` in order,
/// `y = x + c_i`, `x ← P_i(y)`, `c_i ← y − x`. Stops once a full sweep
/// moves `x` by less than `tol` in the M-norm. The corrections are left in
/// `set` so a caller can warm-start.
pub fn dykstra_project(x0: Vec3, set: &mut HalfSpaceSet, m: &SpdMetric3, max_iters: usize, tol: f64) -> DykstraResult {
    set.corrections.resize(set.constraints.len(), Vec3::zeros());
    if set.constraints.iter().all(|c| c.violation(&x0) >= 0.0) && set.corrections.iter().all(|c| *c == Vec3::zeros()) {
        return DykstraResult { x: x0, converged: true, sweeps: 0 };
    }
    let mut x = x0;
    for sweep in 1..=max_iters {
        let before = x;
        // the corrections must also have settled, otherwise a sweep that
        // happens to return to the same point would stop early
        let mut corr_change = 0.0f64;
        for (c, corr) in set.constraints.iter().zip(set.corrections.iter_mut()) {
            let y = x + *corr;
            x = project_halfspace_metric(y, c, m);
            let new = y - x;
            corr_change = corr_change.max(m.norm(&(new - *corr)));
            *corr = new;
        }
        if m.norm(&(x - before)) < tol && corr_change < tol {
            return DykstraResult { x, converged: true, sweeps: sweep };
        }
    }
    DykstraResult { x, converged: false, sweeps: max_iters }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DapOutput {
    /// Projected displacement before the trailing truncation.
    pub projected: Vec<Vec3>,
    /// Final truncation of `projected`.
    pub truncation: TruncationResult,
    pub non_converged: usize,
}

/// Per-vertex half-spaces of all pairs, ordered by pair id. `None` marks a
/// vertex involved in a touching pair (it must not move).
pub fn vertex_constraints(
    mesh: &TriMesh,
    positions: &[Vec3],
    delta: &[Vec3],
    contacts: &ContactSet,
    config: &DatConfig,
) -> Vec<Option<Vec<HalfSpace>>> {
    let pairs = collect_pairs(mesh, contacts, config.enable_inversion);
    let per_pair: Vec<_> = pairs
        .par_iter()
        .map(|(_, p)| (p.vertices(), pair_vertex_planes(p, positions, delta, config.lambda_policy, ROOM_SHARE_FLOOR)))
        .collect();
    let mut out: Vec<Option<Vec<HalfSpace>>> = vec![Some(Vec::new()); delta.len()];
    for (verts, r) in per_pair {
        match r {
            Ok(planes) => {
                for (v, pl) in planes {
                    if let Some(list) = out[v].as_mut() {
                        list.push(pl.into());
                    }
                }
            }
            Err(_) => {
                for v in verts {
                    out[v] = None;
                }
            }
        }
    }
    out
}

/// Divide-and-project step: Dykstra per vertex toward `x_v + Δx_v`, then a
/// planar truncation of the projected displacement as the safety net.
pub fn dap_step(
    mesh: &TriMesh,
    positions: &[Vec3],
    delta: &[Vec3],
    contacts: &ContactSet,
    metrics: &[SpdMetric3],
    config: &DatConfig,
) -> Result<DapOutput, ProjectError> {
    if metrics.len() != delta.len() {
        return Err(ProjectError::MetricCount { expected: delta.len(), got: metrics.len() });
    }
    let cons = vertex_constraints(mesh, positions, delta, contacts, config);
    let projected: Vec<(Vec3, bool)> = (0..delta.len())
        .into_par_iter()
        .map(|v| match &cons[v] {
            None => (Vec3::zeros(), true),
            Some(list) if list.is_empty() => (delta[v], true),
            Some(list) => {
                let mut set = HalfSpaceSet::new(list.clone());
                let r =
                    dykstra_project(positions[v] + delta[v], &mut set, &metrics[v], DYKSTRA_MAX_SWEEPS, DYKSTRA_TOL);
                (r.x - positions[v], r.converged)
            }
        })
        .collect();
    let non_converged = projected.iter().filter(|(_, c)| !c).count();
    let projected: Vec<Vec3> = projected.into_iter().map(|(d, _)| d).collect();
    let truncation = planar_dat(mesh, positions, &projected, contacts, config);
    Ok(DapOutput { projected, truncation, non_converged })
}
