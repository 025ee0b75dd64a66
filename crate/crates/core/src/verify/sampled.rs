//! Dense-sampling oracle for curved rigid paths. Only as good as its
//! sampling density: it can miss crossings shorter than one sample.

use crate::geom::{rodrigues, DivisionPlane};
use crate::rigid::{RigidIncrement, RigidPose};
use crate::verify::ccd::{CcdHit, CcdReport};
use crate::Vec3;

pub const DEFAULT_SAMPLES: usize = 100_000;

fn at(pose: &RigidPose, incr: &RigidIncrement, xhat: Vec3, t: f64) -> Vec3 {
    rodrigues(pose.theta + incr.delta_theta * t, xhat) + pose.x + incr.delta_x * t
}

/// Samples `t = k/samples` and reports the first sample at which a vertex
/// is on or past one of its planes (relative to its starting side).
/// `planes[i]` are the planes of body vertex `i`. `min_separation` is the
/// smallest side-relative signed distance seen.
pub fn ccd_sampled_rigid(
    pose: &RigidPose,
    incr: &RigidIncrement,
    planes: &[Vec<DivisionPlane>],
    samples: usize,
) -> CcdReport {
    let mut best: Option<(f64, CcdHit)> = None;
    let mut min_sep = f64::INFINITY;
    for (i, list) in planes.iter().enumerate() {
        let xhat = pose.ref_vertices[i];
        for (j, pl) in list.iter().enumerate() {
            let s0 = pl.signed_distance(at(pose, incr, xhat, 0.0));
            let sign = if s0 >= 0.0 { 1.0 } else { -1.0 };
            min_sep = min_sep.min(sign * s0);
            let limit = best.map(|b| b.0).unwrap_or(f64::INFINITY);
            for k in 1..=samples {
                let t = k as f64 / samples as f64;
                if t >= limit {
                    break;
                }
                let s = sign * pl.signed_distance(at(pose, incr, xhat, t));
                min_sep = min_sep.min(s);
                if s <= 0.0 {
                    best = Some((t, CcdHit::Plane { vertex: i, plane: j }));
                    break;
                }
            }
        }
    }
    CcdReport { toi: best.map(|b| b.0), pair: best.map(|b| b.1), min_separation: min_sep }
}
