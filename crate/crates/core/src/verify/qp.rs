//! Brute-force metric projection onto a small half-space polytope: every
//! active set of at most three constraints is solved through its KKT
//! system and the best feasible candidate is kept.

use nalgebra::{DMatrix, DVector};

use crate::project::{HalfSpace, SpdMetric3};
use crate::verify::VerifyError;
use crate::Vec3;

pub const MAX_HALFSPACES: usize = 8;

pub fn qp_oracle(x0: Vec3, halfspaces: &[HalfSpace], m: &SpdMetric3) -> Result<Vec3, VerifyError> {
    if halfspaces.len() > MAX_HALFSPACES {
        return Err(VerifyError::TooManyConstraints(halfspaces.len()));
    }
    let scale = 1.0 + x0.norm() + halfspaces.iter().map(|h| h.point.norm()).fold(0.0, f64::max);
    let feasible = |x: &Vec3| halfspaces.iter().all(|h| h.violation(x) >= -1e-9 * scale);
    let objective = |x: &Vec3| m.norm(&(x - x0));
    let n = halfspaces.len();
    let mut best: Option<(f64, Vec3)> = None;
    let mut consider = |x: Vec3| {
        if feasible(&x) {
            let f = objective(&x);
            if best.is_none_or(|b| f < b.0) {
                best = Some((f, x));
            }
        }
    };
    consider(x0);
    let minv = m.inverse();
    for mask in 1u32..(1 << n) {
        if mask.count_ones() > 3 {
            continue;
        }
        let act: Vec<&HalfSpace> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| &halfspaces[i]).collect();
        let k = act.len();
        // x = x0 + M⁻¹ N λ with Nᵀ x = b  =>  (Nᵀ M⁻¹ N) λ = b − Nᵀ x0
        let g = DMatrix::from_fn(k, k, |i, j| act[i].normal.dot(&(minv * act[j].normal)));
        let rhs = DVector::from_fn(k, |i, _| act[i].normal.dot(&(act[i].point - x0)));
        // skip (nearly) dependent normals
        let diag: f64 = (0..k).map(|i| g[(i, i)]).product();
        if g.determinant().abs() <= 1e-12 * diag {
            continue;
        }
        let Some(lambda) = g.lu().solve(&rhs) else {
            continue;
        };
        let mut x = x0;
        for (i, h) in act.iter().enumerate() {
            x += minv * h.normal * lambda[i];
        }
        consider(x);
    }
    best.map(|b| b.1).ok_or(VerifyError::Infeasible)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Mat3;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    fn hs(n: Vec3, p: Vec3) -> HalfSpace {
        HalfSpace { normal: n.normalize(), point: p }
    }

    #[test]
    fn matches_dykstra_examples() {
        let id = SpdMetric3::identity();
        let x = qp_oracle(
            v(-1.0, -1.0, 0.0),
            &[hs(v(1.0, 0.0, 0.0), Vec3::zeros()), hs(v(0.0, 1.0, 0.0), Vec3::zeros())],
            &id,
        )
        .unwrap();
        assert!(x.norm() < 1e-15);
        let x = qp_oracle(
            v(0.0, 1.0, 0.0),
            &[hs(v(1.0, -1.0, 0.0), Vec3::zeros()), hs(v(1.0, 1.0, 0.0), Vec3::zeros())],
            &id,
        )
        .unwrap();
        assert!((x - v(0.5, 0.5, 0.0)).norm() < 1e-15);
        let m = SpdMetric3::new(Mat3::from_diagonal(&v(1.0, 1.0, 4.0))).unwrap();
        let x = qp_oracle(v(1.0, 0.0, -1.0), &[hs(v(0.0, 0.0, 1.0), Vec3::zeros())], &m).unwrap();
        assert!((x - v(1.0, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn infeasible_is_error() {
        let r = qp_oracle(
            Vec3::zeros(),
            &[hs(v(1.0, 0.0, 0.0), v(1.0, 0.0, 0.0)), hs(v(-1.0, 0.0, 0.0), v(-1.0, 0.0, 0.0))],
            &SpdMetric3::identity(),
        );
        assert_eq!(r, Err(VerifyError::Infeasible));
    }
}
