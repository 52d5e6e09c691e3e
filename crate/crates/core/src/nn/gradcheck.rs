//! Central finite-difference gradient checking.
//!
//! The error measure is `|analytic − numeric| / max(1, |analytic|)`, maximised
//! over every checked coordinate. Callers evaluate in `f64` and keep the
//! point away from relu kinks and pooling ties (see the `kink_margin`
//! accessors on the relevant tapes).

use alloc::vec::Vec;

use crate::error::Result;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Coordinate at which the maximum occurred.
    pub worst: usize,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }

    /// Combines reports from independent checks, keeping the worst error.
    pub fn merge(self, other: GradCheckReport) -> GradCheckReport {
        let worst = if other.max_rel_err > self.max_rel_err { other } else { self };
        GradCheckReport {
            max_rel_err: worst.max_rel_err,
            worst: worst.worst,
            checked: self.checked + other.checked,
        }
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Compares `analytic` against central differences of the scalar `f` at `point`.
pub fn finite_diff_check(
    mut f: impl FnMut(&[f64]) -> f64,
    point: &[f64],
    analytic: &[f64],
    eps: f64,
) -> GradCheckReport {
    assert_eq!(point.len(), analytic.len(), "one analytic entry per coordinate");
    let mut x = point.to_vec();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: 0,
        checked: point.len(),
    };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let plus = f(&x);
        x[i] = orig - eps;
        let minus = f(&x);
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let e = rel_err(analytic[i], numeric);
        if e > report.max_rel_err || e.is_nan() {
            report.max_rel_err = if e.is_nan() { f64::INFINITY } else { e };
            report.worst = i;
        }
    }
    report
}

/// Flattens tensors into one coordinate vector.
pub fn pack(parts: &[&Tensor<f64>]) -> Vec<f64> {
    parts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

/// Inverse of [`pack`] for the given shapes.
pub fn unpack(flat: &[f64], shapes: &[Shape]) -> Result<Vec<Tensor<f64>>> {
    let mut out = Vec::with_capacity(shapes.len());
    let mut offset = 0;
    for s in shapes {
        let n = s.numel();
        out.push(Tensor::from_vec(*s, flat[offset..offset + n].to_vec())?);
        offset += n;
    }
    Ok(out)
}

/// `Σ out ⊙ r`; its gradient with respect to `out` is `r`.
pub fn projection_loss(out: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_self_test() {
        let f = |x: &[f64]| x.iter().map(|v| v * v * v).sum::<f64>();
        let p = [0.5, -1.0, 2.0];
        let analytic: Vec<f64> = p.iter().map(|v| 3.0 * v * v).collect();
        let r = finite_diff_check(f, &p, &analytic, 1e-4);
        assert!(r.max_rel_err < 1e-7, "{r:?}");
        let wrong = [0.0, 3.0, 12.0];
        let r = finite_diff_check(f, &p, &wrong, 1e-4);
        assert_eq!(r.worst, 0);
        assert!(r.max_rel_err > 0.5);
    }

    #[test]
    fn pack_unpack_round_trip() {
        let a = Tensor::<f64>::full(Shape::new(1, 2, 1, 1).unwrap(), 1.0);
        let b = Tensor::<f64>::full(Shape::new(1, 1, 1, 3).unwrap(), 2.0);
        let flat = pack(&[&a, &b]);
        let back = unpack(&flat, &[a.shape(), b.shape()]).unwrap();
        assert_eq!(back, alloc::vec![a, b]);
    }
}
