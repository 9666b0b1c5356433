use super::{NumericsError, Tensor};

/// Central-difference gradient of a scalar function.
pub fn finite_difference_grad(
    f: impl Fn(&Tensor) -> Result<f64, NumericsError>,
    x: &Tensor,
    eps: f64,
) -> Result<Tensor, NumericsError> {
    if !(eps > 0.0) {
        return Err(NumericsError::State(format!("finite-difference step must be positive, got {eps}")));
    }
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(NumericsError::NonFinite { op: "finite_difference_grad" });
        }
        out.push((plus - minus) / (2.0 * eps));
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Worst-case disagreement between an analytic and a numeric gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    /// Coordinates that exceed both tolerances.
    pub failures: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// A coordinate passes when its absolute error is within `abs_floor` or its
/// relative error is within `rel_tol`.
pub fn compare_gradients(analytic: &Tensor, numeric: &Tensor, rel_tol: f64, abs_floor: f64) -> GradCheck {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
    let mut report = GradCheck { max_abs_err: 0.0, max_rel_err: 0.0, failures: 0 };
    for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
        let abs = (a - n).abs();
        let scale = a.abs().max(n.abs());
        let rel = if scale > 0.0 { abs / scale } else { 0.0 };
        report.max_abs_err = report.max_abs_err.max(abs);
        if abs > abs_floor {
            report.max_rel_err = report.max_rel_err.max(rel);
            if rel > rel_tol {
                report.failures += 1;
            }
        }
    }
    report
}
