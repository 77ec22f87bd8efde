use crate::error::{Error, Result};

use super::rng::SeededRng;
use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Denominator floor for relative errors so that coordinates whose true
/// derivative is (near) zero are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct FdOptions {
    /// Central-difference step.
    pub h: f64,
    /// Largest relative error that still passes.
    pub tolerance: f64,
    /// Number of randomly chosen coordinates to check; `None` checks all.
    pub coords: Option<usize>,
    pub seed: u64,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions { h: 1e-3, tolerance: 1e-4, coords: None, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FiniteDiffReport {
    pub passed: bool,
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Compares `analytic` (the claimed gradient of `f` at `point`) against
/// central differences of `f`.
pub fn finite_diff_check<F>(
    mut f: F,
    point: &Tensor<f64>,
    analytic: &Tensor<f64>,
    opts: &FdOptions,
) -> Result<FiniteDiffReport>
where
    F: FnMut(&Tensor<f64>) -> Result<f64>,
{
    if point.shape() != analytic.shape() {
        return Err(Error::contract("analytic gradient shape differs from point"));
    }
    let n = point.len();
    let coords: Vec<usize> = match opts.coords {
        Some(k) if k < n => {
            let mut rng = SeededRng::new(opts.seed);
            (0..k).map(|_| rng.below(n)).collect()
        }
        _ => (0..n).collect(),
    };
    let mut report = FiniteDiffReport {
        passed: true,
        max_rel_error: -1.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: coords.len(),
    };
    let mut probe = point.clone();
    for &i in &coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + opts.h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - opts.h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric {
                location: format!("coordinate {i}"),
                detail: "function returned a non-finite value".into(),
            });
        }
        let numeric = (up - down) / (2.0 * opts.h);
        let a = analytic.data()[i];
        let err = rel_error(a, numeric);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    report.max_rel_error = report.max_rel_error.max(0.0);
    report.passed = report.max_rel_error <= opts.tolerance;
    Ok(report)
}

/// Builds a scalar function on an `f64` tape from `build`, differentiates it
/// with respect to its input at `point`, and checks the result numerically.
pub fn check_tape_gradient<F>(mut build: F, point: &Tensor<f64>, opts: &FdOptions) -> Result<FiniteDiffReport>
where
    F: FnMut(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.param(point.clone());
    let loss = build(&mut tape, x)?;
    let grads = tape.backward(loss)?;
    let analytic = grads.get(x).cloned().unwrap_or_else(|| Tensor::zeros(point.shape()));
    finite_diff_check(
        |p| {
            let mut t = Tape::new();
            let x = t.constant(p.clone());
            let l = build(&mut t, x)?;
            Ok(t.value(l).item())
        },
        point,
        &analytic,
        opts,
    )
}
