//! Dense tensors, reverse-mode differentiation, Adam and seeded randomness.

mod adam;
mod gradcheck;
mod rng;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{check_tape_gradient, finite_diff_check, FdOptions, FiniteDiffReport};
pub use rng::{derive_seed, SeededRng};
pub use tape::{CwMode, Gradients, Reduction, Tape, Var};
pub use tensor::{Element, Tensor};

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax of one row, computed in f64.
pub fn softmax_row<T: Element>(logits: &[T]) -> Vec<f64> {
    let max = logits
        .iter()
        .map(|v| v.as_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v.as_f64() - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
