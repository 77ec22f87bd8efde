//! White-box FGSM, PGD and Carlini-Wagner attacks on windows, perturbation
//! statistics, accuracy under attack and black-box transfer.

mod config;
mod craft;
mod eval;
mod stats;

pub use config::{AttackConfig, AttackKind};
pub use craft::{craft_batch, craft_cw, craft_fgsm, craft_pgd, model_logits, model_predictions, AdversarialWindow};
pub use eval::{evaluate_under_attack, score_adversarial, transfer_matrix, write_adversarial_set, AttackEvaluation, TransferMatrix};
pub use stats::{pearson, perturbation_stats, PerturbationStats};

#[cfg(test)]
mod tests;
