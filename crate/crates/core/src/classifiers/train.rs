use serde::{Deserialize, Serialize};

use crate::data::{batch_tensor, TimeSeriesWindow};
use crate::error::{Error, Result};
use crate::numerics::{argmax, derive_seed, softmax_row, AdamConfig, AdamState, Reduction, SeededRng, Tape, Tensor, Var};

use super::model::{forward, ClassifierModel, Provenance, PREDICT_CHUNK};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation-loss improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Optional global gradient-norm clip.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 0.001, epochs: 200, batch_size: 256, patience: 30, seed: 0, clip_norm: None }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::config("learning rate, epochs, batch size and patience must be positive"));
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return Err(Error::config("clip_norm must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (lowest validation loss).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Mean cross-entropy and accuracy of `model` on `set`, without dropout.
pub fn loss_and_accuracy(model: &ClassifierModel, set: &[TimeSeriesWindow]) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Err(Error::contract("empty evaluation set"));
    }
    let mut loss = 0.0;
    let mut correct = 0;
    let c = model.spec().n_classes;
    for chunk in set.chunks(PREDICT_CHUNK) {
        let logits = model.logits_batch(&batch_tensor(chunk)?)?;
        for (row, w) in logits.data().chunks(c).zip(chunk) {
            let p = softmax_row(row);
            loss -= p[w.label.index()].max(f64::MIN_POSITIVE).ln();
            if argmax(&p) == w.label.index() {
                correct += 1;
            }
        }
    }
    Ok((loss / set.len() as f64, correct as f64 / set.len() as f64))
}

/// Adam on mean categorical cross-entropy with early stopping on
/// validation loss. Returns the best-validation parameters.
pub fn train(
    model: &ClassifierModel,
    train_set: &[TimeSeriesWindow],
    val_set: &[TimeSeriesWindow],
    cfg: &TrainConfig,
) -> Result<(ClassifierModel, TrainingHistory)> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::contract("training and validation sets must be nonempty"));
    }
    let spec = model.spec().clone();
    for w in train_set.iter().chain(val_set) {
        if w.timestep != spec.timestep || w.n_features != spec.n_features {
            return Err(Error::contract(format!("window {} does not match the model input shape", w.id())));
        }
    }
    let mut params: Vec<Tensor> = model.params().to_vec();
    let mut adam = AdamState::new(AdamConfig::with_learning_rate(cfg.learning_rate), &params);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = TrainingHistory::default();
    let mut best: Option<(f64, Vec<Tensor>)> = None;
    let mut since_best = 0;

    for epoch in 1..=cfg.epochs {
        let mut rng = SeededRng::new(derive_seed(cfg.seed, epoch as u64));
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for batch_idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&TimeSeriesWindow> = batch_idx.iter().map(|&i| &train_set[i]).collect();
            let targets: Vec<usize> = batch.iter().map(|w| w.label.index()).collect();
            let x = batch_tensor(batch.iter().copied())?;
            let mut tape = Tape::<f32>::new();
            let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
            let xv = tape.constant(x);
            let out = forward(&spec, &mut tape, &vars, xv, Some(&mut rng))?;
            let loss = tape.softmax_cross_entropy(out.logits, &targets, Reduction::Mean)?;
            let lv = tape.value(loss).item() as f64;
            if !lv.is_finite() {
                return Err(Error::Divergence { epoch, loss: lv });
            }
            loss_sum += lv * batch.len() as f64;
            for (row, &t) in tape.value(out.logits).data().chunks(spec.n_classes).zip(&targets) {
                if argmax(row) == t {
                    correct += 1;
                }
            }
            let mut grads = match tape.backward(loss) {
                Ok(g) => g,
                Err(Error::Numeric { .. }) => return Err(Error::Divergence { epoch, loss: f64::NAN }),
                Err(e) => return Err(e),
            };
            let mut owned: Vec<Option<Tensor>> = vars.iter().map(|&v| grads.take(v)).collect();
            if let Some(clip) = cfg.clip_norm {
                let norm = owned
                    .iter()
                    .flatten()
                    .flat_map(|g| g.data().iter())
                    .map(|&v| (v as f64) * (v as f64))
                    .sum::<f64>()
                    .sqrt();
                if norm > clip {
                    let s = (clip / norm) as f32;
                    for g in owned.iter_mut().flatten() {
                        g.data_mut().iter_mut().for_each(|v| *v *= s);
                    }
                }
            }
            let refs: Vec<Option<&Tensor>> = owned.iter().map(Option::as_ref).collect();
            adam.step(&mut params, &refs)?;
        }
        let current = model.with_params(params.clone(), Provenance::default())?;
        let (val_loss, val_accuracy) = loss_and_accuracy(&current, val_set)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch, loss: val_loss });
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
            val_loss,
            val_accuracy,
        });
        if best.as_ref().map_or(true, |(b, _)| val_loss < *b) {
            best = Some((val_loss, params.clone()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                history.stopped_early = epoch < cfg.epochs;
                break;
            }
        }
    }
    let (_, best_params) = best.expect("at least one epoch ran");
    let provenance = Provenance {
        seed: cfg.seed,
        config_hash: model.provenance.config_hash.clone(),
        epochs_trained: history.epochs.len(),
    };
    Ok((model.with_params(best_params, provenance)?, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::ArchSpec;
    use crate::data::Severity;

    /// Class is encoded directly in the level of feature 0.
    fn easy_windows(n: usize, seed: u64) -> Vec<TimeSeriesWindow> {
        let mut rng = SeededRng::new(seed);
        (0..n)
            .map(|k| {
                let c = k % 4;
                let values = (0..8 * 2)
                    .map(|i| if i % 2 == 0 { c as f32 / 3.0 + 0.05 * rng.normal() as f32 } else { rng.uniform() as f32 })
                    .collect();
                TimeSeriesWindow {
                    timestep: 8,
                    n_features: 2,
                    values,
                    label: Severity::ALL[c],
                    source: "easy".into(),
                    end_frame: k,
                }
            })
            .collect()
    }

    fn small() -> ClassifierModel {
        ClassifierModel::build(ArchSpec { recurrent: vec![8], dense: vec![8], ..ArchSpec::desk_lstm(8, 2) }, 1).unwrap()
    }

    #[test]
    fn learns_an_easy_problem_deterministically() {
        let cfg = TrainConfig { learning_rate: 0.01, epochs: 30, batch_size: 16, patience: 10, seed: 5, clip_norm: None };
        let (tr, va) = (easy_windows(160, 1), easy_windows(40, 2));
        let (m, h) = train(&small(), &tr, &va, &cfg).unwrap();
        let (_, acc) = loss_and_accuracy(&m, &easy_windows(80, 3)).unwrap();
        assert!(acc > 0.9, "accuracy {acc}");
        assert!(h.epochs.iter().all(|e| e.train_loss.is_finite()));
        let best = h.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(h.epochs[h.best_epoch - 1].val_loss, best);

        let (m2, h2) = train(&small(), &tr, &va, &cfg).unwrap();
        assert_eq!(h, h2);
        assert_eq!(m.params(), m2.params());
    }

    #[test]
    fn patience_one_stops_at_first_non_improvement() {
        // labels unrelated to the inputs, so validation loss soon stops improving
        let mut va = easy_windows(40, 2);
        for (k, w) in va.iter_mut().enumerate() {
            w.label = Severity::ALL[(k * 7 + 3) % 4];
        }
        let cfg = TrainConfig { learning_rate: 0.05, epochs: 50, batch_size: 32, patience: 1, seed: 1, clip_norm: None };
        let (_, h) = train(&small(), &easy_windows(64, 1), &va, &cfg).unwrap();
        assert!(h.stopped_early);
        let n = h.epochs.len();
        assert!(h.epochs[n - 1].val_loss >= h.epochs[n - 2].val_loss);
        for e in 1..n - 1 {
            assert!(h.epochs[e].val_loss < h.epochs[..e].iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min));
        }
    }

    #[test]
    fn empty_split_and_bad_config() {
        let tr = easy_windows(8, 1);
        assert!(matches!(train(&small(), &tr, &[], &TrainConfig::default()), Err(Error::Contract(_))));
        let bad = TrainConfig { patience: 0, ..TrainConfig::default() };
        assert!(matches!(train(&small(), &tr, &tr, &bad), Err(Error::Config(_))));
    }

    #[test]
    fn absurd_learning_rate_diverges_with_epoch() {
        let mut tr = easy_windows(32, 1);
        for w in &mut tr {
            w.values.iter_mut().for_each(|v| *v *= 1e30);
        }
        let cfg = TrainConfig { learning_rate: 1e30, epochs: 5, batch_size: 8, patience: 5, seed: 1, clip_norm: None };
        match train(&small(), &tr, &tr, &cfg) {
            Err(Error::Divergence { epoch, .. }) => assert_eq!(epoch, 1),
            other => panic!("expected divergence, got {:?}", other.map(|(_, h)| h)),
        }
    }
}
