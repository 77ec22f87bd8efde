use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::classifiers::{ClassificationMetrics, TapeModel};
use crate::data::{write_windows, Severity, TimeSeriesWindow};
use crate::error::{Error, Result};

use super::config::{AttackConfig, AttackKind};
use super::craft::{craft_batch, model_predictions, AdversarialWindow};
use super::stats::pearson;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackEvaluation {
    pub metrics: ClassificationMetrics,
    pub success_rate: f64,
    pub mean_linf: f64,
    pub max_linf: f64,
    pub mean_l2: f64,
    pub max_l2: f64,
    /// Mean PCC over windows where it is defined.
    pub mean_pcc: Option<f64>,
}

fn severities(v: &[usize]) -> Vec<Severity> {
    v.iter().map(|&i| Severity::from_index(i).unwrap_or(Severity::None)).collect()
}

/// Scores `model` on `adversarial` and summarizes the perturbations.
pub fn score_adversarial<M: TapeModel + ?Sized>(
    model: &M,
    originals: &[TimeSeriesWindow],
    adversarial: &[AdversarialWindow],
) -> Result<AttackEvaluation> {
    if adversarial.is_empty() || adversarial.len() != originals.len() {
        return Err(Error::contract("adversarial set must be nonempty and match the originals"));
    }
    let windows: Vec<TimeSeriesWindow> = adversarial.iter().map(|a| a.window.clone()).collect();
    let predicted = model_predictions(model, &windows)?;
    let truth: Vec<Severity> = originals.iter().map(|w| w.label).collect();
    let metrics = ClassificationMetrics::from_predictions(&truth, &severities(&predicted))?;
    let n = adversarial.len() as f64;
    let mut pcc_sum = 0.0;
    let mut pcc_n = 0usize;
    for (o, a) in originals.iter().zip(adversarial) {
        if let Ok(p) = pearson(&o.values, &a.window.values) {
            pcc_sum += p;
            pcc_n += 1;
        }
    }
    Ok(AttackEvaluation {
        metrics,
        success_rate: adversarial.iter().filter(|a| a.success).count() as f64 / n,
        mean_linf: adversarial.iter().map(|a| a.linf).sum::<f64>() / n,
        max_linf: adversarial.iter().map(|a| a.linf).fold(0.0, f64::max),
        mean_l2: adversarial.iter().map(|a| a.l2).sum::<f64>() / n,
        max_l2: adversarial.iter().map(|a| a.l2).fold(0.0, f64::max),
        mean_pcc: (pcc_n > 0).then(|| pcc_sum / pcc_n as f64),
    })
}

/// Crafts one adversarial window per sample against `model` and evaluates
/// `model` on them.
pub fn evaluate_under_attack<M: TapeModel + ?Sized>(
    model: &M,
    set: &[TimeSeriesWindow],
    cfg: &AttackConfig,
) -> Result<(AttackEvaluation, Vec<AdversarialWindow>)> {
    if set.is_empty() {
        return Err(Error::contract("cannot attack an empty set"));
    }
    let adv = craft_batch(model, set, cfg)?;
    Ok((score_adversarial(model, set, &adv)?, adv))
}

/// Accuracy of each target model on examples crafted white-box against each source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferMatrix {
    pub models: Vec<String>,
    pub kinds: Vec<AttackKind>,
    /// `accuracy[source][target][kind]`.
    pub accuracy: Vec<Vec<Vec<f64>>>,
    /// Clean accuracy per model.
    pub clean: Vec<f64>,
}

impl TransferMatrix {
    pub fn get(&self, source: usize, target: usize, kind: usize) -> f64 {
        self.accuracy[source][target][kind]
    }

    /// CSV rows `source,target,attack,accuracy`.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["source", "target", "attack", "accuracy", "target_clean_accuracy"])?;
        for (s, src) in self.models.iter().enumerate() {
            for (t, tgt) in self.models.iter().enumerate() {
                for (k, kind) in self.kinds.iter().enumerate() {
                    w.write_record([
                        src.clone(),
                        tgt.clone(),
                        kind.to_string(),
                        format!("{:.6}", self.accuracy[s][t][k]),
                        format!("{:.6}", self.clean[t]),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn transfer_matrix<M: TapeModel>(
    models: &[(&str, &M)],
    set: &[TimeSeriesWindow],
    cfgs: &[AttackConfig],
) -> Result<TransferMatrix> {
    let (first_name, first) = models.first().ok_or_else(|| Error::contract("transfer needs at least one model"))?;
    for (name, m) in models {
        if m.input_shape() != first.input_shape() || m.n_classes() != first.n_classes() {
            return Err(Error::contract(format!("model {name} is not shape-compatible with {first_name}")));
        }
    }
    if set.is_empty() {
        return Err(Error::contract("cannot attack an empty set"));
    }
    let truth: Vec<Severity> = set.iter().map(|w| w.label).collect();
    let accuracy_of = |m: &M, windows: &[TimeSeriesWindow]| -> Result<f64> {
        let pred = model_predictions(m, windows)?;
        Ok(ClassificationMetrics::from_predictions(&truth, &severities(&pred))?.accuracy)
    };
    let mut clean = Vec::with_capacity(models.len());
    for (_, m) in models {
        clean.push(accuracy_of(m, set)?);
    }
    let mut accuracy = vec![vec![vec![0.0; cfgs.len()]; models.len()]; models.len()];
    for (s, (_, src)) in models.iter().enumerate() {
        for (k, cfg) in cfgs.iter().enumerate() {
            let adv: Vec<TimeSeriesWindow> = craft_batch(*src, set, cfg)?.into_iter().map(|a| a.window).collect();
            for (t, (_, tgt)) in models.iter().enumerate() {
                accuracy[s][t][k] = accuracy_of(tgt, &adv)?;
            }
        }
    }
    Ok(TransferMatrix {
        models: models.iter().map(|(n, _)| n.to_string()).collect(),
        kinds: cfgs.iter().map(|c| c.kind).collect(),
        accuracy,
        clean,
    })
}

#[derive(Serialize)]
struct SidecarEntry {
    id: String,
    success: bool,
    degenerate_gradient: bool,
    predicted: Severity,
    linf: f64,
    l2: f64,
    pcc: Option<f64>,
}

/// Writes the perturbed windows as window CSV and returns the JSON sidecar
/// (attack configuration, per-window success and budget stats).
pub fn write_adversarial_set<W: Write>(
    adversarial: &[AdversarialWindow],
    originals: &[TimeSeriesWindow],
    feature_names: &[String],
    cfg: &AttackConfig,
    header: serde_json::Value,
    csv_sink: W,
) -> Result<serde_json::Value> {
    if adversarial.len() != originals.len() {
        return Err(Error::contract("adversarial set must match the originals"));
    }
    let windows: Vec<TimeSeriesWindow> = adversarial.iter().map(|a| a.window.clone()).collect();
    write_windows(&windows, feature_names, csv_sink)?;
    let entries: Vec<SidecarEntry> = adversarial
        .iter()
        .zip(originals)
        .map(|(a, o)| SidecarEntry {
            id: a.id(),
            success: a.success,
            degenerate_gradient: a.degenerate_gradient,
            predicted: a.predicted,
            linf: a.linf,
            l2: a.l2,
            pcc: pearson(&o.values, &a.window.values).ok(),
        })
        .collect();
    Ok(serde_json::json!({
        "header": header,
        "attack": cfg,
        "attack_hash": cfg.hash(),
        "windows": entries,
    }))
}
