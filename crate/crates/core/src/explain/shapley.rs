use serde::{Deserialize, Serialize};

use crate::attacks::model_logits;
use crate::classifiers::TapeModel;
use crate::data::TimeSeriesWindow;
use crate::error::{Error, Result};
use crate::numerics::{SeededRng, Tensor};

use super::background::BackgroundSet;

/// Largest feature count enumerated exhaustively in [`ShapleyMode::Auto`].
pub const EXACT_MAX_FEATURES: usize = 12;

/// Rows per forward pass when evaluating coalitions.
const EVAL_ROWS: usize = 512;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapleyMode {
    /// Enumerate when N ≤ 12, sample otherwise.
    #[default]
    Auto,
    Exact,
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShapleyOptions {
    pub n_perm: usize,
    pub seed: u64,
    pub mode: ShapleyMode,
}

impl Default for ShapleyOptions {
    fn default() -> Self {
        ShapleyOptions { n_perm: 200, seed: 0, mode: ShapleyMode::Auto }
    }
}

/// Per-feature Shapley values of one logit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionVector {
    pub values: Vec<f64>,
    /// Zero in exact mode; NaN for a single sampled permutation.
    pub std_errors: Vec<f64>,
    pub class: usize,
    /// Permutations sampled; 0 when enumerated.
    pub n_perm: usize,
    pub exact: bool,
}

/// `window` with every feature outside `keep` replaced by its `baseline` column.
pub fn masked_window(window: &TimeSeriesWindow, baseline: &[f32], keep: impl Fn(usize) -> bool) -> Vec<f32> {
    let n = window.n_features;
    window
        .values
        .iter()
        .zip(baseline)
        .enumerate()
        .map(|(i, (&x, &b))| if keep(i % n) { x } else { b })
        .collect()
}

/// Value of each coalition (given as inclusion flags) for logit `class`.
fn coalition_values<M: TapeModel + ?Sized>(
    model: &M,
    window: &TimeSeriesWindow,
    baseline: &[f32],
    class: usize,
    coalitions: &[Vec<bool>],
) -> Result<Vec<f64>> {
    let (t, n) = (window.timestep, window.n_features);
    let c = model.n_classes();
    let mut out = Vec::with_capacity(coalitions.len());
    for chunk in coalitions.chunks(EVAL_ROWS) {
        let mut data = Vec::with_capacity(chunk.len() * t * n);
        for s in chunk {
            data.extend(masked_window(window, baseline, |f| s[f]));
        }
        let logits = model_logits(model, &Tensor::new(vec![chunk.len(), t, n], data)?)?;
        out.extend(logits.data().chunks(c).map(|row| row[class] as f64));
    }
    Ok(out)
}

fn exact<M: TapeModel + ?Sized>(model: &M, window: &TimeSeriesWindow, baseline: &[f32], class: usize) -> Result<Vec<f64>> {
    let n = window.n_features;
    let subsets: Vec<Vec<bool>> = (0..1usize << n).map(|m| (0..n).map(|f| m >> f & 1 == 1).collect()).collect();
    let v = coalition_values(model, window, baseline, class, &subsets)?;
    // |S|!(n-|S|-1)!/n!
    let mut fact = vec![1.0f64; n + 1];
    for k in 1..=n {
        fact[k] = fact[k - 1] * k as f64;
    }
    let weight: Vec<f64> = (0..n).map(|s| fact[s] * fact[n - s - 1] / fact[n]).collect();
    let mut phi = vec![0.0; n];
    for m in 0..1usize << n {
        let size = m.count_ones() as usize;
        for (f, p) in phi.iter_mut().enumerate() {
            if m >> f & 1 == 0 {
                *p += weight[size] * (v[m | 1 << f] - v[m]);
            }
        }
    }
    Ok(phi)
}

fn sampled<M: TapeModel + ?Sized>(
    model: &M,
    window: &TimeSeriesWindow,
    baseline: &[f32],
    class: usize,
    n_perm: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = window.n_features;
    let mut rng = SeededRng::new(seed);
    let mut mean = vec![0.0f64; n];
    let mut m2 = vec![0.0f64; n];
    let per_batch = (EVAL_ROWS / (n + 1)).max(1);
    let mut done = 0usize;
    while done < n_perm {
        let count = per_batch.min(n_perm - done);
        let perms: Vec<Vec<usize>> = (0..count).map(|_| rng.permutation(n)).collect();
        let mut coalitions = Vec::with_capacity(count * (n + 1));
        for perm in &perms {
            let mut s = vec![false; n];
            coalitions.push(s.clone());
            for &f in perm {
                s[f] = true;
                coalitions.push(s.clone());
            }
        }
        let v = coalition_values(model, window, baseline, class, &coalitions)?;
        for (perm, vals) in perms.iter().zip(v.chunks(n + 1)) {
            done += 1;
            for (k, &f) in perm.iter().enumerate() {
                let x = vals[k + 1] - vals[k];
                let d = x - mean[f];
                mean[f] += d / done as f64;
                m2[f] += d * (x - mean[f]);
            }
        }
    }
    let se = m2
        .iter()
        .map(|&s| if n_perm > 1 { (s / (n_perm - 1) as f64 / n_perm as f64).sqrt() } else { f64::NAN })
        .collect();
    Ok((mean, se))
}

/// Shapley values of `model`'s logit `class` over the feature columns of
/// `window`; an absent feature takes its `baseline` column (`T × N`).
pub fn shap_input<M: TapeModel + ?Sized>(
    model: &M,
    window: &TimeSeriesWindow,
    baseline: &[f32],
    class: usize,
    opts: &ShapleyOptions,
) -> Result<AttributionVector> {
    if opts.n_perm < 1 {
        return Err(Error::config("n_perm must be at least 1"));
    }
    let (t, n) = model.input_shape();
    if window.timestep != t || window.n_features != n || baseline.len() != t * n {
        return Err(Error::contract(format!("window {} or baseline does not match the model input", window.id())));
    }
    if class >= model.n_classes() {
        return Err(Error::contract(format!("class {class} out of range")));
    }
    let enumerate = match opts.mode {
        ShapleyMode::Auto => n <= EXACT_MAX_FEATURES,
        ShapleyMode::Exact if n > 20 => return Err(Error::config(format!("cannot enumerate 2^{n} coalitions"))),
        ShapleyMode::Exact => true,
        ShapleyMode::Sampled => false,
    };
    if enumerate {
        let values = exact(model, window, baseline, class)?;
        Ok(AttributionVector { std_errors: vec![0.0; n], values, class, n_perm: 0, exact: true })
    } else {
        let (values, std_errors) = sampled(model, window, baseline, class, opts.n_perm, opts.seed)?;
        Ok(AttributionVector { values, std_errors, class, n_perm: opts.n_perm, exact: false })
    }
}

/// [`shap_input`] against the background's mean window, enumerating when
/// N ≤ 12.
pub fn shap_input_sampled<M: TapeModel + ?Sized>(
    model: &M,
    window: &TimeSeriesWindow,
    background: &BackgroundSet,
    class: usize,
    n_perm: usize,
    seed: u64,
) -> Result<AttributionVector> {
    shap_input(model, window, background.mean_window(), class, &ShapleyOptions { n_perm, seed, mode: ShapleyMode::Auto })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: usize,
    pub mean_abs: f64,
}

/// Features by descending mean |φ|; ties keep index order.
pub fn global_importance<'a>(attributions: impl IntoIterator<Item = &'a [f64]>) -> Result<Vec<FeatureImportance>> {
    let mut sums: Option<Vec<f64>> = None;
    let mut count = 0usize;
    for a in attributions {
        let s = sums.get_or_insert_with(|| vec![0.0; a.len()]);
        if s.len() != a.len() {
            return Err(Error::contract(format!("attribution of length {} among length {}", a.len(), s.len())));
        }
        for (acc, v) in s.iter_mut().zip(a) {
            *acc += v.abs();
        }
        count += 1;
    }
    let sums = sums.ok_or_else(|| Error::contract("no attributions to rank"))?;
    let mut ranked: Vec<FeatureImportance> = sums
        .into_iter()
        .enumerate()
        .map(|(feature, s)| FeatureImportance { feature, mean_abs: s / count as f64 })
        .collect();
    ranked.sort_by(|a, b| b.mean_abs.total_cmp(&a.mean_abs).then(a.feature.cmp(&b.feature)));
    Ok(ranked)
}
