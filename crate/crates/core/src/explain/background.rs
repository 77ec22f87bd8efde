use sha2::{Digest, Sha256};

use crate::classifiers::ClassifierModel;
use crate::data::{hex16, TimeSeriesWindow};
use crate::error::{Error, Result};
use crate::numerics::SeededRng;

pub const DEFAULT_BACKGROUND_SIZE: usize = 100;

/// Draws `k` windows (all of them if fewer) without replacement.
pub fn sample_background(benign: &[TimeSeriesWindow], k: usize, seed: u64) -> Result<Vec<TimeSeriesWindow>> {
    if k == 0 {
        return Err(Error::config("background size must be at least 1"));
    }
    if benign.is_empty() {
        return Err(Error::contract("cannot draw a background from an empty set"));
    }
    let mut rng = SeededRng::new(seed);
    let order = rng.permutation(benign.len());
    Ok(order.into_iter().take(k).map(|i| benign[i].clone()).collect())
}

/// Reference windows for attribution, with their column-wise mean window and
/// (optionally) the mean penultimate activation of one model.
#[derive(Clone, Debug)]
pub struct BackgroundSet {
    windows: Vec<TimeSeriesWindow>,
    mean_window: Vec<f32>,
    penultimate: Option<(String, Vec<f64>)>,
}

impl BackgroundSet {
    pub fn new(windows: Vec<TimeSeriesWindow>) -> Result<Self> {
        let first = windows.first().ok_or_else(|| Error::contract("background needs at least one window"))?;
        let (t, n) = (first.timestep, first.n_features);
        let mut sum = vec![0.0f64; t * n];
        for w in &windows {
            if w.timestep != t || w.n_features != n {
                return Err(Error::contract(format!("background window {} has a different shape", w.id())));
            }
            if w.values.iter().any(|v| !(-1e-6..=1.0 + 1e-6).contains(v)) {
                return Err(Error::contract(format!("background window {} is not normalized", w.id())));
            }
            for (s, &v) in sum.iter_mut().zip(&w.values) {
                *s += v as f64;
            }
        }
        let k = windows.len() as f64;
        let mean_window = sum.into_iter().map(|s| (s / k) as f32).collect();
        Ok(BackgroundSet { windows, mean_window, penultimate: None })
    }

    /// Background with the mean penultimate activation of `model` cached.
    pub fn for_model(model: &ClassifierModel, windows: Vec<TimeSeriesWindow>) -> Result<Self> {
        let mut bg = Self::new(windows)?;
        let rows = model.penultimate_batch(&bg.windows)?;
        let width = model.spec().penultimate_width();
        let mut mean = vec![0.0f64; width];
        for row in &rows {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows.len() as f64);
        bg.penultimate = Some((model.fingerprint().to_string(), mean));
        Ok(bg)
    }

    pub fn windows(&self) -> &[TimeSeriesWindow] {
        &self.windows
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// `T × N` column means over the background windows.
    pub fn mean_window(&self) -> &[f32] {
        &self.mean_window
    }

    /// h̄ for `model`; a contract error if the cache belongs to another model.
    pub fn mean_penultimate(&self, model: &ClassifierModel) -> Result<&[f64]> {
        match &self.penultimate {
            Some((fp, mean)) if fp == model.fingerprint() => Ok(mean),
            Some((fp, _)) => Err(Error::contract(format!(
                "background was built for model {fp}, not {}",
                model.fingerprint()
            ))),
            None => Err(Error::contract("background has no penultimate cache; build it with BackgroundSet::for_model")),
        }
    }

    /// Hash of the member window ids and values.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for w in &self.windows {
            h.update(w.id().as_bytes());
            for v in &w.values {
                h.update(v.to_le_bytes());
            }
        }
        hex16(&h.finalize())
    }
}
