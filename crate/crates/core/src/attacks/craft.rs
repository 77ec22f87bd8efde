use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifiers::TapeModel;
use crate::data::{batch_tensor, Severity, TimeSeriesWindow};
use crate::error::{Error, Result};
use crate::numerics::{argmax, derive_seed, CwMode, Reduction, SeededRng, Tape, Tensor};

use super::config::{AttackConfig, AttackKind};

/// Windows crafted per batch.
const CHUNK: usize = 256;

/// A perturbed window plus what it took to make it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialWindow {
    /// Perturbed values; source, end frame and (clean) label of the original.
    pub window: TimeSeriesWindow,
    pub kind: AttackKind,
    pub config_hash: String,
    /// Untargeted: prediction differs from the true label. Targeted:
    /// prediction equals the target.
    pub success: bool,
    /// The loss gradient was zero everywhere, so nothing moved.
    pub degenerate_gradient: bool,
    pub predicted: Severity,
    pub linf: f64,
    pub l2: f64,
}

impl AdversarialWindow {
    /// `source:end_frame#kind`, distinct from the clean window's id.
    pub fn id(&self) -> String {
        format!("{}#{}", self.window.id(), self.kind)
    }
}

/// Logits of `model` for a `[batch, T, N]` tensor.
pub fn model_logits<M: TapeModel + ?Sized>(model: &M, x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::<f32>::new();
    let xv = tape.constant(x.clone());
    let out = model.logits(&mut tape, xv)?;
    Ok(tape.value(out).clone())
}

/// Predicted class per window.
pub fn model_predictions<M: TapeModel + ?Sized>(model: &M, windows: &[TimeSeriesWindow]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(CHUNK) {
        let logits = model_logits(model, &batch_tensor(chunk)?)?;
        out.extend(logits.data().chunks(model.n_classes()).map(argmax));
    }
    Ok(out)
}

/// Gradient of the summed cross-entropy toward `classes` with respect to the input.
fn input_gradient<M: TapeModel + ?Sized>(model: &M, x: &Tensor, classes: &[usize]) -> Result<Tensor> {
    let mut tape = Tape::<f32>::new();
    let xv = tape.param(x.clone());
    let logits = model.logits(&mut tape, xv)?;
    let loss = tape.softmax_cross_entropy(logits, classes, Reduction::Sum)?;
    let mut grads = tape.backward(loss)?;
    Ok(grads.take(xv).unwrap_or_else(|| Tensor::zeros(x.shape())))
}

fn sign(g: f32) -> f32 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn window_seed(seed: u64, id: &str) -> u64 {
    let d = Sha256::digest(id.as_bytes());
    derive_seed(seed, u64::from_le_bytes(d[..8].try_into().expect("digest")))
}

fn attack_succeeded(pred: usize, class: usize, targeted: bool) -> bool {
    if targeted {
        pred == class
    } else {
        pred != class
    }
}

pub fn craft_fgsm<M: TapeModel + ?Sized>(model: &M, window: &TimeSeriesWindow, cfg: &AttackConfig) -> Result<AdversarialWindow> {
    if cfg.kind != AttackKind::Fgsm {
        return Err(Error::config("craft_fgsm needs kind = fgsm"));
    }
    Ok(craft_batch(model, std::slice::from_ref(window), cfg)?.remove(0))
}

pub fn craft_pgd<M: TapeModel + ?Sized>(model: &M, window: &TimeSeriesWindow, cfg: &AttackConfig) -> Result<AdversarialWindow> {
    if cfg.kind != AttackKind::Pgd {
        return Err(Error::config("craft_pgd needs kind = pgd"));
    }
    Ok(craft_batch(model, std::slice::from_ref(window), cfg)?.remove(0))
}

pub fn craft_cw<M: TapeModel + ?Sized>(model: &M, window: &TimeSeriesWindow, cfg: &AttackConfig) -> Result<AdversarialWindow> {
    if cfg.kind != AttackKind::Cw {
        return Err(Error::config("craft_cw needs kind = cw"));
    }
    Ok(craft_batch(model, std::slice::from_ref(window), cfg)?.remove(0))
}

/// Crafts one adversarial window per input. Each window's result does not
/// depend on which other windows share its batch.
pub fn craft_batch<M: TapeModel + ?Sized>(
    model: &M,
    windows: &[TimeSeriesWindow],
    cfg: &AttackConfig,
) -> Result<Vec<AdversarialWindow>> {
    cfg.validate()?;
    let (t, n) = model.input_shape();
    for w in windows {
        if (w.timestep, w.n_features) != (t, n) {
            return Err(Error::contract(format!("window {} is {}×{}, model expects {t}×{n}", w.id(), w.timestep, w.n_features)));
        }
    }
    if let Some(target) = cfg.target {
        if target.index() >= model.n_classes() {
            return Err(Error::contract(format!("target {target} outside the model's classes")));
        }
    }
    let hash = cfg.hash();
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(CHUNK) {
        let x = batch_tensor(chunk)?;
        let classes: Vec<usize> = chunk.iter().map(|w| cfg.target.unwrap_or(w.label).index()).collect();
        let (adv, degenerate) = match cfg.kind {
            AttackKind::Fgsm => fgsm(model, &x, &classes, cfg)?,
            AttackKind::Pgd => pgd(model, &x, &classes, chunk, cfg)?,
            AttackKind::Cw => (cw(model, &x, &classes, cfg)?, vec![false; chunk.len()]),
        };
        let logits = model_logits(model, &adv)?;
        let d = t * n;
        for (i, w) in chunk.iter().enumerate() {
            let values = adv.data()[i * d..(i + 1) * d].to_vec();
            let pred = argmax(&logits.data()[i * model.n_classes()..(i + 1) * model.n_classes()]);
            let (mut linf, mut l2) = (0.0f64, 0.0f64);
            for (a, b) in values.iter().zip(&w.values) {
                let diff = (*a as f64 - *b as f64).abs();
                linf = linf.max(diff);
                l2 += diff * diff;
            }
            out.push(AdversarialWindow {
                window: TimeSeriesWindow { values, ..w.clone() },
                kind: cfg.kind,
                config_hash: hash.clone(),
                success: attack_succeeded(pred, classes[i], cfg.target.is_some()),
                degenerate_gradient: degenerate[i],
                predicted: Severity::from_index(pred).unwrap_or(Severity::None),
                linf,
                l2: l2.sqrt(),
            });
        }
    }
    Ok(out)
}

/// Untargeted attacks climb the loss of the true class; targeted ones descend toward the target.
fn direction(cfg: &AttackConfig) -> f32 {
    if cfg.target.is_some() {
        -1.0
    } else {
        1.0
    }
}

fn fgsm<M: TapeModel + ?Sized>(model: &M, x: &Tensor, classes: &[usize], cfg: &AttackConfig) -> Result<(Tensor, Vec<bool>)> {
    let g = input_gradient(model, x, classes)?;
    let d = x.len() / classes.len();
    let eps = cfg.epsilon as f32 * direction(cfg);
    let (lo, hi) = (cfg.clip_min as f32, cfg.clip_max as f32);
    let data = x.data().iter().zip(g.data()).map(|(&v, &gv)| (v + eps * sign(gv)).clamp(lo, hi)).collect();
    let degenerate = g.data().chunks(d).map(|row| row.iter().all(|&v| v == 0.0)).collect();
    Ok((Tensor::new(x.shape().to_vec(), data)?, degenerate))
}

fn pgd<M: TapeModel + ?Sized>(
    model: &M,
    x: &Tensor,
    classes: &[usize],
    windows: &[TimeSeriesWindow],
    cfg: &AttackConfig,
) -> Result<(Tensor, Vec<bool>)> {
    let d = x.len() / classes.len();
    let eps = cfg.epsilon as f32;
    let (lo, hi) = (cfg.clip_min as f32, cfg.clip_max as f32);
    let project = |x0: f32, v: f32| v.clamp(x0 - eps, x0 + eps).clamp(lo, hi);
    let mut adv = x.clone();
    if cfg.random_start {
        for (i, w) in windows.iter().enumerate() {
            let mut rng = SeededRng::new(window_seed(cfg.seed, &w.id()));
            for k in i * d..(i + 1) * d {
                let x0 = x.data()[k];
                adv.data_mut()[k] = project(x0, x0 + rng.uniform_range(-cfg.epsilon, cfg.epsilon) as f32);
            }
        }
    }
    let step = cfg.alpha as f32 * direction(cfg);
    let mut degenerate = vec![false; classes.len()];
    for it in 0..cfg.iterations {
        let g = input_gradient(model, &adv, classes)?;
        if it == 0 {
            for (flag, row) in degenerate.iter_mut().zip(g.data().chunks(d)) {
                *flag = row.iter().all(|&v| v == 0.0);
            }
        }
        for ((a, &x0), &gv) in adv.data_mut().iter_mut().zip(x.data()).zip(g.data()) {
            *a = project(x0, *a + step * sign(gv));
        }
    }
    Ok((adv, degenerate))
}

/// Per-window Adam state for the C&W inner loop.
struct RowAdam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

fn cw<M: TapeModel + ?Sized>(model: &M, x: &Tensor, classes: &[usize], cfg: &AttackConfig) -> Result<Tensor> {
    let rows = classes.len();
    let d = x.len() / rows;
    let (t_len, n_feat) = model.input_shape();
    let targeted = cfg.target.is_some();
    let mode = if targeted { CwMode::Targeted } else { CwMode::Untargeted };
    let (lo, span) = (cfg.clip_min, cfg.clip_max - cfg.clip_min);
    // x' = lo + span·(tanh(w) + 1) / 2
    let w0: Vec<f32> = x
        .data()
        .iter()
        .map(|&v| {
            let u = ((v as f64 - lo) / span * 2.0 - 1.0).clamp(-1.0, 1.0) * 0.999999;
            u.atanh() as f32
        })
        .collect();
    let mut c = vec![cfg.c; rows];
    let mut lower = vec![0.0f64; rows];
    let mut upper = vec![f64::INFINITY; rows];
    let mut best: Vec<Option<(f64, Vec<f32>)>> = vec![None; rows];
    let mut last: Vec<f32> = x.data().to_vec();
    let check_every = (cfg.cw_iterations / 10).max(1);
    let (b1, b2, eps_adam) = (0.9, 0.999, 1e-8);

    for _ in 0..cfg.binary_search_steps {
        let mut w = w0.clone();
        let mut adam: Vec<RowAdam> = (0..rows).map(|_| RowAdam { m: vec![0.0; d], v: vec![0.0; d], t: 0 }).collect();
        let mut active: Vec<bool> = vec![true; rows];
        let mut prev = vec![f64::INFINITY; rows];
        let mut hit = vec![false; rows];
        for it in 0..cfg.cw_iterations {
            let idx: Vec<usize> = (0..rows).filter(|&i| active[i]).collect();
            if idx.is_empty() {
                break;
            }
            let gather = |src: &[f32]| idx.iter().flat_map(|&i| src[i * d..(i + 1) * d].iter().copied()).collect::<Vec<_>>();
            let mut tape = Tape::<f32>::new();
            let wv = tape.param(Tensor::new(vec![idx.len(), t_len, n_feat], gather(&w))?);
            let th = tape.tanh(wv);
            let shifted = tape.add_scalar(th, 1.0);
            let unit = tape.scale(shifted, 0.5);
            let xp = if lo == 0.0 && span == 1.0 {
                unit
            } else {
                let s = tape.scale(unit, span);
                tape.add_scalar(s, lo)
            };
            let x0 = tape.constant(Tensor::new(vec![idx.len(), t_len, n_feat], gather(x.data()))?);
            let diff = tape.sub(xp, x0)?;
            let sq = tape.square(diff);
            let dist = tape.sum(sq);
            let logits = model.logits(&mut tape, xp)?;
            let cls: Vec<usize> = idx.iter().map(|&i| classes[i]).collect();
            let weights: Vec<f64> = idx.iter().map(|&i| c[i]).collect();
            let margin = tape.cw_margin(logits, &cls, mode, cfg.kappa, &weights)?;
            let loss = tape.add(dist, margin)?;
            let total = tape.value(loss).item() as f64;
            if !total.is_finite() {
                return Err(Error::Numeric { location: "C&W objective".into(), detail: format!("value {total}") });
            }
            let grads = tape.backward(loss)?;
            let g = grads.get(wv).cloned().unwrap_or_else(|| Tensor::zeros(&[idx.len(), t_len, n_feat]));
            let xs = tape.value(xp).data();
            let zs = tape.value(logits).data();
            let k = model.n_classes();
            for (r, &i) in idx.iter().enumerate() {
                let xrow = &xs[r * d..(r + 1) * d];
                let zrow = &zs[r * k..(r + 1) * k];
                let l2sq: f64 = xrow.iter().zip(&x.data()[i * d..(i + 1) * d]).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
                let cl = classes[i];
                let other = (0..k).filter(|&j| j != cl).max_by(|&a, &b| zrow[a].total_cmp(&zrow[b]).then(b.cmp(&a))).unwrap_or(0);
                let raw = zrow[cl] as f64 - zrow[other] as f64;
                let margin = if targeted { -raw } else { raw };
                let row_loss = l2sq + c[i] * margin.max(-cfg.kappa);
                let pred = argmax(zrow);
                if attack_succeeded(pred, cl, targeted) && margin <= -cfg.kappa {
                    hit[i] = true;
                    if best[i].as_ref().map_or(true, |(b, _)| l2sq < *b) {
                        best[i] = Some((l2sq, xrow.to_vec()));
                    }
                }
                last[i * d..(i + 1) * d].copy_from_slice(xrow);

                let st = &mut adam[i];
                st.t += 1;
                let (bc1, bc2) = (1.0 - f64::powi(b1, st.t), 1.0 - f64::powi(b2, st.t));
                for (j, &gv) in g.data()[r * d..(r + 1) * d].iter().enumerate() {
                    let gv = gv as f64;
                    st.m[j] = b1 * st.m[j] + (1.0 - b1) * gv;
                    st.v[j] = b2 * st.v[j] + (1.0 - b2) * gv * gv;
                    let upd = cfg.cw_learning_rate * (st.m[j] / bc1) / ((st.v[j] / bc2).sqrt() + eps_adam);
                    w[i * d + j] = (w[i * d + j] as f64 - upd) as f32;
                }
                if cfg.cw_abort_early && it % check_every == 0 {
                    if row_loss > prev[i] * 0.9999 {
                        active[i] = false;
                    }
                    prev[i] = row_loss;
                }
            }
        }
        for i in 0..rows {
            if hit[i] {
                upper[i] = upper[i].min(c[i]);
                c[i] = if lower[i] > 0.0 { (lower[i] + upper[i]) / 2.0 } else { c[i] / 2.0 };
            } else {
                lower[i] = lower[i].max(c[i]);
                c[i] = if upper[i].is_finite() { (lower[i] + upper[i]) / 2.0 } else { c[i] * 2.0 };
            }
        }
    }
    let mut data = last;
    for (i, b) in best.into_iter().enumerate() {
        if let Some((_, row)) = b {
            data[i * d..(i + 1) * d].copy_from_slice(&row);
        }
    }
    Tensor::new(x.shape().to_vec(), data)
}
