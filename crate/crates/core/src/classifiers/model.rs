use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container;
use crate::data::{batch_tensor, hex16, Severity, TimeSeriesWindow};
use crate::error::{Error, LoadError, Result};
use crate::numerics::{
    argmax, check_tape_gradient, softmax_row, Element, FdOptions, FiniteDiffReport, Reduction, SeededRng, Tape, Tensor, Var,
};

use super::arch::{ArchSpec, Family};

const MAGIC: &[u8; 8] = b"CSMODEL\0";
const VERSION: u32 = 1;
/// Windows per forward pass when predicting many at once.
pub(crate) const PREDICT_CHUNK: usize = 256;

/// Anything the attacks can differentiate through: maps a `[batch, T, N]`
/// input on a tape to `[batch, classes]` logits.
pub trait TapeModel {
    /// `(timestep, n_features)`.
    fn input_shape(&self) -> (usize, usize);
    fn n_classes(&self) -> usize;
    fn logits(&self, tape: &mut Tape<f32>, x: Var) -> Result<Var>;
}

/// Seed and configuration a model was produced with.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: Option<String>,
    pub epochs_trained: usize,
}

#[derive(Clone, Debug)]
pub struct ClassifierModel {
    spec: ArchSpec,
    params: Vec<Tensor>,
    /// Fingerprint of the normalization stats the model expects.
    pub normalization: Option<String>,
    pub provenance: Provenance,
    fingerprint: OnceLock<String>,
}

pub(crate) struct ForwardOut {
    pub logits: Var,
    pub penultimate: Var,
}

fn dropout_mask<T: Element>(tape: &mut Tape<T>, rng: &mut SeededRng, rows: usize, cols: usize, rate: f64) -> Var {
    let keep = 1.0 - rate;
    let scale = T::from_f64(1.0 / keep);
    let data = (0..rows * cols).map(|_| if rng.bernoulli(keep) { scale } else { T::zero() }).collect();
    tape.constant(Tensor::new(vec![rows, cols], data).expect("mask shape"))
}

/// Recurrent layer over a `[batch, steps, in]` sequence. Returns the full
/// hidden sequence when `return_sequence`, else the last hidden state.
#[allow(clippy::too_many_arguments)]
fn recurrent_layer<T: Element>(
    tape: &mut Tape<T>,
    family: Family,
    input: Var,
    (w, u, b): (Var, Var, Var),
    hidden: usize,
    recurrent_dropout: f64,
    rng: Option<&mut SeededRng>,
    return_sequence: bool,
) -> Result<Var> {
    let s = tape.value(input).shape().to_vec();
    let (batch, steps, width) = (s[0], s[1], s[2]);
    let g = family.gates();
    // input projection for all steps at once
    let flat = tape.reshape(input, &[batch * steps, width])?;
    let proj = tape.matmul(flat, w)?;
    let proj = tape.add_bias(proj, b)?;
    let proj = tape.reshape(proj, &[batch, steps, g * hidden])?;

    let mask = match rng {
        Some(rng) if recurrent_dropout > 0.0 => Some(dropout_mask(tape, rng, batch, hidden, recurrent_dropout)),
        _ => None,
    };
    let zeros = tape.constant(Tensor::zeros(&[batch, hidden]));
    let mut h = zeros;
    let mut c = zeros;
    let mut outputs = Vec::with_capacity(if return_sequence { steps } else { 0 });
    let (u_zr, u_n) = if family == Family::Gru {
        (Some(tape.slice_cols(u, 0, 2 * hidden)?), Some(tape.slice_cols(u, 2 * hidden, hidden)?))
    } else {
        (None, None)
    };
    for t in 0..steps {
        let xp = tape.select_step(proj, t)?;
        let h_in = match mask {
            Some(m) => tape.mul(h, m)?,
            None => h,
        };
        match family {
            Family::Lstm | Family::CnnLstm => {
                let rec = tape.matmul(h_in, u)?;
                let z = tape.add(xp, rec)?;
                let i = tape.slice_cols(z, 0, hidden)?;
                let f = tape.slice_cols(z, hidden, hidden)?;
                let gg = tape.slice_cols(z, 2 * hidden, hidden)?;
                let o = tape.slice_cols(z, 3 * hidden, hidden)?;
                let i = tape.sigmoid(i);
                let f = tape.sigmoid(f);
                let gg = tape.tanh(gg);
                let o = tape.sigmoid(o);
                let keep = tape.mul(f, c)?;
                let write = tape.mul(i, gg)?;
                c = tape.add(keep, write)?;
                let tc = tape.tanh(c);
                h = tape.mul(o, tc)?;
            }
            Family::Gru => {
                let (u_zr, u_n) = (u_zr.expect("gru slices"), u_n.expect("gru slices"));
                let x_zr = tape.slice_cols(xp, 0, 2 * hidden)?;
                let x_n = tape.slice_cols(xp, 2 * hidden, hidden)?;
                let rec = tape.matmul(h_in, u_zr)?;
                let zr = tape.add(x_zr, rec)?;
                let zr = tape.sigmoid(zr);
                let z = tape.slice_cols(zr, 0, hidden)?;
                let r = tape.slice_cols(zr, hidden, hidden)?;
                let rh = tape.mul(r, h_in)?;
                let rec_n = tape.matmul(rh, u_n)?;
                let n = tape.add(x_n, rec_n)?;
                let n = tape.tanh(n);
                // h = (1 - z)·n + z·h = n + z·(h - n)
                let d = tape.sub(h, n)?;
                let zd = tape.mul(z, d)?;
                h = tape.add(n, zd)?;
            }
        }
        if return_sequence {
            outputs.push(h);
        }
    }
    if return_sequence {
        tape.stack_steps(&outputs)
    } else {
        Ok(h)
    }
}

/// Full forward pass. `params` are tape nodes in [`ArchSpec::param_shapes`]
/// order; `rng` enables dropout (training only).
pub(crate) fn forward<T: Element>(
    spec: &ArchSpec,
    tape: &mut Tape<T>,
    params: &[Var],
    x: Var,
    mut rng: Option<&mut SeededRng>,
) -> Result<ForwardOut> {
    let s = tape.value(x).shape().to_vec();
    if s.len() != 3 || s[1] != spec.timestep || s[2] != spec.n_features {
        return Err(Error::contract(format!(
            "input {s:?} does not match [batch, {}, {}]",
            spec.timestep, spec.n_features
        )));
    }
    let batch = s[0];
    let mut p = params.iter().copied();
    let mut next = || p.next().ok_or_else(|| Error::contract("too few parameters"));
    let mut seq = x;
    for _ in &spec.conv_filters {
        let (w, b) = (next()?, next()?);
        let y = tape.conv1d(seq, w, b, spec.kernel)?;
        seq = tape.relu(y);
    }
    if !spec.conv_filters.is_empty() {
        seq = tape.max_pool1d(seq, spec.pool)?;
    }
    let layers = spec.recurrent.len();
    for (l, &h) in spec.recurrent.iter().enumerate() {
        let wub = (next()?, next()?, next()?);
        seq = recurrent_layer(
            tape,
            spec.family,
            seq,
            wub,
            h,
            spec.recurrent_dropout,
            rng.as_deref_mut(),
            l + 1 < layers,
        )?;
    }
    let mut act = seq;
    if let Some(rng) = rng.as_deref_mut() {
        if spec.dropout > 0.0 {
            let width = *spec.recurrent.last().expect("validated");
            let m = dropout_mask(tape, rng, batch, width, spec.dropout);
            act = tape.mul(act, m)?;
        }
    }
    for _ in &spec.dense {
        let (w, b) = (next()?, next()?);
        let y = tape.matmul(act, w)?;
        let y = tape.add_bias(y, b)?;
        act = tape.relu(y);
    }
    let penultimate = act;
    let (w, b) = (next()?, next()?);
    let y = tape.matmul(act, w)?;
    let logits = tape.add_bias(y, b)?;
    Ok(ForwardOut { logits, penultimate })
}

#[derive(Serialize, Deserialize)]
struct Descriptor {
    kind: String,
    spec: ArchSpec,
    params: Vec<(String, Vec<usize>)>,
    normalization: Option<String>,
    provenance: Provenance,
}

impl ClassifierModel {
    /// Fresh model: weights uniform in ±1/√fan_in, zero biases except the
    /// LSTM forget gate, which starts at 1.
    pub fn build(spec: ArchSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = SeededRng::new(seed);
        let mut params = Vec::new();
        for (name, shape) in spec.param_shapes() {
            let n: usize = shape.iter().product();
            let t = if name.ends_with(".b") {
                let mut data = vec![0.0f32; n];
                if name.starts_with("rnn") && spec.family != Family::Gru {
                    let h = n / 4;
                    data[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
                }
                Tensor::new(shape, data)?
            } else {
                let bound = 1.0 / (shape[0] as f64).sqrt();
                let data = (0..n).map(|_| rng.uniform_range(-bound, bound) as f32).collect();
                Tensor::new(shape, data)?
            };
            params.push(t);
        }
        Ok(Self::assemble(spec, params, None, Provenance { seed, ..Default::default() }))
    }

    fn assemble(spec: ArchSpec, params: Vec<Tensor>, normalization: Option<String>, provenance: Provenance) -> Self {
        ClassifierModel { spec, params, normalization, provenance, fingerprint: OnceLock::new() }
    }

    /// Same model with replaced parameters (shapes must match).
    pub(crate) fn with_params(&self, params: Vec<Tensor>, provenance: Provenance) -> Result<Self> {
        let shapes = self.spec.param_shapes();
        if params.len() != shapes.len() || params.iter().zip(&shapes).any(|(p, (_, s))| p.shape() != s.as_slice()) {
            return Err(Error::contract("parameter shapes do not match the architecture"));
        }
        Ok(Self::assemble(self.spec.clone(), params, self.normalization.clone(), provenance))
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn family(&self) -> Family {
        self.spec.family
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Output layer weights `[P, C]` and bias `[C]`.
    pub fn output_layer(&self) -> (&Tensor, &Tensor) {
        let n = self.params.len();
        (&self.params[n - 2], &self.params[n - 1])
    }

    /// Content hash of architecture and parameters (16 hex chars).
    pub fn fingerprint(&self) -> &str {
        self.fingerprint.get_or_init(|| {
            let mut h = Sha256::new();
            h.update(serde_json::to_vec(&self.spec).expect("spec serializes"));
            for p in &self.params {
                for v in p.data() {
                    h.update(v.to_le_bytes());
                }
            }
            hex16(&h.finalize())
        })
    }

    /// Fails with an architecture error unless the model is of `family`.
    pub fn expect_family(self, family: Family) -> Result<Self> {
        if self.spec.family != family {
            return Err(Error::Architecture(format!("expected a {family} model, file holds {}", self.spec.family)));
        }
        Ok(self)
    }

    fn check_window(&self, w: &TimeSeriesWindow) -> Result<()> {
        if w.timestep != self.spec.timestep || w.n_features != self.spec.n_features {
            return Err(Error::contract(format!(
                "window {} is {}×{}, model expects {}×{}",
                w.id(),
                w.timestep,
                w.n_features,
                self.spec.timestep,
                self.spec.n_features
            )));
        }
        Ok(())
    }

    /// Logits and penultimate activations for a `[batch, T, N]` tensor.
    pub fn forward_batch(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::<f32>::new();
        let params: Vec<Var> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        let xv = tape.constant(x.clone());
        let out = forward(&self.spec, &mut tape, &params, xv, None)?;
        Ok((tape.value(out.logits).clone(), tape.value(out.penultimate).clone()))
    }

    pub fn logits_batch(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_batch(x)?.0)
    }

    /// Class probabilities for each window.
    pub fn predict_batch(&self, windows: &[TimeSeriesWindow]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(PREDICT_CHUNK) {
            for w in chunk {
                self.check_window(w)?;
            }
            let logits = self.logits_batch(&batch_tensor(chunk)?)?;
            out.extend(logits.data().chunks(self.spec.n_classes).map(softmax_row));
        }
        Ok(out)
    }

    pub fn predict(&self, window: &TimeSeriesWindow) -> Result<Vec<f64>> {
        Ok(self.predict_batch(std::slice::from_ref(window))?.remove(0))
    }

    /// Most probable class; ties go to the lower index.
    pub fn predict_label(&self, window: &TimeSeriesWindow) -> Result<Severity> {
        Ok(label_of(&self.predict(window)?))
    }

    pub fn predict_labels(&self, windows: &[TimeSeriesWindow]) -> Result<Vec<Severity>> {
        Ok(self.predict_batch(windows)?.iter().map(|p| label_of(p)).collect())
    }

    /// Penultimate activations, one row per window.
    pub fn penultimate_batch(&self, windows: &[TimeSeriesWindow]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(PREDICT_CHUNK) {
            for w in chunk {
                self.check_window(w)?;
            }
            let (_, pen) = self.forward_batch(&batch_tensor(chunk)?)?;
            let width = self.spec.penultimate_width();
            out.extend(pen.data().chunks(width).map(<[f32]>::to_vec));
        }
        Ok(out)
    }

    /// Compares the analytic gradient of the mean cross-entropy on `windows`
    /// with respect to every parameter against central differences. Runs the
    /// same forward code in f64.
    pub fn check_gradients(&self, windows: &[TimeSeriesWindow], opts: &FdOptions) -> Result<FiniteDiffReport> {
        for w in windows {
            self.check_window(w)?;
        }
        let x = batch_tensor(windows)?.cast::<f64>();
        let targets: Vec<usize> = windows.iter().map(|w| w.label.index()).collect();
        let flat: Vec<f64> = self.params.iter().flat_map(|p| p.data().iter().map(|&v| v as f64)).collect();
        let point = Tensor::new(vec![flat.len()], flat)?;
        let shapes = self.spec.param_shapes();
        let spec = &self.spec;
        check_tape_gradient(
            |tape, theta| {
                let row = tape.reshape(theta, &[1, point.len()])?;
                let mut vars = Vec::with_capacity(shapes.len());
                let mut off = 0;
                for (_, s) in &shapes {
                    let n: usize = s.iter().product();
                    let piece = tape.slice_cols(row, off, n)?;
                    vars.push(tape.reshape(piece, s)?);
                    off += n;
                }
                let xv = tape.constant(x.clone());
                let out = forward(spec, tape, &vars, xv, None)?;
                tape.softmax_cross_entropy(out.logits, &targets, Reduction::Mean)
            },
            &point,
            opts,
        )
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let desc = Descriptor {
            kind: "classifier".into(),
            spec: self.spec.clone(),
            params: self.spec.param_shapes(),
            normalization: self.normalization.clone(),
            provenance: self.provenance.clone(),
        };
        let values: Vec<f32> = self.params.iter().flat_map(|p| p.data().iter().copied()).collect();
        Ok(container::encode(MAGIC, VERSION, &serde_json::to_vec(&desc)?, &values))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (desc, values) = container::decode(MAGIC, VERSION, bytes)?;
        let desc: Descriptor =
            serde_json::from_slice(desc).map_err(|e| LoadError::Descriptor(e.to_string()))?;
        if desc.kind != "classifier" {
            return Err(LoadError::Descriptor(format!("kind {:?} is not a classifier", desc.kind)).into());
        }
        desc.spec.validate().map_err(|e| LoadError::Descriptor(e.to_string()))?;
        if desc.params != desc.spec.param_shapes() {
            return Err(LoadError::Descriptor("parameter list disagrees with the architecture".into()).into());
        }
        let mut params = Vec::with_capacity(desc.params.len());
        let mut offset = 0;
        for (_, shape) in &desc.params {
            let n: usize = shape.iter().product();
            let block = values
                .get(offset..offset + n)
                .ok_or_else(|| LoadError::Truncated("parameter block past end of payload".into()))?;
            params.push(Tensor::new(shape.clone(), block.to_vec())?);
            offset += n;
        }
        if offset != values.len() {
            return Err(LoadError::Descriptor(format!("{} unused parameter values", values.len() - offset)).into());
        }
        Ok(Self::assemble(desc.spec, params, desc.normalization, desc.provenance))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub(crate) fn label_of(probs: &[f64]) -> Severity {
    Severity::from_index(argmax(probs)).expect("four-class output")
}

impl TapeModel for ClassifierModel {
    fn input_shape(&self) -> (usize, usize) {
        (self.spec.timestep, self.spec.n_features)
    }

    fn n_classes(&self) -> usize {
        self.spec.n_classes
    }

    fn logits(&self, tape: &mut Tape<f32>, x: Var) -> Result<Var> {
        let params: Vec<Var> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        Ok(forward(&self.spec, tape, &params, x, None)?.logits)
    }
}
