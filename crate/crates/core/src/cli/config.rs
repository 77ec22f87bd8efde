use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::attacks::AttackConfig;
use crate::classifiers::{ArchSpec, TrainConfig};
use crate::data::{hex16, SynthConfig};
use crate::detector::{DetectorKind, DetectorSpec};
use crate::error::{Error, Result};
use crate::explain::SignatureMode;
use crate::pipeline::{InjectionSchedule, RunMode, StreamOptions};

/// Synthetic corpus and windowing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Generator settings shared by every split; `cycles` and `seed` are
    /// replaced per split.
    pub synth: SynthConfig,
    pub timestep: usize,
    pub train_cycles: usize,
    pub val_cycles: usize,
    pub test_cycles: usize,
    /// Closed-loop replay trace.
    pub live_cycles: usize,
    pub train_stride: usize,
    pub val_stride: usize,
    pub test_stride: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            synth: SynthConfig::default(),
            timestep: 30,
            train_cycles: 12,
            val_cycles: 3,
            test_cycles: 4,
            live_cycles: 16,
            train_stride: 2,
            val_stride: 5,
            test_stride: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Architecture presets to train; each is stored under its own name.
    pub presets: Vec<String>,
    /// Preset attacked, explained and defended.
    pub primary: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { presets: vec!["desk_lstm".into(), "desk_gru".into()], primary: "desk_lstm".into() }
    }
}

fn cw_reduced(kappa: f64, search: usize) -> AttackConfig {
    AttackConfig { binary_search_steps: search, cw_iterations: 100, cw_learning_rate: 0.05, ..AttackConfig::cw(1.0, kappa) }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    /// White-box attacks on the primary model.
    pub attacks: Vec<AttackConfig>,
    /// Attacks crafted on each model and replayed on every other.
    pub transfer: Vec<AttackConfig>,
    /// Attack every k-th test window.
    pub eval_every: usize,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            attacks: vec![AttackConfig::fgsm(0.1), AttackConfig::pgd(0.1, 0.0125, 20), cw_reduced(0.0, 4)],
            transfer: vec![AttackConfig::pgd(0.15, 0.0375, 20), cw_reduced(8.0, 3)],
            eval_every: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainSection {
    pub background_size: usize,
    pub signature_mode: SignatureMode,
    /// Sign every k-th training window.
    pub train_every: usize,
    /// Attacks whose windows form the adversarial signatures, assigned round robin.
    pub signing_attacks: Vec<AttackConfig>,
    /// Test windows given input-level explanations.
    pub local_windows: usize,
    pub n_perm: usize,
}

impl Default for ExplainSection {
    fn default() -> Self {
        ExplainSection {
            background_size: 100,
            signature_mode: SignatureMode::AllClasses,
            train_every: 4,
            signing_attacks: vec![AttackConfig::fgsm(0.15), AttackConfig::pgd(0.15, 0.15 / 8.0, 20), cw_reduced(0.0, 4)],
            local_windows: 8,
            n_perm: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSection {
    pub kinds: Vec<DetectorKind>,
    /// Hyperparameters shared by all kinds; `kind` and `seed` are replaced.
    pub spec: DetectorSpec,
}

impl Default for DetectorSection {
    fn default() -> Self {
        DetectorSection { kinds: DetectorKind::ALL.to_vec(), spec: DetectorSpec::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSection {
    pub schedule: InjectionSchedule,
    pub options: StreamOptions,
    /// Detector used by defended and monitored runs.
    pub detector: DetectorKind,
    pub modes: Vec<RunMode>,
}

impl Default for PipelineSection {
    fn default() -> Self {
        PipelineSection {
            schedule: InjectionSchedule { attack: AttackConfig::pgd(0.1, 0.0125, 20), ..Default::default() },
            options: StreamOptions::default(),
            detector: DetectorKind::Gbt,
            modes: vec![RunMode::Baseline, RunMode::Attacked, RunMode::Defended],
        }
    }
}

/// Every seed a run uses. `base` is the run seed recorded in artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub base: u64,
    /// Train trace; validation, test and live traces use +1, +2 and +10.
    pub data: u64,
    /// Preset k is initialized and trained with `model + k`.
    pub model: u64,
    pub background: u64,
    pub attack: u64,
    pub detector: u64,
    pub explain: u64,
}

impl Seeds {
    pub fn from_base(base: u64) -> Self {
        Seeds {
            base,
            data: base,
            model: base,
            background: base.wrapping_add(6),
            attack: base.wrapping_sub(1),
            detector: base.wrapping_sub(1),
            explain: base.wrapping_sub(1),
        }
    }
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::from_base(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub attack: AttackSection,
    pub explain: ExplainSection,
    pub detector: DetectorSection,
    pub pipeline: PipelineSection,
    pub seeds: Seeds,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataSection::default(),
            model: ModelSection::default(),
            train: TrainConfig { learning_rate: 0.005, epochs: 60, batch_size: 32, patience: 10, seed: 1, clip_norm: None },
            attack: AttackSection::default(),
            explain: ExplainSection::default(),
            detector: DetectorSection::default(),
            pipeline: PipelineSection::default(),
            seeds: Seeds::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Parses `text` over the defaults, applies `key.path=value` overrides,
    /// then validates. Objects merge key by key; arrays and scalars replace.
    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self> {
        let user: Value = serde_json::from_str(text)?;
        if !user.is_object() {
            return Err(Error::Schema("config must be a JSON object".into()));
        }
        let mut doc = serde_json::to_value(RunConfig::default())?;
        merge(&mut doc, user);
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig = serde_json::from_value(doc)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::from_json(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.timestep == 0 || d.train_stride == 0 || d.val_stride == 0 || d.test_stride == 0 {
            return Err(Error::config("timestep and strides must be positive"));
        }
        if d.train_cycles == 0 || d.val_cycles == 0 || d.test_cycles == 0 || d.live_cycles == 0 {
            return Err(Error::config("every split needs at least one cycle"));
        }
        d.synth.validate()?;
        if self.model.presets.is_empty() {
            return Err(Error::config("model.presets is empty"));
        }
        for p in &self.model.presets {
            ArchSpec::preset(p, d.timestep, d.synth.n_features)?.validate()?;
        }
        if !self.model.presets.contains(&self.model.primary) {
            return Err(Error::config(format!("primary model {:?} is not among the presets", self.model.primary)));
        }
        self.train.validate()?;
        for a in self.attack.attacks.iter().chain(&self.attack.transfer).chain(&self.explain.signing_attacks) {
            a.validate()?;
        }
        if self.attack.eval_every == 0 || self.explain.train_every == 0 {
            return Err(Error::config("subsampling steps must be positive"));
        }
        if self.explain.signing_attacks.is_empty() {
            return Err(Error::config("explain.signing_attacks is empty"));
        }
        if self.explain.background_size == 0 || self.explain.n_perm == 0 {
            return Err(Error::config("background size and permutation count must be positive"));
        }
        for &k in &self.detector.kinds {
            DetectorSpec { kind: k, ..self.detector.spec.clone() }.validate()?;
        }
        self.pipeline.schedule.validate()?;
        if self.pipeline.options.decision_interval == 0 {
            return Err(Error::config("decision interval must be positive"));
        }
        Ok(())
    }

    /// 16 hex chars over everything except `output_dir`.
    pub fn hash(&self) -> String {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut doc {
            m.remove("output_dir");
        }
        hex16(&Sha256::digest(serde_json::to_vec(&doc).expect("value serializes")))
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `a.b.0.c=value`; the value is JSON, or a bare string when it does not parse.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| Error::config(format!("override {spec:?} lacks '='")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::config(format!("bad override path {path:?}")));
    }
    let mut node = doc;
    for (i, key) in keys.iter().enumerate() {
        let last = i + 1 == keys.len();
        if !node.is_object() && !node.is_array() {
            *node = Value::Object(Default::default());
        }
        node = match node {
            Value::Array(items) => {
                let idx: usize = key.parse().map_err(|_| Error::config(format!("{path:?}: {key:?} is not an index")))?;
                items.get_mut(idx).ok_or_else(|| Error::config(format!("{path:?}: index {idx} out of range")))?
            }
            Value::Object(map) => map.entry(key.to_string()).or_insert(Value::Null),
            _ => unreachable!(),
        };
        if last {
            *node = value;
            return Ok(());
        }
    }
    Ok(())
}
