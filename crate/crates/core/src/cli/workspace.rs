use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::classifiers::ClassifierModel;
use crate::data::{apply_normalize, load_trace_file, window, NormalizationStats, SensorTrace, TimeSeriesWindow, TraceSchema};
use crate::detector::{AttackDetectorModel, DetectorKind};
use crate::error::{Error, Result};
use crate::explain::{sample_background, BackgroundSet, SignatureRepository};
use crate::TOOL_VERSION;

use super::config::RunConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
    Live,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::Test, Split::Live];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Live => "live",
        }
    }
}

/// Resolved config plus the artifact layout under its output directory.
pub struct Workspace {
    pub cfg: RunConfig,
    pub root: PathBuf,
    pub hash: String,
}

impl Workspace {
    pub fn new(cfg: RunConfig) -> Self {
        let hash = cfg.hash();
        Workspace { root: cfg.output_dir.clone(), cfg, hash }
    }

    pub fn header(&self) -> Value {
        json!({ "tool_version": TOOL_VERSION, "config_hash": self.hash, "seed": self.cfg.seeds.base })
    }

    /// `# tool_version=... config_hash=... seed=...` line for CSV outputs.
    pub fn comment(&self) -> String {
        format!("# tool_version={} config_hash={} seed={}\n", TOOL_VERSION, self.hash, self.cfg.seeds.base)
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn trace_path(&self, split: Split) -> PathBuf {
        self.path(&format!("data/{}.csv", split.name()))
    }

    pub fn model_path(&self, preset: &str) -> PathBuf {
        self.path(&format!("models/{preset}.csm"))
    }

    pub fn detector_path(&self, kind: DetectorKind) -> PathBuf {
        self.path(&format!("detectors/{kind}.det"))
    }

    pub fn repository_path(&self) -> PathBuf {
        self.path("signatures/repository.jsonl")
    }

    pub fn event_log_path(&self, mode: &str) -> PathBuf {
        self.path(&format!("runs/{mode}.events.jsonl"))
    }

    pub fn create(&self, rel: &str) -> Result<BufWriter<fs::File>> {
        let p = self.path(rel);
        create_file(&p)
    }

    /// Writes `body` merged under a `header` key.
    pub fn write_json(&self, rel: &str, body: Value) -> Result<()> {
        let mut doc = serde_json::Map::new();
        doc.insert("header".into(), self.header());
        match body {
            Value::Object(m) => doc.extend(m),
            other => {
                doc.insert("body".into(), other);
            }
        }
        let mut w = self.create(rel)?;
        serde_json::to_writer_pretty(&mut w, &Value::Object(doc))?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_rows<T: Serialize>(&self, rel: &str, rows: &[T]) -> Result<()> {
        let mut w = self.create(rel)?;
        w.write_all(self.comment().as_bytes())?;
        let mut c = csv::Writer::from_writer(w);
        for r in rows {
            c.serialize(r)?;
        }
        c.flush()?;
        Ok(())
    }

    pub fn read_json(&self, rel: &str, producer: &str) -> Result<Value> {
        let p = require(self.path(rel), producer)?;
        Ok(serde_json::from_str(&fs::read_to_string(p)?)?)
    }

    pub fn stats(&self) -> Result<NormalizationStats> {
        let doc = self.read_json("data/normalization.json", "synth")?;
        serde_json::from_value(doc["stats"].clone()).map_err(|e| Error::Schema(format!("normalization file: {e}")))
    }

    /// Normalized trace of `split`.
    pub fn trace(&self, split: Split) -> Result<SensorTrace> {
        let p = require(self.trace_path(split), "synth")?;
        let schema = TraceSchema { feature_columns: None, sample_rate: Some(self.cfg.data.synth.sample_rate) };
        let raw = load_trace_file(&p, &schema)?;
        apply_normalize(&raw, &self.stats()?)
    }

    pub fn windows(&self, split: Split) -> Result<Vec<TimeSeriesWindow>> {
        let d = &self.cfg.data;
        let stride = match split {
            Split::Train => d.train_stride,
            Split::Val => d.val_stride,
            Split::Test | Split::Live => d.test_stride,
        };
        window(&self.trace(split)?, d.timestep, stride)
    }

    pub fn model(&self, preset: &str) -> Result<ClassifierModel> {
        let p = require(self.model_path(preset), "train")?;
        ClassifierModel::load(&p)
    }

    pub fn primary(&self) -> Result<ClassifierModel> {
        self.model(&self.cfg.model.primary)
    }

    pub fn detector(&self, kind: DetectorKind) -> Result<AttackDetectorModel> {
        let p = require(self.detector_path(kind), "fit-detector")?;
        AttackDetectorModel::load(&p)
    }

    pub fn repository(&self) -> Result<SignatureRepository> {
        let p = require(self.repository_path(), "sign")?;
        SignatureRepository::load(&p)
    }

    /// Benign background drawn from the training windows.
    pub fn background(&self, model: &ClassifierModel) -> Result<BackgroundSet> {
        let train = self.windows(Split::Train)?;
        let picked = sample_background(&train, self.cfg.explain.background_size, self.cfg.seeds.background)?;
        BackgroundSet::for_model(model, picked)
    }

    /// Every `attack.eval_every`-th test window.
    pub fn attack_set(&self) -> Result<Vec<TimeSeriesWindow>> {
        Ok(self.windows(Split::Test)?.into_iter().step_by(self.cfg.attack.eval_every).collect())
    }
}

pub fn ensure_parent(p: PathBuf) -> Result<PathBuf> {
    if let Some(dir) = p.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(p)
}

pub fn create_file(p: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = p.parent() {
        fs::create_dir_all(dir)?;
    }
    let f = fs::File::create(p).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display()))))?;
    Ok(BufWriter::new(f))
}

pub fn require(p: PathBuf, producer: &str) -> Result<PathBuf> {
    if p.exists() {
        Ok(p)
    } else {
        Err(Error::MissingArtifact { path: p, producer: producer.to_string() })
    }
}
