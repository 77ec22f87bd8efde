use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::TOOL_VERSION;

use super::signature::XaiSignature;

pub const REPOSITORY_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

/// One line of the repository file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignatureRecord {
    pub id: String,
    pub model_fingerprint: String,
    pub label: u8,
    pub split: SplitTag,
    pub values: Vec<f64>,
    /// Added by the online detector rather than by construction; never
    /// extracted into evaluation sets.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub self_labeled: bool,
}

impl SignatureRecord {
    pub fn from_signature(sig: &XaiSignature, split: SplitTag) -> Self {
        SignatureRecord {
            id: sig.id.clone(),
            model_fingerprint: sig.model_fingerprint.clone(),
            label: sig.label,
            split,
            values: sig.values.clone(),
            self_labeled: false,
        }
    }

    fn key(&self) -> (String, String) {
        (self.id.clone(), self.model_fingerprint.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema_version: u32,
    tool_version: String,
    #[serde(default)]
    config_hash: Option<String>,
}

/// Labeled signature matrix extracted from a repository.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SignatureDataset {
    pub ids: Vec<String>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<u8>,
    /// `None` when empty.
    pub model_fingerprint: Option<String>,
}

impl SignatureDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }
}

/// Append-only store of labeled signatures, keyed by (window id, fingerprint).
///
/// File form is JSON lines: a header object, then one [`SignatureRecord`]
/// per line.
#[derive(Clone, Debug)]
pub struct SignatureRepository {
    header: Header,
    records: Vec<SignatureRecord>,
    keys: HashSet<(String, String)>,
}

impl SignatureRepository {
    pub fn new(config_hash: Option<String>) -> Self {
        SignatureRepository {
            header: Header { schema_version: REPOSITORY_SCHEMA_VERSION, tool_version: TOOL_VERSION.into(), config_hash },
            records: Vec::new(),
            keys: HashSet::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[SignatureRecord] {
        &self.records
    }

    pub fn config_hash(&self) -> Option<&str> {
        self.header.config_hash.as_deref()
    }

    fn check(&self, records: &[SignatureRecord]) -> Result<()> {
        let mut dupes = Vec::new();
        let mut seen = HashSet::new();
        for r in records {
            if r.label > 1 {
                return Err(Error::contract(format!("signature {} has label {}, expected 0 or 1", r.id, r.label)));
            }
            if r.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric { location: format!("signature {}", r.id), detail: "non-finite value".into() });
            }
            let key = r.key();
            if self.keys.contains(&key) || !seen.insert(key) {
                dupes.push(format!("{}@{}", r.id, r.model_fingerprint));
            }
        }
        if dupes.is_empty() {
            Ok(())
        } else {
            Err(Error::Duplicate(dupes))
        }
    }

    /// Appends all of `records` or none of them.
    pub fn append(&mut self, records: Vec<SignatureRecord>) -> Result<()> {
        self.check(&records)?;
        for r in records {
            self.keys.insert(r.key());
            self.records.push(r);
        }
        Ok(())
    }

    pub fn append_signatures(&mut self, signatures: &[XaiSignature], split: SplitTag) -> Result<()> {
        self.append(signatures.iter().map(|s| SignatureRecord::from_signature(s, split)).collect())
    }

    /// Online update after a detection: stored as an adversarial training
    /// record flagged as self-labeled.
    pub fn record_detection(&mut self, sig: &XaiSignature) -> Result<()> {
        let mut r = SignatureRecord::from_signature(sig, SplitTag::Train);
        r.label = 1;
        r.self_labeled = true;
        self.append(vec![r])
    }

    /// Records tagged `split` in insertion order. Self-labeled records are
    /// only included for the training split.
    pub fn dataset(&self, split: SplitTag) -> Result<SignatureDataset> {
        let mut ds = SignatureDataset::default();
        for r in self.records.iter().filter(|r| r.split == split && !(r.self_labeled && split == SplitTag::Test)) {
            match &ds.model_fingerprint {
                None => ds.model_fingerprint = Some(r.model_fingerprint.clone()),
                Some(fp) if *fp != r.model_fingerprint => {
                    return Err(Error::contract(format!(
                        "split {split:?} mixes fingerprints {fp} and {}",
                        r.model_fingerprint
                    )));
                }
                Some(_) => {}
            }
            if !ds.x.is_empty() && ds.dim() != r.values.len() {
                return Err(Error::contract(format!("signature {} has {} values, expected {}", r.id, r.values.len(), ds.dim())));
            }
            ds.ids.push(r.id.clone());
            ds.x.push(r.values.clone());
            ds.y.push(r.label);
        }
        Ok(ds)
    }

    pub fn write<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = BufWriter::new(sink);
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(source: R) -> Result<Self> {
        let mut lines = BufReader::new(source).lines();
        let first = lines.next().ok_or_else(|| Error::Schema("repository file is empty".into()))??;
        let header: Header =
            serde_json::from_str(&first).map_err(|e| Error::Schema(format!("repository header: {e}")))?;
        if header.schema_version != REPOSITORY_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "repository schema {} is not supported (expected {REPOSITORY_SCHEMA_VERSION})",
                header.schema_version
            )));
        }
        let mut repo = SignatureRepository { header, records: Vec::new(), keys: HashSet::new() };
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: SignatureRecord =
                serde_json::from_str(&line).map_err(|e| Error::Parse { row: i + 2, detail: e.to_string() })?;
            records.push(r);
        }
        repo.append(records)?;
        Ok(repo)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(File::open(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(File::create(path)?)
    }

    /// Appends `records` to the file at `path` (creating it with a header if
    /// needed) after checking them against its current contents.
    pub fn append_to_file(path: &Path, records: Vec<SignatureRecord>, config_hash: Option<String>) -> Result<()> {
        let mut repo = if path.exists() { Self::load(path)? } else { Self::new(config_hash) };
        let fresh = !path.exists();
        repo.check(&records)?;
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            serde_json::to_writer(&mut file, &repo.header)?;
            file.write_all(b"\n")?;
        }
        for r in &records {
            serde_json::to_writer(&mut file, r)?;
            file.write_all(b"\n")?;
        }
        repo.append(records)?;
        Ok(())
    }

    /// Reloads, re-verifies and rewrites the file without blank lines.
    /// Returns the record count.
    pub fn rebuild(path: &Path) -> Result<usize> {
        let repo = Self::load(path)?;
        let tmp = path.with_extension("rebuild.tmp");
        repo.save(&tmp)?;
        std::fs::rename(&tmp, path)?;
        Ok(repo.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, fp: &str, label: u8, split: SplitTag) -> SignatureRecord {
        SignatureRecord {
            id: id.into(),
            model_fingerprint: fp.into(),
            label,
            split,
            values: vec![label as f64, 0.5, -1.25],
            self_labeled: false,
        }
    }

    #[test]
    fn append_then_extract_in_insertion_order() {
        let mut repo = SignatureRepository::new(None);
        repo.append(vec![rec("b", "m", 1, SplitTag::Train), rec("a", "m", 0, SplitTag::Train), rec("c", "m", 0, SplitTag::Test)])
            .unwrap();
        let ds = repo.dataset(SplitTag::Train).unwrap();
        assert_eq!(ds.ids, vec!["b", "a"]);
        assert_eq!(ds.y, vec![1, 0]);
        assert_eq!(ds.x[0], vec![1.0, 0.5, -1.25]);
        assert_eq!(repo.dataset(SplitTag::Test).unwrap().len(), 1);
    }

    #[test]
    fn duplicates_are_rejected_atomically() {
        let mut repo = SignatureRepository::new(None);
        repo.append(vec![rec("a", "m", 0, SplitTag::Train)]).unwrap();
        let err = repo.append(vec![rec("z", "m", 0, SplitTag::Train), rec("a", "m", 1, SplitTag::Test)]).unwrap_err();
        match err {
            Error::Duplicate(keys) => assert_eq!(keys, vec!["a@m"]),
            e => panic!("{e}"),
        }
        assert_eq!(repo.len(), 1);
        // same window under a different model is a different key
        repo.append(vec![rec("a", "other", 0, SplitTag::Train)]).unwrap();
        assert!(matches!(repo.append(vec![rec("q", "m", 0, SplitTag::Train); 2]), Err(Error::Duplicate(_))));
    }

    #[test]
    fn empty_extraction_and_mixed_fingerprints() {
        let mut repo = SignatureRepository::new(None);
        assert!(repo.dataset(SplitTag::Test).unwrap().is_empty());
        repo.append(vec![rec("a", "m1", 0, SplitTag::Train), rec("b", "m2", 1, SplitTag::Train)]).unwrap();
        assert!(matches!(repo.dataset(SplitTag::Train), Err(Error::Contract(_))));
    }

    #[test]
    fn bad_label() {
        let mut repo = SignatureRepository::new(None);
        assert!(matches!(repo.append(vec![rec("a", "m", 2, SplitTag::Train)]), Err(Error::Contract(_))));
    }

    #[test]
    fn self_labeled_records_stay_out_of_evaluation() {
        let mut repo = SignatureRepository::new(None);
        let sig = XaiSignature { id: "w".into(), model_fingerprint: "m".into(), label: 0, values: vec![1.0] };
        repo.record_detection(&sig).unwrap();
        assert!(repo.records()[0].self_labeled && repo.records()[0].label == 1);
        assert!(repo.dataset(SplitTag::Test).unwrap().is_empty());
    }

    #[test]
    fn file_round_trip_append_and_rebuild() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("repo.jsonl");
        SignatureRepository::append_to_file(&path, vec![rec("a", "m", 0, SplitTag::Train)], Some("abc".into())).unwrap();
        SignatureRepository::append_to_file(&path, vec![rec("b", "m", 1, SplitTag::Test)], None).unwrap();
        assert!(matches!(
            SignatureRepository::append_to_file(&path, vec![rec("a", "m", 1, SplitTag::Test)], None),
            Err(Error::Duplicate(_))
        ));
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        std::fs::write(&path, text.replace('\n', "\n\n")).unwrap();
        assert_eq!(SignatureRepository::rebuild(&path).unwrap(), 2);
        let repo = SignatureRepository::load(&path).unwrap();
        assert_eq!(repo.config_hash(), Some("abc"));
        assert_eq!(repo.records()[1], rec("b", "m", 1, SplitTag::Test));
        assert_eq!(std::fs::read_to_string(&path).unwrap(), text);
    }

    #[test]
    fn unknown_schema_version() {
        let text = "{\"schema_version\":9,\"tool_version\":\"x\"}\n";
        assert!(matches!(SignatureRepository::read(text.as_bytes()), Err(Error::Schema(_))));
    }
}
