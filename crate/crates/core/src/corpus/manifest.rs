// Corpus manifest: one JSON line per utterance, paths relative to the
// manifest's directory. Speaker ids are assigned densely from the sorted
// set of speaker names at load time, so they are stable across reloads.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub utterance_id: String,
    pub speaker: String,
    pub wav: String,
    pub pinyin: String,
    pub alignment: String,
    pub split: Split,
}

#[derive(Debug)]
pub struct CorpusManifest {
    pub records: Vec<ManifestRecord>,
    /// Sorted speaker names; index is the dense speaker id.
    pub speakers: Vec<String>,
    root: PathBuf,
}

impl CorpusManifest {
    pub fn from_records(records: Vec<ManifestRecord>, root: &Path) -> Result<CorpusManifest> {
        if records.is_empty() {
            return Err(Error::validation("manifest has no records"));
        }
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert(r.utterance_id.as_str()) {
                return Err(Error::validation(format!(
                    "duplicate utterance_id '{}'",
                    r.utterance_id
                )));
            }
        }
        let speakers: Vec<String> =
            records.iter().map(|r| r.speaker.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        Ok(CorpusManifest { records, speakers, root: root.to_path_buf() })
    }

    /// Load and validate: unique ids, dense speaker ids, referenced audio
    /// present on disk.
    pub fn load(path: &Path) -> Result<CorpusManifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| {
                Error::validation(format!("{}:{}: {e}", path.display(), lineno + 1))
            })?;
            records.push(rec);
        }
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let manifest = CorpusManifest::from_records(records, &root)?;
        for r in &manifest.records {
            let wav = manifest.wav_path(r);
            if !wav.exists() {
                return Err(Error::validation(format!(
                    "utterance '{}' references missing audio {}",
                    r.utterance_id,
                    wav.display()
                )));
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut body = String::new();
        for r in &self.records {
            body.push_str(&serde_json::to_string(r)?);
            body.push('\n');
        }
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn num_speakers(&self) -> usize {
        self.speakers.len()
    }

    pub fn speaker_id(&self, name: &str) -> Result<usize> {
        self.speakers
            .binary_search_by(|s| s.as_str().cmp(name))
            .map_err(|_| Error::validation(format!("unknown speaker '{name}'")))
    }

    pub fn wav_path(&self, record: &ManifestRecord) -> PathBuf {
        self.root.join(&record.wav)
    }

    pub fn alignment_path(&self, record: &ManifestRecord) -> PathBuf {
        self.root.join(&record.alignment)
    }

    pub fn records_in(&self, split: Split) -> Vec<&ManifestRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn record(&self, utterance_id: &str) -> Result<&ManifestRecord> {
        self.records
            .iter()
            .find(|r| r.utterance_id == utterance_id)
            .ok_or_else(|| Error::validation(format!("unknown utterance '{utterance_id}'")))
    }
}
