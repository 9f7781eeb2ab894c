// Per-step training metrics as a JSON-lines log: one self-contained
// record per line, flushed as written, so a crashed or killed run still
// leaves a readable trace.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::LossReport;

/// One line of the training log. Only seed-determined quantities appear
/// here: the same seed must reproduce the log byte for byte, so wall
/// timings stay out (the run summary reports them instead).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    #[serde(flatten)]
    pub losses: LossReport,
}

/// Appends one JSON object per training step to a line-oriented log.
pub struct MetricsLogger {
    out: BufWriter<File>,
    path: std::path::PathBuf,
}

impl MetricsLogger {
    /// Creates (or truncates) the log file, creating parent directories
    /// as needed.
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(MetricsLogger { out: BufWriter::new(file), path: path.to_path_buf() })
    }

    /// Opens the log for appending (used when resuming a run).
    pub fn append(path: &Path) -> Result<Self> {
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(MetricsLogger { out: BufWriter::new(file), path: path.to_path_buf() })
    }

    pub fn log(&mut self, step: u64, losses: &LossReport) -> Result<()> {
        let record = MetricsRecord { step, losses: losses.clone() };
        let line = serde_json::to_string(&record)?;
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))?;
        // One line per step reaches the file immediately.
        self.out.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(())
    }
}

/// Reads a metrics log, failing on the first malformed line.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let (records, skipped) = read_metrics_lenient(path)?;
    if skipped > 0 {
        return Err(Error::validation(format!(
            "metrics log {} contains {skipped} malformed line(s)",
            path.display()
        )));
    }
    Ok(records)
}

/// Reads a metrics log, skipping malformed lines; returns the parsed
/// records and the number of lines skipped.
pub fn read_metrics_lenient(path: &Path) -> Result<(Vec<MetricsRecord>, usize)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut skipped = 0usize;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<MetricsRecord>(&line) {
            Ok(r) => records.push(r),
            Err(_) => skipped += 1,
        }
    }
    Ok((records, skipped))
}
