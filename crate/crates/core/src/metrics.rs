//! Append-only JSONL event log for a run, plus the reader that loads it
//! back. Writes are flushed per record and the writer tracks its byte
//! offset so a checkpoint can pin an exact log prefix to resume from.

use serde::{Deserialize, Serialize};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::curriculum::StageKind;
use crate::error::{Error, Result};

/// Which population split an evaluation covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Holdout,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Holdout => "holdout",
        })
    }
}

/// One event in the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum MetricRecord {
    /// One optimizer step.
    Step {
        step: u64,
        stage: StageKind,
        loop_index: u64,
        /// Mixture quota for gate-open samples (0 outside compression).
        quota: usize,
        drawn_compressible: usize,
        shortfall_compressible: usize,
        shortfall_rest: usize,
        groups: usize,
        grad_norm: f64,
        clipped_fraction: f64,
        /// Mean policy entropy proxy across the population.
        entropy: f64,
        mean_reward: f64,
    },
    /// One evaluation pass over a split.
    Eval {
        step: u64,
        split: Split,
        accuracy: f64,
        mean_length: f64,
        min_length: u64,
        max_length: u64,
        gated_fraction: f64,
    },
    /// A stage boundary.
    Stage { step: u64, from: StageKind, to: StageKind, loop_index: u64 },
    /// An early-stop rollback: parameters restored from an earlier eval.
    Restore { step: u64, restored_from_step: u64 },
}

impl MetricRecord {
    pub fn step(&self) -> u64 {
        match self {
            MetricRecord::Step { step, .. }
            | MetricRecord::Eval { step, .. }
            | MetricRecord::Stage { step, .. }
            | MetricRecord::Restore { step, .. } => *step,
        }
    }
}

/// Line-oriented writer that knows how many bytes it has committed.
#[derive(Debug)]
pub struct MetricsWriter {
    path: PathBuf,
    writer: BufWriter<File>,
    bytes: u64,
}

impl MetricsWriter {
    /// Create (truncating any existing file).
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(MetricsWriter { path, writer: BufWriter::new(file), bytes: 0 })
    }

    /// Open for appending after truncating the file to `offset` bytes, so
    /// the log continues exactly from a checkpointed prefix.
    pub fn resume(path: impl AsRef<Path>, offset: u64) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let len = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        if len < offset {
            return Err(Error::Checkpoint {
                path,
                detail: format!("log is {len} bytes but the checkpoint expects at least {offset}"),
            });
        }
        file.set_len(offset).map_err(|e| Error::io(&path, e))?;
        let mut file = file;
        file.seek(SeekFrom::Start(offset)).map_err(|e| Error::io(&path, e))?;
        Ok(MetricsWriter { path, writer: BufWriter::new(file), bytes: offset })
    }

    /// Serialize one record, write it with a trailing newline, and flush.
    pub fn append(&mut self, record: &MetricRecord) -> Result<()> {
        self.append_value(record)
    }

    /// Same as [`MetricsWriter::append`] but for any serializable line type;
    /// used for the rollout trace, which shares the offset/resume mechanics.
    pub fn append_value<T: Serialize>(&mut self, value: &T) -> Result<()> {
        let mut line = serde_json::to_vec(value).expect("record serializes");
        line.push(b'\n');
        self.writer.write_all(&line).map_err(|e| Error::io(&self.path, e))?;
        self.writer.flush().map_err(|e| Error::io(&self.path, e))?;
        self.bytes += line.len() as u64;
        Ok(())
    }

    /// Bytes committed so far (equals the file length after each append).
    pub fn byte_offset(&self) -> u64 {
        self.bytes
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Load every event from a run log, with line-numbered parse errors.
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let raw = line.map_err(|e| Error::Trace {
            line: line_no,
            detail: format!("unreadable line: {e}"),
        })?;
        let record = serde_json::from_str(&raw)
            .map_err(|e| Error::Trace { line: line_no, detail: e.to_string() })?;
        records.push(record);
    }
    Ok(records)
}

/// Filter helper: evaluation events for one split, ascending by step.
pub fn eval_series(records: &[MetricRecord], split: Split) -> Vec<&MetricRecord> {
    records
        .iter()
        .filter(|r| matches!(r, MetricRecord::Eval { split: s, .. } if *s == split))
        .collect()
}
