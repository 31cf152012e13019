//! Append-only metrics log. Wall-clock timings go to a separate file so the
//! metrics themselves stay byte-reproducible.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub arm: String,
    pub stage: String,
    pub stage_index: usize,
    pub step: usize,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub arm: String,
    pub stage_index: usize,
    pub step: usize,
    pub wall_ms: f64,
}

pub struct MetricsLog {
    path: PathBuf,
    metrics: BufWriter<File>,
    timings: BufWriter<File>,
    last: Option<(usize, usize)>,
}

fn write_line<T: Serialize>(w: &mut BufWriter<File>, value: &T, path: &Path) -> Result<()> {
    let s = serde_json::to_string(value).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(w, "{s}").map_err(|e| Error::io(path, e))
}

impl MetricsLog {
    /// Creates (truncating) `metrics.jsonl` and `timings.jsonl` in `dir`.
    pub fn create(dir: &Path) -> Result<Self> {
        let path = dir.join("metrics.jsonl");
        let tpath = dir.join("timings.jsonl");
        let metrics = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
        let timings = BufWriter::new(File::create(&tpath).map_err(|e| Error::io(&tpath, e))?);
        Ok(MetricsLog {
            path,
            metrics,
            timings,
            last: None,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends one record; `(stage_index, step)` must strictly increase.
    pub fn append(&mut self, record: &MetricsRecord, wall_ms: f64) -> Result<()> {
        let key = (record.stage_index, record.step);
        if self.last.is_some_and(|last| key <= last) {
            return Err(Error::Contract(format!(
                "metrics out of order: {key:?} after {:?}",
                self.last.unwrap()
            )));
        }
        self.last = Some(key);
        write_line(&mut self.metrics, record, &self.path)?;
        let timing = TimingRecord {
            arm: record.arm.clone(),
            stage_index: record.stage_index,
            step: record.step,
            wall_ms,
        };
        let tpath = self.path.with_file_name("timings.jsonl");
        write_line(&mut self.timings, &timing, &tpath)
    }

    pub fn flush(&mut self) -> Result<()> {
        self.metrics.flush().map_err(|e| Error::io(&self.path, e))?;
        self.timings.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Format(format!("{}: {e}", path.display()))))
        .collect()
}
