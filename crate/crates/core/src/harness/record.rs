//! Per-run records: the append-only `metrics.jsonl`, the `summary.json`,
//! and the plot-ready timeline CSVs.
//!
//! One `metrics.jsonl` line per completed epoch, parseable on its own at any
//! point during a run. Wall time lives only in the summary so re-running an
//! identical config reproduces `metrics.jsonl` byte for byte.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::SeedConfig;
use crate::mask::PolicyKind;
use crate::tasks::TaskKind;

/// Active-gradient fractions by layer group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFractions {
    pub embed: f64,
    pub encoder: Vec<f64>,
    pub head: f64,
}

impl LayerFractions {
    pub fn from_layers(fractions: &[f64]) -> LayerFractions {
        let last = fractions.len() - 1;
        LayerFractions {
            embed: fractions[0],
            encoder: fractions[1..last].to_vec(),
            head: fractions[last],
        }
    }
}

/// One completed epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
    pub p_effective: f64,
    pub active_fraction: LayerFractions,
}

/// Diagnostic line appended when a run aborts on a non-finite loss.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AbortRecord {
    pub event: String,
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub policy: PolicyKind,
    pub task: TaskKind,
    pub seeds: SeedConfig,
    pub epochs_completed: usize,
    pub best_accuracy: f64,
    pub best_epoch: usize,
    pub final_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
    pub wall_time_s: f64,
}

/// Everything a finished (or aborted) run produced.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub epochs: Vec<EpochRecord>,
    pub summary: RunSummary,
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TIMELINE_LAYERS_FILE: &str = "timeline_layers.csv";
pub const TIMELINE_METRICS_FILE: &str = "timeline_metrics.csv";
pub const CHECKPOINT_FILE: &str = "model_final.ckpt";

/// Append-only writer for `metrics.jsonl`, flushed line by line so a crash
/// never loses a completed epoch.
pub struct MetricsWriter {
    out: BufWriter<File>,
    path: PathBuf,
}

impl MetricsWriter {
    pub fn create(dir: &Path) -> Result<MetricsWriter> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(METRICS_FILE);
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(MetricsWriter {
            out: BufWriter::new(file),
            path,
        })
    }

    pub fn append_epoch(&mut self, record: &EpochRecord) -> Result<()> {
        let line = serde_json::to_string(record).expect("epoch record json");
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))?;
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }

    pub fn append_abort(&mut self, record: &AbortRecord) -> Result<()> {
        let line = serde_json::to_string(record).expect("abort record json");
        writeln!(self.out, "{line}").map_err(|e| Error::io(&self.path, e))?;
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn write_summary(dir: &Path, summary: &RunSummary) -> Result<()> {
    let path = dir.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(summary).expect("summary json");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_summary(dir: &Path) -> Result<RunSummary> {
    let path = dir.join(SUMMARY_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

/// Parse the epoch lines back out of a run's `metrics.jsonl`, skipping
/// diagnostic event lines.
pub fn read_epochs(dir: &Path) -> Result<Vec<EpochRecord>> {
    let path = dir.join(METRICS_FILE);
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if let Ok(rec) = serde_json::from_str::<EpochRecord>(&line) {
            out.push(rec);
        }
    }
    Ok(out)
}

/// Write the two plot-ready CSVs for a record into `dir`:
/// `timeline_layers.csv` (epoch × layer active fractions, embeddings and
/// head included as their own columns) and `timeline_metrics.csv`.
pub fn export_timeline(epochs: &[EpochRecord], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n_enc = epochs.first().map_or(0, |e| e.active_fraction.encoder.len());

    let layers_path = dir.join(TIMELINE_LAYERS_FILE);
    let mut w = String::new();
    w.push_str("epoch,embed");
    for i in 1..=n_enc {
        w.push_str(&format!(",enc_{i}"));
    }
    w.push_str(",head\n");
    for e in epochs {
        w.push_str(&format!("{},{}", e.epoch, e.active_fraction.embed));
        for f in &e.active_fraction.encoder {
            w.push_str(&format!(",{f}"));
        }
        w.push_str(&format!(",{}\n", e.active_fraction.head));
    }
    std::fs::write(&layers_path, w).map_err(|e| Error::io(&layers_path, e))?;

    let metrics_path = dir.join(TIMELINE_METRICS_FILE);
    let mut w = String::from("epoch,train_loss,test_accuracy,p_effective\n");
    for e in epochs {
        w.push_str(&format!(
            "{},{},{},{}\n",
            e.epoch, e.train_loss, e.test_accuracy, e.p_effective
        ));
    }
    std::fs::write(&metrics_path, w).map_err(|e| Error::io(&metrics_path, e))
}
