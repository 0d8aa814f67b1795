//! Deterministic synthetic data: a Markov pretraining corpus and three
//! sequence-classification tasks at desk scale.
//!
//! Everything is a pure function of `(generator config, seed, split)`; the
//! train and test splits draw from disjoint seed streams. Labels are always
//! recomputable from the stored sequence by [`rule_label`].

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

const SCHEMA: &str = "graddrop-dataset/v1";

/// Acceptable class balance for labelled tasks, enforced by rejection.
const BALANCE_MAX: f64 = 0.55;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
    Corpus,
}

impl Split {
    fn stream_tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Test => 2,
            Split::Corpus => 3,
        }
    }
}

/// The labelled task kinds. Every task is binary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    /// Which of two designated tokens (0 and 1) occurs more often.
    MajorityToken,
    /// Whether the first and last tokens match.
    FirstLastMatch,
    /// Parity of the designated token's count in the first half.
    WindowedParity,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::MajorityToken => "majority-token",
            TaskKind::FirstLastMatch => "first-last-match",
            TaskKind::WindowedParity => "windowed-parity",
        }
    }

    pub fn parse(s: &str) -> Result<TaskKind> {
        match s {
            "majority-token" => Ok(TaskKind::MajorityToken),
            "first-last-match" => Ok(TaskKind::FirstLastMatch),
            "windowed-parity" => Ok(TaskKind::WindowedParity),
            other => Err(Error::Config(format!("unknown task kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A generated dataset. `labels` is empty for the unlabeled corpus.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub sequences: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
    pub split: Split,
    pub seed: u64,
    pub vocab: usize,
    pub seq_len: usize,
    pub kind: Option<TaskKind>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

fn check_vocab(vocab: usize) -> Result<()> {
    if vocab < 8 {
        return Err(Error::Config(format!("vocab must be >= 8, got {vocab}")));
    }
    Ok(())
}

/// Transition matrix of the first-order Markov chain behind the synthetic
/// language: mostly uniform mass plus three preferred successors per token,
/// so next-token prediction is learnable above chance. Depends only on
/// `(vocab, seed)`, never on the split.
pub fn markov_chain(vocab: usize, seed: u64) -> Vec<Vec<f64>> {
    let uniform = 0.4 / vocab as f64;
    (0..vocab)
        .map(|a| {
            let mut row = vec![uniform; vocab];
            let mut stream = Stream::keyed(seed, 0, a as u64, "chain");
            let mut pool: Vec<usize> = (0..vocab).collect();
            for b in stream.choose_k(&mut pool, 3) {
                row[b] += 0.2;
            }
            row
        })
        .collect()
}

/// Unlabeled corpus drawn from the seeded Markov chain.
pub fn gen_synthetic_language(
    vocab: usize,
    seq_len: usize,
    count: usize,
    seed: u64,
    split: Split,
) -> Result<Dataset> {
    check_vocab(vocab)?;
    let chain = markov_chain(vocab, seed);
    let mut sequences = Vec::with_capacity(count);
    for s in 0..count {
        let mut stream = Stream::keyed(seed, split.stream_tag(), s as u64, "language");
        let mut seq = Vec::with_capacity(seq_len);
        let mut prev = stream.below(vocab);
        seq.push(prev);
        for _ in 1..seq_len {
            prev = stream.categorical(&chain[prev]);
            seq.push(prev);
        }
        sequences.push(seq);
    }
    Ok(Dataset {
        sequences,
        labels: Vec::new(),
        split,
        seed,
        vocab,
        seq_len,
        kind: None,
    })
}

/// Majority sequences with a count gap below this are rejected at
/// generation time, keeping the decision margin wide enough that the task
/// is comfortably learnable at desk scale. The labelling rule itself does
/// not depend on the gap.
const MAJORITY_MIN_GAP: usize = 2;

/// The pure labelling rule for each task. Returns `None` for rejected
/// sequences (ties in the majority count).
pub fn rule_label(kind: TaskKind, seq: &[usize]) -> Option<usize> {
    match kind {
        TaskKind::MajorityToken => {
            let zeros = seq.iter().filter(|&&t| t == 0).count();
            let ones = seq.iter().filter(|&&t| t == 1).count();
            match zeros.cmp(&ones) {
                std::cmp::Ordering::Greater => Some(0),
                std::cmp::Ordering::Less => Some(1),
                std::cmp::Ordering::Equal => None,
            }
        }
        TaskKind::FirstLastMatch => Some(usize::from(seq.first() == seq.last())),
        TaskKind::WindowedParity => {
            let window = seq.len() / 2;
            Some(seq[..window].iter().filter(|&&t| t == 0).count() % 2)
        }
    }
}

fn accept_candidate(kind: TaskKind, seq: &[usize]) -> bool {
    match kind {
        TaskKind::MajorityToken => {
            let zeros = seq.iter().filter(|&&t| t == 0).count() as isize;
            let ones = seq.iter().filter(|&&t| t == 1).count() as isize;
            (zeros - ones).unsigned_abs() >= MAJORITY_MIN_GAP
        }
        _ => true,
    }
}

fn candidate_sequence(
    kind: TaskKind,
    vocab: usize,
    seq_len: usize,
    stream: &mut Stream,
) -> Vec<usize> {
    match kind {
        TaskKind::MajorityToken => (0..seq_len)
            .map(|_| {
                let u = stream.next_f64();
                if u < 0.25 {
                    0
                } else if u < 0.5 {
                    1
                } else {
                    2 + stream.below(vocab - 2)
                }
            })
            .collect(),
        TaskKind::FirstLastMatch => {
            let mut seq: Vec<usize> = (0..seq_len).map(|_| stream.below(vocab)).collect();
            // Force a roughly even match rate; the label still comes from
            // the rule, not from this construction.
            if stream.next_f64() < 0.5 {
                seq[seq_len - 1] = seq[0];
            } else {
                let alt = stream.below(vocab - 1);
                seq[seq_len - 1] = if alt >= seq[0] { alt + 1 } else { alt };
            }
            seq
        }
        TaskKind::WindowedParity => (0..seq_len)
            .map(|i| {
                if i < seq_len / 2 && stream.next_f64() < 0.3 {
                    0
                } else {
                    stream.below(vocab)
                }
            })
            .collect(),
    }
}

/// Labelled binary classification data. Ties are rejected and each class is
/// capped at 55% of the total by rejection, so the balance lands in 45-55%.
pub fn gen_classification_task(
    kind: TaskKind,
    vocab: usize,
    seq_len: usize,
    count: usize,
    seed: u64,
    split: Split,
) -> Result<Dataset> {
    check_vocab(vocab)?;
    if seq_len < 2 {
        return Err(Error::Config(format!("seq_len must be >= 2, got {seq_len}")));
    }
    let cap = ((count as f64) * BALANCE_MAX).ceil() as usize;
    let mut sequences = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    let mut class_counts = [0usize; 2];
    let mut attempt: u64 = 0;
    while sequences.len() < count {
        let mut stream = Stream::keyed(seed, split.stream_tag(), attempt, "task");
        attempt += 1;
        let seq = candidate_sequence(kind, vocab, seq_len, &mut stream);
        if !accept_candidate(kind, &seq) {
            continue;
        }
        let Some(label) = rule_label(kind, &seq) else {
            continue;
        };
        if class_counts[label] >= cap {
            continue;
        }
        class_counts[label] += 1;
        sequences.push(seq);
        labels.push(label);
    }
    Ok(Dataset {
        sequences,
        labels,
        split,
        seed,
        vocab,
        seq_len,
        kind: Some(kind),
    })
}

// ── Line-delimited export/import ────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    schema: String,
    vocab: usize,
    seq_len: usize,
    count: usize,
    seed: u64,
    split: Split,
    #[serde(skip_serializing_if = "Option::is_none")]
    kind: Option<TaskKind>,
}

#[derive(Serialize, Deserialize)]
struct SampleLine {
    tokens: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
}

pub fn save_jsonl(ds: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = DatasetHeader {
        schema: SCHEMA.to_string(),
        vocab: ds.vocab,
        seq_len: ds.seq_len,
        count: ds.len(),
        seed: ds.seed,
        split: ds.split,
        kind: ds.kind,
    };
    let mut write_line = |v: String| -> Result<()> {
        writeln!(w, "{v}").map_err(|e| Error::io(path, e))
    };
    write_line(serde_json::to_string(&header).expect("header json"))?;
    for (i, seq) in ds.sequences.iter().enumerate() {
        let line = SampleLine {
            tokens: seq.clone(),
            label: ds.labels.get(i).copied(),
        };
        write_line(serde_json::to_string(&line).expect("sample json"))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_jsonl(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Input(format!("{}: empty dataset file", path.display())))?
        .map_err(|e| Error::io(path, e))?;
    let header: DatasetHeader = serde_json::from_str(&header_line)
        .map_err(|e| Error::Input(format!("{}: bad header: {e}", path.display())))?;
    if header.schema != SCHEMA {
        return Err(Error::Input(format!(
            "{}: schema {:?}, expected {SCHEMA:?}",
            path.display(),
            header.schema
        )));
    }
    let mut sequences = Vec::with_capacity(header.count);
    let mut labels = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: SampleLine = serde_json::from_str(&line)
            .map_err(|e| Error::Input(format!("{}: bad sample: {e}", path.display())))?;
        if let Some(l) = sample.label {
            labels.push(l);
        }
        sequences.push(sample.tokens);
    }
    if !labels.is_empty() && labels.len() != sequences.len() {
        return Err(Error::Input(format!(
            "{}: {} labels for {} sequences",
            path.display(),
            labels.len(),
            sequences.len()
        )));
    }
    Ok(Dataset {
        sequences,
        labels,
        split: header.split,
        seed: header.seed,
        vocab: header.vocab,
        seq_len: header.seq_len,
        kind: header.kind,
    })
}
