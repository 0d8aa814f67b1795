//! Experiment driver: pretrain → fine-tune loops under a mask policy, with
//! metrics persisted per epoch, plus the grid runner and policy comparison.

pub mod compare;
pub mod config;
pub mod record;

pub use compare::{compare_policies, compare_run_dirs, PolicyComparison};
pub use config::{PolicyConfig, RunConfig, SeedConfig, TrainConfig};
pub use record::{
    export_timeline, read_epochs, read_summary, AbortRecord, EpochRecord, LayerFractions,
    MetricsWriter, RunRecord, RunSummary,
};

use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::mask::{GradMask, MaskState, PolicyKind};
use crate::model::Model;
use crate::optim::Sgd;
use crate::rng::Stream;
use crate::tasks::{self, Dataset, Split};
use crate::tensor::Tensor;

/// Fraction of positions hidden during masked-token pretraining.
const PRETRAIN_MASK_RATE: f64 = 0.15;

/// Run one experiment. With an output directory the run persists
/// `metrics.jsonl` (appended and flushed per epoch), `summary.json`, and a
/// final checkpoint; without one it only returns the in-memory record.
///
/// A non-finite training loss aborts the run: the diagnostic event is
/// appended to the metrics file, the summary is marked, and the error
/// surfaces as a numerical failure.
pub fn run_experiment(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<RunRecord> {
    cfg.validate()?;
    let started = Instant::now();

    let seq_len = cfg.model.max_len;
    let train = tasks::gen_classification_task(
        cfg.train.task,
        cfg.model.vocab,
        seq_len,
        cfg.train.train_samples,
        cfg.seeds.data,
        Split::Train,
    )?;
    let test = tasks::gen_classification_task(
        cfg.train.task,
        cfg.model.vocab,
        seq_len,
        cfg.train.test_samples,
        cfg.seeds.data,
        Split::Test,
    )?;

    let model = Model::new(&cfg.model, cfg.seeds.init)?;
    let mut writer = match out_dir {
        Some(dir) => Some(MetricsWriter::create(dir)?),
        None => None,
    };

    if cfg.train.pretrain {
        pretrain(&model, cfg)?;
    }

    let params = model.params();
    let policy = cfg.mask_policy();
    let mut state = MaskState::new(cfg.seeds.mask, &policy, params)?;
    let mut sgd = Sgd::new(cfg.optim)?;

    let mut epochs: Vec<EpochRecord> = Vec::with_capacity(cfg.train.epochs);
    let mut abort: Option<AbortRecord> = None;

    'training: for epoch in 1..=cfg.train.epochs {
        let epoch_mask = state.advance_epoch(params)?;

        // Batch order comes from the data seed alone, so runs that differ
        // only in policy see identical batches.
        let mut order: Vec<usize> = (0..train.len()).collect();
        Stream::keyed(cfg.seeds.data, epoch as u64, 0, "shuffle").shuffle(&mut order);

        let n_layer_groups = cfg.model.layers + 2;
        let mut fraction_sum = vec![0.0; n_layer_groups];
        let mut batches = 0usize;
        let mut loss_sum = 0.0;

        for (batch_idx, chunk) in order.chunks(cfg.train.batch_size).enumerate() {
            let seqs: Vec<&[usize]> = chunk.iter().map(|&i| train.sequences[i].as_slice()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let loss = model.batch_loss(&seqs, &labels)?;
            let loss_value = loss.item();
            if !loss_value.is_finite() {
                abort = Some(AbortRecord {
                    event: "non-finite-loss".into(),
                    epoch,
                    batch: batch_idx,
                    loss: loss_value,
                });
                break 'training;
            }
            loss_sum += loss_value * chunk.len() as f64;
            loss.backward()?;

            let batch_mask;
            let mask: &GradMask = match &epoch_mask {
                Some(m) => m,
                None => {
                    batch_mask = state.sample_batch_mask(params)?;
                    &batch_mask
                }
            };
            for (acc, f) in fraction_sum.iter_mut().zip(mask.active_fraction(params)) {
                *acc += f;
            }
            batches += 1;
            sgd.step(params, mask)?;
        }

        let fractions: Vec<f64> = fraction_sum.iter().map(|s| s / batches as f64).collect();
        let test_accuracy = evaluate(&model, &test)?;
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            test_accuracy,
            p_effective: state.p_effective(),
            active_fraction: LayerFractions::from_layers(&fractions),
        };
        if let Some(w) = writer.as_mut() {
            w.append_epoch(&rec)?;
        }
        epochs.push(rec);
    }

    if let (Some(w), Some(a)) = (writer.as_mut(), abort.as_ref()) {
        w.append_abort(a)?;
    }

    let (best_epoch, best_accuracy) = epochs
        .iter()
        .fold((0usize, 0.0f64), |(be, ba), r| {
            if r.test_accuracy > ba {
                (r.epoch, r.test_accuracy)
            } else {
                (be, ba)
            }
        });
    let summary = RunSummary {
        policy: cfg.policy.kind,
        task: cfg.train.task,
        seeds: cfg.seeds,
        epochs_completed: epochs.len(),
        best_accuracy,
        best_epoch,
        final_accuracy: epochs.last().map_or(0.0, |r| r.test_accuracy),
        aborted: abort.as_ref().map(|a| format!(
            "{} at epoch {} batch {}",
            a.event, a.epoch, a.batch
        )),
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    if let Some(dir) = out_dir {
        record::write_summary(dir, &summary)?;
        checkpoint::save(params, &dir.join(record::CHECKPOINT_FILE))?;
    }

    if let Some(a) = abort {
        return Err(Error::Numeric(format!(
            "training loss became {} at epoch {} batch {}",
            a.loss, a.epoch, a.batch
        )));
    }
    Ok(RunRecord { epochs, summary })
}

/// Test-set accuracy of the argmax classifier.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<f64> {
    let mut correct = 0usize;
    for (seq, &label) in data.sequences.iter().zip(&data.labels) {
        if model.predict(seq)? == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Masked-token pretraining on the synthetic language, plain SGD, no masks.
/// The prediction head is local to this function and dropped afterwards.
fn pretrain(model: &Model, cfg: &RunConfig) -> Result<()> {
    let seq_len = cfg.model.max_len;
    let corpus = tasks::gen_synthetic_language(
        cfg.model.vocab,
        seq_len,
        cfg.train.pretrain_sequences,
        cfg.seeds.data,
        Split::Corpus,
    )?;
    let (mlm_w, mlm_b) = model.new_mlm_head(cfg.seeds.init);
    let params = model.pretrain_params(&mlm_w, &mlm_b)?;
    let mut sgd = Sgd::new(cfg.optim)?;
    let mask_token = cfg.model.mask_token();

    for epoch in 1..=cfg.train.pretrain_epochs {
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        Stream::keyed(cfg.seeds.data, epoch as u64, 0, "pretrain-shuffle").shuffle(&mut order);
        for (batch_idx, chunk) in order.chunks(cfg.train.batch_size).enumerate() {
            let mut total: Option<Tensor> = None;
            for &i in chunk {
                let seq = &corpus.sequences[i];
                let (masked_seq, positions, originals) =
                    mask_sequence(seq, mask_token, cfg.seeds.data, epoch, i);
                let loss =
                    model.masked_token_loss(&masked_seq, &positions, &originals, &mlm_w, &mlm_b)?;
                total = Some(match total {
                    Some(t) => t.add(&loss)?,
                    None => loss,
                });
            }
            let loss = total.expect("non-empty batch").scale(1.0 / chunk.len() as f64);
            let loss_value = loss.item();
            if !loss_value.is_finite() {
                return Err(Error::Numeric(format!(
                    "pretraining loss became {loss_value} at epoch {epoch} batch {batch_idx}"
                )));
            }
            loss.backward()?;
            sgd.step_unmasked(&params)?;
        }
    }
    Ok(())
}

/// Hide ~15% of positions (at least one) behind the mask token.
fn mask_sequence(
    seq: &[usize],
    mask_token: usize,
    data_seed: u64,
    epoch: usize,
    sample: usize,
) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut stream = Stream::keyed(data_seed, epoch as u64, sample as u64, "mlm-positions");
    let mut positions: Vec<usize> = (0..seq.len())
        .filter(|_| stream.next_f64() < PRETRAIN_MASK_RATE)
        .collect();
    if positions.is_empty() {
        positions.push(stream.below(seq.len()));
    }
    let mut masked = seq.to_vec();
    let originals: Vec<usize> = positions.iter().map(|&p| seq[p]).collect();
    for &p in &positions {
        masked[p] = mask_token;
    }
    (masked, positions, originals)
}

/// One cell of a policy × seed sweep.
#[derive(Debug, Clone)]
pub struct GridCell {
    pub policy: PolicyKind,
    pub seed_index: u64,
    pub dir: PathBuf,
    pub summary: RunSummary,
}

pub fn cell_dir_name(policy: PolicyKind, seed_index: u64) -> String {
    format!("{}_s{seed_index:03}", policy.name())
}

/// Run every `policy × seed_index` cell under `out_root`, `workers` at a
/// time. Cells share nothing but the filesystem; each writes its own run
/// directory. The first error (if any) is returned after every worker has
/// drained, so one bad cell does not strand the rest.
pub fn run_grid(
    base: &RunConfig,
    policies: &[PolicyKind],
    seed_indices: &[u64],
    out_root: &Path,
    workers: usize,
) -> Result<Vec<GridCell>> {
    base.validate()?;
    let mut cells: Vec<(PolicyKind, u64)> = Vec::new();
    for &p in policies {
        for &s in seed_indices {
            if !cells.contains(&(p, s)) {
                cells.push((p, s));
            }
        }
    }
    std::fs::create_dir_all(out_root).map_err(|e| Error::io(out_root, e))?;

    let next = Arc::new(Mutex::new(0usize));
    let cells = Arc::new(cells);
    let (tx, rx) = mpsc::channel::<(usize, Result<GridCell>)>();
    let workers = workers.max(1).min(cells.len().max(1));

    let mut handles = Vec::new();
    for _ in 0..workers {
        let next = Arc::clone(&next);
        let cells = Arc::clone(&cells);
        let tx = tx.clone();
        let base = base.clone();
        let out_root = out_root.to_path_buf();
        handles.push(std::thread::spawn(move || loop {
            let idx = {
                let mut n = next.lock().expect("grid queue");
                if *n >= cells.len() {
                    return;
                }
                let i = *n;
                *n += 1;
                i
            };
            let (policy, seed_index) = cells[idx];
            let mut cfg = base.clone();
            cfg.policy.kind = policy;
            cfg.seeds = base.seeds.cell(seed_index);
            let dir = out_root.join(cell_dir_name(policy, seed_index));
            let result = run_experiment(&cfg, Some(&dir)).map(|record| GridCell {
                policy,
                seed_index,
                dir: dir.clone(),
                summary: record.summary,
            });
            let _ = tx.send((idx, result));
        }));
    }
    drop(tx);

    let mut slots: Vec<Option<Result<GridCell>>> = (0..cells.len()).map(|_| None).collect();
    for (idx, result) in rx {
        slots[idx] = Some(result);
    }
    for h in handles {
        h.join().map_err(|_| Error::Contract("grid worker panicked".into()))?;
    }

    let mut out = Vec::with_capacity(slots.len());
    let mut first_err = None;
    for slot in slots {
        match slot {
            Some(Ok(cell)) => out.push(cell),
            Some(Err(e)) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
            None => {
                return Err(Error::Contract("grid cell never ran".into()));
            }
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}
