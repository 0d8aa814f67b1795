//! Built-in invariant and gradient self-tests, runnable from the CLI.
//!
//! Each check is quick (the full battery takes a few seconds) and reports
//! one pass/fail line. These are smoke tests for a live installation; the
//! test suite proper is much stricter.

use crate::harness::{self, RunConfig};
use crate::mask::{MaskPolicy, MaskState, PolicyKind};
use crate::model::{Model, ModelConfig, ParamSet};
use crate::optim::{OptimConfig, Sgd};
use crate::rng::Stream;
use crate::stats::paired_t_test;
use crate::tensor::Tensor;

pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub fn run_all() -> Vec<CheckOutcome> {
    vec![
        check("tensor-gradients", tensor_gradients),
        check("softmax-rows", softmax_rows),
        check("layer-norm-stats", layer_norm_stats),
        check("model-gradient", model_gradient),
        check("mask-sampling", mask_sampling),
        check("sft-equivalence", sft_equivalence),
        check("masked-no-op", masked_no_op),
        check("epoch-schedules", epoch_schedules),
        check("paired-t-test", t_test),
        check("run-determinism", run_determinism),
    ]
}

fn check(name: &'static str, f: impl FnOnce() -> Result<String, String>) -> CheckOutcome {
    match f() {
        Ok(detail) => CheckOutcome {
            name,
            passed: true,
            detail,
        },
        Err(detail) => CheckOutcome {
            name,
            passed: false,
            detail,
        },
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Central finite differences of `f` w.r.t. every entry of `t`.
fn finite_diff(f: &mut dyn FnMut() -> f64, t: &Tensor, h: f64) -> Vec<f64> {
    (0..t.len())
        .map(|i| {
            let x = t.get(i);
            t.set(i, x + h);
            let fp = f();
            t.set(i, x - h);
            let fm = f();
            t.set(i, x);
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

fn rand_tensor(shape: &[usize], seed: u64, label: &str) -> Tensor {
    let mut s = Stream::keyed(seed, 0, 0, label);
    let len: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| s.uniform(-1.0, 1.0)).collect()).unwrap()
}

fn tensor_gradients() -> Result<String, String> {
    let mut worst = 0.0f64;
    for seed in 0..3u64 {
        let a = rand_tensor(&[3, 4], seed, "a").requires_grad();
        let b = rand_tensor(&[4, 2], seed, "b").requires_grad();
        let loss = || a.matmul(&b).unwrap().sum();
        loss().backward().unwrap();
        let analytic = a.grad().unwrap();
        a.zero_grad();
        b.zero_grad();
        let numeric = finite_diff(&mut || loss().item(), &a, 1e-5);
        for (an, nu) in analytic.iter().zip(&numeric) {
            worst = worst.max(rel_err(*an, *nu));
        }
    }
    if worst < 1e-6 {
        Ok(format!("matmul max rel err {worst:.2e}"))
    } else {
        Err(format!("matmul rel err {worst:.2e} over 1e-6"))
    }
}

fn softmax_rows() -> Result<String, String> {
    let x = rand_tensor(&[4, 5], 7, "softmax").scale(3.0);
    let y = x.softmax_rows().unwrap();
    let d = y.data_vec();
    for i in 0..4 {
        let s: f64 = d[i * 5..(i + 1) * 5].iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(format!("row {i} sums to {s}"));
        }
        if d[i * 5..(i + 1) * 5].iter().any(|&v| v <= 0.0 || v >= 1.0) {
            return Err(format!("row {i} has entries outside (0,1)"));
        }
    }
    Ok("rows sum to 1 within 1e-12".into())
}

fn layer_norm_stats() -> Result<String, String> {
    let x = rand_tensor(&[6, 16], 3, "ln").scale(4.0);
    let gain = Tensor::from_vec(&[16], vec![1.0; 16]).unwrap();
    let bias = Tensor::zeros(&[16]);
    let y = x.layer_norm(&gain, &bias).unwrap().data_vec();
    for i in 0..6 {
        let row = &y[i * 16..(i + 1) * 16];
        let mean: f64 = row.iter().sum::<f64>() / 16.0;
        let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
        if mean.abs() > 1e-10 {
            return Err(format!("row {i} mean {mean:.2e}"));
        }
        if (var - 1.0).abs() > 1e-3 {
            return Err(format!("row {i} variance {var}"));
        }
    }
    Ok("normalised rows: mean ~0, variance ~1".into())
}

fn small_model_cfg() -> ModelConfig {
    ModelConfig {
        embed_dim: 8,
        attn_dim: 4,
        heads: 2,
        head_dim: 4,
        layers: 2,
        vocab: 12,
        max_len: 5,
        classes: 3,
        ff_hidden: 0,
    }
}

fn model_gradient() -> Result<String, String> {
    let model = Model::new(&small_model_cfg(), 11).map_err(|e| e.to_string())?;
    let tokens = [3usize, 7, 1, 0, 9];
    let label = [2usize];
    let loss_of = |m: &Model| m.forward_classify(&tokens).unwrap().cross_entropy(&label).unwrap();
    loss_of(&model).backward().unwrap();
    let mut worst = 0.0f64;
    for p in model.params().iter() {
        let analytic = p.tensor.grad_or_zeros();
        let numeric = finite_diff(&mut || loss_of(&model).item(), &p.tensor, 1e-5);
        for (a, n) in analytic.iter().zip(&numeric) {
            worst = worst.max(rel_err(*a, *n));
        }
    }
    if worst < 1e-4 {
        Ok(format!("full-model max rel err {worst:.2e}"))
    } else {
        Err(format!("full-model rel err {worst:.2e} over 1e-4"))
    }
}

fn mask_sampling() -> Result<String, String> {
    let mut params = ParamSet::new(1);
    params
        .register("enc.1.big", 1, Tensor::zeros(&[100_000]))
        .map_err(|e| e.to_string())?;
    let policy = MaskPolicy::new(PolicyKind::GradDrop, 0.2, 1);
    let mut state = MaskState::new(17, &policy, &params).map_err(|e| e.to_string())?;
    state.advance_epoch(&params).map_err(|e| e.to_string())?;
    let mask = state.sample_batch_mask(&params).map_err(|e| e.to_string())?;
    let active = match mask.support(0) {
        crate::mask::Support::Entries(e) => e.iter().filter(|&&b| b).count(),
        _ => return Err("expected per-entry support".into()),
    };
    let zero_frac = 1.0 - active as f64 / 100_000.0;
    // 4 sigma for n = 1e5: ~0.005
    if (zero_frac - 0.2).abs() > 0.006 {
        return Err(format!("zero fraction {zero_frac} far from 0.2"));
    }
    let mean = active as f64 * mask.scale() / 100_000.0;
    if (mean - 1.0).abs() > 0.01 {
        return Err(format!("scaled mask mean {mean} far from 1"));
    }
    Ok(format!("zero fraction {zero_frac:.4}, scaled mean {mean:.4}"))
}

fn training_pair_cfg() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model = small_model_cfg();
    cfg.model.vocab = 16;
    cfg.model.classes = 2;
    cfg.train.epochs = 2;
    cfg.train.batch_size = 8;
    cfg.train.train_samples = 48;
    cfg.train.test_samples = 16;
    cfg
}

fn sft_equivalence() -> Result<String, String> {
    // GradDrop at p = 0 must follow the maskless path bit for bit.
    let cfg = training_pair_cfg();
    let train = crate::tasks::gen_classification_task(
        cfg.train.task,
        cfg.model.vocab,
        cfg.model.max_len,
        32,
        1,
        crate::tasks::Split::Train,
    )
    .map_err(|e| e.to_string())?;

    let run = |masked: bool| -> Vec<u64> {
        let model = Model::new(&cfg.model, 5).unwrap();
        let params = model.params();
        let mut sgd = Sgd::new(OptimConfig::default()).unwrap();
        let policy = MaskPolicy::new(PolicyKind::GradDrop, 0.0, 1);
        let mut state = MaskState::new(9, &policy, params).unwrap();
        state.advance_epoch(params).unwrap();
        let mut losses = Vec::new();
        for step in 0..20 {
            let idx: Vec<usize> = (0..4).map(|k| (step * 4 + k) % train.len()).collect();
            let seqs: Vec<&[usize]> = idx.iter().map(|&i| train.sequences[i].as_slice()).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            let loss = model.batch_loss(&seqs, &labels).unwrap();
            losses.push(loss.item().to_bits());
            loss.backward().unwrap();
            if masked {
                let mask = state.sample_batch_mask(params).unwrap();
                sgd.step(params, &mask).unwrap();
            } else {
                sgd.step_unmasked(params).unwrap();
            }
        }
        losses
    };
    if run(true) == run(false) {
        Ok("20-step trajectory bit-identical".into())
    } else {
        Err("masked p=0 trajectory diverged from maskless path".into())
    }
}

fn masked_no_op() -> Result<String, String> {
    let mut params = ParamSet::new(2);
    params
        .register("enc.1.w", 1, rand_tensor(&[40], 3, "w1"))
        .map_err(|e| e.to_string())?;
    params
        .register("enc.2.w", 2, rand_tensor(&[40], 4, "w2"))
        .map_err(|e| e.to_string())?;
    let before = params.snapshot();
    let policy = MaskPolicy::new(PolicyKind::GradDrop, 0.5, 1);
    let mut state = MaskState::new(23, &policy, &params).map_err(|e| e.to_string())?;
    state.advance_epoch(&params).map_err(|e| e.to_string())?;
    let mut sgd = Sgd::new(OptimConfig {
        lr: 0.05,
        momentum: 0.9,
        weight_decay: 1e-4,
    })
    .map_err(|e| e.to_string())?;
    let mut ever = [vec![false; 40], vec![false; 40]];
    let mut grad_stream = Stream::keyed(99, 0, 0, "grads");
    for _ in 0..10 {
        for p in params.iter() {
            let g: Vec<f64> = (0..40).map(|_| grad_stream.uniform(-1.0, 1.0)).collect();
            p.tensor.accumulate_grad(&g).unwrap();
        }
        let mask = state.sample_batch_mask(&params).map_err(|e| e.to_string())?;
        for (pi, flags) in ever.iter_mut().enumerate() {
            for (j, f) in flags.iter_mut().enumerate() {
                *f |= mask.support(pi).is_active(j);
            }
        }
        sgd.step(&params, &mask).map_err(|e| e.to_string())?;
    }
    for (pi, p) in params.iter().enumerate() {
        let after = p.tensor.data_vec();
        for j in 0..40 {
            if !ever[pi][j] && after[j].to_bits() != before[pi][j].to_bits() {
                return Err(format!("never-active entry {j} of {} moved", p.name));
            }
        }
    }
    Ok("never-active entries bit-identical after 10 steps".into())
}

fn epoch_schedules() -> Result<String, String> {
    let mut params = ParamSet::new(2);
    params
        .register("enc.1.w", 1, Tensor::zeros(&[50]))
        .map_err(|e| e.to_string())?;
    params
        .register("enc.2.w", 2, Tensor::zeros(&[50]))
        .map_err(|e| e.to_string())?;
    let policy = MaskPolicy::new(PolicyKind::GradDropEpoch, 0.0, 5);
    let mut state = MaskState::new(31, &policy, &params).map_err(|e| e.to_string())?;
    for epoch in 1..=5usize {
        let mask = state
            .advance_epoch(&params)
            .map_err(|e| e.to_string())?
            .expect("epoch mask");
        let f = mask.active_fraction(&params);
        let want = epoch as f64 / 5.0;
        for layer in 1..=2 {
            if (f[layer] - want).abs() > 1.0 / 50.0 {
                return Err(format!("epoch {epoch} layer {layer}: {} vs {want}", f[layer]));
            }
        }
    }
    Ok("cumulative fractions follow e/T within one entry".into())
}

fn t_test() -> Result<String, String> {
    let r = paired_t_test(&[2.0, -1.0, 3.0, 0.0, 1.0]).map_err(|e| e.to_string())?;
    if (r.t - 2.0f64.sqrt()).abs() > 1e-12 {
        return Err(format!("t {} vs sqrt(2)", r.t));
    }
    let d = paired_t_test(&[1.0, 1.0, 1.0]).map_err(|e| e.to_string())?;
    if !d.degenerate || !d.t.is_infinite() {
        return Err("constant differences should flag degenerate".into());
    }
    Ok(format!("t = {:.12} on the reference vector", r.t))
}

fn run_determinism() -> Result<String, String> {
    let mut cfg = training_pair_cfg();
    cfg.policy.kind = PolicyKind::GradDropEpoch;
    let a = harness::run_experiment(&cfg, None).map_err(|e| e.to_string())?;
    let b = harness::run_experiment(&cfg, None).map_err(|e| e.to_string())?;
    if a.epochs == b.epochs {
        Ok("repeated run produced identical records".into())
    } else {
        Err("records differ between identical runs".into())
    }
}
