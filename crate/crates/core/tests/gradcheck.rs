//! Finite-difference gradient checks for every differentiable operation,
//! each on at least 20 random instances, plus whole-graph checks.

mod common;

use common::{assert_grad_close, rand_tensor};
use graddrop::rng::Stream;
use graddrop::Tensor;

/// Scalarise a 2-D output with fixed random probes so every entry carries a
/// distinct weight: `loss = wl · out · wr`.
fn bilinear_loss(out: Tensor, seed: u64) -> Tensor {
    let shape = out.shape();
    let (m, n) = (shape[0], shape[1]);
    let wl = rand_tensor(&[1, m], seed, "probe-left");
    let wr = rand_tensor(&[n, 1], seed, "probe-right");
    wl.matmul(&out).unwrap().matmul(&wr).unwrap()
}

#[test]
fn matmul_gradient_of_sum_within_1e6() {
    // sum(A·B) on 3x4 · 4x2 within relative error 1e-6.
    for seed in 0..20u64 {
        let a = rand_tensor(&[3, 4], seed, "mm-a").requires_grad();
        let b = rand_tensor(&[4, 2], seed, "mm-b").requires_grad();
        let mut loss = || a.matmul(&b).unwrap().sum();
        assert_grad_close(&mut loss, &a, 1e-6, "matmul dA");
        assert_grad_close(&mut loss, &b, 1e-6, "matmul dB");
    }
}

#[test]
fn matmul_gradient_under_random_probes() {
    for seed in 0..20u64 {
        let a = rand_tensor(&[4, 3], seed, "mmp-a").requires_grad();
        let b = rand_tensor(&[3, 5], seed, "mmp-b").requires_grad();
        let mut loss = || bilinear_loss(a.matmul(&b).unwrap(), seed);
        assert_grad_close(&mut loss, &a, 1e-5, "matmul probe dA");
        assert_grad_close(&mut loss, &b, 1e-5, "matmul probe dB");
    }
}

#[test]
fn softmax_jacobian_vector_products() {
    // Random 4x5 inputs; probes give a random upstream vector, so this is
    // the Jacobian-vector check at 1e-6.
    for seed in 0..20u64 {
        let x = rand_tensor(&[4, 5], seed, "sm-x").scale(2.0).requires_grad();
        let mut loss = || bilinear_loss(x.softmax_rows().unwrap(), seed);
        assert_grad_close(&mut loss, &x, 1e-6, "softmax dX");
    }
}

#[test]
fn layer_norm_gradients_on_3x8() {
    for seed in 0..20u64 {
        let x = rand_tensor(&[3, 8], seed, "ln-x").scale(3.0).requires_grad();
        let gain = rand_tensor(&[8], seed, "ln-g").requires_grad();
        let bias = rand_tensor(&[8], seed, "ln-b").requires_grad();
        let mut loss = || bilinear_loss(x.layer_norm(&gain, &bias).unwrap(), seed);
        assert_grad_close(&mut loss, &x, 1e-5, "layer_norm dX");
        assert_grad_close(&mut loss, &gain, 1e-5, "layer_norm dGain");
        assert_grad_close(&mut loss, &bias, 1e-5, "layer_norm dBias");
    }
}

#[test]
fn relu_transpose_scale_add_gradients() {
    for seed in 0..20u64 {
        let x = rand_tensor(&[4, 6], seed, "mix-x").requires_grad();
        let y = rand_tensor(&[4, 6], seed, "mix-y").requires_grad();
        let mut loss = || {
            let z = x.relu().add(&y.scale(0.7)).unwrap().transpose().unwrap();
            bilinear_loss(z, seed)
        };
        assert_grad_close(&mut loss, &x, 1e-5, "relu/add dX");
        assert_grad_close(&mut loss, &y, 1e-5, "relu/add dY");
    }
}

#[test]
fn add_row_gradients() {
    for seed in 0..20u64 {
        let x = rand_tensor(&[5, 3], seed, "ar-x").requires_grad();
        let row = rand_tensor(&[3], seed, "ar-row").requires_grad();
        let mut loss = || bilinear_loss(x.add_row(&row).unwrap(), seed);
        assert_grad_close(&mut loss, &x, 1e-5, "add_row dX");
        assert_grad_close(&mut loss, &row, 1e-5, "add_row dRow");
    }
}

#[test]
fn concat_cols_gradients() {
    for seed in 0..20u64 {
        let a = rand_tensor(&[3, 2], seed, "cc-a").requires_grad();
        let b = rand_tensor(&[3, 4], seed, "cc-b").requires_grad();
        let c = rand_tensor(&[3, 1], seed, "cc-c").requires_grad();
        let mut loss = || {
            bilinear_loss(
                Tensor::concat_cols(&[a.clone(), b.clone(), c.clone()]).unwrap(),
                seed,
            )
        };
        assert_grad_close(&mut loss, &a, 1e-5, "concat dA");
        assert_grad_close(&mut loss, &b, 1e-5, "concat dB");
        assert_grad_close(&mut loss, &c, 1e-5, "concat dC");
    }
}

#[test]
fn gather_and_mean_rows_gradients() {
    for seed in 0..20u64 {
        let table = rand_tensor(&[6, 4], seed, "gr-t").requires_grad();
        let ids = {
            let mut s = Stream::keyed(seed, 1, 0, "gr-ids");
            (0..5).map(|_| s.below(6)).collect::<Vec<_>>()
        };
        let mut loss = || {
            bilinear_loss(
                table.gather_rows(&ids).unwrap().mean_rows().unwrap(),
                seed,
            )
        };
        assert_grad_close(&mut loss, &table, 1e-5, "gather/mean dTable");
    }
}

#[test]
fn cross_entropy_gradients() {
    for seed in 0..20u64 {
        let logits = rand_tensor(&[4, 5], seed, "ce-x").scale(2.0).requires_grad();
        let labels = {
            let mut s = Stream::keyed(seed, 1, 0, "ce-y");
            (0..4).map(|_| s.below(5)).collect::<Vec<_>>()
        };
        let mut loss = || logits.cross_entropy(&labels).unwrap();
        assert_grad_close(&mut loss, &logits, 1e-5, "cross_entropy dLogits");
    }
}

#[test]
fn two_layer_toy_graph_full_gradient() {
    // A small dense relu network assembled from the op set, checked end to
    // end at 1e-5 against finite differences.
    for seed in 0..20u64 {
        let x = rand_tensor(&[2, 6], seed, "toy-x");
        let w1 = rand_tensor(&[6, 8], seed, "toy-w1").requires_grad();
        let b1 = rand_tensor(&[8], seed, "toy-b1").requires_grad();
        let w2 = rand_tensor(&[8, 3], seed, "toy-w2").requires_grad();
        let b2 = rand_tensor(&[3], seed, "toy-b2").requires_grad();
        let labels = vec![seed as usize % 3, (seed as usize + 1) % 3];
        let mut loss = || {
            x.matmul(&w1)
                .unwrap()
                .add_row(&b1)
                .unwrap()
                .relu()
                .matmul(&w2)
                .unwrap()
                .add_row(&b2)
                .unwrap()
                .cross_entropy(&labels)
                .unwrap()
        };
        for (t, name) in [(&w1, "w1"), (&b1, "b1"), (&w2, "w2"), (&b2, "b2")] {
            assert_grad_close(&mut loss, t, 1e-5, name);
        }
    }
}

#[test]
fn backward_is_bit_identical_across_runs() {
    let run = || {
        let a = rand_tensor(&[5, 5], 3, "det-a").requires_grad();
        let b = rand_tensor(&[5, 5], 3, "det-b").requires_grad();
        let loss = a
            .matmul(&b)
            .unwrap()
            .softmax_rows()
            .unwrap()
            .sum();
        loss.backward().unwrap();
        (
            a.grad().unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.grad().unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        )
    };
    assert_eq!(run(), run());
}
