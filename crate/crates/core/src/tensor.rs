//! Dense 64-bit tensors with reverse-mode automatic differentiation.
//!
//! Each operation records its inputs and a backward rule on the value it
//! produces, so a forward pass builds a DAG as it goes. [`Tensor::backward`]
//! walks that DAG exactly once in reverse topological order and accumulates
//! gradients into the leaves marked trainable. Repeated backward calls on the
//! same graph keep accumulating, and `f64` everywhere keeps finite-difference
//! checks tight.
//!
//! The op set is exactly what a small encoder classifier needs. There is no
//! broadcasting beyond row vectors, so shape errors stay loud.

use std::cell::{Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Epsilon inside the layer-norm square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Backward rule: given the gradient flowing into a node and the node's
/// parents, return one contribution per parent (`None` for parents that do
/// not require gradient).
type BackwardFn = Box<dyn Fn(&[f64], &[Tensor]) -> Vec<Option<Vec<f64>>>>;

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward: Option<BackwardFn>,
    op: &'static str,
}

/// A shared handle to a tensor value and its place in the autodiff graph.
///
/// Handles are reference-counted; cloning a `Tensor` clones the handle, not
/// the data. A tensor and the graph hanging off it belong to one training
/// run and must not cross threads.
#[derive(Clone)]
pub struct Tensor(Rc<RefCell<Node>>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.0.borrow();
        write!(f, "Tensor[{} {:?}]", n.op, n.shape)
    }
}

fn check_dims(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Contract(format!(
            "tensor dimensions must be positive, got {shape:?}"
        )));
    }
    Ok(())
}

impl Tensor {
    // ── Construction ────────────────────────────────────────────────

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        check_dims(shape)?;
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::Contract(format!(
                "shape {:?} wants {} values, got {}",
                shape,
                expect,
                data.len()
            )));
        }
        Ok(Tensor::leaf(shape.to_vec(), data))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let len = shape.iter().product();
        Tensor::leaf(shape.to_vec(), vec![0.0; len])
    }

    pub fn scalar(x: f64) -> Tensor {
        Tensor::leaf(vec![1], vec![x])
    }

    /// 2-D tensor from rows; rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Tensor> {
        let m = rows.len();
        let n = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Contract("ragged rows".into()));
        }
        Tensor::from_vec(&[m, n], rows.concat())
    }

    fn leaf(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor(Rc::new(RefCell::new(Node {
            shape,
            data,
            grad: None,
            requires_grad: false,
            parents: Vec::new(),
            backward: None,
            op: "leaf",
        })))
    }

    /// Mark this leaf as trainable so `backward` accumulates into its grad.
    pub fn requires_grad(self) -> Tensor {
        self.0.borrow_mut().requires_grad = true;
        self
    }

    fn op_node(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: BackwardFn,
    ) -> Tensor {
        let requires_grad = parents.iter().any(|p| p.0.borrow().requires_grad);
        let (parents, backward) = if requires_grad {
            (parents, Some(backward))
        } else {
            (Vec::new(), None)
        };
        Tensor(Rc::new(RefCell::new(Node {
            shape,
            data,
            grad: None,
            requires_grad,
            parents,
            backward,
            op,
        })))
    }

    // ── Accessors ───────────────────────────────────────────────────

    pub fn shape(&self) -> Vec<usize> {
        self.0.borrow().shape.clone()
    }

    pub fn len(&self) -> usize {
        self.0.borrow().data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> Ref<'_, [f64]> {
        Ref::map(self.0.borrow(), |n| n.data.as_slice())
    }

    pub fn data_vec(&self) -> Vec<f64> {
        self.0.borrow().data.clone()
    }

    /// Scalar value; panics if the tensor is not 1-element.
    pub fn item(&self) -> f64 {
        let n = self.0.borrow();
        assert_eq!(n.data.len(), 1, "item() on non-scalar {:?}", n.shape);
        n.data[0]
    }

    pub fn get(&self, idx: usize) -> f64 {
        self.0.borrow().data[idx]
    }

    pub fn set(&self, idx: usize, v: f64) {
        self.0.borrow_mut().data[idx] = v;
    }

    pub fn set_data(&self, data: &[f64]) -> Result<()> {
        let mut n = self.0.borrow_mut();
        if n.data.len() != data.len() {
            return Err(Error::Contract(format!(
                "set_data length {} vs tensor {}",
                data.len(),
                n.data.len()
            )));
        }
        n.data.copy_from_slice(data);
        Ok(())
    }

    pub fn is_trainable(&self) -> bool {
        self.0.borrow().requires_grad
    }

    /// Current gradient accumulator, if any backward pass has reached this
    /// leaf since the last reset.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.borrow().grad.clone()
    }

    /// Gradient accumulator, treating an empty one as exact zeros.
    pub fn grad_or_zeros(&self) -> Vec<f64> {
        let n = self.0.borrow();
        n.grad.clone().unwrap_or_else(|| vec![0.0; n.data.len()])
    }

    /// Clear the gradient accumulator to exact zero.
    pub fn zero_grad(&self) {
        self.0.borrow_mut().grad = None;
    }

    /// Add `g` into the gradient accumulator (allocating it on first use).
    pub fn accumulate_grad(&self, g: &[f64]) -> Result<()> {
        let mut n = self.0.borrow_mut();
        if g.len() != n.data.len() {
            return Err(Error::Contract(format!(
                "gradient length {} vs tensor {}",
                g.len(),
                n.data.len()
            )));
        }
        match &mut n.grad {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => n.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    /// Mutate data and grad in place; used by the optimizer.
    pub(crate) fn with_data_grad_mut<R>(
        &self,
        f: impl FnOnce(&mut [f64], &mut Option<Vec<f64>>) -> R,
    ) -> R {
        let mut n = self.0.borrow_mut();
        let Node { data, grad, .. } = &mut *n;
        f(data, grad)
    }

    fn id(&self) -> usize {
        Rc::as_ptr(&self.0) as *const () as usize
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        let n = self.0.borrow();
        match n.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::Contract(format!(
                "{op} expects a 2-D tensor, got {other:?}"
            ))),
        }
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Every trainable leaf reachable from
    /// the loss gets its gradient accumulated; calling backward again without
    /// resetting adds another full pass.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        let order = self.topo_order();
        let mut flows: HashMap<usize, Vec<f64>> = HashMap::new();
        flows.insert(self.id(), vec![1.0]);

        for t in order {
            let Some(flow) = flows.remove(&t.id()) else {
                continue;
            };
            let node = t.0.borrow();
            if let Some(bw) = &node.backward {
                let contribs = bw(&flow, &node.parents);
                debug_assert_eq!(contribs.len(), node.parents.len());
                for (parent, contrib) in node.parents.iter().zip(contribs) {
                    let Some(c) = contrib else { continue };
                    if !parent.0.borrow().requires_grad {
                        continue;
                    }
                    match flows.entry(parent.id()) {
                        std::collections::hash_map::Entry::Occupied(mut e) => {
                            for (a, b) in e.get_mut().iter_mut().zip(&c) {
                                *a += b;
                            }
                        }
                        std::collections::hash_map::Entry::Vacant(e) => {
                            e.insert(c);
                        }
                    }
                }
            } else if node.requires_grad {
                drop(node);
                t.accumulate_grad(&flow)?;
            }
        }
        Ok(())
    }

    /// Reverse topological order (this node first, leaves last), visiting
    /// every reachable node exactly once. Iterative so long chains of batch
    /// sums cannot blow the stack.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut visited: HashSet<usize> = HashSet::new();
        let mut order: Vec<Tensor> = Vec::new();
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.id());

        while let Some((t, pi)) = stack.pop() {
            let next_parent = {
                let n = t.0.borrow();
                n.parents.get(pi).cloned()
            };
            match next_parent {
                Some(parent) => {
                    stack.push((t, pi + 1));
                    if visited.insert(parent.id()) {
                        stack.push((parent, 0));
                    }
                }
                None => order.push(t),
            }
        }
        order.reverse();
        order
    }

    // ── Operations ──────────────────────────────────────────────────

    /// Matrix product `[m×k]·[k×n] → [m×n]`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = rhs.dims2("matmul")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let out = {
            let a = self.data();
            let b = rhs.data();
            mm_nn(&a, &b, m, k, n)
        };
        let backward: BackwardFn = Box::new(move |dy, parents| {
            let a = parents[0].data();
            let b = parents[1].data();
            let da = parents[0]
                .is_trainable()
                .then(|| mm_nt(dy, &b, m, n, k));
            let db = parents[1]
                .is_trainable()
                .then(|| mm_tn(&a, dy, m, k, n));
            vec![da, db]
        });
        Ok(Tensor::op_node(
            "matmul",
            vec![m, n],
            out,
            vec![self.clone(), rhs.clone()],
            backward,
        ))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.dims2("transpose")?;
        let out = transpose_raw(&self.data(), r, c);
        let backward: BackwardFn =
            Box::new(move |dy, _| vec![Some(transpose_raw(dy, c, r))]);
        Ok(Tensor::op_node(
            "transpose",
            vec![c, r],
            out,
            vec![self.clone()],
            backward,
        ))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.shape() != rhs.shape() {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let out: Vec<f64> = self
            .data()
            .iter()
            .zip(rhs.data().iter())
            .map(|(a, b)| a + b)
            .collect();
        let backward: BackwardFn =
            Box::new(|dy, _| vec![Some(dy.to_vec()), Some(dy.to_vec())]);
        Ok(Tensor::op_node(
            "add",
            self.shape(),
            out,
            vec![self.clone(), rhs.clone()],
            backward,
        ))
    }

    /// Add a length-`n` row vector to every row of an `[m×n]` tensor.
    pub fn add_row(&self, row: &Tensor) -> Result<Tensor> {
        let (m, n) = self.dims2("add_row")?;
        if row.shape() != [n] {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: self.shape(),
                rhs: row.shape(),
            });
        }
        let out = {
            let x = self.data();
            let r = row.data();
            let mut out = Vec::with_capacity(m * n);
            for i in 0..m {
                for j in 0..n {
                    out.push(x[i * n + j] + r[j]);
                }
            }
            out
        };
        let backward: BackwardFn = Box::new(move |dy, _| {
            let mut drow = vec![0.0; n];
            for i in 0..m {
                for j in 0..n {
                    drow[j] += dy[i * n + j];
                }
            }
            vec![Some(dy.to_vec()), Some(drow)]
        });
        Ok(Tensor::op_node(
            "add_row",
            vec![m, n],
            out,
            vec![self.clone(), row.clone()],
            backward,
        ))
    }

    /// Multiply every entry by a constant.
    pub fn scale(&self, c: f64) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|x| c * x).collect();
        let backward: BackwardFn =
            Box::new(move |dy, _| vec![Some(dy.iter().map(|g| c * g).collect())]);
        Tensor::op_node("scale", self.shape(), out, vec![self.clone()], backward)
    }

    pub fn relu(&self) -> Tensor {
        let out: Vec<f64> = self.data().iter().map(|&x| x.max(0.0)).collect();
        let backward: BackwardFn = Box::new(|dy, parents| {
            let x = parents[0].data();
            vec![Some(
                dy.iter()
                    .zip(x.iter())
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect(),
            )]
        });
        Tensor::op_node("relu", self.shape(), out, vec![self.clone()], backward)
    }

    /// Row-wise exp-normalisation with max subtraction; each output row sums
    /// to 1 and stays finite for any finite input.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        let (m, n) = self.dims2("softmax_rows")?;
        let mut out = vec![0.0; m * n];
        {
            let x = self.data();
            for i in 0..m {
                let row = &x[i * n..(i + 1) * n];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..n {
                    let e = (row[j] - max).exp();
                    out[i * n + j] = e;
                    sum += e;
                }
                for j in 0..n {
                    out[i * n + j] /= sum;
                }
            }
        }
        let saved = out.clone();
        let backward: BackwardFn = Box::new(move |dy, _| {
            let mut dx = vec![0.0; m * n];
            for i in 0..m {
                let base = i * n;
                let mut dot = 0.0;
                for j in 0..n {
                    dot += dy[base + j] * saved[base + j];
                }
                for j in 0..n {
                    dx[base + j] = saved[base + j] * (dy[base + j] - dot);
                }
            }
            vec![Some(dx)]
        });
        Ok(Tensor::op_node(
            "softmax_rows",
            vec![m, n],
            out,
            vec![self.clone()],
            backward,
        ))
    }

    /// Per-row standardisation (mean 0, variance 1 behind a small epsilon)
    /// followed by an affine gain and bias, both length `n`.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (m, n) = self.dims2("layer_norm")?;
        if n < 2 {
            return Err(Error::Contract(format!(
                "layer_norm needs rows of width >= 2, got {n}"
            )));
        }
        if gain.shape() != [n] || bias.shape() != [n] {
            return Err(Error::ShapeMismatch {
                op: "layer_norm",
                lhs: self.shape(),
                rhs: gain.shape(),
            });
        }
        let mut out = vec![0.0; m * n];
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        {
            let x = self.data();
            let g = gain.data();
            let b = bias.data();
            for i in 0..m {
                let row = &x[i * n..(i + 1) * n];
                let mean = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                inv_std[i] = inv;
                for j in 0..n {
                    let h = (row[j] - mean) * inv;
                    xhat[i * n + j] = h;
                    out[i * n + j] = h * g[j] + b[j];
                }
            }
        }
        let backward: BackwardFn = Box::new(move |dy, parents| {
            let g = parents[1].data();
            let mut dx = vec![0.0; m * n];
            let mut dgain = vec![0.0; n];
            let mut dbias = vec![0.0; n];
            for i in 0..m {
                let base = i * n;
                // dxhat = dy * gain; then the standard two-moment correction.
                let mut m1 = 0.0;
                let mut m2 = 0.0;
                for j in 0..n {
                    let dh = dy[base + j] * g[j];
                    m1 += dh;
                    m2 += dh * xhat[base + j];
                    dgain[j] += dy[base + j] * xhat[base + j];
                    dbias[j] += dy[base + j];
                }
                m1 /= n as f64;
                m2 /= n as f64;
                for j in 0..n {
                    let dh = dy[base + j] * g[j];
                    dx[base + j] = inv_std[i] * (dh - m1 - xhat[base + j] * m2);
                }
            }
            vec![Some(dx), Some(dgain), Some(dbias)]
        });
        Ok(Tensor::op_node(
            "layer_norm",
            vec![m, n],
            out,
            vec![self.clone(), gain.clone(), bias.clone()],
            backward,
        ))
    }

    /// Stack 2-D tensors side by side: `[m×a], [m×b], … → [m×(a+b+…)]`.
    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_cols of nothing".into()));
        }
        let (m, _) = parts[0].dims2("concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pm, pn) = p.dims2("concat_cols")?;
            if pm != m {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: parts[0].shape(),
                    rhs: p.shape(),
                });
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; m * total];
        {
            let mut off = 0;
            for (p, &w) in parts.iter().zip(&widths) {
                let d = p.data();
                for i in 0..m {
                    out[i * total + off..i * total + off + w]
                        .copy_from_slice(&d[i * w..(i + 1) * w]);
                }
                off += w;
            }
        }
        let widths_bw = widths.clone();
        let backward: BackwardFn = Box::new(move |dy, _| {
            let mut grads = Vec::with_capacity(widths_bw.len());
            let mut off = 0;
            for &w in &widths_bw {
                let mut dp = vec![0.0; m * w];
                for i in 0..m {
                    dp[i * w..(i + 1) * w]
                        .copy_from_slice(&dy[i * total + off..i * total + off + w]);
                }
                grads.push(Some(dp));
                off += w;
            }
            grads
        });
        Ok(Tensor::op_node(
            "concat_cols",
            vec![m, total],
            out,
            parts.to_vec(),
            backward,
        ))
    }

    /// Select rows of an `[r×c]` table by index; the embedding lookup.
    /// Duplicate indices accumulate gradient additively.
    pub fn gather_rows(&self, ids: &[usize]) -> Result<Tensor> {
        let (r, c) = self.dims2("gather_rows")?;
        if ids.is_empty() {
            return Err(Error::Input("gather_rows with no indices".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= r) {
            return Err(Error::Input(format!(
                "row index {bad} out of range for table with {r} rows"
            )));
        }
        let m = ids.len();
        let mut out = vec![0.0; m * c];
        {
            let t = self.data();
            for (i, &id) in ids.iter().enumerate() {
                out[i * c..(i + 1) * c].copy_from_slice(&t[id * c..(id + 1) * c]);
            }
        }
        let ids_bw = ids.to_vec();
        let backward: BackwardFn = Box::new(move |dy, _| {
            let mut dt = vec![0.0; r * c];
            for (i, &id) in ids_bw.iter().enumerate() {
                for j in 0..c {
                    dt[id * c + j] += dy[i * c + j];
                }
            }
            vec![Some(dt)]
        });
        Ok(Tensor::op_node(
            "gather_rows",
            vec![m, c],
            out,
            vec![self.clone()],
            backward,
        ))
    }

    /// Mean over rows: `[m×n] → [1×n]`.
    pub fn mean_rows(&self) -> Result<Tensor> {
        let (m, n) = self.dims2("mean_rows")?;
        let mut out = vec![0.0; n];
        {
            let x = self.data();
            for i in 0..m {
                for j in 0..n {
                    out[j] += x[i * n + j];
                }
            }
            for v in &mut out {
                *v /= m as f64;
            }
        }
        let backward: BackwardFn = Box::new(move |dy, _| {
            let mut dx = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    dx[i * n + j] = dy[j] / m as f64;
                }
            }
            vec![Some(dx)]
        });
        Ok(Tensor::op_node(
            "mean_rows",
            vec![1, n],
            out,
            vec![self.clone()],
            backward,
        ))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&self) -> Tensor {
        let total: f64 = self.data().iter().sum();
        let len = self.len();
        let backward: BackwardFn = Box::new(move |dy, _| vec![Some(vec![dy[0]; len])]);
        Tensor::op_node("sum", vec![1], vec![total], vec![self.clone()], backward)
    }

    /// Mean cross-entropy of `[m×classes]` logits against class labels.
    /// Log-softmax is applied internally and the result is averaged over the
    /// `m` rows.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Tensor> {
        let (m, c) = self.dims2("cross_entropy")?;
        if labels.len() != m {
            return Err(Error::Contract(format!(
                "cross_entropy got {} labels for {} rows",
                labels.len(),
                m
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let mut probs = vec![0.0; m * c];
        let mut loss = 0.0;
        {
            let x = self.data();
            for (i, &y) in labels.iter().enumerate() {
                let row = &x[i * c..(i + 1) * c];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..c {
                    let e = (row[j] - max).exp();
                    probs[i * c + j] = e;
                    sum += e;
                }
                for j in 0..c {
                    probs[i * c + j] /= sum;
                }
                loss += max + sum.ln() - row[y];
            }
            loss /= m as f64;
        }
        let labels_bw = labels.to_vec();
        let backward: BackwardFn = Box::new(move |dy, _| {
            let g = dy[0] / m as f64;
            let mut dx = probs.clone();
            for (i, &y) in labels_bw.iter().enumerate() {
                dx[i * c + y] -= 1.0;
            }
            for v in &mut dx {
                *v *= g;
            }
            vec![Some(dx)]
        });
        Ok(Tensor::op_node(
            "cross_entropy",
            vec![1],
            vec![loss],
            vec![self.clone()],
            backward,
        ))
    }
}

// ── Raw kernels ─────────────────────────────────────────────────────

/// `C[m×n] = A[m×k] · B[k×n]`, ikj order so the inner loop streams rows.
fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `C[m×k] = A[m×n] · Bᵀ` where `B` is `[k×n]`; row-by-row dot products.
fn mm_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for j in 0..k {
            let b_row = &b[j * n..(j + 1) * n];
            let mut dot = 0.0;
            for (av, bv) in a_row.iter().zip(b_row) {
                dot += av * bv;
            }
            c[i * k + j] = dot;
        }
    }
    c
}

/// `C[k×n] = Aᵀ · B` where `A` is `[m×k]`, `B` is `[m×n]`.
fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            let c_row = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
    c
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}
