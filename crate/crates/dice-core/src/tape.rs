//! Recorded-tape reverse-mode differentiation.
//!
//! Every forward op is evaluated eagerly and appended to a linear tape; a
//! single reverse sweep then yields exact gradients for every leaf. The
//! graph is dynamic: each training step builds a fresh tape, which is what
//! lets the adversarial loop alternate different losses over the same
//! parameters.
//!
//! Ops check their outputs for non-finite values as they are recorded; the
//! first violation poisons the tape and `backward` refuses to run, so a
//! diverging run fails loudly instead of silently propagating NaNs.

use std::cell::RefCell;

use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum TapeError {
    #[error("non-finite value produced by `{op}` (tape node {node})")]
    NonFinite { op: &'static str, node: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    id: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    AddScalar(usize),
    MulScalar(usize, f64),
    Matmul(usize, usize),
    Sum(usize),
    Mean(usize),
    RowSum(usize),
    RowLogSumExp(usize),
    GatherCol(usize, Vec<usize>),
    GatherRows(usize, Vec<usize>),
    ConcatCols(Vec<usize>),
    Relu(usize),
    LeakyRelu(usize, f64),
    Softplus(usize),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Ln(usize),
    Detach(#[allow(dead_code)] usize),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// A single forward recording. Create one per loss evaluation.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    poison: RefCell<Option<TapeError>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), poison: RefCell::new(None) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// True once any recorded op produced a non-finite value.
    pub fn is_poisoned(&self) -> bool {
        self.poison.borrow().is_some()
    }

    pub fn value(&self, v: Var) -> Tensor {
        self.nodes.borrow()[v.id].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.id].value.shape().to_vec()
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.id].value.item()
    }

    fn push(&self, name: &'static str, op: Op, value: Tensor) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        if !value.all_finite() {
            let mut poison = self.poison.borrow_mut();
            if poison.is_none() {
                *poison = Some(TapeError::NonFinite { op: name, node: id });
            }
        }
        nodes.push(Node { op, value });
        Var { id }
    }

    /// Leaf holding a value; gradients are accumulated for it like any node.
    /// Whether it is treated as a trainable parameter is the caller's concern.
    pub fn leaf(&self, value: Tensor) -> Var {
        self.push("leaf", Op::Leaf, value)
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&self, a: Var, b: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            nodes[a.id].value.zip_map(&nodes[b.id].value, |x, y| x + y)
        };
        self.push("add", Op::Add(a.id, b.id), v)
    }

    /// `[r,c] + [c]` with the row vector broadcast over rows (bias add).
    pub fn add_row(&self, m: Var, row: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let mat = &nodes[m.id].value;
            let r = &nodes[row.id].value;
            let (rows, cols) = mat.dims2();
            assert_eq!(r.shape(), &[cols], "add_row width mismatch");
            let mut out = mat.values().to_vec();
            for i in 0..rows {
                for j in 0..cols {
                    out[i * cols + j] += r.values()[j];
                }
            }
            Tensor::new(vec![rows, cols], out)
        };
        self.push("add_row", Op::AddRow(m.id, row.id), v)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            nodes[a.id].value.zip_map(&nodes[b.id].value, |x, y| x - y)
        };
        self.push("sub", Op::Sub(a.id, b.id), v)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            nodes[a.id].value.zip_map(&nodes[b.id].value, |x, y| x * y)
        };
        self.push("mul", Op::Mul(a.id, b.id), v)
    }

    pub fn neg(&self, a: Var) -> Var {
        let v = self.nodes.borrow()[a.id].value.map(|x| -x);
        self.push("neg", Op::Neg(a.id), v)
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        let v = self.nodes.borrow()[a.id].value.map(|x| x + c);
        self.push("add_scalar", Op::AddScalar(a.id), v)
    }

    pub fn mul_scalar(&self, a: Var, c: f64) -> Var {
        let v = self.nodes.borrow()[a.id].value.map(|x| x * c);
        self.push("mul_scalar", Op::MulScalar(a.id, c), v)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            nodes[a.id].value.matmul(&nodes[b.id].value)
        };
        self.push("matmul", Op::Matmul(a.id, b.id), v)
    }

    /// Sum of all entries, rank-0 result.
    pub fn sum(&self, a: Var) -> Var {
        let v = Tensor::scalar(self.nodes.borrow()[a.id].value.values().iter().sum());
        self.push("sum", Op::Sum(a.id), v)
    }

    /// Mean of all entries, rank-0 result.
    pub fn mean(&self, a: Var) -> Var {
        let v = {
            let t = &self.nodes.borrow()[a.id].value;
            assert!(!t.is_empty(), "mean of empty tensor");
            Tensor::scalar(t.values().iter().sum::<f64>() / t.len() as f64)
        };
        self.push("mean", Op::Mean(a.id), v)
    }

    /// `[r,c] -> [r]` summing each row.
    pub fn row_sum(&self, a: Var) -> Var {
        let v = {
            let t = &self.nodes.borrow()[a.id].value;
            let (rows, cols) = t.dims2();
            let mut out = vec![0.0; rows];
            for i in 0..rows {
                out[i] = t.values()[i * cols..(i + 1) * cols].iter().sum();
            }
            Tensor::vector(out)
        };
        self.push("row_sum", Op::RowSum(a.id), v)
    }

    /// `[r,c] -> [r]` with the numerically stable log-sum-exp of each row.
    pub fn row_logsumexp(&self, a: Var) -> Var {
        let v = {
            let t = &self.nodes.borrow()[a.id].value;
            let (rows, cols) = t.dims2();
            let mut out = vec![0.0; rows];
            for i in 0..rows {
                let row = &t.values()[i * cols..(i + 1) * cols];
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = row.iter().map(|&x| (x - m).exp()).sum();
                out[i] = m + s.ln();
            }
            Tensor::vector(out)
        };
        self.push("row_logsumexp", Op::RowLogSumExp(a.id), v)
    }

    /// `[r,c] -> [r]` picking entry `cols[i]` from row `i`.
    pub fn gather_col(&self, a: Var, cols: &[usize]) -> Var {
        let v = {
            let t = &self.nodes.borrow()[a.id].value;
            let (rows, width) = t.dims2();
            assert_eq!(rows, cols.len(), "gather_col index count");
            let mut out = vec![0.0; rows];
            for (i, &c) in cols.iter().enumerate() {
                assert!(c < width, "gather_col index {} out of range {}", c, width);
                out[i] = t.values()[i * width + c];
            }
            Tensor::vector(out)
        };
        self.push("gather_col", Op::GatherCol(a.id, cols.to_vec()), v)
    }

    /// `[k,d] -> [n,d]` stacking rows `rows[0..n]` (embedding lookup).
    pub fn gather_rows(&self, a: Var, rows: &[usize]) -> Var {
        let v = {
            let t = &self.nodes.borrow()[a.id].value;
            let (k, d) = t.dims2();
            let mut out = Vec::with_capacity(rows.len() * d);
            for &r in rows {
                assert!(r < k, "gather_rows index {} out of range {}", r, k);
                out.extend_from_slice(&t.values()[r * d..(r + 1) * d]);
            }
            Tensor::new(vec![rows.len(), d], out)
        };
        self.push("gather_rows", Op::GatherRows(a.id, rows.to_vec()), v)
    }

    /// Concatenate rank-2 tensors with equal row counts along columns.
    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let v = {
            let nodes = self.nodes.borrow();
            let rows = nodes[parts[0].id].value.dims2().0;
            let widths: Vec<usize> =
                parts.iter().map(|p| nodes[p.id].value.dims2().1).collect();
            let total: usize = widths.iter().sum();
            let mut out = vec![0.0; rows * total];
            for i in 0..rows {
                let mut off = 0;
                for (p, &w) in parts.iter().zip(&widths) {
                    let t = &nodes[p.id].value;
                    assert_eq!(t.dims2().0, rows, "concat_cols row mismatch");
                    out[i * total + off..i * total + off + w]
                        .copy_from_slice(&t.values()[i * w..(i + 1) * w]);
                    off += w;
                }
            }
            Tensor::new(vec![rows, total], out)
        };
        let ids = parts.iter().map(|p| p.id).collect();
        self.push("concat_cols", Op::ConcatCols(ids), v)
    }

    pub fn relu(&self, a: Var) -> Var {
        let v = self.nodes.borrow()[a.id].value.map(|x| x.max(0.0));
        self.push("relu", Op::Relu(a.id), v)
    }

    pub fn leaky_relu(&self, a: Var, slope: f64) -> Var {
        let v = self.nodes.borrow()[a.id].value.map(|x| if x > 0.0 { x } else { slope * x });
        self.push("leaky_relu", Op::LeakyRelu(a.id, slope), v)
    }

    /// `ln(1+e^x)` with the overflow-safe branch for large x.
    pub fn softplus(&self, a: Var) -> Var {
        let v = self.nodes.borrow()[a.id].value.map(softplus);
        self.push("softplus", Op::Softplus(a.id), v)
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let v = self.nodes.borrow()[a.id].value.map(sigmoid);
        self.push("sigmoid", Op::Sigmoid(a.id), v)
    }

    pub fn tanh(&self, a: Var) -> Var {
        let v = self.nodes.borrow()[a.id].value.map(f64::tanh);
        self.push("tanh", Op::Tanh(a.id), v)
    }

    pub fn exp(&self, a: Var) -> Var {
        let v = self.nodes.borrow()[a.id].value.map(f64::exp);
        self.push("exp", Op::Exp(a.id), v)
    }

    pub fn ln(&self, a: Var) -> Var {
        let v = self.nodes.borrow()[a.id].value.map(f64::ln);
        self.push("ln", Op::Ln(a.id), v)
    }

    /// Value passes through, gradient stops here.
    pub fn detach(&self, a: Var) -> Var {
        let v = self.nodes.borrow()[a.id].value.clone();
        self.push("detach", Op::Detach(a.id), v)
    }

    /// Reverse sweep from a scalar loss. Returns per-node gradients; query
    /// them through [`Gradients::get`] with the `Var` handles of interest.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TapeError> {
        if let Some(p) = self.poison.borrow_mut().take() {
            return Err(p);
        }
        let nodes = self.nodes.borrow();
        if !nodes[loss.id].value.is_scalar() {
            return Err(TapeError::NonScalarLoss(nodes[loss.id].value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.id).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &nodes[id];
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g, &nodes);
                    accumulate(&mut grads, *b, &g, &nodes);
                }
                Op::AddRow(m, r) => {
                    accumulate(&mut grads, *m, &g, &nodes);
                    let (rows, cols) = g.dims2();
                    let mut col_sum = vec![0.0; cols];
                    for i in 0..rows {
                        for j in 0..cols {
                            col_sum[j] += g.values()[i * cols + j];
                        }
                    }
                    accumulate(&mut grads, *r, &Tensor::vector(col_sum), &nodes);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, &g, &nodes);
                    accumulate(&mut grads, *b, &g.map(|x| -x), &nodes);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(&nodes[*b].value, |x, y| x * y);
                    let gb = g.zip_map(&nodes[*a].value, |x, y| x * y);
                    accumulate(&mut grads, *a, &ga, &nodes);
                    accumulate(&mut grads, *b, &gb, &nodes);
                }
                Op::Neg(a) => accumulate(&mut grads, *a, &g.map(|x| -x), &nodes),
                Op::AddScalar(a) => accumulate(&mut grads, *a, &g, &nodes),
                Op::MulScalar(a, c) => {
                    let c = *c;
                    accumulate(&mut grads, *a, &g.map(|x| x * c), &nodes)
                }
                Op::Matmul(a, b) => {
                    let ga = g.matmul_t(&nodes[*b].value);
                    let gb = nodes[*a].value.t_matmul(&g);
                    accumulate(&mut grads, *a, &ga, &nodes);
                    accumulate(&mut grads, *b, &gb, &nodes);
                }
                Op::Sum(a) => {
                    let ga = nodes[*a].value.map(|_| g.item());
                    accumulate(&mut grads, *a, &ga, &nodes);
                }
                Op::Mean(a) => {
                    let n = nodes[*a].value.len() as f64;
                    let ga = nodes[*a].value.map(|_| g.item() / n);
                    accumulate(&mut grads, *a, &ga, &nodes);
                }
                Op::RowSum(a) => {
                    let (rows, cols) = nodes[*a].value.dims2();
                    let mut out = vec![0.0; rows * cols];
                    for i in 0..rows {
                        let gi = g.values()[i];
                        for j in 0..cols {
                            out[i * cols + j] = gi;
                        }
                    }
                    accumulate(&mut grads, *a, &Tensor::new(vec![rows, cols], out), &nodes);
                }
                Op::RowLogSumExp(a) => {
                    let t = &nodes[*a].value;
                    let (rows, cols) = t.dims2();
                    let lse = node.value.values();
                    let mut out = vec![0.0; rows * cols];
                    for i in 0..rows {
                        let gi = g.values()[i];
                        for j in 0..cols {
                            out[i * cols + j] = gi * (t.values()[i * cols + j] - lse[i]).exp();
                        }
                    }
                    accumulate(&mut grads, *a, &Tensor::new(vec![rows, cols], out), &nodes);
                }
                Op::GatherCol(a, cols_idx) => {
                    let (rows, width) = nodes[*a].value.dims2();
                    let mut out = vec![0.0; rows * width];
                    for (i, &c) in cols_idx.iter().enumerate() {
                        out[i * width + c] = g.values()[i];
                    }
                    accumulate(&mut grads, *a, &Tensor::new(vec![rows, width], out), &nodes);
                }
                Op::GatherRows(a, rows_idx) => {
                    let (k, d) = nodes[*a].value.dims2();
                    let mut out = vec![0.0; k * d];
                    for (i, &r) in rows_idx.iter().enumerate() {
                        for j in 0..d {
                            out[r * d + j] += g.values()[i * d + j];
                        }
                    }
                    accumulate(&mut grads, *a, &Tensor::new(vec![k, d], out), &nodes);
                }
                Op::ConcatCols(parts) => {
                    let (rows, total) = node.value.dims2();
                    let mut off = 0;
                    for p in parts {
                        let w = nodes[*p].value.dims2().1;
                        let mut out = vec![0.0; rows * w];
                        for i in 0..rows {
                            out[i * w..(i + 1) * w].copy_from_slice(
                                &g.values()[i * total + off..i * total + off + w],
                            );
                        }
                        accumulate(&mut grads, *p, &Tensor::new(vec![rows, w], out), &nodes);
                        off += w;
                    }
                }
                Op::Relu(a) => {
                    let ga = g.zip_map(&nodes[*a].value, |gi, x| if x > 0.0 { gi } else { 0.0 });
                    accumulate(&mut grads, *a, &ga, &nodes);
                }
                Op::LeakyRelu(a, slope) => {
                    let s = *slope;
                    let ga =
                        g.zip_map(&nodes[*a].value, |gi, x| if x > 0.0 { gi } else { s * gi });
                    accumulate(&mut grads, *a, &ga, &nodes);
                }
                Op::Softplus(a) => {
                    let ga = g.zip_map(&nodes[*a].value, |gi, x| gi * sigmoid(x));
                    accumulate(&mut grads, *a, &ga, &nodes);
                }
                Op::Sigmoid(a) => {
                    let ga = g.zip_map(&node.value, |gi, s| gi * s * (1.0 - s));
                    accumulate(&mut grads, *a, &ga, &nodes);
                }
                Op::Tanh(a) => {
                    let ga = g.zip_map(&node.value, |gi, t| gi * (1.0 - t * t));
                    accumulate(&mut grads, *a, &ga, &nodes);
                }
                Op::Exp(a) => {
                    let ga = g.zip_map(&node.value, |gi, e| gi * e);
                    accumulate(&mut grads, *a, &ga, &nodes);
                }
                Op::Ln(a) => {
                    let ga = g.zip_map(&nodes[*a].value, |gi, x| gi / x);
                    accumulate(&mut grads, *a, &ga, &nodes);
                }
                Op::Detach(_) => {}
            }
        }

        // Non-finite gradients indicate a defective recorded graph (ln at 0, etc.).
        for (id, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if !g.all_finite() {
                    return Err(TapeError::NonFinite { op: "backward", node: id });
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, g: &Tensor, nodes: &[Node]) {
    debug_assert_eq!(nodes[id].value.shape(), g.shape(), "gradient shape mismatch");
    match &mut grads[id] {
        Some(acc) => {
            for (a, b) in acc.values_mut().iter_mut().zip(g.values()) {
                *a += b;
            }
        }
        slot => *slot = Some(g.clone()),
    }
}

/// Per-node gradients from one reverse sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; zeros when the loss does not depend on it.
    pub fn get(&self, v: Var, shape: &[usize]) -> Tensor {
        match &self.grads[v.id] {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }

    /// True when the node received no gradient at all (loss independent of it).
    pub fn is_zero(&self, v: Var) -> bool {
        match &self.grads[v.id] {
            None => true,
            Some(g) => g.values().iter().all(|&x| x == 0.0),
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        // loss = sum(w * w), w = [1, 2] -> grad = [2, 4]
        let tape = Tape::new();
        let w = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let loss = tape.sum(tape.mul(w, w));
        assert_eq!(tape.item(loss), 5.0);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w, &[2]).values(), &[2.0, 4.0]);
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let tape = Tape::new();
        let w = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let p = tape.leaf(Tensor::vector(vec![3.0]));
        let loss = tape.sum(tape.mul(w, w));
        let grads = tape.backward(loss).unwrap();
        assert!(grads.is_zero(p));
        assert_eq!(grads.get(p, &[1]).values(), &[0.0]);
    }

    #[test]
    fn detach_blocks_gradient() {
        let tape = Tape::new();
        let w = tape.leaf(Tensor::vector(vec![2.0]));
        let d = tape.detach(w);
        let loss = tape.sum(tape.mul(d, d));
        assert_eq!(tape.item(loss), 4.0);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.is_zero(w));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::new();
        let w = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let y = tape.mul(w, w);
        assert!(matches!(tape.backward(y), Err(TapeError::NonScalarLoss(_))));
    }

    #[test]
    fn non_finite_forward_poisons_tape() {
        let tape = Tape::new();
        let w = tape.leaf(Tensor::vector(vec![-1.0]));
        let l = tape.ln(w); // ln(-1) = NaN
        assert!(tape.is_poisoned());
        let loss = tape.sum(l);
        assert!(matches!(tape.backward(loss), Err(TapeError::NonFinite { .. })));
    }

    #[test]
    fn logsumexp_is_stable_for_large_logits() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::matrix(1, 2, vec![1000.0, 999.0]));
        let lse = tape.row_logsumexp(x);
        let v = tape.value(lse).values()[0];
        assert!((v - (1000.0 + (1.0 + (-1.0f64).exp()).ln())).abs() < 1e-9);
    }

    #[test]
    fn gather_and_concat_roundtrip_gradients() {
        let tape = Tape::new();
        let table = tape.leaf(Tensor::matrix(3, 2, vec![1., 2., 3., 4., 5., 6.]));
        let picked = tape.gather_rows(table, &[2, 0, 2]);
        let other = tape.leaf(Tensor::matrix(3, 1, vec![1., 1., 1.]));
        let cat = tape.concat_cols(&[picked, other]);
        let loss = tape.sum(cat);
        let grads = tape.backward(loss).unwrap();
        // row 2 picked twice, row 0 once, row 1 never
        assert_eq!(grads.get(table, &[3, 2]).values(), &[1., 1., 0., 0., 2., 2.]);
        assert_eq!(grads.get(other, &[3, 1]).values(), &[1., 1., 1.]);
    }

    #[test]
    fn matmul_gradients_match_hand_derivation() {
        // loss = sum(A B); dA = 1 * B^T broadcast, dB = A^T * 1
        let tape = Tape::new();
        let a = tape.leaf(Tensor::matrix(2, 2, vec![1., 2., 3., 4.]));
        let b = tape.leaf(Tensor::matrix(2, 2, vec![5., 6., 7., 8.]));
        let loss = tape.sum(tape.matmul(a, b));
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(a, &[2, 2]).values(), &[11., 15., 11., 15.]);
        assert_eq!(grads.get(b, &[2, 2]).values(), &[4., 4., 6., 6.]);
    }
}
