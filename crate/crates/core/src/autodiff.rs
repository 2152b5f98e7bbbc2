//! Minimal reverse-mode differentiation over matrix-valued nodes.
//!
//! Every forward pass in the crate is written against [`Tape`]; inference
//! uses a tape with gradients disabled so the forward code path is shared
//! with training and gradient checking. Parameters are registered by
//! reference and deduplicated by address, so a tensor used many times in a
//! graph accumulates a single gradient.

use std::borrow::Cow;
use std::collections::HashMap;

use crate::tensor::{sigmoid, Mat};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Mat, inv_std: Vec<f64> },
    ScaleRows(Var, Var),
    MeanRows(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    NormalizeRows(Var, Vec<f64>),
    RepeatRows(Var),
    GatherCols(Var, Vec<usize>),
    Contrastive { sim: Var, p_row: Mat, p_col: Mat },
    MseRows(Var, Var),
    SumAll(Var),
}

struct Node<'a> {
    value: Cow<'a, Mat>,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    params: HashMap<usize, Var>,
    grad_enabled: bool,
    grads: Vec<Option<Mat>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    /// Tape that records gradients for registered parameters.
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: HashMap::new(), grad_enabled: true, grads: Vec::new() }
    }

    /// Tape for forward-only evaluation.
    pub fn inference() -> Self {
        Self { grad_enabled: false, ..Self::new() }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Mat>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad: needs_grad && self.grad_enabled });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Mat, op: Op, inputs: &[Var]) -> Var {
        let needs = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(Cow::Owned(value), op, needs)
    }

    pub fn constant(&mut self, m: &'a Mat) -> Var {
        self.push(Cow::Borrowed(m), Op::Leaf, false)
    }

    pub fn constant_owned(&mut self, m: Mat) -> Var {
        self.push(Cow::Owned(m), Op::Leaf, false)
    }

    /// Registers a trainable tensor; repeated registration returns the same node.
    pub fn param(&mut self, m: &'a Mat) -> Var {
        let key = m as *const Mat as usize;
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let v = self.push(Cow::Borrowed(m), Op::Leaf, true);
        self.params.insert(key, v);
        v
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data()[0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push_op(value, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_t(self.value(b));
        self.push_op(value, Op::MatMulT(a, b), &[a, b])
    }

    /// Adds a 1×m row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let am = self.value(a);
        let bm = self.value(bias);
        assert_eq!(bm.shape(), (1, am.cols()), "add_row: bias shape");
        let mut value = am.clone();
        let cols = am.cols();
        for i in 0..value.rows() {
            for (x, b) in value.row_mut(i).iter_mut().zip(&bm.data()[..cols]) {
                *x += b;
            }
        }
        self.push_op(value, Op::AddRow(a, bias), &[a, bias])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push_op(value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push_op(value, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push_op(value, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        self.push_op(value, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        self.push_op(value, Op::AddScalar(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push_op(value, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push_op(value, Op::Sigmoid(a), &[a])
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let am = self.value(a);
        let mut value = am.clone();
        for i in 0..value.rows() {
            let row = value.row_mut(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        self.push_op(value, Op::SoftmaxRows(a), &[a])
    }

    /// Per-row LayerNorm with affine parameters `gamma`, `beta` (1×m).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xm = self.value(x);
        let (rows, cols) = xm.shape();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        assert_eq!(g.len(), cols, "layer_norm: gamma width");
        let mut xhat = Mat::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        let mut value = Mat::zeros(rows, cols);
        for i in 0..rows {
            let row = xm.row(i);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for j in 0..cols {
                let h = (row[j] - mean) * is;
                xhat[(i, j)] = h;
                value[(i, j)] = g[j] * h + b[j];
            }
        }
        self.push_op(value, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, &[x, gamma, beta])
    }

    /// Scales row i of `a` by `s[i]`, where `s` is n×1.
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Var {
        let am = self.value(a);
        let sm = self.value(s);
        assert_eq!(sm.shape(), (am.rows(), 1), "scale_rows: scale shape");
        let mut value = am.clone();
        for i in 0..value.rows() {
            let c = sm.data()[i];
            for x in value.row_mut(i) {
                *x *= c;
            }
        }
        self.push_op(value, Op::ScaleRows(a, s), &[a, s])
    }

    /// Mean over rows, giving 1×m.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let am = self.value(a);
        let mut value = am.column_sums();
        value.scale_assign(1.0 / am.rows() as f64);
        self.push_op(value, Op::MeanRows(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push_op(value, Op::Transpose(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut value = Mat::zeros(rows, total);
        let mut offset = 0;
        for &p in parts {
            let pm = self.value(p);
            assert_eq!(pm.rows(), rows, "concat_cols: row count");
            for i in 0..rows {
                value.row_mut(i)[offset..offset + pm.cols()].copy_from_slice(pm.row(i));
            }
            offset += pm.cols();
        }
        self.push_op(value, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let am = self.value(a);
        let mut value = Mat::zeros(am.rows(), len);
        for i in 0..am.rows() {
            value.row_mut(i).copy_from_slice(&am.row(i)[start..start + len]);
        }
        self.push_op(value, Op::SliceCols(a, start), &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pm = self.value(p);
            assert_eq!(pm.cols(), cols, "concat_rows: column count");
            data.extend_from_slice(pm.data());
            rows += pm.rows();
        }
        self.push_op(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Divides each row by its Euclidean norm.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let am = self.value(a);
        let mut value = am.clone();
        let mut norms = Vec::with_capacity(am.rows());
        for i in 0..am.rows() {
            let n = crate::tensor::norm(am.row(i)).max(1e-12);
            norms.push(n);
            for x in value.row_mut(i) {
                *x /= n;
            }
        }
        self.push_op(value, Op::NormalizeRows(a, norms), &[a])
    }

    /// Tiles a 1×m row `times` times.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Var {
        let am = self.value(a);
        assert_eq!(am.rows(), 1, "repeat_rows expects a single row");
        let mut data = Vec::with_capacity(times * am.cols());
        for _ in 0..times {
            data.extend_from_slice(am.data());
        }
        let value = Mat::from_vec(times, am.cols(), data);
        self.push_op(value, Op::RepeatRows(a), &[a])
    }

    /// Picks columns of a 1×n row.
    pub fn gather_cols(&mut self, a: Var, idx: &[usize]) -> Var {
        let am = self.value(a);
        assert_eq!(am.rows(), 1, "gather_cols expects a single row");
        let value = Mat::from_vec(1, idx.len(), idx.iter().map(|&i| am.data()[i]).collect());
        self.push_op(value, Op::GatherCols(a, idx.to_vec()), &[a])
    }

    /// Symmetric cross-entropy over a square similarity matrix whose diagonal
    /// holds the positive pairs.
    pub fn contrastive_loss(&mut self, sim: Var) -> Var {
        let s = self.value(sim);
        let b = s.rows();
        assert_eq!(s.cols(), b, "contrastive_loss: square input");
        let mut p_row = Mat::zeros(b, b);
        let mut p_col = Mat::zeros(b, b);
        let mut v2t = 0.0;
        let mut t2v = 0.0;
        for i in 0..b {
            let row: Vec<f64> = s.row(i).to_vec();
            let (lse, p) = log_sum_exp_with_probs(&row);
            v2t += lse - s[(i, i)];
            p_row.row_mut(i).copy_from_slice(&p);
        }
        for j in 0..b {
            let col: Vec<f64> = (0..b).map(|i| s[(i, j)]).collect();
            let (lse, p) = log_sum_exp_with_probs(&col);
            t2v += lse - s[(j, j)];
            for i in 0..b {
                p_col[(i, j)] = p[i];
            }
        }
        let loss = 0.5 * (v2t / b as f64 + t2v / b as f64);
        self.push_op(Mat::from_vec(1, 1, vec![loss]), Op::Contrastive { sim, p_row, p_col }, &[sim])
    }

    /// Mean over rows of squared Euclidean distance between matching rows.
    pub fn mse_rows(&mut self, a: Var, b: Var) -> Var {
        let am = self.value(a);
        let bm = self.value(b);
        assert_eq!(am.shape(), bm.shape(), "mse_rows: shape");
        let total: f64 = am.data().iter().zip(bm.data()).map(|(x, y)| (x - y).powi(2)).sum();
        let value = Mat::from_vec(1, 1, vec![total / am.rows() as f64]);
        self.push_op(value, Op::MseRows(a, b), &[a, b])
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Mat::from_vec(1, 1, vec![self.value(a).sum()]);
        self.push_op(value, Op::SumAll(a), &[a])
    }

    /// Reverse pass from a scalar node. Gradients are retrievable afterwards
    /// through [`Tape::grad`] and [`Tape::param_grad`].
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward expects a scalar");
        let n = self.nodes.len();
        let mut grads: Vec<Option<Mat>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Mat::filled(1, 1, 1.0));
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = grads;
    }

    pub fn grad(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of a registered parameter; zeros if it did not influence the loss.
    pub fn param_grad(&self, m: &Mat) -> Mat {
        let key = m as *const Mat as usize;
        self.params
            .get(&key)
            .and_then(|&v| self.grad(v).cloned())
            .unwrap_or_else(|| Mat::zeros(m.rows(), m.cols()))
    }

    fn propagate(&self, idx: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let node = &self.nodes[idx];
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        let val = |v: Var| -> &Mat { &self.nodes[v.0].value };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.matmul_t(val(*b)));
                }
                if needs(*b) {
                    accumulate(grads, *b, val(*a).t_matmul(g));
                }
            }
            Op::MatMulT(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.matmul(val(*b)));
                }
                if needs(*b) {
                    accumulate(grads, *b, g.t_matmul(val(*a)));
                }
            }
            Op::AddRow(a, bias) => {
                if needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if needs(*bias) {
                    accumulate(grads, *bias, g.column_sums());
                }
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if needs(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if needs(*b) {
                    accumulate(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.zip_map(val(*b), |x, y| x * y));
                }
                if needs(*b) {
                    accumulate(grads, *b, g.zip_map(val(*a), |x, y| x * y));
                }
            }
            Op::Scale(a, c) => accumulate(grads, *a, g.map(|x| x * c)),
            Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
            Op::Relu(a) => {
                let d = g.zip_map(val(*a), |gx, x| if x > 0.0 { gx } else { 0.0 });
                accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = g.zip_map(&node.value, |gx, y| gx * y * (1.0 - y));
                accumulate(grads, *a, d);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut d = Mat::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let yr = y.row(i);
                    let gr = g.row(i);
                    let inner: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for (o, (p, q)) in d.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = p * (q - inner);
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let gam = val(*gamma).data();
                let (rows, cols) = xhat.shape();
                if needs(*gamma) {
                    accumulate(grads, *gamma, g.zip_map(xhat, |a, b| a * b).column_sums());
                }
                if needs(*beta) {
                    accumulate(grads, *beta, g.column_sums());
                }
                if needs(*x) {
                    let mut d = Mat::zeros(rows, cols);
                    for i in 0..rows {
                        let dxh: Vec<f64> = g.row(i).iter().zip(gam).map(|(a, b)| a * b).collect();
                        let xr = xhat.row(i);
                        let mean_d = dxh.iter().sum::<f64>() / cols as f64;
                        let mean_dx = dxh.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                        for j in 0..cols {
                            d[(i, j)] = inv_std[i] * (dxh[j] - mean_d - xr[j] * mean_dx);
                        }
                    }
                    accumulate(grads, *x, d);
                }
            }
            Op::ScaleRows(a, s) => {
                let sm = val(*s);
                let am = val(*a);
                if needs(*a) {
                    let mut d = g.clone();
                    for i in 0..d.rows() {
                        let c = sm.data()[i];
                        for x in d.row_mut(i) {
                            *x *= c;
                        }
                    }
                    accumulate(grads, *a, d);
                }
                if needs(*s) {
                    let d: Vec<f64> = (0..am.rows())
                        .map(|i| crate::tensor::dot(g.row(i), am.row(i)))
                        .collect();
                    accumulate(grads, *s, Mat::column_vector(&d));
                }
            }
            Op::MeanRows(a) => {
                let rows = val(*a).rows();
                let mut d = Mat::zeros(rows, g.cols());
                for i in 0..rows {
                    for (o, &x) in d.row_mut(i).iter_mut().zip(g.data()) {
                        *o = x / rows as f64;
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if needs(p) {
                        let mut d = Mat::zeros(g.rows(), w);
                        for i in 0..g.rows() {
                            d.row_mut(i).copy_from_slice(&g.row(i)[offset..offset + w]);
                        }
                        accumulate(grads, p, d);
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let am = val(*a);
                let mut d = Mat::zeros(am.rows(), am.cols());
                for i in 0..am.rows() {
                    d.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                }
                accumulate(grads, *a, d);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let r = val(p).rows();
                    if needs(p) {
                        let cols = g.cols();
                        let d = Mat::from_vec(r, cols, g.data()[offset * cols..(offset + r) * cols].to_vec());
                        accumulate(grads, p, d);
                    }
                    offset += r;
                }
            }
            Op::NormalizeRows(a, norms) => {
                let y = &node.value;
                let mut d = Mat::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let yr = y.row(i);
                    let gr = g.row(i);
                    let inner = crate::tensor::dot(yr, gr);
                    for (o, (p, q)) in d.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = (q - p * inner) / norms[i];
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::RepeatRows(a) => accumulate(grads, *a, g.column_sums()),
            Op::GatherCols(a, idx) => {
                let mut d = Mat::zeros(1, val(*a).cols());
                for (k, &i) in idx.iter().enumerate() {
                    d.data_mut()[i] += g.data()[k];
                }
                accumulate(grads, *a, d);
            }
            Op::Contrastive { sim, p_row, p_col } => {
                let b = p_row.rows();
                let up = g.data()[0];
                let mut d = Mat::zeros(b, b);
                for i in 0..b {
                    for j in 0..b {
                        let eye = if i == j { 1.0 } else { 0.0 };
                        d[(i, j)] = up * 0.5 * ((p_row[(i, j)] - eye) + (p_col[(i, j)] - eye)) / b as f64;
                    }
                }
                accumulate(grads, *sim, d);
            }
            Op::MseRows(a, b) => {
                let up = g.data()[0];
                let rows = val(*a).rows() as f64;
                let diff = val(*a).zip_map(val(*b), |x, y| 2.0 * up * (x - y) / rows);
                if needs(*b) {
                    accumulate(grads, *b, diff.map(|x| -x));
                }
                if needs(*a) {
                    accumulate(grads, *a, diff);
                }
            }
            Op::SumAll(a) => {
                let am = val(*a);
                accumulate(grads, *a, Mat::filled(am.rows(), am.cols(), g.data()[0]));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, d: Mat) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}

fn log_sum_exp_with_probs(xs: &[f64]) -> (f64, Vec<f64>) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    (max + total.ln(), exps.into_iter().map(|e| e / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    /// Central differences of `f` with respect to every entry of `x`.
    fn numeric_grad(x: &Mat, f: impl Fn(&Mat) -> f64) -> Mat {
        let eps = 1e-6;
        let mut out = Mat::zeros(x.rows(), x.cols());
        let mut probe = x.clone();
        for k in 0..x.len() {
            let orig = probe.data()[k];
            probe.data_mut()[k] = orig + eps;
            let up = f(&probe);
            probe.data_mut()[k] = orig - eps;
            let down = f(&probe);
            probe.data_mut()[k] = orig;
            out.data_mut()[k] = (up - down) / (2.0 * eps);
        }
        out
    }

    fn check(x: &Mat, build: impl Fn(&mut Tape, Var) -> Var) {
        let mut tape = Tape::new();
        let xv = tape.param(x);
        let out = build(&mut tape, xv);
        tape.backward(out);
        let analytic = tape.param_grad(x);
        let numeric = numeric_grad(x, |p| {
            let mut t = Tape::inference();
            let v = t.constant(p);
            let o = build(&mut t, v);
            t.scalar(o)
        });
        for (a, n) in analytic.data().iter().zip(numeric.data()) {
            assert!((a - n).abs() < 1e-6 * (1.0 + a.abs()), "analytic {a} numeric {n}");
        }
    }

    fn weights(rows: usize, cols: usize, seed: u64) -> Mat {
        Mat::gaussian(rows, cols, 1.0, &mut SplitMix64::new(seed))
    }

    fn project(t: &mut Tape, v: Var, seed: u64) -> Var {
        let (r, c) = t.value(v).shape();
        let w = t.constant_owned(weights(r, c, seed));
        let m = t.mul(v, w);
        t.sum_all(m)
    }

    #[test]
    fn op_gradients_match_central_differences() {
        let x = weights(3, 4, 11);
        check(&x, |t, v| {
            let s = t.softmax_rows(v);
            project(t, s, 1)
        });
        check(&x, |t, v| {
            let gam = t.constant_owned(weights(1, 4, 5));
            let bet = t.constant_owned(weights(1, 4, 6));
            let l = t.layer_norm(v, gam, bet);
            project(t, l, 2)
        });
        check(&x, |t, v| {
            let n = t.normalize_rows(v);
            project(t, n, 3)
        });
        check(&x, |t, v| {
            let s = t.sigmoid(v);
            let m = t.matmul_t(s, v);
            project(t, m, 4)
        });
        check(&x, |t, v| {
            let a = t.slice_cols(v, 1, 2);
            let b = t.slice_cols(v, 0, 2);
            let c = t.concat_cols(&[a, b]);
            let tr = t.transpose(c);
            let m = t.matmul(c, tr);
            project(t, m, 7)
        });
        check(&x, |t, v| {
            let row = t.mean_rows(v);
            let g = t.gather_cols(row, &[3, 1]);
            let rep = t.repeat_rows(g, 3);
            let col = t.slice_cols(rep, 0, 1);
            let sc = t.scale_rows(v, col);
            project(t, sc, 8)
        });
        let sq = weights(3, 3, 12);
        check(&sq, |t, v| t.contrastive_loss(v));
        check(&x, |t, v| {
            let other = t.constant_owned(weights(3, 4, 13));
            t.mse_rows(v, other)
        });
    }

    #[test]
    fn shared_param_accumulates_single_gradient() {
        let w = Mat::from_vec(1, 1, vec![3.0]);
        let mut tape = Tape::new();
        let a = tape.param(&w);
        let b = tape.param(&w);
        assert_eq!(a, b);
        let p = tape.mul(a, b);
        let s = tape.sum_all(p);
        tape.backward(s);
        assert_eq!(tape.param_grad(&w).data()[0], 6.0);
    }

    #[test]
    fn inference_tape_records_no_gradients() {
        let w = Mat::from_vec(1, 1, vec![2.0]);
        let mut tape = Tape::inference();
        let a = tape.param(&w);
        let s = tape.sum_all(a);
        tape.backward(s);
        assert_eq!(tape.param_grad(&w).data()[0], 0.0);
    }
}
