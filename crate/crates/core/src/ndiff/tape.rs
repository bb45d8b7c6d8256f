use std::rc::Rc;

use rand::Rng;

use super::{Csr, Tensor};
use crate::error::{Error, Result};

/// Batch-normalisation epsilon.
pub const BN_EPS: f64 = 1e-5;

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Statistics of one training-mode batch-norm call. `var` is unbiased.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// How batch normalisation obtains its statistics.
#[derive(Debug, Clone, Copy)]
pub enum NormMode<'a> {
    Train,
    Eval { mean: &'a [f64], var: &'a [f64] },
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMM(Rc<Csr>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    ScaleRows(Var, Rc<Vec<f64>>),
    GatherRows(Var, Rc<Vec<Option<usize>>>),
    SliceRows(Var, usize),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    CrossEntropy(Var, Rc<Vec<usize>>),
    BinaryCrossEntropy(Var, Rc<Vec<f64>>),
    MeanRows(Var),
    SumAll(Var),
    SumCols(Var),
    Dropout(Var, Vec<f64>),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
        train: bool,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    param: bool,
}

/// Recorded computation supporting forward evaluation and reverse-mode gradients.
///
/// Values are computed eagerly as operations are recorded. Gradients of
/// parameter leaves accumulate across [`Graph::backward`] calls until
/// [`Graph::zero_grad`].
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    fn push_leaf(&mut self, value: Tensor, param: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: param,
            param,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            param: false,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a parameter leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Accumulated gradient, or zeros shaped like the parameter.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v).cloned().unwrap_or_else(|| {
            let (r, c) = self.value(v).shape();
            Tensor::zeros(r, c)
        })
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    /// Sparse-dense product `sparse · x`.
    pub fn spmm(&mut self, sparse: Rc<Csr>, x: Var) -> Result<Var> {
        let value = sparse.mul_dense(self.value(x))?;
        self.push("spmm", value, Op::SpMM(sparse, x), &[x])
    }

    /// Row-sum gather: output row `i` is the sum of the rows of `table` listed in `rows[i]`.
    pub fn gather_sum<R: AsRef<[usize]>>(&mut self, table: Var, rows: &[R]) -> Result<Var> {
        let n = self.value(table).rows();
        let csr = Csr::binary(rows, n).map_err(|_| {
            Error::shape("gather_sum", format!("index out of range for {n} embedding rows"))
        })?;
        self.spmm(Rc::new(csr), table)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push("add", value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.push("sub", value, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push("mul", value, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let value = self.value(a).map(|x| x * s);
        self.push("scale", value, Op::Scale(a, s), &[a])
    }

    /// Adds a `1×c` row vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let xs = self.value(x);
        let rv = self.value(row);
        if rv.rows() != 1 || rv.cols() != xs.cols() {
            return Err(Error::shape(
                "add_row",
                format!("{:?} + {:?}", xs.shape(), rv.shape()),
            ));
        }
        let mut value = xs.clone();
        for r in 0..value.rows() {
            for (v, b) in value.row_mut(r).iter_mut().zip(rv.as_slice()) {
                *v += b;
            }
        }
        self.push("add_row", value, Op::AddRow(x, row), &[x, row])
    }

    /// Multiplies row `i` of `x` by the constant `factors[i]`.
    pub fn scale_rows(&mut self, x: Var, factors: Rc<Vec<f64>>) -> Result<Var> {
        let xs = self.value(x);
        if factors.len() != xs.rows() {
            return Err(Error::shape(
                "scale_rows",
                format!("{} factors for {} rows", factors.len(), xs.rows()),
            ));
        }
        let mut value = xs.clone();
        for (r, &f) in factors.iter().enumerate() {
            for v in value.row_mut(r) {
                *v *= f;
            }
        }
        self.push("scale_rows", value, Op::ScaleRows(x, factors), &[x])
    }

    /// Output row `r` copies row `map[r]` of `x`, or is zero when `map[r]` is `None`.
    pub fn gather_rows(&mut self, x: Var, map: Rc<Vec<Option<usize>>>) -> Result<Var> {
        let xs = self.value(x);
        let mut value = Tensor::zeros(map.len(), xs.cols());
        for (r, m) in map.iter().enumerate() {
            if let Some(src) = *m {
                if src >= xs.rows() {
                    return Err(Error::shape(
                        "gather_rows",
                        format!("row {src} out of range for {} rows", xs.rows()),
                    ));
                }
                value.row_mut(r).copy_from_slice(xs.row(src));
            }
        }
        self.push("gather_rows", value, Op::GatherRows(x, map), &[x])
    }

    /// Rows `start..end` of `x`.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xs = self.value(x);
        if start > end || end > xs.rows() {
            return Err(Error::shape(
                "slice_rows",
                format!("{start}..{end} of {} rows", xs.rows()),
            ));
        }
        let cols = xs.cols();
        let value = Tensor::from_vec(
            end - start,
            cols,
            xs.as_slice()[start * cols..end * cols].to_vec(),
        )?;
        self.push("slice_rows", value, Op::SliceRows(x, start), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push("relu", value, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(sigmoid);
        self.push("sigmoid", value, Op::Sigmoid(x), &[x])
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let value = softmax_rows(self.value(x));
        self.push("softmax", value, Op::Softmax(x), &[x])
    }

    /// Per-row cross-entropy of `logits` against class `targets`, as an `n×1` column.
    pub fn cross_entropy(&mut self, logits: Var, targets: Rc<Vec<usize>>) -> Result<Var> {
        let z = self.value(logits);
        if targets.len() != z.rows() {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} targets for {} rows", targets.len(), z.rows()),
            ));
        }
        let mut out = Vec::with_capacity(z.rows());
        for (r, &t) in targets.iter().enumerate() {
            if t >= z.cols() {
                return Err(Error::shape(
                    "cross_entropy",
                    format!("target {t} with {} classes", z.cols()),
                ));
            }
            let row = z.row(r);
            out.push(log_sum_exp(row) - row[t]);
        }
        let value = Tensor::from_vec(out.len(), 1, out)?;
        self.push("cross_entropy", value, Op::CrossEntropy(logits, targets), &[logits])
    }

    /// Per-row binary cross-entropy of `n×1` logits against targets in `[0, 1]`.
    pub fn binary_cross_entropy(&mut self, logits: Var, targets: Rc<Vec<f64>>) -> Result<Var> {
        let z = self.value(logits);
        if z.cols() != 1 || targets.len() != z.rows() {
            return Err(Error::shape(
                "binary_cross_entropy",
                format!("{:?} logits for {} targets", z.shape(), targets.len()),
            ));
        }
        let out: Vec<f64> = z
            .as_slice()
            .iter()
            .zip(targets.iter())
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .collect();
        let value = Tensor::from_vec(out.len(), 1, out)?;
        self.push(
            "binary_cross_entropy",
            value,
            Op::BinaryCrossEntropy(logits, targets),
            &[logits],
        )
    }

    /// Column means, `1×c`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x);
        let n = xs.rows();
        if n == 0 {
            return Err(Error::shape("mean_rows", "no rows"));
        }
        let mut acc = vec![0.0; xs.cols()];
        for r in 0..n {
            for (a, v) in acc.iter_mut().zip(xs.row(r)) {
                *a += v;
            }
        }
        for a in &mut acc {
            *a /= n as f64;
        }
        let value = Tensor::from_vec(1, acc.len(), acc)?;
        self.push("mean_rows", value, Op::MeanRows(x), &[x])
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum());
        self.push("sum_all", value, Op::SumAll(x), &[x])
    }

    /// Row sums, `n×1`.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x);
        let sums: Vec<f64> = (0..xs.rows()).map(|r| xs.row(r).iter().sum()).collect();
        let value = Tensor::from_vec(sums.len(), 1, sums)?;
        self.push("sum_cols", value, Op::SumCols(x), &[x])
    }

    /// Inverted dropout. Outside training mode the input is returned unchanged.
    pub fn dropout(&mut self, x: Var, p: f64, train: bool, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout probability {p} not in [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let xs = self.value(x);
        let data = xs.as_slice().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let value = Tensor::from_vec(xs.rows(), xs.cols(), data)?;
        self.push("dropout", value, Op::Dropout(x, mask), &[x])
    }

    /// Per-column batch normalisation with `1×c` affine parameters.
    ///
    /// In training mode the batch statistics are returned so the caller can
    /// update its running estimates.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: NormMode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        let xs = self.value(x);
        let (n, c) = xs.shape();
        for p in [gamma, beta] {
            if self.value(p).shape() != (1, c) {
                return Err(Error::shape(
                    "batch_norm",
                    format!("parameter {:?} for {c} columns", self.value(p).shape()),
                ));
            }
        }
        let (mean, var_used, stats) = match mode {
            NormMode::Train => {
                if n == 0 {
                    return Err(Error::shape("batch_norm", "empty batch"));
                }
                let mut mean = vec![0.0; c];
                for r in 0..n {
                    for (m, v) in mean.iter_mut().zip(xs.row(r)) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; c];
                for r in 0..n {
                    for ((s, v), m) in var.iter_mut().zip(xs.row(r)).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                let biased: Vec<f64> = var.iter().map(|s| s / n as f64).collect();
                let unbiased = if n > 1 {
                    var.iter().map(|s| s / (n - 1) as f64).collect()
                } else {
                    biased.clone()
                };
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, biased, Some(stats))
            }
            NormMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::shape("batch_norm", "running statistics width"));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<f64> = var_used.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = xs.clone();
        for r in 0..n {
            for ((v, m), s) in xhat.row_mut(r).iter_mut().zip(&mean).zip(&inv_std) {
                *v = (*v - m) * s;
            }
        }
        let g = self.value(gamma).as_slice();
        let b = self.value(beta).as_slice();
        let mut value = xhat.clone();
        for r in 0..n {
            for ((v, gi), bi) in value.row_mut(r).iter_mut().zip(g).zip(b) {
                *v = *v * gi + bi;
            }
        }
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train: stats.is_some(),
        };
        let out = self.push("batch_norm", value, op, &[x, gamma, beta])?;
        Ok((out, stats))
    }

    /// Reverse pass from a scalar `loss`, adding into the gradient buffers of parameter leaves.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::EmptyGraph);
        }
        if self.nodes[loss.0].value.shape() != (1, 1) {
            return Err(Error::shape(
                "backward",
                format!("loss has shape {:?}", self.nodes[loss.0].value.shape()),
            ));
        }
        let mut adj: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if node.param {
                match &mut self.grads[i] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot => *slot = Some(g),
                }
                continue;
            }
            self.propagate(i, g, &mut adj)?;
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: Tensor, adj: &mut [Option<Tensor>]) -> Result<()> {
        let nodes = &self.nodes;
        let val = |v: &Var| &nodes[v.0].value;
        let mut send = |v: Var, t: Tensor| -> Result<()> {
            if !nodes[v.0].needs_grad {
                return Ok(());
            }
            match &mut adj[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot => {
                    *slot = Some(t);
                    Ok(())
                }
            }
        };
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if nodes[a.0].needs_grad {
                    send(*a, g.matmul_t(val(b))?)?;
                }
                if nodes[b.0].needs_grad {
                    send(*b, val(a).t_matmul(&g)?)?;
                }
            }
            Op::SpMM(s, x) => send(*x, s.t_mul_dense(&g)?)?,
            Op::Add(a, b) => {
                send(*a, g.clone())?;
                send(*b, g)?;
            }
            Op::Sub(a, b) => {
                send(*a, g.clone())?;
                send(*b, g.map(|v| -v))?;
            }
            Op::Mul(a, b) => {
                send(*a, g.zip_map(val(b), |x, y| x * y)?)?;
                send(*b, g.zip_map(val(a), |x, y| x * y)?)?;
            }
            Op::Scale(a, s) => send(*a, g.map(|v| v * s))?,
            Op::AddRow(x, row) => {
                let mut db = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (d, v) in db.as_mut_slice().iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
                send(*row, db)?;
                send(*x, g)?;
            }
            Op::ScaleRows(x, f) => {
                let mut dx = g;
                for (r, &s) in f.iter().enumerate() {
                    dx.row_mut(r).iter_mut().for_each(|v| *v *= s);
                }
                send(*x, dx)?;
            }
            Op::GatherRows(x, map) => {
                let (rows, cols) = val(x).shape();
                let mut dx = Tensor::zeros(rows, cols);
                for (r, m) in map.iter().enumerate() {
                    if let Some(src) = *m {
                        for (d, v) in dx.row_mut(src).iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                }
                send(*x, dx)?;
            }
            Op::SliceRows(x, start) => {
                let (rows, cols) = val(x).shape();
                let mut dx = Tensor::zeros(rows, cols);
                dx.as_mut_slice()[start * cols..start * cols + g.len()]
                    .copy_from_slice(g.as_slice());
                send(*x, dx)?;
            }
            Op::Relu(x) => send(*x, g.zip_map(val(x), |d, v| if v > 0.0 { d } else { 0.0 })?)?,
            Op::Sigmoid(x) => send(*x, g.zip_map(out, |d, y| d * y * (1.0 - y))?)?,
            Op::Softmax(x) => {
                let mut dx = g.clone();
                for r in 0..g.rows() {
                    let y = out.row(r);
                    let inner: f64 = g.row(r).iter().zip(y).map(|(a, b)| a * b).sum();
                    for ((d, gv), yv) in dx.row_mut(r).iter_mut().zip(g.row(r)).zip(y) {
                        *d = yv * (gv - inner);
                    }
                }
                send(*x, dx)?;
            }
            Op::CrossEntropy(x, targets) => {
                let mut dx = softmax_rows(val(x));
                for (r, &t) in targets.iter().enumerate() {
                    let scale = g.get(r, 0);
                    let row = dx.row_mut(r);
                    row[t] -= 1.0;
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                send(*x, dx)?;
            }
            Op::BinaryCrossEntropy(x, targets) => {
                let z = val(x);
                let data = z
                    .as_slice()
                    .iter()
                    .zip(targets.iter())
                    .zip(g.as_slice())
                    .map(|((&zv, &y), &d)| d * (sigmoid(zv) - y))
                    .collect();
                send(*x, Tensor::from_vec(z.rows(), 1, data)?)?;
            }
            Op::MeanRows(x) => {
                let (rows, cols) = val(x).shape();
                let mut dx = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    for (d, v) in dx.row_mut(r).iter_mut().zip(g.as_slice()) {
                        *d = v / rows as f64;
                    }
                }
                send(*x, dx)?;
            }
            Op::SumAll(x) => {
                let (rows, cols) = val(x).shape();
                send(*x, Tensor::filled(rows, cols, g.as_slice()[0]))?;
            }
            Op::SumCols(x) => {
                let (rows, cols) = val(x).shape();
                let mut dx = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    let v = g.get(r, 0);
                    dx.row_mut(r).iter_mut().for_each(|d| *d = v);
                }
                send(*x, dx)?;
            }
            Op::Dropout(x, mask) => {
                let data = g.as_slice().iter().zip(mask).map(|(a, m)| a * m).collect();
                send(*x, Tensor::from_vec(g.rows(), g.cols(), data)?)?;
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (n, c) = g.shape();
                let gam = val(gamma).as_slice();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for r in 0..n {
                    for j in 0..c {
                        dgamma[j] += g.get(r, j) * xhat.get(r, j);
                        dbeta[j] += g.get(r, j);
                    }
                }
                let mut dx = Tensor::zeros(n, c);
                if *train {
                    // dxhat = g * gamma; dx = inv_std / n * (n dxhat - Σ dxhat - xhat Σ dxhat xhat)
                    let nf = n as f64;
                    for j in 0..c {
                        let sum_d = dbeta[j] * gam[j];
                        let sum_dx = dgamma[j] * gam[j];
                        for r in 0..n {
                            let dxhat = g.get(r, j) * gam[j];
                            dx.set(
                                r,
                                j,
                                inv_std[j] / nf * (nf * dxhat - sum_d - xhat.get(r, j) * sum_dx),
                            );
                        }
                    }
                } else {
                    for r in 0..n {
                        for j in 0..c {
                            dx.set(r, j, g.get(r, j) * gam[j] * inv_std[j]);
                        }
                    }
                }
                send(*gamma, Tensor::from_vec(1, c, dgamma)?)?;
                send(*beta, Tensor::from_vec(1, c, dbeta)?)?;
                send(*x, dx)?;
            }
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    out
}
