//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation eagerly: each builder method computes
//! the forward value immediately and appends a node. Nodes only reference
//! earlier nodes, so the tape is acyclic and reverse insertion order is a
//! valid topological order for [`Graph::backward`].
//!
//! Shape mismatches in builder methods are programming errors and panic.
//! Data-dependent failures (non-scalar loss, non-finite values) are reported
//! through [`NnError`].

use std::collections::BTreeMap;

use crate::{NnError, ParamSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    RowSum(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    MaskedLogSumExp(Var, Tensor),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients keyed by parameter index in the bound [`ParamSet`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    grads: BTreeMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, param: usize) -> Option<&Tensor> {
        self.grads.get(&param)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Tensor)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn insert(&mut self, param: usize, grad: Tensor) {
        self.grads.insert(param, grad);
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.values().map(|g| g.frobenius_sq()).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    /// (node, parameter index) for leaves bound to trainable parameters.
    bindings: Vec<(Var, usize)>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Binds every parameter of `params` as a leaf and returns one var per
    /// parameter, aligned with the parameter indices.
    pub fn bind(&mut self, params: &ParamSet) -> Vec<Var> {
        params
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let v = self.push(p.value.clone(), Op::Leaf, p.trainable);
                if p.trainable {
                    self.bindings.push((v, i));
                }
                v
            })
            .collect()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let ng = self.ng(a);
        self.push(value, Op::Transpose(a), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    /// Adds a per-column row vector to every row of `a` (bias addition).
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a).add_row(self.value(row));
        let ng = self.ng(a) || self.ng(row);
        self.push(value, Op::AddRow(a, row), ng)
    }

    /// Multiplies every row of `a` elementwise by a per-column row vector.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let av = self.value(a);
        let rv = self.value(row);
        let c = av.cols();
        assert_eq!(rv.len(), c, "mul_row needs {c} values, got {}", rv.len());
        let mut data = av.data().to_vec();
        for chunk in data.chunks_mut(c) {
            for (x, r) in chunk.iter_mut().zip(rv.data()) {
                *x *= r;
            }
        }
        let value = Tensor::raw(av.rows(), c, data);
        let ng = self.ng(a) || self.ng(row);
        self.push(value, Op::MulRow(a, row), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        let ng = self.ng(a);
        self.push(value, Op::Scale(a, c), ng)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        let ng = self.ng(a);
        self.push(value, Op::AddScalar(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let ng = self.ng(a);
        self.push(value, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(value, Op::Relu(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let ng = self.ng(a);
        self.push(value, Op::Exp(a), ng)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        let ng = self.ng(a);
        self.push(value, Op::Log(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        let ng = self.ng(a);
        self.push(value, Op::Square(a), ng)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        let ng = self.ng(a);
        self.push(value, Op::Clamp(a, lo, hi), ng)
    }

    /// Sum of all elements as a `1 x 1` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(value, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Per-row sums as a `rows x 1` column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data: Vec<f64> = (0..av.rows()).map(|r| av.row(r).iter().sum()).collect();
        let value = Tensor::raw(av.rows(), 1, data);
        let ng = self.ng(a);
        self.push(value, Op::RowSum(a), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice_cols(start, end);
        let ng = self.ng(a);
        self.push(value, Op::SliceCols(a, start), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_cols(&vals);
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Selects rows by index; repeated indices are allowed.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let value = self.value(a).gather_rows(idx);
        let ng = self.ng(a);
        self.push(value, Op::GatherRows(a, idx.to_vec()), ng)
    }

    /// Row-wise `log Σ_j mask_ij · exp(a_ij)` as a `rows x 1` column,
    /// computed with the max-shift for stability. `mask` holds 0/1 weights;
    /// every row must have at least one non-zero entry.
    pub fn masked_log_sum_exp(&mut self, a: Var, mask: Tensor) -> Var {
        let av = self.value(a);
        assert!(av.same_shape(&mask), "mask shape mismatch");
        let mut data = Vec::with_capacity(av.rows());
        for r in 0..av.rows() {
            let row = av.row(r);
            let m = mask.row(r);
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &w)| w != 0.0)
                .map(|(&x, _)| x)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(max.is_finite(), "masked_log_sum_exp: row {r} has an empty mask");
            let s: f64 = row.iter().zip(m).filter(|(_, &w)| w != 0.0).map(|(&x, &w)| w * (x - max).exp()).sum();
            data.push(max + s.ln());
        }
        let value = Tensor::raw(av.rows(), 1, data);
        let ng = self.ng(a);
        self.push(value, Op::MaskedLogSumExp(a, mask), ng)
    }

    /// Squared euclidean distance between matching rows, as a `rows x 1` column.
    pub fn row_sq_dist(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let sq = self.square(d);
        self.row_sum(sq)
    }

    /// Reverse pass from a scalar node. Returns gradients for every bound
    /// trainable parameter that the loss depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NnError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(NnError::NonScalarLoss(lv.shape().to_vec()));
        }
        if !lv.is_finite() {
            return Err(NnError::NonFinite("loss".into()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let out = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        let ga = g.matmul(&self.value(*b).transpose());
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.ng(*b) {
                        let gb = self.value(*a).transpose().matmul(&g);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::Add(a, b) => {
                    if self.ng(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.ng(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.ng(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.ng(*b) {
                        accumulate(&mut grads, *b, g.map(|x| -x));
                    }
                }
                Op::Mul(a, b) => {
                    if self.ng(*a) {
                        accumulate(&mut grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                    }
                    if self.ng(*b) {
                        accumulate(&mut grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                    }
                }
                Op::AddRow(a, r) => {
                    if self.ng(*r) {
                        let gr = column_sums(&g, self.value(*r));
                        accumulate(&mut grads, *r, gr);
                    }
                    if self.ng(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::MulRow(a, r) => {
                    let rv = self.value(*r);
                    if self.ng(*r) {
                        let prod = g.zip_map(self.value(*a), |x, y| x * y);
                        accumulate(&mut grads, *r, column_sums(&prod, rv));
                    }
                    if self.ng(*a) {
                        let c = g.cols();
                        let mut data = g.data().to_vec();
                        for chunk in data.chunks_mut(c) {
                            for (x, s) in chunk.iter_mut().zip(rv.data()) {
                                *x *= s;
                            }
                        }
                        accumulate(&mut grads, *a, Tensor::raw(g.rows(), c, data));
                    }
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    accumulate(&mut grads, *a, g.map(|x| x * c));
                }
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::Tanh(a) => accumulate(&mut grads, *a, g.zip_map(out, |x, y| x * (1.0 - y * y))),
                Op::Sigmoid(a) => {
                    accumulate(&mut grads, *a, g.zip_map(out, |x, y| x * y * (1.0 - y)))
                }
                Op::Relu(a) => {
                    let ga = g.zip_map(self.value(*a), |x, z| if z > 0.0 { x } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Exp(a) => accumulate(&mut grads, *a, g.zip_map(out, |x, y| x * y)),
                Op::Log(a) => accumulate(&mut grads, *a, g.zip_map(self.value(*a), |x, z| x / z)),
                Op::Square(a) => {
                    accumulate(&mut grads, *a, g.zip_map(self.value(*a), |x, z| 2.0 * x * z))
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let ga = g.zip_map(self.value(*a), |x, z| if z >= lo && z <= hi { x } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let s = g.item();
                    accumulate(&mut grads, *a, Tensor::filled(self.value(*a).shape(), s));
                }
                Op::RowSum(a) => {
                    let av = self.value(*a);
                    let c = av.cols();
                    let mut data = Vec::with_capacity(av.len());
                    for r in 0..av.rows() {
                        data.extend(std::iter::repeat_n(g.data()[r], c));
                    }
                    accumulate(&mut grads, *a, Tensor::raw(av.rows(), c, data));
                }
                Op::SliceCols(a, start) => {
                    let av = self.value(*a);
                    let (rows, cols, w) = (av.rows(), av.cols(), g.cols());
                    let mut data = vec![0.0; rows * cols];
                    for r in 0..rows {
                        data[r * cols + start..r * cols + start + w].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, Tensor::raw(rows, cols, data));
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        if self.ng(*p) {
                            accumulate(&mut grads, *p, g.slice_cols(offset, offset + w));
                        }
                        offset += w;
                    }
                }
                Op::GatherRows(a, idx) => {
                    let av = self.value(*a);
                    let c = av.cols();
                    let mut data = vec![0.0; av.len()];
                    for (k, &r) in idx.iter().enumerate() {
                        for (d, s) in data[r * c..(r + 1) * c].iter_mut().zip(g.row(k)) {
                            *d += s;
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::raw(av.rows(), c, data));
                }
                Op::MaskedLogSumExp(a, mask) => {
                    let av = self.value(*a);
                    let c = av.cols();
                    let mut data = vec![0.0; av.len()];
                    for r in 0..av.rows() {
                        let lse = out.data()[r];
                        let gr = g.data()[r];
                        for j in 0..c {
                            let w = mask.get(r, j);
                            if w != 0.0 {
                                data[r * c + j] = gr * w * (av.get(r, j) - lse).exp();
                            }
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::raw(av.rows(), c, data));
                }
            }
        }

        let mut out = Gradients::default();
        for &(v, p) in &self.bindings {
            if let Some(g) = grads.get_mut(v.0).and_then(Option::take) {
                let shaped = Tensor::new(self.value(v).shape().to_vec(), g.into_data())
                    .map_err(|_| NnError::NonFinite(format!("gradient of parameter {p}")))?;
                match out.grads.get_mut(&p) {
                    Some(existing) => existing.add_assign(&shaped),
                    None => {
                        out.grads.insert(p, shaped);
                    }
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn column_sums(g: &Tensor, like: &Tensor) -> Tensor {
    let c = g.cols();
    let mut sums = vec![0.0; c];
    for r in 0..g.rows() {
        for (s, x) in sums.iter_mut().zip(g.row(r)) {
            *s += x;
        }
    }
    Tensor::new(like.shape().to_vec(), sums).unwrap_or_else(|_| Tensor::raw(1, c, vec![f64::NAN; c]))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
