//! Reverse-mode differentiation over a recorded tape.
//!
//! A [`Tape`] records every forward op together with its output value.
//! [`Tape::backward`] walks the record in reverse and accumulates
//! `d loss / d param` into the gradient slots of a [`ParamStore`]. A tape can
//! be differentiated once; build a new tape for the next step.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Error, Result};
use crate::math;
use crate::params::{ParamId, ParamStore};
use crate::tensor::{matmul_a_bt_into, matmul_at_b_into, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Affine(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LogSoftmaxOffDiag(Var),
    LayerNorm(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    MeanRows(Var),
    Sum(Var),
    RowNorm(Var),
    L2Normalize(Var),
    PickSum(Var, Vec<usize>, Vec<f64>),
    Log(Var, f64),
    ReplaceRows(Var, Var, Vec<bool>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    // Per-row statistics some ops keep for their backward pass.
    aux: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, Var>,
    differentiated: bool,
}

const NORM_EPS: f64 = 1e-12;

impl Tape {
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.push_aux(value, op, Vec::new())
    }

    fn push_aux(&mut self, value: Tensor, op: Op, aux: Vec<f64>) -> Var {
        self.nodes.push(Node { value, op, aux });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims()
    }

    /// Records a constant; no gradient flows into it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    pub fn constant(&mut self, x: f64) -> Var {
        self.input(Tensor::scalar(x))
    }

    /// Records a parameter. Repeated requests for the same parameter share a node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if !self.value(a).same_shape(self.value(b)) {
            return shape_err(op, format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    fn row_broadcast(&self, op: &'static str, a: Var, row: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (m, n) = self.dims(a);
        if self.dims(row) != (1, n) {
            return shape_err(op, format!("[{m}, {n}] with row {:?}", self.value(row).shape()));
        }
        let r = self.value(row).data();
        let x = self.value(a).data();
        let data = (0..m * n).map(|i| f(x[i], r[i % n])).collect();
        Tensor::matrix(m, n, data)
    }

    /// `a[m x n] + row[1 x n]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let value = self.row_broadcast("add_row", a, row, |x, y| x + y)?;
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    /// `a[m x n] * row[1 x n]` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let value = self.row_broadcast("mul_row", a, row, |x, y| x * y)?;
        Ok(self.push(value, Op::MulRow(a, row)))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(a).map(|x| scale * x + shift);
        self.push(value, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(value, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(math::sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        self.push(value, Op::Softmax(a))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (m, n) = x.dims();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = x.row_slice(i);
            let lse = log_sum_exp(row.iter().copied());
            out.extend(row.iter().map(|&v| v - lse));
        }
        let value = Tensor::matrix(m, n, out).expect("same dims");
        self.push(value, Op::LogSoftmax(a))
    }

    /// Row-wise log-softmax of a square matrix that ignores the diagonal.
    /// Diagonal outputs are zero and receive no gradient.
    pub fn log_softmax_off_diag(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let (m, n) = x.dims();
        if m != n {
            return shape_err("log_softmax_off_diag", format!("expected square, got [{m}, {n}]"));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = x.row_slice(i);
            let lse = log_sum_exp(row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v));
            for j in 0..n {
                if j != i {
                    out[i * n + j] = row[j] - lse;
                }
            }
        }
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.push(value, Op::LogSoftmaxOffDiag(a)))
    }

    /// Row-wise `(x - mean) / sqrt(var + eps)` without the affine part.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let (m, n) = x.dims();
        let mut out = Vec::with_capacity(m * n);
        let mut inv_std = Vec::with_capacity(m);
        for i in 0..m {
            let row = x.row_slice(i);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / math::sqrt(var + eps);
            out.extend(row.iter().map(|v| (v - mean) * inv));
            inv_std.push(inv);
        }
        let value = Tensor::matrix(m, n, out).expect("same dims");
        self.push_aux(value, Op::LayerNorm(a), inv_std)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat_cols", "no inputs".into());
        };
        let m = self.dims(first).0;
        if let Some(bad) = parts.iter().find(|&&p| self.dims(p).0 != m) {
            return shape_err("concat_cols", format!("row count {} vs {m}", self.dims(*bad).0));
        }
        let n: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat_rows", "no inputs".into());
        };
        let n = self.dims(first).1;
        if let Some(bad) = parts.iter().find(|&&p| self.dims(p).1 != n) {
            return shape_err("concat_rows", format!("column count {} vs {n}", self.dims(*bad).1));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p).data());
        }
        let m = out.len() / n.max(1);
        let value = Tensor::matrix(m, n, out)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if start > end || end > n {
            return shape_err("slice_cols", format!("{start}..{end} of {n} columns"));
        }
        let x = self.value(a);
        let mut out = Vec::with_capacity(m * (end - start));
        for i in 0..m {
            out.extend_from_slice(&x.row_slice(i)[start..end]);
        }
        let value = Tensor::matrix(m, end - start, out)?;
        Ok(self.push(value, Op::SliceCols(a, start)))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if start > end || end > m {
            return shape_err("slice_rows", format!("{start}..{end} of {m} rows"));
        }
        let value = Tensor::matrix(end - start, n, self.value(a).data()[start * n..end * n].to_vec())?;
        Ok(self.push(value, Op::SliceRows(a, start)))
    }

    /// Row lookup; this is also the embedding-table lookup.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let (m, n) = self.dims(a);
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return shape_err("gather_rows", format!("row {bad} out of {m}"));
        }
        let x = self.value(a);
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            out.extend_from_slice(x.row_slice(r));
        }
        let value = Tensor::matrix(rows.len(), n, out)?;
        Ok(self.push(value, Op::GatherRows(a, rows.to_vec())))
    }

    /// Column means as a `1 x n` row.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if m == 0 {
            return shape_err("mean_rows", "no rows".into());
        }
        let x = self.value(a);
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, v) in out.iter_mut().zip(x.row_slice(i)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        Ok(self.push(Tensor::row(out), Op::MeanRows(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Euclidean norm of each row as an `m x 1` column.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let m = x.rows();
        let out = (0..m).map(|i| math::sqrt(x.row_slice(i).iter().map(|v| v * v).sum())).collect();
        let value = Tensor::matrix(m, 1, out).expect("column");
        self.push(value, Op::RowNorm(a))
    }

    /// Scales every row to unit Euclidean norm.
    pub fn l2_normalize(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (m, n) = x.dims();
        let mut out = Vec::with_capacity(m * n);
        let mut norms = Vec::with_capacity(m);
        for i in 0..m {
            let row = x.row_slice(i);
            let norm = math::sqrt(row.iter().map(|v| v * v).sum()).max(NORM_EPS);
            out.extend(row.iter().map(|v| v / norm));
            norms.push(norm);
        }
        let value = Tensor::matrix(m, n, out).expect("same dims");
        self.push_aux(value, Op::L2Normalize(a), norms)
    }

    /// `sum_i weights[i] * a[i, cols[i]]` as a scalar.
    pub fn pick_sum(&mut self, a: Var, cols: &[usize], weights: &[f64]) -> Result<Var> {
        let (m, n) = self.dims(a);
        if cols.len() != m || weights.len() != m {
            return shape_err("pick_sum", format!("{m} rows, {} indices, {} weights", cols.len(), weights.len()));
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= n) {
            return shape_err("pick_sum", format!("column {bad} out of {n}"));
        }
        let x = self.value(a);
        let s = cols.iter().zip(weights).enumerate().map(|(i, (&c, &w))| w * x.get(i, c)).sum();
        Ok(self.push(Tensor::scalar(s), Op::PickSum(a, cols.to_vec(), weights.to_vec())))
    }

    /// `ln(max(a, floor))`; clamped entries receive no gradient.
    pub fn log_clamped(&mut self, a: Var, floor: f64) -> Var {
        let value = self.value(a).map(|x| math::ln(x.max(floor)));
        self.push(value, Op::Log(a, floor))
    }

    /// Rows of `a` where `mask` is set are replaced by the broadcast `row`.
    pub fn replace_rows(&mut self, a: Var, row: Var, mask: &[bool]) -> Result<Var> {
        let (m, n) = self.dims(a);
        if mask.len() != m || self.dims(row) != (1, n) {
            return shape_err("replace_rows", format!("[{m}, {n}] with {} mask entries", mask.len()));
        }
        let r = self.value(row).data().to_vec();
        let mut value = self.value(a).clone();
        for (i, _) in mask.iter().enumerate().filter(|(_, &b)| b) {
            value.data_mut()[i * n..(i + 1) * n].copy_from_slice(&r);
        }
        Ok(self.push(value, Op::ReplaceRows(a, row, mask.to_vec())))
    }

    /// Back-propagates from the scalar `loss`, adding into `store`'s gradients.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.differentiated {
            return Err(Error::BackwardTwice);
        }
        if self.dims(loss) != (1, 1) {
            return shape_err("backward", format!("loss must be scalar, got {:?}", self.value(loss).shape()));
        }
        self.differentiated = true;
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    let slot = store.grad_mut(*id);
                    if !slot.same_shape(&g) {
                        return shape_err("backward", format!("param {} gradient shape", id.index()));
                    }
                    slot.add_assign(&g);
                }
                op => self.propagate(op, node, &g, &mut grads),
            }
        }
        Ok(())
    }

    fn propagate(&self, op: &Op, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        let (m, n) = y.dims();
        match op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let k = av.cols();
                let mut da = vec![0.0; m * k];
                matmul_a_bt_into(g.data(), bv.data(), &mut da, m, n, k);
                accumulate(grads, *a, Tensor::matrix(m, k, da).expect("dims"));
                let mut db = vec![0.0; k * n];
                matmul_at_b_into(av.data(), g.data(), &mut db, k, m, n);
                accumulate(grads, *b, Tensor::matrix(k, n, db).expect("dims"));
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, zip(g, bv, |x, y| x * y));
                accumulate(grads, *b, zip(g, av, |x, y| x * y));
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *row, Tensor::row(column_sums(g)));
            }
            Op::MulRow(a, row) => {
                let (av, rv) = (self.value(*a), self.value(*row).data());
                let da: Vec<f64> = g.data().iter().enumerate().map(|(i, &x)| x * rv[i % n]).collect();
                accumulate(grads, *a, Tensor::matrix(m, n, da).expect("dims"));
                let mut dr = vec![0.0; n];
                for (i, (&x, &v)) in g.data().iter().zip(av.data()).enumerate() {
                    dr[i % n] += x * v;
                }
                accumulate(grads, *row, Tensor::row(dr));
            }
            Op::Affine(a, s) => accumulate(grads, *a, g.map(|x| s * x)),
            Op::Relu(a) => accumulate(grads, *a, zip(g, y, |d, v| if v > 0.0 { d } else { 0.0 })),
            Op::Sigmoid(a) => accumulate(grads, *a, zip(g, y, |d, s| d * s * (1.0 - s))),
            Op::Softmax(a) => {
                let mut dx = Vec::with_capacity(m * n);
                for i in 0..m {
                    let (yr, gr) = (y.row_slice(i), g.row_slice(i));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    dx.extend(yr.iter().zip(gr).map(|(p, q)| p * (q - dot)));
                }
                accumulate(grads, *a, Tensor::matrix(m, n, dx).expect("dims"));
            }
            Op::LogSoftmax(a) => {
                let mut dx = Vec::with_capacity(m * n);
                for i in 0..m {
                    let (yr, gr) = (y.row_slice(i), g.row_slice(i));
                    let gs: f64 = gr.iter().sum();
                    dx.extend(yr.iter().zip(gr).map(|(l, q)| q - math::exp(*l) * gs));
                }
                accumulate(grads, *a, Tensor::matrix(m, n, dx).expect("dims"));
            }
            Op::LogSoftmaxOffDiag(a) => {
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    let (yr, gr) = (y.row_slice(i), g.row_slice(i));
                    let gs: f64 = gr.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, q)| q).sum();
                    for j in (0..n).filter(|&j| j != i) {
                        dx[i * n + j] = gr[j] - math::exp(yr[j]) * gs;
                    }
                }
                accumulate(grads, *a, Tensor::matrix(m, n, dx).expect("dims"));
            }
            Op::LayerNorm(a) => {
                let mut dx = Vec::with_capacity(m * n);
                for i in 0..m {
                    let (yr, gr) = (y.row_slice(i), g.row_slice(i));
                    let mean_g = gr.iter().sum::<f64>() / n as f64;
                    let mean_gy = yr.iter().zip(gr).map(|(p, q)| p * q).sum::<f64>() / n as f64;
                    let inv = node.aux[i];
                    dx.extend(yr.iter().zip(gr).map(|(p, q)| inv * (q - mean_g - p * mean_gy)));
                }
                accumulate(grads, *a, Tensor::matrix(m, n, dx).expect("dims"));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.dims(p).1;
                    let mut d = Vec::with_capacity(m * w);
                    for i in 0..m {
                        d.extend_from_slice(&g.row_slice(i)[offset..offset + w]);
                    }
                    accumulate(grads, p, Tensor::matrix(m, w, d).expect("dims"));
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let r = self.dims(p).0;
                    let d = g.data()[offset * n..(offset + r) * n].to_vec();
                    accumulate(grads, p, Tensor::matrix(r, n, d).expect("dims"));
                    offset += r;
                }
            }
            Op::SliceCols(a, start) => {
                let full = self.dims(*a).1;
                let mut d = vec![0.0; m * full];
                for i in 0..m {
                    d[i * full + start..i * full + start + n].copy_from_slice(g.row_slice(i));
                }
                accumulate(grads, *a, Tensor::matrix(m, full, d).expect("dims"));
            }
            Op::SliceRows(a, start) => {
                let rows = self.dims(*a).0;
                let mut d = vec![0.0; rows * n];
                d[start * n..(start + m) * n].copy_from_slice(g.data());
                accumulate(grads, *a, Tensor::matrix(rows, n, d).expect("dims"));
            }
            Op::GatherRows(a, rows) => {
                let src = self.dims(*a).0;
                let mut d = vec![0.0; src * n];
                for (i, &r) in rows.iter().enumerate() {
                    for (o, q) in d[r * n..(r + 1) * n].iter_mut().zip(g.row_slice(i)) {
                        *o += q;
                    }
                }
                accumulate(grads, *a, Tensor::matrix(src, n, d).expect("dims"));
            }
            Op::MeanRows(a) => {
                let rows = self.dims(*a).0;
                let scale = 1.0 / rows as f64;
                let row: Vec<f64> = g.data().iter().map(|x| x * scale).collect();
                let mut d = Vec::with_capacity(rows * n);
                for _ in 0..rows {
                    d.extend_from_slice(&row);
                }
                accumulate(grads, *a, Tensor::matrix(rows, n, d).expect("dims"));
            }
            Op::Sum(a) => {
                let x = self.value(*a);
                accumulate(grads, *a, Tensor::new(x.shape().to_vec(), vec![g.item(); x.len()]).expect("dims"));
            }
            Op::RowNorm(a) => {
                let x = self.value(*a);
                let cols = x.cols();
                let mut d = Vec::with_capacity(m * cols);
                for i in 0..m {
                    let norm = y.get(i, 0);
                    let s = if norm > 0.0 { g.get(i, 0) / norm } else { 0.0 };
                    d.extend(x.row_slice(i).iter().map(|v| v * s));
                }
                accumulate(grads, *a, Tensor::matrix(m, cols, d).expect("dims"));
            }
            Op::L2Normalize(a) => {
                let mut d = Vec::with_capacity(m * n);
                for i in 0..m {
                    let (yr, gr) = (y.row_slice(i), g.row_slice(i));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    let inv = 1.0 / node.aux[i];
                    d.extend(yr.iter().zip(gr).map(|(p, q)| inv * (q - p * dot)));
                }
                accumulate(grads, *a, Tensor::matrix(m, n, d).expect("dims"));
            }
            Op::PickSum(a, cols, weights) => {
                let (rows, width) = self.dims(*a);
                let mut d = vec![0.0; rows * width];
                for (i, (&c, &w)) in cols.iter().zip(weights).enumerate() {
                    d[i * width + c] += w * g.item();
                }
                accumulate(grads, *a, Tensor::matrix(rows, width, d).expect("dims"));
            }
            Op::Log(a, floor) => {
                let x = self.value(*a);
                accumulate(grads, *a, zip(g, x, |d, v| if v > *floor { d / v } else { 0.0 }));
            }
            Op::ReplaceRows(a, row, mask) => {
                let mut da = g.clone();
                let mut dr = vec![0.0; n];
                for (i, _) in mask.iter().enumerate().filter(|(_, &b)| b) {
                    for (o, q) in dr.iter_mut().zip(g.row_slice(i)) {
                        *o += q;
                    }
                    da.data_mut()[i * n..(i + 1) * n].fill(0.0);
                }
                accumulate(grads, *a, da);
                accumulate(grads, *row, Tensor::row(dr));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn column_sums(g: &Tensor) -> Vec<f64> {
    let (m, n) = g.dims();
    let mut out = vec![0.0; n];
    for i in 0..m {
        for (o, v) in out.iter_mut().zip(g.row_slice(i)) {
            *o += v;
        }
    }
    out
}

pub(crate) fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + math::ln(xs.map(|x| math::exp(x - max)).sum::<f64>())
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Tensor) -> Tensor {
    let (m, n) = x.dims();
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let row = x.row_slice(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        out.extend(row.iter().map(|&v| math::exp(v - max)));
        let total: f64 = out[start..].iter().sum();
        out[start..].iter_mut().for_each(|v| *v /= total);
    }
    Tensor::matrix(m, n, out).expect("same dims")
}
