//! Dense row-major matrices and a small reverse-mode differentiation tape.
//!
//! Every value is an `f64` matrix; vectors are `1 × n` rows. A [`Tape`] is
//! built per forward pass and consumed by [`Tape::backward`]. Nodes whose
//! inputs carry no gradient are skipped during the backward sweep, so frozen
//! parameters cost nothing beyond their forward use.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<MatrixRepr> for Matrix {
    type Error = String;

    fn try_from(m: MatrixRepr) -> Result<Self, String> {
        if m.rows * m.cols != m.data.len() {
            return Err(format!(
                "matrix {}x{} has {} values",
                m.rows,
                m.cols,
                m.data.len()
            ));
        }
        Ok(Matrix {
            rows: m.rows,
            cols: m.cols,
            data: m.data,
        })
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Matrix { rows, cols, data }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Matrix::from_vec(1, data.len(), data)
    }

    pub fn scalar(v: f64) -> Self {
        Matrix::from_vec(1, 1, vec![v])
    }

    pub fn normal<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        let dist = Normal::new(0.0, std).expect("finite std");
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)).collect())
    }

    pub fn uniform<R: Rng>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::from_vec(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "shape mismatch");
        Matrix::from_vec(
            self.rows,
            self.cols,
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    /// `self · other`
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_t shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                let b = other.row(j);
                out.data[i * other.rows + j] = a.iter().zip(b).map(|(x, y)| x * y).sum();
            }
        }
        out
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "t_matmul shape mismatch");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    ReplaceRows(Var, Vec<(usize, Var)>),
    Pick(Var, Vec<(usize, usize)>),
    LayerNormRows(Var, Var, Var),
}

struct Node {
    value: Arc<Matrix>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`]; `None` where no gradient reached the node.
pub struct Grads {
    grads: Vec<Option<Matrix>>,
}

impl Grads {
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.grads[var.0].as_ref()
    }

    pub fn take(&mut self, var: Var) -> Option<Matrix> {
        self.grads[var.0].take()
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

const LAYER_NORM_EPS: f64 = 1e-5;

/// Normalized row and `1 / sqrt(var + eps)`.
fn normalize_row(row: &[f64]) -> (Vec<f64>, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    (row.iter().map(|x| (x - mean) * inv_std).collect(), inv_std)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.push_arc(Arc::new(value), op, needs_grad)
    }

    fn push_arc(&mut self, value: Arc<Matrix>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable input: gradients are collected for it.
    pub fn param(&mut self, value: Arc<Matrix>) -> Var {
        self.push_arc(value, Op::Leaf, true)
    }

    /// Fixed input: no gradient flows into it.
    pub fn constant(&mut self, value: Arc<Matrix>) -> Var {
        self.push_arc(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMulT(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    /// Adds the `1 × n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(bv.rows, 1, "add_row expects a row vector");
        assert_eq!(av.cols, bv.cols, "add_row width mismatch");
        let mut v = av.clone();
        for r in 0..v.rows {
            for (x, y) in v.row_mut(r).iter_mut().zip(&bv.data) {
                *x += y;
            }
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::AddRow(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, c), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        let ng = self.ng(a);
        self.push(v, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        let ng = self.ng(a);
        self.push(v, Op::Sigmoid(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(v, Op::Relu(a), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut v = Matrix::zeros(av.rows, av.cols);
        for r in 0..av.rows {
            softmax_row(av.row(r), v.row_mut(r));
        }
        let ng = self.ng(a);
        self.push(v, Op::SoftmaxRows(a), ng)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut v = av.clone();
        for r in 0..v.rows {
            let row = v.row_mut(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        let ng = self.ng(a);
        self.push(v, Op::LogSoftmaxRows(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut v = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for p in parts {
                let pv = self.value(*p);
                assert_eq!(pv.rows, rows, "concat_cols row mismatch");
                v.data[r * cols + offset..r * cols + offset + pv.cols].copy_from_slice(pv.row(r));
                offset += pv.cols;
            }
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(v, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let pv = self.value(*p);
            assert_eq!(pv.cols, cols, "concat_rows column mismatch");
            data.extend_from_slice(&pv.data);
            rows += pv.rows;
        }
        let ng = parts.iter().any(|p| self.ng(*p));
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Columns `start..start + width` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let av = self.value(a);
        let mut v = Matrix::zeros(av.rows, width);
        for r in 0..av.rows {
            v.row_mut(r).copy_from_slice(&av.row(r)[start..start + width]);
        }
        let ng = self.ng(a);
        self.push(v, Op::SliceCols(a, start), ng)
    }

    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Var {
        let tv = self.value(table);
        let mut data = Vec::with_capacity(indices.len() * tv.cols);
        for &i in indices {
            data.extend_from_slice(tv.row(i));
        }
        let v = Matrix::from_vec(indices.len(), tv.cols, data);
        let ng = self.ng(table);
        self.push(v, Op::GatherRows(table, indices.to_vec()), ng)
    }

    /// Copy of `base` with the listed rows replaced by `1 × cols` vectors.
    pub fn replace_rows(&mut self, base: Var, replacements: &[(usize, Var)]) -> Var {
        let mut v = self.value(base).clone();
        for (r, var) in replacements {
            let rv = self.value(*var);
            assert_eq!(rv.shape(), (1, v.cols), "replacement row shape mismatch");
            v.row_mut(*r).copy_from_slice(&rv.data);
        }
        let ng = self.ng(base) || replacements.iter().any(|(_, var)| self.ng(*var));
        self.push(v, Op::ReplaceRows(base, replacements.to_vec()), ng)
    }

    /// `1 × k` row of the selected `(row, col)` entries.
    pub fn pick(&mut self, a: Var, entries: &[(usize, usize)]) -> Var {
        let av = self.value(a);
        let v = Matrix::row_vector(entries.iter().map(|&(r, c)| av.get(r, c)).collect());
        let ng = self.ng(a);
        self.push(v, Op::Pick(a, entries.to_vec()), ng)
    }

    /// Reverse sweep from `output`, seeded with `seed` (same shape as the output).
    /// Normalizes each row to zero mean and unit variance, then scales by the
    /// `1 × n` row `gain` and shifts by the `1 × n` row `bias`.
    pub fn layer_norm_rows(&mut self, a: Var, gain: Var, bias: Var) -> Var {
        let (av, gv, bv) = (self.value(a), self.value(gain), self.value(bias));
        assert_eq!(gv.shape(), (1, av.cols), "layer_norm_rows gain shape");
        assert_eq!(bv.shape(), (1, av.cols), "layer_norm_rows bias shape");
        let mut v = Matrix::zeros(av.rows, av.cols);
        for r in 0..av.rows {
            let (xhat, _) = normalize_row(av.row(r));
            for (c, o) in v.row_mut(r).iter_mut().enumerate() {
                *o = xhat[c] * gv.data[c] + bv.data[c];
            }
        }
        let ng = self.ng(a) || self.ng(gain) || self.ng(bias);
        self.push(v, Op::LayerNormRows(a, gain, bias), ng)
    }

    pub fn backward(&self, output: Var, seed: Matrix) -> Grads {
        assert_eq!(self.value(output).shape(), seed.shape(), "seed shape mismatch");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads { grads }
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let val = |v: Var| -> &Matrix { &self.nodes[v.0].value };
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    accumulate(&mut grads[a.0], g.matmul_t(val(*b)));
                }
                if self.ng(*b) {
                    accumulate(&mut grads[b.0], val(*a).t_matmul(g));
                }
            }
            Op::MatMulT(a, b) => {
                // out = a bᵀ: da = g b, db = gᵀ a
                if self.ng(*a) {
                    accumulate(&mut grads[a.0], g.matmul(val(*b)));
                }
                if self.ng(*b) {
                    accumulate(&mut grads[b.0], g.t_matmul(val(*a)));
                }
            }
            Op::Add(a, b) => {
                if self.ng(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.ng(*b) {
                    accumulate(&mut grads[b.0], g.clone());
                }
            }
            Op::AddRow(a, b) => {
                if self.ng(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.ng(*b) {
                    let mut gb = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (x, y) in gb.data.iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                    accumulate(&mut grads[b.0], gb);
                }
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    accumulate(&mut grads[a.0], g.zip_map(val(*b), |x, y| x * y));
                }
                if self.ng(*b) {
                    accumulate(&mut grads[b.0], g.zip_map(val(*a), |x, y| x * y));
                }
            }
            Op::Scale(a, c) => accumulate(&mut grads[a.0], g.map(|x| x * c)),
            Op::Tanh(a) => accumulate(&mut grads[a.0], g.zip_map(out, |x, y| x * (1.0 - y * y))),
            Op::Sigmoid(a) => accumulate(&mut grads[a.0], g.zip_map(out, |x, y| x * y * (1.0 - y))),
            Op::Relu(a) => {
                accumulate(&mut grads[a.0], g.zip_map(val(*a), |x, y| if y > 0.0 { x } else { 0.0 }))
            }
            Op::SoftmaxRows(a) => {
                let mut ga = Matrix::zeros(g.rows, g.cols);
                for r in 0..g.rows {
                    let (gr, yr) = (g.row(r), out.row(r));
                    let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                    for (o, (x, y)) in ga.row_mut(r).iter_mut().zip(gr.iter().zip(yr)) {
                        *o = y * (x - dot);
                    }
                }
                accumulate(&mut grads[a.0], ga);
            }
            Op::LogSoftmaxRows(a) => {
                let mut ga = Matrix::zeros(g.rows, g.cols);
                for r in 0..g.rows {
                    let (gr, yr) = (g.row(r), out.row(r));
                    let total: f64 = gr.iter().sum();
                    for (o, (x, y)) in ga.row_mut(r).iter_mut().zip(gr.iter().zip(yr)) {
                        *o = x - y.exp() * total;
                    }
                }
                accumulate(&mut grads[a.0], ga);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let width = val(*p).cols;
                    if self.ng(*p) {
                        let mut gp = Matrix::zeros(g.rows, width);
                        for r in 0..g.rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + width]);
                        }
                        accumulate(&mut grads[p.0], gp);
                    }
                    offset += width;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let rows = val(*p).rows;
                    if self.ng(*p) {
                        let data = g.data[offset * g.cols..(offset + rows) * g.cols].to_vec();
                        accumulate(&mut grads[p.0], Matrix::from_vec(rows, g.cols, data));
                    }
                    offset += rows;
                }
            }
            Op::SliceCols(a, start) => {
                let av = val(*a);
                let mut ga = Matrix::zeros(av.rows, av.cols);
                for r in 0..g.rows {
                    ga.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                }
                accumulate(&mut grads[a.0], ga);
            }
            Op::GatherRows(table, indices) => {
                let tv = val(*table);
                let mut gt = Matrix::zeros(tv.rows, tv.cols);
                for (k, &i) in indices.iter().enumerate() {
                    for (x, y) in gt.row_mut(i).iter_mut().zip(g.row(k)) {
                        *x += y;
                    }
                }
                accumulate(&mut grads[table.0], gt);
            }
            Op::ReplaceRows(base, replacements) => {
                if self.ng(*base) {
                    let mut gb = g.clone();
                    for (r, _) in replacements {
                        gb.row_mut(*r).iter_mut().for_each(|x| *x = 0.0);
                    }
                    accumulate(&mut grads[base.0], gb);
                }
                for (r, var) in replacements {
                    if self.ng(*var) {
                        accumulate(&mut grads[var.0], Matrix::row_vector(g.row(*r).to_vec()));
                    }
                }
            }
            Op::LayerNormRows(a, gain, bias) => {
                let (av, gv) = (val(*a), val(*gain));
                let n = av.cols as f64;
                let mut ga = Matrix::zeros(av.rows, av.cols);
                let mut gg = Matrix::zeros(1, av.cols);
                let mut gbias = Matrix::zeros(1, av.cols);
                for r in 0..av.rows {
                    let (xhat, inv_std) = normalize_row(av.row(r));
                    let gr = g.row(r);
                    let dxhat: Vec<f64> = gr.iter().zip(&gv.data).map(|(x, y)| x * y).collect();
                    let mean_d = dxhat.iter().sum::<f64>() / n;
                    let mean_dx = dxhat.iter().zip(&xhat).map(|(x, y)| x * y).sum::<f64>() / n;
                    for (c, o) in ga.row_mut(r).iter_mut().enumerate() {
                        *o = inv_std * (dxhat[c] - mean_d - xhat[c] * mean_dx);
                        gg.data[c] += gr[c] * xhat[c];
                        gbias.data[c] += gr[c];
                    }
                }
                if self.ng(*a) {
                    accumulate(&mut grads[a.0], ga);
                }
                if self.ng(*gain) {
                    accumulate(&mut grads[gain.0], gg);
                }
                if self.ng(*bias) {
                    accumulate(&mut grads[bias.0], gbias);
                }
            }
            Op::Pick(a, entries) => {
                let av = val(*a);
                let mut ga = Matrix::zeros(av.rows, av.cols);
                for (k, &(r, c)) in entries.iter().enumerate() {
                    ga.data[r * av.cols + c] += g.data[k];
                }
                accumulate(&mut grads[a.0], ga);
            }
        }
    }
}
