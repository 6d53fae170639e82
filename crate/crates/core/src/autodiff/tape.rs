use alloc::borrow::Cow;
use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::Rng;

use super::tensor::{ParamStore, Scalar, ShapeError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Mul(Var, Var),
    Softmax(Var),
    MaskedFill(Var, Vec<bool>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Gelu(Var),
    GatherRows(Var, Vec<usize>),
    NarrowRows(Var, usize),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    ReduceRows(Var, Reduce, Vec<usize>),
    SumAll(Var),
    RowDot(Var, Var),
    RowWeightedSum(Var, Var),
    Dropout(Var, Vec<T>),
    SmoothedCe {
        logits: Var,
        probs: Vec<T>,
        target: Vec<T>,
    },
}

struct Node<'p, T: Clone> {
    value: Cow<'p, Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// Record of one forward pass.
pub struct Tape<'p, T: Scalar> {
    nodes: Vec<Node<'p, T>>,
    params: BTreeMap<usize, Var>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Grads<T> {
    by_node: Vec<Option<Tensor<T>>>,
    params: BTreeMap<usize, Var>,
}

impl<T: Scalar> Grads<T> {
    pub fn of(&self, v: Var) -> Option<&Tensor<T>> {
        self.by_node[v.0].as_ref()
    }

    /// Gradient of parameter `id`, if it took part in the pass.
    pub fn param(&self, id: usize) -> Option<&Tensor<T>> {
        self.params.get(&id).and_then(|v| self.of(*v))
    }

    /// `(param id, gradient)` pairs, frozen rows zeroed.
    pub fn into_params(mut self, store: &ParamStore<T>) -> Vec<(usize, Tensor<T>)> {
        let mut out = Vec::new();
        for (&id, v) in &self.params {
            if let Some(mut g) = self.by_node[v.0].take() {
                if let Some(mask) = store.frozen_rows(id) {
                    for (r, &frozen) in mask.iter().enumerate() {
                        if frozen {
                            g.row_mut(r).iter_mut().for_each(|x| *x = T::zero());
                        }
                    }
                }
                out.push((id, g));
            }
        }
        out
    }
}

fn zeros_like<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    Tensor::zeros(&t.shape)
}

fn mat<T: Scalar>(rows: usize, cols: usize, data: Vec<T>) -> Tensor<T> {
    Tensor {
        shape: alloc::vec![rows, cols],
        data,
    }
}

/// `a[n,k] · b[k,m]`, accumulated into `out[n,m]`.
fn gemm<T: Scalar>(a: &[T], b: &[T], out: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let x = a[i * k + p];
            if x == T::zero() {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &y) in orow.iter_mut().zip(brow) {
                *o = *o + x * y;
            }
        }
    }
}

/// Dot product with independent partial sums, so the loop vectorizes.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    const LANES: usize = 8;
    let mut acc = [T::zero(); LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut s = acc.iter().fold(T::zero(), |s, &v| s + v);
    for (&x, &y) in ra.iter().zip(rb) {
        s = s + x * y;
    }
    s
}

/// `a[n,k] · b[m,k]^T`, accumulated into `out[n,m]`.
fn gemm_bt<T: Scalar>(a: &[T], b: &[T], out: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..m {
            out[i * m + j] = out[i * m + j] + dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `a[k,n]^T · b[k,m]`, accumulated into `out[n,m]`.
fn gemm_at<T: Scalar>(a: &[T], b: &[T], out: &mut [T], k: usize, n: usize, m: usize) {
    for p in 0..k {
        let brow = &b[p * m..(p + 1) * m];
        for i in 0..n {
            let x = a[p * n + i];
            if x == T::zero() {
                continue;
            }
            let orow = &mut out[i * m..(i + 1) * m];
            for (o, &y) in orow.iter_mut().zip(brow) {
                *o = *o + x * y;
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

impl<'p, T: Scalar> Default for Tape<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable input that is not a stored parameter.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf for parameter `id` of `store`; repeated calls return the same leaf.
    pub fn param(&mut self, store: &'p ParamStore<T>, id: usize) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: Cow::Borrowed(store.get(id)),
            op: Op::Leaf,
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let (x, y) = (self.value(a), self.value(b));
        let (n, k, k2, m) = (x.rows(), x.cols(), y.rows(), y.cols());
        if k != k2 || y.shape.len() != 2 {
            return Err(ShapeError::new("matmul", &x.shape, &y.shape));
        }
        let mut out = alloc::vec![T::zero(); n * m];
        gemm(&x.data, &y.data, &mut out, n, k, m);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(mat(n, m, out), Op::MatMul(a, b), ng))
    }

    /// `a · b^T`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let (x, y) = (self.value(a), self.value(b));
        let (n, k, m, k2) = (x.rows(), x.cols(), y.rows(), y.cols());
        if k != k2 {
            return Err(ShapeError::new("matmul_bt", &x.shape, &y.shape));
        }
        let mut out = alloc::vec![T::zero(); n * m];
        gemm_bt(&x.data, &y.data, &mut out, n, k, m);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(mat(n, m, out), Op::MatMulBt(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (n, m) = (x.rows(), x.cols());
        let mut out = alloc::vec![T::zero(); n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = x.data[i * m + j];
            }
        }
        let ng = self.ng(a);
        self.push(mat(m, n, out), Op::Transpose(a), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape != y.shape {
            return Err(ShapeError::new("add", &x.shape, &y.shape));
        }
        let data = x.data.iter().zip(&y.data).map(|(&p, &q)| p + q).collect();
        let t = Tensor {
            shape: x.shape.clone(),
            data,
        };
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add(a, b), ng))
    }

    /// Adds the vector `b` (length = column count of `a`) to every row.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let (x, y) = (self.value(a), self.value(b));
        if y.len() != x.cols() {
            return Err(ShapeError::new("add_row", &x.shape, &y.shape));
        }
        let c = x.cols();
        let data = x
            .data
            .iter()
            .enumerate()
            .map(|(i, &p)| p + y.data[i % c])
            .collect();
        let t = Tensor {
            shape: x.shape.clone(),
            data,
        };
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::AddRow(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let t = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(t, Op::Scale(a, s), ng)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, ShapeError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape != y.shape {
            return Err(ShapeError::new("mul", &x.shape, &y.shape));
        }
        let data = x.data.iter().zip(&y.data).map(|(&p, &q)| p * q).collect();
        let t = Tensor {
            shape: x.shape.clone(),
            data,
        };
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Mul(a, b), ng))
    }

    /// Row-wise softmax. Rows that are entirely `-inf` become all zeros.
    pub fn softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..x.rows() {
            softmax_in_place(out.row_mut(r));
        }
        let ng = self.ng(a);
        self.push(out, Op::Softmax(a), ng)
    }

    /// Sets entries whose `keep` flag is false to `-inf`.
    pub fn masked_fill(&mut self, a: Var, keep: &[bool]) -> Result<Var, ShapeError> {
        let x = self.value(a);
        if keep.len() != x.len() {
            return Err(ShapeError::new("masked_fill", &x.shape, &[keep.len()]));
        }
        let data = x
            .data
            .iter()
            .zip(keep)
            .map(|(&v, &k)| if k { v } else { T::neg_infinity() })
            .collect();
        let t = Tensor {
            shape: x.shape.clone(),
            data,
        };
        let ng = self.ng(a);
        Ok(self.push(t, Op::MaskedFill(a, keep.to_vec()), ng))
    }

    /// Per-row normalisation followed by the affine map `gamma * x + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, ShapeError> {
        let (xv, g, b) = (self.value(x), self.value(gamma), self.value(beta));
        let c = xv.cols();
        if g.len() != c || b.len() != c {
            return Err(ShapeError::new("layer_norm", &xv.shape, &g.shape));
        }
        let n = xv.rows();
        let mut xhat = alloc::vec![T::zero(); n * c];
        let mut inv_std = alloc::vec![T::zero(); n];
        let mut out = alloc::vec![T::zero(); n * c];
        let cf = T::of(c as f64);
        for r in 0..n {
            let row = xv.row(r);
            let mean = row.iter().fold(T::zero(), |s, &v| s + v) / cf;
            let var = row.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) / cf;
            let inv = T::one() / (var + T::of(eps)).sqrt();
            inv_std[r] = inv;
            for j in 0..c {
                let h = (row[j] - mean) * inv;
                xhat[r * c + j] = h;
                out[r * c + j] = h * g.data[j] + b.data[j];
            }
        }
        let t = Tensor {
            shape: xv.shape.clone(),
            data: out,
        };
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let (c, k) = (T::of(GELU_C), T::of(GELU_A));
        let half = T::of(0.5);
        let t = self
            .value(a)
            .map(|x| half * x * (T::one() + (c * (x + k * x * x * x)).tanh()));
        let ng = self.ng(a);
        self.push(t, Op::Gelu(a), ng)
    }

    /// Rows `idx` of `a`, in order; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, ShapeError> {
        let x = self.value(a);
        let (n, c) = (x.rows(), x.cols());
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(ShapeError::new("gather_rows", &x.shape, &[bad]));
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(x.row(i));
        }
        let ng = self.ng(a);
        Ok(self.push(mat(idx.len(), c, data), Op::GatherRows(a, idx.to_vec()), ng))
    }

    /// Rows `start..start + len`.
    pub fn narrow_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, ShapeError> {
        let x = self.value(a);
        let c = x.cols();
        if start + len > x.rows() {
            return Err(ShapeError::new("narrow_rows", &x.shape, &[start, len]));
        }
        let data = x.data[start * c..(start + len) * c].to_vec();
        let ng = self.ng(a);
        Ok(self.push(mat(len, c, data), Op::NarrowRows(a, start), ng))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, ShapeError> {
        let x = self.value(a);
        let (n, c) = (x.rows(), x.cols());
        if start + len > c {
            return Err(ShapeError::new("slice_cols", &x.shape, &[start, len]));
        }
        let mut data = Vec::with_capacity(n * len);
        for r in 0..n {
            data.extend_from_slice(&x.row(r)[start..start + len]);
        }
        let ng = self.ng(a);
        Ok(self.push(mat(n, len, data), Op::SliceCols(a, start), ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, ShapeError> {
        let n = self.value(parts[0]).rows();
        for &p in parts {
            if self.value(p).rows() != n {
                return Err(ShapeError::new("concat_cols", self.shape(parts[0]), self.shape(p)));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(n * total);
        for r in 0..n {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(mat(n, total, data), Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, ShapeError> {
        let c = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut n = 0;
        for &p in parts {
            let x = self.value(p);
            if x.cols() != c {
                return Err(ShapeError::new("concat_rows", self.shape(parts[0]), &x.shape));
            }
            data.extend_from_slice(&x.data);
            n += x.rows();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(mat(n, c, data), Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Reduces over rows, giving a `[1, cols]` tensor.
    pub fn reduce_rows(&mut self, a: Var, how: Reduce) -> Result<Var, ShapeError> {
        let x = self.value(a);
        let (n, c) = (x.rows(), x.cols());
        if n == 0 {
            return Err(ShapeError::new("reduce_rows", &x.shape, &[]));
        }
        let mut out = alloc::vec![T::zero(); c];
        let mut arg = alloc::vec![0usize; c];
        match how {
            Reduce::Sum | Reduce::Mean => {
                for r in 0..n {
                    for (o, &v) in out.iter_mut().zip(x.row(r)) {
                        *o = *o + v;
                    }
                }
                if how == Reduce::Mean {
                    let nf = T::of(n as f64);
                    out.iter_mut().for_each(|o| *o = *o / nf);
                }
            }
            Reduce::Max => {
                out.copy_from_slice(x.row(0));
                for r in 1..n {
                    for (j, &v) in x.row(r).iter().enumerate() {
                        if v > out[j] {
                            out[j] = v;
                            arg[j] = r;
                        }
                    }
                }
            }
        }
        let ng = self.ng(a);
        Ok(self.push(mat(1, c, out), Op::ReduceRows(a, how, arg), ng))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().fold(T::zero(), |s, &v| s + v);
        let ng = self.ng(a);
        self.push(Tensor::scalar(s), Op::SumAll(a), ng)
    }

    /// `out[i, j] = q[i] · b[i * n + j]` for `q: [n, d]`, `b: [n * n, d]`.
    pub fn row_dot(&mut self, q: Var, b: Var) -> Result<Var, ShapeError> {
        let (x, y) = (self.value(q), self.value(b));
        let (n, d) = (x.rows(), x.cols());
        if y.rows() != n * n || y.cols() != d {
            return Err(ShapeError::new("row_dot", &x.shape, &y.shape));
        }
        let mut out = alloc::vec![T::zero(); n * n];
        for i in 0..n {
            let qi = x.row(i);
            for j in 0..n {
                out[i * n + j] = dot(qi, y.row(i * n + j));
            }
        }
        let ng = self.ng(q) || self.ng(b);
        Ok(self.push(mat(n, n, out), Op::RowDot(q, b), ng))
    }

    /// `out[i] = sum_j w[i, j] * b[i * n + j]` for `w: [n, n]`, `b: [n * n, d]`.
    pub fn row_weighted_sum(&mut self, w: Var, b: Var) -> Result<Var, ShapeError> {
        let (x, y) = (self.value(w), self.value(b));
        let n = x.rows();
        if x.cols() != n || y.rows() != n * n {
            return Err(ShapeError::new("row_weighted_sum", &x.shape, &y.shape));
        }
        let d = y.cols();
        let mut out = alloc::vec![T::zero(); n * d];
        for i in 0..n {
            let orow = &mut out[i * d..(i + 1) * d];
            for j in 0..n {
                let a = x.data[i * n + j];
                for (o, &v) in orow.iter_mut().zip(y.row(i * n + j)) {
                    *o = *o + a * v;
                }
            }
        }
        let ng = self.ng(w) || self.ng(b);
        Ok(self.push(mat(n, d, out), Op::RowWeightedSum(w, b), ng))
    }

    /// Inverted dropout with drop probability `p`.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut impl Rng) -> Var {
        if p <= 0.0 {
            return a;
        }
        let keep = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.value(a).len())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        let x = self.value(a);
        let data = x.data.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let t = Tensor {
            shape: x.shape.clone(),
            data,
        };
        let ng = self.ng(a);
        self.push(t, Op::Dropout(a, mask), ng)
    }

    /// Mean cross-entropy of `logits: [batch, classes]` against smoothed
    /// targets: `1 - eps` spread evenly over each row's answer set plus
    /// `eps / classes` on every class.
    pub fn smoothed_cross_entropy(
        &mut self,
        logits: Var,
        answers: &[Vec<usize>],
        eps: f64,
    ) -> Result<Var, ShapeError> {
        let x = self.value(logits);
        let (b, c) = (x.rows(), x.cols());
        if answers.len() != b || answers.iter().any(|a| a.is_empty() || a.iter().any(|&i| i >= c)) {
            return Err(ShapeError::new("smoothed_cross_entropy", &x.shape, &[answers.len()]));
        }
        let mut probs = x.data.clone();
        let mut target = alloc::vec![T::of(eps / c as f64); b * c];
        let mut loss = T::zero();
        for r in 0..b {
            let row = &x.data[r * c..(r + 1) * c];
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let lse = max + row.iter().fold(T::zero(), |s, &v| s + (v - max).exp()).ln();
            let share = T::of((1.0 - eps) / answers[r].len() as f64);
            for &a in &answers[r] {
                target[r * c + a] = target[r * c + a] + share;
            }
            for j in 0..c {
                let logp = row[j] - lse;
                probs[r * c + j] = logp.exp();
                loss = loss - target[r * c + j] * logp;
            }
        }
        let loss = loss / T::of(b as f64);
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SmoothedCe {
                logits,
                probs,
                target,
            },
            ng,
        ))
    }

    /// Reverse pass from the scalar `loss` (seed gradient 1).
    pub fn backward(&self, loss: Var) -> Grads<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(&self.value(loss).shape, T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].needs_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Grads {
            by_node: grads,
            params: self.params.clone(),
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor<T>>], v: Var, f: impl FnOnce(&mut Tensor<T>)) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let slot = &mut grads[v.0];
        let g = slot.get_or_insert_with(|| zeros_like(self.value(v)));
        f(g);
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (x, y) = (self.value(a), self.value(b));
                let (n, k, m) = (x.rows(), x.cols(), y.cols());
                self.acc(grads, a, |ga| gemm_bt(&g.data, &y.data, &mut ga.data, n, m, k));
                self.acc(grads, b, |gb| gemm_at(&x.data, &g.data, &mut gb.data, n, k, m));
            }
            &Op::MatMulBt(a, b) => {
                let (x, y) = (self.value(a), self.value(b));
                let (n, k, m) = (x.rows(), x.cols(), y.rows());
                self.acc(grads, a, |ga| gemm(&g.data, &y.data, &mut ga.data, n, m, k));
                self.acc(grads, b, |gb| gemm_at(&g.data, &x.data, &mut gb.data, n, m, k));
            }
            &Op::Transpose(a) => {
                let (n, m) = (out.rows(), out.cols());
                self.acc(grads, a, |ga| {
                    for r in 0..n {
                        for c in 0..m {
                            ga.data[c * n + r] = ga.data[c * n + r] + g.data[r * m + c];
                        }
                    }
                });
            }
            &Op::Add(a, b) => {
                self.acc(grads, a, |ga| ga.add_assign(g));
                self.acc(grads, b, |gb| gb.add_assign(g));
            }
            &Op::AddRow(a, b) => {
                self.acc(grads, a, |ga| ga.add_assign(g));
                let c = out.cols();
                self.acc(grads, b, |gb| {
                    for (k, &v) in g.data.iter().enumerate() {
                        gb.data[k % c] = gb.data[k % c] + v;
                    }
                });
            }
            &Op::Scale(a, s) => {
                self.acc(grads, a, |ga| {
                    for (o, &v) in ga.data.iter_mut().zip(&g.data) {
                        *o = *o + v * s;
                    }
                });
            }
            &Op::Mul(a, b) => {
                let (x, y) = (self.value(a), self.value(b));
                self.acc(grads, a, |ga| {
                    for k in 0..g.len() {
                        ga.data[k] = ga.data[k] + g.data[k] * y.data[k];
                    }
                });
                self.acc(grads, b, |gb| {
                    for k in 0..g.len() {
                        gb.data[k] = gb.data[k] + g.data[k] * x.data[k];
                    }
                });
            }
            &Op::Softmax(a) => {
                let c = out.cols();
                self.acc(grads, a, |ga| {
                    for r in 0..out.rows() {
                        let y = out.row(r);
                        let gy = &g.data[r * c..(r + 1) * c];
                        let yg = dot(y, gy);
                        for j in 0..c {
                            ga.data[r * c + j] = ga.data[r * c + j] + y[j] * (gy[j] - yg);
                        }
                    }
                });
            }
            Op::MaskedFill(a, keep) => {
                self.acc(grads, *a, |ga| {
                    for k in 0..g.len() {
                        if keep[k] {
                            ga.data[k] = ga.data[k] + g.data[k];
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = out.cols();
                let n = out.rows();
                let gam = self.value(*gamma);
                self.acc(grads, *gamma, |gg| {
                    for k in 0..g.len() {
                        gg.data[k % c] = gg.data[k % c] + g.data[k] * xhat[k];
                    }
                });
                self.acc(grads, *beta, |gb| {
                    for k in 0..g.len() {
                        gb.data[k % c] = gb.data[k % c] + g.data[k];
                    }
                });
                let cf = T::of(c as f64);
                self.acc(grads, *x, |gx| {
                    for r in 0..n {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..c {
                            let d = g.data[r * c + j] * gam.data[j];
                            s1 = s1 + d;
                            s2 = s2 + d * xhat[r * c + j];
                        }
                        for j in 0..c {
                            let d = g.data[r * c + j] * gam.data[j];
                            let v = inv_std[r] / cf * (cf * d - s1 - xhat[r * c + j] * s2);
                            gx.data[r * c + j] = gx.data[r * c + j] + v;
                        }
                    }
                });
            }
            &Op::Gelu(a) => {
                let x = self.value(a);
                let (c, k) = (T::of(GELU_C), T::of(GELU_A));
                let half = T::of(0.5);
                let three = T::of(3.0);
                self.acc(grads, a, |ga| {
                    for (idx, &v) in x.data.iter().enumerate() {
                        let th = (c * (v + k * v * v * v)).tanh();
                        let d = half * (T::one() + th)
                            + half * v * (T::one() - th * th) * c * (T::one() + three * k * v * v);
                        ga.data[idx] = ga.data[idx] + g.data[idx] * d;
                    }
                });
            }
            Op::GatherRows(a, idx) => {
                let c = out.cols();
                self.acc(grads, *a, |ga| {
                    for (r, &src) in idx.iter().enumerate() {
                        for j in 0..c {
                            ga.data[src * c + j] = ga.data[src * c + j] + g.data[r * c + j];
                        }
                    }
                });
            }
            &Op::NarrowRows(a, start) => {
                let c = out.cols();
                self.acc(grads, a, |ga| {
                    for (k, &v) in g.data.iter().enumerate() {
                        ga.data[start * c + k] = ga.data[start * c + k] + v;
                    }
                });
            }
            &Op::SliceCols(a, start) => {
                let (n, len) = (out.rows(), out.cols());
                let c = self.value(a).cols();
                self.acc(grads, a, |ga| {
                    for r in 0..n {
                        for j in 0..len {
                            ga.data[r * c + start + j] = ga.data[r * c + start + j] + g.data[r * len + j];
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let (n, total) = (out.rows(), out.cols());
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    self.acc(grads, p, |gp| {
                        for r in 0..n {
                            for j in 0..w {
                                gp.data[r * w + j] = gp.data[r * w + j] + g.data[r * total + off + j];
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    self.acc(grads, p, |gp| {
                        for k in 0..len {
                            gp.data[k] = gp.data[k] + g.data[off + k];
                        }
                    });
                    off += len;
                }
            }
            Op::ReduceRows(a, how, arg) => {
                let x = self.value(*a);
                let (n, c) = (x.rows(), x.cols());
                let scale = match how {
                    Reduce::Mean => T::one() / T::of(n as f64),
                    _ => T::one(),
                };
                self.acc(grads, *a, |ga| match how {
                    Reduce::Sum | Reduce::Mean => {
                        for r in 0..n {
                            for j in 0..c {
                                ga.data[r * c + j] = ga.data[r * c + j] + g.data[j] * scale;
                            }
                        }
                    }
                    Reduce::Max => {
                        for j in 0..c {
                            let r = arg[j];
                            ga.data[r * c + j] = ga.data[r * c + j] + g.data[j];
                        }
                    }
                });
            }
            &Op::SumAll(a) => {
                let s = g.data[0];
                self.acc(grads, a, |ga| ga.data.iter_mut().for_each(|v| *v = *v + s));
            }
            &Op::RowDot(q, b) => {
                let (x, y) = (self.value(q), self.value(b));
                let (n, d) = (x.rows(), x.cols());
                self.acc(grads, q, |gq| {
                    for i in 0..n {
                        for j in 0..n {
                            let w = g.data[i * n + j];
                            let brow = y.row(i * n + j);
                            for t in 0..d {
                                gq.data[i * d + t] = gq.data[i * d + t] + w * brow[t];
                            }
                        }
                    }
                });
                self.acc(grads, b, |gb| {
                    for i in 0..n {
                        let qi = x.row(i);
                        for j in 0..n {
                            let w = g.data[i * n + j];
                            let base = (i * n + j) * d;
                            for t in 0..d {
                                gb.data[base + t] = gb.data[base + t] + w * qi[t];
                            }
                        }
                    }
                });
            }
            &Op::RowWeightedSum(w, b) => {
                let (x, y) = (self.value(w), self.value(b));
                let n = x.rows();
                let d = y.cols();
                self.acc(grads, w, |gw| {
                    for i in 0..n {
                        let gi = &g.data[i * d..(i + 1) * d];
                        for j in 0..n {
                            gw.data[i * n + j] = gw.data[i * n + j] + dot(gi, y.row(i * n + j));
                        }
                    }
                });
                self.acc(grads, b, |gb| {
                    for i in 0..n {
                        let gi = &g.data[i * d..(i + 1) * d];
                        for j in 0..n {
                            let a = x.data[i * n + j];
                            let base = (i * n + j) * d;
                            for t in 0..d {
                                gb.data[base + t] = gb.data[base + t] + a * gi[t];
                            }
                        }
                    }
                });
            }
            Op::Dropout(a, mask) => {
                self.acc(grads, *a, |ga| {
                    for k in 0..g.len() {
                        ga.data[k] = ga.data[k] + g.data[k] * mask[k];
                    }
                });
            }
            Op::SmoothedCe {
                logits,
                probs,
                target,
            } => {
                let b = self.value(*logits).rows();
                let s = g.data[0] / T::of(b as f64);
                self.acc(grads, *logits, |gl| {
                    for k in 0..probs.len() {
                        gl.data[k] = gl.data[k] + (probs[k] - target[k]) * s;
                    }
                });
            }
        }
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    if max == T::neg_infinity() {
        row.iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn matmul_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::<f64>::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[3, 4]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.shape(c), &[2, 4]);
        let err = tape.matmul(b, b).unwrap_err();
        assert_eq!((err.left, err.right), (vec![3, 4], vec![3, 4]));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.0, 50.0]));
        let s = tape.softmax(a);
        for r in 0..2 {
            let sum: f64 = tape.value(s).row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut tape = Tape::new();
        let x = tape.input(t(&[1, 3], &[1.0, -2.0, 0.5]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum_all(sq);
        let g = tape.backward(s);
        assert_eq!(g.of(x).unwrap().data, vec![2.0, -4.0, 1.0]);
    }

    #[test]
    fn masked_positions_get_zero_weight_and_gradient() {
        let mut tape = Tape::new();
        let x = tape.input(t(&[1, 3], &[0.3, 0.1, -0.2]));
        let m = tape.masked_fill(x, &[true, false, true]).unwrap();
        let s = tape.softmax(m);
        assert_eq!(tape.value(s).data[1], 0.0);
        let w = tape.constant(t(&[1, 3], &[1.0, 2.0, 3.0]));
        let p = tape.mul(s, w).unwrap();
        let l = tape.sum_all(p);
        let g = tape.backward(l);
        assert_eq!(g.of(x).unwrap().data[1], 0.0);
    }

    #[test]
    fn cross_entropy_reference_values() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::<f64>::zeros(&[1, 4]));
        let l = tape.smoothed_cross_entropy(z, &[vec![2]], 0.0).unwrap();
        assert!((tape.value(l).data[0] - 4f64.ln()).abs() < 1e-12);
        let z = tape.constant(t(&[1, 3], &[100.0, 0.0, 0.0]));
        let l = tape.smoothed_cross_entropy(z, &[vec![0]], 0.0).unwrap();
        assert!(tape.value(l).data[0] < 1e-40);
        assert!(tape.smoothed_cross_entropy(z, &[vec![]], 0.0).is_err());
    }
}
