//! Reverse-mode differentiation over a linear tape of matrix operations.
//!
//! Values are treated as row-major matrices; a rank-1 tensor is a single row.
//! A [`Graph`] is built per forward pass, consumed by [`Graph::backward`] and
//! then dropped.

use super::kernels;
use super::params::{Grads, ParamSet};
use super::real::Real;
use super::tensor::Tensor;
use super::NumError;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T: Real> {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Affine(Var, T),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Clamp(Var, T, T),
    Minimum(Var, Var),
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Softmax(Var),
    CausalSoftmax(Var),
    LogSoftmaxPick {
        x: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    Entropy {
        x: Var,
        probs: Vec<T>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    Sum(Var),
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A tape of operations recorded during one forward pass.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mat<T: Real>(rows: usize, cols: usize, data: Vec<T>) -> Tensor<T> {
    Tensor::new(vec![rows, cols], data).expect("kernel output has consistent shape")
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims2()
    }

    /// First element of a node's value; intended for scalar outputs.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    /// A constant input that never receives gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// An input leaf that receives gradient.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Registers every tensor of `params` on the tape, in order.
    pub fn bind(&mut self, params: &ParamSet<T>) -> Vec<Var> {
        params
            .tensors()
            .iter()
            .map(|t| {
                let mut v = t.clone();
                v.clear_grad();
                self.push(v, Op::Param, true)
            })
            .collect()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(NumError::ShapeMismatch {
                expected: vec![m, k],
                found: vec![k2, n],
            });
        }
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(mat(m, n, out), Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(NumError::ShapeMismatch {
                expected: vec![m, k],
                found: vec![n, k2],
            });
        }
        let out = kernels::matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(mat(m, n, out), Op::MatMulNT(a, b), rg))
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<(), NumError> {
        let (sa, sb) = (self.value(a).numel(), self.value(b).numel());
        if sa != sb {
            return Err(NumError::ShapeMismatch {
                expected: self.value(a).shape().to_vec(),
                found: self.value(b).shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.same_shape(a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let nb = self.affine(b, -T::one(), T::zero());
        self.add(a, nb)
    }

    /// Adds a row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, NumError> {
        let (m, n) = self.dims(a);
        if self.value(bias).numel() != n {
            return Err(NumError::ShapeMismatch {
                expected: vec![n],
                found: self.value(bias).shape().to_vec(),
            });
        }
        let mut data = self.value(a).data().to_vec();
        kernels::add_row_inplace(&mut data, self.value(bias).data());
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(mat(m, n, data), Op::AddRow(a, bias), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.same_shape(a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&e| f(e)).collect();
        let t = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(t, op, rg)
    }

    /// `scale · x + shift`
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        self.unary(x, |e| scale * e + shift, Op::Affine(x, scale))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        self.affine(x, s, T::zero())
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |e| e.tanh(), Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |e| e.exp(), Op::Exp(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, |e| e.ln(), Op::Ln(x))
    }

    /// Elementwise clamp; gradient is zero outside `[lo, hi]`.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        self.unary(x, |e| e.max(lo).min(hi), Op::Clamp(x, lo, hi))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.same_shape(a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| if x <= y { x } else { y })
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Minimum(a, b), rg))
    }

    /// Gathers rows of `table` by id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumError> {
        let (rows, d) = self.dims(table);
        if ids.is_empty() {
            return Err(NumError::Empty("embedding ids"));
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(NumError::IndexOutOfRange { index: id, len: rows });
            }
            data.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            mat(ids.len(), d, data),
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var, NumError> {
        let (m, n) = self.dims(x);
        if self.value(gamma).numel() != n || self.value(beta).numel() != n {
            return Err(NumError::ShapeMismatch {
                expected: vec![n],
                found: self.value(gamma).shape().to_vec(),
            });
        }
        let (y, xhat, inv_std) = kernels::layer_norm(
            self.value(x).data(),
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
        );
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            mat(m, n, y),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let (m, n) = self.dims(x);
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(n) {
            kernels::softmax_inplace(row);
        }
        let rg = self.rg(x);
        self.push(mat(m, n, data), Op::Softmax(x), rg)
    }

    /// Row-wise softmax where row `i` only sees columns `0..=i + (cols - rows)`.
    /// Masked entries are exactly zero.
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var, NumError> {
        let (m, n) = self.dims(x);
        if n < m {
            return Err(NumError::ShapeMismatch {
                expected: vec![m, m],
                found: vec![m, n],
            });
        }
        let offset = n - m;
        let mut data = self.value(x).data().to_vec();
        for (i, row) in data.chunks_mut(n).enumerate() {
            let visible = i + offset + 1;
            kernels::softmax_inplace(&mut row[..visible]);
            row[visible..].iter_mut().for_each(|v| *v = T::zero());
        }
        let rg = self.rg(x);
        Ok(self.push(mat(m, n, data), Op::CausalSoftmax(x), rg))
    }

    /// Log-probability of `targets[i]` under the softmax of row `i`. Output has one
    /// entry per row.
    pub fn log_softmax_pick(&mut self, x: Var, targets: &[usize]) -> Result<Var, NumError> {
        let (m, n) = self.dims(x);
        if targets.len() != m {
            return Err(NumError::ShapeMismatch {
                expected: vec![m],
                found: vec![targets.len()],
            });
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(m);
        let mut probs = Vec::with_capacity(m * n);
        for (i, &t) in targets.iter().enumerate() {
            if t >= n {
                return Err(NumError::IndexOutOfRange { index: t, len: n });
            }
            let row = &src[i * n..(i + 1) * n];
            let lp = kernels::log_softmax(row);
            out.push(lp[t]);
            probs.extend(lp.iter().map(|v| v.exp()));
        }
        let rg = self.rg(x);
        Ok(self.push(
            mat(1, m, out),
            Op::LogSoftmaxPick {
                x,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Shannon entropy (nats) of the softmax of every row.
    pub fn entropy(&mut self, x: Var) -> Var {
        let (m, n) = self.dims(x);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(m);
        let mut probs = Vec::with_capacity(m * n);
        for row in src.chunks(n) {
            let lp = kernels::log_softmax(row);
            let mut h = T::zero();
            for &l in &lp {
                let p = l.exp();
                h -= p * l;
                probs.push(p);
            }
            out.push(h);
        }
        let rg = self.rg(x);
        self.push(mat(1, m, out), Op::Entropy { x, probs }, rg)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumError> {
        let (m, n) = self.dims(x);
        if start + len > n || len == 0 {
            return Err(NumError::IndexOutOfRange {
                index: start + len,
                len: n,
            });
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        let rg = self.rg(x);
        Ok(self.push(mat(m, len, data), Op::SliceCols { x, start }, rg))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumError> {
        let (m, n) = self.dims(x);
        if start + len > m || len == 0 {
            return Err(NumError::IndexOutOfRange {
                index: start + len,
                len: m,
            });
        }
        let data = self.value(x).data()[start * n..(start + len) * n].to_vec();
        let rg = self.rg(x);
        Ok(self.push(mat(len, n, data), Op::SliceRows { x, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let Some(&first) = parts.first() else {
            return Err(NumError::Empty("concat parts"));
        };
        let (m, _) = self.dims(first);
        let mut total = 0;
        for &p in parts {
            let (pm, pn) = self.dims(p);
            if pm != m {
                return Err(NumError::ShapeMismatch {
                    expected: vec![m, pn],
                    found: vec![pm, pn],
                });
            }
            total += pn;
        }
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                let (_, pn) = self.dims(p);
                data.extend_from_slice(&self.value(p).data()[r * pn..(r + 1) * pn]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(mat(m, total, data), Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Column means, producing a single row.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let (m, n) = self.dims(x);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); n];
        for row in src.chunks(n) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let mf = T::from_usize(m).unwrap();
        out.iter_mut().for_each(|v| *v /= mf);
        let rg = self.rg(x);
        self.push(mat(1, n, out), Op::MeanRows(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::from_usize(self.value(x).numel()).unwrap();
        let s = self.sum(x);
        self.scale(s, T::one() / n)
    }

    /// Runs reverse accumulation from a scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Backward<T>, NumError> {
        if self.value(output).numel() != 1 {
            return Err(NumError::NotScalar(self.value(output).shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(vec![T::one()]);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Backward { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let mut acc = |v: Var, delta: Vec<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, d) in existing.iter_mut().zip(delta) {
                        *e += d;
                    }
                }
                slot @ None => *slot = Some(delta),
            }
        };
        let y = node.value.data();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let (_, n) = self.dims(*b);
                if self.rg(*a) {
                    acc(*a, kernels::matmul_nt(g, self.value(*b).data(), m, n, k));
                }
                if self.rg(*b) {
                    acc(*b, kernels::matmul_tn(self.value(*a).data(), g, m, k, n));
                }
            }
            Op::MatMulNT(a, b) => {
                let (m, k) = self.dims(*a);
                let (n, _) = self.dims(*b);
                if self.rg(*a) {
                    acc(*a, kernels::matmul(g, self.value(*b).data(), m, n, k));
                }
                if self.rg(*b) {
                    acc(*b, kernels::matmul_tn(g, self.value(*a).data(), m, n, k));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::AddRow(a, bias) => {
                acc(*a, g.to_vec());
                let n = self.value(*bias).numel();
                let mut db = vec![T::zero(); n];
                for row in g.chunks(n) {
                    for (d, &v) in db.iter_mut().zip(row) {
                        *d += v;
                    }
                }
                acc(*bias, db);
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(*a, g.iter().zip(bv).map(|(&g, &b)| g * b).collect());
                acc(*b, g.iter().zip(av).map(|(&g, &a)| g * a).collect());
            }
            Op::Affine(x, s) => acc(*x, g.iter().map(|&v| v * *s).collect()),
            Op::Tanh(x) => acc(
                *x,
                g.iter()
                    .zip(y)
                    .map(|(&g, &y)| g * (T::one() - y * y))
                    .collect(),
            ),
            Op::Sigmoid(x) => acc(
                *x,
                g.iter()
                    .zip(y)
                    .map(|(&g, &y)| g * y * (T::one() - y))
                    .collect(),
            ),
            Op::Exp(x) => acc(*x, g.iter().zip(y).map(|(&g, &y)| g * y).collect()),
            Op::Ln(x) => acc(
                *x,
                g.iter()
                    .zip(self.value(*x).data())
                    .map(|(&g, &x)| g / x)
                    .collect(),
            ),
            Op::Clamp(x, lo, hi) => acc(
                *x,
                g.iter()
                    .zip(self.value(*x).data())
                    .map(|(&g, &x)| if x >= *lo && x <= *hi { g } else { T::zero() })
                    .collect(),
            ),
            Op::Minimum(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let mut da = vec![T::zero(); g.len()];
                let mut db = vec![T::zero(); g.len()];
                for i in 0..g.len() {
                    if av[i] <= bv[i] {
                        da[i] = g[i];
                    } else {
                        db[i] = g[i];
                    }
                }
                acc(*a, da);
                acc(*b, db);
            }
            Op::Embedding { table, ids } => {
                let (rows, d) = self.dims(*table);
                let mut dt = vec![T::zero(); rows * d];
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += g[r * d + j];
                    }
                }
                acc(*table, dt);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (m, n) = self.dims(*x);
                let gv = self.value(*gamma).data();
                let nf = T::from_usize(n).unwrap();
                let mut dx = vec![T::zero(); m * n];
                let mut dgamma = vec![T::zero(); n];
                let mut dbeta = vec![T::zero(); n];
                for r in 0..m {
                    let gr = &g[r * n..(r + 1) * n];
                    let hr = &xhat[r * n..(r + 1) * n];
                    let mut sum_dh = T::zero();
                    let mut sum_dh_h = T::zero();
                    for j in 0..n {
                        let dh = gr[j] * gv[j];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[j];
                        dgamma[j] += gr[j] * hr[j];
                        dbeta[j] += gr[j];
                    }
                    for j in 0..n {
                        let dh = gr[j] * gv[j];
                        dx[r * n + j] = inv_std[r] / nf * (nf * dh - sum_dh - hr[j] * sum_dh_h);
                    }
                }
                acc(*x, dx);
                acc(*gamma, dgamma);
                acc(*beta, dbeta);
            }
            Op::Softmax(x) | Op::CausalSoftmax(x) => {
                let (_, n) = self.dims(*x);
                let mut dx = vec![T::zero(); g.len()];
                for ((dr, gr), yr) in dx.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                    let s = kernels::dot(gr, yr);
                    for j in 0..n {
                        dr[j] = yr[j] * (gr[j] - s);
                    }
                }
                acc(*x, dx);
            }
            Op::LogSoftmaxPick { x, targets, probs } => {
                let (_, n) = self.dims(*x);
                let mut dx = vec![T::zero(); probs.len()];
                for (i, &t) in targets.iter().enumerate() {
                    for j in 0..n {
                        dx[i * n + j] = -g[i] * probs[i * n + j];
                    }
                    dx[i * n + t] += g[i];
                }
                acc(*x, dx);
            }
            Op::Entropy { x, probs } => {
                let (_, n) = self.dims(*x);
                let mut dx = vec![T::zero(); probs.len()];
                for i in 0..g.len() {
                    let h = y[i];
                    for j in 0..n {
                        let p = probs[i * n + j];
                        if p > T::zero() {
                            dx[i * n + j] = -g[i] * p * (p.ln() + h);
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::SliceCols { x, start } => {
                let (m, n) = self.dims(*x);
                let len = g.len() / m;
                let mut dx = vec![T::zero(); m * n];
                for r in 0..m {
                    dx[r * n + start..r * n + start + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                acc(*x, dx);
            }
            Op::SliceRows { x, start } => {
                let (m, n) = self.dims(*x);
                let mut dx = vec![T::zero(); m * n];
                dx[start * n..start * n + g.len()].copy_from_slice(g);
                acc(*x, dx);
            }
            Op::ConcatCols(parts) => {
                let total = node.value.dims2().1;
                let mut offset = 0;
                for &p in parts {
                    let (m, pn) = self.dims(p);
                    let mut dp = Vec::with_capacity(m * pn);
                    for r in 0..m {
                        dp.extend_from_slice(&g[r * total + offset..r * total + offset + pn]);
                    }
                    acc(p, dp);
                    offset += pn;
                }
            }
            Op::MeanRows(x) => {
                let (m, n) = self.dims(*x);
                let mf = T::from_usize(m).unwrap();
                let mut dx = Vec::with_capacity(m * n);
                for _ in 0..m {
                    dx.extend(g.iter().map(|&v| v / mf));
                }
                acc(*x, dx);
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                acc(*x, vec![g[0]; n]);
            }
        }
    }
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Gradients produced by one backward pass.
pub struct Backward<T: Real> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Backward<T> {
    /// Gradient of the output with respect to `v`, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Collects gradients for parameters bound with [`Graph::bind`].
    pub fn param_grads(&self, vars: &[Var], params: &ParamSet<T>) -> Grads<T> {
        let mut out = Grads::zeros_like(params);
        for (i, v) in vars.iter().enumerate() {
            if let Some(g) = self.wrt(*v) {
                out.add_slice(i, g);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{grad_check_params, GradCheckOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, scale: f64) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
    }

    /// Projects an op's output onto fixed random weights so every output
    /// coordinate contributes to the scalar.
    fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Var {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = rand_tensor(&mut rng, g.value(y).shape().to_vec(), 1.0);
        let w = g.constant(w);
        let p = g.mul(y, w).unwrap();
        g.sum(p)
    }

    fn check<F>(shapes: &[Vec<usize>], points: usize, f: F)
    where
        F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, NumError>,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for point in 0..points {
            let mut set = ParamSet::new();
            for (i, s) in shapes.iter().enumerate() {
                set.push(format!("x{i}"), rand_tensor(&mut rng, s.clone(), 1.5));
            }
            let r = grad_check_params(&set, &f, &GradCheckOptions::default()).unwrap();
            assert!(r.max_rel_error < 1e-4, "point {point}: {r:?}");
        }
    }

    #[test]
    fn matmul_variants() {
        check(&[vec![3, 4], vec![4, 2]], 5, |g, v| {
            let y = g.matmul(v[0], v[1])?;
            Ok(project(g, y, 1))
        });
        check(&[vec![3, 4], vec![5, 4]], 5, |g, v| {
            let y = g.matmul_nt(v[0], v[1])?;
            Ok(project(g, y, 2))
        });
    }

    #[test]
    fn elementwise() {
        check(&[vec![2, 3], vec![2, 3], vec![3]], 5, |g, v| {
            let a = g.mul(v[0], v[1])?;
            let b = g.add_row(a, v[2])?;
            let t = g.tanh(b);
            let s = g.sigmoid(t);
            let e = g.exp(s);
            let l = g.ln(e);
            let q = g.affine(l, 0.5, 2.0);
            let d = g.sub(q, v[0])?;
            Ok(project(g, d, 3))
        });
    }

    #[test]
    fn softmaxes_and_picks() {
        check(&[vec![3, 5]], 5, |g, v| {
            let y = g.softmax(v[0]);
            Ok(project(g, y, 4))
        });
        check(&[vec![3, 5]], 5, |g, v| {
            let y = g.causal_softmax(v[0])?;
            Ok(project(g, y, 5))
        });
        check(&[vec![3, 5]], 5, |g, v| {
            let y = g.log_softmax_pick(v[0], &[4, 0, 2])?;
            Ok(project(g, y, 6))
        });
        check(&[vec![3, 5]], 5, |g, v| {
            let y = g.entropy(v[0]);
            Ok(project(g, y, 7))
        });
    }

    #[test]
    fn structural() {
        check(&[vec![6, 3], vec![2, 4]], 5, |g, v| {
            let e = g.embedding(v[0], &[5, 0, 5, 2])?;
            let m = g.mean_rows(e);
            let s = g.slice_cols(v[1], 1, 2)?;
            let s = g.slice_rows(s, 1, 1)?;
            let r = g.mean_rows(s);
            let cat = g.concat_cols(&[m, r, m])?;
            Ok(project(g, cat, 8))
        });
    }

    #[test]
    fn layer_norm_op() {
        check(&[vec![3, 6], vec![6], vec![6]], 5, |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
            Ok(project(g, y, 9))
        });
    }

    #[test]
    fn causal_mask_zeroes_future() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(vec![3, 3], vec![1.0; 9]).unwrap());
        let y = g.causal_softmax(x).unwrap();
        assert_eq!(
            g.value(y).data(),
            &[1.0, 0.0, 0.0, 0.5, 0.5, 0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]
        );
    }

    #[test]
    fn backward_needs_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let t = g.tanh(x);
        assert!(matches!(g.backward(t), Err(NumError::NotScalar(_))));
    }
}
