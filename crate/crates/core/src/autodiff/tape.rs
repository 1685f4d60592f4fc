//! Tape-based reverse-mode differentiation over dense arrays.
//!
//! Every op appends a node holding its forward value; node indices are a
//! topological order, so `backward` is a single reverse sweep. Gradients
//! accumulate additively, which handles fan-out.
//!
//! Shapes are never broadcast implicitly. Row-vector bias addition
//! (`add_row`) and repetition (`tile`) are explicit ops.

use super::array::{Array, Real};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul { a: usize, b: usize, trans_b: bool, m: usize, k: usize, n: usize },
    BatchMatMul { a: usize, b: usize, trans_b: bool, batch: usize, m: usize, k: usize, n: usize },
    Add { a: usize, b: usize },
    Mul { a: usize, b: usize },
    AddRow { x: usize, row: usize },
    Scale { x: usize, s: T },
    Gelu { x: usize },
    Softmax { x: usize, tau: T },
    LogSoftmax { x: usize, tau: T },
    L2Normalize { x: usize, norms: Vec<T> },
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<T>, rstd: Vec<T> },
    Mean { x: usize },
    Sum { x: usize },
    Slice { x: usize, outer: usize, src_axis: usize, inner: usize, start: usize, len: usize },
    Concat { xs: Vec<(usize, usize)>, outer: usize, inner: usize },
    Reshape { x: usize },
    Permute { x: usize, axes: Vec<usize> },
    GatherRows { x: usize, idx: Vec<usize> },
    Tile { x: usize, n: usize },
    CrossEntropy { target: Vec<T>, logq: usize, rows: usize },
}

struct Node<T> {
    value: Array<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradient computation graph for one forward pass.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn permute_index_tables(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let nd = shape.len();
    let mut in_strides = vec![1usize; nd];
    for i in (0..nd.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    (out_shape, strides)
}

/// Calls `f(out_linear, in_linear)` for every element of the permuted view.
fn for_each_permuted(shape: &[usize], axes: &[usize], mut f: impl FnMut(usize, usize)) {
    let (out_shape, strides) = permute_index_tables(shape, axes);
    let total: usize = shape.iter().product();
    let nd = out_shape.len();
    let mut counter = vec![0usize; nd];
    let mut src = 0usize;
    for out in 0..total {
        f(out, src);
        for d in (0..nd).rev() {
            counter[d] += 1;
            src += strides[d];
            if counter[d] < out_shape[d] {
                break;
            }
            src -= strides[d] * out_shape[d];
            counter[d] = 0;
        }
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Array<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Array<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives gradient.
    pub fn constant(&mut self, value: Array<T>) -> Var {
        self.leaf(value, false)
    }

    /// Copy of `v` cut off from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Array<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// `[m,k] x [k,n]`, or `[m,k] x [n,k]^T` when `trans_b`.
    pub fn matmul_t(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?} must both be 2-D")));
        }
        let (m, k) = (sa[0], sa[1]);
        let (kb, n) = if trans_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != kb {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?} (trans_b={trans_b})")));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), trans_b, &mut out, false);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Array::new(vec![m, n], out)?, Op::MatMul { a: a.0, b: b.0, trans_b, m, k, n }, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false)
    }

    /// Batched `[B,m,k] x [B,k,n]` (or `[B,n,k]^T`).
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(Error::shape("bmm", format!("{sa:?} x {sb:?}")));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if k != kb {
            return Err(Error::shape("bmm", format!("{sa:?} x {sb:?} (trans_b={trans_b})")));
        }
        let mut out = vec![T::zero(); batch * m * n];
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            for i in 0..batch {
                T::gemm(
                    m,
                    k,
                    n,
                    &av[i * m * k..(i + 1) * m * k],
                    false,
                    &bv[i * k * n..(i + 1) * k * n],
                    trans_b,
                    &mut out[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Array::new(vec![batch, m, n], out)?,
            Op::BatchMatMul { a: a.0, b: b.0, trans_b, batch, m, k, n },
            rg,
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out: Vec<T> =
            self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Array::new(shape, out)?, Op::Add { a: a.0, b: b.0 }, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out: Vec<T> =
            self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Array::new(shape, out)?, Op::Mul { a: a.0, b: b.0 }, rg))
    }

    /// Adds a length-`d` vector to every row of `x[..., d]`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let d = self.value(x).cols();
        if self.shape(row) != [d] {
            return Err(Error::shape("add_row", format!("{:?} + {:?}", self.shape(x), self.shape(row))));
        }
        let r = self.value(row).data();
        let out: Vec<T> =
            self.value(x).data().chunks(d).flat_map(|c| c.iter().zip(r).map(|(&a, &b)| a + b)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(Array::new(shape, out)?, Op::AddRow { x: x.0, row: row.0 }, rg))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        let out: Vec<T> = self.value(x).data().iter().map(|&v| v * s).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(Array::new(shape, out)?, Op::Scale { x: x.0, s }, rg))
    }

    /// Exact-erf GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out: Vec<T> = self.value(x).data().iter().map(|&v| gelu(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(Array::new(shape, out)?, Op::Gelu { x: x.0 }, rg))
    }

    fn check_tau(tau: T) -> Result<()> {
        if !(tau > T::zero()) || !tau.is_finite() {
            return Err(Error::Config(format!("temperature must be positive, got {tau}")));
        }
        Ok(())
    }

    /// Softmax of `x / tau` along the last axis.
    pub fn softmax_rows(&mut self, x: Var, tau: T) -> Result<Var> {
        Self::check_tau(tau)?;
        let xv = self.value(x);
        let d = xv.cols();
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data().chunks(d) {
            softmax_into(row, tau, &mut out);
        }
        let shape = xv.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Array::new(shape, out)?, Op::Softmax { x: x.0, tau }, rg))
    }

    /// Log-softmax of `x / tau` along the last axis.
    pub fn log_softmax_rows(&mut self, x: Var, tau: T) -> Result<Var> {
        Self::check_tau(tau)?;
        let xv = self.value(x);
        let d = xv.cols();
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data().chunks(d) {
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v / tau));
            let lse = row.iter().map(|&v| (v / tau - max).exp()).sum::<T>().ln() + max;
            out.extend(row.iter().map(|&v| v / tau - lse));
        }
        let shape = xv.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Array::new(shape, out)?, Op::LogSoftmax { x: x.0, tau }, rg))
    }

    /// Scales each row to unit Euclidean norm. Rows with norm at or below
    /// [`NORM_EPS`] are rejected.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.cols();
        let eps = T::lit(NORM_EPS);
        let mut out = Vec::with_capacity(xv.len());
        let mut norms = Vec::with_capacity(xv.rows());
        for (i, row) in xv.data().chunks(d).enumerate() {
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if !(norm > eps) {
                return Err(Error::DegenerateEmbedding { row: i, norm: norm.to_f64().unwrap_or(f64::NAN) });
            }
            out.extend(row.iter().map(|&v| v / norm));
            norms.push(norm);
        }
        let shape = xv.shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Array::new(shape, out)?, Op::L2Normalize { x: x.0, norms }, rg))
    }

    /// Normalizes the last axis to zero mean / unit variance, then applies
    /// `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let d = self.value(x).cols();
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape(
                "layer_norm",
                format!("x {:?}, gamma {:?}, beta {:?}", self.shape(x), self.shape(gamma), self.shape(beta)),
            ));
        }
        let eps = T::lit(LAYER_NORM_EPS);
        let dn = T::from_usize(d).unwrap();
        let (xv, g, b) = (self.value(x), self.value(gamma).data(), self.value(beta).data());
        let mut xhat = Vec::with_capacity(xv.len());
        let mut rstd = Vec::with_capacity(xv.rows());
        let mut out = Vec::with_capacity(xv.len());
        for row in xv.data().chunks(d) {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let r = (var + eps).sqrt().recip();
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(g[j] * h + b[j]);
            }
            rstd.push(r);
        }
        let shape = xv.shape().to_vec();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Array::new(shape, out)?,
            Op::LayerNorm { x: x.0, gamma: gamma.0, beta: beta.0, xhat, rstd },
            rg,
        ))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let m = xv.data().iter().copied().sum::<T>() / T::from_usize(xv.len()).unwrap();
        let rg = self.rg(x);
        Ok(self.push(Array::scalar(m), Op::Mean { x: x.0 }, rg))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let rg = self.rg(x);
        Ok(self.push(Array::scalar(s), Op::Sum { x: x.0 }, rg))
    }

    /// `x[.., start..end, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(Error::shape("slice", format!("{shape:?} axis {axis} [{start}, {end})")));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src_axis = shape[axis];
        let len = end - start;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * src_axis + start) * inner;
            out.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let rg = self.rg(x);
        Ok(self.push(Array::new(new_shape, out)?, Op::Slice { x: x.0, outer, src_axis, inner, start, len }, rg))
    }

    /// Concatenates along `axis`; all other axes must agree.
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} out of range for {base:?}")));
        }
        for v in xs {
            let s = self.shape(*v);
            let ok = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", format!("{s:?} vs {base:?} along axis {axis}")));
            }
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let parts: Vec<(usize, usize)> = xs.iter().map(|v| (v.0, self.shape(*v)[axis])).collect();
        let total_axis: usize = parts.iter().map(|p| p.1).sum();
        let mut out = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for &(idx, len) in &parts {
                let d = self.nodes[idx].value.data();
                out.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total_axis;
        let rg = xs.iter().any(|v| self.rg(*v));
        Ok(self.push(Array::new(shape, out)?, Op::Concat { xs: parts, outer, inner }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape.to_vec())?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape { x: x.0 }, rg))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::shape("permute", format!("{axes:?} is not a permutation of {shape:?}")));
        }
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); xv.len()];
        for_each_permuted(&shape, axes, |o, i| out[o] = xv[i]);
        let new_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let rg = self.rg(x);
        Ok(self.push(Array::new(new_shape, out)?, Op::Permute { x: x.0, axes: axes.to_vec() }, rg))
    }

    /// Selects rows of a 2-D array; indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || idx.is_empty() || idx.iter().any(|&i| i >= shape[0]) {
            return Err(Error::shape("gather_rows", format!("{shape:?} with {} indices", idx.len())));
        }
        let c = shape[1];
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&xv[i * c..(i + 1) * c]);
        }
        let rg = self.rg(x);
        Ok(self.push(Array::new(vec![idx.len(), c], out)?, Op::GatherRows { x: x.0, idx: idx.to_vec() }, rg))
    }

    /// Stacks `n` copies of `x` along a new leading axis.
    pub fn tile(&mut self, x: Var, n: usize) -> Result<Var> {
        if n == 0 {
            return Err(Error::shape("tile", "n must be positive"));
        }
        let xv = self.value(x);
        let mut shape = vec![n];
        shape.extend_from_slice(xv.shape());
        let out = xv.data().repeat(n);
        let rg = self.rg(x);
        Ok(self.push(Array::new(shape, out)?, Op::Tile { x: x.0, n }, rg))
    }

    /// Mean over rows of `-sum_j target[j] * log_q[j]`. Targets are data:
    /// no gradient flows into them.
    pub fn cross_entropy_rows(&mut self, target: &Array<T>, log_q: Var) -> Result<Var> {
        if target.shape() != self.shape(log_q) {
            return Err(Error::shape(
                "cross_entropy_rows",
                format!("target {:?} vs log_q {:?}", target.shape(), self.shape(log_q)),
            ));
        }
        let d = target.cols();
        let tol = T::lit(1e-5);
        for (i, row) in target.data().chunks(d).enumerate() {
            let s = row.iter().copied().sum::<T>();
            if (s - T::one()).abs() > tol {
                return Err(Error::shape("cross_entropy_rows", format!("target row {i} sums to {s}")));
            }
        }
        let rows = target.rows();
        let total: T = target
            .data()
            .iter()
            .zip(self.value(log_q).data())
            .map(|(&t, &l)| if t == T::zero() { T::zero() } else { -t * l })
            .sum();
        let loss = total / T::from_usize(rows).unwrap();
        let rg = self.rg(log_q);
        Ok(self.push(
            Array::scalar(loss),
            Op::CrossEntropy { target: target.data().to_vec(), logq: log_q.0, rows },
            rg,
        ))
    }

    /// `x @ w + b` on the last axis of `x[rows, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_row(y, b)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", format!("loss must be scalar, got {:?}", self.shape(loss))));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(i);
            let Some(g) = upper[0].as_ref() else { continue };
            self.backprop_node(i, g, lower);
        }
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| {
                if !node.requires_grad {
                    return None;
                }
                let shape = node.value.shape().to_vec();
                let data = g.unwrap_or_else(|| vec![T::zero(); node.value.len()]);
                Some(Array::new(shape, data).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, g: &[T], lower: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let wants = |j: usize| nodes[j].requires_grad;
        fn buf<'a, T: Real>(lower: &'a mut [Option<Vec<T>>], nodes: &[Node<T>], j: usize) -> &'a mut Vec<T> {
            lower[j].get_or_insert_with(|| vec![T::zero(); nodes[j].value.len()])
        }
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul { a, b, trans_b, m, k, n } => {
                if wants(a) {
                    // dA = dC · op(B)^T
                    let bv = nodes[b].value.data();
                    T::gemm(m, n, k, g, false, bv, !trans_b, buf(lower, nodes, a), true);
                }
                if wants(b) {
                    let av = nodes[a].value.data();
                    if trans_b {
                        // B is [n,k]: dB = dC^T · A
                        T::gemm(n, m, k, g, true, av, false, buf(lower, nodes, b), true);
                    } else {
                        // dB = A^T · dC
                        T::gemm(k, m, n, av, true, g, false, buf(lower, nodes, b), true);
                    }
                }
            }
            &Op::BatchMatMul { a, b, trans_b, batch, m, k, n } => {
                let (mk, kn, mn) = (m * k, k * n, m * n);
                if wants(a) {
                    let bv = nodes[b].value.data();
                    let ga = buf(lower, nodes, a);
                    for t in 0..batch {
                        T::gemm(
                            m,
                            n,
                            k,
                            &g[t * mn..(t + 1) * mn],
                            false,
                            &bv[t * kn..(t + 1) * kn],
                            !trans_b,
                            &mut ga[t * mk..(t + 1) * mk],
                            true,
                        );
                    }
                }
                if wants(b) {
                    let av = nodes[a].value.data();
                    let gb = buf(lower, nodes, b);
                    for t in 0..batch {
                        let (gs, as_, bs) = (&g[t * mn..(t + 1) * mn], &av[t * mk..(t + 1) * mk], &mut gb[t * kn..(t + 1) * kn]);
                        if trans_b {
                            T::gemm(n, m, k, gs, true, as_, false, bs, true);
                        } else {
                            T::gemm(k, m, n, as_, true, gs, false, bs, true);
                        }
                    }
                }
            }
            &Op::Add { a, b } => {
                for j in [a, b] {
                    if wants(j) {
                        for (d, &s) in buf(lower, nodes, j).iter_mut().zip(g) {
                            *d = *d + s;
                        }
                    }
                }
            }
            &Op::Mul { a, b } => {
                for (j, other) in [(a, b), (b, a)] {
                    if wants(j) {
                        let ov = nodes[other].value.data();
                        for ((d, &s), &o) in buf(lower, nodes, j).iter_mut().zip(g).zip(ov) {
                            *d = *d + s * o;
                        }
                    }
                }
            }
            &Op::AddRow { x, row } => {
                if wants(x) {
                    for (d, &s) in buf(lower, nodes, x).iter_mut().zip(g) {
                        *d = *d + s;
                    }
                }
                if wants(row) {
                    let gr = buf(lower, nodes, row);
                    let c = gr.len();
                    for chunk in g.chunks(c) {
                        for (d, &s) in gr.iter_mut().zip(chunk) {
                            *d = *d + s;
                        }
                    }
                }
            }
            &Op::Scale { x, s } => {
                if wants(x) {
                    for (d, &v) in buf(lower, nodes, x).iter_mut().zip(g) {
                        *d = *d + v * s;
                    }
                }
            }
            &Op::Gelu { x } => {
                if wants(x) {
                    let xv = nodes[x].value.data();
                    for ((d, &gv), &v) in buf(lower, nodes, x).iter_mut().zip(g).zip(xv) {
                        *d = *d + gv * gelu_grad(v);
                    }
                }
            }
            &Op::Softmax { x, tau } => {
                if wants(x) {
                    let c = out.cols();
                    let gx = buf(lower, nodes, x);
                    for ((p, gr), dst) in out.data().chunks(c).zip(g.chunks(c)).zip(gx.chunks_mut(c)) {
                        let dot: T = p.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for ((d, &pj), &gj) in dst.iter_mut().zip(p).zip(gr) {
                            *d = *d + pj * (gj - dot) / tau;
                        }
                    }
                }
            }
            &Op::LogSoftmax { x, tau } => {
                if wants(x) {
                    let c = out.cols();
                    let gx = buf(lower, nodes, x);
                    for ((ls, gr), dst) in out.data().chunks(c).zip(g.chunks(c)).zip(gx.chunks_mut(c)) {
                        let gsum: T = gr.iter().copied().sum();
                        for ((d, &l), &gj) in dst.iter_mut().zip(ls).zip(gr) {
                            *d = *d + (gj - l.exp() * gsum) / tau;
                        }
                    }
                }
            }
            Op::L2Normalize { x, norms } => {
                let x = *x;
                if wants(x) {
                    let c = out.cols();
                    let gx = buf(lower, nodes, x);
                    for (((y, gr), dst), &nrm) in
                        out.data().chunks(c).zip(g.chunks(c)).zip(gx.chunks_mut(c)).zip(norms)
                    {
                        let dot: T = y.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for ((d, &yj), &gj) in dst.iter_mut().zip(y).zip(gr) {
                            *d = *d + (gj - yj * dot) / nrm;
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let (x, gamma, beta) = (*x, *gamma, *beta);
                let c = out.cols();
                if wants(gamma) {
                    let gg = buf(lower, nodes, gamma);
                    for (gr, h) in g.chunks(c).zip(xhat.chunks(c)) {
                        for ((d, &gj), &hj) in gg.iter_mut().zip(gr).zip(h) {
                            *d = *d + gj * hj;
                        }
                    }
                }
                if wants(beta) {
                    let gb = buf(lower, nodes, beta);
                    for gr in g.chunks(c) {
                        for (d, &gj) in gb.iter_mut().zip(gr) {
                            *d = *d + gj;
                        }
                    }
                }
                if wants(x) {
                    let gam = nodes[gamma].value.data();
                    let cn = T::from_usize(c).unwrap();
                    let gx = buf(lower, nodes, x);
                    let mut dh = vec![T::zero(); c];
                    for (((gr, h), dst), &r) in g.chunks(c).zip(xhat.chunks(c)).zip(gx.chunks_mut(c)).zip(rstd) {
                        for j in 0..c {
                            dh[j] = gr[j] * gam[j];
                        }
                        let mean_dh = dh.iter().copied().sum::<T>() / cn;
                        let mean_dhh = dh.iter().zip(h).map(|(&a, &b)| a * b).sum::<T>() / cn;
                        for j in 0..c {
                            dst[j] = dst[j] + r * (dh[j] - mean_dh - h[j] * mean_dhh);
                        }
                    }
                }
            }
            &Op::Mean { x } => {
                if wants(x) {
                    let gx = buf(lower, nodes, x);
                    let s = g[0] / T::from_usize(gx.len()).unwrap();
                    for d in gx.iter_mut() {
                        *d = *d + s;
                    }
                }
            }
            &Op::Sum { x } => {
                if wants(x) {
                    for d in buf(lower, nodes, x).iter_mut() {
                        *d = *d + g[0];
                    }
                }
            }
            &Op::Slice { x, outer, src_axis, inner, start, len } => {
                if wants(x) {
                    let gx = buf(lower, nodes, x);
                    for o in 0..outer {
                        let base = (o * src_axis + start) * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        for (d, &s) in gx[base..base + len * inner].iter_mut().zip(src) {
                            *d = *d + s;
                        }
                    }
                }
            }
            Op::Concat { xs, outer, inner } => {
                let total: usize = xs.iter().map(|p| p.1).sum();
                let mut offset = 0;
                for &(idx, len) in xs {
                    if wants(idx) {
                        let gx = buf(lower, nodes, idx);
                        for o in 0..*outer {
                            let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                            for (d, &s) in gx[o * len * inner..(o + 1) * len * inner].iter_mut().zip(src) {
                                *d = *d + s;
                            }
                        }
                    }
                    offset += len;
                }
            }
            &Op::Reshape { x } => {
                if wants(x) {
                    for (d, &s) in buf(lower, nodes, x).iter_mut().zip(g) {
                        *d = *d + s;
                    }
                }
            }
            Op::Permute { x, axes } => {
                let x = *x;
                if wants(x) {
                    let shape = nodes[x].value.shape().to_vec();
                    let gx = buf(lower, nodes, x);
                    for_each_permuted(&shape, axes, |o, i| gx[i] = gx[i] + g[o]);
                }
            }
            Op::GatherRows { x, idx } => {
                let x = *x;
                if wants(x) {
                    let c = out.cols();
                    let gx = buf(lower, nodes, x);
                    for (r, &src) in idx.iter().enumerate() {
                        for j in 0..c {
                            gx[src * c + j] = gx[src * c + j] + g[r * c + j];
                        }
                    }
                }
            }
            &Op::Tile { x, n } => {
                if wants(x) {
                    let gx = buf(lower, nodes, x);
                    let len = gx.len();
                    for t in 0..n {
                        for (d, &s) in gx.iter_mut().zip(&g[t * len..(t + 1) * len]) {
                            *d = *d + s;
                        }
                    }
                }
            }
            Op::CrossEntropy { target, logq, rows } => {
                let logq = *logq;
                if wants(logq) {
                    let s = g[0] / T::from_usize(*rows).unwrap();
                    for (d, &t) in buf(lower, nodes, logq).iter_mut().zip(target) {
                        *d = *d - t * s;
                    }
                }
            }
        }
    }
}

/// Rows at or below this Euclidean norm cannot be projected onto the sphere.
pub const NORM_EPS: f64 = 1e-8;
pub const LAYER_NORM_EPS: f64 = 1e-6;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn gelu<T: Real>(x: T) -> T {
    let half = T::lit(0.5);
    half * x * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let half = T::lit(0.5);
    let cdf = half * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = T::lit(FRAC_1_SQRT_2PI) * (-(x * x) * half).exp();
    cdf + x * pdf
}

/// Row-wise softmax of `x / tau` outside any tape.
pub fn softmax_rows_array<T: Real>(x: &Array<T>, tau: T) -> Result<Array<T>> {
    if !(tau > T::zero()) {
        return Err(Error::Config(format!("softmax temperature must be positive, got {tau}")));
    }
    let d = x.cols();
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks(d) {
        softmax_into(row, tau, &mut out);
    }
    Array::new(x.shape().to_vec(), out)
}

pub(crate) fn softmax_into<T: Real>(row: &[T], tau: T, out: &mut Vec<T>) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v / tau));
    let start = out.len();
    let mut total = T::zero();
    for &v in row {
        let e = (v / tau - max).exp();
        total = total + e;
        out.push(e);
    }
    for e in &mut out[start..] {
        *e = *e / total;
    }
}

/// Result of [`Tape::backward`]: one gradient per `requires_grad` node.
pub struct Gradients<T> {
    grads: Vec<Option<Array<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of `v`, or `None` when `v` does not require gradients.
    pub fn get(&self, v: Var) -> Option<&Array<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Array<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
