use std::sync::Arc;

use super::{Real, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-column statistics of a training-mode batch normalization, used by the
/// caller to update running estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased (n - 1) variance.
    pub var: Vec<T>,
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    /// Shared by layer norm (per row) and batch norm (per column).
    Normalize {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        axis: NormAxis,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        pad: usize,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Gather {
        x: Var,
        idx: Arc<[usize]>,
    },
    ScatterAdd {
        x: Var,
        idx: Arc<[usize]>,
    },
    SegmentSoftmax {
        x: Var,
        seg: Arc<[usize]>,
    },
    BlockSum {
        x: Var,
        block: usize,
    },
    BlockExpand {
        x: Var,
        block: usize,
    },
    Transpose(Var),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    MeanRows(Var),
    Sum(Var),
    Mse {
        pred: Var,
        target: Var,
    },
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum NormAxis {
    /// Layer norm: statistics over each row.
    Rows,
    /// Batch norm with batch statistics over each column.
    BatchColumns,
    /// Batch norm with frozen running statistics.
    FrozenColumns,
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records one forward pass. Values are kept for the backward sweep; the
/// tape is dropped after gradients have been read out.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar loss with respect to every node that required them.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

fn require_rank<T: Real>(op: &'static str, t: &Tensor<T>, rank: usize) -> Result<(), TensorError> {
    if t.shape().len() != rank {
        return Err(TensorError::Rank {
            op,
            expected: rank,
            shape: t.shape().to_vec(),
        });
    }
    Ok(())
}

/// Period of `b` when broadcast against `a` over leading dimensions.
fn broadcast_period(a: &[usize], b: &[usize]) -> Option<usize> {
    if a == b {
        return Some(a.iter().product());
    }
    let first = b.iter().position(|&d| d != 1).unwrap_or(b.len());
    let core = &b[first..];
    if core.len() <= a.len() && a[a.len() - core.len()..] == *core {
        Some(core.iter().product())
    } else {
        None
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// `a [n×k] · b [k×m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        require_rank("matmul", av, 2)?;
        require_rank("matmul", bv, 2)?;
        let (n, k, m) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        if bv.shape()[0] != k {
            return Err(mismatch("matmul", av.shape(), bv.shape()));
        }
        let out = matmul_raw(av.data(), bv.data(), n, k, m);
        let value = Tensor::new(vec![n, m], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// `x · w + bias`, with `bias` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var, TensorError> {
        let y = self.matmul(x, w)?;
        match bias {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    fn binary(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        let period =
            broadcast_period(av.shape(), bv.shape()).ok_or_else(|| mismatch(op_name, av.shape(), bv.shape()))?;
        let bd = bv.data();
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bd[i % period]))
            .collect();
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(value, op, &[a, b]))
    }

    /// Elementwise sum; `b` may broadcast over the leading dims of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).map(|v| v * c);
        self.push(value, Op::Scale(a, c), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let value = self.value(a).map(|v| v + c);
        self.push(value, Op::AddScalar(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(value, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a), &[a])
    }

    /// Softmax over the last dimension, stabilized by max subtraction.
    pub fn softmax_lastdim(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let cols = av.cols().max(1);
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(cols) {
            softmax_in_place(row);
        }
        let value = Tensor {
            shape: av.shape().to_vec(),
            data,
        };
        self.push(value, Op::Softmax(a), &[a])
    }

    fn check_affine_params(&self, op: &'static str, width: usize, gain: Var, bias: Var) -> Result<(), TensorError> {
        for p in [gain, bias] {
            if self.value(p).len() != width {
                return Err(mismatch(op, &[width], self.value(p).shape()));
            }
        }
        Ok(())
    }

    /// Per-row normalization to zero mean and unit variance, then `gain ⊙ · + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var, TensorError> {
        let xv = self.value(x);
        require_rank("layer_norm", xv, 2)?;
        let (n, d) = (xv.shape()[0], xv.shape()[1]);
        self.check_affine_params("layer_norm", d, gain, bias)?;
        let dn = T::lit(d as f64);
        let mut xhat = Vec::with_capacity(n * d);
        let mut inv_std = Vec::with_capacity(n);
        for r in 0..n {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            xhat.extend(row.iter().map(|&v| (v - mean) * is));
        }
        let out = self.affine_columns(&xhat, d, gain, bias);
        let value = Tensor::new(vec![n, d], out)?;
        Ok(self.push(
            value,
            Op::Normalize {
                x,
                gain,
                bias,
                xhat,
                inv_std,
                axis: NormAxis::Rows,
            },
            &[x, gain, bias],
        ))
    }

    fn affine_columns(&self, xhat: &[T], d: usize, gain: Var, bias: Var) -> Vec<T> {
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        xhat.iter().enumerate().map(|(i, &v)| v * g[i % d] + b[i % d]).collect()
    }

    /// Batch normalization using the statistics of the current batch (rows).
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        eps: T,
    ) -> Result<(Var, BatchStats<T>), TensorError> {
        let xv = self.value(x);
        require_rank("batch_norm", xv, 2)?;
        let (n, d) = (xv.shape()[0], xv.shape()[1]);
        self.check_affine_params("batch_norm", d, gain, bias)?;
        let nn = T::lit(n as f64);
        let mut mean = vec![T::zero(); d];
        for r in 0..n {
            for (m, &v) in mean.iter_mut().zip(xv.row(r)) {
                *m = *m + v;
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / nn);
        let mut ss = vec![T::zero(); d];
        for r in 0..n {
            for ((s, &v), &m) in ss.iter_mut().zip(xv.row(r)).zip(&mean) {
                *s = *s + (v - m) * (v - m);
            }
        }
        let inv_std: Vec<T> = ss.iter().map(|&s| T::one() / (s / nn + eps).sqrt()).collect();
        let unbiased = if n > 1 {
            let denom = T::lit((n - 1) as f64);
            ss.iter().map(|&s| s / denom).collect()
        } else {
            vec![T::zero(); d]
        };
        let xhat: Vec<T> = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - mean[i % d]) * inv_std[i % d])
            .collect();
        let out = self.affine_columns(&xhat, d, gain, bias);
        let value = Tensor::new(vec![n, d], out)?;
        let stats = BatchStats { mean, var: unbiased };
        let v = self.push(
            value,
            Op::Normalize {
                x,
                gain,
                bias,
                xhat,
                inv_std,
                axis: NormAxis::BatchColumns,
            },
            &[x, gain, bias],
        );
        Ok((v, stats))
    }

    /// Batch normalization with frozen running statistics: a fixed affine map per column.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
    ) -> Result<Var, TensorError> {
        let xv = self.value(x);
        require_rank("batch_norm", xv, 2)?;
        let (n, d) = (xv.shape()[0], xv.shape()[1]);
        self.check_affine_params("batch_norm", d, gain, bias)?;
        if running_mean.len() != d || running_var.len() != d {
            return Err(mismatch("batch_norm", &[d], &[running_mean.len()]));
        }
        let inv_std: Vec<T> = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let xhat: Vec<T> = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| (v - running_mean[i % d]) * inv_std[i % d])
            .collect();
        let out = self.affine_columns(&xhat, d, gain, bias);
        let value = Tensor::new(vec![n, d], out)?;
        Ok(self.push(
            value,
            Op::Normalize {
                x,
                gain,
                bias,
                xhat,
                inv_std,
                axis: NormAxis::FrozenColumns,
            },
            &[x, gain, bias],
        ))
    }

    /// Stride-1, dilation-1 convolution of `x [c_in × L]` with
    /// `w [c_out × c_in × k]` and zero padding `pad` on both sides.
    /// Output is `[c_out × (L + 2·pad − k + 1)]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, pad: usize) -> Result<Var, TensorError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        require_rank("conv1d", xv, 2)?;
        require_rank("conv1d", wv, 3)?;
        let (cin, len) = (xv.shape()[0], xv.shape()[1]);
        let (cout, wcin, k) = (wv.shape()[0], wv.shape()[1], wv.shape()[2]);
        if wcin != cin {
            return Err(mismatch("conv1d", xv.shape(), wv.shape()));
        }
        if bv.len() != cout {
            return Err(mismatch("conv1d", wv.shape(), bv.shape()));
        }
        if len + 2 * pad < k {
            return Err(mismatch("conv1d", xv.shape(), wv.shape()));
        }
        let lout = len + 2 * pad - k + 1;
        let (xd, wd, bd) = (xv.data(), wv.data(), bv.data());
        let mut out = vec![T::zero(); cout * lout];
        for co in 0..cout {
            let orow = &mut out[co * lout..(co + 1) * lout];
            orow.iter_mut().for_each(|v| *v = bd[co]);
            for ci in 0..cin {
                let xrow = &xd[ci * len..(ci + 1) * len];
                for j in 0..k {
                    let wgt = wd[(co * cin + ci) * k + j];
                    // input position = t + j - pad
                    let (t0, t1) = valid_range(j, pad, len, lout);
                    for t in t0..t1 {
                        orow[t] = orow[t] + wgt * xrow[t + j - pad];
                    }
                }
            }
        }
        let value = Tensor::new(vec![cout, lout], out)?;
        Ok(self.push(value, Op::Conv1d { x, w, b, pad }, &[x, w, b]))
    }

    /// Per-row maximum of `x [c × L]`, returned as `[1 × c]`.
    pub fn maxpool_global(&mut self, x: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        require_rank("maxpool_global", xv, 2)?;
        let (c, len) = (xv.shape()[0], xv.shape()[1]);
        if len == 0 {
            return Err(TensorError::Empty { op: "maxpool_global" });
        }
        let mut argmax = Vec::with_capacity(c);
        let mut out = Vec::with_capacity(c);
        for r in 0..c {
            let row = xv.row(r);
            let mut best = 0;
            for (t, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = t;
                }
            }
            argmax.push(best);
            out.push(row[best]);
        }
        let value = Tensor::new(vec![1, c], out)?;
        Ok(self.push(value, Op::MaxPool { x, argmax }, &[x]))
    }

    /// Rows of `table [V × d]` selected by `indices`.
    pub fn embedding_lookup(&mut self, table: Var, indices: &[usize]) -> Result<Var, TensorError> {
        self.gather_rows(table, indices.into())
    }

    /// `out[r] = x[idx[r]]`.
    pub fn gather_rows(&mut self, x: Var, idx: Arc<[usize]>) -> Result<Var, TensorError> {
        let xv = self.value(x);
        require_rank("gather_rows", xv, 2)?;
        let (n, d) = (xv.shape()[0], xv.shape()[1]);
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx.iter() {
            if i >= n {
                return Err(TensorError::IndexOutOfBounds {
                    op: "gather_rows",
                    index: i,
                    bound: n,
                });
            }
            out.extend_from_slice(xv.row(i));
        }
        let value = Tensor::new(vec![idx.len(), d], out)?;
        Ok(self.push(value, Op::Gather { x, idx }, &[x]))
    }

    /// `out[idx[r]] += x[r]`, producing `rows` output rows.
    pub fn scatter_add_rows(&mut self, x: Var, idx: Arc<[usize]>, rows: usize) -> Result<Var, TensorError> {
        let xv = self.value(x);
        require_rank("scatter_add_rows", xv, 2)?;
        let (m, d) = (xv.shape()[0], xv.shape()[1]);
        if idx.len() != m {
            return Err(mismatch("scatter_add_rows", xv.shape(), &[idx.len()]));
        }
        let mut out = vec![T::zero(); rows * d];
        for (r, &i) in idx.iter().enumerate() {
            if i >= rows {
                return Err(TensorError::IndexOutOfBounds {
                    op: "scatter_add_rows",
                    index: i,
                    bound: rows,
                });
            }
            for (o, &v) in out[i * d..(i + 1) * d].iter_mut().zip(xv.row(r)) {
                *o = *o + v;
            }
        }
        let value = Tensor::new(vec![rows, d], out)?;
        Ok(self.push(value, Op::ScatterAdd { x, idx }, &[x]))
    }

    /// Softmax of each column of `x [m × c]` taken separately within every
    /// group of rows sharing the same `segment[r]` label.
    pub fn segment_softmax(&mut self, x: Var, segment: Arc<[usize]>) -> Result<Var, TensorError> {
        let xv = self.value(x);
        require_rank("segment_softmax", xv, 2)?;
        let (m, c) = (xv.shape()[0], xv.shape()[1]);
        if segment.len() != m {
            return Err(mismatch("segment_softmax", xv.shape(), &[segment.len()]));
        }
        let nseg = segment.iter().max().map_or(0, |&s| s + 1);
        let mut max = vec![T::neg_infinity(); nseg * c];
        for (r, &s) in segment.iter().enumerate() {
            for (mx, &v) in max[s * c..(s + 1) * c].iter_mut().zip(xv.row(r)) {
                if v > *mx {
                    *mx = v;
                }
            }
        }
        let mut out: Vec<T> = Vec::with_capacity(m * c);
        let mut denom = vec![T::zero(); nseg * c];
        for (r, &s) in segment.iter().enumerate() {
            for (col, &v) in xv.row(r).iter().enumerate() {
                let e = (v - max[s * c + col]).exp();
                denom[s * c + col] = denom[s * c + col] + e;
                out.push(e);
            }
        }
        for (r, &s) in segment.iter().enumerate() {
            for col in 0..c {
                out[r * c + col] = out[r * c + col] / denom[s * c + col];
            }
        }
        let value = Tensor::new(vec![m, c], out)?;
        Ok(self.push(value, Op::SegmentSoftmax { x, seg: segment }, &[x]))
    }

    /// Sums consecutive column blocks: `[m × (c·block)] → [m × c]`.
    pub fn block_sum(&mut self, x: Var, block: usize) -> Result<Var, TensorError> {
        let xv = self.value(x);
        require_rank("block_sum", xv, 2)?;
        let (m, w) = (xv.shape()[0], xv.shape()[1]);
        if block == 0 || w % block != 0 {
            return Err(mismatch("block_sum", xv.shape(), &[block]));
        }
        let out: Vec<T> = xv.data().chunks(block).map(|ch| ch.iter().copied().sum()).collect();
        let value = Tensor::new(vec![m, w / block], out)?;
        Ok(self.push(value, Op::BlockSum { x, block }, &[x]))
    }

    /// Repeats every column `block` times: `[m × c] → [m × (c·block)]`.
    pub fn block_expand(&mut self, x: Var, block: usize) -> Result<Var, TensorError> {
        let xv = self.value(x);
        require_rank("block_expand", xv, 2)?;
        let (m, c) = (xv.shape()[0], xv.shape()[1]);
        let out: Vec<T> = xv.data().iter().flat_map(|&v| std::iter::repeat_n(v, block)).collect();
        let value = Tensor::new(vec![m, c * block], out)?;
        Ok(self.push(value, Op::BlockExpand { x, block }, &[x]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        require_rank("transpose", xv, 2)?;
        let (r, c) = (xv.shape()[0], xv.shape()[1]);
        let value = Tensor::new(vec![c, r], transpose_raw(xv.data(), r, c))?;
        Ok(self.push(value, Op::Transpose(x), &[x]))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::Empty { op: "concat_cols" })?;
        let rows = self.value(first).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let pv = self.value(p);
            require_rank("concat_cols", pv, 2)?;
            if pv.rows() != rows {
                return Err(mismatch("concat_cols", self.value(first).shape(), pv.shape()));
            }
            widths.push(pv.cols());
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::new(vec![rows, total], out)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::Empty { op: "stack_rows" })?;
        let cols = self.value(first).cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return Err(mismatch("stack_rows", self.value(first).shape(), pv.shape()));
            }
            rows += pv.rows();
            out.extend_from_slice(pv.data());
        }
        let value = Tensor::new(vec![rows, cols], out)?;
        Ok(self.push(value, Op::StackRows(parts.to_vec()), parts))
    }

    /// Column means of `x [n × d]`, as `[1 × d]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        require_rank("mean_rows", xv, 2)?;
        let (n, d) = (xv.shape()[0], xv.shape()[1]);
        if n == 0 {
            return Err(TensorError::Empty { op: "mean_rows" });
        }
        let mut out = vec![T::zero(); d];
        for r in 0..n {
            for (o, &v) in out.iter_mut().zip(xv.row(r)) {
                *o = *o + v;
            }
        }
        let nn = T::lit(n as f64);
        out.iter_mut().for_each(|o| *o = *o / nn);
        let value = Tensor::new(vec![1, d], out)?;
        Ok(self.push(value, Op::MeanRows(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Mean squared error over all entries.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var, TensorError> {
        let (pv, tv) = (self.value(pred), self.value(target));
        if pv.len() != tv.len() || pv.is_empty() {
            return Err(mismatch("mse_loss", pv.shape(), tv.shape()));
        }
        let n = T::lit(pv.len() as f64);
        let s = pv
            .data()
            .iter()
            .zip(tv.data())
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum::<T>()
            / n;
        Ok(self.push(Tensor::scalar(s), Op::Mse { pred, target }, &[pred, target]))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NotScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        Ok(Gradients {
            grads: grads
                .into_iter()
                .zip(&self.nodes)
                .map(|(g, n)| {
                    g.map(|d| Tensor {
                        shape: n.value.shape.clone(),
                        data: d,
                    })
                })
                .collect(),
        })
    }

    /// Gradient buffer of `v`, or `None` when `v` does not need one.
    fn buf<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.len()]))
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k, m) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if let Some(ga) = self.buf(grads, *a) {
                    // dA = G · Bᵀ
                    for r in 0..n {
                        let grow = &g[r * m..(r + 1) * m];
                        for kk in 0..k {
                            let brow = &bv.data()[kk * m..(kk + 1) * m];
                            let dot: T = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                            ga[r * k + kk] = ga[r * k + kk] + dot;
                        }
                    }
                }
                if let Some(gb) = self.buf(grads, *b) {
                    // dB = Aᵀ · G
                    for r in 0..n {
                        let grow = &g[r * m..(r + 1) * m];
                        for kk in 0..k {
                            let a_rk = av.data()[r * k + kk];
                            if a_rk == T::zero() {
                                continue;
                            }
                            for (o, &gv) in gb[kk * m..(kk + 1) * m].iter_mut().zip(grow) {
                                *o = *o + a_rk * gv;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -T::one()
                } else {
                    T::one()
                };
                if let Some(ga) = self.buf(grads, *a) {
                    for (o, &gv) in ga.iter_mut().zip(g) {
                        *o = *o + gv;
                    }
                }
                let period = self.value(*b).len();
                if let Some(gb) = self.buf(grads, *b) {
                    for (i, &gv) in g.iter().enumerate() {
                        gb[i % period] = gb[i % period] + sign * gv;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let period = bd.len();
                if let Some(ga) = self.buf(grads, *a) {
                    for (i, &gv) in g.iter().enumerate() {
                        ga[i] = ga[i] + gv * bd[i % period];
                    }
                }
                if let Some(gb) = self.buf(grads, *b) {
                    for (i, &gv) in g.iter().enumerate() {
                        gb[i % period] = gb[i % period] + gv * ad[i];
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = self.buf(grads, *a) {
                    for (o, &gv) in ga.iter_mut().zip(g) {
                        *o = *o + gv * *c;
                    }
                }
            }
            Op::AddScalar(a) => {
                if let Some(ga) = self.buf(grads, *a) {
                    for (o, &gv) in ga.iter_mut().zip(g) {
                        *o = *o + gv;
                    }
                }
            }
            Op::Relu(a) => {
                let ad = self.value(*a).data();
                if let Some(ga) = self.buf(grads, *a) {
                    for ((o, &gv), &x) in ga.iter_mut().zip(g).zip(ad) {
                        if x > T::zero() {
                            *o = *o + gv;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = self.buf(grads, *a) {
                    for ((o, &gv), &s) in ga.iter_mut().zip(g).zip(y) {
                        *o = *o + gv * s * (T::one() - s);
                    }
                }
            }
            Op::Softmax(a) => {
                let cols = node.value.cols().max(1);
                if let Some(ga) = self.buf(grads, *a) {
                    for ((orow, grow), yrow) in ga.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                        let dot: T = grow.iter().zip(yrow).map(|(&gv, &yv)| gv * yv).sum();
                        for ((o, &gv), &yv) in orow.iter_mut().zip(grow).zip(yrow) {
                            *o = *o + yv * (gv - dot);
                        }
                    }
                }
            }
            Op::Normalize {
                x,
                gain,
                bias,
                xhat,
                inv_std,
                axis,
            } => self.backprop_normalize(*x, *gain, *bias, xhat, inv_std, *axis, &node.value, g, grads),
            Op::Conv1d { x, w, b, pad } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (cin, len) = (xv.shape()[0], xv.shape()[1]);
                let (cout, k) = (wv.shape()[0], wv.shape()[2]);
                let lout = node.value.shape()[1];
                let pad = *pad;
                if let Some(gb) = self.buf(grads, *b) {
                    for co in 0..cout {
                        let s: T = g[co * lout..(co + 1) * lout].iter().copied().sum();
                        gb[co] = gb[co] + s;
                    }
                }
                if let Some(gw) = self.buf(grads, *w) {
                    for co in 0..cout {
                        let grow = &g[co * lout..(co + 1) * lout];
                        for ci in 0..cin {
                            let xrow = &xv.data()[ci * len..(ci + 1) * len];
                            for j in 0..k {
                                let (t0, t1) = valid_range(j, pad, len, lout);
                                let mut acc = T::zero();
                                for t in t0..t1 {
                                    acc = acc + grow[t] * xrow[t + j - pad];
                                }
                                let idx = (co * cin + ci) * k + j;
                                gw[idx] = gw[idx] + acc;
                            }
                        }
                    }
                }
                if let Some(gx) = self.buf(grads, *x) {
                    for co in 0..cout {
                        let grow = &g[co * lout..(co + 1) * lout];
                        for ci in 0..cin {
                            let xrow = &mut gx[ci * len..(ci + 1) * len];
                            for j in 0..k {
                                let wgt = wv.data()[(co * cin + ci) * k + j];
                                let (t0, t1) = valid_range(j, pad, len, lout);
                                for t in t0..t1 {
                                    xrow[t + j - pad] = xrow[t + j - pad] + wgt * grow[t];
                                }
                            }
                        }
                    }
                }
            }
            Op::MaxPool { x, argmax } => {
                let len = self.value(*x).cols();
                if let Some(gx) = self.buf(grads, *x) {
                    for (r, &t) in argmax.iter().enumerate() {
                        gx[r * len + t] = gx[r * len + t] + g[r];
                    }
                }
            }
            Op::Gather { x, idx } => {
                let d = self.value(*x).cols();
                if let Some(gx) = self.buf(grads, *x) {
                    for (r, &i) in idx.iter().enumerate() {
                        for (o, &gv) in gx[i * d..(i + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                            *o = *o + gv;
                        }
                    }
                }
            }
            Op::ScatterAdd { x, idx } => {
                let d = self.value(*x).cols();
                if let Some(gx) = self.buf(grads, *x) {
                    for (r, &i) in idx.iter().enumerate() {
                        for (o, &gv) in gx[r * d..(r + 1) * d].iter_mut().zip(&g[i * d..(i + 1) * d]) {
                            *o = *o + gv;
                        }
                    }
                }
            }
            Op::SegmentSoftmax { x, seg } => {
                let c = node.value.cols();
                let nseg = seg.iter().max().map_or(0, |&s| s + 1);
                let mut dot = vec![T::zero(); nseg * c];
                for (r, &s) in seg.iter().enumerate() {
                    for col in 0..c {
                        dot[s * c + col] = dot[s * c + col] + g[r * c + col] * y[r * c + col];
                    }
                }
                if let Some(gx) = self.buf(grads, *x) {
                    for (r, &s) in seg.iter().enumerate() {
                        for col in 0..c {
                            let i = r * c + col;
                            gx[i] = gx[i] + y[i] * (g[i] - dot[s * c + col]);
                        }
                    }
                }
            }
            Op::BlockSum { x, block } => {
                if let Some(gx) = self.buf(grads, *x) {
                    for (i, o) in gx.iter_mut().enumerate() {
                        *o = *o + g[i / block];
                    }
                }
            }
            Op::BlockExpand { x, block } => {
                if let Some(gx) = self.buf(grads, *x) {
                    for (i, &gv) in g.iter().enumerate() {
                        gx[i / block] = gx[i / block] + gv;
                    }
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (node.value.shape()[0], node.value.shape()[1]);
                if let Some(gx) = self.buf(grads, *x) {
                    let gt = transpose_raw(g, r, c);
                    for (o, v) in gx.iter_mut().zip(gt) {
                        *o = *o + v;
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if let Some(gp) = self.buf(grads, p) {
                        for (r, orow) in gp.chunks_mut(w).enumerate() {
                            let src = &g[r * total + offset..r * total + offset + w];
                            for (o, &gv) in orow.iter_mut().zip(src) {
                                *o = *o + gv;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if let Some(gp) = self.buf(grads, p) {
                        for (o, &gv) in gp.iter_mut().zip(&g[offset..offset + n]) {
                            *o = *o + gv;
                        }
                    }
                    offset += n;
                }
            }
            Op::MeanRows(x) => {
                let xv = self.value(*x);
                let d = xv.cols();
                let nn = T::lit(xv.rows() as f64);
                if let Some(gx) = self.buf(grads, *x) {
                    for (i, o) in gx.iter_mut().enumerate() {
                        *o = *o + g[i % d] / nn;
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(gx) = self.buf(grads, *x) {
                    for o in gx.iter_mut() {
                        *o = *o + g[0];
                    }
                }
            }
            Op::Mse { pred, target } => {
                let (pd, td) = (self.value(*pred).data(), self.value(*target).data());
                let scale = T::lit(2.0) * g[0] / T::lit(pd.len() as f64);
                if let Some(gp) = self.buf(grads, *pred) {
                    for ((o, &p), &t) in gp.iter_mut().zip(pd).zip(td) {
                        *o = *o + scale * (p - t);
                    }
                }
                if let Some(gt) = self.buf(grads, *target) {
                    for ((o, &p), &t) in gt.iter_mut().zip(pd).zip(td) {
                        *o = *o - scale * (p - t);
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_normalize(
        &self,
        x: Var,
        gain: Var,
        bias: Var,
        xhat: &[T],
        inv_std: &[T],
        axis: NormAxis,
        out: &Tensor<T>,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let (n, d) = (out.shape()[0], out.shape()[1]);
        let gd = self.value(gain).data().to_vec();
        if let Some(gg) = self.buf(grads, gain) {
            for (i, (&gv, &xh)) in g.iter().zip(xhat).enumerate() {
                gg[i % d] = gg[i % d] + gv * xh;
            }
        }
        if let Some(gb) = self.buf(grads, bias) {
            for (i, &gv) in g.iter().enumerate() {
                gb[i % d] = gb[i % d] + gv;
            }
        }
        let Some(gx) = self.buf(grads, x) else { return };
        // dxhat = g ⊙ gain
        let dxhat: Vec<T> = g.iter().enumerate().map(|(i, &gv)| gv * gd[i % d]).collect();
        match axis {
            NormAxis::Rows => {
                let dn = T::lit(d as f64);
                for r in 0..n {
                    let dh = &dxhat[r * d..(r + 1) * d];
                    let xh = &xhat[r * d..(r + 1) * d];
                    let s1: T = dh.iter().copied().sum();
                    let s2: T = dh.iter().zip(xh).map(|(&a, &b)| a * b).sum();
                    let f = inv_std[r] / dn;
                    for c in 0..d {
                        let i = r * d + c;
                        gx[i] = gx[i] + f * (dn * dh[c] - s1 - xh[c] * s2);
                    }
                }
            }
            NormAxis::BatchColumns => {
                let nn = T::lit(n as f64);
                let mut s1 = vec![T::zero(); d];
                let mut s2 = vec![T::zero(); d];
                for (i, (&dh, &xh)) in dxhat.iter().zip(xhat).enumerate() {
                    s1[i % d] = s1[i % d] + dh;
                    s2[i % d] = s2[i % d] + dh * xh;
                }
                for i in 0..n * d {
                    let c = i % d;
                    gx[i] = gx[i] + inv_std[c] / nn * (nn * dxhat[i] - s1[c] - xhat[i] * s2[c]);
                }
            }
            NormAxis::FrozenColumns => {
                for (i, &dh) in dxhat.iter().enumerate() {
                    gx[i] = gx[i] + dh * inv_std[i % d];
                }
            }
        }
    }
}

/// Output positions `t` for which input position `t + j - pad` lies in `[0, len)`.
#[inline]
fn valid_range(j: usize, pad: usize, len: usize, lout: usize) -> (usize, usize) {
    let t0 = pad.saturating_sub(j);
    let t1 = (len + pad).saturating_sub(j).min(lout);
    (t0, t1.max(t0))
}

pub(crate) fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

fn matmul_raw<T: Real>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    for r in 0..n {
        let orow = &mut out[r * m..(r + 1) * m];
        for kk in 0..k {
            let a_rk = a[r * k + kk];
            if a_rk == T::zero() {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(&b[kk * m..(kk + 1) * m]) {
                *o = *o + a_rk * bv;
            }
        }
    }
    out
}

fn transpose_raw<T: Real>(x: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn softmax_of_equal_inputs_is_uniform() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 3], &[0.0, 0.0, 0.0]));
        let y = tape.softmax_lastdim(x);
        for &v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::new(vec![1, 3], vec![1e4, -1e4, 0.0]).unwrap());
        let y = tape.softmax_lastdim(x);
        let v = tape.value(y).data();
        assert!(v.iter().all(|x| x.is_finite()));
        assert!((v.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sigmoid_at_zero() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert_eq!(sigmoid(0.0f32), 0.5);
    }

    #[test]
    fn conv_output_length() {
        let mut tape = Tape::<f64>::new();
        for (len, k, pad) in [(1000, 2, 5), (1009, 3, 7), (1021, 5, 11), (3, 5, 0)] {
            let x = tape.constant(Tensor::zeros(vec![1, len]));
            let w = tape.constant(Tensor::zeros(vec![1, 1, k]));
            let b = tape.constant(Tensor::zeros(vec![1]));
            let r = tape.conv1d(x, w, b, pad);
            if len + 2 * pad < k {
                assert!(r.is_err());
            } else {
                assert_eq!(tape.value(r.unwrap()).shape(), &[1, len + 2 * pad - k + 1]);
            }
        }
    }

    #[test]
    fn sum_grad_is_ones_and_square_grad_is_2x() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0]);

        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        let y = tape.relu(x);
        assert!(matches!(tape.backward(y), Err(TensorError::NotScalarLoss(_))));
    }

    #[test]
    fn mismatch_names_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            TensorError::ShapeMismatch {
                op: "matmul",
                left: vec![2, 3],
                right: vec![2, 3]
            }
        );
        assert!(err.to_string().contains("[2, 3]"));
    }

    #[test]
    fn broadcast_over_leading_dims() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.constant(t(&[1, 2], &[10.0, 20.0]));
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[11.0, 22.0, 13.0, 24.0]);
        let bad = tape.constant(t(&[3], &[1.0, 2.0, 3.0]));
        assert!(tape.add(a, bad).is_err());
    }

    #[test]
    fn mse_examples() {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(t(&[2], &[1.0, 2.0]));
        let z = tape.constant(t(&[2], &[0.0, 0.0]));
        let l = tape.mse_loss(p, z).unwrap();
        assert_eq!(tape.value(l).data(), &[2.5]);
        let l0 = tape.mse_loss(p, p).unwrap();
        assert_eq!(tape.value(l0).data(), &[0.0]);
        let three = tape.constant(t(&[3], &[0.0; 3]));
        assert!(tape.mse_loss(p, three).is_err());
    }

    #[test]
    fn segment_softmax_singletons_are_one() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[3, 2], &[5.0, -1.0, 0.3, 2.0, 7.0, 7.0]));
        let y = tape.segment_softmax(x, vec![0, 1, 1].into()).unwrap();
        let v = tape.value(y).data();
        assert_eq!(&v[0..2], &[1.0, 1.0]);
        assert!((v[2] + v[4] - 1.0).abs() < 1e-15);
        assert!((v[3] + v[5] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2, 4], &[1.0, 2.0, 3.0, 10.0, -5.0, 0.0, 0.5, 0.25]));
        let g = tape.constant(Tensor::filled(vec![4], 1.0));
        let b = tape.constant(Tensor::zeros(vec![4]));
        let y = tape.layer_norm(x, g, b, 1e-12).unwrap();
        for r in 0..2 {
            let row = tape.value(y).row(r);
            let mean = row.iter().sum::<f64>() / 4.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn batch_norm_eval_handles_single_row() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 2], &[3.0, -1.0]));
        let g = tape.constant(t(&[2], &[2.0, 1.0]));
        let b = tape.constant(t(&[2], &[0.5, 0.0]));
        let y = tape.batch_norm_eval(x, g, b, &[1.0, -1.0], &[4.0, 1.0], 0.0).unwrap();
        assert_eq!(tape.value(y).data(), &[2.0 * 1.0 + 0.5, 0.0]);
    }
}
