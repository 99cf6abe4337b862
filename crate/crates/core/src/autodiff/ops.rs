//! Forward definitions of the graph operations.

use std::sync::Arc;

use super::{Graph, Op, Var};
use crate::tensor::{broadcast_binary, broadcast_shape, gemm, sum_to_shape, Result, Tensor, TensorError};

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn invalid(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::Invalid { op, msg: msg.into() }
}

/// `(outer, axis_len, inner)` decomposition of a shape around `axis`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Unfold `x: [b, t, cin]` into `[b*t, k*cin]` windows with "same" zero padding.
pub(crate) fn im2col(x: &[f64], b: usize, t: usize, cin: usize, k: usize) -> Vec<f64> {
    let p = k / 2;
    let mut col = vec![0.0; b * t * k * cin];
    for bi in 0..b {
        for ti in 0..t {
            let row = &mut col[(bi * t + ti) * k * cin..(bi * t + ti + 1) * k * cin];
            for kk in 0..k {
                let src = ti + kk;
                if src < p || src - p >= t {
                    continue;
                }
                let s = src - p;
                let from = &x[(bi * t + s) * cin..(bi * t + s + 1) * cin];
                row[kk * cin..(kk + 1) * cin].copy_from_slice(from);
            }
        }
    }
    col
}

/// Adjoint of [`im2col`]: scatter-add window gradients back onto the signal.
pub(crate) fn col2im(col: &[f64], b: usize, t: usize, cin: usize, k: usize) -> Vec<f64> {
    let p = k / 2;
    let mut x = vec![0.0; b * t * cin];
    for bi in 0..b {
        for ti in 0..t {
            let row = &col[(bi * t + ti) * k * cin..(bi * t + ti + 1) * k * cin];
            for kk in 0..k {
                let src = ti + kk;
                if src < p || src - p >= t {
                    continue;
                }
                let s = src - p;
                let to = &mut x[(bi * t + s) * cin..(bi * t + s + 1) * cin];
                for (d, v) in to.iter_mut().zip(&row[kk * cin..(kk + 1) * cin]) {
                    *d += v;
                }
            }
        }
    }
    x
}

/// `[k, a, b] -> [k, b, a]`, reversing the tap axis.
pub(crate) fn flip_kernel(w: &[f64], k: usize, a: usize, b: usize) -> Vec<f64> {
    let mut out = vec![0.0; w.len()];
    for kk in 0..k {
        for i in 0..a {
            for j in 0..b {
                out[((k - 1 - kk) * b + j) * a + i] = w[(kk * a + i) * b + j];
            }
        }
    }
    out
}

pub(crate) fn softmax_rows(x: &[f64], width: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (src, dst) in x.chunks(width).zip(out.chunks_mut(width)) {
        let m = src.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut z = 0.0;
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - m).exp();
            z += *d;
        }
        for d in dst.iter_mut() {
            *d /= z;
        }
    }
    out
}

pub(crate) fn log_softmax_rows(x: &[f64], width: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (src, dst) in x.chunks(width).zip(out.chunks_mut(width)) {
        let m = src.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + src.iter().map(|&s| (s - m).exp()).sum::<f64>().ln();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = s - lse;
        }
    }
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let k = sb[0];
        let n = sb[1];
        let m = self.value(a).numel() / k;
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        let mut shape = sa;
        *shape.last_mut().unwrap() = n;
        self.push(Op::MatMul, vec![a.0, b.0], Tensor::from_parts(shape, out))
    }

    /// Batched matrix product over a leading batch axis.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(mismatch("bmm", &sa, &sb));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bs * m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for i in 0..bs {
            gemm(
                m,
                k,
                n,
                &ad[i * m * k..(i + 1) * m * k],
                false,
                &bd[i * k * n..(i + 1) * k * n],
                false,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        self.push(Op::BatchMatMul, vec![a.0, b.0], Tensor::from_parts(vec![bs, m, n], out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = broadcast_binary("add", self.value(a), self.value(b), |x, y| x + y)?;
        self.push(Op::Add, vec![a.0, b.0], v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = broadcast_binary("sub", self.value(a), self.value(b), |x, y| x - y)?;
        self.push(Op::Sub, vec![a.0, b.0], v)
    }

    /// Elementwise product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = broadcast_binary("mul", self.value(a), self.value(b), |x, y| x * y)?;
        self.push(Op::Mul, vec![a.0, b.0], v)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x * s);
        self.push(Op::Scale(s), vec![a.0], v)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let v = self.value(a).map(|x| x + s);
        self.push(Op::AddScalar, vec![a.0], v)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh, vec![a.0], v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid, vec![a.0], v)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu, vec![a.0], v)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let w = *t.shape().last().unwrap();
        let v = Tensor::from_parts(t.shape().to_vec(), softmax_rows(t.data(), w));
        self.push(Op::Softmax, vec![a.0], v)
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let w = *t.shape().last().unwrap();
        let v = Tensor::from_parts(t.shape().to_vec(), log_softmax_rows(t.data(), w));
        self.push(Op::LogSoftmax, vec![a.0], v)
    }

    /// Mean token cross-entropy of `logits: [n, v]` against integer targets.
    /// Rows whose target equals `ignore` contribute nothing; if every row is
    /// ignored the loss is zero.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], ignore: Option<usize>) -> Result<Var> {
        let t = self.value(logits);
        if t.ndim() != 2 || t.shape()[0] != targets.len() {
            return Err(mismatch("cross_entropy", t.shape(), &[targets.len()]));
        }
        let v = t.shape()[1];
        if let Some(&bad) = targets.iter().find(|&&y| y >= v && Some(y) != ignore) {
            return Err(invalid("cross_entropy", format!("target id {bad} out of range for {v} classes")));
        }
        let logp = log_softmax_rows(t.data(), v);
        let mut total = 0.0;
        let mut count = 0;
        for (i, &y) in targets.iter().enumerate() {
            if Some(y) == ignore {
                continue;
            }
            total -= logp[i * v + y];
            count += 1;
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let probs = Tensor::from_parts(t.shape().to_vec(), logp.iter().map(|x| x.exp()).collect());
        self.push(
            Op::CrossEntropy {
                targets: Arc::new(targets.to_vec()),
                ignore,
                probs,
                count,
            },
            vec![logits.0],
            Tensor::scalar(loss),
        )
    }

    /// Mean binary cross-entropy of sigmoid(`logits`) against `targets` in [0, 1].
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let t = self.value(logits);
        if t.numel() != targets.len() {
            return Err(mismatch("bce_with_logits", t.shape(), &[targets.len()]));
        }
        let n = targets.len() as f64;
        let loss = t
            .data()
            .iter()
            .zip(targets)
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        self.push(
            Op::BceWithLogits {
                targets: Arc::new(targets.to_vec()),
            },
            vec![logits.0],
            Tensor::scalar(loss),
        )
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(invalid("concat", "no inputs"));
        }
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(invalid("concat", format!("axis {axis} out of range for {first:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let same_rank = s.len() == first.len();
            if !same_rank || s.iter().enumerate().any(|(i, &d)| i != axis && d != first[i]) {
                return Err(mismatch("concat", &first, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let inputs = parts.iter().map(|p| p.0).collect();
        self.push(Op::Concat { axis }, inputs, Tensor::from_parts(shape, out))
    }

    /// `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(invalid("slice", format!("[{start}, {}) on axis {axis} of {s:?}", start + len)));
        }
        let (outer, alen, inner) = split_axis(&s, axis);
        let d = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * alen + start) * inner;
            out.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        self.push(Op::Slice { axis, start }, vec![a.0], Tensor::from_parts(shape, out))
    }

    pub(crate) fn pad(&mut self, a: Var, axis: usize, start: usize, full: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if start + s[axis] > full {
            return Err(invalid("pad", format!("{s:?} at {start} exceeds {full}")));
        }
        let (outer, len, inner) = split_axis(&s, axis);
        let d = self.value(a).data();
        let mut out = vec![0.0; outer * full * inner];
        for o in 0..outer {
            let dst = (o * full + start) * inner;
            out[dst..dst + len * inner].copy_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
        }
        let mut shape = s;
        shape[axis] = full;
        self.push(Op::Pad { axis, start }, vec![a.0], Tensor::from_parts(shape, out))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let v = t.sum() / t.numel() as f64;
        self.push(Op::Mean, vec![a.0], Tensor::scalar(v))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).sum();
        self.push(Op::Sum, vec![a.0], Tensor::scalar(v))
    }

    /// Reduce by summation onto a shape `a` broadcasts from.
    pub fn sum_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s == shape {
            return Ok(a);
        }
        if broadcast_shape(shape, &s).as_deref() != Some(&s[..]) {
            return Err(mismatch("sum_to", &s, shape));
        }
        let data = sum_to_shape(self.value(a).data(), &s, shape);
        self.push(Op::SumTo, vec![a.0], Tensor::from_parts(shape.to_vec(), data))
    }

    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s == shape {
            return Ok(a);
        }
        if broadcast_shape(&s, shape).as_deref() != Some(shape) {
            return Err(mismatch("broadcast_to", &s, shape));
        }
        let zeros = Tensor::zeros(shape);
        let v = broadcast_binary("broadcast_to", &zeros, self.value(a), |_, y| y)?;
        self.push(Op::BroadcastTo, vec![a.0], v)
    }

    /// Euclidean norm over the last axis. A 1-D input yields shape `[1]`.
    pub fn l2_norm(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let w = *t.shape().last().unwrap();
        let data: Vec<f64> = t
            .data()
            .chunks(w)
            .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let shape = if t.ndim() == 1 {
            vec![1]
        } else {
            t.shape()[..t.ndim() - 1].to_vec()
        };
        self.push(Op::L2Norm, vec![a.0], Tensor::from_parts(shape, data))
    }

    /// One-dimensional convolution with "same" zero padding.
    ///
    /// `signal` is `[t, cin]` or `[b, t, cin]`; `kernels` is `[k, cin, cout]`
    /// with odd `k`.
    pub fn conv1d(&mut self, signal: Var, kernels: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(signal).to_vec(), self.shape(kernels).to_vec());
        if sw.len() != 3 || !(2..=3).contains(&sx.len()) || sx[sx.len() - 1] != sw[1] {
            return Err(mismatch("conv1d", &sx, &sw));
        }
        let (k, cin, cout) = (sw[0], sw[1], sw[2]);
        if k % 2 == 0 {
            return Err(invalid("conv1d", format!("kernel width {k} must be odd")));
        }
        let (b, t) = if sx.len() == 3 { (sx[0], sx[1]) } else { (1, sx[0]) };
        let col = im2col(self.value(signal).data(), b, t, cin, k);
        let mut out = vec![0.0; b * t * cout];
        gemm(b * t, k * cin, cout, &col, false, self.value(kernels).data(), false, &mut out, false);
        let mut shape = sx;
        *shape.last_mut().unwrap() = cout;
        self.push(Op::Conv1d, vec![signal.0, kernels.0], Tensor::from_parts(shape, out))
    }

    /// `[k, a, b] -> [k, b, a]` with the tap axis reversed; turns a kernel into
    /// the kernel of its adjoint convolution.
    pub fn kernel_flip(&mut self, w: Var) -> Result<Var> {
        let s = self.shape(w).to_vec();
        if s.len() != 3 {
            return Err(invalid("kernel_flip", format!("expected rank 3, got {s:?}")));
        }
        let data = flip_kernel(self.value(w).data(), s[0], s[1], s[2]);
        self.push(Op::KernelFlip, vec![w.0], Tensor::from_parts(vec![s[0], s[2], s[1]], data))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if self.shape(a) == shape {
            return Ok(a);
        }
        let v = self.value(a).reshape(shape)?;
        self.push(Op::Reshape, vec![a.0], v)
    }

    /// Transpose of a matrix.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(invalid("transpose", format!("expected a matrix, got {s:?}")));
        }
        let (m, n) = (s[0], s[1]);
        let d = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        self.push(Op::Transpose, vec![a.0], Tensor::from_parts(vec![n, m], out))
    }

    /// Row lookup `table[ids]`, i.e. an embedding layer.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 || ids.is_empty() {
            return Err(invalid("gather_rows", format!("table {s:?} with {} ids", ids.len())));
        }
        let (v, e) = (s[0], s[1]);
        let d = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            if id >= v {
                return Err(invalid("gather_rows", format!("id {id} out of range for {v} rows")));
            }
            out.extend_from_slice(&d[id * e..(id + 1) * e]);
        }
        self.push(
            Op::GatherRows { ids: Arc::new(ids.to_vec()) },
            vec![table.0],
            Tensor::from_parts(vec![ids.len(), e], out),
        )
    }
}
