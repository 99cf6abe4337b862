//! Numeric reverse pass.

use super::ops::{col2im, flip_kernel, im2col, sigmoid, split_axis};
use super::{Graph, Op, Var};
use crate::tensor::{broadcast_index_map, gemm, sum_to_shape, Result, Tensor, TensorError};

/// Gradients of a scalar with respect to every trainable leaf of a graph.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a trainable leaf; zeros when the leaf does not reach the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn wrt(&self, v: Var) -> &Tensor {
        self.get(v).expect("no gradient recorded for this variable")
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

impl Graph {
    /// Reverse-mode gradients of a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (pos, gi) in self.vjp(i, &g) {
                let input = node.inputs[pos];
                if self.nodes[input].requires_grad {
                    accumulate(&mut grads[input], gi);
                }
            }
        }
        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match (&node.op, node.requires_grad) {
                (Op::Leaf, true) => Some(match g {
                    Some(g) => Tensor::from_parts(node.value.shape().to_vec(), g),
                    None => Tensor::zeros(node.value.shape()),
                }),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    /// Vector-Jacobian products of node `i` for each input position that needs one.
    fn vjp(&self, i: usize, g: &[f64]) -> Vec<(usize, Vec<f64>)> {
        let node = &self.nodes[i];
        let out = &node.value;
        let input = |p: usize| &self.nodes[node.inputs[p]].value;
        let wants = |p: usize| self.nodes[node.inputs[p]].requires_grad;
        let mut res = Vec::with_capacity(node.inputs.len());
        match &node.op {
            Op::Leaf => {}
            Op::MatMul => {
                let (a, b) = (input(0), input(1));
                let (k, n) = (b.shape()[0], b.shape()[1]);
                let m = a.numel() / k;
                if wants(0) {
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g, false, b.data(), true, &mut ga, false);
                    res.push((0, ga));
                }
                if wants(1) {
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, a.data(), true, g, false, &mut gb, false);
                    res.push((1, gb));
                }
            }
            Op::BatchMatMul => {
                let (a, b) = (input(0), input(1));
                let (bs, m, k, n) = (a.shape()[0], a.shape()[1], a.shape()[2], b.shape()[2]);
                if wants(0) {
                    let mut ga = vec![0.0; bs * m * k];
                    for s in 0..bs {
                        gemm(
                            m,
                            n,
                            k,
                            &g[s * m * n..(s + 1) * m * n],
                            false,
                            &b.data()[s * k * n..(s + 1) * k * n],
                            true,
                            &mut ga[s * m * k..(s + 1) * m * k],
                            false,
                        );
                    }
                    res.push((0, ga));
                }
                if wants(1) {
                    let mut gb = vec![0.0; bs * k * n];
                    for s in 0..bs {
                        gemm(
                            k,
                            m,
                            n,
                            &a.data()[s * m * k..(s + 1) * m * k],
                            true,
                            &g[s * m * n..(s + 1) * m * n],
                            false,
                            &mut gb[s * k * n..(s + 1) * k * n],
                            false,
                        );
                    }
                    res.push((1, gb));
                }
            }
            Op::Add | Op::Sub => {
                let sign = if matches!(node.op, Op::Sub) { -1.0 } else { 1.0 };
                if wants(0) {
                    res.push((0, sum_to_shape(g, out.shape(), input(0).shape())));
                }
                if wants(1) {
                    let mut gb = sum_to_shape(g, out.shape(), input(1).shape());
                    if sign < 0.0 {
                        gb.iter_mut().for_each(|x| *x = -*x);
                    }
                    res.push((1, gb));
                }
            }
            Op::Mul => {
                let (a, b) = (input(0), input(1));
                for (p, other) in [(0, b), (1, a)] {
                    if !wants(p) {
                        continue;
                    }
                    let prod: Vec<f64> = if other.shape() == out.shape() {
                        g.iter().zip(other.data()).map(|(x, y)| x * y).collect()
                    } else {
                        let map = broadcast_index_map(out.shape(), other.shape());
                        g.iter().zip(&map).map(|(x, &j)| x * other.data()[j]).collect()
                    };
                    res.push((p, sum_to_shape(&prod, out.shape(), input(p).shape())));
                }
            }
            Op::Scale(s) => res.push((0, g.iter().map(|x| x * s).collect())),
            Op::AddScalar => res.push((0, g.to_vec())),
            Op::Tanh => res.push((0, g.iter().zip(out.data()).map(|(g, y)| g * (1.0 - y * y)).collect())),
            Op::Sigmoid => res.push((0, g.iter().zip(out.data()).map(|(g, y)| g * y * (1.0 - y)).collect())),
            Op::Relu => res.push((
                0,
                g.iter()
                    .zip(input(0).data())
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect(),
            )),
            Op::Softmax => {
                let w = *out.shape().last().unwrap();
                let mut gx = vec![0.0; g.len()];
                for ((gr, yr), dr) in g.chunks(w).zip(out.data().chunks(w)).zip(gx.chunks_mut(w)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((d, gv), yv) in dr.iter_mut().zip(gr).zip(yr) {
                        *d = yv * (gv - dot);
                    }
                }
                res.push((0, gx));
            }
            Op::LogSoftmax => {
                let w = *out.shape().last().unwrap();
                let mut gx = vec![0.0; g.len()];
                for ((gr, yr), dr) in g.chunks(w).zip(out.data().chunks(w)).zip(gx.chunks_mut(w)) {
                    let s: f64 = gr.iter().sum();
                    for ((d, gv), yv) in dr.iter_mut().zip(gr).zip(yr) {
                        *d = gv - yv.exp() * s;
                    }
                }
                res.push((0, gx));
            }
            Op::CrossEntropy {
                targets,
                ignore,
                probs,
                count,
            } => {
                let v = probs.shape()[1];
                let mut gx = vec![0.0; probs.numel()];
                if *count > 0 {
                    let scale = g[0] / *count as f64;
                    for (r, &y) in targets.iter().enumerate() {
                        if Some(y) == *ignore {
                            continue;
                        }
                        let row = &mut gx[r * v..(r + 1) * v];
                        for (d, p) in row.iter_mut().zip(&probs.data()[r * v..(r + 1) * v]) {
                            *d = p * scale;
                        }
                        row[y] -= scale;
                    }
                }
                res.push((0, gx));
            }
            Op::BceWithLogits { targets } => {
                let n = targets.len() as f64;
                let gx = input(0)
                    .data()
                    .iter()
                    .zip(targets.iter())
                    .map(|(&x, &y)| g[0] * (sigmoid(x) - y) / n)
                    .collect();
                res.push((0, gx));
            }
            Op::Concat { axis } => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut offset = 0;
                for p in 0..node.inputs.len() {
                    let len = input(p).shape()[*axis];
                    if wants(p) {
                        let mut gp = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            gp.extend_from_slice(&g[base..base + len * inner]);
                        }
                        res.push((p, gp));
                    }
                    offset += len;
                }
            }
            Op::Slice { axis, start } => {
                let (outer, full, inner) = split_axis(input(0).shape(), *axis);
                let len = out.shape()[*axis];
                let mut gx = vec![0.0; outer * full * inner];
                for o in 0..outer {
                    let dst = (o * full + start) * inner;
                    gx[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                res.push((0, gx));
            }
            Op::Pad { axis, start } => {
                let (outer, full, inner) = split_axis(out.shape(), *axis);
                let len = input(0).shape()[*axis];
                let mut gx = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    gx.extend_from_slice(&g[base..base + len * inner]);
                }
                res.push((0, gx));
            }
            Op::Mean => {
                let n = input(0).numel();
                res.push((0, vec![g[0] / n as f64; n]));
            }
            Op::Sum => res.push((0, vec![g[0]; input(0).numel()])),
            Op::SumTo => {
                let s = input(0).shape();
                let map = broadcast_index_map(s, out.shape());
                res.push((0, map.iter().map(|&j| g[j]).collect()));
            }
            Op::BroadcastTo => res.push((0, sum_to_shape(g, out.shape(), input(0).shape()))),
            Op::L2Norm => {
                let x = input(0);
                let w = *x.shape().last().unwrap();
                let mut gx = vec![0.0; x.numel()];
                for (r, (xr, dr)) in x.data().chunks(w).zip(gx.chunks_mut(w)).enumerate() {
                    let norm = out.data()[r];
                    if norm > 0.0 {
                        for (d, xv) in dr.iter_mut().zip(xr) {
                            *d = g[r] * xv / norm;
                        }
                    }
                }
                res.push((0, gx));
            }
            Op::Conv1d => {
                let (x, w) = (input(0), input(1));
                let (k, cin, cout) = (w.shape()[0], w.shape()[1], w.shape()[2]);
                let sx = x.shape();
                let (b, t) = if sx.len() == 3 { (sx[0], sx[1]) } else { (1, sx[0]) };
                if wants(0) {
                    let mut dcol = vec![0.0; b * t * k * cin];
                    gemm(b * t, cout, k * cin, g, false, w.data(), true, &mut dcol, false);
                    res.push((0, col2im(&dcol, b, t, cin, k)));
                }
                if wants(1) {
                    let col = im2col(x.data(), b, t, cin, k);
                    let mut gw = vec![0.0; k * cin * cout];
                    gemm(k * cin, b * t, cout, &col, true, g, false, &mut gw, false);
                    res.push((1, gw));
                }
            }
            Op::KernelFlip => {
                let s = out.shape();
                res.push((0, flip_kernel(g, s[0], s[1], s[2])));
            }
            Op::Reshape => res.push((0, g.to_vec())),
            Op::Transpose => {
                let (m, n) = (out.shape()[0], out.shape()[1]);
                let mut gx = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        gx[j * m + i] = g[i * n + j];
                    }
                }
                res.push((0, gx));
            }
            Op::GatherRows { ids } => {
                let table = input(0);
                let e = table.shape()[1];
                let mut gx = vec![0.0; table.numel()];
                for (r, &id) in ids.iter().enumerate() {
                    for (d, v) in gx[id * e..(id + 1) * e].iter_mut().zip(&g[r * e..(r + 1) * e]) {
                        *d += v;
                    }
                }
                res.push((0, gx));
            }
        }
        res
    }
}
