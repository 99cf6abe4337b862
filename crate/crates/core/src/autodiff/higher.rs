//! Gradients built as graph nodes, so they can be differentiated again.

use super::{Graph, Op, Var};
use crate::tensor::{Result, Tensor, TensorError};

impl Graph {
    /// Gradient of `sum(output)` with respect to `wrt`, emitted as new nodes.
    ///
    /// Only nodes on a path from `wrt` to `output` are differentiated, and
    /// each must belong to the twice-differentiable subset (matmul, add, sub,
    /// mul, scale, relu, tanh, sigmoid, mean, sum, slice, concat, reshape,
    /// conv1d through its signal, and the adjoint helpers those produce).
    pub fn grad(&mut self, output: Var, wrt: Var) -> Result<Var> {
        let end = output.0;
        let mut on_path = vec![false; end + 1];
        if wrt.0 <= end {
            on_path[wrt.0] = true;
            for i in wrt.0 + 1..=end {
                on_path[i] = self.nodes[i].inputs.iter().any(|&j| on_path[j]);
            }
        }
        if wrt.0 > end || !on_path[end] {
            let z = Tensor::zeros(self.shape(wrt));
            return Ok(self.constant(z));
        }
        let mut adj: Vec<Option<Var>> = vec![None; end + 1];
        let seed = Tensor::ones(self.shape(output));
        adj[end] = Some(self.constant(seed));
        for i in (wrt.0 + 1..=end).rev() {
            if !on_path[i] {
                continue;
            }
            let Some(g) = adj[i] else { continue };
            let op = self.nodes[i].op.clone();
            let inputs = self.nodes[i].inputs.clone();
            for (pos, &inp) in inputs.iter().enumerate() {
                if !on_path[inp] {
                    continue;
                }
                let contrib = self.symbolic_vjp(&op, Var(i), &inputs, pos, g)?;
                adj[inp] = Some(match adj[inp] {
                    Some(acc) => self.add(acc, contrib)?,
                    None => contrib,
                });
            }
        }
        match adj[wrt.0] {
            Some(g) => Ok(g),
            None => {
                let z = Tensor::zeros(self.shape(wrt));
                Ok(self.constant(z))
            }
        }
    }

    /// `‖∂ sum(output) / ∂ wrt‖₂` as a differentiable scalar node.
    pub fn grad_norm_graph(&mut self, output: Var, wrt: Var) -> Result<Var> {
        let g = self.grad(output, wrt)?;
        let n = self.value(g).numel();
        let flat = self.reshape(g, &[n])?;
        self.l2_norm(flat)
    }

    fn symbolic_vjp(&mut self, op: &Op, out: Var, inputs: &[usize], pos: usize, g: Var) -> Result<Var> {
        let x = |p: usize| Var(inputs[p]);
        match op {
            Op::Add | Op::Sub => {
                let shape = self.shape(x(pos)).to_vec();
                let r = self.sum_to(g, &shape)?;
                if matches!(op, Op::Sub) && pos == 1 {
                    self.neg(r)
                } else {
                    Ok(r)
                }
            }
            Op::Mul => {
                let other = x(1 - pos);
                let shape = self.shape(x(pos)).to_vec();
                let prod = self.mul(g, other)?;
                self.sum_to(prod, &shape)
            }
            Op::Scale(s) => self.scale(g, *s),
            Op::AddScalar => Ok(g),
            Op::Tanh => {
                let y2 = self.mul(out, out)?;
                let neg = self.scale(y2, -1.0)?;
                let d = self.add_scalar(neg, 1.0)?;
                self.mul(g, d)
            }
            Op::Sigmoid => {
                let neg = self.scale(out, -1.0)?;
                let one_minus = self.add_scalar(neg, 1.0)?;
                let d = self.mul(out, one_minus)?;
                self.mul(g, d)
            }
            Op::Relu => {
                // derivative of the step mask is zero almost everywhere
                let mask = self.value(x(0)).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
                let m = self.constant(mask);
                self.mul(g, m)
            }
            Op::MatMul => {
                let (a, b) = (x(0), x(1));
                if pos == 0 {
                    let bt = self.transpose(b)?;
                    self.matmul(g, bt)
                } else {
                    let k = self.shape(b)[0];
                    let n = self.shape(b)[1];
                    let m = self.value(a).numel() / k;
                    let a2 = self.reshape(a, &[m, k])?;
                    let at = self.transpose(a2)?;
                    let g2 = self.reshape(g, &[m, n])?;
                    self.matmul(at, g2)
                }
            }
            Op::Mean => {
                let shape = self.shape(x(0)).to_vec();
                let n = self.value(x(0)).numel() as f64;
                let s = self.scale(g, 1.0 / n)?;
                self.broadcast_to(s, &shape)
            }
            Op::Sum | Op::SumTo => {
                let shape = self.shape(x(0)).to_vec();
                self.broadcast_to(g, &shape)
            }
            Op::BroadcastTo => {
                let shape = self.shape(x(0)).to_vec();
                self.sum_to(g, &shape)
            }
            Op::Slice { axis, start } => {
                let full = self.shape(x(0))[*axis];
                self.pad(g, *axis, *start, full)
            }
            Op::Pad { axis, start } => {
                let len = self.shape(x(0))[*axis];
                self.slice(g, *axis, *start, len)
            }
            Op::Concat { axis } => {
                let offset: usize = inputs[..pos].iter().map(|&j| self.nodes[j].value.shape()[*axis]).sum();
                let len = self.shape(x(pos))[*axis];
                self.slice(g, *axis, offset, len)
            }
            Op::Reshape => {
                let shape = self.shape(x(0)).to_vec();
                self.reshape(g, &shape)
            }
            Op::Transpose => self.transpose(g),
            Op::Conv1d if pos == 0 => {
                let flipped = self.kernel_flip(x(1))?;
                self.conv1d(g, flipped)
            }
            Op::Conv1d => Err(TensorError::UnsupportedSecondOrder("conv1d (kernel path)")),
            Op::KernelFlip => self.kernel_flip(g),
            other => Err(TensorError::UnsupportedSecondOrder(other.name())),
        }
    }
}
