use rand::Rng;

use super::{Bound, ParamStore, FORGET_BIAS};
use crate::autodiff::{Graph, Var};
use crate::tensor::Result;

const GATES: [&str; 4] = ["i", "f", "g", "o"];

/// Create the gate weights `{prefix}.w_{i,f,g,o}: (input+hidden) x hidden`
/// and biases `{prefix}.b_*`, with the forget bias set to [`FORGET_BIAS`].
pub fn init_lstm<R: Rng + ?Sized>(p: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut R) {
    for gate in GATES {
        p.init_uniform(&format!("{prefix}.w_{gate}"), &[input + hidden, hidden], rng);
        let bias = if gate == "f" { FORGET_BIAS } else { 0.0 };
        p.init_const(&format!("{prefix}.b_{gate}"), &[hidden], bias);
    }
}

/// Gate weights of one cell fused into a single `(input+hidden) x 4·hidden`
/// matrix for the duration of a graph.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w: Var,
    pub b: Var,
    pub hidden: usize,
}

impl LstmVars {
    pub fn bind(g: &mut Graph, b: &Bound, prefix: &str) -> Result<Self> {
        let ws: Vec<Var> = GATES.iter().map(|k| b.get(&format!("{prefix}.w_{k}"))).collect();
        let bs: Vec<Var> = GATES.iter().map(|k| b.get(&format!("{prefix}.b_{k}"))).collect();
        let hidden = g.shape(bs[0])[0];
        let w = g.concat(&ws, 1)?;
        let bias = g.concat(&bs, 0)?;
        Ok(LstmVars { w, b: bias, hidden })
    }
}

/// One LSTM step on a batch: `x: [b, input]`, `h, c: [b, hidden]`.
///
/// `i, f, o = σ(·)`, `g = tanh(·)`, `c' = f∘c + i∘g`, `h' = o∘tanh(c')`.
pub fn lstm_step(g: &mut Graph, x: Var, h: Var, c: Var, p: &LstmVars) -> Result<(Var, Var)> {
    let n = p.hidden;
    let xh = g.concat(&[x, h], 1)?;
    let z = g.matmul(xh, p.w)?;
    let z = g.add(z, p.b)?;
    let zi = g.slice(z, 1, 0, n)?;
    let zf = g.slice(z, 1, n, n)?;
    let zg = g.slice(z, 1, 2 * n, n)?;
    let zo = g.slice(z, 1, 3 * n, n)?;
    let i = g.sigmoid(zi)?;
    let f = g.sigmoid(zf)?;
    let gg = g.tanh(zg)?;
    let o = g.sigmoid(zo)?;
    let fc = g.mul(f, c)?;
    let ig = g.mul(i, gg)?;
    let c2 = g.add(fc, ig)?;
    let tc = g.tanh(c2)?;
    let h2 = g.mul(o, tc)?;
    Ok((h2, c2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::tensor::Tensor;

    fn run(p: &ParamStore, x: &Tensor, h: &Tensor, c: &Tensor) -> (Tensor, Tensor) {
        let mut g = Graph::new();
        let b = p.bind(&mut g, |_| false);
        let vars = LstmVars::bind(&mut g, &b, "cell").unwrap();
        let (xv, hv, cv) = (g.constant(x.clone()), g.constant(h.clone()), g.constant(c.clone()));
        let (h2, c2) = lstm_step(&mut g, xv, hv, cv, &vars).unwrap();
        (g.value(h2).clone(), g.value(c2).clone())
    }

    fn zero_params(input: usize, hidden: usize) -> ParamStore {
        let mut p = ParamStore::new();
        for gate in GATES {
            p.init_const(&format!("cell.w_{gate}"), &[input + hidden, hidden], 0.0);
            p.init_const(&format!("cell.b_{gate}"), &[hidden], 0.0);
        }
        p
    }

    #[test]
    fn zero_weights_halve_cell() {
        let p = zero_params(3, 4);
        let c = Tensor::new(vec![1, 4], vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        let (h2, c2) = run(&p, &Tensor::ones(&[1, 3]), &Tensor::ones(&[1, 4]), &c);
        for ((&cv, &c2v), &hv) in c.data().iter().zip(c2.data()).zip(h2.data()) {
            assert!((c2v - 0.5 * cv).abs() < 1e-15);
            assert!((hv - 0.5 * (0.5 * cv).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn all_zero_gives_zero_hidden() {
        let p = zero_params(2, 3);
        let (h2, _) = run(&p, &Tensor::zeros(&[1, 2]), &Tensor::zeros(&[1, 3]), &Tensor::zeros(&[1, 3]));
        assert!(h2.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_sets_forget_bias() {
        let mut p = ParamStore::new();
        init_lstm(&mut p, "cell", 3, 5, &mut seeded(0));
        assert!(p.get("cell.b_f").unwrap().data().iter().all(|&v| v == 1.0));
        assert!(p.get("cell.b_i").unwrap().data().iter().all(|&v| v == 0.0));
        assert_eq!(p.get("cell.w_o").unwrap().shape(), &[8, 5]);
    }

    /// Independent scalar-loop LSTM.
    fn oracle(p: &ParamStore, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hidden = h.len();
        let xh: Vec<f64> = x.iter().chain(h).copied().collect();
        let pre = |gate: &str, j: usize| -> f64 {
            let w = p.get(&format!("cell.w_{gate}")).unwrap();
            let b = p.get(&format!("cell.b_{gate}")).unwrap();
            let mut s = b.data()[j];
            for (r, &v) in xh.iter().enumerate() {
                s += v * w.data()[r * hidden + j];
            }
            s
        };
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut h2 = vec![0.0; hidden];
        let mut c2 = vec![0.0; hidden];
        for j in 0..hidden {
            let i = sig(pre("i", j));
            let f = sig(pre("f", j));
            let gg = pre("g", j).tanh();
            let o = sig(pre("o", j));
            c2[j] = f * c[j] + i * gg;
            h2[j] = o * c2[j].tanh();
        }
        (h2, c2)
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut rng = seeded(21);
        let mut p = ParamStore::new();
        let (input, hidden) = (4, 6);
        for gate in GATES {
            p.insert(format!("cell.w_{gate}"), Tensor::uniform(&[input + hidden, hidden], -1.0, 1.0, &mut rng));
            p.insert(format!("cell.b_{gate}"), Tensor::uniform(&[hidden], -1.0, 1.0, &mut rng));
        }
        let x = Tensor::uniform(&[2, input], -2.0, 2.0, &mut rng);
        let h = Tensor::uniform(&[2, hidden], -1.0, 1.0, &mut rng);
        let c = Tensor::uniform(&[2, hidden], -3.0, 3.0, &mut rng);
        let (h2, c2) = run(&p, &x, &h, &c);
        for b in 0..2 {
            let (eh, ec) = oracle(&p, x.row(b), h.row(b), c.row(b));
            for j in 0..hidden {
                assert!((h2.row(b)[j] - eh[j]).abs() < 1e-12);
                assert!((c2.row(b)[j] - ec[j]).abs() < 1e-12);
                assert!(h2.row(b)[j].abs() < 1.0);
            }
        }
    }
}
