//! Finite-difference validation of analytic gradients.
//!
//! The central-difference oracle here only ever evaluates forward values, so
//! it stays independent of the reverse pass it checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, Var};
use crate::tensor::{Result, Tensor};

/// Tolerance for first-order op checks.
pub const FIRST_ORDER_TOL: f64 = 1e-4;
/// Tolerance for gradient-penalty (second-order) checks.
pub const SECOND_ORDER_TOL: f64 = 1e-3;
pub const DEFAULT_EPS: f64 = 1e-5;

/// Central-difference gradient of a scalar function.
pub fn numeric_gradient(f: impl Fn(&Tensor) -> f64, x: &Tensor, eps: f64) -> Tensor {
    let mut data = x.to_vec();
    let mut grad = vec![0.0; data.len()];
    for i in 0..data.len() {
        let orig = data[i];
        data[i] = orig + eps;
        let up = f(&Tensor::from_parts(x.shape().to_vec(), data.clone()));
        data[i] = orig - eps;
        let down = f(&Tensor::from_parts(x.shape().to_vec(), data.clone()));
        data[i] = orig;
        grad[i] = (up - down) / (2.0 * eps);
    }
    Tensor::from_parts(x.shape().to_vec(), grad)
}

/// `max_i |a_i − n_i| / max(1, |n_i|)`; NaN anywhere makes the result NaN.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    let mut worst = 0.0f64;
    for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
        let e = (a - n).abs() / n.abs().max(1.0);
        if e.is_nan() {
            return f64::NAN;
        }
        worst = worst.max(e);
    }
    worst
}

/// Compare the reverse-mode gradient of `f` at `x` with central differences.
/// Returns the maximum relative error, or NaN when `f` fails or is not finite.
pub fn finite_diff_check<F>(f: F, x: &Tensor, eps: f64) -> f64
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    assert!(eps > 0.0, "eps must be positive");
    let eval = |t: &Tensor| -> f64 {
        let mut g = Graph::new();
        let v = g.constant(t.clone());
        match f(&mut g, v) {
            Ok(y) if g.value(y).is_scalar() => g.value(y).item(),
            _ => f64::NAN,
        }
    };
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let analytic = match f(&mut g, xv).and_then(|y| g.backward(y)) {
        Ok(grads) => grads.wrt(xv).clone(),
        Err(_) => return f64::NAN,
    };
    let numeric = numeric_gradient(eval, x, eps);
    max_relative_error(&analytic, &numeric)
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

type Case = (&'static str, fn(&mut ChaCha8Rng) -> f64);

fn rand_shape(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(1..=8), rng.random_range(1..=8))
}

fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// Values bounded away from zero so kinked ops are smooth within `eps`.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    rand_t(shape, rng).map(|v| if v >= 0.0 { v + 0.05 } else { v - 0.05 })
}

/// Reduce `y` with a fixed random weighting so every output coordinate matters.
fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_t(g.shape(y), &mut rng);
    let wv = g.constant(w);
    let p = g.mul(y, wv)?;
    g.sum(p)
}

fn check_unary(x: &Tensor, op: impl Fn(&mut Graph, Var) -> Result<Var>) -> f64 {
    finite_diff_check(
        |g, v| {
            let y = op(g, v)?;
            weighted_sum(g, y, 99)
        },
        x,
        DEFAULT_EPS,
    )
}

fn first_order_cases() -> Vec<Case> {
    vec![
        ("matmul (lhs)", |r| {
            let (m, k) = rand_shape(r);
            let n = r.random_range(1..=8);
            let b = rand_t(&[k, n], r);
            check_unary(&rand_t(&[m, k], r), move |g, v| {
                let bv = g.constant(b.clone());
                g.matmul(v, bv)
            })
        }),
        ("matmul (rhs)", |r| {
            let (m, k) = rand_shape(r);
            let n = r.random_range(1..=8);
            let a = rand_t(&[m, k], r);
            check_unary(&rand_t(&[k, n], r), move |g, v| {
                let av = g.constant(a.clone());
                g.matmul(av, v)
            })
        }),
        ("bmm", |r| {
            let (m, k) = rand_shape(r);
            let b = rand_t(&[3, k, 4], r);
            check_unary(&rand_t(&[3, m, k], r), move |g, v| {
                let bv = g.constant(b.clone());
                g.bmm(v, bv)
            })
        }),
        ("add (broadcast)", |r| {
            let (m, n) = rand_shape(r);
            let a = rand_t(&[m, n], r);
            check_unary(&rand_t(&[n], r), move |g, v| {
                let av = g.constant(a.clone());
                g.add(av, v)
            })
        }),
        ("sub", |r| {
            let (m, n) = rand_shape(r);
            let a = rand_t(&[m, n], r);
            check_unary(&rand_t(&[m, n], r), move |g, v| {
                let av = g.constant(a.clone());
                g.sub(av, v)
            })
        }),
        ("mul (broadcast)", |r| {
            let (m, n) = rand_shape(r);
            let a = rand_t(&[m, n], r);
            check_unary(&rand_t(&[m, 1], r), move |g, v| {
                let av = g.constant(a.clone());
                g.mul(av, v)
            })
        }),
        ("scale", |r| {
            let (m, n) = rand_shape(r);
            check_unary(&rand_t(&[m, n], r), |g, v| g.scale(v, -2.5))
        }),
        ("add_scalar", |r| {
            let (m, n) = rand_shape(r);
            check_unary(&rand_t(&[m, n], r), |g, v| g.add_scalar(v, 0.7))
        }),
        ("tanh", |r| {
            let (m, n) = rand_shape(r);
            check_unary(&rand_t(&[m, n], r), |g, v| g.tanh(v))
        }),
        ("sigmoid", |r| {
            let (m, n) = rand_shape(r);
            check_unary(&rand_t(&[m, n], r), |g, v| g.sigmoid(v))
        }),
        ("relu", |r| {
            let (m, n) = rand_shape(r);
            check_unary(&away_from_zero(&[m, n], r), |g, v| g.relu(v))
        }),
        ("softmax", |r| {
            let (m, n) = rand_shape(r);
            check_unary(&rand_t(&[m, n], r), |g, v| g.softmax(v))
        }),
        ("log_softmax", |r| {
            let (m, n) = rand_shape(r);
            check_unary(&rand_t(&[m, n], r), |g, v| g.log_softmax(v))
        }),
        ("cross_entropy", |r| {
            let (m, n) = rand_shape(r);
            let targets: Vec<usize> = (0..m).map(|i| if i == 0 { n } else { r.random_range(0..n) }).collect();
            finite_diff_check(
                move |g, v| g.cross_entropy(v, &targets, Some(n)),
                &rand_t(&[m, n], r),
                DEFAULT_EPS,
            )
        }),
        ("bce_with_logits", |r| {
            let (m, _) = rand_shape(r);
            let targets: Vec<f64> = (0..m).map(|_| r.random_range(0.0..1.0)).collect();
            finite_diff_check(
                move |g, v| g.bce_with_logits(v, &targets),
                &rand_t(&[m, 1], r),
                DEFAULT_EPS,
            )
        }),
        ("concat", |r| {
            let (m, n) = rand_shape(r);
            let other = rand_t(&[m, 3], r);
            check_unary(&rand_t(&[m, n], r), move |g, v| {
                let o = g.constant(other.clone());
                g.concat(&[o, v, o], 1)
            })
        }),
        ("slice", |r| {
            let (m, n) = rand_shape(r);
            let start = r.random_range(0..n);
            let len = r.random_range(1..=n - start);
            check_unary(&rand_t(&[m, n], r), move |g, v| g.slice(v, 1, start, len))
        }),
        ("pad", |r| {
            let (m, n) = rand_shape(r);
            check_unary(&rand_t(&[m, n], r), |g, v| g.pad(v, 0, 1, m_plus(g, v, 3)))
        }),
        ("mean", |r| {
            let (m, n) = rand_shape(r);
            check_unary(&rand_t(&[m, n], r), |g, v| g.mean(v))
        }),
        ("sum", |r| {
            let (m, n) = rand_shape(r);
            check_unary(&rand_t(&[m, n], r), |g, v| g.sum(v))
        }),
        ("sum_to", |r| {
            let (m, n) = rand_shape(r);
            check_unary(&rand_t(&[2, m, n], r), move |g, v| g.sum_to(v, &[m, 1]))
        }),
        ("broadcast_to", |r| {
            let (m, n) = rand_shape(r);
            check_unary(&rand_t(&[m, 1], r), move |g, v| g.broadcast_to(v, &[2, m, n]))
        }),
        ("l2_norm", |r| {
            let (m, n) = rand_shape(r);
            check_unary(&away_from_zero(&[m, n], r), |g, v| g.l2_norm(v))
        }),
        ("conv1d (signal)", |r| {
            let (t, cin) = rand_shape(r);
            let w = rand_t(&[3, cin, 4], r);
            check_unary(&rand_t(&[2, t, cin], r), move |g, v| {
                let wv = g.constant(w.clone());
                g.conv1d(v, wv)
            })
        }),
        ("conv1d (kernel)", |r| {
            let (t, cin) = rand_shape(r);
            let x = rand_t(&[t, cin], r);
            check_unary(&rand_t(&[5, cin, 3], r), move |g, v| {
                let xv = g.constant(x.clone());
                g.conv1d(xv, v)
            })
        }),
        ("kernel_flip", |r| {
            let (a, b) = rand_shape(r);
            check_unary(&rand_t(&[3, a, b], r), |g, v| g.kernel_flip(v))
        }),
        ("reshape", |r| {
            let (m, n) = rand_shape(r);
            check_unary(&rand_t(&[m, n], r), move |g, v| g.reshape(v, &[n, m]))
        }),
        ("transpose", |r| {
            let (m, n) = rand_shape(r);
            check_unary(&rand_t(&[m, n], r), |g, v| g.transpose(v))
        }),
        ("gather_rows", |r| {
            let (m, n) = rand_shape(r);
            let ids: Vec<usize> = (0..6).map(|_| r.random_range(0..m)).collect();
            check_unary(&rand_t(&[m, n], r), move |g, v| g.gather_rows(v, &ids))
        }),
        ("gaussian_noise_add", |r| {
            let (m, n) = rand_shape(r);
            check_unary(&rand_t(&[m, n], r), |g, v| {
                let mut noise_rng = ChaCha8Rng::seed_from_u64(5);
                g.gaussian_noise_add(v, 0.3, &mut noise_rng)
            })
        }),
    ]
}

fn m_plus(g: &Graph, v: Var, extra: usize) -> usize {
    g.shape(v)[0] + extra
}

/// Every forward op against central differences, over `seeds`.
pub fn run_op_suite(seeds: impl Iterator<Item = u64> + Clone) -> Vec<CheckReport> {
    first_order_cases()
        .into_iter()
        .map(|(name, case)| {
            let worst = seeds.clone().fold(0.0f64, |w, s| {
                let e = case(&mut ChaCha8Rng::seed_from_u64(s));
                if e.is_nan() || w.is_nan() {
                    f64::NAN
                } else {
                    w.max(e)
                }
            });
            CheckReport {
                name: name.to_string(),
                max_rel_err: worst,
                tol: FIRST_ORDER_TOL,
            }
        })
        .collect()
}

/// Small two-layer conv critic `[t, c] -> score`, built from the
/// twice-differentiable subset.
fn toy_critic(g: &mut Graph, x: Var, params: &[Var; 4], smooth: bool) -> Result<Var> {
    let h = g.conv1d(x, params[0])?;
    let h = g.add(h, params[1])?;
    let h = if smooth { g.tanh(h)? } else { g.relu(h)? };
    let h = g.conv1d(h, params[2])?;
    let n = g.value(h).numel();
    let flat = g.reshape(h, &[1, n])?;
    let s = g.matmul(flat, params[3])?;
    g.sum(s)
}

fn penalty_value(g: &mut Graph, x: &Tensor, params: &[Var; 4], smooth: bool) -> Result<Var> {
    let xv = g.leaf(x.clone());
    let d = toy_critic(g, xv, params, smooth)?;
    let norm = g.grad_norm_graph(d, xv)?;
    let dev = g.add_scalar(norm, -1.0)?;
    g.square(dev)
}

fn toy_params(rng: &mut ChaCha8Rng, c: usize, t: usize) -> [Tensor; 4] {
    [
        rand_t(&[3, c, 4], rng),
        rand_t(&[4], rng),
        rand_t(&[3, 4, 2], rng),
        rand_t(&[t * 2, 1], rng),
    ]
}

/// Gradient penalty `(‖∇ₓD(x)‖ − 1)²` differentiated wrt the critic weights,
/// against central differences of the penalty value.
pub fn gradient_penalty_check(seed: u64, smooth: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t, c) = (rng.random_range(2..=6), rng.random_range(1..=4));
    let x = rand_t(&[t, c], &mut rng);
    let params = toy_params(&mut rng, c, t);
    let eval = |ps: &[Tensor; 4]| -> f64 {
        let mut g = Graph::new();
        let pv = [0, 1, 2, 3].map(|i| g.constant(ps[i].clone()));
        penalty_value(&mut g, &x, &pv, smooth).map_or(f64::NAN, |p| g.value(p).item())
    };
    let mut g = Graph::new();
    let pv = [0, 1, 2, 3].map(|i| g.leaf(params[i].clone()));
    let grads = match penalty_value(&mut g, &x, &pv, smooth).and_then(|p| g.backward(p)) {
        Ok(gr) => gr,
        Err(_) => return f64::NAN,
    };
    let mut worst = 0.0f64;
    for i in 0..4 {
        let numeric = numeric_gradient(
            |p| {
                let mut ps = params.clone();
                ps[i] = p.clone();
                eval(&ps)
            },
            &params[i],
            DEFAULT_EPS,
        );
        let e = max_relative_error(grads.wrt(pv[i]), &numeric);
        if e.is_nan() {
            return f64::NAN;
        }
        worst = worst.max(e);
    }
    worst
}

/// Forward value of the symbolic gradient against the numeric reverse pass.
pub fn symbolic_gradient_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t, c) = (rng.random_range(2..=6), rng.random_range(1..=4));
    let x = rand_t(&[t, c], &mut rng);
    let params = toy_params(&mut rng, c, t);
    let mut g = Graph::new();
    let pv = [0, 1, 2, 3].map(|i| g.constant(params[i].clone()));
    let xv = g.leaf(x);
    let run = |g: &mut Graph| -> Result<f64> {
        let d = toy_critic(g, xv, &pv, true)?;
        let sym = g.grad(d, xv)?;
        let num = g.backward(d)?;
        Ok(max_relative_error(g.value(sym), num.wrt(xv)))
    };
    run(&mut g).unwrap_or(f64::NAN)
}

pub fn run_second_order_suite(seeds: impl Iterator<Item = u64> + Clone) -> Vec<CheckReport> {
    let fold = |f: &dyn Fn(u64) -> f64| {
        seeds.clone().fold(0.0f64, |w, s| {
            let e = f(s);
            if e.is_nan() || w.is_nan() {
                f64::NAN
            } else {
                w.max(e)
            }
        })
    };
    vec![
        CheckReport {
            name: "symbolic gradient value".into(),
            max_rel_err: fold(&symbolic_gradient_check),
            tol: FIRST_ORDER_TOL,
        },
        CheckReport {
            name: "gradient penalty (tanh critic)".into(),
            max_rel_err: fold(&|s| gradient_penalty_check(s, true)),
            tol: SECOND_ORDER_TOL,
        },
        CheckReport {
            name: "gradient penalty (relu critic)".into(),
            max_rel_err: fold(&|s| gradient_penalty_check(s, false)),
            tol: SECOND_ORDER_TOL,
        },
    ]
}
