//! Recurrent policy/value network: embedding, one residual block of a gated
//! linear recurrence followed by an RMS-normalised feedforward, and zero
//! initialised policy and value readouts.
//!
//! All forward code is written against [`Ops`], so the same function drives
//! eager rollouts and taped training passes.

pub mod checkpoint;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{grad_reverse, Float, Ops, Tape, Tensor};
use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

pub const WIDTH: usize = 32;

/// Decay gate temperature in `a = exp(-C * softplus(lambda) * r)`.
const GATE_C: f64 = 8.0;

pub const NAMES: [&str; 17] = [
    "embed.w",
    "embed.b",
    "rec.gate_w",
    "rec.gate_b",
    "rec.input_w",
    "rec.input_b",
    "rec.lambda",
    "norm1.g",
    "mlp.w1",
    "mlp.b1",
    "mlp.w2",
    "mlp.b2",
    "norm2.g",
    "policy.w",
    "policy.b",
    "value.w",
    "value.b",
];

mod idx {
    pub const EW: usize = 0;
    pub const EB: usize = 1;
    pub const AW: usize = 2;
    pub const AB: usize = 3;
    pub const XW: usize = 4;
    pub const XB: usize = 5;
    pub const LAMBDA: usize = 6;
    pub const G1: usize = 7;
    pub const W1: usize = 8;
    pub const B1: usize = 9;
    pub const W2: usize = 10;
    pub const B2: usize = 11;
    pub const G2: usize = 12;
    pub const PW: usize = 13;
    pub const PB: usize = 14;
    pub const VW: usize = 15;
    pub const VB: usize = 16;
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetParams<F: Float> {
    pub obs_dim: usize,
    pub n_actions: usize,
    pub tensors: Vec<Tensor<F>>,
}

fn shapes(obs_dim: usize, n_actions: usize) -> [(usize, usize); 17] {
    let w = WIDTH;
    [
        (obs_dim, w),
        (1, w),
        (w, w),
        (1, w),
        (w, w),
        (1, w),
        (1, w),
        (1, w),
        (w, w),
        (1, w),
        (w, w),
        (1, w),
        (1, w),
        (w, n_actions),
        (1, n_actions),
        (w, 1),
        (1, 1),
    ]
}

impl<F: Float> NetParams<F> {
    /// LeCun-normal matrices, zero biases, unit gains, decay rates with
    /// `exp(-C softplus(lambda))` uniform in `[0.9, 0.999]`, zero readouts.
    pub fn init<R: Rng>(obs_dim: usize, n_actions: usize, rng: &mut R) -> Self {
        assert!(
            obs_dim > 0 && n_actions > 0,
            "network dimensions must be positive"
        );
        let shapes = shapes(obs_dim, n_actions);
        let mut tensors = Vec::with_capacity(shapes.len());
        for (k, &(r, c)) in shapes.iter().enumerate() {
            let t = match k {
                idx::EW | idx::AW | idx::XW | idx::W1 | idx::W2 => {
                    let normal = Normal::new(0.0, 1.0 / (r as f64).sqrt()).expect("finite std");
                    Tensor::from_vec(
                        r,
                        c,
                        (0..r * c)
                            .map(|_| F::from_f64(normal.sample(rng)))
                            .collect(),
                    )
                }
                idx::LAMBDA => Tensor::from_vec(
                    r,
                    c,
                    (0..c)
                        .map(|_| {
                            let a: f64 = rng.gen_range(0.9..0.999);
                            let s = -a.ln() / GATE_C;
                            F::from_f64(s.exp_m1().ln())
                        })
                        .collect(),
                ),
                idx::G1 | idx::G2 => Tensor::full(r, c, F::one()),
                _ => Tensor::zeros(r, c),
            };
            tensors.push(t);
        }
        Self {
            obs_dim,
            n_actions,
            tensors,
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flat(&self) -> Vec<F> {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[F]) {
        assert_eq!(flat.len(), self.len(), "flat parameter length");
        let mut k = 0;
        for t in &mut self.tensors {
            let n = t.len();
            t.data.copy_from_slice(&flat[k..k + n]);
            k += n;
        }
    }

    pub fn cast<G: Float>(&self) -> NetParams<G> {
        NetParams {
            obs_dim: self.obs_dim,
            n_actions: self.n_actions,
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    pub fn check_shapes(&self) -> Result<()> {
        let want = shapes(self.obs_dim, self.n_actions);
        if self.tensors.len() != want.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, got {}",
                want.len(),
                self.tensors.len()
            )));
        }
        for ((t, w), name) in self.tensors.iter().zip(want).zip(NAMES) {
            if t.shape() != w {
                return Err(Error::Shape(format!(
                    "{name}: expected {w:?}, got {:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Parameters lifted into a backend, with the decay rate precomputed.
pub struct Net<T> {
    p: Vec<T>,
    decay: T,
}

impl<T: Clone> Net<T> {
    pub fn params(&self) -> &[T] {
        &self.p
    }
}

/// Lifts parameters as constants (no gradient).
pub fn lift<F: Float, O: Ops<F>>(ops: &O, params: &NetParams<F>) -> Net<O::T> {
    let p: Vec<O::T> = params
        .tensors
        .iter()
        .map(|t| ops.constant(t.clone()))
        .collect();
    finish(ops, p)
}

/// Lifts parameters as differentiable tape leaves.
pub fn lift_tape<'t, F: Float>(
    tape: &'t Tape<F>,
    params: &NetParams<F>,
) -> Net<crate::autodiff::Var<'t, F>> {
    let p = params
        .tensors
        .iter()
        .map(|t| tape.param(t.clone()))
        .collect();
    finish(&tape, p)
}

fn finish<F: Float, O: Ops<F>>(ops: &O, p: Vec<O::T>) -> Net<O::T> {
    let decay = ops.scale(&ops.softplus(&p[idx::LAMBDA]), -GATE_C);
    Net { p, decay }
}

/// Per-step outputs for a batch of rows.
pub struct StepOut<T> {
    pub logits: T,
    pub value: T,
    pub hidden: T,
}

/// One recurrent step. `hidden` is `None` for a freshly reset state.
pub fn step<F: Float, O: Ops<F>>(
    ops: &O,
    net: &Net<O::T>,
    obs: &O::T,
    hidden: Option<&O::T>,
) -> StepOut<O::T> {
    let p = &net.p;
    let lin = |x: &O::T, w: usize, b: usize| ops.add_bias(&ops.matmul(x, &p[w]), &p[b]);
    let x = lin(obs, idx::EW, idx::EB);
    let r = ops.sigmoid(&lin(&x, idx::AW, idx::AB));
    let i = ops.sigmoid(&lin(&x, idx::XW, idx::XB));
    let a = ops.exp(&ops.mul_bias(&r, &net.decay));
    let inject = ops.mul(&ops.sqrt_one_minus_sq(&a), &ops.mul(&i, &x));
    let h = match hidden {
        Some(prev) => ops.add(&ops.mul(&a, prev), &inject),
        None => inject,
    };
    let u = ops.add(&x, &h);
    let n = ops.rms_norm(&u, &p[idx::G1]);
    let f = lin(&ops.silu(&lin(&n, idx::W1, idx::B1)), idx::W2, idx::B2);
    let out = ops.rms_norm(&ops.add(&u, &f), &p[idx::G2]);
    StepOut {
        logits: lin(&out, idx::PW, idx::PB),
        value: lin(&out, idx::VW, idx::VB),
        hidden: h,
    }
}

/// Sequence outputs: per-step logits (`rows x actions`) and values (`rows x 1`).
pub struct SeqOut<T> {
    pub logits: Vec<T>,
    pub values: Vec<T>,
    pub hidden: Option<T>,
}

/// Runs a sequence; the hidden state is zeroed before every step `l` with
/// `reset[l]`, and before step 0 when `initial` is `None`.
pub fn forward<F: Float, O: Ops<F>>(
    ops: &O,
    net: &Net<O::T>,
    obs: &[O::T],
    reset: &[bool],
    initial: Option<O::T>,
) -> Result<SeqOut<O::T>> {
    if obs.len() != reset.len() {
        return Err(Error::Shape(format!(
            "{} observation steps but {} reset flags",
            obs.len(),
            reset.len()
        )));
    }
    let mut h = initial;
    let mut out = SeqOut {
        logits: Vec::with_capacity(obs.len()),
        values: Vec::with_capacity(obs.len()),
        hidden: None,
    };
    for (o, &r) in obs.iter().zip(reset) {
        if r {
            h = None;
        }
        let s = step(ops, net, o, h.as_ref());
        out.logits.push(s.logits);
        out.values.push(s.value);
        h = Some(s.hidden);
    }
    out.hidden = h;
    Ok(out)
}

/// Numerically stable log-softmax of one row, in f64.
pub fn log_probs<F: Float>(logits: &[F]) -> Vec<f64> {
    let m = logits
        .iter()
        .fold(f64::NEG_INFINITY, |m, x| m.max(x.to_f64()));
    let lse = m + logits
        .iter()
        .map(|x| (x.to_f64() - m).exp())
        .sum::<f64>()
        .ln();
    logits.iter().map(|x| x.to_f64() - lse).collect()
}

/// Draws a categorical action; returns it with its log-probability.
pub fn sample_action<F: Float, R: Rng>(logits: &[F], rng: &mut R) -> (usize, f64) {
    let lp = log_probs(logits);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (a, &l) in lp.iter().enumerate() {
        acc += l.exp();
        if u < acc {
            return (a, l);
        }
    }
    let last = lp.len() - 1;
    (last, lp[last])
}

/// Gradient of `sum_l sum_r weight[l][r] * log pi(actions[l][r] | h_l)` via
/// backpropagation through time.
pub fn logprob_gradient<F: Float>(
    params: &NetParams<F>,
    obs: &[Tensor<F>],
    reset: &[bool],
    actions: &[Vec<usize>],
    weights: &[Vec<f64>],
) -> Result<Vec<Tensor<F>>> {
    let tape = Tape::new();
    let ops = &tape;
    let net = lift_tape(&tape, params);
    let inputs: Vec<_> = obs.iter().map(|o| tape.input(o.clone())).collect();
    let seq = forward(&ops, &net, &inputs, reset, None)?;
    let mut terms = Vec::with_capacity(obs.len());
    for (l, logits) in seq.logits.iter().enumerate() {
        let lp = ops.gather(&ops.log_softmax(logits), &actions[l]);
        let w = ops.constant(Tensor::from_vec(
            weights[l].len(),
            1,
            weights[l].iter().map(|&x| F::from_f64(x)).collect(),
        ));
        terms.push(ops.sum(&ops.mul(&lp, &w)));
    }
    let mut loss = terms[0];
    for t in &terms[1..] {
        loss = ops.add(&loss, t);
    }
    grad_reverse(&tape, &loss, net.params())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{relative_error, Eager};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(s: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(s)
    }

    fn random_obs<R: Rng>(rows: usize, dim: usize, rng: &mut R) -> Tensor<f64> {
        let mut t = Tensor::zeros(rows, dim);
        for r in 0..rows {
            let c = rng.gen_range(0..dim);
            t.data[r * dim + c] = 1.0;
        }
        t
    }

    fn randomised(seed: u64) -> NetParams<f64> {
        let mut r = rng(seed);
        let mut p = NetParams::<f64>::init(5, 3, &mut r);
        for k in [
            idx::PW,
            idx::PB,
            idx::VW,
            idx::VB,
            idx::AB,
            idx::XB,
            idx::B1,
            idx::B2,
        ] {
            for x in &mut p.tensors[k].data {
                *x = r.gen_range(-0.5..0.5);
            }
        }
        p
    }

    #[test]
    fn zero_readouts_give_uniform_policy_and_zero_value() {
        let p = NetParams::<f32>::init(5, 2, &mut rng(0));
        let net = lift(&Eager, &p);
        let obs: Vec<_> = (0..3)
            .map(|_| random_obs(4, 5, &mut rng(1)).cast())
            .collect();
        let out = forward(&Eager, &net, &obs, &[false; 3], None).unwrap();
        for (lg, v) in out.logits.iter().zip(&out.values) {
            assert!(lg.data.iter().all(|&x| x == 0.0));
            assert!(v.data.iter().all(|&x| x == 0.0));
        }
        assert_eq!(p, NetParams::<f32>::init(5, 2, &mut rng(0)));
    }

    #[test]
    fn init_decay_range() {
        let p = NetParams::<f64>::init(5, 2, &mut rng(4));
        for &l in &p.tensors[idx::LAMBDA].data {
            let a = (-GATE_C * l.exp().ln_1p()).exp();
            assert!((0.9..=0.999).contains(&a), "{a}");
        }
    }

    #[test]
    fn full_reset_equals_single_steps_and_causality() {
        let p = randomised(2);
        let net = lift(&Eager, &p);
        let mut r = rng(3);
        let obs: Vec<_> = (0..5).map(|_| random_obs(3, 5, &mut r)).collect();
        let full = forward(&Eager, &net, &obs, &[true; 5], None).unwrap();
        for (l, o) in obs.iter().enumerate() {
            let single = step(&Eager, &net, o, None);
            assert_eq!(single.logits, full.logits[l]);
        }

        let base = forward(&Eager, &net, &obs, &[true, false, false, true, false], None).unwrap();
        let mut changed = obs.clone();
        changed[2] = random_obs(3, 5, &mut rng(77));
        changed[2].data.iter_mut().for_each(|x| *x = 1.0 - *x);
        let alt = forward(
            &Eager,
            &net,
            &changed,
            &[true, false, false, true, false],
            None,
        )
        .unwrap();
        assert_eq!(base.logits[..2], alt.logits[..2]);
        assert_ne!(base.logits[2], alt.logits[2]);
        assert_eq!(base.logits[3..], alt.logits[3..]);
        assert_eq!(base.values[3..], alt.values[3..]);
    }

    #[test]
    fn sampling_frequencies() {
        let mut r = rng(5);
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| sample_action(&[50.0f32, -50.0], &mut r).0 == 0)
            .count();
        assert!(hits as f64 / n as f64 > 0.999);
        let ones = (0..n)
            .filter(|_| sample_action(&[0.0f32, 0.0], &mut r).0 == 1)
            .count();
        assert!((ones as f64 / n as f64 - 0.5).abs() < 0.02);
        let lp = log_probs(&[0.3f64, -1.0, 2.0]);
        assert!((lp.iter().map(|l| l.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
        let (a, l) = sample_action(&[0.3f64, -1.0, 2.0], &mut r);
        assert_eq!(l, lp[a]);
    }

    #[test]
    fn zero_weights_zero_gradient() {
        let p = randomised(6);
        let obs: Vec<_> = (0..3).map(|_| random_obs(2, 5, &mut rng(8))).collect();
        let g = logprob_gradient(
            &p,
            &obs,
            &[true, false, false],
            &vec![vec![0, 1]; 3],
            &vec![vec![0.0; 2]; 3],
        )
        .unwrap();
        assert!(g.iter().all(|t| t.data.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn bptt_matches_finite_differences() {
        let p = randomised(11);
        let mut r = rng(12);
        let obs: Vec<_> = (0..4).map(|_| random_obs(3, 5, &mut r)).collect();
        let reset = [true, false, false, false];
        let actions: Vec<Vec<usize>> = (0..4)
            .map(|_| (0..3).map(|_| r.gen_range(0..3)).collect())
            .collect();
        let weights: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| r.gen_range(-1.0..1.0)).collect())
            .collect();
        let grads = logprob_gradient(&p, &obs, &reset, &actions, &weights).unwrap();
        let analytic: Vec<f64> = grads.iter().flat_map(|t| t.data.iter().copied()).collect();
        let objective = |flat: &[f64]| {
            let mut q = p.clone();
            q.set_flat(flat);
            let net = lift(&Eager, &q);
            let out = forward(&Eager, &net, &obs, &reset, None).unwrap();
            let mut total = 0.0;
            for l in 0..4 {
                for row in 0..3 {
                    let lp = log_probs(out.logits[l].row(row));
                    total += weights[l][row] * lp[actions[l][row]];
                }
            }
            total
        };
        let err = relative_error(&analytic, objective, &p.flat(), 1e-5);
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn no_gradient_across_reset() {
        let p = randomised(13);
        let mut r = rng(14);
        let obs: Vec<_> = (0..4).map(|_| random_obs(2, 5, &mut r)).collect();
        // Only the post-reset step carries weight; the embedding rows hit
        // exclusively before the reset must get zero gradient.
        let mut obs = obs;
        for l in 0..2 {
            obs[l] = Tensor::zeros(2, 5);
            obs[l].data[0] = 1.0;
            obs[l].data[5] = 1.0;
        }
        for l in 2..4 {
            obs[l] = Tensor::zeros(2, 5);
            obs[l].data[1] = 1.0;
            obs[l].data[6] = 1.0;
        }
        let weights = vec![vec![0.0; 2], vec![0.0; 2], vec![1.0; 2], vec![1.0; 2]];
        let g = logprob_gradient(
            &p,
            &obs,
            &[true, false, true, false],
            &vec![vec![0, 1]; 4],
            &weights,
        )
        .unwrap();
        assert!(g[idx::EW].row(0).iter().all(|&x| x == 0.0));
        assert!(g[idx::EW].row(1).iter().any(|&x| x != 0.0));
    }

    #[test]
    fn shape_checks() {
        let mut p = NetParams::<f32>::init(5, 2, &mut rng(0));
        assert!(p.check_shapes().is_ok());
        p.tensors[3] = Tensor::zeros(2, 2);
        assert!(p.check_shapes().is_err());
        let net = lift(&Eager, &NetParams::<f32>::init(5, 2, &mut rng(0)));
        assert!(forward(&Eager, &net, &[Tensor::zeros(1, 5)], &[], None).is_err());
    }
}
