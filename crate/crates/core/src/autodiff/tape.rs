//! Reverse-mode differentiation over dense tensors.
//!
//! Network code is written once against [`Ops`]; the [`Eager`] backend just
//! computes values, while a [`Tape`] also records each primitive with its
//! parent indices so a backward sweep can replay adjoints.

use std::cell::{Cell, RefCell};

use super::tensor::{matmul, matmul_at_acc, matmul_bt, Float, Tensor};
use crate::error::{Error, Result};

const RMS_EPS: f64 = 1e-6;
const SQRT_FLOOR: f64 = 1e-12;

/// Differentiable tensor primitives.
pub trait Ops<F: Float> {
    type T: Clone;

    fn constant(&self, t: Tensor<F>) -> Self::T;
    fn value(&self, t: &Self::T) -> Tensor<F>;

    fn matmul(&self, a: &Self::T, w: &Self::T) -> Self::T;
    /// Adds a `1 x c` row to every row of `a`.
    fn add_bias(&self, a: &Self::T, b: &Self::T) -> Self::T;
    /// Multiplies every row of `a` elementwise by a `1 x c` row.
    fn mul_bias(&self, a: &Self::T, b: &Self::T) -> Self::T;
    fn add(&self, a: &Self::T, b: &Self::T) -> Self::T;
    fn sub(&self, a: &Self::T, b: &Self::T) -> Self::T;
    fn mul(&self, a: &Self::T, b: &Self::T) -> Self::T;
    fn scale(&self, a: &Self::T, s: f64) -> Self::T;
    fn add_scalar(&self, a: &Self::T, s: f64) -> Self::T;
    fn sigmoid(&self, a: &Self::T) -> Self::T;
    fn exp(&self, a: &Self::T) -> Self::T;
    fn softplus(&self, a: &Self::T) -> Self::T;
    fn silu(&self, a: &Self::T) -> Self::T;
    fn square(&self, a: &Self::T) -> Self::T;
    /// `sqrt(max(1 - a^2, floor))`.
    fn sqrt_one_minus_sq(&self, a: &Self::T) -> Self::T;
    /// Row-wise RMS normalisation followed by a `1 x c` gain.
    fn rms_norm(&self, a: &Self::T, gain: &Self::T) -> Self::T;
    fn log_softmax(&self, a: &Self::T) -> Self::T;
    /// Picks column `idx[r]` of every row `r`; result is `r x 1`.
    fn gather(&self, a: &Self::T, idx: &[usize]) -> Self::T;
    fn sum(&self, a: &Self::T) -> Self::T;
    fn clamp(&self, a: &Self::T, lo: f64, hi: f64) -> Self::T;
    fn minimum(&self, a: &Self::T, b: &Self::T) -> Self::T;
    fn maximum(&self, a: &Self::T, b: &Self::T) -> Self::T;
}

mod kernels {
    use super::*;

    pub fn add_bias<F: Float>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
        assert_eq!(a.cols, b.len(), "bias width");
        let mut out = a.clone();
        for r in 0..a.rows {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(&b.data) {
                *o += bv;
            }
        }
        out
    }

    pub fn mul_bias<F: Float>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
        assert_eq!(a.cols, b.len(), "row-scale width");
        let mut out = a.clone();
        for r in 0..a.rows {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(&b.data) {
                *o = *o * bv;
            }
        }
        out
    }

    pub fn silu<F: Float>(x: F) -> F {
        x * x.sigmoid()
    }

    pub fn rms_norm<F: Float>(a: &Tensor<F>, g: &Tensor<F>) -> Tensor<F> {
        let mut out = a.clone();
        let n = a.cols as f64;
        for r in 0..a.rows {
            let row = out.row_mut(r);
            let ms: f64 = row.iter().map(|&x| x.to_f64() * x.to_f64()).sum::<f64>() / n;
            let inv = F::from_f64(1.0 / (ms + RMS_EPS).sqrt());
            for (o, &gv) in row.iter_mut().zip(&g.data) {
                *o = *o * inv * gv;
            }
        }
        out
    }

    pub fn log_softmax<F: Float>(a: &Tensor<F>) -> Tensor<F> {
        let mut out = a.clone();
        for r in 0..a.rows {
            let row = out.row_mut(r);
            let m = row
                .iter()
                .fold(f64::NEG_INFINITY, |m, &x| m.max(x.to_f64()));
            let lse = m + row
                .iter()
                .map(|&x| (x.to_f64() - m).exp())
                .sum::<f64>()
                .ln();
            for o in row.iter_mut() {
                *o = F::from_f64(o.to_f64() - lse);
            }
        }
        out
    }

    pub fn gather<F: Float>(a: &Tensor<F>, idx: &[usize]) -> Tensor<F> {
        assert_eq!(a.rows, idx.len(), "gather index count");
        Tensor::from_vec(
            a.rows,
            1,
            idx.iter().enumerate().map(|(r, &c)| a.at(r, c)).collect(),
        )
    }

    pub fn sum<F: Float>(a: &Tensor<F>) -> Tensor<F> {
        Tensor::scalar(F::from_f64(a.data.iter().map(|x| x.to_f64()).sum()))
    }

    pub fn sqrt_one_minus_sq<F: Float>(x: F) -> F {
        F::from_f64((1.0 - x.to_f64() * x.to_f64()).max(SQRT_FLOOR).sqrt())
    }
}

/// Value-only backend used for rollouts.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

impl<F: Float> Ops<F> for Eager {
    type T = Tensor<F>;

    fn constant(&self, t: Tensor<F>) -> Tensor<F> {
        t
    }
    fn value(&self, t: &Tensor<F>) -> Tensor<F> {
        t.clone()
    }
    fn matmul(&self, a: &Tensor<F>, w: &Tensor<F>) -> Tensor<F> {
        matmul(a, w)
    }
    fn add_bias(&self, a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
        kernels::add_bias(a, b)
    }
    fn mul_bias(&self, a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
        kernels::mul_bias(a, b)
    }
    fn add(&self, a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
        a.zip(b, |x, y| x + y)
    }
    fn sub(&self, a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
        a.zip(b, |x, y| x - y)
    }
    fn mul(&self, a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
        a.zip(b, |x, y| x * y)
    }
    fn scale(&self, a: &Tensor<F>, s: f64) -> Tensor<F> {
        let s = F::from_f64(s);
        a.map(|x| x * s)
    }
    fn add_scalar(&self, a: &Tensor<F>, s: f64) -> Tensor<F> {
        let s = F::from_f64(s);
        a.map(|x| x + s)
    }
    fn sigmoid(&self, a: &Tensor<F>) -> Tensor<F> {
        a.map(Float::sigmoid)
    }
    fn exp(&self, a: &Tensor<F>) -> Tensor<F> {
        a.map(Float::exp)
    }
    fn softplus(&self, a: &Tensor<F>) -> Tensor<F> {
        a.map(Float::softplus)
    }
    fn silu(&self, a: &Tensor<F>) -> Tensor<F> {
        a.map(kernels::silu)
    }
    fn square(&self, a: &Tensor<F>) -> Tensor<F> {
        a.map(|x| x * x)
    }
    fn sqrt_one_minus_sq(&self, a: &Tensor<F>) -> Tensor<F> {
        a.map(kernels::sqrt_one_minus_sq)
    }
    fn rms_norm(&self, a: &Tensor<F>, gain: &Tensor<F>) -> Tensor<F> {
        kernels::rms_norm(a, gain)
    }
    fn log_softmax(&self, a: &Tensor<F>) -> Tensor<F> {
        kernels::log_softmax(a)
    }
    fn gather(&self, a: &Tensor<F>, idx: &[usize]) -> Tensor<F> {
        kernels::gather(a, idx)
    }
    fn sum(&self, a: &Tensor<F>) -> Tensor<F> {
        kernels::sum(a)
    }
    fn clamp(&self, a: &Tensor<F>, lo: f64, hi: f64) -> Tensor<F> {
        let (lo, hi) = (F::from_f64(lo), F::from_f64(hi));
        a.map(|x| x.max(lo).min(hi))
    }
    fn minimum(&self, a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
        a.zip(b, Float::min)
    }
    fn maximum(&self, a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
        a.zip(b, Float::max)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    AddBias(usize, usize),
    MulBias(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Sigmoid(usize),
    Exp(usize),
    Softplus(usize),
    Silu(usize),
    Square(usize),
    SqrtOneMinusSq(usize),
    RmsNorm(usize, usize),
    LogSoftmax(usize),
    Gather(usize, Vec<usize>),
    Sum(usize),
    Clamp(usize, f64, f64),
    Minimum(usize, usize),
    Maximum(usize, usize),
}

struct Node<F: Float> {
    value: Tensor<F>,
    op: Op,
    needs_grad: bool,
}

/// Records a computation for one backward pass.
pub struct Tape<F: Float> {
    nodes: RefCell<Vec<Node<F>>>,
    consumed: Cell<bool>,
}

/// Handle to a recorded tensor.
#[derive(Clone, Copy)]
pub struct Var<'t, F: Float> {
    tape: &'t Tape<F>,
    id: usize,
}

impl<F: Float> std::fmt::Debug for Var<'_, F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

impl<'t, F: Float> Var<'t, F> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor<F> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }
}

impl<F: Float> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Float> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable leaf.
    pub fn param(&self, t: Tensor<F>) -> Var<'_, F> {
        self.push(t, Op::Leaf, true)
    }

    /// A constant input; receives no gradient.
    pub fn input(&self, t: Tensor<F>) -> Var<'_, F> {
        self.push(t, Op::Leaf, false)
    }

    fn push(&self, value: Tensor<F>, op: Op, needs_grad: bool) -> Var<'_, F> {
        assert!(
            !self.consumed.get(),
            "operation recorded on a consumed tape"
        );
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn unary(&self, a: &Var<'_, F>, op: Op, f: impl FnOnce(&Tensor<F>) -> Tensor<F>) -> Var<'_, F> {
        let (v, ng) = {
            let nodes = self.nodes.borrow();
            (f(&nodes[a.id].value), nodes[a.id].needs_grad)
        };
        self.push(v, op, ng)
    }

    fn binary(
        &self,
        a: &Var<'_, F>,
        b: &Var<'_, F>,
        op: Op,
        f: impl FnOnce(&Tensor<F>, &Tensor<F>) -> Tensor<F>,
    ) -> Var<'_, F> {
        let (v, ng) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.id], &nodes[b.id]);
            (f(&na.value, &nb.value), na.needs_grad || nb.needs_grad)
        };
        self.push(v, op, ng)
    }

    /// Runs the backward sweep from scalar `loss` and returns the adjoint of
    /// every node that needs one. Consumes the tape.
    pub fn backward(&self, loss: &Var<'_, F>) -> Result<Vec<Option<Tensor<F>>>> {
        if self.consumed.replace(true) {
            return Err(Error::TapeConsumed);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::scalar(F::one()));

        fn acc<F: Float>(
            grads: &mut [Option<Tensor<F>>],
            nodes: &[Node<F>],
            id: usize,
            g: Tensor<F>,
        ) {
            if !nodes[id].needs_grad {
                return;
            }
            match &mut grads[id] {
                Some(t) => t.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let out = &node.value;
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, w) => {
                    if nodes[*a].needs_grad {
                        acc(&mut grads, &nodes, *a, matmul_bt(&g, &nodes[*w].value));
                    }
                    if nodes[*w].needs_grad {
                        let wv = &nodes[*w].value;
                        let mut gw = Tensor::zeros(wv.rows, wv.cols);
                        matmul_at_acc(&nodes[*a].value, &g, &mut gw);
                        acc(&mut grads, &nodes, *w, gw);
                    }
                }
                Op::AddBias(a, b) => {
                    if nodes[*b].needs_grad {
                        let bv = &nodes[*b].value;
                        let mut gb = Tensor::zeros(bv.rows, bv.cols);
                        for r in 0..g.rows {
                            for (o, &x) in gb.data.iter_mut().zip(g.row(r)) {
                                *o += x;
                            }
                        }
                        acc(&mut grads, &nodes, *b, gb);
                    }
                    acc(&mut grads, &nodes, *a, g);
                }
                Op::MulBias(a, b) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    if nodes[*b].needs_grad {
                        let mut gb = Tensor::zeros(bv.rows, bv.cols);
                        for r in 0..g.rows {
                            for ((o, &x), &y) in gb.data.iter_mut().zip(g.row(r)).zip(av.row(r)) {
                                *o += x * y;
                            }
                        }
                        acc(&mut grads, &nodes, *b, gb);
                    }
                    if nodes[*a].needs_grad {
                        acc(&mut grads, &nodes, *a, kernels::mul_bias(&g, bv));
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, &nodes, *b, g.clone());
                    acc(&mut grads, &nodes, *a, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, &nodes, *b, g.map(|x| -x));
                    acc(&mut grads, &nodes, *a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    if nodes[*b].needs_grad {
                        acc(&mut grads, &nodes, *b, g.zip(av, |x, y| x * y));
                    }
                    if nodes[*a].needs_grad {
                        acc(&mut grads, &nodes, *a, g.zip(bv, |x, y| x * y));
                    }
                }
                Op::Scale(a, s) => {
                    let s = F::from_f64(*s);
                    acc(&mut grads, &nodes, *a, g.map(|x| x * s));
                }
                Op::AddScalar(a) => acc(&mut grads, &nodes, *a, g),
                Op::Sigmoid(a) => {
                    let d = g.zip(out, |x, y| x * y * (F::one() - y));
                    acc(&mut grads, &nodes, *a, d);
                }
                Op::Exp(a) => {
                    let d = g.zip(out, |x, y| x * y);
                    acc(&mut grads, &nodes, *a, d);
                }
                Op::Softplus(a) => {
                    let d = g.zip(&nodes[*a].value, |x, z| x * z.sigmoid());
                    acc(&mut grads, &nodes, *a, d);
                }
                Op::Silu(a) => {
                    let d = g.zip(&nodes[*a].value, |x, z| {
                        let s = z.sigmoid();
                        x * s * (F::one() + z * (F::one() - s))
                    });
                    acc(&mut grads, &nodes, *a, d);
                }
                Op::Square(a) => {
                    let d = g.zip(&nodes[*a].value, |x, z| x * z * F::from_f64(2.0));
                    acc(&mut grads, &nodes, *a, d);
                }
                Op::SqrtOneMinusSq(a) => {
                    let av = &nodes[*a].value;
                    let mut d = g.clone();
                    for ((o, &z), &y) in d.data.iter_mut().zip(&av.data).zip(&out.data) {
                        let inside = 1.0 - z.to_f64() * z.to_f64();
                        *o = if inside > SQRT_FLOOR {
                            F::from_f64(-o.to_f64() * z.to_f64() / y.to_f64())
                        } else {
                            F::zero()
                        };
                    }
                    acc(&mut grads, &nodes, *a, d);
                }
                Op::RmsNorm(a, gain) => {
                    let (av, gv) = (&nodes[*a].value, &nodes[*gain].value);
                    let n = av.cols as f64;
                    let mut da = Tensor::zeros(av.rows, av.cols);
                    let mut dg = Tensor::zeros(gv.rows, gv.cols);
                    for r in 0..av.rows {
                        let x = av.row(r);
                        let gy = g.row(r);
                        let ms: f64 = x.iter().map(|&v| v.to_f64() * v.to_f64()).sum::<f64>() / n;
                        let inv = 1.0 / (ms + RMS_EPS).sqrt();
                        let mut dot = 0.0;
                        for c in 0..av.cols {
                            let xhat = x[c].to_f64() * inv;
                            let dn = gy[c].to_f64() * gv.data[c].to_f64();
                            dg.data[c] += F::from_f64(gy[c].to_f64() * xhat);
                            dot += dn * xhat;
                        }
                        let mean_dot = dot / n;
                        let row = da.row_mut(r);
                        for c in 0..av.cols {
                            let xhat = x[c].to_f64() * inv;
                            let dn = gy[c].to_f64() * gv.data[c].to_f64();
                            row[c] = F::from_f64(inv * (dn - xhat * mean_dot));
                        }
                    }
                    if nodes[*gain].needs_grad {
                        acc(&mut grads, &nodes, *gain, dg);
                    }
                    acc(&mut grads, &nodes, *a, da);
                }
                Op::LogSoftmax(a) => {
                    let mut d = g.clone();
                    for r in 0..g.rows {
                        let gs: f64 = g.row(r).iter().map(|x| x.to_f64()).sum();
                        let yr = out.row(r).to_vec();
                        for (o, y) in d.row_mut(r).iter_mut().zip(yr) {
                            *o = F::from_f64(o.to_f64() - y.to_f64().exp() * gs);
                        }
                    }
                    acc(&mut grads, &nodes, *a, d);
                }
                Op::Gather(a, idx) => {
                    let av = &nodes[*a].value;
                    let mut d = Tensor::zeros(av.rows, av.cols);
                    for (r, &c) in idx.iter().enumerate() {
                        d.data[r * av.cols + c] = g.data[r];
                    }
                    acc(&mut grads, &nodes, *a, d);
                }
                Op::Sum(a) => {
                    let av = &nodes[*a].value;
                    acc(
                        &mut grads,
                        &nodes,
                        *a,
                        Tensor::full(av.rows, av.cols, g.item()),
                    );
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (F::from_f64(*lo), F::from_f64(*hi));
                    let d = g.zip(&nodes[*a].value, |x, z| {
                        if z >= lo && z <= hi {
                            x
                        } else {
                            F::zero()
                        }
                    });
                    acc(&mut grads, &nodes, *a, d);
                }
                Op::Minimum(a, b) | Op::Maximum(a, b) => {
                    let pick_a = matches!(node.op, Op::Minimum(..));
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    let mut da = g.clone();
                    let mut db = g.clone();
                    for i in 0..g.len() {
                        let a_wins = if pick_a {
                            av.data[i] <= bv.data[i]
                        } else {
                            av.data[i] >= bv.data[i]
                        };
                        if a_wins {
                            db.data[i] = F::zero();
                        } else {
                            da.data[i] = F::zero();
                        }
                    }
                    acc(&mut grads, &nodes, *b, db);
                    acc(&mut grads, &nodes, *a, da);
                }
            }
        }
        Ok(grads)
    }
}

/// Gradients of scalar `loss` with respect to `params`, in order. Leaves the
/// loss does not depend on receive zeros.
pub fn grad_reverse<F: Float>(
    tape: &Tape<F>,
    loss: &Var<'_, F>,
    params: &[Var<'_, F>],
) -> Result<Vec<Tensor<F>>> {
    let mut grads = tape.backward(loss)?;
    let nodes = tape.nodes.borrow();
    Ok(params
        .iter()
        .map(|p| {
            grads[p.id].take().unwrap_or_else(|| {
                let v = &nodes[p.id].value;
                Tensor::zeros(v.rows, v.cols)
            })
        })
        .collect())
}

impl<'t, F: Float> Ops<F> for &'t Tape<F> {
    type T = Var<'t, F>;

    fn constant(&self, t: Tensor<F>) -> Var<'t, F> {
        self.input(t)
    }
    fn value(&self, t: &Var<'t, F>) -> Tensor<F> {
        t.value()
    }
    fn matmul(&self, a: &Var<'t, F>, w: &Var<'t, F>) -> Var<'t, F> {
        self.binary(a, w, Op::MatMul(a.id, w.id), matmul)
    }
    fn add_bias(&self, a: &Var<'t, F>, b: &Var<'t, F>) -> Var<'t, F> {
        self.binary(a, b, Op::AddBias(a.id, b.id), kernels::add_bias)
    }
    fn mul_bias(&self, a: &Var<'t, F>, b: &Var<'t, F>) -> Var<'t, F> {
        self.binary(a, b, Op::MulBias(a.id, b.id), kernels::mul_bias)
    }
    fn add(&self, a: &Var<'t, F>, b: &Var<'t, F>) -> Var<'t, F> {
        self.binary(a, b, Op::Add(a.id, b.id), |x, y| x.zip(y, |p, q| p + q))
    }
    fn sub(&self, a: &Var<'t, F>, b: &Var<'t, F>) -> Var<'t, F> {
        self.binary(a, b, Op::Sub(a.id, b.id), |x, y| x.zip(y, |p, q| p - q))
    }
    fn mul(&self, a: &Var<'t, F>, b: &Var<'t, F>) -> Var<'t, F> {
        self.binary(a, b, Op::Mul(a.id, b.id), |x, y| x.zip(y, |p, q| p * q))
    }
    fn scale(&self, a: &Var<'t, F>, s: f64) -> Var<'t, F> {
        let sf = F::from_f64(s);
        self.unary(a, Op::Scale(a.id, s), |x| x.map(|v| v * sf))
    }
    fn add_scalar(&self, a: &Var<'t, F>, s: f64) -> Var<'t, F> {
        let sf = F::from_f64(s);
        self.unary(a, Op::AddScalar(a.id), |x| x.map(|v| v + sf))
    }
    fn sigmoid(&self, a: &Var<'t, F>) -> Var<'t, F> {
        self.unary(a, Op::Sigmoid(a.id), |x| x.map(Float::sigmoid))
    }
    fn exp(&self, a: &Var<'t, F>) -> Var<'t, F> {
        self.unary(a, Op::Exp(a.id), |x| x.map(Float::exp))
    }
    fn softplus(&self, a: &Var<'t, F>) -> Var<'t, F> {
        self.unary(a, Op::Softplus(a.id), |x| x.map(Float::softplus))
    }
    fn silu(&self, a: &Var<'t, F>) -> Var<'t, F> {
        self.unary(a, Op::Silu(a.id), |x| x.map(kernels::silu))
    }
    fn square(&self, a: &Var<'t, F>) -> Var<'t, F> {
        self.unary(a, Op::Square(a.id), |x| x.map(|v| v * v))
    }
    fn sqrt_one_minus_sq(&self, a: &Var<'t, F>) -> Var<'t, F> {
        self.unary(a, Op::SqrtOneMinusSq(a.id), |x| {
            x.map(kernels::sqrt_one_minus_sq)
        })
    }
    fn rms_norm(&self, a: &Var<'t, F>, gain: &Var<'t, F>) -> Var<'t, F> {
        self.binary(a, gain, Op::RmsNorm(a.id, gain.id), kernels::rms_norm)
    }
    fn log_softmax(&self, a: &Var<'t, F>) -> Var<'t, F> {
        self.unary(a, Op::LogSoftmax(a.id), kernels::log_softmax)
    }
    fn gather(&self, a: &Var<'t, F>, idx: &[usize]) -> Var<'t, F> {
        self.unary(a, Op::Gather(a.id, idx.to_vec()), |x| {
            kernels::gather(x, idx)
        })
    }
    fn sum(&self, a: &Var<'t, F>) -> Var<'t, F> {
        self.unary(a, Op::Sum(a.id), kernels::sum)
    }
    fn clamp(&self, a: &Var<'t, F>, lo: f64, hi: f64) -> Var<'t, F> {
        let (l, h) = (F::from_f64(lo), F::from_f64(hi));
        self.unary(a, Op::Clamp(a.id, lo, hi), |x| x.map(|v| v.max(l).min(h)))
    }
    fn minimum(&self, a: &Var<'t, F>, b: &Var<'t, F>) -> Var<'t, F> {
        self.binary(a, b, Op::Minimum(a.id, b.id), |x, y| x.zip(y, Float::min))
    }
    fn maximum(&self, a: &Var<'t, F>, b: &Var<'t, F>) -> Var<'t, F> {
        self.binary(a, b, Op::Maximum(a.id, b.id), |x, y| x.zip(y, Float::max))
    }
}
