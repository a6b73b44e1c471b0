use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// Floating-point element type for dense tensors (`f32` or `f64`).
pub trait Float:
    Copy
    + Debug
    + Default
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn is_finite(self) -> bool;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
    fn max(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }
    fn min(self, other: Self) -> Self {
        if self <= other {
            self
        } else {
            other
        }
    }
    fn sigmoid(self) -> Self {
        let x = self.to_f64();
        Self::from_f64(super::scalar::sigmoid(x))
    }
    fn softplus(self) -> Self {
        let x = self.to_f64();
        Self::from_f64(if x > 30.0 { x } else { x.exp().ln_1p() })
    }
}

macro_rules! impl_float {
    ($t:ty) => {
        impl Float for $t {
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
        }
    };
}

impl_float!(f32);
impl_float!(f64);

/// Row-major dense matrix. Row vectors are `1 x n`, scalars `1 x 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F: Float> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<F>,
}

impl<F: Float> Tensor<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn full(rows: usize, cols: usize, v: F) -> Self {
        Self {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor data length");
        Self { rows, cols, data }
    }

    pub fn scalar(v: F) -> Self {
        Self::from_vec(1, 1, vec![v])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn at(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn item(&self) -> F {
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(F, F) -> F) -> Self {
        debug_assert_eq!(self.shape(), other.shape());
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_in_place(&mut self, s: F) {
        for a in &mut self.data {
            *a = *a * s;
        }
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|&x| x.to_f64() * x.to_f64()).sum()
    }

    pub fn cast<G: Float>(&self) -> Tensor<G> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| G::from_f64(x.to_f64())).collect(),
        }
    }

    /// Rows `start..start + n`.
    pub fn slice_rows(&self, start: usize, n: usize) -> Self {
        Self::from_vec(
            n,
            self.cols,
            self.data[start * self.cols..(start + n) * self.cols].to_vec(),
        )
    }

    pub fn stack_rows(parts: &[&Self]) -> Self {
        let cols = parts.first().map_or(0, |p| p.cols);
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        let mut rows = 0;
        for p in parts {
            assert_eq!(p.cols, cols, "stack_rows width");
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Self::from_vec(rows, cols, data)
    }
}

/// `a (r x k) * w (k x c)`.
pub fn matmul<F: Float>(a: &Tensor<F>, w: &Tensor<F>) -> Tensor<F> {
    assert_eq!(a.cols, w.rows, "matmul inner dimension");
    let (r, k, c) = (a.rows, a.cols, w.cols);
    let mut out = vec![F::zero(); r * c];
    for i in 0..r {
        let o = &mut out[i * c..(i + 1) * c];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == F::zero() {
                continue;
            }
            let wr = &w.data[p * c..(p + 1) * c];
            for (ov, &wv) in o.iter_mut().zip(wr) {
                *ov += av * wv;
            }
        }
    }
    Tensor::from_vec(r, c, out)
}

/// `g (r x c) * w^T` where `w` is `k x c`; result `r x k`.
pub fn matmul_bt<F: Float>(g: &Tensor<F>, w: &Tensor<F>) -> Tensor<F> {
    let (r, c, k) = (g.rows, g.cols, w.rows);
    let mut out = vec![F::zero(); r * k];
    for i in 0..r {
        let gr = &g.data[i * c..(i + 1) * c];
        for p in 0..k {
            let wr = &w.data[p * c..(p + 1) * c];
            let mut acc = F::zero();
            for (&x, &y) in gr.iter().zip(wr) {
                acc += x * y;
            }
            out[i * k + p] = acc;
        }
    }
    Tensor::from_vec(r, k, out)
}

/// Accumulates `a^T (k x r) * g (r x c)` into `out` (`k x c`).
pub fn matmul_at_acc<F: Float>(a: &Tensor<F>, g: &Tensor<F>, out: &mut Tensor<F>) {
    let (r, k, c) = (a.rows, a.cols, g.cols);
    for i in 0..r {
        let gr = &g.data[i * c..(i + 1) * c];
        for p in 0..k {
            let av = a.data[i * k + p];
            if av == F::zero() {
                continue;
            }
            let o = &mut out.data[p * c..(p + 1) * c];
            for (ov, &gv) in o.iter_mut().zip(gr) {
                *ov += av * gv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let w = Tensor::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let c = matmul(&a, &w);
        assert_eq!(c.data, vec![4.0, 5.0, 10.0, 11.0]);
        let bt = matmul_bt(&c, &w);
        assert_eq!(bt.shape(), (2, 3));
        assert_eq!(bt.data[0], 4.0);
        assert_eq!(bt.data[2], 9.0);
        let mut acc = Tensor::zeros(3, 2);
        matmul_at_acc(&a, &c, &mut acc);
        assert_eq!(acc.data[0], 1.0 * 4.0 + 4.0 * 10.0);
    }
}
