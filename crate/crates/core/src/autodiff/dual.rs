use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use super::scalar::Scalar;

/// Forward-mode dual number carrying `N` simultaneous directional derivatives.
///
/// The component type is itself a [`Scalar`], so `Dual<Dual<f64, N>, K>` is a
/// nested dual: its tangents are duals that still track the outer directions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T: Scalar, const N: usize> {
    pub re: T,
    pub eps: [T; N],
}

/// Second-order number used for derivatives of expressions that contain
/// derivatives.
pub type NestedDual<const N: usize, const K: usize> = Dual<Dual<f64, N>, K>;

impl<T: Scalar, const N: usize> Dual<T, N> {
    /// A value with zero tangents.
    pub fn lift(re: T) -> Self {
        Self {
            re,
            eps: [T::zero(); N],
        }
    }

    /// A value seeded with unit tangent along direction `i`.
    pub fn variable(re: T, i: usize) -> Self {
        let mut eps = [T::zero(); N];
        eps[i] = T::one();
        Self { re, eps }
    }

    /// Seeds every coordinate of `x` with its own unit tangent.
    pub fn seed(x: [T; N]) -> [Self; N] {
        std::array::from_fn(|i| Self::variable(x[i], i))
    }

    /// Applies a unary function with value `f` and derivative `df` at `re`.
    fn chain(self, f: T, df: T) -> Self {
        Self {
            re: f,
            eps: self.eps.map(|e| e * df),
        }
    }
}

impl<T: Scalar, const N: usize> Add for Dual<T, N> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self {
            re: self.re + rhs.re,
            eps: std::array::from_fn(|i| self.eps[i] + rhs.eps[i]),
        }
    }
}

impl<T: Scalar, const N: usize> Sub for Dual<T, N> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self {
            re: self.re - rhs.re,
            eps: std::array::from_fn(|i| self.eps[i] - rhs.eps[i]),
        }
    }
}

impl<T: Scalar, const N: usize> Mul for Dual<T, N> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self {
            re: self.re * rhs.re,
            eps: std::array::from_fn(|i| self.eps[i] * rhs.re + self.re * rhs.eps[i]),
        }
    }
}

impl<T: Scalar, const N: usize> Div for Dual<T, N> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let inv = T::one() / rhs.re;
        let q = self.re * inv;
        Self {
            re: q,
            eps: std::array::from_fn(|i| (self.eps[i] - q * rhs.eps[i]) * inv),
        }
    }
}

impl<T: Scalar, const N: usize> Neg for Dual<T, N> {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            re: -self.re,
            eps: self.eps.map(|e| -e),
        }
    }
}

impl<T: Scalar, const N: usize> AddAssign for Dual<T, N> {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<T: Scalar, const N: usize> SubAssign for Dual<T, N> {
    fn sub_assign(&mut self, rhs: Self) {
        *self = *self - rhs;
    }
}

impl<T: Scalar, const N: usize> MulAssign for Dual<T, N> {
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl<T: Scalar, const N: usize> Scalar for Dual<T, N> {
    const DEPTH: usize = T::DEPTH + 1;

    fn constant(v: f64) -> Self {
        Self::lift(T::constant(v))
    }

    fn value(&self) -> f64 {
        self.re.value()
    }

    fn exp(self) -> Self {
        let e = self.re.exp();
        self.chain(e, e)
    }

    fn ln(self) -> Self {
        self.chain(self.re.ln(), T::one() / self.re)
    }

    fn sigmoid(self) -> Self {
        let s = self.re.sigmoid();
        self.chain(s, s * (T::one() - s))
    }

    fn is_finite(&self) -> bool {
        self.re.is_finite() && self.eps.iter().all(Scalar::is_finite)
    }

    fn scale(self, c: f64) -> Self {
        Self {
            re: self.re.scale(c),
            eps: self.eps.map(|e| e.scale(c)),
        }
    }
}
