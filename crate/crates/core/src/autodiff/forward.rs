use super::dual::Dual;
use super::scalar::Scalar;
use crate::error::{Error, Result};

/// Deepest dual stack the engine accepts (second-order derivatives).
pub const MAX_DEPTH: usize = 2;

/// A scalar map that can be evaluated over any [`Scalar`], so it can be
/// differentiated by duals and evaluated in plain `f64` for finite differences.
pub trait Differentiable<const N: usize> {
    fn eval<S: Scalar>(&self, x: &[S; N]) -> Result<S>;
}

/// Gradient of `f` at `x`, where `x` may itself be a dual (one level of
/// nesting). The returned components keep whatever outer tangents `x` carried.
pub fn gradient<S: Scalar, const N: usize>(
    f: impl FnOnce(&[Dual<S, N>; N]) -> Result<Dual<S, N>>,
    x: [S; N],
) -> Result<[S; N]> {
    Ok(value_and_gradient(f, x)?.1)
}

/// Like [`gradient`] but also returns the function value.
pub fn value_and_gradient<S: Scalar, const N: usize>(
    f: impl FnOnce(&[Dual<S, N>; N]) -> Result<Dual<S, N>>,
    x: [S; N],
) -> Result<(S, [S; N])> {
    let depth = <Dual<S, N> as Scalar>::DEPTH;
    if depth > MAX_DEPTH {
        return Err(Error::NestingTooDeep { depth });
    }
    let y = f(&Dual::seed(x))?;
    if !y.is_finite() {
        return Err(Error::NonFinite("forward-mode gradient"));
    }
    Ok((y.re, y.eps))
}

/// First-order gradient of a real-valued map.
pub fn grad_forward<const N: usize>(
    f: impl FnOnce(&[Dual<f64, N>; N]) -> Dual<f64, N>,
    x: [f64; N],
) -> Result<[f64; N]> {
    gradient(|d| Ok(f(d)), x)
}

/// Gradient of a map that internally differentiates (via [`gradient`] on
/// `Dual<f64, N>` inputs). The result is the total derivative, including the
/// dependence of the inner gradients on `x`.
pub fn grad_nested<const N: usize>(
    f: impl FnOnce(&[Dual<f64, N>; N]) -> Result<Dual<f64, N>>,
    x: [f64; N],
) -> Result<[f64; N]> {
    gradient(f, x)
}

/// Hessian by differentiating the forward-mode gradient once more.
pub fn hessian<F: Differentiable<N>, const N: usize>(f: &F, x: [f64; N]) -> Result<[[f64; N]; N]> {
    let mut h = [[0.0; N]; N];
    for (i, row) in h.iter_mut().enumerate() {
        *row = gradient::<f64, N>(
            |outer| Ok(gradient::<Dual<f64, N>, N>(|inner| f.eval(inner), *outer)?[i]),
            x,
        )?;
    }
    Ok(h)
}

/// Max over coordinates of `|analytic - numeric| / max(1, |numeric|)` with
/// central differences of step `h`.
pub fn relative_error(
    analytic: &[f64],
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    h: f64,
) -> f64 {
    let mut worst = 0.0f64;
    let mut probe = x.to_vec();
    for (i, &a) in analytic.iter().enumerate() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let err = (a - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    worst
}

/// Checks the forward-mode gradient of `f` against central finite differences.
/// Reports the error; never asserts.
pub fn gradcheck<F: Differentiable<N>, const N: usize>(f: &F, x: [f64; N], h: f64) -> Result<f64> {
    let analytic = gradient::<f64, N>(|d| f.eval(d), x)?;
    let mut failure = None;
    let err = relative_error(
        &analytic,
        |p| {
            let arr: [f64; N] = std::array::from_fn(|i| p[i]);
            match f.eval(&arr) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        &x,
        h,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(err),
    }
}
