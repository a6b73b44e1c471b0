use super::scalar::Scalar;
use crate::error::{Error, Result};

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
///
/// Pivots are chosen on the primal value, so dual entries flow through the
/// elimination unchanged and the solution carries exact derivatives.
pub fn solve_linear<S: Scalar, const N: usize>(
    mut a: [[S; N]; N],
    mut b: [S; N],
) -> Result<[S; N]> {
    for col in 0..N {
        let pivot = (col..N)
            .max_by(|&i, &j| a[i][col].value().abs().total_cmp(&a[j][col].value().abs()))
            .unwrap_or(col);
        let pv = a[pivot][col].value();
        if pv == 0.0 || !pv.is_finite() {
            return Err(Error::Singular { column: col });
        }
        if pivot != col {
            a.swap(pivot, col);
            b.swap(pivot, col);
        }
        let inv = S::one() / a[col][col];
        for row in col + 1..N {
            let factor = a[row][col] * inv;
            for k in col..N {
                let t = a[col][k];
                a[row][k] -= factor * t;
            }
            let t = b[col];
            b[row] -= factor * t;
        }
    }
    let mut x = [S::zero(); N];
    for row in (0..N).rev() {
        let mut acc = b[row];
        for k in row + 1..N {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::dual::Dual;
    use crate::autodiff::forward::grad_forward;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn residual<const N: usize>(a: &[[f64; N]; N], x: &[f64; N], b: &[f64; N]) -> f64 {
        (0..N)
            .map(|i| ((0..N).map(|k| a[i][k] * x[k]).sum::<f64>() - b[i]).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn identity_solve() {
        let mut a = [[0.0; 4]; 4];
        for (i, row) in a.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        let x = solve_linear(a, [1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(x, [1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn diagonal_scaling() {
        let x = solve_linear([[2.0, 0.0], [0.0, 2.0]], [2.0, 4.0]).unwrap();
        assert_eq!(x, [1.0, 2.0]);
    }

    #[test]
    fn discounted_stochastic_system_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let mut m = [[0.0; 4]; 4];
            for col in 0..4 {
                let w: Vec<f64> = (0..4).map(|_| rng.gen::<f64>()).collect();
                let s: f64 = w.iter().sum();
                for row in 0..4 {
                    m[row][col] = w[row] / s;
                }
            }
            let mut a = [[0.0; 4]; 4];
            for i in 0..4 {
                for j in 0..4 {
                    a[i][j] = if i == j { 1.0 } else { 0.0 } - 0.95 * m[i][j];
                }
            }
            let b: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let x = solve_linear(a, b).unwrap();
            let bnorm = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(residual(&a, &x, &b) < 1e-10 * bnorm);
        }
    }

    #[test]
    fn singular_rejected() {
        let r = solve_linear([[1.0, 2.0], [2.0, 4.0]], [1.0, 1.0]);
        assert!(matches!(r, Err(Error::Singular { column: 1 })));
    }

    #[test]
    fn derivative_through_solve() {
        // x(t) solves [[t, 1], [1, 2]] x = [1, 0]; x0 = 2 / (2t - 1)
        let t = 1.5;
        let g = grad_forward(
            |v| {
                let one = Dual::lift(1.0);
                let two = Dual::lift(2.0);
                let zero = Dual::lift(0.0);
                solve_linear([[v[0], one], [one, two]], [one, zero]).unwrap()[0]
            },
            [t],
        )
        .unwrap();
        let exact = -4.0 / ((2.0 * t - 1.0) * (2.0 * t - 1.0));
        assert!((g[0] - exact).abs() < 1e-12);
    }
}
