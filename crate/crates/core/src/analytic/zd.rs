//! Zero-determinant extortion strategies and probability-space probes.

use crate::error::{Error, Result};

const T: f64 = 2.0;
const R: f64 = 1.0;
const P: f64 = 0.0;
const S: f64 = -1.0;

const CHI_MAX_GRID: f64 = 10.0;
const GRID: usize = 64;
const PHI_MIN: f64 = 1e-12;

/// Largest feasible `phi` for a given `chi`.
pub fn phi_max(chi: f64) -> f64 {
    (P - S) / ((P - S) + chi * (T - P))
}

/// Each probability is `a + phi * (b + chi * c)`.
const COEF: [(f64, f64, f64); 4] = [
    (1.0, (R - P) / (P - S), -(R - P) / (P - S)),
    (1.0, -1.0, -(T - P) / (P - S)),
    (0.0, (T - P) / (P - S), 1.0),
    (0.0, 0.0, 0.0),
];

/// Cooperation probabilities after CC, CD, DC, DD.
pub fn zd_policy(chi: f64, phi: f64) -> Result<[f64; 4]> {
    if !(chi >= 1.0) || !(phi > 0.0) || phi > phi_max(chi) * (1.0 + 1e-12) {
        return Err(Error::InvalidParameter(format!(
            "ZD parameters (chi={chi}, phi={phi}) outside the feasible region"
        )));
    }
    Ok(eval(chi, phi))
}

fn eval(chi: f64, phi: f64) -> [f64; 4] {
    COEF.map(|(a, b, c)| a + phi * (b + chi * c))
}

fn loss(probs: &[f64; 4], chi: f64, phi: f64) -> f64 {
    eval(chi, phi)
        .iter()
        .zip(probs)
        .map(|(z, p)| (z - p) * (z - p))
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZdFit {
    pub chi: f64,
    pub phi: f64,
    pub loss: f64,
}

/// Least-squares fit of `(chi, phi)`: grid search, then exact coordinate
/// descent (the loss is quadratic in each coordinate separately).
pub fn fit_zd(probs: &[f64; 4]) -> ZdFit {
    let mut best = ZdFit {
        chi: 1.0,
        phi: phi_max(1.0),
        loss: f64::INFINITY,
    };
    for i in 0..GRID {
        let chi = 1.0 + (CHI_MAX_GRID - 1.0) * i as f64 / (GRID - 1) as f64;
        for j in 0..GRID {
            let phi = phi_max(chi) * (j + 1) as f64 / GRID as f64;
            let l = loss(probs, chi, phi);
            if l < best.loss {
                best = ZdFit { chi, phi, loss: l };
            }
        }
    }
    let (mut chi, mut phi) = (best.chi, best.phi);
    for _ in 0..20_000 {
        let before = loss(probs, chi, phi);
        // phi given chi
        let (mut num, mut den) = (0.0, 0.0);
        for (k, &(a, b, c)) in COEF.iter().enumerate() {
            let d = b + chi * c;
            num += (a - probs[k]) * d;
            den += d * d;
        }
        if den > 0.0 {
            phi = (-num / den).clamp(PHI_MIN, phi_max(chi));
        }
        // chi given phi
        let (mut num, mut den) = (0.0, 0.0);
        for (k, &(a, b, c)) in COEF.iter().enumerate() {
            let e0 = a - probs[k] + phi * b;
            let d = phi * c;
            num += e0 * d;
            den += d * d;
        }
        if den > 0.0 {
            let chi_cap = ((P - S) / phi - (P - S)) / (T - P);
            chi = (-num / den).clamp(1.0, chi_cap.max(1.0));
        }
        let after = loss(probs, chi, phi);
        if before - after <= 1e-18 {
            break;
        }
    }
    let l = loss(probs, chi, phi);
    if l < best.loss {
        best = ZdFit { chi, phi, loss: l };
    }
    best
}

/// `probs + eta * grad`, clipped elementwise to `[0, 1]`.
pub fn projected_ascent_step(probs: &[f64; 5], grad: &[f64; 5], eta: f64) -> [f64; 5] {
    std::array::from_fn(|k| (probs[k] + eta * grad[k]).clamp(0.0, 1.0))
}
