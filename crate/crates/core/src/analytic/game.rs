use serde::{Deserialize, Serialize};

use crate::autodiff::{gradient, solve_linear, Dual, Scalar};
use crate::error::{Error, Result};

/// Five logits: initial-state cooperation, then cooperation after CC, CD, DC, DD
/// (own action first).
pub type Logits = [f64; 5];

/// Agent 2's logit index for each state written from agent 1's perspective.
const MIRROR: [usize; 4] = [1, 3, 2, 4];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IpdPayoffs {
    pub r1: [f64; 4],
    pub r2: [f64; 4],
    pub gamma: f64,
}

impl Default for IpdPayoffs {
    fn default() -> Self {
        Self {
            r1: [1.0, -1.0, 2.0, 0.0],
            r2: [1.0, 2.0, -1.0, 0.0],
            gamma: 0.95,
        }
    }
}

impl IpdPayoffs {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidParameter(format!(
                "gamma must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    /// Converts a discounted return into an average per-step reward.
    pub fn per_step(&self, j: f64) -> f64 {
        j * (1.0 - self.gamma)
    }
}

/// Which return a simulated naive learner climbs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NaiveObjective {
    /// Its own return.
    #[default]
    Own,
    /// The shaper's return (the literal superscript reading).
    Shaper,
}

/// Column-stochastic transition matrix `m[next][prev]` over (CC, CD, DC, DD)
/// and the initial state distribution.
pub fn markov_and_s0<S: Scalar>(phi1: &[S; 5], phi2: &[S; 5]) -> ([[S; 4]; 4], [S; 4]) {
    markov_from_probs(&phi1.map(S::sigmoid), &phi2.map(S::sigmoid))
}

/// As [`markov_and_s0`] but from cooperation probabilities.
pub fn markov_from_probs<S: Scalar>(c1: &[S; 5], c2: &[S; 5]) -> ([[S; 4]; 4], [S; 4]) {
    let joint = |a: S, b: S| {
        let (one_a, one_b) = (S::one() - a, S::one() - b);
        [a * b, a * one_b, one_a * b, one_a * one_b]
    };
    let mut m = [[S::zero(); 4]; 4];
    for prev in 0..4 {
        let col = joint(c1[prev + 1], c2[MIRROR[prev]]);
        for next in 0..4 {
            m[next][prev] = col[next];
        }
    }
    (m, joint(c1[0], c2[0]))
}

/// Discounted state visitation `(I - gamma M)^{-1} s0`.
fn occupancy<S: Scalar>(c1: &[S; 5], c2: &[S; 5], gamma: f64) -> Result<[S; 4]> {
    let (m, s0) = markov_from_probs(c1, c2);
    let mut a = [[S::zero(); 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            a[i][j] = m[i][j].scale(-gamma);
        }
        a[i][i] += S::one();
    }
    solve_linear(a, s0)
}

fn weigh<S: Scalar>(r: &[f64; 4], x: &[S; 4]) -> S {
    let mut acc = S::zero();
    for (rv, xv) in r.iter().zip(x) {
        acc += xv.scale(*rv);
    }
    acc
}

/// Exact discounted returns `(J1, J2)`.
pub fn expected_return<S: Scalar>(
    phi1: &[S; 5],
    phi2: &[S; 5],
    payoffs: &IpdPayoffs,
) -> Result<(S, S)> {
    expected_return_probs(&phi1.map(S::sigmoid), &phi2.map(S::sigmoid), payoffs)
}

/// Exact discounted returns from cooperation probabilities.
pub fn expected_return_probs<S: Scalar>(
    c1: &[S; 5],
    c2: &[S; 5],
    payoffs: &IpdPayoffs,
) -> Result<(S, S)> {
    let x = occupancy(c1, c2, payoffs.gamma)?;
    Ok((weigh(&payoffs.r1, &x), weigh(&payoffs.r2, &x)))
}

/// Partial gradient of agent 1's return with respect to its own logits.
pub fn partial_gradient(phi1: &Logits, phi2: &Logits, payoffs: &IpdPayoffs) -> Result<Logits> {
    let other = phi2.map(Dual::lift);
    gradient(|p| Ok(expected_return(p, &other, payoffs)?.0), *phi1)
}

/// One gradient step of a naive learner seated as agent 2 against `shaper`.
///
/// Generic in the scalar so the caller can differentiate through it.
pub fn naive_step<S: Scalar>(
    naive: &[S; 5],
    shaper: &[S; 5],
    payoffs: &IpdPayoffs,
    eta: f64,
    objective: NaiveObjective,
) -> Result<[S; 5]> {
    naive_step_probs(naive, &shaper.map(S::sigmoid), payoffs, eta, objective)
}

/// [`naive_step`] against a shaper given by cooperation probabilities.
pub fn naive_step_probs<S: Scalar>(
    naive: &[S; 5],
    shaper: &[S; 5],
    payoffs: &IpdPayoffs,
    eta: f64,
    objective: NaiveObjective,
) -> Result<[S; 5]> {
    let fixed = shaper.map(Dual::lift);
    let g = gradient(
        |p| {
            let (j1, j2) = expected_return_probs(&fixed, &p.map(Scalar::sigmoid), payoffs)?;
            Ok(match objective {
                NaiveObjective::Own => j2,
                NaiveObjective::Shaper => j1,
            })
        },
        *naive,
    )?;
    let mut out = *naive;
    for (o, gi) in out.iter_mut().zip(g) {
        *o += gi.scale(eta);
    }
    Ok(out)
}

/// Settings of the simulated naive learner.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NaiveSpec {
    pub eta: f64,
    pub steps: usize,
    pub objective: NaiveObjective,
}

/// Returns of both players along an unrolled naive trajectory, `steps + 1`
/// entries starting at the naive initialisation. The shaper is given by
/// cooperation probabilities, the naive learner by logits.
pub fn naive_trajectory<S: Scalar>(
    shaper: &[S; 5],
    naive_init: &[S; 5],
    payoffs: &IpdPayoffs,
    spec: &NaiveSpec,
) -> Result<Vec<(S, S)>> {
    let mut naive = *naive_init;
    let mut out = Vec::with_capacity(spec.steps + 1);
    for m in 0..=spec.steps {
        out.push(expected_return_probs(
            shaper,
            &naive.map(S::sigmoid),
            payoffs,
        )?);
        if m < spec.steps {
            naive = naive_step_probs(&naive, shaper, payoffs, spec.eta, spec.objective)?;
        }
    }
    Ok(out)
}

/// `sum_{m=0}^{M} J1(shaper, naive_m)` with the naive learner starting at `naive_init`.
pub fn shaping_objective<S: Scalar>(
    shaper: &[S; 5],
    naive_init: &Logits,
    payoffs: &IpdPayoffs,
    spec: &NaiveSpec,
) -> Result<S> {
    shaping_objective_probs(&shaper.map(S::sigmoid), naive_init, payoffs, spec)
}

/// Shaping objective with the shaper parameterised by probabilities.
pub fn shaping_objective_probs<S: Scalar>(
    shaper: &[S; 5],
    naive_init: &Logits,
    payoffs: &IpdPayoffs,
    spec: &NaiveSpec,
) -> Result<S> {
    let init = naive_init.map(S::constant);
    let traj = naive_trajectory(shaper, &init, payoffs, spec)?;
    let mut total = S::zero();
    for (j1, _) in traj {
        total += j1;
    }
    Ok(total)
}

/// Total derivative of the shaping objective through every naive update.
pub fn shaping_gradient(
    shaper: &Logits,
    naive_init: &Logits,
    payoffs: &IpdPayoffs,
    spec: &NaiveSpec,
) -> Result<Logits> {
    gradient(|p| shaping_objective(p, naive_init, payoffs, spec), *shaper)
}

/// `J1(phi_i, naive_M)` where the look-ahead learner starts at `phi_minus_i`.
pub fn lola_objective<S: Scalar>(
    phi_i: &[S; 5],
    phi_minus_i: &Logits,
    payoffs: &IpdPayoffs,
    spec: &NaiveSpec,
) -> Result<S> {
    let mut naive = phi_minus_i.map(S::constant);
    for _ in 0..spec.steps {
        naive = naive_step(&naive, phi_i, payoffs, spec.eta, spec.objective)?;
    }
    Ok(expected_return(phi_i, &naive, payoffs)?.0)
}

/// LOLA-DICE gradient: total derivative of the look-ahead return.
pub fn lola_dice_gradient(
    phi_i: &Logits,
    phi_minus_i: &Logits,
    payoffs: &IpdPayoffs,
    spec: &NaiveSpec,
) -> Result<Logits> {
    if spec.steps == 0 {
        return Err(Error::InvalidParameter(
            "LOLA-DICE needs at least one look-ahead".into(),
        ));
    }
    gradient(|p| lola_objective(p, phi_minus_i, payoffs, spec), *phi_i)
}

/// `p * a + (1 - p) * b`.
pub fn mix(p: f64, a: &Logits, b: &Logits) -> Logits {
    std::array::from_fn(|k| p * a[k] + (1.0 - p) * b[k])
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::relative_error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const BIG: f64 = 40.0;

    fn det(c: bool) -> Logits {
        [if c { BIG } else { -BIG }; 5]
    }

    fn random_logits(rng: &mut ChaCha8Rng) -> Logits {
        std::array::from_fn(|_| rng.gen_range(-3.0..3.0))
    }

    fn spec(steps: usize) -> NaiveSpec {
        NaiveSpec {
            eta: 5.0,
            steps,
            objective: NaiveObjective::Own,
        }
    }

    #[test]
    fn deterministic_markov_matrices() {
        let (m, s0) = markov_and_s0(&det(true), &det(true));
        for col in 0..4 {
            assert!((m[0][col] - 1.0).abs() < 1e-12);
        }
        assert!((s0[0] - 1.0).abs() < 1e-12);
        let (m, s0) = markov_and_s0(&det(false), &det(false));
        for col in 0..4 {
            assert!((m[3][col] - 1.0).abs() < 1e-12);
        }
        assert!((s0[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn columns_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let (m, s0) = markov_and_s0(&random_logits(&mut rng), &random_logits(&mut rng));
            for col in 0..4 {
                let s: f64 = (0..4).map(|r| m[r][col]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
            assert!((s0.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_returns() {
        let p = IpdPayoffs::default();
        let (a, b) = expected_return(&det(true), &det(true), &p).unwrap();
        assert!((a - 20.0).abs() < 1e-9 && (b - 20.0).abs() < 1e-9);
        let (a, b) = expected_return(&det(false), &det(false), &p).unwrap();
        assert!(a.abs() < 1e-9 && b.abs() < 1e-9);
        let (a, b) = expected_return(&det(false), &det(true), &p).unwrap();
        assert!((a - 40.0).abs() < 1e-9 && (b + 20.0).abs() < 1e-9);
    }

    #[test]
    fn tit_for_tat_against_defector() {
        // TFT cooperates once, then both defect forever
        let p = IpdPayoffs::default();
        let tft = [BIG, BIG, -BIG, BIG, -BIG];
        let (a, b) = expected_return(&tft, &det(false), &p).unwrap();
        assert!((a + 1.0).abs() < 1e-9 && (b - 2.0).abs() < 1e-9);
    }

    #[test]
    fn naive_step_zero_eta_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, b) = (random_logits(&mut rng), random_logits(&mut rng));
        let out = naive_step(&a, &b, &IpdPayoffs::default(), 0.0, NaiveObjective::Own).unwrap();
        assert_eq!(out, a);
    }

    #[test]
    fn naive_step_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = IpdPayoffs::default();
        for _ in 0..10 {
            let (naive, shaper) = (random_logits(&mut rng), random_logits(&mut rng));
            let stepped = naive_step(&naive, &shaper, &p, 1.0, NaiveObjective::Own).unwrap();
            let g: Vec<f64> = stepped.iter().zip(&naive).map(|(s, n)| s - n).collect();
            let err = relative_error(
                &g,
                |x| {
                    let arr: Logits = std::array::from_fn(|i| x[i]);
                    expected_return(&shaper, &arr, &p).unwrap().1
                },
                &naive,
                1e-4,
            );
            assert!(err < 1e-5, "{err}");
        }
    }

    #[test]
    fn naive_against_defector_does_not_raise_dd_cooperation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = IpdPayoffs::default();
        let defector = [logit(0.01); 5];
        for _ in 0..50 {
            let naive = random_logits(&mut rng);
            let out = naive_step(&naive, &defector, &p, 1.0, NaiveObjective::Own).unwrap();
            assert!(out[4] <= naive[4]);
        }
    }

    #[test]
    fn shaping_with_no_lookahead_is_partial() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = IpdPayoffs::default();
        let (a, b) = (random_logits(&mut rng), random_logits(&mut rng));
        let s = shaping_gradient(&a, &b, &p, &spec(0)).unwrap();
        let g = partial_gradient(&a, &b, &p).unwrap();
        assert_eq!(s, g);
    }

    #[test]
    fn shaping_minus_partial_is_one_step_lola() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = IpdPayoffs::default();
        let (a, b) = (random_logits(&mut rng), random_logits(&mut rng));
        let s = shaping_gradient(&a, &b, &p, &spec(1)).unwrap();
        let g = partial_gradient(&a, &b, &p).unwrap();
        let l = lola_dice_gradient(&a, &b, &p, &spec(1)).unwrap();
        for k in 0..5 {
            assert!((s[k] - g[k] - l[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn lola_with_zero_step_is_partial() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = IpdPayoffs::default();
        let (a, b) = (random_logits(&mut rng), random_logits(&mut rng));
        let mut s = spec(2);
        s.eta = 0.0;
        let l = lola_dice_gradient(&a, &b, &p, &s).unwrap();
        let g = partial_gradient(&a, &b, &p).unwrap();
        for k in 0..5 {
            assert!((l[k] - g[k]).abs() < 1e-12);
        }
        assert_eq!(mix(1.0, &l, &g), l);
    }

    #[test]
    fn agent_swap_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = IpdPayoffs::default();
        for _ in 0..200 {
            let (a, b) = (random_logits(&mut rng), random_logits(&mut rng));
            let (j1, j2) = expected_return(&a, &b, &p).unwrap();
            let (k1, k2) = expected_return(&b, &a, &p).unwrap();
            assert!((j1 - k2).abs() < 1e-10 && (j2 - k1).abs() < 1e-10);
        }
    }
}
