//! Return, advantage and policy-gradient estimators for batched
//! meta-trajectories. Arrays are indexed `[b][l]` with `l` running over all
//! `M * T` steps of a meta-episode.

pub mod loss;
pub mod oracle;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use loss::{policy_value_loss, LossConfig, LossStats, RlAlgorithm};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMode {
    Coala,
    BatchUnaware,
    Mfos,
}

impl EstimatorMode {
    pub const ALL: [EstimatorMode; 3] = [
        EstimatorMode::Coala,
        EstimatorMode::Mfos,
        EstimatorMode::BatchUnaware,
    ];

    /// `(average_future_episodes, normalize_current_episode)`.
    pub fn flags(self) -> (bool, bool) {
        match self {
            EstimatorMode::Coala => (true, true),
            EstimatorMode::Mfos => (true, false),
            EstimatorMode::BatchUnaware => (false, false),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EstimatorMode::Coala => "coala",
            EstimatorMode::BatchUnaware => "batch_unaware",
            EstimatorMode::Mfos => "mfos",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpponentKind {
    Naive,
    Meta,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReturnsConfig {
    pub gamma: f64,
    pub lambda_td: f64,
    pub lambda_gae: f64,
    pub reward_rescaling: f64,
    /// Divide centred advantages by their group standard deviation.
    pub scale_advantages: bool,
}

impl Default for ReturnsConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            lambda_td: 1.0,
            lambda_gae: 1.0,
            reward_rescaling: 1.0,
            scale_advantages: false,
        }
    }
}

impl ReturnsConfig {
    pub fn validate(&self, prefix: &str) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config(
                format!("{prefix}.gamma"),
                "must lie in (0, 1]",
            ));
        }
        for (k, v) in [
            ("lambda_td", self.lambda_td),
            ("lambda_gae", self.lambda_gae),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{prefix}.{k}"), "must lie in [0, 1]"));
            }
        }
        if self.reward_rescaling <= 0.0 || !self.reward_rescaling.is_finite() {
            return Err(Error::config(
                format!("{prefix}.reward_rescaling"),
                "must be positive",
            ));
        }
        Ok(())
    }
}

fn check_shape(name: &str, a: &[Vec<f64>], rows: usize, cols: usize) -> Result<()> {
    if a.len() != rows || a.iter().any(|r| r.len() != cols) {
        return Err(Error::Shape(format!("{name} must be {rows} x {cols}")));
    }
    Ok(())
}

/// Batch lambda returns. `v[b][t]` is the bootstrap value of the state
/// following step `t`. Scans backwards from `acc = v[:, L-1]`; at the last
/// step of every inner episode the per-row accumulator is replaced by the
/// batch-mean accumulator when `average_future` is set, and rewards enter
/// the per-row accumulator divided by `B` when `normalize_current` is set.
/// The batch-mean accumulator always uses unscaled rewards.
pub fn batch_lambda_returns(
    r: &[Vec<f64>],
    discount: f64,
    v: &[Vec<f64>],
    lambda: f64,
    average_future: bool,
    normalize_current: bool,
    t_inner: usize,
) -> Result<Vec<Vec<f64>>> {
    let b = r.len();
    let l = r.first().map_or(0, Vec::len);
    if b == 0 || l == 0 || t_inner == 0 || !l.is_multiple_of(t_inner) {
        return Err(Error::Shape(format!(
            "rewards {b} x {l} do not split into inner episodes of length {t_inner}"
        )));
    }
    check_shape("rewards", r, b, l)?;
    check_shape("values", v, b, l)?;
    let norm = if normalize_current { b as f64 } else { 1.0 };
    let mut acc: Vec<f64> = v.iter().map(|row| row[l - 1]).collect();
    let mut global = acc.iter().sum::<f64>() / b as f64;
    let mut out = vec![vec![0.0; l]; b];
    for t in (0..l).rev() {
        if average_future && t % t_inner == t_inner - 1 {
            acc.iter_mut().for_each(|a| *a = global);
        }
        let mut g = 0.0;
        for k in 0..b {
            let boot = (1.0 - lambda) * v[k][t];
            acc[k] = r[k][t] / norm + discount * (boot + lambda * acc[k]);
            out[k][t] = acc[k];
            g += r[k][t] + discount * (boot + lambda * global);
        }
        global = g / b as f64;
    }
    Ok(out)
}

/// Shifts per-step value estimates `V(h_l)` into successor values
/// `V(h_{l+1})`, with zero after the final step.
pub fn successor_values(values: &[Vec<f64>]) -> Vec<Vec<f64>> {
    values
        .iter()
        .map(|row| {
            row.iter()
                .skip(1)
                .copied()
                .chain(std::iter::once(0.0))
                .collect()
        })
        .collect()
}

/// Shared value targets: plain lambda returns with both flags off.
pub fn compute_value_targets(
    rewards: &[Vec<f64>],
    values: &[Vec<f64>],
    cfg: &ReturnsConfig,
    t_inner: usize,
) -> Result<Vec<Vec<f64>>> {
    batch_lambda_returns(
        rewards,
        cfg.gamma,
        &successor_values(values),
        cfg.lambda_td,
        false,
        false,
        t_inner,
    )
}

/// GAE variant per estimator mode: TD errors fed through the batch lambda
/// return scan with discount `gamma * lambda_gae` and lambda 1.
pub fn compute_advantages(
    rewards: &[Vec<f64>],
    values: &[Vec<f64>],
    cfg: &ReturnsConfig,
    t_inner: usize,
    mode: EstimatorMode,
) -> Result<Vec<Vec<f64>>> {
    check_shape(
        "values",
        values,
        rewards.len(),
        rewards.first().map_or(0, Vec::len),
    )?;
    let next = successor_values(values);
    let delta: Vec<Vec<f64>> = rewards
        .iter()
        .zip(values)
        .zip(&next)
        .map(|((r, v), n)| {
            (0..r.len())
                .map(|t| r[t] + cfg.gamma * n[t] - v[t])
                .collect()
        })
        .collect();
    let zeros = vec![vec![0.0; delta[0].len()]; delta.len()];
    let (avg, norm) = mode.flags();
    batch_lambda_returns(
        &delta,
        cfg.gamma * cfg.lambda_gae,
        &zeros,
        1.0,
        avg,
        norm,
        t_inner,
    )
}

/// Per-action weights of the raw-return policy gradient for `mode`, so that
/// the gradient is `sum_b sum_l w[b][l] * grad log pi(a_l^b | h_l^b)`.
pub fn reinforce_weights(
    rewards: &[Vec<f64>],
    t_inner: usize,
    mode: EstimatorMode,
) -> Result<Vec<Vec<f64>>> {
    let (current, future) = split_returns(rewards, t_inner, mode)?;
    Ok(current
        .iter()
        .zip(&future)
        .map(|(c, f)| c.iter().zip(f).map(|(x, y)| x + y).collect())
        .collect())
}

/// Splits the raw-return weights into the part from the current inner
/// episode and the part from later inner episodes.
pub fn split_returns(
    rewards: &[Vec<f64>],
    t_inner: usize,
    mode: EstimatorMode,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let b = rewards.len();
    let l = rewards.first().map_or(0, Vec::len);
    let zeros = vec![vec![0.0; l]; b];
    let (avg, norm) = mode.flags();
    let full = batch_lambda_returns(rewards, 1.0, &zeros, 1.0, avg, norm, t_inner)?;
    let scale = if norm { b as f64 } else { 1.0 };
    let mut current = vec![vec![0.0; l]; b];
    for k in 0..b {
        let mut acc = 0.0;
        for t in (0..l).rev() {
            if t % t_inner == t_inner - 1 {
                acc = 0.0;
            }
            acc += rewards[k][t] / scale;
            current[k][t] = acc;
        }
    }
    // Per-trajectory averaging of the batch-unaware estimator.
    let outer = if mode == EstimatorMode::BatchUnaware {
        1.0 / b as f64
    } else {
        1.0
    };
    let future = full
        .iter()
        .zip(&current)
        .map(|(f, c)| f.iter().zip(c).map(|(x, y)| outer * (x - y)).collect())
        .collect();
    let current = current
        .into_iter()
        .map(|c| c.into_iter().map(|x| outer * x).collect())
        .collect();
    Ok((current, future))
}

/// Raw-return policy gradient from per-action score vectors
/// `scores[b][l] = grad log pi(a_l^b | h_l^b)`.
pub fn reinforce_gradient(
    rewards: &[Vec<f64>],
    scores: &[Vec<Vec<f64>>],
    t_inner: usize,
    mode: EstimatorMode,
) -> Result<Vec<f64>> {
    let w = reinforce_weights(rewards, t_inner, mode)?;
    Ok(weighted_sum(&w, scores))
}

fn weighted_sum(w: &[Vec<f64>], scores: &[Vec<Vec<f64>>]) -> Vec<f64> {
    let dim = scores.first().and_then(|s| s.first()).map_or(0, Vec::len);
    let mut g = vec![0.0; dim];
    for (wb, sb) in w.iter().zip(scores) {
        for (&wl, sl) in wb.iter().zip(sb) {
            for (gi, &si) in g.iter_mut().zip(sl) {
                *gi += wl * si;
            }
        }
    }
    g
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Ratio of the future-episode to the current-episode gradient norm under
/// `mode`'s weighting; `+inf` when the current part vanishes.
pub fn gradient_balance(
    rewards: &[Vec<f64>],
    scores: &[Vec<Vec<f64>>],
    t_inner: usize,
    mode: EstimatorMode,
) -> Result<f64> {
    let (current, future) = split_returns(rewards, t_inner, mode)?;
    Ok(norm_ratio(
        &weighted_sum(&future, scores),
        &weighted_sum(&current, scores),
    ))
}

pub fn norm_ratio(num: &[f64], den: &[f64]) -> f64 {
    let d = norm(den);
    if d == 0.0 {
        f64::INFINITY
    } else {
        norm(num) / d
    }
}

/// Centres advantages separately within each opponent-kind group, and
/// optionally divides by the group standard deviation.
pub fn advantage_normalize(groups: &mut [(OpponentKind, &mut [Vec<f64>])], scale: bool) {
    for kind in [OpponentKind::Naive, OpponentKind::Meta] {
        let mut n = 0usize;
        let mut sum = 0.0;
        for (k, a) in groups.iter() {
            if *k == kind {
                for row in a.iter() {
                    n += row.len();
                    sum += row.iter().sum::<f64>();
                }
            }
        }
        if n == 0 {
            continue;
        }
        let mean = sum / n as f64;
        let mut sq = 0.0;
        for (k, a) in groups.iter_mut() {
            if *k == kind {
                for row in a.iter_mut() {
                    for x in row.iter_mut() {
                        *x -= mean;
                        sq += *x * *x;
                    }
                }
            }
        }
        if scale {
            let sd = (sq / n as f64).sqrt();
            if sd > 1e-8 {
                for (k, a) in groups.iter_mut() {
                    if *k == kind {
                        a.iter_mut()
                            .flat_map(|r| r.iter_mut())
                            .for_each(|x| *x /= sd);
                    }
                }
            }
        }
    }
}

/// Multiplies every reward by the rescaling factor.
pub fn rescale_rewards(rewards: &[Vec<f64>], factor: f64) -> Vec<Vec<f64>> {
    rewards
        .iter()
        .map(|r| r.iter().map(|x| x * factor).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_traces() {
        let r = vec![vec![1.0, 0.0, 2.0]];
        let v = vec![vec![5.0; 3]];
        assert_eq!(
            batch_lambda_returns(&r, 0.5, &v, 1.0, false, false, 3).unwrap(),
            vec![vec![2.125, 2.25, 4.5]]
        );
        assert_eq!(
            batch_lambda_returns(&r, 0.5, &v, 0.0, false, false, 3).unwrap(),
            vec![vec![3.5, 2.5, 4.5]]
        );
        assert_eq!(
            batch_lambda_returns(&r, 0.5, &v, 1.0, false, true, 3).unwrap(),
            batch_lambda_returns(&r, 0.5, &v, 1.0, false, false, 3).unwrap()
        );
    }

    #[test]
    fn shape_errors() {
        let r = vec![vec![1.0; 4]];
        assert!(batch_lambda_returns(&r, 1.0, &r, 1.0, false, false, 3).is_err());
        assert!(batch_lambda_returns(&r, 1.0, &[vec![0.0; 3]], 1.0, false, false, 2).is_err());
    }

    #[test]
    fn value_target_examples() {
        let cfg = ReturnsConfig::default();
        let r = vec![vec![1.0; 6]];
        let t = compute_value_targets(&r, &[vec![0.0; 6]], &cfg, 3).unwrap();
        assert_eq!(t, vec![vec![6.0, 5.0, 4.0, 3.0, 2.0, 1.0]]);
        let z = vec![vec![0.0; 6]; 2];
        assert_eq!(compute_value_targets(&z, &z, &cfg, 3).unwrap(), z);
    }

    #[test]
    fn hand_coala_two_rows() {
        // Two rows, two inner episodes of one step each.
        let r = vec![vec![1.0, 3.0], vec![2.0, 5.0]];
        let w = reinforce_weights(&r, 1, EstimatorMode::Coala).unwrap();
        assert_eq!(w, vec![vec![0.5 + 4.0, 1.5], vec![1.0 + 4.0, 2.5]]);
        let w = reinforce_weights(&r, 1, EstimatorMode::Mfos).unwrap();
        assert_eq!(w, vec![vec![1.0 + 4.0, 3.0], vec![2.0 + 4.0, 5.0]]);
        let w = reinforce_weights(&r, 1, EstimatorMode::BatchUnaware).unwrap();
        assert_eq!(w, vec![vec![2.0, 1.5], vec![3.5, 2.5]]);
    }

    #[test]
    fn advantage_modes() {
        let cfg = ReturnsConfig {
            gamma: 0.9,
            lambda_gae: 0.8,
            ..Default::default()
        };
        let r = vec![vec![1.0, -1.0, 2.0, 0.5]];
        let v = vec![vec![0.3, 0.1, -0.2, 0.4]];
        let c = compute_advantages(&r, &v, &cfg, 2, EstimatorMode::Coala).unwrap();
        let u = compute_advantages(&r, &v, &cfg, 2, EstimatorMode::BatchUnaware).unwrap();
        assert_eq!(c, u);

        // Zero TD errors: r_t = V_t - gamma V_{t+1}.
        let v = vec![vec![1.0, 2.0, 3.0, 4.0], vec![0.5, 0.5, 0.5, 0.5]];
        let r: Vec<Vec<f64>> = v
            .iter()
            .map(|row| {
                (0..4)
                    .map(|t| row[t] - 0.9 * row.get(t + 1).copied().unwrap_or(0.0))
                    .collect()
            })
            .collect();
        for m in EstimatorMode::ALL {
            let a = compute_advantages(&r, &v, &cfg, 2, m).unwrap();
            assert!(a.iter().flatten().all(|x| x.abs() < 1e-12), "{m:?}");
        }
    }

    #[test]
    fn mfos_differs_only_on_current_terms() {
        let cfg = ReturnsConfig {
            gamma: 0.95,
            lambda_gae: 0.9,
            ..Default::default()
        };
        let r = vec![
            vec![1.0, -1.0, 2.0, 0.5],
            vec![0.0, 2.0, -1.0, 1.0],
            vec![1.5, 0.0, 0.0, 2.0],
        ];
        let v = vec![vec![0.1; 4]; 3];
        let c = compute_advantages(&r, &v, &cfg, 2, EstimatorMode::Coala).unwrap();
        let m = compute_advantages(&r, &v, &cfg, 2, EstimatorMode::Mfos).unwrap();
        // In the last inner episode there is no future: mfos = B * coala.
        for b in 0..3 {
            for t in 2..4 {
                assert!((m[b][t] - 3.0 * c[b][t]).abs() < 1e-12);
            }
        }
        // In earlier episodes the future part coincides.
        let next = successor_values(&v);
        for b in 0..3 {
            let d1 = r[b][1] + 0.95 * next[b][1] - v[b][1];
            assert!(((m[b][1] - d1) - (c[b][1] - d1 / 3.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn centering() {
        let mut a = vec![vec![4.0, 6.0]];
        let mut b = vec![vec![-4.0, -6.0]];
        advantage_normalize(
            &mut [
                (OpponentKind::Naive, &mut a[..]),
                (OpponentKind::Meta, &mut b[..]),
            ],
            false,
        );
        assert_eq!(a, vec![vec![-1.0, 1.0]]);
        assert_eq!(b, vec![vec![1.0, -1.0]]);
        let mut c = [vec![3.0; 4]];
        advantage_normalize(&mut [(OpponentKind::Meta, &mut c[..])], true);
        assert!(c[0].iter().all(|&x| x == 0.0));
        let mut d = [vec![1.0, 2.0, 6.0]];
        advantage_normalize(&mut [(OpponentKind::Naive, &mut d[..])], true);
        assert!(d[0].iter().sum::<f64>().abs() < 1e-9);
        assert!((d[0].iter().map(|x| x * x).sum::<f64>() / 3.0 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn balance_identities() {
        let r = vec![vec![1.0, 0.5, -1.0, 2.0], vec![0.0, 1.0, 1.0, -2.0]];
        let scores: Vec<Vec<Vec<f64>>> = (0..2)
            .map(|b| {
                (0..4)
                    .map(|l| vec![(b + l) as f64 * 0.3 - 0.4, 1.0 - l as f64 * 0.2])
                    .collect()
            })
            .collect();
        let c = gradient_balance(&r, &scores, 2, EstimatorMode::Coala).unwrap();
        let m = gradient_balance(&r, &scores, 2, EstimatorMode::Mfos).unwrap();
        assert!((c - 2.0 * m).abs() < 1e-12);
        let zero = vec![vec![0.0; 4]; 2];
        assert_eq!(
            gradient_balance(&zero, &scores, 2, EstimatorMode::Coala).unwrap(),
            f64::INFINITY
        );
        for mode in EstimatorMode::ALL {
            assert!(reinforce_gradient(&zero, &scores, 2, mode)
                .unwrap()
                .iter()
                .all(|&x| x == 0.0));
        }
        let r1 = vec![r[0].clone()];
        let s1 = vec![scores[0].clone()];
        assert_eq!(
            gradient_balance(&r1, &s1, 2, EstimatorMode::Coala).unwrap(),
            gradient_balance(&r1, &s1, 2, EstimatorMode::Mfos).unwrap()
        );
        assert_eq!(
            reinforce_gradient(&r1, &s1, 2, EstimatorMode::Coala).unwrap(),
            reinforce_gradient(&r1, &s1, 2, EstimatorMode::BatchUnaware).unwrap()
        );
    }

    fn return_to_go(r: &[f64], gamma: f64) -> Vec<f64> {
        let mut out = vec![0.0; r.len()];
        let mut acc = 0.0;
        for t in (0..r.len()).rev() {
            acc = r[t] + gamma * acc;
            out[t] = acc;
        }
        out
    }

    proptest! {
        #[test]
        fn flags_off_equals_return_to_go(
            rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 6), 1..4),
            gamma in 0.0f64..1.0,
        ) {
            let zeros = vec![vec![0.0; 6]; rows.len()];
            let out = batch_lambda_returns(&rows, gamma, &zeros, 1.0, false, false, 3).unwrap();
            for (o, r) in out.iter().zip(&rows) {
                for (x, y) in o.iter().zip(return_to_go(r, gamma)) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn single_row_modes_agree(
            r in prop::collection::vec(-5.0f64..5.0, 6),
            v in prop::collection::vec(-5.0f64..5.0, 6),
        ) {
            let cfg = ReturnsConfig { gamma: 0.9, lambda_gae: 0.7, ..Default::default() };
            let c = compute_advantages(std::slice::from_ref(&r), std::slice::from_ref(&v), &cfg, 2, EstimatorMode::Coala).unwrap();
            for m in [EstimatorMode::Mfos, EstimatorMode::BatchUnaware] {
                prop_assert_eq!(&c, &compute_advantages(std::slice::from_ref(&r), std::slice::from_ref(&v), &cfg, 2, m).unwrap());
            }
        }

        #[test]
        fn rescaling_round_trips(r in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 1..3), f in 0.01f64..10.0) {
            let back = rescale_rewards(&rescale_rewards(&r, f), 1.0 / f);
            for (a, b) in back.iter().flatten().zip(r.iter().flatten()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
