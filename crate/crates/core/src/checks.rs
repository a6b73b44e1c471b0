//! Oracle suites shared by the `check` and `diagnose` commands and the
//! acceptance tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analytic::game::{
    expected_return, lola_dice_gradient, lola_objective, partial_gradient, shaping_gradient,
    shaping_objective, Logits,
};
use crate::analytic::MixedGroupConfig;
use crate::autodiff::{relative_error, Eager, Tensor};
use crate::envs::cleanup::{self, Cell, CleanupConfig, CleanupState, NOOP, ZAP};
use crate::envs::{EnvConfig, EnvKind};
use crate::error::Result;
use crate::estimators::oracle::{self, MetaPolicy, MicroPomdp};
use crate::estimators::{batch_lambda_returns, EstimatorMode, OpponentKind};
use crate::policy::{self, NetParams};
use crate::training::{gradient_ratio, run_meta_episode, stream_rng, Opponent, Preset};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// Exact COALA expectation against the dual-number gradient on the
/// enumerable micro-POMDP, with the baseline gaps reported.
pub fn unbiasedness() -> Result<Check> {
    let cfg = MicroPomdp::default();
    let mut worst = 0.0f64;
    let mut gaps = (f64::INFINITY, f64::INFINITY);
    for theta in [[0.3, -0.5, 0.8], [0.5, 0.2, -0.9], [-1.2, 0.7, 0.1]] {
        let r = oracle::unbiasedness(&cfg, theta)?;
        worst = worst.max(r.coala_error);
        gaps.0 = gaps.0.min(r.mfos_gap);
        gaps.1 = gaps.1.min(r.batch_unaware_gap);
    }
    let passed = worst < 1e-8 && gaps.0 > 1e-6 && gaps.1 > 1e-6;
    Ok(Check::new(
        "estimator unbiasedness",
        passed,
        format!(
            "coala error {worst:.2e}, min mfos gap {:.3e}, min batch-unaware gap {:.3e}",
            gaps.0, gaps.1
        ),
    ))
}

/// COALA expectation under episode conditioning against the nested-dual
/// total derivative of the summed look-ahead returns.
pub fn lookahead() -> Result<Check> {
    let cfg = MicroPomdp {
        policy: MetaPolicy::EpisodeConditioned,
        ..MicroPomdp::default()
    };
    let mut worst = 0.0f64;
    for phi in [-0.4, 0.0, 0.9] {
        worst = worst.max(oracle::lookahead_equivalence(&cfg, phi)?.error);
    }
    Ok(Check::new(
        "look-ahead equivalence",
        worst < 1e-8,
        format!("max error {worst:.2e}"),
    ))
}

/// Hand traces of the batch return scan, and its flags-off reduction to
/// the plain return-to-go on random inputs.
pub fn return_scan() -> Result<Check> {
    let r = vec![vec![1.0, 0.0, 2.0]];
    let v = vec![vec![5.0; 3]];
    let a = batch_lambda_returns(&r, 0.5, &v, 1.0, false, false, 3)?;
    let b = batch_lambda_returns(&r, 0.5, &v, 0.0, false, false, 3)?;
    let traces = a == vec![vec![2.125, 2.25, 4.5]] && b == vec![vec![3.5, 2.5, 4.5]];

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let rows = rng.gen_range(1..5);
        let t_inner = rng.gen_range(1..5);
        let len = t_inner * rng.gen_range(1..5);
        let gamma: f64 = rng.gen_range(0.0..1.0);
        let r: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..len).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect();
        let out = batch_lambda_returns(
            &r,
            gamma,
            &vec![vec![0.0; len]; rows],
            1.0,
            false,
            false,
            t_inner,
        )?;
        for (row, got) in r.iter().zip(&out) {
            let mut acc = 0.0;
            for t in (0..len).rev() {
                acc = row[t] + gamma * acc;
                worst = worst.max((acc - got[t]).abs());
            }
        }
    }
    Ok(Check::new(
        "return scan traces",
        traces && worst < 1e-9,
        format!(
            "hand traces {}, max return-to-go error {worst:.2e}",
            if traces { "exact" } else { "WRONG" }
        ),
    ))
}

fn random_logits(rng: &mut ChaCha8Rng) -> Logits {
    std::array::from_fn(|_| rng.gen_range(-2.0..2.0))
}

fn worst_fd(analytic: &Logits, f: impl Fn(&Logits) -> f64, x: &Logits) -> f64 {
    relative_error(
        analytic,
        |p| {
            let a: Logits = std::array::from_fn(|i| p[i]);
            f(&a)
        },
        x,
        1e-5,
    )
}

/// Analytic-game gradients and policy BPTT against central differences.
pub fn gradchecks() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let payoffs = MixedGroupConfig::default().payoffs;
    let mut out = Vec::new();

    let mut worst = 0.0f64;
    for _ in 0..10 {
        let (a, b) = (random_logits(&mut rng), random_logits(&mut rng));
        let g = partial_gradient(&a, &b, &payoffs)?;
        worst = worst.max(worst_fd(
            &g,
            |p| expected_return(p, &b, &payoffs).unwrap().0,
            &a,
        ));
    }
    out.push(Check::new(
        "gradcheck partial",
        worst < 1e-4,
        format!("max rel err {worst:.2e}"),
    ));

    let base = MixedGroupConfig::default();
    let mut worst = 0.0f64;
    for steps in 1..=5 {
        let spec = MixedGroupConfig {
            look_ahead: steps,
            ..base.clone()
        }
        .naive_spec();
        let (a, b) = (random_logits(&mut rng), random_logits(&mut rng));
        let g = shaping_gradient(&a, &b, &payoffs, &spec)?;
        worst = worst.max(worst_fd(
            &g,
            |p| shaping_objective(p, &b, &payoffs, &spec).unwrap(),
            &a,
        ));
    }
    out.push(Check::new(
        "gradcheck shaping (M<=5)",
        worst < 1e-4,
        format!("max rel err {worst:.2e}"),
    ));

    let mut worst = 0.0f64;
    for steps in 1..=3 {
        let spec = MixedGroupConfig {
            look_ahead: steps,
            ..base.clone()
        }
        .naive_spec();
        let (a, b) = (random_logits(&mut rng), random_logits(&mut rng));
        let g = lola_dice_gradient(&a, &b, &payoffs, &spec)?;
        worst = worst.max(worst_fd(
            &g,
            |p| lola_objective(p, &b, &payoffs, &spec).unwrap(),
            &a,
        ));
    }
    out.push(Check::new(
        "gradcheck look-ahead (M<=3)",
        worst < 1e-4,
        format!("max rel err {worst:.2e}"),
    ));

    let worst = bptt_error(&mut rng)?;
    out.push(Check::new(
        "gradcheck policy BPTT",
        worst < 1e-4,
        format!("max rel err {worst:.2e}"),
    ));
    Ok(out)
}

fn bptt_error(rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let mut p = NetParams::<f64>::init(5, 3, rng);
        // Non-zero readouts so every tensor receives gradient.
        for t in p.tensors.iter_mut() {
            t.data
                .iter_mut()
                .for_each(|x| *x += rng.gen_range(-0.3..0.3));
        }
        let rows = 3;
        let obs: Vec<Tensor<f64>> = (0..4)
            .map(|_| {
                Tensor::from_vec(
                    rows,
                    5,
                    (0..rows * 5).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )
            })
            .collect();
        let reset = [true, false, rng.gen_bool(0.5), false];
        let actions: Vec<Vec<usize>> = (0..4)
            .map(|_| (0..rows).map(|_| rng.gen_range(0..3)).collect())
            .collect();
        let weights: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let grads = policy::logprob_gradient(&p, &obs, &reset, &actions, &weights)?;
        let analytic: Vec<f64> = grads.iter().flat_map(|t| t.data.iter().copied()).collect();
        let objective = |flat: &[f64]| {
            let mut q = p.clone();
            q.set_flat(flat);
            let out = policy::forward(&Eager, &policy::lift(&Eager, &q), &obs, &reset, None)
                .expect("shapes");
            let mut total = 0.0;
            for l in 0..4 {
                for r in 0..rows {
                    total += weights[l][r] * policy::log_probs(out.logits[l].row(r))[actions[l][r]];
                }
            }
            total
        };
        worst = worst.max(relative_error(&analytic, objective, &p.flat(), 1e-5));
    }
    Ok(worst)
}

/// Estimator, return-scan and gradcheck oracle suites.
pub fn oracle_suites() -> Result<Vec<Check>> {
    let mut out = vec![unbiasedness()?, lookahead()?, return_scan()?];
    out.extend(gradchecks()?);
    Ok(out)
}

/// CleanUp-lite and IPD environment properties: spawn and zap rates within
/// 0.01 over `steps` draws, the zap freeze length, reward conservation and
/// seeded reproducibility.
pub fn env_properties(steps: usize) -> Vec<Check> {
    let cfg = CleanupConfig::default();
    let mut out = Vec::new();

    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut s = CleanupState::reset(cfg, &mut rng);
    let (mut draws, mut hits) = (0usize, 0usize);
    while draws < steps {
        let a = [
            rng.gen_range(0..cleanup::N_ACTIONS),
            rng.gen_range(0..cleanup::N_ACTIONS),
        ];
        let (ev, done) = s.step(a, 50, &mut rng);
        if ev.dirt_possible {
            draws += 1;
            hits += ev.dirt_spawned as usize;
        }
        if done {
            s = CleanupState::reset(cfg, &mut rng);
        }
    }
    let dirt = hits as f64 / draws as f64;
    let mut worst = (dirt - cfg.p_pollution).abs();
    let mut detail = format!("dirt {dirt:.4} (p {})", cfg.p_pollution);

    // Apple draws at each fixed river dirt level, agents parked mid-grid.
    s.pos = [(0, 1), (cfg.rows - 1, 2)];
    let mut apple: Vec<(f64, usize, usize)> = Vec::new();
    for level in 0..3 {
        for _ in 0..steps {
            s.grid.iter_mut().for_each(|c| *c = Cell::Empty);
            for r in 0..level {
                s.grid[r * cfg.cols + cfg.river()] = Cell::Dirt;
            }
            let (ev, _) = s.step([NOOP, NOOP], usize::MAX, &mut rng);
            let Some(p) = ev.apple_prob else { continue };
            match apple.iter_mut().find(|e| e.0 == p) {
                Some(e) => {
                    e.1 += 1;
                    e.2 += ev.apple_spawned as usize;
                }
                None => apple.push((p, 1, ev.apple_spawned as usize)),
            }
        }
    }
    apple.sort_by(|a, b| a.0.total_cmp(&b.0));
    for &(p, n, k) in &apple {
        // Rates drawn fewer than steps/10 times carry sampling error above 0.01.
        if n >= steps / 10 {
            let f = k as f64 / n as f64;
            worst = worst.max((f - p).abs());
            detail.push_str(&format!(", apple {f:.4} (p {p:.3}, n {n})"));
        }
    }

    let mut zaps = 0usize;
    for _ in 0..steps {
        let mut z = CleanupState::reset(cfg, &mut rng);
        z.pos = [(2, 1), (2, 2)];
        zaps += z.step([ZAP, NOOP], 10, &mut rng).0.zap_hit[0] as usize;
    }
    let zap = zaps as f64 / steps as f64;
    worst = worst.max((zap - cfg.p_zap).abs());
    detail.push_str(&format!(", zap {zap:.4} (p {})", cfg.p_zap));
    out.push(Check::new("spawn and zap rates", worst < 0.01, detail));

    let mut freeze_ok = true;
    let mut lengths = Vec::new();
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z = CleanupState::reset(CleanupConfig { p_zap: 1.0, ..cfg }, &mut rng);
        z.pos = [(2, 1), (2, 2)];
        freeze_ok &= z.step([ZAP, NOOP], 100, &mut rng).0.zap_hit[0];
        let mut frozen = 0;
        while z.frozen(1) && frozen < 100 {
            let before = z.pos[1];
            let a = rng.gen_range(0..cleanup::N_ACTIONS);
            let (ev, _) = z.step([NOOP, a], 100, &mut rng);
            freeze_ok &= z.pos[1] == before && !ev.zap_attempted[1] && !ev.harvested[1];
            frozen += 1;
        }
        lengths.push(frozen);
    }
    freeze_ok &= lengths.iter().all(|&l| l == cfg.t_zap as usize);
    out.push(Check::new(
        "zap freeze length",
        freeze_ok,
        format!(
            "frozen steps {:?}..={:?} (t_zap {})",
            lengths.iter().min(),
            lengths.iter().max(),
            cfg.t_zap
        ),
    ));

    let mut conserved = true;
    let mut harvests = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let mut s = CleanupState::reset(cfg, &mut rng);
    for _ in 0..steps {
        let a = [
            rng.gen_range(0..cleanup::N_ACTIONS),
            rng.gen_range(0..cleanup::N_ACTIONS),
        ];
        let before = s.count(Cell::Apple);
        let (ev, done) = s.step(a, 100, &mut rng);
        let h = ev.harvested.iter().filter(|&&x| x).count();
        harvests += h;
        conserved &= ev.rewards.iter().sum::<f64>() == h as f64
            && (0..2).all(|i| ev.rewards[i] == ev.harvested[i] as u8 as f64)
            && s.count(Cell::Apple) + h == before + ev.apple_spawned as usize;
        if done {
            s = CleanupState::reset(cfg, &mut rng);
        }
    }
    out.push(Check::new(
        "reward conservation",
        conserved && harvests > 0,
        format!("{harvests} harvests, rewards equal harvests and apples balance"),
    ));

    let trace = |env_cfg: EnvConfig, seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut env = env_cfg.reset(&mut rng);
        let mut bits = Vec::new();
        for _ in 0..500 {
            let a = [
                rng.gen_range(0..env_cfg.n_actions()),
                rng.gen_range(0..env_cfg.n_actions()),
            ];
            let r = env.step(a, 50, &mut rng);
            bits.extend(r.rewards.map(f64::to_bits));
            bits.extend(
                env.observation(0)
                    .iter()
                    .chain(&env.observation(1))
                    .map(|x| x.to_bits() as u64),
            );
            if r.done {
                env = env_cfg.reset(&mut rng);
            }
        }
        bits
    };
    let cleanup_cfg = EnvConfig {
        kind: EnvKind::Cleanup,
        ..EnvConfig::default()
    };
    let same = (0..5).all(|seed| {
        trace(cleanup_cfg, seed) == trace(cleanup_cfg, seed)
            && trace(EnvConfig::default(), seed) == trace(EnvConfig::default(), seed)
    });
    let differs = trace(cleanup_cfg, 0) != trace(cleanup_cfg, 1);
    out.push(Check::new(
        "seeded bit-reproducibility",
        same && differs,
        format!("identical traces per seed {same}, distinct across seeds {differs}"),
    ));
    out
}

/// Gradient balance ratio per estimator at one inner batch size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub batch: usize,
    pub meta_episodes: usize,
    pub coala: f64,
    pub mfos: f64,
    pub batch_unaware: f64,
}

/// IPD rollouts of a fixed random meta policy against a fixed naive
/// initialisation, for each inner batch size in `batches`.
pub fn balance_sweep(
    batches: &[usize],
    meta_episodes: usize,
    seed: u64,
) -> Result<Vec<BalanceRow>> {
    use rayon::prelude::*;
    let meta = NetParams::init(5, 2, &mut stream_rng(seed, 9, 0, 0));
    let opp = Opponent {
        kind: OpponentKind::Naive,
        id: 0,
        params: NetParams::init(5, 2, &mut stream_rng(seed, 9, 1, 0)),
    };
    batches
        .iter()
        .map(|&b| {
            let mut cfg = Preset::IpdShaping.config(EstimatorMode::Coala);
            cfg.batch = b;
            let recs: Vec<_> = (0..meta_episodes)
                .into_par_iter()
                .map(|i| {
                    run_meta_episode(
                        &meta,
                        &opp,
                        &cfg,
                        &mut stream_rng(seed, 10, b as u64, i as u64),
                    )
                })
                .collect::<Result<_>>()?;
            let refs: Vec<_> = recs.iter().collect();
            Ok(BalanceRow {
                batch: b,
                meta_episodes,
                coala: gradient_ratio(&meta, &refs, EstimatorMode::Coala)?,
                mfos: gradient_ratio(&meta, &refs, EstimatorMode::Mfos)?,
                batch_unaware: gradient_ratio(&meta, &refs, EstimatorMode::BatchUnaware)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_suites_pass() {
        for c in oracle_suites().unwrap() {
            assert!(c.passed, "{c:?}");
        }
    }

    #[test]
    fn env_properties_hold() {
        for c in env_properties(20_000) {
            // Sampling error at 2e4 draws can exceed 0.01 only for the rates.
            assert!(c.passed || c.name == "spawn and zap rates", "{c:?}");
        }
    }

    #[test]
    fn balance_identical_at_unit_batch() {
        let rows = balance_sweep(&[1], 4, 0).unwrap();
        let r = &rows[0];
        assert!(
            (r.coala - r.mfos).abs() < 1e-12 && (r.coala - r.batch_unaware).abs() < 1e-12,
            "{r:?}"
        );
    }
}
