//! Exact planning on tabular linear MDPs with a fail state.
//!
//! Robust backups are applied factor by factor: for each feature coordinate
//! `i`, `ν_i = inf_{μ ∈ ball(μ⁰_{h,i})} E_μ V_{h+1}`, and
//! `Q_h(s, a) = r_h(s, a) + ⟨φ(s, a), ν⟩`.

use crate::agents::{EpisodeLog, LinearQ, PolicyUpdate, TrainedPolicy};
use crate::duality::{exact_dual_value, truncated_expectation};
use crate::env::{TabularEnv, TabularFactorModel};
use crate::error::{Error, Result};
use crate::policy::{
    kl_divergence, log_partition_value, softmax_probs, ReferencePolicy, SoftmaxPolicy, TabularPolicy,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RobustMode {
    /// Uncertainty set: TV ball of radius `rho` around each factor.
    Drmdp { rho: f64 },
    /// TV penalty with weight `1/sigma`.
    Rrmdp { sigma: f64 },
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub mode: RobustMode,
    pub eta: f64,
    /// `[step][state]`, with `H + 1` rows; the last row is zero.
    pub values: Vec<Vec<f64>>,
    /// `[step][state][action]`.
    pub q: Vec<Vec<Vec<f64>>>,
    /// Per-step robust continuation vector `ν_h`.
    pub nu: Vec<Vec<f64>>,
    pub policy: TabularPolicy,
}

impl OracleResult {
    /// `Ṽ*_1(s₁)`.
    pub fn initial_value(&self, model: &TabularFactorModel) -> f64 {
        self.values[0][model.initial_state_index()]
    }
}

/// `ν_h` from `V_{h+1}`.
pub fn robust_continuation(
    model: &TabularFactorModel,
    h: usize,
    next_values: &[f64],
    mode: RobustMode,
) -> Result<Vec<f64>> {
    (0..model.dim())
        .map(|i| match mode {
            RobustMode::Drmdp { rho } => exact_dual_value(model.factor(h, i), next_values, rho),
            RobustMode::Rrmdp { sigma } => truncated_expectation(model.factor(h, i), next_values, sigma),
        })
        .collect()
}

fn q_row(model: &TabularFactorModel, h: usize, s: usize, nu: &[f64]) -> Vec<f64> {
    (0..model.n_actions())
        .map(|a| {
            if s == model.fail_state() {
                return 0.0;
            }
            let phi = model.phi(s, a).as_slice();
            model.reward_at(h, s, a) + phi.iter().zip(nu).map(|(x, n)| x * n).sum::<f64>()
        })
        .collect()
}

fn check_mode(mode: RobustMode) -> Result<()> {
    match mode {
        RobustMode::Drmdp { rho } if !(0.0..=1.0).contains(&rho) => {
            Err(Error::invalid("rho", format!("must lie in [0, 1], got {rho}")))
        }
        RobustMode::Rrmdp { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
            Err(Error::invalid("sigma", format!("must be > 0, got {sigma}")))
        }
        _ => Ok(()),
    }
}

/// Optimal regularized robust values and the softmax policy they induce.
pub fn oracle_optimal(
    model: &TabularFactorModel,
    mode: RobustMode,
    eta: f64,
    reference: &ReferencePolicy,
) -> Result<OracleResult> {
    check_mode(mode)?;
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::invalid("eta", format!("must be > 0, got {eta}")));
    }
    let (horizon, n) = (model.horizon(), model.n_states());
    let mut values = vec![vec![0.0; n]; horizon + 1];
    let mut q = vec![Vec::new(); horizon];
    let mut nus = vec![Vec::new(); horizon];
    let mut probs = vec![Vec::new(); horizon];
    for h in (0..horizon).rev() {
        let nu = robust_continuation(model, h, &values[h + 1], mode)?;
        for s in 0..n {
            let row = q_row(model, h, s, &nu);
            let reference_row = reference.probs(h, Some(s))?;
            values[h][s] = log_partition_value(&reference_row, &row, eta)?;
            probs[h].push(softmax_probs(&reference_row, &row, eta)?);
            q[h].push(row);
        }
        nus[h] = nu;
    }
    Ok(OracleResult {
        mode,
        eta,
        values,
        q,
        nu: nus,
        policy: TabularPolicy { probs },
    })
}

/// Regularized robust value of a fixed policy, `[step][state]` with `H + 1` rows.
pub fn oracle_policy_value(
    model: &TabularFactorModel,
    mode: RobustMode,
    eta: f64,
    reference: &ReferencePolicy,
    policy: &TabularPolicy,
) -> Result<Vec<Vec<f64>>> {
    check_mode(mode)?;
    let (horizon, n) = (model.horizon(), model.n_states());
    let mut values = vec![vec![0.0; n]; horizon + 1];
    for h in (0..horizon).rev() {
        let nu = robust_continuation(model, h, &values[h + 1], mode)?;
        for s in 0..n {
            let row = q_row(model, h, s, &nu);
            let pi = policy.get(h, s);
            let kl = kl_divergence(pi, &reference.probs(h, Some(s))?)?;
            values[h][s] = pi.iter().zip(&row).map(|(p, x)| p * x).sum::<f64>() - kl / eta;
        }
    }
    Ok(values)
}

/// Expected undiscounted return of a policy under the model's nominal kernel.
pub fn expected_return(model: &TabularFactorModel, policy: &TabularPolicy) -> Vec<Vec<f64>> {
    let (horizon, n) = (model.horizon(), model.n_states());
    let mut values = vec![vec![0.0; n]; horizon + 1];
    for h in (0..horizon).rev() {
        for s in 0..n {
            let pi = policy.get(h, s);
            values[h][s] = (0..model.n_actions())
                .map(|a| {
                    let next: f64 = model
                        .kernel(h, s, a)
                        .iter()
                        .zip(&values[h + 1])
                        .map(|(p, v)| p * v)
                        .sum();
                    pi[a] * (model.reward_at(h, s, a) + next)
                })
                .sum();
        }
    }
    values
}

/// Largest `|Q_h(s,a) − r_h(s,a) − ⟨φ(s,a), ν_h⟩|` over the table.
pub fn bellman_residual(model: &TabularFactorModel, result: &OracleResult) -> Result<f64> {
    let mut worst = 0.0_f64;
    for h in 0..model.horizon() {
        let nu = robust_continuation(model, h, &result.values[h + 1], result.mode)?;
        for s in 0..model.n_states() {
            for (got, want) in result.q[h][s].iter().zip(q_row(model, h, s, &nu)) {
                worst = worst.max((got - want).abs());
            }
        }
    }
    Ok(worst)
}

/// `(1/K) Σ_k (Ṽ*_1(s₁^k) − Ṽ^{π^k}_1(s₁^k))` on the source model, where `π^k`
/// is the behavior policy of episode `k`.
pub fn ave_subopt(
    log: &EpisodeLog<usize>,
    oracle: &OracleResult,
    env: &TabularEnv,
    eta: f64,
    reference: &ReferencePolicy,
) -> Result<f64> {
    if log.episodes.is_empty() {
        return Err(Error::invalid("log", "no episodes"));
    }
    let model = env.source();
    let states: Vec<usize> = (0..model.n_states()).collect();
    let mut total = 0.0;
    for ep in &log.episodes {
        let pi = behavior_table(env, &states, log.spec.update, reference, eta, &ep.behavior)?;
        let v = oracle_policy_value(model, oracle.mode, eta, reference, &pi)?;
        let s1 = ep.trajectory.steps[0].state;
        total += oracle.values[0][s1] - v[0][s1];
    }
    Ok((total / log.episodes.len() as f64).max(0.0))
}

fn behavior_table(
    env: &TabularEnv,
    states: &[usize],
    update: PolicyUpdate,
    reference: &ReferencePolicy,
    eta: f64,
    q: &LinearQ,
) -> Result<TabularPolicy> {
    match update {
        PolicyUpdate::Softmax { .. } => {
            let p = SoftmaxPolicy::new(reference.clone(), eta, q.clone())?;
            TabularPolicy::materialize(env, states, &p)
        }
        PolicyUpdate::Greedy => {
            let p = TrainedPolicy::from_q(update, reference, q.clone())?;
            TabularPolicy::materialize(env, states, &p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{random_model, RandomModelSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> TabularFactorModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_model(
            &mut rng,
            RandomModelSpec {
                n_states: 5,
                n_actions: 3,
                dim: 3,
                horizon: 3,
            },
        )
        .unwrap()
    }

    #[test]
    fn optimal_policy_evaluates_to_optimal_value() {
        for seed in 0..5 {
            let m = model(seed);
            let r = ReferencePolicy::uniform(3);
            for mode in [RobustMode::Drmdp { rho: 0.2 }, RobustMode::Rrmdp { sigma: 0.7 }] {
                let opt = oracle_optimal(&m, mode, 5.0, &r).unwrap();
                let v = oracle_policy_value(&m, mode, 5.0, &r, &opt.policy).unwrap();
                for h in 0..=3 {
                    for s in 0..5 {
                        assert!((v[h][s] - opt.values[h][s]).abs() < 1e-10);
                    }
                }
                assert!(bellman_residual(&m, &opt).unwrap() <= 1e-10);
                assert!(opt.values[3].iter().all(|x| *x == 0.0));
                for h in 0..3 {
                    assert_eq!(opt.values[h][m.fail_state()], 0.0);
                }
            }
        }
    }

    #[test]
    fn zero_radius_matches_nominal_expectation() {
        let m = model(9);
        let r = ReferencePolicy::uniform(3);
        let opt = oracle_optimal(&m, RobustMode::Drmdp { rho: 0.0 }, 2.0, &r).unwrap();
        let raw = expected_return(&m, &opt.policy);
        let v = oracle_policy_value(&m, RobustMode::Drmdp { rho: 0.0 }, 2.0, &r, &opt.policy).unwrap();
        // Regularized value = expected return minus expected KL terms, so it is smaller.
        assert!(v[0][1] <= raw[0][1] + 1e-12);
    }

    #[test]
    fn rejects_bad_parameters() {
        let m = model(1);
        let r = ReferencePolicy::uniform(3);
        assert!(oracle_optimal(&m, RobustMode::Drmdp { rho: 1.5 }, 1.0, &r).is_err());
        assert!(oracle_optimal(&m, RobustMode::Rrmdp { sigma: 0.0 }, 1.0, &r).is_err());
        assert!(oracle_optimal(&m, RobustMode::Drmdp { rho: 0.1 }, 0.0, &r).is_err());
    }

    #[test]
    fn support_violation_is_reported() {
        let m = model(2);
        let r = ReferencePolicy::per_step(vec![vec![1.0, 0.0, 0.0]; 3]).unwrap();
        let bad = TabularPolicy {
            probs: vec![vec![vec![0.0, 1.0, 0.0]; 5]; 3],
        };
        assert!(matches!(
            oracle_policy_value(&m, RobustMode::Drmdp { rho: 0.1 }, 1.0, &r, &bad),
            Err(Error::SupportViolation { .. })
        ));
    }
}
