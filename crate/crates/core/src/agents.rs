//! Online learners: DR-RPO in its DRMDP and RRMDP forms, and the greedy
//! LSVI-UCB / DR-LSVI-UCB baselines.
//!
//! All four share one loop. Episode `k` plays the policy induced by the
//! previous estimate `Q̃^{k-1}` on the source kernel, then rebuilds
//! `Q̃^k` backwards from `h = H-1` using the trajectories of episodes
//! `1..k-1`. Next-state values in the backward pass come from the step-`h+1`
//! estimate built earlier in the same pass.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::duality::{check_sigma, drmdp_dual_max, rrmdp_truncate_targets, PiecewiseDualInstance};
use crate::env::{rollout, Kernel, LinearMdp, Trajectory};
use crate::error::{Error, Result};
use crate::numerics::{FeatureVector, GramMatrix, RegressionTargets};
use crate::policy::{
    log_partition_value, GreedyPolicy, Policy, QFunction, ReferencePolicy, SoftmaxPolicy,
};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Drmdp,
    Rrmdp,
    LsviUcb,
    DrLsviUcb,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Drmdp => "drmdp",
            Mode::Rrmdp => "rrmdp",
            Mode::LsviUcb => "lsvi_ucb",
            Mode::DrLsviUcb => "dr_lsvi_ucb",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "drmdp" => Some(Mode::Drmdp),
            "rrmdp" => Some(Mode::Rrmdp),
            "lsvi_ucb" => Some(Mode::LsviUcb),
            "dr_lsvi_ucb" => Some(Mode::DrLsviUcb),
            _ => None,
        }
    }
}

/// How the continuation value `ν_h` is regressed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Backup {
    /// TV ball of radius `rho`, solved through the one-dimensional dual.
    Robust { rho: f64 },
    /// TV penalty, i.e. targets truncated at `sigma`.
    Regularized { sigma: f64 },
    /// Plain ridge regression on untruncated targets.
    Nominal,
}

/// How the behavior policy is derived from `Q̃`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PolicyUpdate {
    Softmax { eta: f64 },
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub mode: Mode,
    pub rho: f64,
    pub sigma: f64,
    pub eta: f64,
    pub lambda: f64,
    /// `None` selects [`default_beta`].
    pub beta: Option<f64>,
    pub episodes: usize,
    pub seed: u64,
}

impl AgentConfig {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            rho: 0.3,
            sigma: 1.0,
            eta: 100.0,
            lambda: 1.0,
            beta: None,
            episodes: 100,
            seed: 0,
        }
    }

    pub fn backup(&self) -> Result<Backup> {
        match self.mode {
            Mode::Drmdp | Mode::DrLsviUcb => {
                if !(0.0..=1.0).contains(&self.rho) {
                    return Err(Error::invalid("rho", format!("must lie in [0, 1], got {}", self.rho)));
                }
                Ok(Backup::Robust { rho: self.rho })
            }
            Mode::Rrmdp => {
                check_sigma(self.sigma)?;
                Ok(Backup::Regularized { sigma: self.sigma })
            }
            Mode::LsviUcb => Ok(Backup::Nominal),
        }
    }

    pub fn update(&self) -> Result<PolicyUpdate> {
        match self.mode {
            Mode::Drmdp | Mode::Rrmdp => {
                if !(self.eta > 0.0 && self.eta.is_finite()) {
                    return Err(Error::invalid("eta", format!("must be > 0, got {}", self.eta)));
                }
                Ok(PolicyUpdate::Softmax { eta: self.eta })
            }
            Mode::LsviUcb | Mode::DrLsviUcb => Ok(PolicyUpdate::Greedy),
        }
    }

    /// The mode-independent run description for an environment.
    pub fn spec<E: LinearMdp + ?Sized>(&self, env: &E) -> Result<AgentSpec> {
        let beta = match self.beta {
            Some(b) => b,
            None => default_beta(env.dim(), self.episodes, env.horizon(), env.n_actions()),
        };
        AgentSpec::new(self.backup()?, self.update()?, self.lambda, beta, self.episodes)
    }
}

/// `β = dH sqrt(log(d K H |A|))`.
pub fn default_beta(dim: usize, episodes: usize, horizon: usize, n_actions: usize) -> f64 {
    let inner = (dim * episodes.max(1) * horizon * n_actions) as f64;
    (dim * horizon) as f64 * inner.ln().max(0.0).sqrt()
}

/// Fully resolved learner settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub backup: Backup,
    pub update: PolicyUpdate,
    pub lambda: f64,
    pub beta: f64,
    pub episodes: usize,
}

impl AgentSpec {
    pub fn new(
        backup: Backup,
        update: PolicyUpdate,
        lambda: f64,
        beta: f64,
        episodes: usize,
    ) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid("lambda", format!("must be > 0, got {lambda}")));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::invalid("beta", format!("must be >= 0, got {beta}")));
        }
        match backup {
            Backup::Robust { rho } if !(0.0..=1.0).contains(&rho) => {
                return Err(Error::invalid("rho", format!("must lie in [0, 1], got {rho}")))
            }
            Backup::Regularized { sigma } => check_sigma(sigma)?,
            _ => {}
        }
        if let PolicyUpdate::Softmax { eta } = update {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::invalid("eta", format!("must be > 0, got {eta}")));
            }
        }
        Ok(Self {
            backup,
            update,
            lambda,
            beta,
            episodes,
        })
    }
}

/// Step-`h` estimate: `Q̃(s, a) = min{φᵀ(θ + ν) + Γ(s, a), cap} · 1{s ≠ s†}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QParameters {
    pub theta: DVector<f64>,
    pub nu: DVector<f64>,
    pub beta: f64,
    /// `sqrt(diag(Λ⁻¹))`.
    pub bonus_widths: DVector<f64>,
    /// `H − h` for 0-based `h`.
    pub cap: f64,
}

impl QParameters {
    pub fn new(theta: DVector<f64>, nu: DVector<f64>, gram: &GramMatrix, beta: f64, cap: f64) -> Self {
        Self {
            theta,
            nu,
            beta,
            bonus_widths: gram.inverse_diag_sqrt(),
            cap,
        }
    }

    /// The all-zero estimate `Q̃⁰`.
    pub fn zero(dim: usize, cap: f64) -> Self {
        Self {
            theta: DVector::zeros(dim),
            nu: DVector::zeros(dim),
            beta: 0.0,
            bonus_widths: DVector::zeros(dim),
            cap,
        }
    }

    /// `Γ(s, a) = β Σ_i φ_i sqrt((Λ⁻¹)_ii)`.
    pub fn bonus(&self, phi: &FeatureVector) -> f64 {
        if self.beta == 0.0 {
            0.0
        } else {
            self.beta * phi.dot(&self.bonus_widths)
        }
    }

    pub fn evaluate(&self, phi: &FeatureVector, is_fail: bool) -> f64 {
        if is_fail {
            return 0.0;
        }
        let linear = phi.dot(&self.theta) + phi.dot(&self.nu);
        (linear + self.bonus(phi)).min(self.cap).max(0.0)
    }
}

/// Clipped optimistic Q at `(s, a)`.
pub fn q_evaluate<E: LinearMdp + ?Sized>(
    qp: &QParameters,
    env: &E,
    state: &E::State,
    action: usize,
) -> f64 {
    qp.evaluate(&env.features(state, action), env.is_fail(state))
}

/// `Q̃_h` for every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearQ {
    pub steps: Vec<QParameters>,
}

impl LinearQ {
    pub fn zero(dim: usize, horizon: usize) -> Self {
        Self {
            steps: (0..horizon)
                .map(|h| QParameters::zero(dim, (horizon - h) as f64))
                .collect(),
        }
    }
}

impl<E: LinearMdp + ?Sized> QFunction<E> for LinearQ {
    fn q_values(&self, env: &E, h: usize, state: &E::State) -> Vec<f64> {
        let qp = &self.steps[h];
        let fail = env.is_fail(state);
        (0..env.n_actions())
            .map(|a| qp.evaluate(&env.features(state, a), fail))
            .collect()
    }
}

/// Policy induced by a linear Q estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum TrainedPolicy {
    Softmax(SoftmaxPolicy<LinearQ>),
    Greedy(GreedyPolicy<LinearQ>),
}

impl TrainedPolicy {
    pub fn from_q(update: PolicyUpdate, reference: &ReferencePolicy, q: LinearQ) -> Result<Self> {
        Ok(match update {
            PolicyUpdate::Softmax { eta } => {
                TrainedPolicy::Softmax(SoftmaxPolicy::new(reference.clone(), eta, q)?)
            }
            PolicyUpdate::Greedy => TrainedPolicy::Greedy(GreedyPolicy { q }),
        })
    }

    pub fn q(&self) -> &LinearQ {
        match self {
            TrainedPolicy::Softmax(p) => &p.q,
            TrainedPolicy::Greedy(p) => &p.q,
        }
    }

    /// `Ṽ_h(s)`: the log-partition value for softmax, `max_a Q̃` for greedy,
    /// clipped to `[0, H − h]`.
    pub fn state_value<E: LinearMdp + ?Sized>(&self, env: &E, h: usize, state: &E::State) -> Result<f64> {
        let cap = (env.horizon() - h) as f64;
        let v = match self {
            TrainedPolicy::Softmax(p) => p.regularized_value(env, h, state)?,
            TrainedPolicy::Greedy(p) => p
                .q
                .q_values(env, h, state)
                .into_iter()
                .fold(0.0_f64, f64::max),
        };
        Ok(v.clamp(0.0, cap))
    }
}

impl<E: LinearMdp + ?Sized> Policy<E> for TrainedPolicy {
    fn action_probs(&self, env: &E, h: usize, state: &E::State) -> Result<Vec<f64>> {
        match self {
            TrainedPolicy::Softmax(p) => p.action_probs(env, h, state),
            TrainedPolicy::Greedy(p) => p.action_probs(env, h, state),
        }
    }
}

/// What happened in one training episode.
#[derive(Debug, Clone)]
pub struct EpisodeRecord<S> {
    pub trajectory: Trajectory<S>,
    /// `Γ_h^k(s_h^k, a_h^k)` under the estimate built in this episode.
    pub bonuses: Vec<f64>,
    /// `Ṽ_1^k(s_1^k)` under the estimate built in this episode.
    pub value_estimate: f64,
    /// `Q̃^{k-1}`, the estimate that generated this episode's behavior policy.
    pub behavior: LinearQ,
    pub elapsed: Duration,
}

#[derive(Debug, Clone)]
pub struct EpisodeLog<S> {
    pub spec: AgentSpec,
    pub episodes: Vec<EpisodeRecord<S>>,
}

impl<S> EpisodeLog<S> {
    /// `(1/K) Σ_k Σ_h Γ_h^k(s_h^k, a_h^k)`.
    pub fn mean_bonus_sum(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        let total: f64 = self.episodes.iter().map(|e| e.bonuses.iter().sum::<f64>()).sum();
        total / self.episodes.len() as f64
    }

    /// One line per `(episode, step)`; wall-clock time is left out so the
    /// output is reproducible.
    pub fn to_csv<E: LinearMdp<State = S> + ?Sized>(&self, env: &E) -> String {
        let mut out = String::from("episode,step,state,action,reward,next_state,bonus,value_estimate\n");
        for (k, ep) in self.episodes.iter().enumerate() {
            for (h, t) in ep.trajectory.steps.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    k + 1,
                    h + 1,
                    describe_state(env, &t.state),
                    t.action,
                    t.reward,
                    describe_state(env, &t.next_state),
                    ep.bonuses[h],
                    ep.value_estimate
                ));
            }
        }
        out
    }
}

fn describe_state<E: LinearMdp + ?Sized>(env: &E, s: &E::State) -> String {
    match env.state_index(s) {
        Some(i) => format!("s{}", i + 1),
        None => format!("{s:?}").replace([',', ' '], ""),
    }
}

/// Robust continuation `ν_i = max_{α ∈ [0, H]} Σ_τ (Λ⁻¹φ_τ)_i min(v_τ, α) − ρα`.
pub fn regress_nu_drmdp(
    gram: &GramMatrix,
    features: &[FeatureVector],
    next_values: &[f64],
    rho: f64,
    horizon_cap: f64,
) -> Result<DVector<f64>> {
    RegressionTargets::new(features, next_values)?;
    let d = gram.dim();
    let weights: Vec<DVector<f64>> = features
        .iter()
        .map(|phi| {
            if phi.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: phi.dim(),
                });
            }
            Ok(gram.inverse() * phi.as_vector())
        })
        .collect::<Result<_>>()?;
    let mut nu = DVector::zeros(d);
    for i in 0..d {
        let coeffs = weights.iter().map(|w| w[i]).collect();
        let inst = PiecewiseDualInstance::new(coeffs, next_values.to_vec(), horizon_cap, rho)?;
        nu[i] = drmdp_dual_max(&inst).value;
    }
    Ok(nu)
}

/// Regularized continuation `ν = Λ⁻¹ Σ_τ φ_τ min(v_τ, σ)`.
pub fn regress_nu_rrmdp(
    gram: &GramMatrix,
    features: &[FeatureVector],
    next_values: &[f64],
    sigma: f64,
) -> Result<DVector<f64>> {
    let truncated = rrmdp_truncate_targets(next_values, sigma)?;
    gram.ridge_solve(&RegressionTargets::new(features, &truncated)?)
}

/// Non-robust continuation `ν = Λ⁻¹ Σ_τ φ_τ v_τ`.
pub fn regress_nu_nominal(
    gram: &GramMatrix,
    features: &[FeatureVector],
    next_values: &[f64],
) -> Result<DVector<f64>> {
    gram.ridge_solve(&RegressionTargets::new(features, next_values)?)
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct RunOutput<S> {
    /// Policy induced by `Q̃^K`, i.e. what episode `K + 1` would play.
    pub policy: TrainedPolicy,
    pub log: EpisodeLog<S>,
}

/// Runs the shared learning loop with an explicit random stream.
pub fn run_agent<E: LinearMdp>(
    env: &E,
    reference: &ReferencePolicy,
    spec: &AgentSpec,
    rng: &mut dyn RngCore,
) -> Result<RunOutput<E::State>> {
    let d = env.dim();
    let horizon = env.horizon();
    if reference.n_actions() != env.n_actions() {
        return Err(Error::DimensionMismatch {
            expected: env.n_actions(),
            got: reference.n_actions(),
        });
    }
    let mut grams = (0..horizon)
        .map(|_| GramMatrix::new(d, spec.lambda))
        .collect::<Result<Vec<_>>>()?;
    let mut features: Vec<Vec<FeatureVector>> = vec![Vec::new(); horizon];
    let mut next_states: Vec<Vec<E::State>> = vec![Vec::new(); horizon];
    let mut current = LinearQ::zero(d, horizon);
    let mut episodes = Vec::with_capacity(spec.episodes);

    for _ in 0..spec.episodes {
        let started = Instant::now();
        let behavior = TrainedPolicy::from_q(spec.update, reference, current.clone())?;
        let trajectory = rollout(env, &behavior, Kernel::Source, rng)?;

        let mut steps: Vec<Option<QParameters>> = vec![None; horizon];
        for h in (0..horizon).rev() {
            let nu = if h + 1 == horizon {
                DVector::zeros(d)
            } else {
                let next_q = steps[h + 1].clone().expect("step h+1 is built first");
                let targets =
                    next_state_values(env, reference, spec.update, h + 1, next_q, &next_states[h])?;
                match spec.backup {
                    Backup::Robust { rho } => {
                        regress_nu_drmdp(&grams[h], &features[h], &targets, rho, horizon as f64)?
                    }
                    Backup::Regularized { sigma } => {
                        regress_nu_rrmdp(&grams[h], &features[h], &targets, sigma)?
                    }
                    Backup::Nominal => regress_nu_nominal(&grams[h], &features[h], &targets)?,
                }
            };
            steps[h] = Some(QParameters::new(
                env.theta(h).clone(),
                nu,
                &grams[h],
                spec.beta,
                (horizon - h) as f64,
            ));
        }
        let estimate = LinearQ {
            steps: steps.into_iter().map(|s| s.expect("all steps built")).collect(),
        };

        let bonuses = trajectory
            .steps
            .iter()
            .enumerate()
            .map(|(h, t)| estimate.steps[h].bonus(&env.features(&t.state, t.action)))
            .collect();
        let induced = TrainedPolicy::from_q(spec.update, reference, estimate)?;
        let value_estimate = induced.state_value(env, 0, &trajectory.steps[0].state)?;

        for (h, t) in trajectory.steps.iter().enumerate() {
            let phi = env.features(&t.state, t.action);
            grams[h].update(&phi)?;
            features[h].push(phi);
            next_states[h].push(t.next_state.clone());
        }

        let estimate = match induced {
            TrainedPolicy::Softmax(p) => p.q,
            TrainedPolicy::Greedy(p) => p.q,
        };
        episodes.push(EpisodeRecord {
            trajectory,
            bonuses,
            value_estimate,
            behavior: std::mem::replace(&mut current, estimate),
            elapsed: started.elapsed(),
        });
    }

    Ok(RunOutput {
        policy: TrainedPolicy::from_q(spec.update, reference, current)?,
        log: EpisodeLog {
            spec: *spec,
            episodes,
        },
    })
}

/// `Ṽ_{h}(s'_τ)` for every stored next state, under the step-`h` estimate.
fn next_state_values<E: LinearMdp>(
    env: &E,
    reference: &ReferencePolicy,
    update: PolicyUpdate,
    h: usize,
    step_q: QParameters,
    states: &[E::State],
) -> Result<Vec<f64>> {
    // Only step `h` of this wrapper is ever evaluated.
    let mut steps = vec![QParameters::zero(env.dim(), 0.0); env.horizon()];
    steps[h] = step_q;
    let policy = TrainedPolicy::from_q(update, reference, LinearQ { steps })?;
    let mut cache: HashMap<usize, f64> = HashMap::new();
    states
        .iter()
        .map(|s| match env.state_index(s) {
            Some(i) => {
                if let Some(v) = cache.get(&i) {
                    return Ok(*v);
                }
                let v = policy.state_value(env, h, s)?;
                cache.insert(i, v);
                Ok(v)
            }
            None => policy.state_value(env, h, s),
        })
        .collect()
}

/// DR-RPO (`drmdp` or `rrmdp` mode) seeded from `cfg.seed`.
pub fn run_drrpo<E: LinearMdp>(
    env: &E,
    reference: &ReferencePolicy,
    cfg: &AgentConfig,
) -> Result<RunOutput<E::State>> {
    if !matches!(cfg.mode, Mode::Drmdp | Mode::Rrmdp) {
        return Err(Error::Config(format!("run_drrpo needs drmdp or rrmdp, got {}", cfg.mode.as_str())));
    }
    run_seeded(env, reference, cfg)
}

/// Non-robust greedy value iteration with UCB.
pub fn run_lsvi_ucb<E: LinearMdp>(
    env: &E,
    reference: &ReferencePolicy,
    cfg: &AgentConfig,
) -> Result<RunOutput<E::State>> {
    if cfg.mode != Mode::LsviUcb {
        return Err(Error::Config(format!("run_lsvi_ucb needs lsvi_ucb, got {}", cfg.mode.as_str())));
    }
    run_seeded(env, reference, cfg)
}

/// Robust greedy value iteration with UCB.
pub fn run_dr_lsvi_ucb<E: LinearMdp>(
    env: &E,
    reference: &ReferencePolicy,
    cfg: &AgentConfig,
) -> Result<RunOutput<E::State>> {
    if cfg.mode != Mode::DrLsviUcb {
        return Err(Error::Config(format!(
            "run_dr_lsvi_ucb needs dr_lsvi_ucb, got {}",
            cfg.mode.as_str()
        )));
    }
    run_seeded(env, reference, cfg)
}

/// Dispatches on `cfg.mode`.
pub fn run_mode<E: LinearMdp>(
    env: &E,
    reference: &ReferencePolicy,
    cfg: &AgentConfig,
) -> Result<RunOutput<E::State>> {
    run_seeded(env, reference, cfg)
}

fn run_seeded<E: LinearMdp>(
    env: &E,
    reference: &ReferencePolicy,
    cfg: &AgentConfig,
) -> Result<RunOutput<E::State>> {
    let spec = cfg.spec(env)?;
    let mut stream = rng::stream(cfg.seed, 0, rng::TAG_TRAIN);
    run_agent(env, reference, &spec, &mut stream)
}

/// `Ṽ` from a raw Q vector under the given update rule.
pub fn value_from_q(update: PolicyUpdate, reference: &[f64], q: &[f64]) -> Result<f64> {
    match update {
        PolicyUpdate::Softmax { eta } => log_partition_value(reference, q, eta),
        PolicyUpdate::Greedy => Ok(q.iter().copied().fold(0.0_f64, f64::max)),
    }
}
