//! KL-regularized softmax policies over finite action sets.
//!
//! For a reference `π_ref`, temperature `η` and action values `Q`, the policy
//! `π(a) ∝ π_ref(a) exp(η Q(a))` maximizes `⟨π, Q⟩ − KL(π ‖ π_ref)/η`, and the
//! maximum equals `log E_{a∼π_ref} exp(η Q(a)) / η`. Both are evaluated with a
//! max shift so that `η = 100` does not overflow.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::env::{sample_categorical, LinearMdp};
use crate::error::{Error, Result};

const REF_SUM_TOL: f64 = 1e-12;

fn support_max(reference: &[f64], q: &[f64]) -> Option<f64> {
    reference
        .iter()
        .zip(q)
        .filter(|(p, _)| **p > 0.0)
        .map(|(_, q)| *q)
        .reduce(f64::max)
}

fn check_pair(reference: &[f64], q: &[f64], eta: f64) -> Result<()> {
    if reference.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: reference.len(),
            got: q.len(),
        });
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::invalid("eta", format!("must be > 0, got {eta}")));
    }
    if q.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("q", "values must be finite"));
    }
    Ok(())
}

/// `π(a) ∝ π_ref(a) exp(η Q(a))`; actions outside the reference support get exactly zero.
pub fn softmax_probs(reference: &[f64], q: &[f64], eta: f64) -> Result<Vec<f64>> {
    check_pair(reference, q, eta)?;
    let m = support_max(reference, q).ok_or(Error::DegenerateReference { step: 0 })?;
    let mut probs: Vec<f64> = reference
        .iter()
        .zip(q)
        .map(|(p, x)| if *p > 0.0 { p * (eta * (x - m)).exp() } else { 0.0 })
        .collect();
    let z: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= z);
    Ok(probs)
}

/// `Σ_a π(a) log(π(a) / π_ref(a))` with `0 log 0 = 0`.
pub fn kl_divergence(pi: &[f64], reference: &[f64]) -> Result<f64> {
    if pi.len() != reference.len() {
        return Err(Error::DimensionMismatch {
            expected: reference.len(),
            got: pi.len(),
        });
    }
    let mut kl = 0.0;
    for (action, (p, r)) in pi.iter().zip(reference).enumerate() {
        if *p > 0.0 {
            if *r <= 0.0 {
                return Err(Error::SupportViolation { action, mass: *p });
            }
            kl += p * (p / r).ln();
        }
    }
    Ok(kl.max(0.0))
}

/// `log E_{a∼π_ref} exp(η Q(a)) / η` via a shifted log-sum-exp.
pub fn log_partition_value(reference: &[f64], q: &[f64], eta: f64) -> Result<f64> {
    check_pair(reference, q, eta)?;
    let m = support_max(reference, q).ok_or(Error::DegenerateReference { step: 0 })?;
    let s: f64 = reference
        .iter()
        .zip(q)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, x)| p * (eta * (x - m)).exp())
        .sum();
    Ok(m + s.ln() / eta)
}

/// Index of the largest value; ties go to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Draws an action by inverse CDF on a single uniform variate.
pub fn sample_index(probs: &[f64], rng: &mut dyn RngCore) -> usize {
    sample_categorical(probs, rng)
}

/// Reference policy `π_ref_h(·|s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ReferencePolicy {
    /// Uniform over `n` actions at every step and state.
    Uniform(usize),
    /// One distribution per step, shared by all states.
    PerStep(Vec<Vec<f64>>),
    /// One distribution per step and state index (finite-state environments only).
    Tabular(Vec<Vec<Vec<f64>>>),
}

impl ReferencePolicy {
    pub fn uniform(n_actions: usize) -> Self {
        Self::Uniform(n_actions)
    }

    pub fn per_step(probs: Vec<Vec<f64>>) -> Result<Self> {
        probs.iter().try_for_each(|p| check_reference(p))?;
        Ok(Self::PerStep(probs))
    }

    pub fn tabular(probs: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        probs.iter().flatten().try_for_each(|p| check_reference(p))?;
        Ok(Self::Tabular(probs))
    }

    pub fn n_actions(&self) -> usize {
        match self {
            Self::Uniform(n) => *n,
            Self::PerStep(p) => p.first().map_or(0, Vec::len),
            Self::Tabular(p) => p.first().and_then(|r| r.first()).map_or(0, Vec::len),
        }
    }

    /// Distribution at step `h` and (optional) state index.
    pub fn probs(&self, h: usize, state: Option<usize>) -> Result<Vec<f64>> {
        match self {
            Self::Uniform(n) => Ok(vec![1.0 / *n as f64; *n]),
            Self::PerStep(p) => p.get(h).cloned().ok_or(Error::StepOutOfRange {
                step: h,
                horizon: p.len(),
            }),
            Self::Tabular(p) => {
                let s = state.ok_or(Error::NotTabular)?;
                p.get(h)
                    .and_then(|row| row.get(s))
                    .cloned()
                    .ok_or(Error::StepOutOfRange {
                        step: h,
                        horizon: p.len(),
                    })
            }
        }
    }
}

fn check_reference(p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|x| *x < 0.0) || (sum - 1.0).abs() > REF_SUM_TOL {
        return Err(Error::invalid("reference", format!("not a distribution (sum {sum})")));
    }
    Ok(())
}

/// Action values `Q_h(s, ·)` for an environment.
pub trait QFunction<E: LinearMdp + ?Sized> {
    fn q_values(&self, env: &E, h: usize, state: &E::State) -> Vec<f64>;
}

/// Anything that assigns action probabilities.
pub trait Policy<E: LinearMdp + ?Sized> {
    fn action_probs(&self, env: &E, h: usize, state: &E::State) -> Result<Vec<f64>>;

    fn sample_action(
        &self,
        env: &E,
        h: usize,
        state: &E::State,
        rng: &mut dyn RngCore,
    ) -> Result<usize> {
        Ok(sample_index(&self.action_probs(env, h, state)?, rng))
    }
}

impl<E: LinearMdp + ?Sized> Policy<E> for ReferencePolicy {
    fn action_probs(&self, env: &E, h: usize, state: &E::State) -> Result<Vec<f64>> {
        self.probs(h, env.state_index(state))
    }
}

/// `π_h(a|s) ∝ π_ref_h(a|s) exp(η Q_h(s, a))`, evaluated lazily from a Q handle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SoftmaxPolicy<Q> {
    pub reference: ReferencePolicy,
    pub eta: f64,
    pub q: Q,
}

impl<Q> SoftmaxPolicy<Q> {
    pub fn new(reference: ReferencePolicy, eta: f64, q: Q) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::invalid("eta", format!("must be > 0, got {eta}")));
        }
        Ok(Self { reference, eta, q })
    }

    fn parts<E>(&self, env: &E, h: usize, state: &E::State) -> Result<(Vec<f64>, Vec<f64>)>
    where
        E: LinearMdp + ?Sized,
        Q: QFunction<E>,
    {
        let reference = self.reference.probs(h, env.state_index(state))?;
        let q = self.q.q_values(env, h, state);
        if reference.iter().all(|p| *p <= 0.0) {
            return Err(Error::DegenerateReference { step: h });
        }
        Ok((reference, q))
    }

    pub fn kl_to_reference<E>(&self, env: &E, h: usize, state: &E::State) -> Result<f64>
    where
        E: LinearMdp + ?Sized,
        Q: QFunction<E>,
    {
        let (reference, q) = self.parts(env, h, state)?;
        kl_divergence(&softmax_probs(&reference, &q, self.eta)?, &reference)
    }

    /// `max_π ⟨π, Q⟩ − KL(π ‖ π_ref)/η` at `(h, s)`.
    pub fn regularized_value<E>(&self, env: &E, h: usize, state: &E::State) -> Result<f64>
    where
        E: LinearMdp + ?Sized,
        Q: QFunction<E>,
    {
        let (reference, q) = self.parts(env, h, state)?;
        log_partition_value(&reference, &q, self.eta)
    }
}

impl<E: LinearMdp + ?Sized, Q: QFunction<E>> Policy<E> for SoftmaxPolicy<Q> {
    fn action_probs(&self, env: &E, h: usize, state: &E::State) -> Result<Vec<f64>> {
        let (reference, q) = self.parts(env, h, state)?;
        softmax_probs(&reference, &q, self.eta).map_err(|e| match e {
            Error::DegenerateReference { .. } => Error::DegenerateReference { step: h },
            other => other,
        })
    }
}

/// Deterministic `argmax_a Q_h(s, a)` policy; ties go to the smallest index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GreedyPolicy<Q> {
    pub q: Q,
}

impl<E: LinearMdp + ?Sized, Q: QFunction<E>> Policy<E> for GreedyPolicy<Q> {
    fn action_probs(&self, env: &E, h: usize, state: &E::State) -> Result<Vec<f64>> {
        let q = self.q.q_values(env, h, state);
        let mut probs = vec![0.0; q.len()];
        probs[argmax(&q)] = 1.0;
        Ok(probs)
    }
}

/// Explicit per-step, per-state action distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    /// `[step][state][action]`
    pub probs: Vec<Vec<Vec<f64>>>,
}

impl TabularPolicy {
    pub fn get(&self, h: usize, s: usize) -> &[f64] {
        &self.probs[h][s]
    }

    /// Materializes `policy` over every state index of a finite environment.
    pub fn materialize<E, P>(env: &E, states: &[E::State], policy: &P) -> Result<Self>
    where
        E: LinearMdp + ?Sized,
        P: Policy<E> + ?Sized,
    {
        let probs = (0..env.horizon())
            .map(|h| states.iter().map(|s| policy.action_probs(env, h, s)).collect())
            .collect::<Result<_>>()?;
        Ok(Self { probs })
    }
}

impl<E: LinearMdp<State = usize> + ?Sized> Policy<E> for TabularPolicy {
    fn action_probs(&self, _env: &E, h: usize, state: &usize) -> Result<Vec<f64>> {
        Ok(self.probs[h][*state].clone())
    }
}
