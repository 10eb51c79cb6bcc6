//! Linear-MDP environments with a nominal (source) kernel used for training
//! and a perturbed (target) kernel used only for evaluation.

mod put_option;
mod simulated;
mod tabular;

use std::fmt::Debug;

use nalgebra::DVector;
use rand::RngCore;

pub use put_option::{PutOptionEnv, PutOptionParams, PutState, EXERCISE, HOLD};
pub use simulated::{
    action_vector, build_simulated_env, SimulatedEnvParams, FAIL, S1, S2, S3, S5,
};
pub use tabular::{random_model, RandomModelSpec, TabularEnv, TabularFactorModel};

use crate::error::Result;
use crate::numerics::FeatureVector;
use crate::policy::Policy;

/// Which transition law to step under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Kernel {
    Source,
    Target,
}

/// A finite-horizon linear MDP with known features and reward parameters.
///
/// Steps are indexed `0..horizon()`. Rewards are `⟨φ(s, a), θ_h⟩`.
pub trait LinearMdp: Send + Sync {
    type State: Clone + Debug + PartialEq + Send + Sync;

    fn name(&self) -> &'static str;
    fn dim(&self) -> usize;
    fn horizon(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn features(&self, state: &Self::State, action: usize) -> FeatureVector;
    fn theta(&self, step: usize) -> &DVector<f64>;
    fn is_fail(&self, state: &Self::State) -> bool;
    fn initial_state(&self) -> Self::State;

    /// Index into a finite state list, or `None` for continuous states.
    fn state_index(&self, state: &Self::State) -> Option<usize>;

    /// Whether the features skip the sum-to-one check.
    fn relaxed_features(&self) -> bool {
        false
    }

    fn reward(&self, step: usize, state: &Self::State, action: usize) -> f64 {
        self.features(state, action).dot(self.theta(step))
    }

    fn step(
        &self,
        kernel: Kernel,
        step: usize,
        state: &Self::State,
        action: usize,
        rng: &mut dyn RngCore,
    ) -> Result<(f64, Self::State)>;

    fn step_source(
        &self,
        step: usize,
        state: &Self::State,
        action: usize,
        rng: &mut dyn RngCore,
    ) -> Result<(f64, Self::State)> {
        self.step(Kernel::Source, step, state, action, rng)
    }

    fn step_target(
        &self,
        step: usize,
        state: &Self::State,
        action: usize,
        rng: &mut dyn RngCore,
    ) -> Result<(f64, Self::State)> {
        self.step(Kernel::Target, step, state, action, rng)
    }

    /// Next-state distribution over the finite state list.
    fn exact_kernel(
        &self,
        _kernel: Kernel,
        _step: usize,
        _state: &Self::State,
        _action: usize,
    ) -> Result<Vec<f64>> {
        Err(crate::error::Error::NotTabular)
    }
}

/// One step of a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<S> {
    pub state: S,
    pub action: usize,
    pub reward: f64,
    pub next_state: S,
}

/// A full episode of `H` transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    pub steps: Vec<Transition<S>>,
}

impl<S> Trajectory<S> {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|t| t.reward).sum()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Plays `policy` for one episode from the initial state.
pub fn rollout<E, P>(
    env: &E,
    policy: &P,
    kernel: Kernel,
    rng: &mut dyn RngCore,
) -> Result<Trajectory<E::State>>
where
    E: LinearMdp,
    P: Policy<E> + ?Sized,
{
    let mut state = env.initial_state();
    let mut steps = Vec::with_capacity(env.horizon());
    for h in 0..env.horizon() {
        let action = policy.sample_action(env, h, &state, rng)?;
        let (reward, next_state) = env.step(kernel, h, &state, action, rng)?;
        steps.push(Transition {
            state: std::mem::replace(&mut state, next_state.clone()),
            action,
            reward,
            next_state,
        });
    }
    Ok(Trajectory { steps })
}

/// Samples an index from a probability vector by inverse CDF on one uniform draw.
pub(crate) fn sample_categorical(probs: &[f64], rng: &mut dyn RngCore) -> usize {
    use rand::Rng;
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}
