//! American put option on a binomial price path.
//!
//! Action [`EXERCISE`] ends the episode with payoff `max(0, K − s)`; [`HOLD`]
//! moves the price up by 1.02 with probability `p` and down by 0.98 otherwise.
//! Rewards and the payoff feature are divided by the strike scale (100) so
//! rewards stay in `[0, 1]`. Hold features are tent functions over evenly
//! spaced anchor prices. The payoff feature is not normalized against the tent
//! features, so this environment reports [`LinearMdp::relaxed_features`].

use nalgebra::DVector;
use rand::{Rng, RngCore};

use super::{Kernel, LinearMdp};
use crate::error::{Error, Result};
use crate::numerics::FeatureVector;

pub const EXERCISE: usize = 0;
pub const HOLD: usize = 1;

/// Raw payoffs are divided by this to give rewards.
pub const REWARD_SCALE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PutOptionParams {
    /// Price-up probability in the target domain.
    pub price_up_prob: f64,
    /// Price-up probability in the source domain.
    pub source_up_prob: f64,
    pub up_factor: f64,
    pub down_factor: f64,
    pub strike: f64,
    pub n_anchors: usize,
    pub first_anchor: f64,
    pub anchor_span: f64,
    pub horizon: usize,
    pub initial_price: f64,
}

impl Default for PutOptionParams {
    fn default() -> Self {
        Self {
            price_up_prob: 0.5,
            source_up_prob: 0.5,
            up_factor: 1.02,
            down_factor: 0.98,
            strike: 100.0,
            n_anchors: 20,
            first_anchor: 80.0,
            anchor_span: 60.0,
            horizon: 10,
            initial_price: 100.0,
        }
    }
}

impl PutOptionParams {
    pub fn with_target(price_up_prob: f64) -> Self {
        Self {
            price_up_prob,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PutState {
    pub price: f64,
    pub exercised: bool,
}

#[derive(Debug, Clone)]
pub struct PutOptionEnv {
    params: PutOptionParams,
    anchors: Vec<f64>,
    spacing: f64,
    theta: DVector<f64>,
}

impl PutOptionEnv {
    pub fn new(params: PutOptionParams) -> Result<Self> {
        for (name, p) in [
            ("price_up_prob", params.price_up_prob),
            ("source_up_prob", params.source_up_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(name, format!("must lie in [0, 1], got {p}")));
            }
        }
        if params.n_anchors == 0 || params.horizon == 0 {
            return Err(Error::invalid("n_anchors/horizon", "must be positive"));
        }
        if !(params.initial_price > 0.0 && params.anchor_span > 0.0) {
            return Err(Error::invalid("initial_price/anchor_span", "must be positive"));
        }
        let spacing = params.anchor_span / params.n_anchors as f64;
        let anchors = (0..params.n_anchors)
            .map(|i| params.first_anchor + i as f64 * spacing)
            .collect();
        let dim = params.n_anchors + 1;
        let mut theta = DVector::zeros(dim);
        theta[dim - 1] = 1.0;
        Ok(Self {
            params,
            anchors,
            spacing,
            theta,
        })
    }

    pub fn params(&self) -> &PutOptionParams {
        &self.params
    }

    pub fn anchors(&self) -> &[f64] {
        &self.anchors
    }

    /// Unscaled exercise payoff `max(0, K − s)`.
    pub fn raw_payoff(&self, price: f64) -> f64 {
        (self.params.strike - price).max(0.0)
    }

    fn up_prob(&self, kernel: Kernel) -> f64 {
        match kernel {
            Kernel::Source => self.params.source_up_prob,
            Kernel::Target => self.params.price_up_prob,
        }
    }
}

impl LinearMdp for PutOptionEnv {
    type State = PutState;

    fn name(&self) -> &'static str {
        "put_option"
    }

    fn dim(&self) -> usize {
        self.params.n_anchors + 1
    }

    fn horizon(&self) -> usize {
        self.params.horizon
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn relaxed_features(&self) -> bool {
        true
    }

    fn features(&self, state: &PutState, action: usize) -> FeatureVector {
        let dim = self.dim();
        let mut phi = vec![0.0; dim];
        if !state.exercised {
            if action == EXERCISE {
                phi[dim - 1] = self.raw_payoff(state.price) / REWARD_SCALE;
            } else {
                for (f, anchor) in phi.iter_mut().zip(&self.anchors) {
                    *f = (1.0 - (state.price - anchor).abs() / self.spacing).max(0.0);
                }
            }
        }
        FeatureVector::relaxed(phi).expect("put features are finite and non-negative")
    }

    fn theta(&self, _step: usize) -> &DVector<f64> {
        &self.theta
    }

    fn is_fail(&self, state: &PutState) -> bool {
        state.exercised
    }

    fn initial_state(&self) -> PutState {
        PutState {
            price: self.params.initial_price,
            exercised: false,
        }
    }

    fn state_index(&self, _state: &PutState) -> Option<usize> {
        None
    }

    fn step(
        &self,
        kernel: Kernel,
        step: usize,
        state: &PutState,
        action: usize,
        rng: &mut dyn RngCore,
    ) -> Result<(f64, PutState)> {
        if step >= self.params.horizon {
            return Err(Error::StepOutOfRange {
                step,
                horizon: self.params.horizon,
            });
        }
        if action >= 2 {
            return Err(Error::invalid("action", format!("{action} is not 0 or 1")));
        }
        if state.exercised {
            return Ok((0.0, *state));
        }
        if action == EXERCISE {
            let reward = self.raw_payoff(state.price) / REWARD_SCALE;
            return Ok((
                reward,
                PutState {
                    price: state.price,
                    exercised: true,
                },
            ));
        }
        let up = rng.gen::<f64>() < self.up_prob(kernel);
        let factor = if up {
            self.params.up_factor
        } else {
            self.params.down_factor
        };
        Ok((
            0.0,
            PutState {
                price: state.price * factor,
                exercised: false,
            },
        ))
    }
}
