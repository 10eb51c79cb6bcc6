//! Five-state off-dynamics linear MDP.
//!
//! `s₁` is the start state, `s₄` the fail state and `s₅` an absorbing state
//! paying reward 1 from the second step on. In the source domain the best
//! first action is `(1, 1, 1, 1)`; the target kernel routes part of the
//! `s₁ → s₅` mass into the fail state, so as `q` grows `(-1, -1, -1, -1)`
//! becomes the better first move.

use nalgebra::DVector;

use super::tabular::{TabularEnv, TabularFactorModel};
use crate::error::{Error, Result};
use crate::numerics::FeatureVector;

pub const S1: usize = 0;
pub const S2: usize = 1;
pub const S3: usize = 2;
pub const FAIL: usize = 3;
pub const S5: usize = 4;

const N_STATES: usize = 5;
const N_ACTIONS: usize = 16;
const DIM: usize = 4;
const HORIZON: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedEnvParams {
    pub zeta: f64,
    pub p_fail: f64,
    pub xi: [f64; 4],
    /// Target perturbation level.
    pub q: f64,
    /// Apply the perturbed step-one factors at every step instead of only the first.
    pub perturb_all_steps: bool,
}

impl SimulatedEnvParams {
    /// `ξ = (n/4, n/4, n/4, n/4)` with `‖ξ‖₁ = n`.
    pub fn with_xi_norm(zeta: f64, p_fail: f64, xi_norm: f64, q: f64) -> Self {
        Self {
            zeta,
            p_fail,
            xi: [xi_norm / 4.0; 4],
            q,
            perturb_all_steps: false,
        }
    }
}

impl Default for SimulatedEnvParams {
    fn default() -> Self {
        Self::with_xi_norm(0.3, 0.001, 0.3, 0.0)
    }
}

/// Action `k ∈ 0..16` as a vector in `{-1, 1}⁴`: bit `j` set means coordinate `j` is `+1`.
pub fn action_vector(action: usize) -> [f64; 4] {
    let mut a = [-1.0; 4];
    for (j, x) in a.iter_mut().enumerate() {
        if action >> j & 1 == 1 {
            *x = 1.0;
        }
    }
    a
}

fn delta(s: usize) -> Vec<f64> {
    let mut d = vec![0.0; N_STATES];
    d[s] = 1.0;
    d
}

fn mix(a: usize, b: usize, wb: f64) -> Vec<f64> {
    let mut d = vec![0.0; N_STATES];
    d[a] += 1.0 - wb;
    d[b] += wb;
    d
}

/// Builds the source model and target kernel.
pub fn build_simulated_env(params: &SimulatedEnvParams) -> Result<TabularEnv> {
    let SimulatedEnvParams {
        zeta,
        p_fail,
        xi,
        q,
        perturb_all_steps,
    } = *params;
    if !(0.0..=1.0).contains(&p_fail) {
        return Err(Error::invalid("p_fail", format!("must lie in [0, 1], got {p_fail}")));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::invalid("q", format!("must lie in [0, 1], got {q}")));
    }

    let mut phi = vec![Vec::new(); N_STATES];
    for action in 0..N_ACTIONS {
        let a = action_vector(action);
        let shift = zeta + xi.iter().zip(&a).map(|(x, y)| x * y).sum::<f64>();
        // Rounding can leave ‖ξ‖₁ = ζ a hair below zero.
        let shift = if shift.abs() < 1e-12 { 0.0 } else { shift };
        if !(0.0..1.0).contains(&shift) {
            return Err(Error::NotOnSimplex(format!(
                "ζ + ⟨ξ, a⟩ = {shift} for action {action}; need ‖ξ‖₁ ≤ ζ and ζ + ‖ξ‖₁ < 1"
            )));
        }
        for (s, row) in phi.iter_mut().enumerate().take(3) {
            let mut e = vec![0.0; DIM];
            e[s] = 1.0 - shift;
            e[3] = shift;
            row.push(FeatureVector::new(e)?);
        }
        phi[FAIL].push(FeatureVector::basis(DIM, 2));
        phi[S5].push(FeatureVector::basis(DIM, 3));
    }

    let source_step = vec![
        mix(S2, FAIL, p_fail),
        mix(S3, FAIL, p_fail),
        delta(FAIL),
        delta(S5),
    ];
    let target_step = vec![delta(S2), delta(S3), delta(FAIL), mix(S5, FAIL, q)];

    let source_factors = vec![source_step.clone(); HORIZON];
    let target_factors = (0..HORIZON)
        .map(|h| {
            if h == 0 || perturb_all_steps {
                target_step.clone()
            } else {
                source_step.clone()
            }
        })
        .collect();

    let mut reward = DVector::zeros(DIM);
    reward[3] = 1.0;
    let theta = vec![DVector::zeros(DIM), reward.clone(), reward];

    let source = TabularFactorModel::new(
        DIM,
        HORIZON,
        N_STATES,
        N_ACTIONS,
        FAIL,
        S1,
        phi,
        source_factors,
        theta,
    )?;
    let target = source.with_factors(target_factors)?;
    Ok(TabularEnv::new(source, target)?.named("simulated"))
}
