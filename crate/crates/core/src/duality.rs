//! Total-variation duals.
//!
//! With a zero-value fail state the worst case over a TV ball of radius `ρ`
//! around `μ⁰` reduces to `max_α { E_{μ⁰}[V]_α − ρα }`, where
//! `[V]_α = min(V, α)`. The objective is piecewise linear in `α` with kinks
//! only at the values themselves, so enumerating those breakpoints is exact.
//! The regularized (penalty) variant collapses further to `E_{μ⁰}[V]_σ`.

use crate::error::{Error, Result};

/// Candidates within this margin of the incumbent count as ties.
const TIE_EPS: f64 = 1e-12;

/// Slack on the fail-state precondition `min V = 0`.
pub const FAIL_STATE_TOL: f64 = 1e-9;

/// One coordinate of the robust regression: `α ↦ Σ_τ c_τ min(v_τ, α) − ρα` on `[0, H]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseDualInstance {
    coeffs: Vec<f64>,
    values: Vec<f64>,
    horizon_cap: f64,
    rho: f64,
}

impl PiecewiseDualInstance {
    pub fn new(coeffs: Vec<f64>, values: Vec<f64>, horizon_cap: f64, rho: f64) -> Result<Self> {
        if coeffs.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: coeffs.len(),
                got: values.len(),
            });
        }
        if !(horizon_cap > 0.0 && horizon_cap.is_finite()) {
            return Err(Error::invalid("horizon_cap", format!("must be > 0, got {horizon_cap}")));
        }
        check_rho(rho)?;
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0 && **v <= horizon_cap)) {
            return Err(Error::invalid("values", format!("{v} outside [0, {horizon_cap}]")));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("coeffs", "must be finite"));
        }
        Ok(Self {
            coeffs,
            values,
            horizon_cap,
            rho,
        })
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn horizon_cap(&self) -> f64 {
        self.horizon_cap
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Direct evaluation of the objective at `alpha`.
    pub fn objective(&self, alpha: f64) -> f64 {
        let z: f64 = self
            .coeffs
            .iter()
            .zip(&self.values)
            .map(|(c, v)| c * v.min(alpha))
            .sum();
        z - self.rho * alpha
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::invalid("rho", format!("must lie in [0, 1], got {rho}")));
    }
    Ok(())
}

/// Maximum of a piecewise dual objective and the smallest maximizing `α`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualSolution {
    pub value: f64,
    pub alpha: f64,
}

/// Exact `max_{α ∈ [0, H]} Σ_τ c_τ min(v_τ, α) − ρα` by breakpoint enumeration.
///
/// Runs in `O(n log n)`: the values are sorted once and the objective at each
/// breakpoint is assembled from a prefix sum of `c_τ v_τ` below the breakpoint
/// and a suffix sum of `c_τ` above it.
pub fn drmdp_dual_max(inst: &PiecewiseDualInstance) -> DualSolution {
    let n = inst.values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| inst.values[a].total_cmp(&inst.values[b]));

    let total_c: f64 = inst.coeffs.iter().sum();
    // The objective vanishes at α = 0 because every v_τ ≥ 0.
    let mut best = DualSolution {
        value: 0.0,
        alpha: 0.0,
    };
    let mut below_cv = 0.0; // Σ_{v_τ ≤ α} c_τ v_τ
    let mut below_c = 0.0; // Σ_{v_τ ≤ α} c_τ
    let mut idx = 0;
    while idx < n {
        let alpha = inst.values[order[idx]];
        while idx < n && inst.values[order[idx]] == alpha {
            let t = order[idx];
            below_cv += inst.coeffs[t] * inst.values[t];
            below_c += inst.coeffs[t];
            idx += 1;
        }
        if alpha > 0.0 {
            let value = below_cv + alpha * (total_c - below_c) - inst.rho * alpha;
            if value > best.value + TIE_EPS {
                best = DualSolution { value, alpha };
            }
        }
    }
    let h = inst.horizon_cap;
    let value = below_cv - inst.rho * h;
    if value > best.value + TIE_EPS {
        best = DualSolution { value, alpha: h };
    }
    best
}

/// `min(value, σ)` elementwise.
pub fn rrmdp_truncate_targets(values: &[f64], sigma: f64) -> Result<Vec<f64>> {
    check_sigma(sigma)?;
    Ok(values.iter().map(|v| v.min(sigma)).collect())
}

pub(crate) fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0) || sigma.is_nan() {
        return Err(Error::invalid("sigma", format!("must be > 0, got {sigma}")));
    }
    Ok(())
}

fn check_distribution(mu0: &[f64], v: &[f64]) -> Result<()> {
    if mu0.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: mu0.len(),
            got: v.len(),
        });
    }
    if mu0.is_empty() {
        return Err(Error::invalid("mu0", "empty distribution"));
    }
    let sum: f64 = mu0.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || mu0.iter().any(|p| *p < 0.0) {
        return Err(Error::invalid("mu0", format!("not a probability vector (sum {sum})")));
    }
    Ok(())
}

/// `inf { E_μ V : D_TV(μ ‖ μ⁰) ≤ ρ }` for a value function whose minimum is zero.
///
/// Errors if `min V` exceeds [`FAIL_STATE_TOL`], since the one-dimensional
/// dual is only valid when some state carries zero value.
pub fn exact_dual_value(mu0: &[f64], v: &[f64], rho: f64) -> Result<f64> {
    check_distribution(mu0, v)?;
    check_rho(rho)?;
    let vmin = v.iter().copied().fold(f64::INFINITY, f64::min);
    if vmin > FAIL_STATE_TOL {
        return Err(Error::NoFailState(vmin));
    }
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));

    let mut best = 0.0_f64;
    let mut below_mv = 0.0;
    let mut below_m = 0.0;
    let mut idx = 0;
    while idx < order.len() {
        let alpha = v[order[idx]];
        while idx < order.len() && v[order[idx]] == alpha {
            below_mv += mu0[order[idx]] * v[order[idx]];
            below_m += mu0[order[idx]];
            idx += 1;
        }
        if alpha > 0.0 {
            let value = below_mv + alpha * (1.0 - below_m).max(0.0) - rho * alpha;
            best = best.max(value);
        }
    }
    Ok(best)
}

/// `E_{μ⁰}[V]_σ`, the penalized worst case when a zero-value state exists.
pub fn truncated_expectation(mu0: &[f64], v: &[f64], sigma: f64) -> Result<f64> {
    check_distribution(mu0, v)?;
    check_sigma(sigma)?;
    Ok(mu0.iter().zip(v).map(|(p, x)| p * x.min(sigma)).sum())
}

/// Grid search of `E_{μ⁰}[V]_α − ρα` over `α ∈ {0, δ, 2δ, …} ∩ [0, max V]`.
///
/// A test oracle: within `(1 + ρ)δ` of [`exact_dual_value`].
pub fn brute_force_dual(mu0: &[f64], v: &[f64], rho: f64, grid_step: f64) -> Result<f64> {
    check_distribution(mu0, v)?;
    if !(grid_step > 0.0) {
        return Err(Error::invalid("grid_step", "must be > 0"));
    }
    let top = v.iter().copied().fold(0.0_f64, f64::max);
    let steps = (top / grid_step).ceil() as usize;
    let mut best = f64::NEG_INFINITY;
    for k in 0..=steps {
        let alpha = (k as f64 * grid_step).min(top);
        let z: f64 = mu0.iter().zip(v).map(|(p, x)| p * x.min(alpha)).sum();
        best = best.max(z - rho * alpha);
    }
    Ok(best)
}

/// Grid search of a [`PiecewiseDualInstance`] objective over `[0, H]`.
pub fn brute_force_piecewise(inst: &PiecewiseDualInstance, grid_step: f64) -> Result<f64> {
    if !(grid_step > 0.0) {
        return Err(Error::invalid("grid_step", "must be > 0"));
    }
    let steps = (inst.horizon_cap / grid_step).ceil() as usize;
    Ok((0..=steps)
        .map(|k| inst.objective((k as f64 * grid_step).min(inst.horizon_cap)))
        .fold(f64::NEG_INFINITY, f64::max))
}
