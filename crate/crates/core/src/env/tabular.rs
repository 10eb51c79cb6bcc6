use nalgebra::DVector;
use rand::{Rng, RngCore};

use super::{sample_categorical, Kernel, LinearMdp};
use crate::error::{Error, Result};
use crate::numerics::FeatureVector;

const PROB_TOL: f64 = 1e-12;

/// Finite-state linear MDP given by explicit factor distributions.
///
/// `P_h(·|s, a) = Σ_i φ_i(s, a) μ_{h,i}(·)` and `r_h(s, a) = ⟨φ(s, a), θ_h⟩`.
#[derive(Debug, Clone)]
pub struct TabularFactorModel {
    dim: usize,
    horizon: usize,
    n_states: usize,
    n_actions: usize,
    fail_state: usize,
    initial_state: usize,
    /// `[state][action]`
    phi: Vec<Vec<FeatureVector>>,
    /// `[step][factor][next_state]`
    factors: Vec<Vec<Vec<f64>>>,
    theta: Vec<DVector<f64>>,
}

impl TabularFactorModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dim: usize,
        horizon: usize,
        n_states: usize,
        n_actions: usize,
        fail_state: usize,
        initial_state: usize,
        phi: Vec<Vec<FeatureVector>>,
        factors: Vec<Vec<Vec<f64>>>,
        theta: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidModel(msg));
        if dim == 0 || horizon == 0 || n_states == 0 || n_actions == 0 {
            return bad("dimensions must be positive".into());
        }
        if fail_state >= n_states || initial_state >= n_states {
            return bad("fail or initial state index out of range".into());
        }
        if phi.len() != n_states || phi.iter().any(|row| row.len() != n_actions) {
            return bad("feature table must be [state][action]".into());
        }
        if phi.iter().flatten().any(|f| f.dim() != dim) {
            return bad("feature dimension mismatch".into());
        }
        if factors.len() != horizon || theta.len() != horizon {
            return bad("factors and theta need one entry per step".into());
        }
        for (h, fs) in factors.iter().enumerate() {
            if fs.len() != dim {
                return bad(format!("step {h}: expected {dim} factors"));
            }
            for (i, mu) in fs.iter().enumerate() {
                let sum: f64 = mu.iter().sum();
                if mu.len() != n_states || mu.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > PROB_TOL
                {
                    return bad(format!("factor ({h}, {i}) is not a distribution (sum {sum})"));
                }
            }
        }
        for (h, th) in theta.iter().enumerate() {
            if th.len() != dim {
                return bad(format!("theta at step {h} has wrong dimension"));
            }
            if th.norm() > (dim as f64).sqrt() + PROB_TOL {
                return bad(format!("‖θ_{h}‖ exceeds sqrt(d)"));
            }
        }
        let model = Self {
            dim,
            horizon,
            n_states,
            n_actions,
            fail_state,
            initial_state,
            phi,
            factors,
            theta,
        };
        for h in 0..horizon {
            for s in 0..n_states {
                for a in 0..n_actions {
                    let r = model.reward_at(h, s, a);
                    if !(-PROB_TOL..=1.0 + PROB_TOL).contains(&r) {
                        return bad(format!("reward r_{h}({s}, {a}) = {r} outside [0, 1]"));
                    }
                    let row = model.kernel(h, s, a);
                    if row.iter().any(|p| *p < -PROB_TOL)
                        || (row.iter().sum::<f64>() - 1.0).abs() > 1e-10
                    {
                        return bad(format!("kernel row ({h}, {s}, {a}) is not a distribution"));
                    }
                }
                for a in 0..n_actions {
                    let fs = model.fail_state;
                    if model.reward_at(h, fs, a).abs() > PROB_TOL
                        || (model.kernel(h, fs, a)[fs] - 1.0).abs() > 1e-10
                    {
                        return bad("fail state must be absorbing with zero reward".into());
                    }
                }
            }
        }
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn fail_state(&self) -> usize {
        self.fail_state
    }

    pub fn initial_state_index(&self) -> usize {
        self.initial_state
    }

    pub fn phi(&self, s: usize, a: usize) -> &FeatureVector {
        &self.phi[s][a]
    }

    /// Factor distribution `μ_{h,i}` over next states.
    pub fn factor(&self, h: usize, i: usize) -> &[f64] {
        &self.factors[h][i]
    }

    pub fn reward_at(&self, h: usize, s: usize, a: usize) -> f64 {
        self.phi[s][a].dot(&self.theta[h])
    }

    /// `Σ_i φ_i(s, a) μ_{h,i}`.
    pub fn kernel(&self, h: usize, s: usize, a: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.n_states];
        for (w, mu) in self.phi[s][a].as_slice().iter().zip(&self.factors[h]) {
            if *w != 0.0 {
                for (r, p) in row.iter_mut().zip(mu) {
                    *r += w * p;
                }
            }
        }
        row
    }

    /// A copy of this model with different factor distributions.
    pub fn with_factors(&self, factors: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        Self::new(
            self.dim,
            self.horizon,
            self.n_states,
            self.n_actions,
            self.fail_state,
            self.initial_state,
            self.phi.clone(),
            factors,
            self.theta.clone(),
        )
    }

    pub fn factors(&self) -> &[Vec<Vec<f64>>] {
        &self.factors
    }

    fn check_step(&self, h: usize) -> Result<()> {
        if h >= self.horizon {
            return Err(Error::StepOutOfRange {
                step: h,
                horizon: self.horizon,
            });
        }
        Ok(())
    }
}

/// A tabular model paired with a target-domain kernel.
///
/// Both share features, rewards and the fail state; only the factors differ.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    source: TabularFactorModel,
    target: TabularFactorModel,
    name: &'static str,
}

impl TabularEnv {
    pub fn new(source: TabularFactorModel, target: TabularFactorModel) -> Result<Self> {
        if source.dim != target.dim
            || source.horizon != target.horizon
            || source.n_states != target.n_states
            || source.n_actions != target.n_actions
            || source.fail_state != target.fail_state
            || source.phi != target.phi
            || source.theta != target.theta
        {
            return Err(Error::InvalidModel(
                "source and target must differ only in their factors".into(),
            ));
        }
        Ok(Self {
            source,
            target,
            name: "tabular",
        })
    }

    /// Source and target coincide.
    pub fn unperturbed(model: TabularFactorModel) -> Self {
        Self {
            target: model.clone(),
            source: model,
            name: "tabular",
        }
    }

    pub(crate) fn named(mut self, name: &'static str) -> Self {
        self.name = name;
        self
    }

    pub fn source(&self) -> &TabularFactorModel {
        &self.source
    }

    pub fn target(&self) -> &TabularFactorModel {
        &self.target
    }

    pub fn model(&self, kernel: Kernel) -> &TabularFactorModel {
        match kernel {
            Kernel::Source => &self.source,
            Kernel::Target => &self.target,
        }
    }
}

impl LinearMdp for TabularEnv {
    type State = usize;

    fn name(&self) -> &'static str {
        self.name
    }

    fn dim(&self) -> usize {
        self.source.dim
    }

    fn horizon(&self) -> usize {
        self.source.horizon
    }

    fn n_actions(&self) -> usize {
        self.source.n_actions
    }

    fn features(&self, state: &usize, action: usize) -> FeatureVector {
        self.source.phi[*state][action].clone()
    }

    fn theta(&self, step: usize) -> &DVector<f64> {
        &self.source.theta[step]
    }

    fn reward(&self, step: usize, state: &usize, action: usize) -> f64 {
        self.source.reward_at(step, *state, action)
    }

    fn is_fail(&self, state: &usize) -> bool {
        *state == self.source.fail_state
    }

    fn initial_state(&self) -> usize {
        self.source.initial_state
    }

    fn state_index(&self, state: &usize) -> Option<usize> {
        Some(*state)
    }

    fn step(
        &self,
        kernel: Kernel,
        step: usize,
        state: &usize,
        action: usize,
        rng: &mut dyn RngCore,
    ) -> Result<(f64, usize)> {
        let model = self.model(kernel);
        model.check_step(step)?;
        if *state >= model.n_states || action >= model.n_actions {
            return Err(Error::invalid("state/action", "index out of range"));
        }
        let reward = model.reward_at(step, *state, action);
        let next = sample_categorical(&model.kernel(step, *state, action), rng);
        Ok((reward, next))
    }

    fn exact_kernel(
        &self,
        kernel: Kernel,
        step: usize,
        state: &usize,
        action: usize,
    ) -> Result<Vec<f64>> {
        let model = self.model(kernel);
        model.check_step(step)?;
        Ok(model.kernel(step, *state, action))
    }
}

/// Shape of a randomly generated tabular model.
#[derive(Debug, Clone, Copy)]
pub struct RandomModelSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub dim: usize,
    pub horizon: usize,
}

fn random_simplex(rng: &mut dyn RngCore, n: usize) -> Vec<f64> {
    // Exponential spacings give a uniform draw on the simplex.
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

/// A random model satisfying the linear and fail-state structure.
///
/// State 0 is the fail state and factor 0 is `δ_{fail}` at every step, so the
/// fail state keeps feature `e₀` and stays absorbing. Requires `dim ≥ 2` and
/// `n_states ≥ 2`; the initial state is 1.
pub fn random_model(rng: &mut dyn RngCore, spec: RandomModelSpec) -> Result<TabularFactorModel> {
    let RandomModelSpec {
        n_states,
        n_actions,
        dim,
        horizon,
    } = spec;
    if dim < 2 || n_states < 2 {
        return Err(Error::InvalidModel("random models need dim >= 2 and >= 2 states".into()));
    }
    let mut phi = Vec::with_capacity(n_states);
    phi.push(vec![FeatureVector::basis(dim, 0); n_actions]);
    for _ in 1..n_states {
        let row = (0..n_actions)
            .map(|_| FeatureVector::new(random_simplex(rng, dim)))
            .collect::<Result<Vec<_>>>()?;
        phi.push(row);
    }
    let factors = (0..horizon)
        .map(|_| {
            let mut fs = vec![{
                let mut d = vec![0.0; n_states];
                d[0] = 1.0;
                d
            }];
            fs.extend((1..dim).map(|_| random_simplex(rng, n_states)));
            fs
        })
        .collect();
    let theta = (0..horizon)
        .map(|_| {
            let mut th = DVector::from_fn(dim, |_, _| rng.gen::<f64>());
            th[0] = 0.0;
            th
        })
        .collect();
    TabularFactorModel::new(dim, horizon, n_states, n_actions, 0, 1, phi, factors, theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_models_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let spec = RandomModelSpec {
                n_states: rng.gen_range(2..6),
                n_actions: rng.gen_range(1..5),
                dim: rng.gen_range(2..5),
                horizon: rng.gen_range(1..5),
            };
            let m = random_model(&mut rng, spec).unwrap();
            for h in 0..spec.horizon {
                for s in 0..spec.n_states {
                    for a in 0..spec.n_actions {
                        let row = m.kernel(h, s, a);
                        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                        assert!(row.iter().all(|p| *p >= 0.0));
                    }
                }
            }
            let env = TabularEnv::unperturbed(m);
            assert_eq!(env.exact_kernel(Kernel::Source, 0, &0, 0).unwrap()[0], 1.0);
        }
    }

    #[test]
    fn kernel_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = RandomModelSpec {
            n_states: 4,
            n_actions: 3,
            dim: 3,
            horizon: 2,
        };
        let env = TabularEnv::unperturbed(random_model(&mut rng, spec).unwrap());
        for (s, a) in [(1, 0), (2, 2), (3, 1)] {
            let exact = env.exact_kernel(Kernel::Source, 1, &s, a).unwrap();
            let mut counts = [0usize; 4];
            let n = 100_000;
            for _ in 0..n {
                counts[env.step_source(1, &s, a, &mut rng).unwrap().1] += 1;
            }
            let tv: f64 = counts
                .iter()
                .zip(&exact)
                .map(|(c, p)| (*c as f64 / n as f64 - p).abs())
                .sum::<f64>()
                / 2.0;
            assert!(tv < 0.01, "tv {tv}");
        }
    }

    #[test]
    fn step_out_of_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = RandomModelSpec {
            n_states: 3,
            n_actions: 2,
            dim: 2,
            horizon: 2,
        };
        let env = TabularEnv::unperturbed(random_model(&mut rng, spec).unwrap());
        assert!(matches!(
            env.step_source(2, &1, 0, &mut rng),
            Err(Error::StepOutOfRange { step: 2, horizon: 2 })
        ));
    }

    #[test]
    fn rejects_non_absorbing_fail_state() {
        let phi = vec![
            vec![FeatureVector::new(vec![0.5, 0.5]).unwrap()],
            vec![FeatureVector::new(vec![0.5, 0.5]).unwrap()],
        ];
        let factors = vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]];
        let theta = vec![DVector::zeros(2)];
        let err = TabularFactorModel::new(2, 1, 2, 1, 0, 1, phi, factors, theta).unwrap_err();
        assert!(matches!(err, Error::InvalidModel(_)));
    }
}
