//! Flat `section.key = value` configuration.
//!
//! Blank lines and lines starting with `#` are ignored. List values are
//! comma separated; integer lists also accept a half-open range `a..b`.
//! Unknown keys are rejected so typos do not silently fall back to defaults.

use std::path::{Path, PathBuf};

use crate::agents::{AgentConfig, Mode};
use crate::env::{
    build_simulated_env, PutOptionEnv, PutOptionParams, SimulatedEnvParams, TabularEnv,
};
use crate::error::{Error, Result};
use crate::policy::ReferencePolicy;

#[derive(Debug, Clone, PartialEq)]
pub enum EnvSpec {
    Simulated {
        zeta: f64,
        p_fail: f64,
        xi_norm: f64,
        perturb_all_steps: bool,
    },
    PutOption {
        source_up_prob: f64,
        n_anchors: usize,
        initial_price: f64,
    },
}

impl EnvSpec {
    pub fn name(&self) -> &'static str {
        match self {
            EnvSpec::Simulated { .. } => "simulated",
            EnvSpec::PutOption { .. } => "put_option",
        }
    }

    fn default_for(name: &str) -> Result<Self> {
        match name {
            "simulated" => Ok(EnvSpec::Simulated {
                zeta: 0.3,
                p_fail: 0.001,
                xi_norm: 0.3,
                perturb_all_steps: false,
            }),
            "put_option" => Ok(EnvSpec::PutOption {
                source_up_prob: 0.5,
                n_anchors: 20,
                initial_price: 100.0,
            }),
            other => Err(Error::Config(format!("unknown environment `{other}`"))),
        }
    }

    /// The simulated environment with target perturbation `q`.
    pub fn simulated(&self, q: f64) -> Result<TabularEnv> {
        match *self {
            EnvSpec::Simulated {
                zeta,
                p_fail,
                xi_norm,
                perturb_all_steps,
            } => {
                let mut p = SimulatedEnvParams::with_xi_norm(zeta, p_fail, xi_norm, q);
                p.perturb_all_steps = perturb_all_steps;
                build_simulated_env(&p)
            }
            _ => Err(Error::Config("not a simulated environment".into())),
        }
    }

    /// The put option with target price-up probability `p`.
    pub fn put_option(&self, p: f64) -> Result<PutOptionEnv> {
        match *self {
            EnvSpec::PutOption {
                source_up_prob,
                n_anchors,
                initial_price,
            } => PutOptionEnv::new(PutOptionParams {
                source_up_prob,
                n_anchors,
                initial_price,
                ..PutOptionParams::with_target(p)
            }),
            _ => Err(Error::Config("not a put-option environment".into())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceKind {
    Uniform,
    /// Action 0 (`(-1,-1,-1,-1)` in the simulated env) at the first step, uniform after.
    TargetFirst,
    /// Half on action 0 and half on the last action at the first step, uniform after.
    MixedFirst,
}

impl ReferenceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ReferenceKind::Uniform => "uniform",
            ReferenceKind::TargetFirst => "target_first",
            ReferenceKind::MixedFirst => "mixed_first",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(ReferenceKind::Uniform),
            "target_first" => Ok(ReferenceKind::TargetFirst),
            "mixed_first" => Ok(ReferenceKind::MixedFirst),
            other => Err(Error::Config(format!("unknown reference kind `{other}`"))),
        }
    }

    pub fn build(&self, n_actions: usize, horizon: usize) -> Result<ReferencePolicy> {
        let uniform = vec![1.0 / n_actions as f64; n_actions];
        let mut first = vec![0.0; n_actions];
        match self {
            ReferenceKind::Uniform => return Ok(ReferencePolicy::uniform(n_actions)),
            ReferenceKind::TargetFirst => first[0] = 1.0,
            ReferenceKind::MixedFirst => {
                if n_actions < 2 {
                    return Err(Error::Config("mixed_first needs at least two actions".into()));
                }
                first[0] = 0.5;
                first[n_actions - 1] = 0.5;
            }
        }
        let mut steps = vec![uniform; horizon];
        steps[0] = first;
        ReferencePolicy::per_step(steps)
    }
}

/// An entry of `agent.algorithms`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Agent(Mode),
    /// The reference policy itself, evaluated without training.
    Reference,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Agent(m) => m.as_str(),
            Algorithm::Reference => "reference",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s == "reference" {
            return Ok(Algorithm::Reference);
        }
        Mode::parse(s)
            .map(Algorithm::Agent)
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub env: EnvSpec,
    /// `q` for the simulated env, target price-up probability for the put option.
    pub perturbations: Vec<f64>,
    pub reference: ReferenceKind,
    pub algorithms: Vec<Algorithm>,
    pub rhos: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub etas: Vec<f64>,
    pub lambda: f64,
    /// `None` selects the default `dH sqrt(log(dKH|A|))`.
    pub beta: Option<f64>,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub eval_rollouts: usize,
    pub ave_subopt: bool,
    pub workers: Option<usize>,
    pub output: Option<PathBuf>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            env: EnvSpec::default_for("simulated").expect("known name"),
            perturbations: (0..=10).map(|i| i as f64 / 10.0).collect(),
            reference: ReferenceKind::Uniform,
            algorithms: vec![
                Algorithm::Agent(Mode::Drmdp),
                Algorithm::Agent(Mode::LsviUcb),
                Algorithm::Agent(Mode::DrLsviUcb),
                Algorithm::Reference,
            ],
            rhos: vec![0.3],
            sigmas: vec![0.1, 1.0, 2.0],
            etas: vec![100.0],
            lambda: 1.0,
            beta: None,
            episodes: 100,
            seeds: (0..10).collect(),
            eval_rollouts: 1000,
            ave_subopt: true,
            workers: None,
            output: None,
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::Config(format!("`{key}`: expected a number, got `{v}`")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: expected a non-negative integer, got `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{v}`"))),
    }
}

fn parse_list<T>(key: &str, v: &str, item: impl Fn(&str, &str) -> Result<T>) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| item(key, s))
        .collect()
}

fn parse_seeds(key: &str, v: &str) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for part in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let bad = || Error::Config(format!("`{key}`: bad seed `{part}`"));
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            out.extend(a..b);
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    Ok(out)
}

impl SweepConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        // `env.name` decides which other env keys are legal, so it goes first.
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            entries.push((key.trim().to_string(), value.trim().to_string()));
        }
        if let Some((_, name)) = entries.iter().find(|(k, _)| k == "env.name") {
            cfg.env = EnvSpec::default_for(name)?;
        }
        for (k, v) in &entries {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Sets one key; used by the parser and by command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "env.name" => {
                if self.env.name() != value {
                    self.env = EnvSpec::default_for(value)?;
                }
            }
            "env.perturbations" => self.perturbations = parse_list(key, value, parse_f64)?,
            "reference.kind" => self.reference = ReferenceKind::parse(value)?,
            "agent.algorithms" => {
                self.algorithms = parse_list(key, value, |_, s| Algorithm::parse(s))?
            }
            "agent.rho" => self.rhos = parse_list(key, value, parse_f64)?,
            "agent.sigma" => self.sigmas = parse_list(key, value, parse_f64)?,
            "agent.eta" => self.etas = parse_list(key, value, parse_f64)?,
            "agent.lambda" => self.lambda = parse_f64(key, value)?,
            "agent.beta" => {
                self.beta = if value == "default" {
                    None
                } else {
                    Some(parse_f64(key, value)?)
                }
            }
            "agent.episodes" => self.episodes = parse_usize(key, value)?,
            "sweep.seeds" => self.seeds = parse_seeds(key, value)?,
            "sweep.eval_rollouts" => self.eval_rollouts = parse_usize(key, value)?,
            "sweep.ave_subopt" => self.ave_subopt = parse_bool(key, value)?,
            "sweep.workers" => self.workers = Some(parse_usize(key, value)?),
            "output.path" => self.output = Some(PathBuf::from(value)),
            _ => self.set_env_key(key, value)?,
        }
        Ok(())
    }

    fn set_env_key(&mut self, key: &str, value: &str) -> Result<()> {
        match (&mut self.env, key) {
            (EnvSpec::Simulated { zeta, .. }, "env.zeta") => *zeta = parse_f64(key, value)?,
            (EnvSpec::Simulated { p_fail, .. }, "env.p_fail") => *p_fail = parse_f64(key, value)?,
            (EnvSpec::Simulated { xi_norm, .. }, "env.xi_norm") => *xi_norm = parse_f64(key, value)?,
            (EnvSpec::Simulated { perturb_all_steps, .. }, "env.perturb_all_steps") => {
                *perturb_all_steps = parse_bool(key, value)?
            }
            (EnvSpec::PutOption { source_up_prob, .. }, "env.source_up_prob") => {
                *source_up_prob = parse_f64(key, value)?
            }
            (EnvSpec::PutOption { n_anchors, .. }, "env.n_anchors") => {
                *n_anchors = parse_usize(key, value)?
            }
            (EnvSpec::PutOption { initial_price, .. }, "env.initial_price") => {
                *initial_price = parse_f64(key, value)?
            }
            _ => {
                return Err(Error::Config(format!(
                    "unknown key `{key}` for environment `{}`",
                    self.env.name()
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let nonempty = |name: &str, len: usize| {
            if len == 0 {
                Err(Error::Config(format!("`{name}` must not be empty")))
            } else {
                Ok(())
            }
        };
        nonempty("env.perturbations", self.perturbations.len())?;
        nonempty("agent.algorithms", self.algorithms.len())?;
        nonempty("agent.eta", self.etas.len())?;
        nonempty("sweep.seeds", self.seeds.len())?;
        let needs = |m: Mode| self.algorithms.contains(&Algorithm::Agent(m));
        if needs(Mode::Drmdp) || needs(Mode::DrLsviUcb) {
            nonempty("agent.rho", self.rhos.len())?;
        }
        if needs(Mode::Rrmdp) {
            nonempty("agent.sigma", self.sigmas.len())?;
        }
        if let Some(p) = self.perturbations.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Config(format!("perturbation {p} outside [0, 1]")));
        }
        if let Some(r) = self.rhos.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Config(format!("rho {r} outside [0, 1]")));
        }
        if let Some(s) = self.sigmas.iter().find(|s| **s <= 0.0) {
            return Err(Error::Config(format!("sigma {s} must be > 0")));
        }
        if let Some(e) = self.etas.iter().find(|e| **e <= 0.0) {
            return Err(Error::Config(format!("eta {e} must be > 0")));
        }
        if self.lambda <= 0.0 {
            return Err(Error::Config("agent.lambda must be > 0".into()));
        }
        if self.beta.is_some_and(|b| b < 0.0) {
            return Err(Error::Config("agent.beta must be >= 0".into()));
        }
        if self.eval_rollouts == 0 {
            return Err(Error::Config("sweep.eval_rollouts must be >= 1".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("sweep.workers must be >= 1".into()));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(Error::Config("sweep.seeds must be distinct".into()));
        }
        let mut algos = self.algorithms.clone();
        algos.sort();
        algos.dedup();
        if algos.len() != self.algorithms.len() {
            return Err(Error::Config("agent.algorithms has duplicates".into()));
        }
        Ok(())
    }

    /// Agent settings for one grid cell.
    pub fn agent_config(&self, mode: Mode, param: f64, eta: f64, seed: u64) -> AgentConfig {
        let mut cfg = AgentConfig::new(mode);
        match mode {
            Mode::Drmdp | Mode::DrLsviUcb => cfg.rho = param,
            Mode::Rrmdp => cfg.sigma = param,
            Mode::LsviUcb => {}
        }
        cfg.eta = eta;
        cfg.lambda = self.lambda;
        cfg.beta = self.beta;
        cfg.episodes = self.episodes;
        cfg.seed = seed;
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_example() {
        let cfg = SweepConfig::parse(
            "# comment\n\
             env.name = simulated\n\
             env.xi_norm = 0.2\n\
             env.perturbations = 0.0, 0.5, 1.0\n\
             reference.kind = mixed_first\n\
             agent.algorithms = drmdp, reference\n\
             agent.rho = 0.1, 0.3\n\
             agent.beta = 2.5\n\
             sweep.seeds = 0..3, 10\n\
             output.path = out.csv\n",
        )
        .unwrap();
        assert_eq!(cfg.perturbations, vec![0.0, 0.5, 1.0]);
        assert_eq!(cfg.seeds, vec![0, 1, 2, 10]);
        assert_eq!(cfg.beta, Some(2.5));
        assert_eq!(cfg.reference, ReferenceKind::MixedFirst);
        assert!(matches!(cfg.env, EnvSpec::Simulated { xi_norm, .. } if xi_norm == 0.2));
        assert_eq!(cfg.output, Some(PathBuf::from("out.csv")));
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "agent.rho = 1.5",
            "sweep.seeds = 1, 1",
            "sweep.eval_rollouts = 0",
            "env.strike = 3",
            "env.name = put_option\nenv.xi_norm = 0.2",
            "agent.algorithms = ppo",
            "no equals sign",
            "env.perturbations =",
            "agent.eta = abc",
        ] {
            assert!(matches!(SweepConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn env_name_order_does_not_matter() {
        let cfg = SweepConfig::parse("env.n_anchors = 10\nenv.name = put_option\n").unwrap();
        assert!(matches!(cfg.env, EnvSpec::PutOption { n_anchors: 10, .. }));
    }

    #[test]
    fn reference_kinds() {
        let r = ReferenceKind::TargetFirst.build(16, 3).unwrap();
        assert_eq!(r.probs(0, None).unwrap()[0], 1.0);
        assert_eq!(r.probs(1, None).unwrap(), vec![1.0 / 16.0; 16]);
        let r = ReferenceKind::MixedFirst.build(16, 3).unwrap();
        let p = r.probs(0, None).unwrap();
        assert_eq!((p[0], p[15]), (0.5, 0.5));
    }
}
