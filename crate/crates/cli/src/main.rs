use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use robustrl::agents::{run_agent, TrainedPolicy};
use robustrl::env::LinearMdp;
use robustrl::harness::{
    evaluate_on_targets, rows_to_csv, run_sweep, train_stream, Algorithm, EnvSpec, SweepConfig,
};
use robustrl::oracle::{oracle_optimal, RobustMode};
use robustrl::Error;

#[derive(Parser)]
#[command(name = "robustrl", version, about = "Robust regularized policy optimization on linear MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and print a summary; `--out` saves the policy as JSON.
    Train(Common),
    /// Run the full grid and write the CSV to `--out`, the config path, or stdout.
    Sweep(Common),
    /// Evaluate a saved policy on the configured target perturbations.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Policy JSON written by `train --out`.
        #[arg(long)]
        policy: PathBuf,
    },
    /// Print the exact optimal values of the simulated environment.
    Oracle(Common),
}

#[derive(Args, Default)]
struct Common {
    /// Key-value config file; flags below override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// drmdp, rrmdp, lsvi_ucb, dr_lsvi_ucb or reference.
    #[arg(long)]
    algo: Option<String>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    /// A number or `default`.
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    episodes: Option<usize>,
}

/// A failure and the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::InvalidParameter { .. } => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn runtime(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

impl Common {
    fn load(&self) -> Result<SweepConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => SweepConfig::load(path)?,
            None => SweepConfig::default(),
        };
        let overrides = [
            ("agent.algorithms", self.algo.clone()),
            ("agent.rho", self.rho.map(|v| v.to_string())),
            ("agent.sigma", self.sigma.map(|v| v.to_string())),
            ("agent.eta", self.eta.map(|v| v.to_string())),
            ("agent.beta", self.beta.clone()),
            ("agent.episodes", self.episodes.map(|v| v.to_string())),
            ("sweep.seeds", self.seed.map(|v| v.to_string())),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.6}")
}

fn train(common: &Common) -> Result<String, Failure> {
    let cfg = common.load()?;
    let mode = match cfg.algorithms[0] {
        Algorithm::Agent(mode) => mode,
        Algorithm::Reference => {
            return Err(Error::Config("`train` needs a learning algorithm, not `reference`".into()).into())
        }
    };
    let param = match mode {
        robustrl::agents::Mode::Rrmdp => cfg.sigmas[0],
        _ => cfg.rhos[0],
    };
    let seed = cfg.seeds[0];
    let agent = cfg.agent_config(mode, param, cfg.etas[0], seed);
    let p0 = cfg.perturbations[0];
    let (policy, summary) = match &cfg.env {
        EnvSpec::Simulated { .. } => train_on(&cfg, &cfg.env.simulated(p0)?, &agent)?,
        EnvSpec::PutOption { .. } => train_on(&cfg, &cfg.env.put_option(p0)?, &agent)?,
    };
    let mut out = summary;
    for (p, stats) in evaluate_on_targets(&cfg, &policy, seed)? {
        writeln!(out, "target_return perturbation={p} mean={} se={}", fmt(stats.mean), fmt(stats.stderr)).unwrap();
    }
    if let Some(path) = &common.out {
        save_policy(&policy, path)?;
    }
    Ok(out)
}

fn train_on<E: LinearMdp>(
    cfg: &SweepConfig,
    env: &E,
    agent: &robustrl::agents::AgentConfig,
) -> Result<(TrainedPolicy, String), Failure> {
    let reference = cfg.reference.build(env.n_actions(), env.horizon())?;
    let spec = agent.spec(env)?;
    let run = run_agent(env, &reference, &spec, &mut train_stream(agent.seed))?;
    let last = run.log.episodes.last().map_or(0.0, |e| e.value_estimate);
    let mut s = String::new();
    writeln!(s, "algorithm {}", agent.mode.as_str()).unwrap();
    writeln!(s, "env {}", env.name()).unwrap();
    match agent.mode {
        robustrl::agents::Mode::Rrmdp => writeln!(s, "sigma {}", agent.sigma).unwrap(),
        robustrl::agents::Mode::LsviUcb => {}
        _ => writeln!(s, "rho {}", agent.rho).unwrap(),
    }
    writeln!(s, "eta {}", agent.eta).unwrap();
    writeln!(s, "beta {}", fmt(spec.beta)).unwrap();
    writeln!(s, "episodes {}", spec.episodes).unwrap();
    writeln!(s, "seed {}", agent.seed).unwrap();
    writeln!(s, "mean_bonus {}", fmt(run.log.mean_bonus_sum())).unwrap();
    writeln!(s, "final_value_estimate {}", fmt(last)).unwrap();
    Ok((run.policy, s))
}

fn save_policy(policy: &TrainedPolicy, path: &Path) -> Result<(), Failure> {
    let json = serde_json::to_string_pretty(policy).map_err(|e| runtime(e.to_string()))?;
    std::fs::write(path, json).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

fn sweep(common: &Common) -> Result<String, Failure> {
    let mut cfg = common.load()?;
    if let Some(path) = &common.out {
        cfg.output = Some(path.clone());
    }
    let rows = run_sweep(&cfg)?;
    Ok(match &cfg.output {
        Some(path) => format!("wrote {} rows to {}\n", rows.len(), path.display()),
        None => rows_to_csv(&rows),
    })
}

fn eval(common: &Common, policy_path: &Path) -> Result<String, Failure> {
    let cfg = common.load()?;
    let text = std::fs::read_to_string(policy_path)
        .map_err(|e| runtime(format!("cannot read {}: {e}", policy_path.display())))?;
    let policy: TrainedPolicy =
        serde_json::from_str(&text).map_err(|e| runtime(format!("bad policy file: {e}")))?;
    let mut out = String::from("perturbation,mean,se,n\n");
    for (p, stats) in evaluate_on_targets(&cfg, &policy, cfg.seeds[0])? {
        writeln!(out, "{p},{},{},{}", fmt(stats.mean), fmt(stats.stderr), stats.n).unwrap();
    }
    Ok(out)
}

fn oracle(common: &Common) -> Result<String, Failure> {
    let cfg = common.load()?;
    if !matches!(cfg.env, EnvSpec::Simulated { .. }) {
        return Err(Error::Config("`oracle` needs a tabular environment (env.name = simulated)".into()).into());
    }
    let mode = match common.sigma {
        Some(sigma) => RobustMode::Rrmdp { sigma },
        None => RobustMode::Drmdp { rho: cfg.rhos[0] },
    };
    let eta = cfg.etas[0];
    let env = cfg.env.simulated(cfg.perturbations[0])?;
    let model = env.source();
    let reference = cfg.reference.build(model.n_actions(), model.horizon())?;
    let result = oracle_optimal(model, mode, eta, &reference)?;
    let mut out = String::new();
    match mode {
        RobustMode::Drmdp { rho } => writeln!(out, "# drmdp rho={rho} eta={eta}").unwrap(),
        RobustMode::Rrmdp { sigma } => writeln!(out, "# rrmdp sigma={sigma} eta={eta}").unwrap(),
    }
    writeln!(out, "initial_value {}", fmt(result.initial_value(model))).unwrap();
    out.push_str("table,step,state,action,value\n");
    for h in 0..model.horizon() {
        for s in 0..model.n_states() {
            writeln!(out, "V,{h},{s},,{}", fmt(result.values[h][s])).unwrap();
        }
    }
    for h in 0..model.horizon() {
        for s in 0..model.n_states() {
            for (a, q) in result.q[h][s].iter().enumerate() {
                writeln!(out, "Q,{h},{s},{a},{}", fmt(*q)).unwrap();
            }
        }
    }
    Ok(out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Train(c) => train(c),
        Command::Sweep(c) => sweep(c),
        Command::Eval { common, policy } => eval(common, policy),
        Command::Oracle(c) => oracle(c),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
