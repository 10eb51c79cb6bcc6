//! Acceptance suite: every criterion runs at its pinned tolerance and prints
//! one PASS/FAIL line. The process exits non-zero if any criterion fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use robustrl::agents::{
    regress_nu_nominal, regress_nu_rrmdp, run_agent, run_drrpo, AgentConfig, AgentSpec, Backup,
    Mode, PolicyUpdate,
};
use robustrl::duality::{drmdp_dual_max, exact_dual_value, PiecewiseDualInstance};
use robustrl::env::{
    build_simulated_env, random_model, RandomModelSpec, SimulatedEnvParams, TabularFactorModel,
};
use robustrl::harness::{run_sweep, Algorithm, EnvSpec, ResultRow, SweepConfig};
use robustrl::numerics::{FeatureVector, GramMatrix};
use robustrl::oracle::{
    ave_subopt, oracle_optimal, oracle_policy_value, RobustMode,
};
use robustrl::policy::{kl_divergence, log_partition_value, softmax_probs, ReferencePolicy, TabularPolicy};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn stderr(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let n = xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
}

// ---------------------------------------------------------------------------
// 1. Dual solver vs. grid search.

/// Grid maximum of `Σ c_τ min(v_τ, α) − ρα` over `{0, step, 2·step, …} ∪ {H}`,
/// swept upward with running sums so each instance costs O(grid + n log n).
fn grid_dual(inst: &PiecewiseDualInstance, step: f64) -> f64 {
    let (c, v) = (inst.coeffs(), inst.values());
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
    let total_c: f64 = c.iter().sum();
    let (mut below_cv, mut below_c, mut next) = (0.0, 0.0, 0);
    let mut best = f64::NEG_INFINITY;
    let n_steps = (inst.horizon_cap() / step).floor() as usize;
    for k in 0..=n_steps + 1 {
        let alpha = if k > n_steps { inst.horizon_cap() } else { k as f64 * step };
        while next < order.len() && v[order[next]] <= alpha {
            below_cv += c[order[next]] * v[order[next]];
            below_c += c[order[next]];
            next += 1;
        }
        best = best.max(below_cv + alpha * (total_c - below_c) - inst.rho() * alpha);
    }
    best
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let step = 1e-5;
    let mut worst = 0.0_f64;
    let mut failures = 0;
    let mut solver_time = Duration::ZERO;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=20);
        let cap = rng.gen_range(1..=3) as f64;
        let rho: f64 = rng.gen();
        // Coefficients with Σ|c| ≤ 1 and mixed signs, like rows of Λ⁻¹Φᵀ.
        let w = random_simplex(&mut rng, n);
        let scale: f64 = rng.gen();
        let coeffs: Vec<f64> = w
            .iter()
            .map(|x| if rng.gen_bool(0.2) { -x * scale } else { x * scale })
            .collect();
        let values: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.1) { cap } else { rng.gen_range(0.0..cap) })
            .collect();
        let inst = PiecewiseDualInstance::new(coeffs, values, cap, rho).unwrap();
        let t = Instant::now();
        let sol = drmdp_dual_max(&inst);
        solver_time += t.elapsed();
        let grid = grid_dual(&inst, step);
        let gap = sol.value - grid;
        worst = worst.max(gap.abs());
        if gap.abs() > (1.0 + rho) * step + 1e-9 || gap < -1e-12 {
            failures += 1;
        }
    }
    outcome(
        failures == 0,
        format!("1000 instances, max |solver − grid| = {worst:.2e}, {failures} outside tolerance, solver time {solver_time:.2?}"),
    )
}

// ---------------------------------------------------------------------------
// 2. Exact dual vs. direct worst-case construction.

/// Moves up to `ρ` mass from the highest-value states onto the zero-value state.
fn mass_shift(mu0: &[f64], v: &[f64], rho: f64) -> f64 {
    let fail = (0..v.len()).min_by(|a, b| v[*a].total_cmp(&v[*b])).unwrap();
    let mut mu = mu0.to_vec();
    let mut order: Vec<usize> = (0..v.len()).filter(|&s| s != fail).collect();
    order.sort_by(|a, b| v[*b].total_cmp(&v[*a]));
    let mut budget = rho;
    for s in order {
        let moved = mu[s].min(budget);
        mu[s] -= moved;
        mu[fail] += moved;
        budget -= moved;
        if budget <= 0.0 {
            break;
        }
    }
    mu.iter().zip(v).map(|(p, x)| p * x).sum()
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let n = rng.gen_range(2..=8);
        let mu0 = random_simplex(&mut rng, n);
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..4.0)).collect();
        if rng.gen_bool(0.2) {
            // Ties among the high values.
            v[rng.gen_range(0..n)] = 2.0;
            v[rng.gen_range(0..n)] = 2.0;
        }
        v[rng.gen_range(0..n)] = 0.0;
        let rho: f64 = if rng.gen_bool(0.05) { 1.0 } else { rng.gen() };
        let got = exact_dual_value(&mu0, &v, rho).unwrap();
        worst = worst.max((got - mass_shift(&mu0, &v, rho)).abs());
    }
    outcome(worst <= 1e-9, format!("1000 triples, max deviation {worst:.2e} (tolerance 1e-9)"))
}

// ---------------------------------------------------------------------------
// 3–4. Oracle on random tabular models.

fn random_small_model(rng: &mut ChaCha8Rng) -> TabularFactorModel {
    let spec = RandomModelSpec {
        n_states: rng.gen_range(2..=5),
        n_actions: rng.gen_range(1..=4),
        dim: rng.gen_range(2..=4),
        horizon: rng.gen_range(1..=4),
    };
    random_model(rng, spec).unwrap()
}

fn random_mode(rng: &mut ChaCha8Rng, drmdp: bool) -> RobustMode {
    if drmdp {
        RobustMode::Drmdp { rho: rng.gen() }
    } else {
        RobustMode::Rrmdp {
            sigma: rng.gen_range(0.05..4.0),
        }
    }
}

/// Worst-case or penalized expectation of `v` under one factor, computed
/// without the crate's dual solver.
fn factor_backup(mu0: &[f64], v: &[f64], mode: RobustMode) -> f64 {
    match mode {
        RobustMode::Drmdp { rho } => mass_shift(mu0, v, rho),
        RobustMode::Rrmdp { sigma } => mu0.iter().zip(v).map(|(p, x)| p * x.min(sigma)).sum(),
    }
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0_f64;
    for i in 0..100 {
        let model = random_small_model(&mut rng);
        let mode = random_mode(&mut rng, i % 2 == 0);
        let eta = rng.gen_range(0.5..50.0);
        let reference = ReferencePolicy::uniform(model.n_actions());
        let result = oracle_optimal(&model, mode, eta, &reference).unwrap();
        // Residuals of both recursions, with the backup and the soft maximum
        // recomputed from scratch.
        let (n, a) = (model.n_states(), model.n_actions());
        worst = worst.max(result.values[model.horizon()].iter().map(|x| x.abs()).fold(0.0, f64::max));
        for h in 0..model.horizon() {
            let next = &result.values[h + 1];
            let nu: Vec<f64> = (0..model.dim())
                .map(|i| factor_backup(model.factor(h, i), next, mode))
                .collect();
            for s in 0..n {
                for act in 0..a {
                    let want = if s == model.fail_state() {
                        0.0
                    } else {
                        let phi = model.phi(s, act).as_slice();
                        model.reward_at(h, s, act) + phi.iter().zip(&nu).map(|(x, y)| x * y).sum::<f64>()
                    };
                    worst = worst.max((result.q[h][s][act] - want).abs());
                }
                let q = &result.q[h][s];
                let top = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = q.iter().map(|x| (eta * (x - top)).exp() / a as f64).sum();
                worst = worst.max((result.values[h][s] - (top + z.ln() / eta)).abs());
            }
        }
    }
    outcome(worst <= 1e-10, format!("100 models, max residual {worst:.2e} (tolerance 1e-10)"))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = f64::NEG_INFINITY;
    let mut checks = 0;
    for _ in 0..20 {
        let model = random_small_model(&mut rng);
        let (h_max, n, a) = (model.horizon(), model.n_states(), model.n_actions());
        let reference = ReferencePolicy::tabular(
            (0..h_max)
                .map(|_| (0..n).map(|_| random_simplex(&mut rng, a)).collect())
                .collect(),
        )
        .unwrap();
        let eta = rng.gen_range(0.5..50.0);
        for drmdp in [true, false] {
            let mode = random_mode(&mut rng, drmdp);
            let opt = oracle_optimal(&model, mode, eta, &reference).unwrap();
            let v_star = oracle_policy_value(&model, mode, eta, &reference, &opt.policy).unwrap();
            for _ in 0..100 {
                let alt = TabularPolicy {
                    probs: (0..h_max)
                        .map(|_| (0..n).map(|_| random_simplex(&mut rng, a)).collect())
                        .collect(),
                };
                let v = oracle_policy_value(&model, mode, eta, &reference, &alt).unwrap();
                for s in 0..n {
                    worst = worst.max(v[0][s] - v_star[0][s]);
                    checks += 1;
                }
            }
        }
    }
    outcome(
        worst <= 1e-9,
        format!("20 models × 2 modes × 100 policies ({checks} state checks), max Ṽ₁^π′ − Ṽ₁^π* = {worst:.2e}"),
    )
}

// ---------------------------------------------------------------------------
// 5. Reductions.

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst_dual = 0.0_f64;
    for _ in 0..1000 {
        let n = rng.gen_range(2..=8);
        let mu0 = random_simplex(&mut rng, n);
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..4.0)).collect();
        v[0] = 0.0;
        let nominal: f64 = mu0.iter().zip(&v).map(|(p, x)| p * x).sum();
        worst_dual = worst_dual.max((exact_dual_value(&mu0, &v, 0.0).unwrap() - nominal).abs());
    }

    let mut bitwise = true;
    for _ in 0..200 {
        let d = rng.gen_range(2..=5);
        let horizon = rng.gen_range(1..=5) as f64;
        let n = rng.gen_range(0..40);
        let feats: Vec<FeatureVector> = (0..n)
            .map(|_| FeatureVector::new(random_simplex(&mut rng, d)).unwrap())
            .collect();
        let vals: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=horizon)).collect();
        let gram = GramMatrix::from_features(d, 1.0, &feats).unwrap();
        let sigma = horizon + rng.gen_range(0.0..2.0);
        let a = regress_nu_rrmdp(&gram, &feats, &vals, sigma).unwrap();
        let b = regress_nu_nominal(&gram, &feats, &vals).unwrap();
        bitwise &= a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits());
    }

    // Whole-agent reduction: rrmdp with σ ≥ H against a non-robust regularized agent.
    let env = build_simulated_env(&SimulatedEnvParams::default()).unwrap();
    let reference = ReferencePolicy::uniform(16);
    let update = PolicyUpdate::Softmax { eta: 100.0 };
    let mut agents_equal = true;
    for seed in 0..3 {
        let run = |backup: Backup| {
            let spec = AgentSpec::new(backup, update, 1.0, 1.0, 60).unwrap();
            run_agent(&env, &reference, &spec, &mut robustrl::harness::train_stream(seed)).unwrap()
        };
        let a = run(Backup::Regularized { sigma: 3.0 });
        let b = run(Backup::Nominal);
        for (x, y) in a.log.episodes.iter().zip(&b.log.episodes) {
            for (p, q) in x.behavior.steps.iter().zip(&y.behavior.steps) {
                agents_equal &= p.nu.iter().zip(q.nu.iter()).all(|(u, w)| u.to_bits() == w.to_bits());
            }
        }
    }

    outcome(
        worst_dual <= 1e-12 && bitwise && agents_equal,
        format!(
            "ρ=0 max deviation {worst_dual:.2e}; σ≥H regression bitwise equal: {bitwise}; σ≥H agent ν bitwise equal: {agents_equal}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. Softmax identity.

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst = 0.0_f64;
    for i in 0..1000 {
        let n = rng.gen_range(1..=16);
        let reference = random_simplex(&mut rng, n);
        let q: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..3.0)).collect();
        let eta = if i % 4 == 0 { 100.0 } else { rng.gen_range(0.01..200.0) };
        let pi = softmax_probs(&reference, &q, eta).unwrap();
        let direct = pi.iter().zip(&q).map(|(p, x)| p * x).sum::<f64>()
            - kl_divergence(&pi, &reference).unwrap() / eta;
        worst = worst.max((log_partition_value(&reference, &q, eta).unwrap() - direct).abs());
    }
    outcome(worst <= 1e-9, format!("1000 draws (250 at η=100), max deviation {worst:.2e}"))
}

// ---------------------------------------------------------------------------
// 7–8. Learning checks on the simulated env.

fn simulated() -> robustrl::env::TabularEnv {
    build_simulated_env(&SimulatedEnvParams::with_xi_norm(0.3, 0.001, 0.3, 0.0)).unwrap()
}

fn criterion_7() -> Outcome {
    let env = simulated();
    let reference = ReferencePolicy::uniform(16);
    let oracle = oracle_optimal(env.source(), RobustMode::Drmdp { rho: 0.3 }, 100.0, &reference).unwrap();
    let v_star = oracle.initial_value(env.source());
    let (mut optimistic, mut total) = (0, 0);
    let mut beta = 0.0;
    for seed in 0..10 {
        let mut cfg = AgentConfig::new(Mode::Drmdp);
        cfg.rho = 0.3;
        cfg.eta = 100.0;
        cfg.episodes = 100;
        cfg.seed = seed;
        let out = run_drrpo(&env, &reference, &cfg).unwrap();
        beta = out.log.spec.beta;
        for ep in &out.log.episodes {
            total += 1;
            if ep.value_estimate >= v_star {
                optimistic += 1;
            }
        }
    }
    let rate = optimistic as f64 / total as f64;
    outcome(
        rate >= 0.95,
        format!("β = {beta:.3}, Ṽ₁* = {v_star:.4}, optimistic in {optimistic}/{total} = {:.1}% (need ≥ 95%)", rate * 100.0),
    )
}

fn criterion_8() -> Outcome {
    let env = simulated();
    let reference = ReferencePolicy::uniform(16);
    let mut lines = Vec::new();
    let mut all = true;
    for (mode, param) in [(Mode::Drmdp, 0.3), (Mode::Rrmdp, 1.0)] {
        let robust = match mode {
            Mode::Drmdp => RobustMode::Drmdp { rho: param },
            _ => RobustMode::Rrmdp { sigma: param },
        };
        let oracle = oracle_optimal(env.source(), robust, 100.0, &reference).unwrap();
        let mut wins = 0;
        let (mut s50, mut s200) = (Vec::new(), Vec::new());
        for seed in 0..10 {
            let subopt = |k: usize| {
                let mut cfg = AgentConfig::new(mode);
                cfg.rho = param;
                cfg.sigma = param;
                cfg.eta = 100.0;
                cfg.episodes = k;
                cfg.seed = seed;
                let out = run_drrpo(&env, &reference, &cfg).unwrap();
                ave_subopt(&out.log, &oracle, &env, 100.0, &reference).unwrap()
            };
            let (a, b) = (subopt(50), subopt(200));
            if b < a {
                wins += 1;
            }
            s50.push(a);
            s200.push(b);
        }
        all &= wins == 10;
        lines.push(format!(
            "{}: K=200 below K=50 on {wins}/10 seeds (means {:.4} vs {:.4})",
            mode.as_str(),
            mean(&s200),
            mean(&s50)
        ));
    }
    outcome(all, lines.join("; "))
}

// ---------------------------------------------------------------------------
// 9–12. Sweeps.

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Per-seed target returns of one algorithm/parameter at one perturbation.
fn per_seed(rows: &[ResultRow], algorithm: &str, param: Option<f64>, perturbation: f64) -> Vec<f64> {
    rows.iter()
        .filter(|r| {
            r.algorithm == algorithm
                && r.metric == "target_return"
                && r.perturbation == perturbation
                && param.is_none_or(|p| r.rho_or_sigma == p)
        })
        .map(|r| r.value)
        .collect()
}

fn criterion_9() -> Outcome {
    let mut cfg = SweepConfig::load(&configs_dir().join("simulated_shift.cfg")).unwrap();
    cfg.perturbations = vec![0.9];
    cfg.output = None;
    let rows = run_sweep(&cfg).unwrap();
    let dr = per_seed(&rows, "drmdp", Some(0.3), 0.9);
    let lsvi = per_seed(&rows, "lsvi_ucb", None, 0.9);
    let drlsvi = per_seed(&rows, "dr_lsvi_ucb", Some(0.3), 0.9);
    let reference = per_seed(&rows, "reference", None, 0.9);
    assert!([&dr, &lsvi, &drlsvi, &reference].iter().all(|v| v.len() == 10));
    let (m_dr, m_l, m_drl, m_ref) = (mean(&dr), mean(&lsvi), mean(&drlsvi), mean(&reference));
    let se = stderr(&dr);
    let a = m_dr >= m_l;
    let b = m_dr >= m_ref;
    let c = (m_drl - m_dr).abs() <= se;
    outcome(
        a && b && c,
        format!(
            "q=0.9 means: DR-RPO {m_dr:.4} (SE {se:.4}), LSVI-UCB {m_l:.4}, DR-LSVI-UCB {m_drl:.4}, reference {m_ref:.4}; \
             DR-RPO≥LSVI-UCB {a}, DR-RPO≥reference {b}, DR-LSVI-UCB within 1 SE {c}"
        ),
    )
}

fn criterion_10() -> Outcome {
    let mut cfg = SweepConfig::load(&configs_dir().join("simulated_rrmdp.cfg")).unwrap();
    cfg.perturbations = vec![0.9];
    cfg.output = None;
    let rows = run_sweep(&cfg).unwrap();
    let m: Vec<f64> = [0.1, 1.0, 2.0]
        .iter()
        .map(|s| mean(&per_seed(&rows, "rrmdp", Some(*s), 0.9)))
        .collect();
    outcome(
        m[0] >= m[2],
        format!("q=0.9 rrmdp means: σ=0.1 {:.4}, σ=1.0 {:.4}, σ=2.0 {:.4}; need σ=0.1 ≥ σ=2.0", m[0], m[1], m[2]),
    )
}

fn criterion_11() -> Outcome {
    let cfg = SweepConfig::load(&configs_dir().join("put_option.cfg")).unwrap();
    let mut cfg = cfg;
    cfg.algorithms = vec![Algorithm::Agent(Mode::Drmdp), Algorithm::Agent(Mode::LsviUcb)];
    cfg.rhos = vec![0.3];
    cfg.perturbations = vec![0.15, 0.85];
    cfg.output = None;
    assert!(matches!(cfg.env, EnvSpec::PutOption { .. }));
    let rows = run_sweep(&cfg).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for p in [0.15, 0.85] {
        let dr = mean(&per_seed(&rows, "drmdp", Some(0.3), p));
        let l = mean(&per_seed(&rows, "lsvi_ucb", None, p));
        pass &= dr >= l;
        parts.push(format!("p={p}: DR-RPO {dr:.4} vs LSVI-UCB {l:.4}"));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_12() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let base = SweepConfig::load(&configs_dir().join("simulated_shift.cfg")).unwrap();
    let mut bytes = Vec::new();
    for (i, workers) in [1usize, 4].into_iter().enumerate() {
        let mut cfg = base.clone();
        cfg.workers = Some(workers);
        cfg.output = Some(dir.path().join(format!("run{i}.csv")));
        run_sweep(&cfg).unwrap();
        bytes.push(std::fs::read(cfg.output.as_ref().unwrap()).unwrap());
    }
    let rows = bytes[0].iter().filter(|b| **b == b'\n').count();
    outcome(
        bytes[0] == bytes[1],
        format!("two runs of the full sweep (1 and 4 workers), {rows} lines each, byte-identical: {}", bytes[0] == bytes[1]),
    )
}

fn main() {
    // The worker override would make criterion 12 compare like with like.
    std::env::remove_var(robustrl::harness::WORKERS_ENV);

    type Check = fn() -> Outcome;
    let criteria: [(u32, &str, Option<Duration>, Check); 12] = [
        (1, "dual solver matches grid search", Some(Duration::from_secs(5)), criterion_1),
        (2, "exact dual matches mass-shift construction", None, criterion_2),
        (3, "oracle Bellman residuals", None, criterion_3),
        (4, "optimal-policy dominance", None, criterion_4),
        (5, "ρ=0 and σ≥H reductions", None, criterion_5),
        (6, "softmax identity", None, criterion_6),
        (7, "optimism rate", Some(Duration::from_secs(60)), criterion_7),
        (8, "average suboptimality trend", Some(Duration::from_secs(180)), criterion_8),
        (9, "simulated env ordering at q=0.9", Some(Duration::from_secs(120)), criterion_9),
        (10, "rrmdp σ ordering at q=0.9", None, criterion_10),
        (11, "put option ordering", Some(Duration::from_secs(180)), criterion_11),
        (12, "sweep determinism", None, criterion_12),
    ];

    let mut failed = Vec::new();
    for (id, name, limit, check) in criteria {
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| outcome(false, "panicked"));
        let elapsed = start.elapsed();
        let in_time = limit.is_none_or(|l| elapsed <= l);
        let pass = result.pass && in_time;
        let limit_note = limit.map_or(String::new(), |l| format!(" / limit {l:.0?}"));
        println!(
            "criterion {id:>2} {}: {name}: {} [{elapsed:.2?}{limit_note}]",
            if pass { "PASS" } else { "FAIL" },
            result.detail
        );
        if !pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 12 criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
