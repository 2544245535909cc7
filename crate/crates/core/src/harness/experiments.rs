//! Training runs, the `p_stay` sweep and the small-instance oracle check,
//! plus their CSV and gnuplot outputs.

use std::fmt::Write as _;
use std::fs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{ExperimentConfig, Scheme};
use crate::agents::baseline::{baseline_myopic_static, FrozenChannels};
use crate::agents::dqn::{baseline_no_cache_train, greedy_policy, split_streams, train, TrainOutcome};
use crate::agents::oracle::{value_iteration_oracle, OracleSolution};
use crate::agents::tabular::{train_tabular_env, TabularQ};
use crate::env::{EnvConfig, Environment, SystemState};
use crate::error::{invalid, Result};
use crate::nn::Mlp;

pub const THREADS_VAR: &str = "IA_CACHE_RL_THREADS";
pub const CHECKPOINT_FILE: &str = "checkpoint.iaqnet";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const MOVING_AVERAGE_WINDOW: usize = 100;

/// Episodes in the final averaging window: the last tenth, at least one.
pub fn evaluation_window(episodes: usize) -> usize {
    (episodes / 10).max(1).min(episodes)
}

/// Trailing mean over up to `window` entries ending at each position.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// Mean per-slot reward over the last tenth of a per-episode curve.
pub fn average_sum_rate(curve: &[f64], slots: usize) -> f64 {
    let w = evaluation_window(curve.len());
    curve[curve.len() - w..].iter().sum::<f64>() / (w * slots) as f64
}

pub fn convergence_csv(curve: &[f64]) -> String {
    let ma = moving_average(curve, MOVING_AVERAGE_WINDOW);
    let mut s = String::from("episode,sum_rate,moving_avg_100\n");
    for (i, (r, m)) in curve.iter().zip(&ma).enumerate() {
        let _ = writeln!(s, "{i},{r},{m}");
    }
    s
}

const CONVERGENCE_GP: &str = "set datafile separator ','
set key top left
set xlabel 'episode'
set ylabel 'sum rate per episode (bits/s/Hz)'
set terminal pngcairo size 900,600
set output 'convergence.png'
plot 'convergence.csv' skip 1 using 1:2 with lines lc rgb '#bbbbbb' title 'episode', \\
     '' skip 1 using 1:3 with lines lw 2 title '100-episode moving average'
";

const SWEEP_GP: &str = "set datafile separator ','
set key bottom right
set xlabel 'p_stay'
set ylabel 'average sum rate (bits/s/Hz)'
set terminal pngcairo size 900,600
set output 'sweep.png'
plot for [s in 'with-cache no-cache myopic-static'] 'sweep_summary.csv' skip 1 \\
     using 1:(strcol(2) eq s ? $3 : NaN) with linespoints title s
";

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub outcome: TrainOutcome,
    pub avg_sum_rate: f64,
}

/// Trains the configured scheme and writes `convergence.csv`, the
/// checkpoint, the resolved config and a gnuplot script into `out_dir`.
pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainResult> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let outcome = match cfg.scheme {
        Scheme::WithCache => train(&cfg.env, &cfg.dqn, &mut rng)?,
        Scheme::NoCache => baseline_no_cache_train(&cfg.env, &cfg.dqn, &mut rng)?,
        Scheme::MyopicStatic => return Err(invalid("train needs a learning scheme (with-cache or no-cache)")),
    };
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join(CONVERGENCE_FILE), convergence_csv(&outcome.curve))?;
    fs::write(cfg.out_dir.join("convergence.gp"), CONVERGENCE_GP)?;
    fs::write(cfg.out_dir.join("config.txt"), cfg.serialize())?;
    outcome.network.save_checkpoint(&cfg.out_dir.join(CHECKPOINT_FILE))?;
    let avg_sum_rate = if outcome.curve.is_empty() {
        0.0
    } else {
        average_sum_rate(&outcome.curve, cfg.env.slots)
    };
    Ok(TrainResult { outcome, avg_sum_rate })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub scheme: Scheme,
    pub p_stay: f64,
    pub replica: usize,
    pub replica_seed: u64,
    /// Per-episode sum rates. For the static scheme these cover only the
    /// evaluation window.
    pub curve: Vec<f64>,
    pub avg_sum_rate: f64,
}

/// Seed of replica `r`, independent of the sweep point so that every
/// `p_stay` shares the same random streams.
pub fn replica_seed(master: u64, replica: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(replica as u64 + 1);
    rng.random()
}

/// The static baseline over the evaluation window of a training run seeded
/// with `seed`.
///
/// The environment stream is advanced past the earlier episodes, so the
/// baseline sees the same states and channels as a learner trained from the
/// same seed. Cache is unavailable to this scheme. The selection is made from
/// the state at the start of each episode and held for the whole episode.
pub fn run_myopic_static(env_cfg: &EnvConfig, episodes: usize, frozen_samples: usize, seed: u64) -> Result<Vec<f64>> {
    run_myopic_static_observed(env_cfg, episodes, frozen_samples, seed, |_, _| {})
}

/// [`run_myopic_static`] reporting each slot's episode index and state.
pub fn run_myopic_static_observed<F>(
    env_cfg: &EnvConfig,
    episodes: usize,
    frozen_samples: usize,
    seed: u64,
    mut observer: F,
) -> Result<Vec<f64>>
where
    F: FnMut(usize, &SystemState),
{
    if episodes == 0 {
        return Ok(Vec::new());
    }
    let cfg = EnvConfig {
        p_hit: 0.0,
        ..env_cfg.clone()
    };
    let env = Environment::new(cfg)?;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let (_, mut env_rng) = split_streams(&mut master);
    let frozen = FrozenChannels::new(&env, frozen_samples, master.random())?;
    let window = evaluation_window(episodes);
    for _ in 0..(episodes - window) * (env_cfg.slots + 1) {
        env_rng.random::<u64>();
    }
    let mut curve = Vec::with_capacity(window);
    for episode in episodes - window..episodes {
        let mut state = env.start_episode(&mut env_rng)?;
        let action = baseline_myopic_static(&state, &env, &frozen)?;
        let mut total = 0.0;
        for _ in 0..env_cfg.slots {
            observer(episode, &state);
            let out = env.step(&state, action, &mut env_rng)?;
            total += out.reward;
            state = out.next_state;
        }
        curve.push(total);
    }
    Ok(curve)
}

/// One sweep job.
pub fn run_scheme(cfg: &ExperimentConfig, scheme: Scheme, p_stay: f64, replica: usize) -> Result<RunRecord> {
    let env = EnvConfig {
        p_stay,
        ..cfg.env.clone()
    };
    let seed = replica_seed(cfg.seed, replica);
    let curve = match scheme {
        Scheme::WithCache => train(&env, &cfg.dqn, &mut ChaCha8Rng::seed_from_u64(seed))?.curve,
        Scheme::NoCache => baseline_no_cache_train(&env, &cfg.dqn, &mut ChaCha8Rng::seed_from_u64(seed))?.curve,
        Scheme::MyopicStatic => run_myopic_static(&env, cfg.dqn.episodes, cfg.frozen_samples, seed)?,
    };
    Ok(RunRecord {
        scheme,
        p_stay,
        replica,
        replica_seed: seed,
        avg_sum_rate: average_sum_rate(&curve, env.slots),
        curve,
    })
}

/// Worker count from the environment, falling back to the machine's
/// parallelism.
pub fn thread_count() -> usize {
    std::env::var(THREADS_VAR)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Jobs in output order: sweep point, then scheme, then replica.
pub fn sweep_jobs(cfg: &ExperimentConfig) -> Vec<(f64, Scheme, usize)> {
    let mut jobs = Vec::new();
    for &p in &cfg.sweep_p_stay {
        for &s in &cfg.sweep_schemes {
            for r in 0..cfg.replicas {
                jobs.push((p, s, r));
            }
        }
    }
    jobs
}

pub fn run_jobs(cfg: &ExperimentConfig, jobs: &[(f64, Scheme, usize)], threads: usize) -> Result<Vec<RunRecord>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| invalid(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|&(p, s, r)| run_scheme(cfg, s, p, r))
            .collect()
    })
}

pub fn sweep_csv(records: &[RunRecord]) -> String {
    let mut s = String::from("p_stay,scheme,replica,avg_sum_rate\n");
    for r in records {
        let _ = writeln!(s, "{},{},{},{}", r.p_stay, r.scheme, r.replica, r.avg_sum_rate);
    }
    s
}

/// Mean over replicas of every `(p_stay, scheme)` pair, in first-seen order.
pub fn sweep_summary(records: &[RunRecord]) -> Vec<(f64, Scheme, f64)> {
    let mut out: Vec<(f64, Scheme, f64, usize)> = Vec::new();
    for r in records {
        match out.iter_mut().find(|(p, s, _, _)| *p == r.p_stay && *s == r.scheme) {
            Some(e) => {
                e.2 += r.avg_sum_rate;
                e.3 += 1;
            }
            None => out.push((r.p_stay, r.scheme, r.avg_sum_rate, 1)),
        }
    }
    out.into_iter().map(|(p, s, t, n)| (p, s, t / n as f64)).collect()
}

/// Runs every sweep job and writes `sweep.csv`, a replica-averaged summary,
/// per-job curves under `runs/` and a gnuplot script.
pub fn run_sweep(cfg: &ExperimentConfig, threads: usize) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    if cfg.sweep_p_stay.is_empty() || cfg.sweep_schemes.is_empty() {
        return Err(invalid("sweep needs at least one p_stay value and one scheme"));
    }
    if cfg.dqn.episodes == 0 {
        return Err(invalid("sweep needs at least one episode"));
    }
    let records = run_jobs(cfg, &sweep_jobs(cfg), threads)?;
    let runs = cfg.out_dir.join("runs");
    fs::create_dir_all(&runs)?;
    for r in &records {
        let name = format!("p{}_{}_r{}.csv", r.p_stay, r.scheme, r.replica);
        fs::write(runs.join(name), convergence_csv(&r.curve))?;
    }
    fs::write(cfg.out_dir.join(SWEEP_FILE), sweep_csv(&records))?;
    let mut summary = String::from("p_stay,scheme,mean_avg_sum_rate\n");
    for (p, s, m) in sweep_summary(&records) {
        let _ = writeln!(summary, "{p},{s},{m}");
    }
    fs::write(cfg.out_dir.join("sweep_summary.csv"), summary)?;
    fs::write(cfg.out_dir.join("sweep.gp"), SWEEP_GP)?;
    fs::write(cfg.out_dir.join("config.txt"), cfg.serialize())?;
    Ok(records)
}

/// Largest relative value gap tolerated for the learned agents.
pub const VALUE_GAP_TOL: f64 = 0.05;
pub const DQN_AGREEMENT_TOL: f64 = 0.9;

#[derive(Debug, Clone)]
pub struct OracleCheckReport {
    pub oracle: OracleSolution,
    pub tabular: TabularQ,
    pub dqn: Mlp,
    pub tabular_policy: Vec<usize>,
    pub dqn_policy: Vec<usize>,
    pub tabular_agreement: f64,
    pub dqn_agreement: f64,
    /// `max_x |max_a Q_tab(x, a) − V*(x)| / mean_x |V*(x)|`.
    pub tabular_value_gap: f64,
    /// Relative shortfall of the deep policy's value from `V*`, both averaged
    /// over the initial distribution.
    pub dqn_value_gap: f64,
    pub optimal_return: f64,
    pub dqn_return: f64,
    pub passed: bool,
}

/// Oracle, tabular learner and deep learner on a small instance.
/// `tabular_discount` replaces the configured discount for the tabular
/// learner only.
pub fn run_oracle_check(cfg: &ExperimentConfig, tabular_discount: Option<f64>) -> Result<OracleCheckReport> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let discount = cfg.dqn.discount;
    let oracle = value_iteration_oracle(&cfg.env, discount, cfg.oracle_mc_samples, rng.random())?;
    let states = oracle.states();

    let tabular = train_tabular_env(
        &cfg.env,
        tabular_discount.unwrap_or(discount),
        cfg.tabular_steps,
        &mut ChaCha8Rng::seed_from_u64(rng.random()),
    )?;
    let tabular_policy = tabular.greedy_policy();
    let scale = oracle.v.iter().map(|v| v.abs()).sum::<f64>() / states as f64;
    let tabular_value_gap = (0..states)
        .map(|x| (tabular.max_value(x) - oracle.v[x]).abs())
        .fold(0.0, f64::max)
        / scale.max(f64::MIN_POSITIVE);

    let hyper = crate::agents::DqnHyperparams {
        episodes: cfg.oracle_episodes,
        ..cfg.dqn.clone()
    };
    let dqn = train(&cfg.env, &hyper, &mut ChaCha8Rng::seed_from_u64(rng.random()))?.network;
    let dqn_policy = greedy_policy(&dqn, &cfg.env, states)?;
    let optimal_return = oracle.initial_mean(&oracle.v);
    let dqn_return = oracle.initial_mean(&oracle.policy_value(&dqn_policy)?);
    let dqn_value_gap = (optimal_return - dqn_return) / optimal_return.abs().max(f64::MIN_POSITIVE);

    let tabular_agreement = oracle.agreement(&tabular_policy);
    let dqn_agreement = oracle.agreement(&dqn_policy);
    let passed = tabular_agreement == 1.0
        && tabular_value_gap <= VALUE_GAP_TOL
        && dqn_agreement >= DQN_AGREEMENT_TOL
        && dqn_value_gap <= VALUE_GAP_TOL;
    Ok(OracleCheckReport {
        oracle,
        tabular,
        dqn,
        tabular_policy,
        dqn_policy,
        tabular_agreement,
        dqn_agreement,
        tabular_value_gap,
        dqn_value_gap,
        optimal_return,
        dqn_return,
        passed,
    })
}

impl OracleCheckReport {
    pub fn render(&self) -> Result<String> {
        let o = &self.oracle;
        let n = o.actions();
        let mut s = String::new();
        let _ = writeln!(s, "states {} actions {} discount {} mc_samples {}", o.states(), n, o.discount, o.mc_samples);
        let _ = writeln!(s, "tabular agreement {:.2}%", 100.0 * self.tabular_agreement);
        let _ = writeln!(s, "tabular value gap {:.4}", self.tabular_value_gap);
        let _ = writeln!(s, "dqn agreement {:.2}%", 100.0 * self.dqn_agreement);
        let _ = writeln!(s, "optimal return {:.6} dqn return {:.6} gap {:.4}", self.optimal_return, self.dqn_return, self.dqn_value_gap);
        let _ = writeln!(s, "\nstate levels bits | oracle Q | tabular Q | dqn Q | pi* tab dqn");
        for x in 0..o.states() {
            let st = SystemState::from_index(x, o.candidates, o.snr_levels);
            let bits: String = st.cache.bits().iter().map(|&b| if b { '1' } else { '0' }).collect();
            let q_dqn = self.dqn.forward(&crate::env::encode_observation(&st, o.snr_levels))?;
            let fmt = |v: &mut dyn Iterator<Item = f64>| v.map(|q| format!("{q:8.4}")).collect::<Vec<_>>().join(" ");
            let _ = writeln!(
                s,
                "{x:4} {:?} {bits} | {} | {} | {} | {} {} {}",
                st.levels,
                fmt(&mut (0..n).map(|a| o.q_value(x, a))),
                fmt(&mut self.tabular.row(x).iter().copied()),
                fmt(&mut q_dqn.iter().copied()),
                o.policy[x],
                self.tabular_policy[x],
                self.dqn_policy[x],
            );
        }
        let _ = writeln!(s, "\n{}", if self.passed { "PASS" } else { "FAIL" });
        Ok(s)
    }
}
