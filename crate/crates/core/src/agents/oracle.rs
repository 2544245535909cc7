//! Exact dynamic-programming references for small instances.
//!
//! The environment oracle estimates the one-step reward `R(x, a)` by Monte
//! Carlo with common random numbers across states and actions and builds the
//! transition kernel exactly. Because the dynamics ignore the action, the
//! kernel factorises over candidates into one `(level, bit)` chain each.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{enumerate_actions, EnvConfig, Environment, SlotStreams, SystemState};
use crate::error::{invalid, Error, Result};
use crate::nn::argmax;

pub const MAX_ORACLE_STATES: usize = 10_000;
pub const MAX_ORACLE_ACTIONS: usize = 64;
pub const VALUE_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 100_000;
/// Standard errors of the paired reward difference that still count as a tie.
pub const TIE_SIGMAS: f64 = 3.0;

/// Explicit finite MDP with state-action rewards and transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    pub states: usize,
    pub actions: usize,
    /// `states × actions`.
    pub rewards: Vec<f64>,
    /// `states × actions × states`, rows summing to one.
    pub transitions: Vec<f64>,
    pub discount: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdpSolution {
    pub v: Vec<f64>,
    /// `states × actions`.
    pub q: Vec<f64>,
    pub policy: Vec<usize>,
    pub sweeps: usize,
}

impl FiniteMdp {
    /// Rewards uniform in `[0, 1)`, dense random transition rows.
    pub fn random(states: usize, actions: usize, discount: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rewards = (0..states * actions).map(|_| rng.random()).collect();
        let mut transitions = Vec::with_capacity(states * actions * states);
        for _ in 0..states * actions {
            let row: Vec<f64> = (0..states).map(|_| rng.random::<f64>() + 0.05).collect();
            let total: f64 = row.iter().sum();
            transitions.extend(row.iter().map(|p| p / total));
        }
        Self {
            states,
            actions,
            rewards,
            transitions,
            discount,
        }
    }

    /// Action `a` in state `x` moves deterministically to `(x + a + 1) mod S`.
    pub fn deterministic_ring(states: usize, actions: usize, discount: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rewards = (0..states * actions).map(|_| rng.random()).collect();
        let mut transitions = vec![0.0; states * actions * states];
        for x in 0..states {
            for a in 0..actions {
                transitions[(x * actions + a) * states + (x + a + 1) % states] = 1.0;
            }
        }
        Self {
            states,
            actions,
            rewards,
            transitions,
            discount,
        }
    }

    pub fn reward(&self, x: usize, a: usize) -> f64 {
        self.rewards[x * self.actions + a]
    }

    pub fn transition_row(&self, x: usize, a: usize) -> &[f64] {
        let i = (x * self.actions + a) * self.states;
        &self.transitions[i..i + self.states]
    }

    /// Next state by inverse-CDF sampling of uniform `u`.
    pub fn sample_next(&self, x: usize, a: usize, u: f64) -> usize {
        let mut acc = 0.0;
        let row = self.transition_row(x, a);
        for (j, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        row.iter().rposition(|&p| p > 0.0).unwrap_or(self.states - 1)
    }

    pub fn value_iteration(&self, tol: f64, max_sweeps: usize) -> Result<MdpSolution> {
        let mut v = vec![0.0; self.states];
        let mut q = vec![0.0; self.states * self.actions];
        for sweep in 1..=max_sweeps {
            for x in 0..self.states {
                for a in 0..self.actions {
                    let ev: f64 = self.transition_row(x, a).iter().zip(&v).map(|(p, w)| p * w).sum();
                    q[x * self.actions + a] = self.reward(x, a) + self.discount * ev;
                }
            }
            let next: Vec<f64> = q
                .chunks(self.actions)
                .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
                .collect();
            let change = sup_distance(&next, &v);
            v = next;
            if change < tol {
                let policy = q.chunks(self.actions).map(argmax).collect();
                return Ok(MdpSolution { v, q, policy, sweeps: sweep });
            }
        }
        Err(Error::NoConvergence(max_sweeps))
    }
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Kronecker power of one per-candidate kernel, applied mode by mode.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredKernel {
    modes: usize,
    n: usize,
    /// `n × n`, row-major.
    factor: Vec<f64>,
}

impl FactoredKernel {
    pub fn new(modes: usize, n: usize, factor: Vec<f64>) -> Result<Self> {
        if factor.len() != n * n {
            return Err(Error::DimensionMismatch(format!("factor has {} entries, want {}", factor.len(), n * n)));
        }
        Ok(Self { modes, n, factor })
    }

    pub fn states(&self) -> usize {
        self.n.pow(self.modes as u32)
    }

    pub fn factor(&self, i: usize, j: usize) -> f64 {
        self.factor[i * self.n + j]
    }

    /// `(P v)(x) = Σ_{x'} P(x, x') v(x')`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut cur = v.to_vec();
        let mut next = vec![0.0; cur.len()];
        let mut stride = 1;
        for _ in 0..self.modes {
            let block = stride * n;
            for base in (0..cur.len()).step_by(block) {
                for inner in 0..stride {
                    for i in 0..n {
                        let row = &self.factor[i * n..(i + 1) * n];
                        next[base + i * stride + inner] = row
                            .iter()
                            .enumerate()
                            .map(|(j, p)| p * cur[base + j * stride + inner])
                            .sum();
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
            stride = block;
        }
        cur
    }

    /// Product of per-mode distributions, `dist` over one mode.
    pub fn product_distribution(&self, dist: &[f64]) -> Vec<f64> {
        (0..self.states())
            .map(|mut x| {
                let mut p = 1.0;
                for _ in 0..self.modes {
                    p *= dist[x % self.n];
                    x /= self.n;
                }
                p
            })
            .collect()
    }
}

/// Optimal values, greedy policy and the reward model they came from.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub candidates: usize,
    pub snr_levels: usize,
    pub discount: f64,
    pub mc_samples: usize,
    /// Estimated `R(x, a)`, `states × actions`.
    pub rewards: Vec<f64>,
    /// Largest shortfall of `R(x, a)` below the best action in `x` still
    /// treated as a tie, `states × actions`.
    pub tie_tolerance: Vec<f64>,
    pub kernel: FactoredKernel,
    /// Distribution of the initial state.
    pub initial: Vec<f64>,
    pub v: Vec<f64>,
    pub q: Vec<f64>,
    pub policy: Vec<usize>,
    pub sweeps: usize,
}

impl OracleSolution {
    pub fn states(&self) -> usize {
        self.v.len()
    }

    pub fn actions(&self) -> usize {
        1 << self.candidates
    }

    pub fn reward(&self, x: usize, a: usize) -> f64 {
        self.rewards[x * self.actions() + a]
    }

    pub fn q_value(&self, x: usize, a: usize) -> f64 {
        self.q[x * self.actions() + a]
    }

    /// Whether `a` is optimal in `x` up to Monte Carlo resolution.
    pub fn is_near_optimal(&self, x: usize, a: usize) -> bool {
        let n = self.actions();
        let best = self.reward(x, self.policy[x]);
        best - self.reward(x, a) <= self.tie_tolerance[x * n + a] + 1e-12 * best.abs().max(1.0)
    }

    /// Fraction of states where `policy` picks a near-optimal action.
    pub fn agreement(&self, policy: &[usize]) -> f64 {
        let hits = policy.iter().enumerate().filter(|&(x, &a)| self.is_near_optimal(x, a)).count();
        hits as f64 / self.states() as f64
    }

    /// `V^π` under the same reward model and discount.
    pub fn policy_value(&self, policy: &[usize]) -> Result<Vec<f64>> {
        self.policy_value_with_discount(policy, self.discount)
    }

    pub fn policy_value_with_discount(&self, policy: &[usize], discount: f64) -> Result<Vec<f64>> {
        if policy.len() != self.states() {
            return Err(Error::DimensionMismatch(format!(
                "policy covers {} states, oracle has {}",
                policy.len(),
                self.states()
            )));
        }
        let r: Vec<f64> = policy.iter().enumerate().map(|(x, &a)| self.reward(x, a)).collect();
        fixed_point(&self.kernel, discount, |x| r[x]).map(|(v, _)| v)
    }

    /// Expected value of `values` under the initial distribution.
    pub fn initial_mean(&self, values: &[f64]) -> f64 {
        self.initial.iter().zip(values).map(|(p, v)| p * v).sum()
    }
}

/// Solves `V = g + discount · P V` by successive approximation, where `g` is
/// the per-state reward already maximised over actions.
fn fixed_point(kernel: &FactoredKernel, discount: f64, g: impl Fn(usize) -> f64) -> Result<(Vec<f64>, usize)> {
    let states = kernel.states();
    let mut v = vec![0.0; states];
    for sweep in 1..=MAX_SWEEPS {
        let ev = kernel.apply(&v);
        let next: Vec<f64> = (0..states).map(|x| g(x) + discount * ev[x]).collect();
        let change = sup_distance(&next, &v);
        v = next;
        if change < VALUE_TOL {
            return Ok((v, sweep));
        }
    }
    Err(Error::NoConvergence(MAX_SWEEPS))
}

/// Per-candidate `(level, bit)` kernel: level moves by the FSMC, the bit is
/// redrawn independently.
pub fn candidate_kernel(env: &Environment) -> Vec<f64> {
    let h = env.config().snr_levels;
    let p_hit = env.config().p_hit;
    let n = 2 * h;
    let mut k = vec![0.0; n * n];
    for l in 0..h {
        for c in 0..2 {
            for l2 in 0..h {
                let t = env.kernel().get(l, l2);
                k[(2 * l + c) * n + 2 * l2] = t * (1.0 - p_hit);
                k[(2 * l + c) * n + 2 * l2 + 1] = t * p_hit;
            }
        }
    }
    k
}

/// Monte Carlo reward matrix of one channel draw: `states × actions`.
fn sample_rewards(env: &Environment, states: &[SystemState], seed: u64, out: &mut [f64]) -> Result<()> {
    let cfg = env.config();
    let actions = enumerate_actions(cfg.candidates)?;
    let n = actions.len();
    let mut streams = SlotStreams::from_seed(seed);
    let channels = env.draw_channels(&mut streams, 0)?;
    for action in actions {
        let solution = env.align(&channels, action, &mut streams.alignment.clone())?;
        for (x, s) in states.iter().enumerate() {
            out[x * n + action.index()] = env
                .slot_rewards(s, action, &channels, solution.as_ref())?
                .iter()
                .sum();
        }
    }
    Ok(())
}

/// Bellman optimality on a small instance.
///
/// `R(x, a)` averages `mc_samples` channel draws seeded from `seed`; every
/// draw is shared by all states and actions. Iterates to a sup-norm change
/// below `1e-10`.
pub fn value_iteration_oracle(env_cfg: &EnvConfig, discount: f64, mc_samples: usize, seed: u64) -> Result<OracleSolution> {
    if !(0.0..1.0).contains(&discount) {
        return Err(invalid(format!("discount must lie in [0, 1), got {discount}")));
    }
    if mc_samples < 2 {
        return Err(invalid("need at least two Monte Carlo samples"));
    }
    let n_states = (2 * env_cfg.snr_levels)
        .checked_pow(env_cfg.candidates as u32)
        .filter(|&s| s <= MAX_ORACLE_STATES)
        .ok_or_else(|| Error::TooLarge(format!("state space exceeds {MAX_ORACLE_STATES}")))?;
    if env_cfg.actions() > MAX_ORACLE_ACTIONS {
        return Err(Error::TooLarge(format!("action space exceeds {MAX_ORACLE_ACTIONS}")));
    }
    let env = Environment::new(env_cfg.clone())?;
    let n_actions = env_cfg.actions();
    let states: Vec<SystemState> = (0..n_states)
        .map(|x| SystemState::from_index(x, env_cfg.candidates, env_cfg.snr_levels))
        .collect();

    let mut seeder = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..mc_samples).map(|_| seeder.random()).collect();
    let mut buf = vec![0.0; n_states * n_actions];
    let mut sums = vec![0.0; n_states * n_actions];
    for &s in &seeds {
        sample_rewards(&env, &states, s, &mut buf)?;
        sums.iter_mut().zip(&buf).for_each(|(acc, r)| *acc += r);
    }
    let m = mc_samples as f64;
    let rewards: Vec<f64> = sums.iter().map(|s| s / m).collect();
    let best: Vec<usize> = rewards.chunks(n_actions).map(argmax).collect();

    // second pass over the same draws for the paired spread against the best
    let mut sq = vec![0.0; n_states * n_actions];
    for &s in &seeds {
        sample_rewards(&env, &states, s, &mut buf)?;
        for x in 0..n_states {
            let b = buf[x * n_actions + best[x]];
            let mean_b = rewards[x * n_actions + best[x]];
            for a in 0..n_actions {
                let i = x * n_actions + a;
                let d = (b - buf[i]) - (mean_b - rewards[i]);
                sq[i] += d * d;
            }
        }
    }
    let tie_tolerance = sq.iter().map(|s| TIE_SIGMAS * (s / (m - 1.0) / m).sqrt()).collect();

    let kernel = FactoredKernel::new(env_cfg.candidates, 2 * env_cfg.snr_levels, candidate_kernel(&env))?;
    let level_dist = match env.stationary() {
        Some(pi) => pi.to_vec(),
        None => vec![1.0 / env_cfg.snr_levels as f64; env_cfg.snr_levels],
    };
    let mode_dist: Vec<f64> = level_dist
        .iter()
        .flat_map(|p| [p * (1.0 - env_cfg.p_hit), p * env_cfg.p_hit])
        .collect();
    let initial = kernel.product_distribution(&mode_dist);

    let best_reward: Vec<f64> = best.iter().enumerate().map(|(x, &a)| rewards[x * n_actions + a]).collect();
    let (v, sweeps) = fixed_point(&kernel, discount, |x| best_reward[x])?;
    let ev = kernel.apply(&v);
    let q: Vec<f64> = (0..n_states * n_actions)
        .map(|i| rewards[i] + discount * ev[i / n_actions])
        .collect();
    let policy = q.chunks(n_actions).map(argmax).collect();

    Ok(OracleSolution {
        candidates: env_cfg.candidates,
        snr_levels: env_cfg.snr_levels,
        discount,
        mc_samples,
        rewards,
        tie_tolerance,
        kernel,
        initial,
        v,
        q,
        policy,
        sweeps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(h: usize, p_hit: f64, p_stay: f64) -> EnvConfig {
        EnvConfig {
            candidates: 2,
            snr_levels: h,
            p_hit,
            p_stay,
            c_total: 6.0,
            c_csi: 1.0,
            ..EnvConfig::default()
        }
    }

    #[test]
    fn factored_kernel_matches_dense_product() {
        let f = vec![0.5, 0.3, 0.2, 0.1, 0.6, 0.3, 0.25, 0.25, 0.5];
        let k = FactoredKernel::new(2, 3, f.clone()).unwrap();
        let v: Vec<f64> = (0..9).map(|i| (i * i) as f64 - 3.0).collect();
        let got = k.apply(&v);
        for x in 0..9 {
            let (x0, x1) = (x % 3, x / 3);
            let mut want = 0.0;
            for y in 0..9 {
                want += f[x0 * 3 + y % 3] * f[x1 * 3 + y / 3] * v[y];
            }
            assert!((got[x] - want).abs() < 1e-12);
        }
        let ones = k.apply(&[1.0; 9]);
        assert!(ones.iter().all(|p| (p - 1.0).abs() < 1e-12));
    }

    #[test]
    fn explicit_mdp_value_iteration() {
        // two states, one action: V = r + γ P V solved by hand
        let mdp = FiniteMdp {
            states: 2,
            actions: 1,
            rewards: vec![1.0, 0.0],
            transitions: vec![0.5, 0.5, 0.0, 1.0],
            discount: 0.5,
        };
        let sol = mdp.value_iteration(1e-12, 10_000).unwrap();
        assert!(sol.v[1].abs() < 1e-12);
        assert!((sol.v[0] - 1.0 / 0.75).abs() < 1e-10);
    }

    #[test]
    fn rejects_large_spaces() {
        let cfg = EnvConfig::default();
        assert!(matches!(value_iteration_oracle(&cfg, 0.5, 4, 0), Err(Error::TooLarge(_))));
        let wide = EnvConfig {
            candidates: 7,
            snr_levels: 2,
            ..EnvConfig::default()
        };
        assert!(matches!(value_iteration_oracle(&wide, 0.5, 4, 0), Err(Error::TooLarge(_))));
    }

    #[test]
    fn myopic_limit() {
        let sol = value_iteration_oracle(&small(3, 0.5, 0.489), 1e-9, 50, 1).unwrap();
        for x in 0..sol.states() {
            let row = &sol.rewards[x * 4..(x + 1) * 4];
            assert_eq!(sol.policy[x], argmax(row));
        }
    }

    #[test]
    fn frozen_levels_give_geometric_values() {
        for p_hit in [0.0, 1.0] {
            let sol = value_iteration_oracle(&small(2, p_hit, 1.0), 0.5, 200, 2).unwrap();
            for x in 0..sol.states() {
                let s = SystemState::from_index(x, 2, 2);
                let reachable = s.cache.bits().iter().all(|&b| b == (p_hit == 1.0));
                if !reachable {
                    continue;
                }
                let best = (0..4).map(|a| sol.reward(x, a)).fold(f64::NEG_INFINITY, f64::max);
                assert!((sol.v[x] - best / (1.0 - 0.5)).abs() < 1e-8, "state {x}");
            }
        }
    }

    #[test]
    fn symmetric_candidates_are_interchangeable() {
        let sol = value_iteration_oracle(&small(3, 0.5, 0.489), 0.5, 2000, 3).unwrap();
        for lvl in 0..3 {
            for bit in [false, true] {
                let d = 2 * lvl + usize::from(bit);
                let x = d + 6 * d;
                let gap = (sol.q_value(x, 1) - sol.q_value(x, 2)).abs();
                let spread = sol.tie_tolerance[x * 4 + 1].max(sol.tie_tolerance[x * 4 + 2]);
                assert!(gap <= spread.max(0.05), "state {x}: {gap} vs {spread}");
            }
        }
    }

    #[test]
    fn policy_value_of_optimal_policy_is_v_star() {
        let sol = value_iteration_oracle(&small(3, 0.5, 0.489), 0.5, 100, 4).unwrap();
        let v = sol.policy_value(&sol.policy).unwrap();
        for (a, b) in v.iter().zip(&sol.v) {
            assert!((a - b).abs() < 1e-8);
        }
        let idle = sol.policy_value(&vec![0; sol.states()]).unwrap();
        assert!(idle.iter().all(|v| v.abs() < 1e-12));
        assert!((sol.initial.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
