//! Lookup-table Q-learning with per-pair decaying step sizes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle::FiniteMdp;
use crate::env::{EnvConfig, Environment, SystemAction};
use crate::error::{invalid, Result};
use crate::nn::argmax;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularQ {
    states: usize,
    actions: usize,
    values: Vec<f64>,
    visits: Vec<u64>,
}

impl TabularQ {
    pub fn new(states: usize, actions: usize) -> Result<Self> {
        if states == 0 || actions == 0 {
            return Err(invalid("tabular Q needs at least one state and one action"));
        }
        Ok(Self {
            states,
            actions,
            values: vec![0.0; states * actions],
            visits: vec![0; states * actions],
        })
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn get(&self, x: usize, a: usize) -> f64 {
        self.values[x * self.actions + a]
    }

    pub fn visits(&self, x: usize, a: usize) -> u64 {
        self.visits[x * self.actions + a]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.values[x * self.actions..(x + 1) * self.actions]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_value(&self, x: usize) -> f64 {
        self.row(x).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn greedy(&self, x: usize) -> usize {
        argmax(self.row(x))
    }

    pub fn greedy_policy(&self) -> Vec<usize> {
        (0..self.states).map(|x| self.greedy(x)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// `Q(x,a) += α (r + discount · max_a' Q(x',a') − Q(x,a))` with
/// `α = 1/(1 + visits(x,a))`, then bumps the visit count.
pub fn tabular_q_update(q: &mut TabularQ, x: usize, a: usize, r: f64, x_next: usize, discount: f64) {
    let target = r + discount * q.max_value(x_next);
    let i = x * q.actions + a;
    let alpha = 1.0 / (1.0 + q.visits[i] as f64);
    q.values[i] += alpha * (target - q.values[i]);
    q.visits[i] += 1;
}

/// Off-policy tabular learning on the environment under a uniformly random
/// behaviour policy.
pub fn train_tabular_env<R: Rng + ?Sized>(
    env_cfg: &EnvConfig,
    discount: f64,
    steps: usize,
    rng: &mut R,
) -> Result<TabularQ> {
    let env = Environment::new(env_cfg.clone())?;
    let h = env_cfg.snr_levels;
    let states = (2 * h).checked_pow(env_cfg.candidates as u32).ok_or_else(|| invalid("state space overflow"))?;
    let mut q = TabularQ::new(states, env_cfg.actions())?;
    let mut behaviour = ChaCha8Rng::seed_from_u64(rng.random());
    let mut env_rng = ChaCha8Rng::seed_from_u64(rng.random());
    let mut state = env.start_episode(&mut env_rng)?;
    for _ in 0..steps {
        let a = behaviour.random_range(0..q.actions);
        let out = env.step(&state, SystemAction::from_index(a, env_cfg.candidates)?, &mut env_rng)?;
        tabular_q_update(&mut q, state.index(h), a, out.reward, out.next_state.index(h), discount);
        state = out.next_state;
    }
    Ok(q)
}

/// Sweeps of sampled updates over every `(x, a)` of a finite MDP, stopping
/// once the largest change in a sweep falls below `tol`. Returns the table
/// and the number of sweeps run.
pub fn train_tabular_mdp<R: Rng + ?Sized>(
    mdp: &FiniteMdp,
    max_sweeps: usize,
    tol: f64,
    rng: &mut R,
) -> Result<(TabularQ, usize)> {
    let mut q = TabularQ::new(mdp.states, mdp.actions)?;
    for sweep in 1..=max_sweeps {
        let mut change = 0.0f64;
        for x in 0..mdp.states {
            for a in 0..mdp.actions {
                let x_next = mdp.sample_next(x, a, rng.random());
                let before = q.get(x, a);
                tabular_q_update(&mut q, x, a, mdp.reward(x, a), x_next, mdp.discount);
                change = change.max((q.get(x, a) - before).abs());
            }
        }
        if change < tol {
            return Ok((q, sweep));
        }
    }
    Ok((q, max_sweeps))
}
