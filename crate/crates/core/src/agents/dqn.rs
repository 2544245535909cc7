//! Deep Q-learning with experience replay and a periodically synced target
//! network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::replay::{Experience, ReplayMemory, DEFAULT_CAPACITY};
use crate::env::{encode_observation, EnvConfig, Environment, SystemAction, SystemState};
use crate::error::{invalid, Result};
use crate::nn::{argmax, Mlp, TrainingBatch};

/// Linear ramp of the probability of acting greedily.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreedySchedule {
    pub start: f64,
    pub end: f64,
    /// Steps over which the ramp runs; `None` means 80% of the run.
    pub anneal_steps: Option<usize>,
}

impl Default for GreedySchedule {
    fn default() -> Self {
        Self {
            start: 0.1,
            end: 1.0,
            anneal_steps: None,
        }
    }
}

impl GreedySchedule {
    pub fn resolved_anneal_steps(&self, total_steps: usize) -> usize {
        self.anneal_steps
            .unwrap_or_else(|| (total_steps as f64 * 0.8).round() as usize)
    }

    /// Greedy probability at `step` of a run lasting `total_steps`.
    pub fn value(&self, step: usize, total_steps: usize) -> f64 {
        let span = self.resolved_anneal_steps(total_steps);
        if span == 0 || step >= span {
            return self.end;
        }
        self.start + (self.end - self.start) * step as f64 / span as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DqnHyperparams {
    pub discount: f64,
    pub greedy: GreedySchedule,
    pub batch_size: usize,
    /// Gradient updates between target syncs, `N`.
    pub target_sync: usize,
    pub learning_rate: f64,
    /// Replay size before the first update (at least `batch_size`).
    pub warmup: usize,
    pub replay_capacity: usize,
    pub episodes: usize,
    pub hidden: Vec<usize>,
}

impl Default for DqnHyperparams {
    fn default() -> Self {
        Self {
            discount: 0.5,
            greedy: GreedySchedule::default(),
            batch_size: 32,
            target_sync: 4,
            learning_rate: 1e-3,
            warmup: 1000,
            replay_capacity: DEFAULT_CAPACITY,
            episodes: 500,
            hidden: vec![128, 128],
        }
    }
}

impl DqnHyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(invalid(format!("discount must lie in (0, 1), got {}", self.discount)));
        }
        let g = &self.greedy;
        if !(0.0..=1.0).contains(&g.start) || !(0.0..=1.0).contains(&g.end) {
            return Err(invalid("greedy schedule must stay within [0, 1]"));
        }
        if self.batch_size == 0 || self.target_sync == 0 || self.replay_capacity == 0 {
            return Err(invalid("batch size, target sync period and replay capacity must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(invalid("learning rate must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(invalid("hidden widths must be positive"));
        }
        Ok(())
    }

    pub fn architecture(&self, env: &EnvConfig) -> Vec<usize> {
        let mut widths = vec![env.observation_len()];
        widths.extend(&self.hidden);
        widths.push(env.actions());
        widths
    }

    pub fn effective_warmup(&self) -> usize {
        self.warmup.max(self.batch_size)
    }
}

/// ε-greedy: the argmax of `q_net` with probability `greedy_prob`, otherwise
/// a uniformly random action.
pub fn select_action<R: Rng + ?Sized>(
    q_net: &Mlp,
    observation: &[f64],
    greedy_prob: f64,
    rng: &mut R,
) -> Result<usize> {
    let u: f64 = rng.random();
    if u < greedy_prob {
        Ok(argmax(&q_net.forward(observation)?))
    } else {
        Ok(rng.random_range(0..q_net.output_len()))
    }
}

/// `y = r + discount · max_a' Q(x', a'; θ⁻)`.
pub fn td_targets(batch: &[&Experience], target: &Mlp, discount: f64) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|e| {
            let q = target.forward(&e.next_observation)?;
            let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok(e.reward + discount * best)
        })
        .collect()
}

/// Online network, target network and replay memory.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    online: Mlp,
    target: Mlp,
    memory: ReplayMemory,
    hyper: DqnHyperparams,
    updates: usize,
    sync_log: Vec<usize>,
}

impl DqnAgent {
    pub fn new<R: Rng + ?Sized>(architecture: &[usize], hyper: DqnHyperparams, rng: &mut R) -> Result<Self> {
        hyper.validate()?;
        let online = Mlp::new(architecture, rng)?;
        Ok(Self {
            target: online.copy_weights(),
            online,
            memory: ReplayMemory::new(hyper.replay_capacity)?,
            hyper,
            updates: 0,
            sync_log: Vec::new(),
        })
    }

    pub fn online(&self) -> &Mlp {
        &self.online
    }

    pub fn target(&self) -> &Mlp {
        &self.target
    }

    pub fn memory(&self) -> &ReplayMemory {
        &self.memory
    }

    /// Gradient updates applied so far.
    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Update counts at which the target network was refreshed.
    pub fn sync_log(&self) -> &[usize] {
        &self.sync_log
    }

    pub fn into_network(self) -> Mlp {
        self.online
    }

    pub fn act<R: Rng + ?Sized>(&self, observation: &[f64], greedy_prob: f64, rng: &mut R) -> Result<usize> {
        select_action(&self.online, observation, greedy_prob, rng)
    }

    pub fn remember(&mut self, e: Experience) {
        self.memory.store(e);
    }

    /// One minibatch update once the replay memory is warm. Returns the
    /// pre-update loss, or `None` while warming up.
    pub fn learn<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<f64>> {
        if self.memory.len() < self.hyper.effective_warmup() {
            return Ok(None);
        }
        let sample = self.memory.sample_minibatch(self.hyper.batch_size, rng)?;
        let targets = td_targets(&sample, &self.target, self.hyper.discount)?;
        let batch = TrainingBatch {
            observations: sample.iter().map(|e| e.observation.clone()).collect(),
            actions: sample.iter().map(|e| e.action).collect(),
            targets,
        };
        let (loss, grads) = self.online.loss_and_gradient(&batch)?;
        self.online.sgd_step(&grads, self.hyper.learning_rate);
        self.updates += 1;
        if self.updates % self.hyper.target_sync == 0 {
            self.target = self.online.copy_weights();
            self.sync_log.push(self.updates);
        }
        Ok(Some(loss))
    }
}

/// What the training loop saw in one slot.
#[derive(Debug, Clone)]
pub struct SlotRecord<'a> {
    pub episode: usize,
    pub step: usize,
    pub state: &'a SystemState,
    pub action: SystemAction,
    pub reward: f64,
    pub greedy_prob: f64,
    pub agent: &'a DqnAgent,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Mlp,
    /// Undiscounted reward summed over each episode.
    pub curve: Vec<f64>,
    pub updates: usize,
    pub sync_log: Vec<usize>,
}

/// Seeds for the agent and environment streams, both drawn from `rng`.
pub fn split_streams<R: Rng + ?Sized>(rng: &mut R) -> (ChaCha8Rng, ChaCha8Rng) {
    let agent = ChaCha8Rng::seed_from_u64(rng.random());
    let env = ChaCha8Rng::seed_from_u64(rng.random());
    (agent, env)
}

pub fn train<R: Rng + ?Sized>(env_cfg: &EnvConfig, hyper: &DqnHyperparams, rng: &mut R) -> Result<TrainOutcome> {
    train_with_observer(env_cfg, hyper, rng, |_| {})
}

/// Training loop with a per-slot callback.
///
/// Each slot: ε-greedy action, environment step, store, one minibatch update
/// once warm. Episodes restart from a fresh initial state.
pub fn train_with_observer<R, F>(
    env_cfg: &EnvConfig,
    hyper: &DqnHyperparams,
    rng: &mut R,
    mut observer: F,
) -> Result<TrainOutcome>
where
    R: Rng + ?Sized,
    F: FnMut(&SlotRecord<'_>),
{
    let env = Environment::new(env_cfg.clone())?;
    let (mut agent_rng, mut env_rng) = split_streams(rng);
    let mut agent = DqnAgent::new(&hyper.architecture(env_cfg), hyper.clone(), &mut agent_rng)?;
    let total_steps = hyper.episodes * env_cfg.slots;
    let mut curve = Vec::with_capacity(hyper.episodes);
    let mut step = 0;

    for episode in 0..hyper.episodes {
        let mut state = env.start_episode(&mut env_rng)?;
        let mut episode_sum = 0.0;
        for _ in 0..env_cfg.slots {
            let obs = encode_observation(&state, env_cfg.snr_levels);
            let greedy_prob = hyper.greedy.value(step, total_steps);
            let a = agent.act(&obs, greedy_prob, &mut agent_rng)?;
            let action = SystemAction::from_index(a, env_cfg.candidates)?;
            let out = env.step(&state, action, &mut env_rng)?;
            agent.remember(Experience {
                observation: obs,
                action: a,
                reward: out.reward,
                next_observation: encode_observation(&out.next_state, env_cfg.snr_levels),
            });
            agent.learn(&mut agent_rng)?;
            observer(&SlotRecord {
                episode,
                step,
                state: &state,
                action,
                reward: out.reward,
                greedy_prob,
                agent: &agent,
            });
            episode_sum += out.reward;
            state = out.next_state;
            step += 1;
        }
        curve.push(episode_sum);
    }

    Ok(TrainOutcome {
        updates: agent.updates(),
        sync_log: agent.sync_log().to_vec(),
        network: agent.into_network(),
        curve,
    })
}

/// [`train`] with every cache request forced to miss.
pub fn baseline_no_cache_train<R: Rng + ?Sized>(
    env_cfg: &EnvConfig,
    hyper: &DqnHyperparams,
    rng: &mut R,
) -> Result<TrainOutcome> {
    let cfg = EnvConfig {
        p_hit: 0.0,
        ..env_cfg.clone()
    };
    train(&cfg, hyper, rng)
}

/// Greedy action of `q_net` for every state index of a small environment.
pub fn greedy_policy(q_net: &Mlp, env_cfg: &EnvConfig, states: usize) -> Result<Vec<usize>> {
    (0..states)
        .map(|x| {
            let s = SystemState::from_index(x, env_cfg.candidates, env_cfg.snr_levels);
            Ok(argmax(&q_net.forward(&encode_observation(&s, env_cfg.snr_levels))?))
        })
        .collect()
}
