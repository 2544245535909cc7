//! The user-selection MDP: per-candidate (SNR level, cache bit) states,
//! bitmask actions, and the per-user rate reward.
//!
//! Each slot draws one `u64` from the caller's generator and derives three
//! independent ChaCha streams from it: state dynamics, channel matrices, and
//! alignment initialisation. The state trajectory and the channel draws
//! therefore do not depend on which action was taken.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cache::CacheStateVector;
use crate::error::{invalid, Error, Result};
use crate::fsmc::{sample_channel_matrices, ChannelRealization, SnrLevelSet, TransitionMatrix};
use crate::ia::{effective_gain, solve_ia, IaConfig, IaSolution};

/// Largest candidate count for which actions are enumerated.
pub const MAX_ENUMERABLE_CANDIDATES: usize = 20;

const STREAM_DYNAMICS: u64 = 0;
const STREAM_CHANNELS: u64 = 1;
const STREAM_ALIGNMENT: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    /// `L`.
    pub candidates: usize,
    /// `H`.
    pub snr_levels: usize,
    pub p_stay: f64,
    pub p_hit: f64,
    /// Total backhaul capacity, bits/s/Hz.
    pub c_total: f64,
    /// CSI-exchange capacity reserved per active user, bits/s/Hz.
    pub c_csi: f64,
    pub n_t: usize,
    pub n_r: usize,
    pub noise_var: f64,
    /// Slots per episode, `T`.
    pub slots: usize,
    pub ia: IaConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            candidates: 5,
            snr_levels: 10,
            p_stay: 0.489,
            p_hit: 0.5,
            c_total: 60.0,
            c_csi: 2.0,
            n_t: 3,
            n_r: 3,
            noise_var: 1.0,
            slots: 50,
            ia: IaConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidates == 0 || self.candidates > MAX_ENUMERABLE_CANDIDATES {
            return Err(invalid(format!(
                "candidate count must lie in 1..={MAX_ENUMERABLE_CANDIDATES}, got {}",
                self.candidates
            )));
        }
        if self.snr_levels < 2 {
            return Err(invalid("need at least 2 SNR levels"));
        }
        if !(self.p_stay > 0.0 && self.p_stay <= 1.0) {
            return Err(invalid(format!("p_stay must lie in (0, 1], got {}", self.p_stay)));
        }
        if !(0.0..=1.0).contains(&self.p_hit) {
            return Err(invalid(format!("p_hit must lie in [0, 1], got {}", self.p_hit)));
        }
        if !(self.c_total >= 0.0) || !(self.c_csi >= 0.0) {
            return Err(invalid("backhaul capacities must be non-negative"));
        }
        if self.n_t == 0 || self.n_r == 0 {
            return Err(invalid("antenna counts must be at least 1"));
        }
        if !(self.noise_var > 0.0) {
            return Err(invalid("noise variance must be positive"));
        }
        if self.slots == 0 {
            return Err(invalid("an episode needs at least one slot"));
        }
        self.ia.validate()?;
        if self.ia.streams != 1 {
            return Err(invalid("the rate reward is defined for single-stream users (d = 1)"));
        }
        Ok(())
    }

    pub fn actions(&self) -> usize {
        1 << self.candidates
    }

    pub fn observation_len(&self) -> usize {
        self.candidates * (self.snr_levels + 1)
    }
}

/// Per-candidate SNR level and cache bit at slot `slot`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SystemState {
    pub levels: Vec<usize>,
    pub cache: CacheStateVector,
    pub slot: usize,
}

impl SystemState {
    pub fn candidates(&self) -> usize {
        self.levels.len()
    }

    /// Mixed-radix index in `[0, (2H)^L)`, candidate 0 least significant.
    /// The slot counter is not part of the index.
    pub fn index(&self, snr_levels: usize) -> usize {
        let radix = 2 * snr_levels;
        self.levels
            .iter()
            .zip(self.cache.bits())
            .rev()
            .fold(0, |acc, (&lvl, &hit)| acc * radix + 2 * lvl + usize::from(hit))
    }

    pub fn from_index(mut index: usize, candidates: usize, snr_levels: usize) -> Self {
        let radix = 2 * snr_levels;
        let mut levels = Vec::with_capacity(candidates);
        let mut bits = Vec::with_capacity(candidates);
        for _ in 0..candidates {
            let digit = index % radix;
            index /= radix;
            levels.push(digit / 2);
            bits.push(digit % 2 == 1);
        }
        Self {
            levels,
            cache: CacheStateVector::new(bits),
            slot: 0,
        }
    }
}

/// Active/passive decision for every candidate. Bit `i` of the index is
/// candidate `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SystemAction {
    mask: u32,
    candidates: usize,
}

impl SystemAction {
    pub fn from_index(index: usize, candidates: usize) -> Result<Self> {
        if candidates > MAX_ENUMERABLE_CANDIDATES || index >= 1 << candidates {
            return Err(invalid(format!(
                "action index {index} out of range for {candidates} candidates"
            )));
        }
        Ok(Self {
            mask: index as u32,
            candidates,
        })
    }

    pub fn from_bits(bits: &[bool]) -> Result<Self> {
        let index = bits
            .iter()
            .enumerate()
            .fold(0usize, |acc, (i, &b)| acc | (usize::from(b) << i));
        Self::from_index(index, bits.len())
    }

    pub fn index(&self) -> usize {
        self.mask as usize
    }

    pub fn candidates(&self) -> usize {
        self.candidates
    }

    pub fn is_active(&self, candidate: usize) -> bool {
        self.mask >> candidate & 1 == 1
    }

    pub fn n_active(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn bits(&self) -> Vec<bool> {
        (0..self.candidates).map(|i| self.is_active(i)).collect()
    }

    pub fn active_set(&self) -> Vec<usize> {
        (0..self.candidates).filter(|&i| self.is_active(i)).collect()
    }
}

/// All `2^L` actions in index order.
pub fn enumerate_actions(candidates: usize) -> Result<Vec<SystemAction>> {
    if candidates == 0 || candidates > MAX_ENUMERABLE_CANDIDATES {
        return Err(Error::TooLarge(format!(
            "cannot enumerate actions for {candidates} candidates"
        )));
    }
    (0..1usize << candidates)
        .map(|i| SystemAction::from_index(i, candidates))
        .collect()
}

/// Backhaul left for content per active user once CSI exchange is paid for,
/// clamped at zero.
pub fn backhaul_share(n_active: usize, c_total: f64, c_csi: f64) -> Result<f64> {
    if n_active == 0 {
        return Err(invalid("backhaul share is undefined with no active users"));
    }
    let n = n_active as f64;
    Ok(((c_total - c_csi * n) / n).max(0.0))
}

/// One-hot SNR level followed by the cache bit, per candidate.
pub fn encode_observation(state: &SystemState, snr_levels: usize) -> Vec<f64> {
    let mut obs = vec![0.0; state.candidates() * (snr_levels + 1)];
    for (i, (&lvl, &hit)) in state.levels.iter().zip(state.cache.bits()).enumerate() {
        let base = i * (snr_levels + 1);
        obs[base + lvl] = 1.0;
        obs[base + snr_levels] = if hit { 1.0 } else { 0.0 };
    }
    obs
}

/// Inverse of [`encode_observation`]; the slot counter comes back as 0.
pub fn decode_observation(obs: &[f64], snr_levels: usize) -> Result<SystemState> {
    let block = snr_levels + 1;
    if obs.is_empty() || obs.len() % block != 0 {
        return Err(Error::DimensionMismatch(format!(
            "observation of length {} is not a multiple of {block}",
            obs.len()
        )));
    }
    let mut levels = Vec::new();
    let mut bits = Vec::new();
    for chunk in obs.chunks(block) {
        let hot: Vec<usize> = (0..snr_levels).filter(|&i| chunk[i] == 1.0).collect();
        if hot.len() != 1 {
            return Err(invalid("SNR block is not one-hot"));
        }
        levels.push(hot[0]);
        bits.push(chunk[snr_levels] == 1.0);
    }
    Ok(SystemState {
        levels,
        cache: CacheStateVector::new(bits),
        slot: 0,
    })
}

/// `Σ_t discount^t r_t`.
pub fn episode_return(rewards: &[f64], discount: f64) -> f64 {
    let mut weight = 1.0;
    let mut total = 0.0;
    for r in rewards {
        total += weight * r;
        weight *= discount;
    }
    total
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub next_state: SystemState,
    pub reward: f64,
    pub per_user_rewards: Vec<f64>,
    pub leakage: f64,
    pub n_active: usize,
}

/// Random streams derived from one per-slot seed.
pub struct SlotStreams {
    pub dynamics: ChaCha8Rng,
    pub channels: ChaCha8Rng,
    pub alignment: ChaCha8Rng,
}

impl SlotStreams {
    pub fn from_seed(seed: u64) -> Self {
        let stream = |id| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id);
            rng
        };
        Self {
            dynamics: stream(STREAM_DYNAMICS),
            channels: stream(STREAM_CHANNELS),
            alignment: stream(STREAM_ALIGNMENT),
        }
    }
}

/// Channel, cache and alignment models composed into one MDP.
#[derive(Debug, Clone)]
pub struct Environment {
    cfg: EnvConfig,
    kernel: TransitionMatrix,
    level_set: SnrLevelSet,
    stationary: Option<Vec<f64>>,
}

impl Environment {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let kernel = TransitionMatrix::build(cfg.p_stay, cfg.snr_levels)?;
        let level_set = SnrLevelSet::uniform(cfg.snr_levels, 5.0, 5.0)?;
        let stationary = match kernel.stationary_distribution() {
            Ok(pi) => Some(pi),
            Err(Error::ReducibleChain) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            cfg,
            kernel,
            level_set,
            stationary,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn kernel(&self) -> &TransitionMatrix {
        &self.kernel
    }

    pub fn level_set(&self) -> &SnrLevelSet {
        &self.level_set
    }

    /// Stationary level distribution, `None` when the chain is reducible.
    pub fn stationary(&self) -> Option<&[f64]> {
        self.stationary.as_deref()
    }

    /// Transmit power `P^{[l]}` for a candidate at `level`.
    pub fn power(&self, level: usize) -> f64 {
        self.level_set.snr_to_linear(level) * self.cfg.noise_var
    }

    /// Initial state with levels from the stationary distribution.
    ///
    /// Fails with [`Error::ReducibleChain`] when `p_stay = 1`; use
    /// [`Environment::reset_uniform`] there.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SystemState> {
        let pi = self.stationary.as_ref().ok_or(Error::ReducibleChain)?;
        let mut s = SlotStreams::from_seed(rng.random()).dynamics;
        let levels = (0..self.cfg.candidates)
            .map(|_| sample_categorical(pi, s.random()))
            .collect();
        self.initial_state(levels, &mut s)
    }

    /// Initial state with uniformly drawn levels.
    pub fn reset_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SystemState> {
        let mut s = SlotStreams::from_seed(rng.random()).dynamics;
        let levels = (0..self.cfg.candidates)
            .map(|_| s.random_range(0..self.cfg.snr_levels))
            .collect();
        self.initial_state(levels, &mut s)
    }

    /// [`Environment::reset`], falling back to uniform levels for a
    /// reducible chain.
    pub fn start_episode<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SystemState> {
        if self.stationary.is_some() {
            self.reset(rng)
        } else {
            self.reset_uniform(rng)
        }
    }

    fn initial_state(&self, levels: Vec<usize>, rng: &mut ChaCha8Rng) -> Result<SystemState> {
        Ok(SystemState {
            levels,
            cache: CacheStateVector::sample(self.cfg.p_hit, self.cfg.candidates, rng)?,
            slot: 0,
        })
    }

    /// Channel matrices for a slot seed.
    pub fn draw_channels(&self, streams: &mut SlotStreams, slot: usize) -> Result<ChannelRealization> {
        sample_channel_matrices(
            self.cfg.candidates,
            self.cfg.n_t,
            self.cfg.n_r,
            slot,
            &mut streams.channels,
        )
    }

    /// Runs alignment for the action's active set, `None` if nobody is active.
    pub fn align(
        &self,
        channels: &ChannelRealization,
        action: SystemAction,
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<IaSolution>> {
        let active = action.active_set();
        if active.is_empty() {
            return Ok(None);
        }
        solve_ia(channels, &active, &self.cfg.ia, rng).map(Some)
    }

    /// Per-candidate rewards for one slot.
    ///
    /// An active candidate's rate is
    /// `log2(1 + |u_l† H^{[ll]} v_l|² P_l / (Σ_{j≠l active} |u_l† H^{[lj]} v_j|² P_j + σ²))`;
    /// a cache hit earns the full rate, a miss at most its backhaul share.
    pub fn slot_rewards(
        &self,
        state: &SystemState,
        action: SystemAction,
        channels: &ChannelRealization,
        solution: Option<&IaSolution>,
    ) -> Result<Vec<f64>> {
        let l = self.cfg.candidates;
        if state.candidates() != l || action.candidates() != l {
            return Err(Error::DimensionMismatch(format!(
                "state/action sized for {}/{} candidates, environment has {l}",
                state.candidates(),
                action.candidates()
            )));
        }
        let mut rewards = vec![0.0; l];
        let n_active = action.n_active();
        if n_active == 0 {
            return Ok(rewards);
        }
        let sol = solution.ok_or_else(|| invalid("active candidates need an IA solution"))?;
        let share = backhaul_share(n_active, self.cfg.c_total, self.cfg.c_csi)?;
        for (pos, &user) in sol.active_set.iter().enumerate() {
            let u = &sol.combiners[pos];
            let signal =
                effective_gain(u, channels.link(user, user), &sol.precoders[pos]) * self.power(state.levels[user]);
            let interference: f64 = sol
                .active_set
                .iter()
                .enumerate()
                .filter(|&(_, &j)| j != user)
                .map(|(jp, &j)| {
                    effective_gain(u, channels.link(user, j), &sol.precoders[jp]) * self.power(state.levels[j])
                })
                .sum();
            let rate = (1.0 + signal / (interference + self.cfg.noise_var)).log2();
            rewards[user] = if state.cache.hit(user) { rate } else { share.min(rate) };
        }
        Ok(rewards)
    }

    /// Evolves every candidate's level through the FSMC and redraws the cache.
    pub fn advance(&self, state: &SystemState, rng: &mut ChaCha8Rng) -> Result<SystemState> {
        let levels = state
            .levels
            .iter()
            .map(|&lvl| self.kernel.step(lvl, rng))
            .collect();
        Ok(SystemState {
            levels,
            cache: CacheStateVector::sample(self.cfg.p_hit, self.cfg.candidates, rng)?,
            slot: state.slot + 1,
        })
    }

    /// One decision epoch: reward under `state`, then the transition.
    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &SystemState,
        action: SystemAction,
        rng: &mut R,
    ) -> Result<StepOutcome> {
        let mut streams = SlotStreams::from_seed(rng.random());
        let channels = self.draw_channels(&mut streams, state.slot)?;
        let solution = self.align(&channels, action, &mut streams.alignment)?;
        let per_user_rewards = self.slot_rewards(state, action, &channels, solution.as_ref())?;
        let next_state = self.advance(state, &mut streams.dynamics)?;
        Ok(StepOutcome {
            next_state,
            reward: per_user_rewards.iter().sum(),
            per_user_rewards,
            leakage: solution.as_ref().map_or(0.0, |s| s.leakage),
            n_active: action.n_active(),
        })
    }
}

fn sample_categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> EnvConfig {
        EnvConfig {
            candidates: 3,
            snr_levels: 4,
            ..EnvConfig::default()
        }
    }

    #[test]
    fn backhaul_share_arithmetic() {
        assert_eq!(backhaul_share(5, 60.0, 2.0).unwrap(), 10.0);
        assert_eq!(backhaul_share(3, 60.0, 0.0).unwrap(), 20.0);
        assert_eq!(backhaul_share(5, 8.0, 2.0).unwrap(), 0.0);
        assert!(backhaul_share(0, 60.0, 2.0).is_err());
    }

    #[test]
    fn action_enumeration() {
        let one = enumerate_actions(1).unwrap();
        assert_eq!(one.iter().map(|a| a.index()).collect::<Vec<_>>(), vec![0, 1]);
        let five = enumerate_actions(5).unwrap();
        assert_eq!(five.len(), 32);
        for a in &five {
            assert_eq!(SystemAction::from_bits(&a.bits()).unwrap(), *a);
        }
        assert!(enumerate_actions(21).is_err());
        let a = SystemAction::from_index(0b10110, 5).unwrap();
        assert_eq!(a.active_set(), vec![1, 2, 4]);
        assert!(SystemAction::from_index(32, 5).is_err());
    }

    #[test]
    fn observation_layout() {
        let s = SystemState {
            levels: vec![0],
            cache: CacheStateVector::new(vec![true]),
            slot: 0,
        };
        assert_eq!(encode_observation(&s, 2), vec![1.0, 0.0, 1.0]);
        let env = Environment::new(EnvConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = env.reset(&mut rng).unwrap();
        let obs = encode_observation(&s, 10);
        assert_eq!(obs.len(), 55);
        assert_eq!(decode_observation(&obs, 10).unwrap(), s);
    }

    #[test]
    fn state_index_round_trip() {
        for idx in 0..(8usize).pow(3) {
            let s = SystemState::from_index(idx, 3, 4);
            assert_eq!(s.index(4), idx);
        }
    }

    #[test]
    fn discounted_returns() {
        assert_eq!(episode_return(&[0.0; 10], 0.5), 0.0);
        let ones = episode_return(&[1.0; 60], 0.5);
        assert!(ones <= 2.0 && (2.0 - ones) < 1e-15);
        let rewards = [3.0, 1.5, 0.0, 2.0, 7.25, 1.0, 4.0, 0.5, 2.5, 9.0];
        // Horner from the back: r0 + ε(r1 + ε(r2 + …))
        let horner = rewards.iter().rev().fold(0.0, |acc, r| r + 0.5 * acc);
        assert!((episode_return(&rewards, 0.5) - horner).abs() < 1e-12);
    }

    #[test]
    fn reset_behaviour() {
        let env = Environment::new(small_cfg()).unwrap();
        let a = env.reset(&mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = env.reset(&mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.slot, 0);

        let hits = Environment::new(EnvConfig {
            p_hit: 1.0,
            ..small_cfg()
        })
        .unwrap();
        assert_eq!(hits.reset(&mut ChaCha8Rng::seed_from_u64(1)).unwrap().cache.hits(), 3);

        let frozen = Environment::new(EnvConfig {
            p_stay: 1.0,
            ..small_cfg()
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(frozen.reset(&mut rng), Err(Error::ReducibleChain)));
        assert!(frozen.start_episode(&mut rng).is_ok());
    }

    #[test]
    fn all_passive_earns_nothing_but_advances() {
        let env = Environment::new(small_cfg()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = env.reset(&mut rng).unwrap();
        let out = env.step(&s, SystemAction::from_index(0, 3).unwrap(), &mut rng).unwrap();
        assert_eq!(out.reward, 0.0);
        assert_eq!(out.n_active, 0);
        assert_eq!(out.next_state.slot, 1);
    }

    #[test]
    fn reward_is_sum_and_passive_users_earn_zero() {
        let env = Environment::new(EnvConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut s = env.reset(&mut rng).unwrap();
        for idx in [1, 5, 13, 30, 31] {
            let a = SystemAction::from_index(idx, 5).unwrap();
            let out = env.step(&s, a, &mut rng).unwrap();
            assert!((out.reward - out.per_user_rewards.iter().sum::<f64>()).abs() < 1e-9);
            for l in 0..5 {
                if !a.is_active(l) {
                    assert_eq!(out.per_user_rewards[l], 0.0);
                }
            }
            s = out.next_state;
        }
    }

    #[test]
    fn trajectory_independent_of_action() {
        let env = Environment::new(EnvConfig::default()).unwrap();
        let s0 = env.reset(&mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let (mut a, mut b) = (s0.clone(), s0);
        for _ in 0..20 {
            a = env.step(&a, SystemAction::from_index(31, 5).unwrap(), &mut r1).unwrap().next_state;
            b = env.step(&b, SystemAction::from_index(2, 5).unwrap(), &mut r2).unwrap().next_state;
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rejects_multi_stream_reward() {
        let cfg = EnvConfig {
            ia: IaConfig {
                streams: 2,
                ..IaConfig::default()
            },
            ..EnvConfig::default()
        };
        assert!(Environment::new(cfg).is_err());
    }
}
