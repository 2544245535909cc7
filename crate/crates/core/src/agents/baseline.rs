//! Myopic user selection that ignores caching and assumes the channel it
//! measured stays put.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cache::CacheStateVector;
use crate::env::{enumerate_actions, Environment, SlotStreams, SystemAction, SystemState};
use crate::error::{invalid, Result};
use crate::fsmc::ChannelRealization;
use crate::ia::IaSolution;
use crate::nn::argmax;

pub const DEFAULT_FROZEN_SAMPLES: usize = 16;

/// A fixed bank of channel realizations with the alignment for every action
/// solved up front.
#[derive(Debug, Clone)]
pub struct FrozenChannels {
    draws: Vec<(ChannelRealization, Vec<Option<IaSolution>>)>,
}

impl FrozenChannels {
    pub fn new(env: &Environment, samples: usize, seed: u64) -> Result<Self> {
        if samples == 0 {
            return Err(invalid("frozen channel bank needs at least one realization"));
        }
        let actions = enumerate_actions(env.config().candidates)?;
        let mut seeder = ChaCha8Rng::seed_from_u64(seed);
        let draws = (0..samples)
            .map(|_| {
                let mut streams = SlotStreams::from_seed(seeder.random());
                let channels = env.draw_channels(&mut streams, 0)?;
                let solutions = actions
                    .iter()
                    .map(|&a| env.align(&channels, a, &mut streams.alignment.clone()))
                    .collect::<Result<Vec<_>>>()?;
                Ok((channels, solutions))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { draws })
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
}

/// Mean all-miss sum rate of every action on the frozen bank, in action
/// index order.
pub fn myopic_scores(state: &SystemState, env: &Environment, frozen: &FrozenChannels) -> Result<Vec<f64>> {
    let l = env.config().candidates;
    let missed = SystemState {
        cache: CacheStateVector::all_miss(l),
        ..state.clone()
    };
    let actions = enumerate_actions(l)?;
    let mut scores = vec![0.0; actions.len()];
    for (channels, solutions) in &frozen.draws {
        for (a, sol) in actions.iter().zip(solutions) {
            let r: f64 = env.slot_rewards(&missed, *a, channels, sol.as_ref())?.iter().sum();
            scores[a.index()] += r;
        }
    }
    let k = frozen.len() as f64;
    scores.iter_mut().for_each(|s| *s /= k);
    Ok(scores)
}

/// Action maximising the all-miss sum rate on the frozen bank, lowest index
/// on ties.
pub fn baseline_myopic_static(state: &SystemState, env: &Environment, frozen: &FrozenChannels) -> Result<SystemAction> {
    let scores = myopic_scores(state, env, frozen)?;
    SystemAction::from_index(argmax(&scores), env.config().candidates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvConfig;

    fn env(candidates: usize, c_total: f64) -> Environment {
        Environment::new(EnvConfig {
            candidates,
            snr_levels: 3,
            c_total,
            c_csi: 1.0,
            ..EnvConfig::default()
        })
        .unwrap()
    }

    fn state(levels: Vec<usize>) -> SystemState {
        let l = levels.len();
        SystemState {
            levels,
            cache: CacheStateVector::new(vec![true; l]),
            slot: 0,
        }
    }

    #[test]
    fn single_candidate_activates_iff_share_positive() {
        for (c_total, active) in [(5.0, true), (1.0, false), (0.5, false)] {
            let e = env(1, c_total);
            let frozen = FrozenChannels::new(&e, 4, 0).unwrap();
            let a = baseline_myopic_static(&state(vec![2]), &e, &frozen).unwrap();
            assert_eq!(a.is_active(0), active, "c_total {c_total}");
        }
    }

    #[test]
    fn matches_brute_force_on_three_candidates() {
        let e = env(3, 9.0);
        let frozen = FrozenChannels::new(&e, 3, 7).unwrap();
        let s = state(vec![0, 2, 1]);
        let chosen = baseline_myopic_static(&s, &e, &frozen).unwrap();

        // independent enumeration straight from the stored draws
        let missed = SystemState {
            cache: CacheStateVector::all_miss(3),
            ..s.clone()
        };
        let mut best = (f64::NEG_INFINITY, 0);
        for idx in 0..8 {
            let a = SystemAction::from_index(idx, 3).unwrap();
            let mut total = 0.0;
            for (ch, sols) in &frozen.draws {
                total += e.slot_rewards(&missed, a, ch, sols[idx].as_ref()).unwrap().iter().sum::<f64>();
            }
            if total > best.0 {
                best = (total, idx);
            }
        }
        assert_eq!(chosen.index(), best.1);
    }

    #[test]
    fn ignores_cache_bits_and_is_deterministic() {
        let e = env(3, 9.0);
        let frozen = FrozenChannels::new(&e, 3, 7).unwrap();
        let hit = state(vec![1, 1, 2]);
        let miss = SystemState {
            cache: CacheStateVector::all_miss(3),
            ..hit.clone()
        };
        let a = baseline_myopic_static(&hit, &e, &frozen).unwrap();
        assert_eq!(a, baseline_myopic_static(&miss, &e, &frozen).unwrap());
        let again = FrozenChannels::new(&e, 3, 7).unwrap();
        assert_eq!(a, baseline_myopic_static(&hit, &e, &again).unwrap());
    }

    #[test]
    fn empty_bank_rejected() {
        assert!(FrozenChannels::new(&env(2, 6.0), 0, 0).is_err());
    }
}
