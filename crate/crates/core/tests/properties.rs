use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ia_cache_rl::agents::select_action;
use ia_cache_rl::cache::CacheStateVector;
use ia_cache_rl::env::{
    backhaul_share, decode_observation, encode_observation, EnvConfig, Environment, SlotStreams, SystemAction,
    SystemState,
};
use ia_cache_rl::fsmc::{sample_channel_matrices, TransitionMatrix};
use ia_cache_rl::harness::{parse_config, ExperimentConfig};
use ia_cache_rl::ia::{effective_gain, leakage, solve_ia, IaConfig};
use ia_cache_rl::nn::Mlp;

fn small_env(candidates: usize, levels: usize) -> EnvConfig {
    EnvConfig {
        candidates,
        snr_levels: levels,
        c_total: 8.0,
        c_csi: 1.0,
        ..EnvConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transition_rows_stochastic(p in 0.01f64..=1.0, h in 2usize..16) {
        let m = TransitionMatrix::build(p, h).unwrap();
        for i in 0..h {
            let row = m.row(i);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|&q| q >= 0.0));
            prop_assert_eq!(row[i], p);
        }
    }

    #[test]
    fn backhaul_share_never_grows_with_load(c_total in 0.0f64..100.0, c_csi in 0.0f64..10.0, n in 1usize..20) {
        let a = backhaul_share(n, c_total, c_csi).unwrap();
        let b = backhaul_share(n + 1, c_total, c_csi).unwrap();
        prop_assert!(a >= 0.0 && b >= 0.0);
        prop_assert!(b <= a + 1e-12);
    }

    #[test]
    fn state_index_round_trip(l in 1usize..5, h in 2usize..6, seed in any::<u64>()) {
        let states = (2 * h).pow(l as u32);
        let x = (seed % states as u64) as usize;
        let s = SystemState::from_index(x, l, h);
        prop_assert_eq!(s.index(h), x);
        let obs = encode_observation(&s, h);
        prop_assert_eq!(obs.len(), l * (h + 1));
        prop_assert_eq!(decode_observation(&obs, h).unwrap(), s);
    }

    #[test]
    fn cache_never_hurts(seed in any::<u64>(), mask in 1usize..8, levels in proptest::collection::vec(0usize..3, 3)) {
        // same channels, alignment and action; hits only remove the backhaul cap
        let env = Environment::new(small_env(3, 3)).unwrap();
        let action = SystemAction::from_index(mask, 3).unwrap();
        let mut streams = SlotStreams::from_seed(seed);
        let ch = env.draw_channels(&mut streams, 0).unwrap();
        let sol = env.align(&ch, action, &mut streams.alignment).unwrap();
        let hit = SystemState { levels: levels.clone(), cache: CacheStateVector::new(vec![true; 3]), slot: 0 };
        let miss = SystemState { levels, cache: CacheStateVector::all_miss(3), slot: 0 };
        let r_hit = env.slot_rewards(&hit, action, &ch, sol.as_ref()).unwrap();
        let r_miss = env.slot_rewards(&miss, action, &ch, sol.as_ref()).unwrap();
        for (h, m) in r_hit.iter().zip(&r_miss) {
            prop_assert!(m <= h);
            prop_assert!(*m >= 0.0);
        }
    }

    #[test]
    fn trajectory_ignores_action(seed in any::<u64>(), a in 0usize..8, b in 0usize..8) {
        let env = Environment::new(small_env(3, 4)).unwrap();
        let start = env.reset(&mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut ra = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let mut rb = ra.clone();
        let (mut sa, mut sb) = (start.clone(), start);
        for _ in 0..5 {
            sa = env.step(&sa, SystemAction::from_index(a, 3).unwrap(), &mut ra).unwrap().next_state;
            sb = env.step(&sb, SystemAction::from_index(b, 3).unwrap(), &mut rb).unwrap().next_state;
            prop_assert_eq!(&sa, &sb);
        }
    }

    #[test]
    fn effective_gain_ignores_common_phase(seed in any::<u64>(), theta in 0.0f64..std::f64::consts::TAU) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = sample_channel_matrices(3, 3, 3, 0, &mut rng).unwrap();
        let sol = solve_ia(&ch, &[0, 1, 2], &IaConfig::default(), &mut rng).unwrap();
        let mut u = sol.combiners[0].clone();
        let mut v = sol.precoders[1].clone();
        let g0 = effective_gain(&u, ch.link(0, 1), &v);
        u.scale_column(0, num_complex::Complex64::from_polar(1.0, theta));
        v.scale_column(0, num_complex::Complex64::from_polar(1.0, 2.0 * theta + 0.3));
        let g1 = effective_gain(&u, ch.link(0, 1), &v);
        prop_assert!((g0 - g1).abs() <= 1e-10 * g0.max(1.0));
    }

    #[test]
    fn leakage_scales_with_channel_power(seed in any::<u64>(), factor in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = sample_channel_matrices(4, 3, 3, 0, &mut rng).unwrap();
        let cfg = IaConfig { max_iter: 3, ..IaConfig::default() };
        let sol = solve_ia(&ch, &[0, 1, 2, 3], &cfg, &mut rng).unwrap();
        let scaled = leakage(&ch.scaled(factor), &sol);
        let base = leakage(&ch, &sol);
        prop_assert!((scaled - factor * factor * base).abs() <= 1e-9 * (factor * factor * base).max(1e-12));
    }

    #[test]
    fn greedy_choice_survives_constant_shift(seed in any::<u64>(), shift in -100.0f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Mlp::new(&[6, 10, 8], &mut rng).unwrap();
        let x: Vec<f64> = (0..6).map(|i| ((seed >> i) & 1) as f64).collect();
        let before = select_action(&net, &x, 1.0, &mut rng).unwrap();
        net.layers_mut()[1].biases.iter_mut().for_each(|b| *b += shift);
        prop_assert_eq!(select_action(&net, &x, 1.0, &mut rng).unwrap(), before);
    }

    #[test]
    fn checkpoint_round_trip(seed in any::<u64>(), hidden in proptest::collection::vec(1usize..12, 0..3)) {
        let mut widths = vec![5];
        widths.extend(&hidden);
        widths.push(4);
        let net = Mlp::new(&widths, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let bytes = net.to_bytes();
        prop_assert_eq!(&bytes[..6], b"IAQNET");
        prop_assert_eq!(Mlp::from_bytes(&bytes).unwrap(), net);
    }

    #[test]
    fn config_round_trip(l in 1usize..8, h in 2usize..12, p in 0.01f64..=1.0, lr in 1e-6f64..1e-1, eps in 0usize..10_000) {
        let mut cfg = ExperimentConfig::default();
        cfg.env.candidates = l;
        cfg.env.snr_levels = h;
        cfg.env.p_stay = p;
        cfg.dqn.learning_rate = lr;
        cfg.dqn.episodes = eps;
        let text = cfg.serialize();
        let back = parse_config(&text, std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
