//! Line-oriented `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! errors; missing keys keep their defaults. Lists are comma separated.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::agents::baseline::DEFAULT_FROZEN_SAMPLES;
use crate::agents::DqnHyperparams;
use crate::env::EnvConfig;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    WithCache,
    NoCache,
    MyopicStatic,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::WithCache, Scheme::NoCache, Scheme::MyopicStatic];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::WithCache => "with-cache",
            Scheme::NoCache => "no-cache",
            Scheme::MyopicStatic => "myopic-static",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown scheme `{s}` (expected with-cache, no-cache or myopic-static)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub dqn: DqnHyperparams,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Scheme trained by `train`.
    pub scheme: Scheme,
    pub sweep_p_stay: Vec<f64>,
    pub sweep_schemes: Vec<Scheme>,
    pub replicas: usize,
    /// Channel draws the static baseline averages over.
    pub frozen_samples: usize,
    pub oracle_mc_samples: usize,
    pub tabular_steps: usize,
    /// Training episodes for the deep agent in the oracle check.
    pub oracle_episodes: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            dqn: DqnHyperparams::default(),
            seed: 1,
            out_dir: PathBuf::from("out"),
            scheme: Scheme::WithCache,
            sweep_p_stay: vec![0.3, 0.489, 0.7, 0.9, 1.0],
            sweep_schemes: Scheme::ALL.to_vec(),
            replicas: 3,
            frozen_samples: DEFAULT_FROZEN_SAMPLES,
            oracle_mc_samples: 4000,
            tabular_steps: 500_000,
            oracle_episodes: 300,
        }
    }
}

impl ExperimentConfig {
    /// Two candidates, three levels and a backhaul tight enough that the
    /// selection problem is not trivial.
    pub fn small_instance() -> Self {
        let mut cfg = Self::default();
        cfg.env.candidates = 2;
        cfg.env.snr_levels = 3;
        cfg.env.c_total = 6.0;
        cfg.env.c_csi = 1.0;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.dqn.validate()?;
        if let Some(p) = self.sweep_p_stay.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return Err(invalid(format!("sweep p_stay values must lie in (0, 1], got {p}")));
        }
        if self.replicas == 0 {
            return Err(invalid("replicas must be at least 1"));
        }
        if self.frozen_samples == 0 {
            return Err(invalid("frozen_samples must be at least 1"));
        }
        Ok(())
    }

    /// Text that [`parse_config`] reads back to an equal config.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let _ = writeln!(s, "{} = {}", key, self.get(key));
        }
        s
    }

    fn get(&self, key: &str) -> String {
        let e = &self.env;
        let d = &self.dqn;
        match key {
            "L" => e.candidates.to_string(),
            "H" => e.snr_levels.to_string(),
            "p_stay" => e.p_stay.to_string(),
            "p_hit" => e.p_hit.to_string(),
            "C_total" => e.c_total.to_string(),
            "C_c" => e.c_csi.to_string(),
            "N_t" => e.n_t.to_string(),
            "N_r" => e.n_r.to_string(),
            "noise_var" => e.noise_var.to_string(),
            "T" => e.slots.to_string(),
            "d" => e.ia.streams.to_string(),
            "ia_max_iter" => e.ia.max_iter.to_string(),
            "ia_tol" => e.ia.tol.to_string(),
            "discount" => d.discount.to_string(),
            "greedy_start" => d.greedy.start.to_string(),
            "greedy_end" => d.greedy.end.to_string(),
            "greedy_anneal_steps" => d.greedy.anneal_steps.map_or("auto".into(), |n| n.to_string()),
            "batch_size" => d.batch_size.to_string(),
            "target_sync" => d.target_sync.to_string(),
            "learning_rate" => d.learning_rate.to_string(),
            "warmup" => d.warmup.to_string(),
            "replay_capacity" => d.replay_capacity.to_string(),
            "episodes" => d.episodes.to_string(),
            "hidden" => join(&d.hidden),
            "seed" => self.seed.to_string(),
            "out" => self.out_dir.display().to_string(),
            "scheme" => self.scheme.to_string(),
            "sweep_p_stay" => join(&self.sweep_p_stay),
            "sweep_schemes" => join(&self.sweep_schemes),
            "replicas" => self.replicas.to_string(),
            "frozen_samples" => self.frozen_samples.to_string(),
            "oracle_mc_samples" => self.oracle_mc_samples.to_string(),
            "tabular_steps" => self.tabular_steps.to_string(),
            "oracle_episodes" => self.oracle_episodes.to_string(),
            _ => unreachable!("key table and accessor out of sync: {key}"),
        }
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let e = &mut self.env;
        let d = &mut self.dqn;
        match key {
            "L" => e.candidates = scalar(value)?,
            "H" => e.snr_levels = scalar(value)?,
            "p_stay" => e.p_stay = scalar(value)?,
            "p_hit" => e.p_hit = scalar(value)?,
            "C_total" => e.c_total = scalar(value)?,
            "C_c" => e.c_csi = scalar(value)?,
            "N_t" => e.n_t = scalar(value)?,
            "N_r" => e.n_r = scalar(value)?,
            "noise_var" => e.noise_var = scalar(value)?,
            "T" => e.slots = scalar(value)?,
            "d" => e.ia.streams = scalar(value)?,
            "ia_max_iter" => e.ia.max_iter = scalar(value)?,
            "ia_tol" => e.ia.tol = scalar(value)?,
            "discount" => d.discount = scalar(value)?,
            "greedy_start" => d.greedy.start = scalar(value)?,
            "greedy_end" => d.greedy.end = scalar(value)?,
            "greedy_anneal_steps" => {
                d.greedy.anneal_steps = if value == "auto" { None } else { Some(scalar(value)?) }
            }
            "batch_size" => d.batch_size = scalar(value)?,
            "target_sync" => d.target_sync = scalar(value)?,
            "learning_rate" => d.learning_rate = scalar(value)?,
            "warmup" => d.warmup = scalar(value)?,
            "replay_capacity" => d.replay_capacity = scalar(value)?,
            "episodes" => d.episodes = scalar(value)?,
            "hidden" => d.hidden = list(value)?,
            "seed" => self.seed = scalar(value)?,
            "out" => self.out_dir = PathBuf::from(value),
            "scheme" => self.scheme = value.parse()?,
            "sweep_p_stay" => self.sweep_p_stay = list(value)?,
            "sweep_schemes" => self.sweep_schemes = list(value)?,
            "replicas" => self.replicas = scalar(value)?,
            "frozen_samples" => self.frozen_samples = scalar(value)?,
            "oracle_mc_samples" => self.oracle_mc_samples = scalar(value)?,
            "tabular_steps" => self.tabular_steps = scalar(value)?,
            "oracle_episodes" => self.oracle_episodes = scalar(value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }
}

const KEYS: [&str; 34] = [
    "L",
    "H",
    "p_stay",
    "p_hit",
    "C_total",
    "C_c",
    "N_t",
    "N_r",
    "noise_var",
    "T",
    "d",
    "ia_max_iter",
    "ia_tol",
    "discount",
    "greedy_start",
    "greedy_end",
    "greedy_anneal_steps",
    "batch_size",
    "target_sync",
    "learning_rate",
    "warmup",
    "replay_capacity",
    "episodes",
    "hidden",
    "seed",
    "out",
    "scheme",
    "sweep_p_stay",
    "sweep_schemes",
    "replicas",
    "frozen_samples",
    "oracle_mc_samples",
    "tabular_steps",
    "oracle_episodes",
];

fn scalar<T: FromStr>(value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("cannot parse `{value}` as {}", std::any::type_name::<T>()))
}

fn list<T: FromStr>(value: &str) -> std::result::Result<Vec<T>, String> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|item| {
            let item = item.trim();
            item.parse()
                .map_err(|_| format!("cannot parse list item `{item}` as {}", std::any::type_name::<T>()))
        })
        .collect()
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

/// Parses config text; `path` only labels diagnostics.
pub fn parse_config(text: &str, path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let err = |line: usize, msg: String| Error::Config {
        path: path.to_path_buf(),
        line,
        msg,
    };
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(i + 1, format!("expected `key = value`, found `{line}`")))?;
        let key = key.trim();
        cfg.set(key, value.trim()).map_err(|m| err(i + 1, format!("{key}: {m}")))?;
    }
    cfg.validate().map_err(|e| err(0, e.to_string()))?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
        path: path.to_path_buf(),
        line: 0,
        msg: format!("cannot read: {e}"),
    })?;
    parse_config(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        parse_config(text, Path::new("test.cfg"))
    }

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = parse("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.env.candidates, 5);
        assert_eq!(cfg.env.snr_levels, 10);
        assert_eq!(cfg.env.p_stay, 0.489);
        assert_eq!(cfg.dqn.discount, 0.5);
        assert_eq!(cfg.dqn.target_sync, 4);
        assert_eq!(cfg.dqn.replay_capacity, 100_000);
    }

    #[test]
    fn type_error_names_line_and_key() {
        let e = parse("# comment\n\nL = banana\n").unwrap_err();
        match &e {
            Error::Config { line, msg, .. } => {
                assert_eq!(*line, 3);
                assert!(msg.contains('L'), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(e.to_string().starts_with("test.cfg:3:"));
    }

    #[test]
    fn unknown_key_and_malformed_line() {
        assert!(matches!(parse("bogus = 1"), Err(Error::Config { line: 1, .. })));
        assert!(matches!(parse("H = 4\nno equals sign"), Err(Error::Config { line: 2, .. })));
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(parse("sweep_p_stay = 0.5, 1.5").is_err());
        assert!(parse("replicas = 0").is_err());
        assert!(parse("discount = 1").is_err());
        assert!(parse("scheme = greedy").is_err());
    }

    #[test]
    fn round_trip() {
        let text = "L = 3\nH = 4\np_stay = 0.7\nlearning_rate = 1e-4\nhidden = 64, 32\n\
                    greedy_anneal_steps = 1234\nsweep_p_stay = 0.3, 1\nsweep_schemes = no-cache\nout = /tmp/x y\n";
        let cfg = parse(text).unwrap();
        assert_eq!(cfg.env.candidates, 3);
        assert_eq!(cfg.dqn.hidden, vec![64, 32]);
        assert_eq!(cfg.sweep_schemes, vec![Scheme::NoCache]);
        assert_eq!(cfg.out_dir, PathBuf::from("/tmp/x y"));
        let again = parse(&cfg.serialize()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(parse(&ExperimentConfig::default().serialize()).unwrap(), ExperimentConfig::default());
    }
}
