use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ia_cache_rl::harness::experiments::{thread_count, CHECKPOINT_FILE, CONVERGENCE_FILE, SWEEP_FILE};
use ia_cache_rl::harness::{load_config, run_oracle_check, run_sweep, run_train, ExperimentConfig};

/// Cache-aware user selection for MIMO interference alignment networks.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and write its learning curve and checkpoint.
    Train(Common),
    /// Average sum rate of every scheme across the p_stay sweep.
    Sweep(Common),
    /// Compare tabular and deep agents against value iteration on a small
    /// instance; exits nonzero on failure.
    OracleCheck {
        #[command(flatten)]
        common: Common,
        /// Train the tabular agent with this discount instead (fault injection).
        #[arg(long, value_name = "F64")]
        tabular_discount: Option<f64>,
    },
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines; missing keys take defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Run 5000 episodes.
    #[arg(long)]
    full: bool,
}

impl Common {
    fn resolve(&self, base: ExperimentConfig) -> ia_cache_rl::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path)?,
            None => base,
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if self.full {
            cfg.dqn.episodes = 5000;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> ia_cache_rl::Result<bool> {
    match cli.command {
        Command::Train(common) => {
            let cfg = common.resolve(ExperimentConfig::default())?;
            let res = run_train(&cfg)?;
            println!(
                "trained {} episodes ({} updates); average sum rate {:.4}",
                res.outcome.curve.len(),
                res.outcome.updates,
                res.avg_sum_rate
            );
            println!(
                "wrote {} and {}",
                cfg.out_dir.join(CONVERGENCE_FILE).display(),
                cfg.out_dir.join(CHECKPOINT_FILE).display()
            );
            Ok(true)
        }
        Command::Sweep(common) => {
            let cfg = common.resolve(ExperimentConfig::default())?;
            let records = run_sweep(&cfg, thread_count())?;
            for r in &records {
                println!("p_stay {:<6} {:<14} replica {} avg {:.4}", r.p_stay, r.scheme, r.replica, r.avg_sum_rate);
            }
            println!("wrote {}", cfg.out_dir.join(SWEEP_FILE).display());
            Ok(true)
        }
        Command::OracleCheck { common, tabular_discount } => {
            let cfg = common.resolve(ExperimentConfig::small_instance())?;
            let report = run_oracle_check(&cfg, tabular_discount)?;
            let text = report.render()?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            std::fs::write(cfg.out_dir.join("oracle_check.txt"), &text)?;
            print!("{text}");
            Ok(report.passed)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
