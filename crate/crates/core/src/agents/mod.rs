//! Learning agents, exact references and comparison baselines.

pub mod baseline;
pub mod dqn;
pub mod oracle;
pub mod replay;
pub mod tabular;

pub use baseline::{baseline_myopic_static, FrozenChannels};
pub use dqn::{baseline_no_cache_train, select_action, td_targets, train, DqnAgent, DqnHyperparams, GreedySchedule};
pub use oracle::{value_iteration_oracle, FiniteMdp, OracleSolution};
pub use replay::{Experience, ReplayMemory};
pub use tabular::{tabular_q_update, TabularQ};
