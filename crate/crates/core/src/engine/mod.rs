//! The K-round experiment loop, repeats across seeds, and the results schema.

mod config;
pub mod presets;
mod results;
mod sim;

pub use config::{DatasetConfig, ExperimentConfig, PartitionConfig};
pub use results::{
    threshold_check, AggregateReport, AggregateRound, ClientRoundRecord, NotionSummary, RoundRecord,
    RoundShapleyRecord, RunMeta, RunResult, Stat, Summary, ThresholdVerdicts, Verdict, WallClock,
    SCHEMA_VERSION,
};
pub use sim::{run_experiment, run_seed, ClientSeeding, ExperimentOutput, RunOptions, Simulation};

/// Stage tags of the random streams; a stream is addressed by
/// `[stage, round, client]` prefixes so no stream depends on execution order.
pub mod stream {
    pub const DATA: u64 = 1;
    pub const PARTITION: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SELECT: u64 = 4;
    pub const TRAIN: u64 = 5;
    pub const PERSONAL: u64 = 6;
}
