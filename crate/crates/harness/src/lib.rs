//! Scripted-operator simulation, batch comparisons and report emission.

pub mod episode;
pub mod operator;
pub mod report;

pub use episode::{batch_compare, rows_to_csv, run_episode, BatchRow, Episode, EpisodeConfig, EpisodeMetrics, Mode};
pub use operator::{Operator, OperatorScript};
