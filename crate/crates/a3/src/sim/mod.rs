//! Kinematic rollout harness: scenarios, execution strategies, episode
//! simulation, suite aggregation, and the statistics used to analyze them.
//!
//! The environment is a point in `d` dimensions driven by incremental
//! actions. The policy's sampled noise is the actuation error: executing an
//! action applies its deltas exactly, so a chunk's deviation from the
//! nominal plan physically happens and compounds until the next replan snaps
//! the plan to a fresh (noisily observed) state. Phase regions and
//! observation corruption inflate the policy's sampling noise, degrading its
//! self-consistency exactly where precision is needed.

mod config;
mod episode;
mod scenario;
pub mod stats;
mod suite;

pub use config::SuiteConfig;
pub use episode::{run_episode, DecisionStat, EpisodeRecord};
pub use scenario::{PolicySpec, Region, RouteSpec, Scenario, Strategy, StrategySpec};
pub use suite::{grid_search_fixed, run_suite, sweep_fixed, CellResult, FixedSweepRow, SuiteResult};
