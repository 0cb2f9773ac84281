//! Benchmark harness for distance-based keypoint voting: experiment
//! configuration, the synthetic occlusion study, parameter sweeps, scene
//! archive generation, and voting-stage timing. The `kdf-bench` binary is a
//! thin CLI over this library.

pub mod archive;
pub mod config;
pub mod experiment;
pub mod report;
pub mod timing;

pub use config::{ConfigError, ExperimentConfig, SweepAxis};
pub use experiment::{run_experiment, sweep, SweepResult};
pub use report::{BenchError, Report, SceneRecord};
pub use timing::{time_voting, TimingRecord};
