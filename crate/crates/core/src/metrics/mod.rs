//! Trace analytics and synthetic benchmarks.

pub mod bench;
pub mod behavior;
pub mod tasks;

pub use bench::{benchmark, run_instance, trace_kl_bound, BenchReport, BenchRow, InstanceResult};
pub use behavior::{behavior_stats, BehaviorStats};
pub use tasks::{SyntheticTask, TaskInstance, TaskKind};
