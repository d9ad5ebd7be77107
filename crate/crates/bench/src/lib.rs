//! Fixtures shared by the benchmarks.

use qnet_pdes::runner::RunConfig;

/// A short linear run small enough to repeat many times.
pub fn linear_run(routers: u32, workers: usize, end_ms: f64) -> RunConfig {
    let mut cfg = RunConfig::linear(routers);
    cfg.end_time_ms = end_ms;
    cfg.seed = 1;
    cfg.flows.lanes = Some(10);
    cfg.workers = workers;
    cfg
}
