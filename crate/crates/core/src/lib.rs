pub mod event;
pub mod models;
pub mod partition;
pub mod qsm;
pub mod qsm_server;
pub mod quantum;
pub mod rng;
pub mod runner;
pub mod sync;
pub mod topology;
pub mod time;
