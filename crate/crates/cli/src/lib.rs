pub mod audio_thread;
pub mod control_server;
pub mod ingest;
pub mod modes;
pub mod runtime;
pub mod sim;

pub use modes::{read_log, run_live, run_render, run_replay};
pub use runtime::{AudioOutput, RunOptions, RunSummary, Runtime};
