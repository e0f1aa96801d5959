//! Files, configuration and the `fel` command-line tool around `fel-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod jsonl;
pub mod tsv;
pub mod vocab_file;

pub use checkpoint::{checkpoint_config, load_checkpoint, save_checkpoint, CheckpointError};
pub use config::RunConfig;
