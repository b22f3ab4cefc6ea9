//! File formats, checkpoint archives, reports and the `soupsr` command line
//! on top of [`soupsr_core`].

pub mod archive;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset_file;
pub mod error;
pub mod report;
pub mod run_manifest;
pub mod stats;
pub mod volume_io;

pub use error::{Error, Result};
pub use soupsr_core as core;

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex(&Sha256::digest(bytes))
}
