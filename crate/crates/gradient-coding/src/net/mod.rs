//! Live master/worker execution over TCP.
//!
//! The master owns a coding strategy, hands each connecting worker its
//! matrix row over the [`protocol`] wire format, then drives rounds: it
//! broadcasts a start, collects coded gradients as they arrive, and
//! decodes the moment the arrived set suffices — late workers' frames are
//! simply discarded. Decoding goes through the very same routines as the
//! simulator, so a live round and a simulated round with the same
//! survivors produce bit-identical gradients.

pub mod master;
pub mod protocol;
pub mod worker;

pub use master::{Master, MasterOptions, RoundReport};
pub use protocol::{read_message, write_message, Message};
pub use worker::{run_worker, WorkerOptions};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
}
