//! Files, configuration and the end-to-end scan and training pipeline on top of
//! [`crossflow_core`].

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod graphfile;
pub mod hexfile;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod synth;

mod codec;

pub use config::{Detector, Label, PipelineConfig};
pub use error::Error;
pub use manifest::{ingest, ProtocolManifestEntry};
pub use pipeline::{scan, train_detector};
pub use report::{emit_report, ReportFormat, ScanReport};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
