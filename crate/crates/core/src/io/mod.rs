//! JSON configuration, `MVFW` weight files and report documents.

pub mod config;
pub mod report;
pub mod weights;

pub use config::{ConfigDocument, NetworkSection};
pub use weights::{WeightEntry, WeightFile};
