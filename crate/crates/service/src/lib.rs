//! HTTP facade over labeling sessions.
//!
//! Datasets live under `<data_dir>/datasets`, sessions under
//! `<data_dir>/sessions/<id>.jsonl` as append-only event logs that are
//! replayed on startup.

pub mod api;
pub mod config;
pub mod error;
pub mod events;
pub mod store;

pub use api::{router, serve, AppState, ExportBundle, SessionSummary};
pub use config::ServiceConfig;
pub use error::{Result, ServiceError};
