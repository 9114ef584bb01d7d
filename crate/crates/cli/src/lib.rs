//! Batch command-line front end for stackcast: run configuration, the
//! on-disk run layout, and the `ingest`, `backtest`, `fit`,
//! `fit-multilayer` and `report` commands.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod store;

pub use commands::{cmd_backtest, cmd_fit, cmd_fit_multilayer, cmd_ingest, cmd_report, IngestSummary};
pub use config::{representatives, Method, RunConfig};
pub use store::StoreLayout;
