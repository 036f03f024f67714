//! The virtual side of the line twin. A [`Core`] subscribes to the gateway,
//! mirrors every tag into Things built from shapes and templates, turns
//! value edges into events, estimates where each pallet is between RFID
//! reads, follows missions through the device's handshake and keeps a KPI
//! history from the exported ledger. [`api`] serves all of it over HTTP.

pub mod api;
mod core;
pub mod estimator;
pub mod kpi;
pub mod line;
pub mod metrics;
pub mod mission;
pub mod model;

pub use crate::core::{
    ApiRequest, ApiResponse, Core, CoreConfig, Replication, StreamEvent, DEFAULT_MISSION_TIMEOUT_MS,
};
pub use estimator::{Basis, Estimator, LineGeometry, PalletEstimate};
pub use kpi::{KpiHistory, KpiLedger, KpiReport, LedgerTag};
pub use metrics::{Histogram, MessageCounts, SyncMetrics};
pub use mission::{MissionRecord, MissionState};
pub use model::{BatchResult, Edge, ModelError, Thing, ThingEvent, ThingModel, ThingShape, ThingTemplate};
