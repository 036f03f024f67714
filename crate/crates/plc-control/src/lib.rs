//! Soft PLC for the drone line.
//!
//! [`scan_cycle`] is the controller: a pure function from the input image
//! and logic state to actuator outputs and the next state. [`Plc`] queues
//! commands between scans, and [`DeviceNode`] binds a simulated factory, the
//! PLC and a tag server into one device that advances a tick at a time.

mod logic;
mod mission;
mod node;
mod plc;
mod tags;

pub use logic::{scan_cycle, Command, Decision, LogicState, QueueLogic, ScanOutput};
pub use mission::{
    Direction, Mission, MissionKind, MissionRequest, MissionStatus, Origin, RejectReason,
};
pub use node::{config_tags, Actuation, DeviceNode, StepReport, MISSION_REQ};
pub use plc::{Plc, PlcError, ScanRecord};
pub use tags::{
    energy_tag, material_tag, mission_status_tag, operator_mat, point_to_tag, waste_tag, TagEntry,
    TagError, TagTable, CFG_AMR_DWELL_MS, CFG_LAYOUT, CFG_PALLETS, CFG_PALLET_GAP, CFG_PALLET_LEN,
    CFG_SPEED, CFG_STATIONS, CFG_TICK_MS,
};
