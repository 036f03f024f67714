//! Observable manufacturing elements of the drone line: a closed conveyor
//! loop with docking stations, an AMR/buffer leg and a queue stop, advanced
//! in fixed ticks.
//!
//! The simulation is a plain value. [`FactoryState::tick`] and
//! [`FactoryState::actuate`] are the only ways it changes, and two states
//! built from the same config and fed the same actuation schedule stay
//! identical tick for tick.

mod config;
mod error;
mod factory;
mod geometry;
mod ledger;
pub mod points;
mod trace;

pub use config::{EnergyModel, FactoryConfig, PowerDraw};
pub use error::FactoryError;
pub use factory::{
    build_factory, DockingStation, ElevatorPosition, FactoryState, Pallet, PalletState,
    PointValue, QueueStop, SensorEvent,
};
pub use geometry::Layout;
pub use ledger::FlowLedger;
pub use trace::{read_event_trace, write_event_trace};
