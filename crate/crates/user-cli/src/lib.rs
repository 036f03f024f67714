//! Scenario harness for the line twin: boots device, gateway and twin in
//! one process on a simulated clock, drives them from `.scn` files, injects
//! link faults, and writes replayable traces.

pub mod client;
pub mod link;
pub mod net;
pub mod run;
pub mod scenario;
pub mod stack;
pub mod trace;

pub use link::{FaultKind, FaultSpec, LinkDir, LinkId, Links};
pub use run::{replay, run_scenario, RunOptions, RunOutcome};
pub use scenario::{Action, Expect, ParseError, Scenario, Scheduled};
pub use stack::{Handle, MissionOutcome, Stack, StackConfig};
pub use trace::Verdict;

/// Scenarios shipped with the binary, by name.
pub const BUNDLED: [(&str, &str); 6] = [
    ("pass_docking", include_str!("../scenarios/pass_docking.scn")),
    ("interlock", include_str!("../scenarios/interlock.scn")),
    ("elevator", include_str!("../scenarios/elevator.scn")),
    ("latency", include_str!("../scenarios/latency.scn")),
    ("sever", include_str!("../scenarios/sever.scn")),
    ("full_line", include_str!("../scenarios/full_line.scn")),
];

pub fn bundled(name: &str) -> Option<Scenario> {
    let name = name.trim_end_matches(".scn");
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| text.parse().expect("bundled scenarios parse"))
}
