//! Standard shapes and templates for the drone line, and the things that
//! mirror it: one `line` thing, one `station-k` per docking station and one
//! `energy-<device>` per metered device.

use std::collections::BTreeMap;

use ome_factory::points;
use plc_control::{energy_tag, material_tag, mission_status_tag, operator_mat, waste_tag, MISSION_REQ};
use plc_control::{
    CFG_AMR_DWELL_MS, CFG_LAYOUT, CFG_PALLETS, CFG_PALLET_GAP, CFG_PALLET_LEN, CFG_SPEED, CFG_STATIONS,
    CFG_TICK_MS,
};
use tag_protocol::TagType::{Bool, Float, Int, Str};

use crate::model::{Edge, ModelError, ThingModel, ThingShape, ThingTemplate};

pub const LINE_THING: &str = "line";

pub fn north(tag: &str) -> String {
    format!("DT/{tag}")
}

pub fn station_thing(k: usize) -> String {
    format!("station-{k}")
}

pub fn energy_thing(device: &str) -> String {
    format!("energy-{device}")
}

/// Metered devices, in the factory's naming.
pub fn devices(station_count: usize) -> Vec<String> {
    let mut d = vec![points::CONVEYOR.to_string(), points::QUEUE_STOP_DEVICE.to_string()];
    for k in 1..=station_count {
        d.push(points::stop_device(k));
        d.push(points::elevator_device(k));
    }
    d
}

/// Every north tag the standard things bind, plus the mission request tag.
pub fn north_tags(station_count: usize) -> Vec<String> {
    let mut tags: Vec<String> = bindings(station_count)
        .into_values()
        .flat_map(|(_, b)| b.into_values())
        .collect();
    tags.push(north(MISSION_REQ));
    tags.sort();
    tags
}

fn shapes() -> Vec<ThingShape> {
    vec![
        ThingShape::new("PalletDetection")
            .property("PalletA", Bool, false)
            .property("PalletB", Bool, false)
            .property("Rfid", Str, false)
            .event("PalletArrived", Some(("PalletA", Edge::Rising)), &["Rfid"])
            .event("PalletDeparted", Some(("PalletA", Edge::Falling)), &[])
            .event("PalletApproaching", Some(("PalletB", Edge::Rising)), &[]),
        ThingShape::new("DockingStop")
            .property("Stop", Bool, false)
            .event("StopReleased", Some(("Stop", Edge::Falling)), &[])
            .event("StopEngaged", Some(("Stop", Edge::Rising)), &[]),
        ThingShape::new("Elevator")
            .property("ElevatorDown", Bool, false)
            .property("ElevatorUp", Bool, false)
            .property("ElevatorCmd", Bool, false)
            .event("ElevatorRaised", Some(("ElevatorUp", Edge::Rising)), &[])
            .event("ElevatorLowered", Some(("ElevatorDown", Edge::Rising)), &[]),
        ThingShape::new("Interlock")
            .property("OperatorMat", Bool, false)
            .event("OperatorPresent", Some(("OperatorMat", Edge::Rising)), &[])
            .event("OperatorLeft", Some(("OperatorMat", Edge::Falling)), &[])
            .service("SetInterlock", &[("on", Bool)], None),
        ThingShape::new("MissionHost")
            .property("Mission", Str, false)
            .service("PassDockingStation", &[("origin", Str)], Some(Int))
            .service("ElevatorTransfer", &[("direction", Str), ("origin", Str)], Some(Int)),
        ThingShape::new("FlowMeter")
            .property("Material", Int, false)
            .property("Waste", Int, false),
        ThingShape::new("EnergyMeter").property("EnergyUj", Float, false),
        ThingShape::new("QueueControl")
            .property("QueueSensor", Bool, false)
            .property("QueueStop", Bool, false)
            .event("PalletQueued", Some(("QueueSensor", Edge::Rising)), &[])
            .event("QueueReleased", Some(("QueueStop", Edge::Falling)), &[]),
        ThingShape::new("LineConfig")
            .property("Stations", Int, false)
            .property("Speed", Int, false)
            .property("TickMs", Int, false)
            .property("PalletLength", Int, false)
            .property("PalletGap", Int, false)
            .property("AmrDwellMs", Int, false)
            .property("Layout", Str, false)
            .property("Pallets", Str, false)
            .property("Label", Str, true),
    ]
}

fn templates() -> Vec<ThingTemplate> {
    let t = |name: &str, shapes: &[&str]| ThingTemplate {
        name: name.into(),
        shapes: shapes.iter().map(|s| s.to_string()).collect(),
        own: ThingShape::new(name),
        defaults: BTreeMap::new(),
    };
    vec![
        t(
            "DockingStation",
            &["PalletDetection", "DockingStop", "Elevator", "Interlock", "MissionHost", "FlowMeter"],
        ),
        t("Line", &["QueueControl", "LineConfig"]),
        t("EnergyMeter", &["EnergyMeter"]),
    ]
}

type Bindings = BTreeMap<String, (&'static str, BTreeMap<String, String>)>;

/// Thing id to `(template, property -> north tag)`.
fn bindings(n: usize) -> Bindings {
    let b = |pairs: Vec<(&str, String)>| -> BTreeMap<String, String> {
        pairs.into_iter().map(|(p, t)| (p.to_string(), north(&t))).collect()
    };
    let mut out = Bindings::new();
    out.insert(
        LINE_THING.into(),
        (
            "Line",
            b(vec![
                ("QueueSensor", points::QUEUE_SENSOR.into()),
                ("QueueStop", points::QUEUE_STOP.into()),
                ("Stations", CFG_STATIONS.into()),
                ("Speed", CFG_SPEED.into()),
                ("TickMs", CFG_TICK_MS.into()),
                ("PalletLength", CFG_PALLET_LEN.into()),
                ("PalletGap", CFG_PALLET_GAP.into()),
                ("AmrDwellMs", CFG_AMR_DWELL_MS.into()),
                ("Layout", CFG_LAYOUT.into()),
                ("Pallets", CFG_PALLETS.into()),
            ]),
        ),
    );
    for k in 1..=n {
        out.insert(
            station_thing(k),
            (
                "DockingStation",
                b(vec![
                    ("PalletA", points::pallet_a(k)),
                    ("PalletB", points::pallet_b(k)),
                    ("Rfid", points::rfid(k)),
                    ("Stop", points::stop(k)),
                    ("ElevatorDown", points::elev_a(k)),
                    ("ElevatorUp", points::elev_b(k)),
                    ("ElevatorCmd", points::elev_cmd(k)),
                    ("OperatorMat", operator_mat(k)),
                    ("Mission", mission_status_tag(k)),
                    ("Material", material_tag(k)),
                    ("Waste", waste_tag(k)),
                ]),
            ),
        );
    }
    for d in devices(n) {
        out.insert(energy_thing(&d), ("EnergyMeter", b(vec![("EnergyUj", energy_tag(&d))])));
    }
    out
}

/// Registers the standard shapes and templates and instantiates the line.
pub fn install(model: &mut ThingModel, station_count: usize, mapped: impl Fn(&str) -> bool) -> Result<(), ModelError> {
    for s in shapes() {
        model.register_shape(s)?;
    }
    for t in templates() {
        model.register_template(t)?;
    }
    for (id, (template, b)) in bindings(station_count) {
        model.instantiate(template, &id, b, &mapped)?;
    }
    Ok(())
}
