use std::collections::BTreeMap;

use ome_factory::{points, PointValue};
use tag_protocol::{Quality, TagType, TagValue};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TagError {
    #[error("unknown tag `{0}`")]
    Unknown(String),
    #[error("tag `{0}` has a different type")]
    TypeMismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagEntry {
    pub value: TagValue,
    pub quality: Quality,
    pub tick: u64,
}

pub fn operator_mat(station: usize) -> String {
    format!("SYS.OPERATOR_MAT_{station}")
}

/// Latest mission at station `k`: `<id>:<status>:<request>`, e.g.
/// `4:Executing:PassDockingStation;4;Twin`. Empty before the first mission.
pub fn mission_status_tag(station: usize) -> String {
    format!("SYS.MISSION_{station}")
}

pub fn energy_tag(device: &str) -> String {
    format!("SYS.ENERGY.{device}")
}

pub fn material_tag(station: usize) -> String {
    format!("SYS.MATERIAL.ST{station}")
}

pub fn waste_tag(station: usize) -> String {
    format!("SYS.WASTE.ST{station}")
}

pub const CFG_STATIONS: &str = "SYS.CFG.STATIONS";
pub const CFG_SPEED: &str = "SYS.CFG.SPEED";
pub const CFG_TICK_MS: &str = "SYS.CFG.TICK_MS";
pub const CFG_PALLET_LEN: &str = "SYS.CFG.PALLET_LEN";
pub const CFG_PALLET_GAP: &str = "SYS.CFG.PALLET_GAP";
pub const CFG_AMR_DWELL_MS: &str = "SYS.CFG.AMR_DWELL_MS";
/// Comma-separated segment lengths in mm.
pub const CFG_LAYOUT: &str = "SYS.CFG.LAYOUT";
/// Comma-separated pallet RFIDs.
pub const CFG_PALLETS: &str = "SYS.CFG.PALLETS";

/// The PLC's I/O image: a fixed, ordered set of named points whose types
/// never change after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TagTable {
    entries: BTreeMap<String, TagEntry>,
}

impl TagTable {
    /// Every sensor and actuator point of a line with `station_count`
    /// stations, plus one operator mat per station. Actuators start in the
    /// safe state: stops and the queue stop engaged, elevators down.
    pub fn for_line(station_count: usize) -> Self {
        let mut entries = BTreeMap::new();
        let mut add = |name: String, value: TagValue| {
            entries.insert(
                name,
                TagEntry {
                    value,
                    quality: Quality::Good,
                    tick: 0,
                },
            );
        };
        add(points::QUEUE_SENSOR.into(), TagValue::Bool(false));
        add(points::QUEUE_STOP.into(), TagValue::Bool(true));
        for k in 1..=station_count {
            add(points::pallet_a(k), TagValue::Bool(false));
            add(points::pallet_b(k), TagValue::Bool(false));
            add(points::elev_a(k), TagValue::Bool(true));
            add(points::elev_b(k), TagValue::Bool(false));
            add(points::rfid(k), TagValue::Str(String::new()));
            add(points::stop(k), TagValue::Bool(true));
            add(points::elev_cmd(k), TagValue::Bool(false));
            add(operator_mat(k), TagValue::Bool(false));
        }
        Self { entries }
    }

    pub fn get(&self, name: &str) -> Option<&TagEntry> {
        self.entries.get(name)
    }

    pub fn bool(&self, name: &str) -> Option<bool> {
        self.entries.get(name).and_then(|e| e.value.as_bool())
    }

    pub fn is_stale(&self, name: &str) -> bool {
        self.entries
            .get(name)
            .is_some_and(|e| e.quality == Quality::Stale)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &TagEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sets a value. Returns whether value or quality changed.
    pub fn set(&mut self, name: &str, value: TagValue, quality: Quality, tick: u64) -> Result<bool, TagError> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| TagError::Unknown(name.to_string()))?;
        if e.value.tag_type() != value.tag_type() {
            return Err(TagError::TypeMismatch(name.to_string()));
        }
        let changed = !e.value.bit_eq(&value) || e.quality != quality;
        e.value = value;
        e.quality = quality;
        e.tick = tick;
        Ok(changed)
    }

    pub fn set_quality(&mut self, name: &str, quality: Quality) -> Result<(), TagError> {
        let e = self
            .entries
            .get_mut(name)
            .ok_or_else(|| TagError::Unknown(name.to_string()))?;
        e.quality = quality;
        Ok(())
    }

    pub fn tag_type(&self, name: &str) -> Option<TagType> {
        self.entries.get(name).map(|e| e.value.tag_type())
    }
}

pub fn point_to_tag(v: &PointValue) -> TagValue {
    match v {
        PointValue::Bool(b) => TagValue::Bool(*b),
        PointValue::Text(s) => TagValue::Str(s.clone()),
    }
}
