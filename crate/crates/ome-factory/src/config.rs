//! Line configuration and its `key = value` file format.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::error::FactoryError;

/// Idle and active draw of one device class, in milliwatts.
///
/// Milliwatts times milliseconds gives microjoules, so the ledger stays in
/// exact integer units.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PowerDraw {
    pub idle_mw: u64,
    pub active_mw: u64,
}

impl PowerDraw {
    pub const fn new(idle_mw: u64, active_mw: u64) -> Self {
        Self { idle_mw, active_mw }
    }

    pub fn draw(&self, active: bool) -> u64 {
        if active {
            self.active_mw
        } else {
            self.idle_mw
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnergyModel {
    pub conveyor: PowerDraw,
    pub stop: PowerDraw,
    pub elevator: PowerDraw,
    pub queue_stop: PowerDraw,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self {
            conveyor: PowerDraw::new(40_000, 120_000),
            stop: PowerDraw::new(500, 6_000),
            elevator: PowerDraw::new(1_000, 150_000),
            queue_stop: PowerDraw::new(500, 6_000),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactoryConfig {
    pub station_count: usize,
    /// `station_count + 1` segments: segment `k` ends at docking stop `k + 1`,
    /// the last one is the AMR/buffer return leg ending at the queue stop.
    pub segment_lengths: Vec<u32>,
    /// Millimetres per simulated second.
    pub conveyor_speed: u32,
    /// Simulated milliseconds per tick.
    pub tick_duration: u32,
    pub pallet_count: usize,
    pub pallet_length: u32,
    /// Minimum free space kept between a pallet and the one ahead of it.
    pub pallet_gap: u32,
    /// Dwell at the AMR/buffer before a pallet may enter the queue stop.
    pub amr_dwell_ms: u32,
    pub queue_capacity: u32,
    pub parts_per_pass: u32,
    pub scrap_probability: f64,
    pub energy_model: EnergyModel,
    pub rng_seed: u64,
}

impl Default for FactoryConfig {
    fn default() -> Self {
        Self {
            station_count: 6,
            segment_lengths: vec![1200, 1000, 1000, 1000, 1000, 1000, 1800],
            conveyor_speed: 100,
            tick_duration: 50,
            pallet_count: 3,
            pallet_length: 200,
            pallet_gap: 50,
            amr_dwell_ms: 1000,
            queue_capacity: 2,
            parts_per_pass: 1,
            scrap_probability: 0.05,
            energy_model: EnergyModel::default(),
            rng_seed: 42,
        }
    }
}

impl FactoryConfig {
    /// Distance a moving pallet covers in one tick.
    pub fn step_mm(&self) -> u32 {
        self.conveyor_speed * self.tick_duration / 1000
    }

    pub fn dwell_ticks(&self) -> u32 {
        self.amr_dwell_ms / self.tick_duration.max(1)
    }

    pub fn total_length(&self) -> u64 {
        self.segment_lengths.iter().map(|&l| u64::from(l)).sum()
    }

    /// Builds a layout with `station_count` stations and uniform segment length.
    pub fn uniform(station_count: usize, segment_length: u32) -> Self {
        Self {
            station_count,
            segment_lengths: vec![segment_length; station_count + 1],
            ..Self::default()
        }
    }

    /// Returns the names of every violated invariant, or `Ok` if none.
    pub fn validate(&self) -> Result<(), FactoryError> {
        let mut violated = Vec::new();
        if self.station_count == 0 {
            violated.push("station_count >= 1".to_string());
        }
        if self.segment_lengths.len() != self.station_count + 1 {
            violated.push("segment_lengths has station_count + 1 entries".to_string());
        }
        if self.segment_lengths.contains(&0) {
            violated.push("segment_lengths > 0".to_string());
        }
        if self.conveyor_speed == 0 {
            violated.push("conveyor_speed > 0".to_string());
        }
        if self.tick_duration == 0 {
            violated.push("tick_duration > 0".to_string());
        }
        if self.conveyor_speed > 0
            && self.tick_duration > 0
            && (u64::from(self.conveyor_speed) * u64::from(self.tick_duration)) % 1000 != 0
        {
            violated.push("conveyor_speed * tick_duration is a whole number of mm".to_string());
        }
        if self.pallet_length == 0 {
            violated.push("pallet_length > 0".to_string());
        }
        let step = u64::from(self.conveyor_speed) * u64::from(self.tick_duration) / 1000;
        // A released pallet must clear the stop before the next one reaches it.
        if self.tick_duration > 0 && u64::from(self.pallet_gap) <= 2 * step {
            violated.push("pallet_gap > 2 * per-tick travel".to_string());
        }
        if self.tick_duration > 0 && !self.amr_dwell_ms.is_multiple_of(self.tick_duration) {
            violated.push("amr_dwell is a multiple of tick_duration".to_string());
        }
        if self.segment_lengths.len() == self.station_count + 1 && self.station_count > 0 {
            let pitch = u64::from(self.pallet_length) + u64::from(self.pallet_gap);
            if self.pallet_count as u64 * pitch > self.total_length() {
                violated.push("pallets fit on the loop".to_string());
            }
            let min_segment = self.segment_lengths.iter().copied().min().unwrap_or(0);
            if u64::from(min_segment) < pitch {
                violated.push("every segment holds one pallet".to_string());
            }
        }
        if self.pallet_count > 40 {
            violated.push("pallet_count <= 40".to_string());
        }
        if self.queue_capacity == 0 {
            violated.push("queue_capacity >= 1".to_string());
        }
        if !(0.0..=1.0).contains(&self.scrap_probability) {
            violated.push("scrap_probability in [0, 1]".to_string());
        }
        if violated.is_empty() {
            Ok(())
        } else {
            Err(FactoryError::InvalidConfig(violated))
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, FactoryError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| FactoryError::Io(format!("{}: {e}", path.display())))?;
        text.parse()
    }

    /// Applies one `key = value` pair on top of the current values.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("invalid number `{v}`"))
        }
        fn draw(v: &str) -> Result<PowerDraw, String> {
            let (idle, active) = v
                .split_once(',')
                .ok_or_else(|| format!("expected `idle,active` watts, got `{v}`"))?;
            Ok(PowerDraw::new(watts_to_mw(idle)?, watts_to_mw(active)?))
        }
        match key {
            "station_count" => self.station_count = num(value)?,
            "segment_lengths" => {
                self.segment_lengths = value
                    .split(',')
                    .map(|s| num(s.trim()))
                    .collect::<Result<_, _>>()?
            }
            "segment_length" => {
                let len: u32 = num(value)?;
                self.segment_lengths = vec![len; self.station_count + 1];
            }
            "conveyor_speed" => self.conveyor_speed = num(value)?,
            "tick_duration" => self.tick_duration = num(value)?,
            "pallet_count" => self.pallet_count = num(value)?,
            "pallet_length" => self.pallet_length = num(value)?,
            "pallet_gap" => self.pallet_gap = num(value)?,
            "amr_dwell" => self.amr_dwell_ms = num(value)?,
            "queue_capacity" => self.queue_capacity = num(value)?,
            "parts_per_pass" => self.parts_per_pass = num(value)?,
            "scrap_probability" => self.scrap_probability = num(value)?,
            "rng_seed" => self.rng_seed = num(value)?,
            "energy.conveyor" => self.energy_model.conveyor = draw(value)?,
            "energy.stop" => self.energy_model.stop = draw(value)?,
            "energy.elevator" => self.energy_model.elevator = draw(value)?,
            "energy.queue_stop" => self.energy_model.queue_stop = draw(value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }
}

fn watts_to_mw(v: &str) -> Result<u64, String> {
    let w: f64 = v
        .trim()
        .parse()
        .map_err(|_| format!("invalid wattage `{v}`"))?;
    if !w.is_finite() || w < 0.0 {
        return Err(format!("invalid wattage `{v}`"));
    }
    Ok((w * 1000.0).round() as u64)
}

fn mw_to_watts(mw: u64) -> String {
    let s = format!("{}.{:03}", mw / 1000, mw % 1000);
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Parses `key = value` lines. Blank lines and `#` comments are ignored.
/// Unknown keys and malformed lines are errors naming the line number.
/// `station_count` is applied first so `segment_length` shorthand sees it.
impl std::str::FromStr for FactoryConfig {
    type Err = FactoryError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| FactoryError::Parse {
                line: idx + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            entries.push((idx + 1, key.trim().to_string(), value.trim().to_string()));
        }
        let mut config = FactoryConfig::default();
        entries.sort_by_key(|(_, k, _)| k != "station_count");
        for (line, key, value) in entries {
            config
                .set(&key, &value)
                .map_err(|message| FactoryError::Parse { line, message })?;
        }
        config.validate()?;
        Ok(config)
    }
}

impl fmt::Display for FactoryConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lens: Vec<String> = self.segment_lengths.iter().map(u32::to_string).collect();
        let mut pairs: BTreeMap<&str, String> = BTreeMap::new();
        pairs.insert("station_count", self.station_count.to_string());
        pairs.insert("segment_lengths", lens.join(","));
        pairs.insert("conveyor_speed", self.conveyor_speed.to_string());
        pairs.insert("tick_duration", self.tick_duration.to_string());
        pairs.insert("pallet_count", self.pallet_count.to_string());
        pairs.insert("pallet_length", self.pallet_length.to_string());
        pairs.insert("pallet_gap", self.pallet_gap.to_string());
        pairs.insert("amr_dwell", self.amr_dwell_ms.to_string());
        pairs.insert("queue_capacity", self.queue_capacity.to_string());
        pairs.insert("parts_per_pass", self.parts_per_pass.to_string());
        pairs.insert("scrap_probability", self.scrap_probability.to_string());
        pairs.insert("rng_seed", self.rng_seed.to_string());
        let e = &self.energy_model;
        for (key, d) in [
            ("energy.conveyor", e.conveyor),
            ("energy.stop", e.stop),
            ("energy.elevator", e.elevator),
            ("energy.queue_stop", e.queue_stop),
        ] {
            pairs.insert(key, format!("{},{}", mw_to_watts(d.idle_mw), mw_to_watts(d.active_mw)));
        }
        for (k, v) in pairs {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}
