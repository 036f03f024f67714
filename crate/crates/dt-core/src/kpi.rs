//! KPI history built from the ledger tags the device exports. One snapshot
//! per tick that changed any of them; a window report is the difference of
//! the snapshots in force at its two ends.

use std::collections::BTreeMap;

use ome_factory::FlowLedger;
use serde::Serialize;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct KpiLedger {
    pub energy_uj: BTreeMap<String, u64>,
    pub material: BTreeMap<usize, u64>,
    pub waste: BTreeMap<usize, u64>,
}

impl KpiLedger {
    pub fn since(&self, earlier: &KpiLedger) -> KpiLedger {
        fn diff<K: Ord + Clone>(a: &BTreeMap<K, u64>, b: &BTreeMap<K, u64>) -> BTreeMap<K, u64> {
            a.iter()
                .map(|(k, v)| (k.clone(), v.saturating_sub(b.get(k).copied().unwrap_or(0))))
                .collect()
        }
        KpiLedger {
            energy_uj: diff(&self.energy_uj, &earlier.energy_uj),
            material: diff(&self.material, &earlier.material),
            waste: diff(&self.waste, &earlier.waste),
        }
    }

    pub fn total_energy_uj(&self) -> u64 {
        self.energy_uj.values().sum()
    }
}

impl From<&FlowLedger> for KpiLedger {
    fn from(l: &FlowLedger) -> Self {
        KpiLedger {
            energy_uj: l.energy_uj.clone(),
            material: l.material_units.clone(),
            waste: l.waste_units.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KpiReport {
    /// Window `(from, to]` in ticks.
    pub from: u64,
    pub to: u64,
    pub energy_uj: BTreeMap<String, u64>,
    pub energy_total_uj: u64,
    pub material: BTreeMap<usize, u64>,
    pub waste: BTreeMap<usize, u64>,
    /// False when either end falls inside a span the twin never saw, such
    /// as a link outage. The figures then use the last ledger before it.
    pub complete: bool,
}

#[derive(Debug, Clone, Default)]
pub struct KpiHistory {
    current: KpiLedger,
    snapshots: Vec<(u64, KpiLedger)>,
    /// Open intervals `(last seen, first seen again)` with no data.
    gaps: Vec<(u64, u64)>,
}

/// Which ledger entry a north tag feeds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LedgerTag {
    Energy(String),
    Material(usize),
    Waste(usize),
}

impl LedgerTag {
    pub fn parse(north: &str) -> Option<LedgerTag> {
        let tag = north.strip_prefix("DT/SYS.")?;
        if let Some(d) = tag.strip_prefix("ENERGY.") {
            return Some(LedgerTag::Energy(d.to_string()));
        }
        let station = |s: &str| s.strip_prefix("ST").and_then(|k| k.parse().ok());
        if let Some(k) = tag.strip_prefix("MATERIAL.").and_then(station) {
            return Some(LedgerTag::Material(k));
        }
        tag.strip_prefix("WASTE.").and_then(station).map(LedgerTag::Waste)
    }
}

impl KpiHistory {
    pub fn set(&mut self, tag: &LedgerTag, value: u64) -> bool {
        let slot = match tag {
            LedgerTag::Energy(d) => self.current.energy_uj.entry(d.clone()).or_default(),
            LedgerTag::Material(k) => self.current.material.entry(*k).or_default(),
            LedgerTag::Waste(k) => self.current.waste.entry(*k).or_default(),
        };
        let changed = *slot != value;
        *slot = value;
        changed
    }

    /// Records the current ledger as of `tick`.
    pub fn snapshot(&mut self, tick: u64) {
        match self.snapshots.last_mut() {
            Some((t, l)) if *t == tick => *l = self.current.clone(),
            Some((t, _)) if *t > tick => {}
            _ => self.snapshots.push((tick, self.current.clone())),
        }
    }

    pub fn current(&self) -> &KpiLedger {
        &self.current
    }

    pub fn latest_tick(&self) -> Option<u64> {
        self.snapshots.last().map(|(t, _)| *t)
    }

    /// The ledger in force at `tick`: the last snapshot not after it.
    pub fn ledger_at(&self, tick: u64) -> KpiLedger {
        let i = self.snapshots.partition_point(|(t, _)| *t <= tick);
        match i {
            0 => KpiLedger::default(),
            _ => self.snapshots[i - 1].1.clone(),
        }
    }

    /// Records that nothing is known strictly between `last` and `next`.
    pub fn mark_gap(&mut self, last: u64, next: u64) {
        if next > last + 1 {
            self.gaps.push((last, next));
        }
    }

    pub fn gaps(&self) -> &[(u64, u64)] {
        &self.gaps
    }

    /// Whether the ledger at `tick` was observed rather than carried over.
    pub fn known_at(&self, tick: u64) -> bool {
        !self.gaps.iter().any(|&(a, b)| a < tick && tick < b)
    }

    pub fn report(&self, from: u64, to: u64) -> KpiReport {
        let (from, to) = (from.min(to), to.max(from));
        let d = self.ledger_at(to).since(&self.ledger_at(from));
        KpiReport {
            from,
            to,
            complete: self.known_at(from) && self.known_at(to),
            energy_total_uj: d.total_energy_uj(),
            energy_uj: d.energy_uj,
            material: d.material,
            waste: d.waste,
        }
    }
}
