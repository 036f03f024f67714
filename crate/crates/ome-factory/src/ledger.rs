use std::collections::BTreeMap;

/// Accumulated material, energy and waste flows. Every entry only grows.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlowLedger {
    /// Microjoules per device.
    pub energy_uj: BTreeMap<String, u64>,
    /// Parts consumed per station (1-based).
    pub material_units: BTreeMap<usize, u64>,
    /// Scrapped parts per station (1-based).
    pub waste_units: BTreeMap<usize, u64>,
}

impl FlowLedger {
    pub fn total_energy_uj(&self) -> u64 {
        self.energy_uj.values().sum()
    }

    /// Entry-wise `self - earlier`. Panics if `earlier` is not a prefix state
    /// of `self`.
    pub fn since(&self, earlier: &FlowLedger) -> FlowLedger {
        fn diff<K: Ord + Clone>(a: &BTreeMap<K, u64>, b: &BTreeMap<K, u64>) -> BTreeMap<K, u64> {
            a.iter()
                .map(|(k, v)| {
                    let before = b.get(k).copied().unwrap_or(0);
                    (k.clone(), v.checked_sub(before).expect("ledger went backwards"))
                })
                .collect()
        }
        FlowLedger {
            energy_uj: diff(&self.energy_uj, &earlier.energy_uj),
            material_units: diff(&self.material_units, &earlier.material_units),
            waste_units: diff(&self.waste_units, &earlier.waste_units),
        }
    }

    /// True if no entry is smaller than in `earlier`.
    pub fn dominates(&self, earlier: &FlowLedger) -> bool {
        fn ge<K: Ord>(a: &BTreeMap<K, u64>, b: &BTreeMap<K, u64>) -> bool {
            b.iter().all(|(k, v)| a.get(k).copied().unwrap_or(0) >= *v)
        }
        ge(&self.energy_uj, &earlier.energy_uj)
            && ge(&self.material_units, &earlier.material_units)
            && ge(&self.waste_units, &earlier.waste_units)
    }
}
