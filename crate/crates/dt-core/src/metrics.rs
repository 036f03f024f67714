use std::collections::BTreeMap;

use serde::Serialize;

/// Upper bucket bounds in milliseconds (or millimetres for divergence).
pub const BUCKETS: [u64; 12] = [0, 10, 25, 50, 100, 250, 500, 1000, 1300, 2000, 5000, 10_000];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Histogram {
    pub bounds: Vec<u64>,
    /// `counts[i]` counts samples `<= bounds[i]` and above the previous bound;
    /// the last entry counts everything above the top bound.
    pub counts: Vec<u64>,
    pub count: u64,
    pub sum: u64,
    pub min: Option<u64>,
    pub max: Option<u64>,
}

impl Default for Histogram {
    fn default() -> Self {
        Self {
            bounds: BUCKETS.to_vec(),
            counts: vec![0; BUCKETS.len() + 1],
            count: 0,
            sum: 0,
            min: None,
            max: None,
        }
    }
}

impl Histogram {
    pub fn record(&mut self, v: u64) {
        let i = self.bounds.partition_point(|&b| b < v);
        self.counts[i] += 1;
        self.count += 1;
        self.sum += v;
        self.min = Some(self.min.map_or(v, |m| m.min(v)));
        self.max = Some(self.max.map_or(v, |m| m.max(v)));
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum as f64 / self.count as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MessageCounts {
    pub frames_in: u64,
    pub frames_out: u64,
    pub publishes: u64,
    pub tag_updates: u64,
    pub unknown_tags: u64,
    pub events_fired: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SyncMetrics {
    /// Receipt time minus source time of each PUBLISH.
    pub telemetry_latency_ms: Histogram,
    /// Mission request to replication on the twin.
    pub mission_rtt_ms: Histogram,
    pub divergence_mm: Histogram,
    /// Most recent divergence sample per pallet.
    pub last_divergence_mm: BTreeMap<String, u64>,
    pub counts: MessageCounts,
}
