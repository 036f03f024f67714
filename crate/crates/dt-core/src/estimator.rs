//! Pallet position estimation. Each pallet is anchored at a known position
//! and time; between anchors it is dead-reckoned at conveyor speed, held by
//! every stop the twin believes engaged, by the queue and its buffer dwell,
//! and by the pallet ahead. RFID reads re-anchor a pallet at the reader.
//!
//! Anchors use source time (the tick a value was observed on the device),
//! not receipt time, so a reading delayed by the link is projected forward
//! by the time it spent in flight.

use std::collections::BTreeMap;

use ome_factory::{FactoryConfig, FactoryState, Layout};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineGeometry {
    pub layout: Layout,
    /// Millimetres per second.
    pub speed: u64,
    pub tick_ms: u64,
    pub pallet_length: u64,
    pub pallet_gap: u64,
    pub dwell_ms: u64,
    pub pallets: Vec<String>,
}

impl LineGeometry {
    pub fn from_config(cfg: &FactoryConfig) -> Self {
        Self {
            layout: Layout::new(&cfg.segment_lengths),
            speed: u64::from(cfg.conveyor_speed),
            tick_ms: u64::from(cfg.tick_duration),
            pallet_length: u64::from(cfg.pallet_length),
            pallet_gap: u64::from(cfg.pallet_gap),
            dwell_ms: u64::from(cfg.dwell_ticks()) * u64::from(cfg.tick_duration),
            pallets: (0..cfg.pallet_count).map(ome_factory::points::pallet_rfid).collect(),
        }
    }

    pub fn station_count(&self) -> usize {
        self.layout.station_count()
    }

    fn pitch(&self) -> u64 {
        self.pallet_length + self.pallet_gap
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Basis {
    RfidCheckpoint,
    DeadReckoned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PalletEstimate {
    pub rfid: String,
    /// Loop position of the pallet's front, millimetres from the queue stop.
    pub position: Option<u64>,
    pub segment: Option<usize>,
    pub offset: Option<u64>,
    pub basis: Basis,
    /// Milliseconds since the last checkpoint; `None` if never seen.
    pub staleness_ms: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Change {
    Stop(usize, bool),
    Queue(bool),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Track {
    pos: u64,
    t: u64,
    /// When the pallet reached the queue, while it is there.
    queued_at: Option<u64>,
    /// `(reader position, receipt time)`.
    checkpoint: Option<(u64, u64)>,
    /// Whether the estimate has moved off the last checkpoint.
    left: bool,
}

#[derive(Debug, Clone)]
pub struct Estimator {
    geo: LineGeometry,
    stops: Vec<bool>,
    queue_engaged: bool,
    tracks: BTreeMap<String, Track>,
    /// Changes known in advance, by effective time.
    scheduled: Vec<(u64, Change)>,
}

impl Estimator {
    /// Every stop starts engaged, as on the real line.
    pub fn new(geo: LineGeometry) -> Self {
        Self {
            stops: vec![true; geo.station_count()],
            queue_engaged: true,
            tracks: BTreeMap::new(),
            scheduled: Vec::new(),
            geo,
        }
    }

    pub fn geometry(&self) -> &LineGeometry {
        &self.geo
    }

    pub fn stop_engaged(&self, k: usize) -> Option<bool> {
        self.stops.get(k.wrapping_sub(1)).copied()
    }

    fn hold_here(&self, pos: u64) -> bool {
        (1..=self.stops.len()).any(|k| self.stops[k - 1] && self.geo.layout.stop_position(k) == pos)
    }

    fn queue_holds(&self) -> bool {
        self.queue_engaged || self.geo.dwell_ms > 0
    }

    /// Dead-reckons one pallet from `(pos, t)` to `end`, ignoring others.
    fn run(&self, mut pos: u64, mut t: u64, end: u64, mut queued_at: Option<u64>) -> (u64, Option<u64>) {
        let l = &self.geo.layout;
        let v = self.geo.speed;
        if v == 0 {
            return (pos, queued_at);
        }
        loop {
            if pos == l.queue_position() && (self.queue_holds() || queued_at.is_some()) {
                let arrived = *queued_at.get_or_insert(t);
                if self.queue_engaged {
                    return (pos, queued_at);
                }
                let leave = arrived + self.geo.dwell_ms;
                if leave >= end {
                    return (pos, queued_at);
                }
                t = t.max(leave);
                queued_at = None;
            } else if self.hold_here(pos) {
                return (pos, queued_at);
            }
            if end <= t {
                return (pos, queued_at);
            }
            let budget = v * (end - t) / 1000;
            if budget == 0 {
                return (pos, queued_at);
            }
            let mut holds: Vec<u64> = (1..=self.stops.len())
                .filter(|&k| self.stops[k - 1])
                .map(|k| l.stop_position(k))
                .collect();
            if self.queue_holds() {
                holds.push(l.queue_position());
            }
            let next = holds
                .into_iter()
                .map(|h| l.ahead(pos, h))
                .filter(|&d| d > 0 && d <= budget)
                .min();
            match next {
                None => return (l.advance(pos, budget), queued_at),
                Some(d) => {
                    pos = l.advance(pos, d);
                    t += (d * 1000).div_ceil(v);
                    if pos == l.queue_position() {
                        queued_at = Some(t);
                    }
                }
            }
        }
    }

    /// Positions of every tracked pallet at `at`, keeping each at least one
    /// pallet pitch behind the one ahead.
    fn positions_at(&self, at: u64) -> BTreeMap<String, (u64, Option<u64>)> {
        let l = &self.geo.layout;
        let mut raw: BTreeMap<String, (u64, Option<u64>)> = self
            .tracks
            .iter()
            .map(|(id, tr)| (id.clone(), self.run(tr.pos, tr.t, at.max(tr.t), tr.queued_at)))
            .collect();
        if raw.len() < 2 {
            return raw;
        }
        let pitch = self.geo.pitch();
        for _ in 0..raw.len() {
            // Pallets never overtake: on a tie, the one that travelled
            // further since its anchor is the follower.
            let mut order: Vec<(u64, std::cmp::Reverse<u64>, String)> = raw
                .iter()
                .map(|(id, (p, _))| (*p, std::cmp::Reverse(l.ahead(self.tracks[id].pos, *p)), id.clone()))
                .collect();
            order.sort();
            let mut changed = false;
            for i in 0..order.len() {
                let (pos, _, id) = &order[i];
                let (lead_pos, _, _) = &order[(i + 1) % order.len()];
                let gap = l.ahead(*pos, *lead_pos);
                if gap >= pitch {
                    continue;
                }
                let anchor = self.tracks[id].pos;
                let travel = l.ahead(anchor, *pos);
                let back = (pitch - gap).min(travel);
                if back > 0 {
                    raw.get_mut(id).expect("tracked").0 = l.back(*pos, back);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        raw
    }

    /// Re-anchors every pallet at `at` so a change from then on applies
    /// only to motion after it.
    fn rebase(&mut self, at: u64) {
        for (id, (pos, q)) in self.positions_at(at) {
            let tr = self.tracks.get_mut(&id).expect("tracked");
            if at > tr.t {
                if pos != tr.pos {
                    tr.left = true;
                }
                tr.pos = pos;
                tr.t = at;
                tr.queued_at = q;
            }
        }
    }

    fn apply(&mut self, at: u64, change: Change) {
        let same = match change {
            Change::Stop(k, e) => self.stop_engaged(k).is_none_or(|c| c == e),
            Change::Queue(e) => self.queue_engaged == e,
        };
        if same {
            return;
        }
        self.rebase(at);
        match change {
            Change::Stop(k, e) => self.stops[k - 1] = e,
            Change::Queue(e) => self.queue_engaged = e,
        }
    }

    /// Applies scheduled changes that have come due.
    pub fn advance_to(&mut self, now: u64) {
        self.scheduled.sort_by_key(|(t, _)| *t);
        while self.scheduled.first().is_some_and(|(t, _)| *t <= now) {
            let (t, c) = self.scheduled.remove(0);
            self.apply(t, c);
        }
    }

    fn change(&mut self, effective: u64, now: u64, c: Change) {
        self.advance_to(now);
        if effective > now {
            self.scheduled.push((effective, c));
        } else {
            self.apply(effective, c);
        }
    }

    pub fn set_stop(&mut self, station: usize, engaged: bool, effective: u64, now: u64) {
        if station >= 1 && station <= self.stops.len() {
            self.change(effective, now, Change::Stop(station, engaged));
        }
    }

    pub fn set_queue(&mut self, engaged: bool, effective: u64, now: u64) {
        self.change(effective, now, Change::Queue(engaged));
    }

    /// A pallet read at station `k`'s reader at source time `observed`.
    pub fn checkpoint(&mut self, rfid: &str, station: usize, observed: u64, now: u64) {
        if station == 0 || station > self.stops.len() {
            return;
        }
        self.advance_to(now);
        let pos = self.geo.layout.stop_position(station);
        self.tracks.insert(
            rfid.to_string(),
            Track {
                pos,
                t: observed,
                queued_at: None,
                checkpoint: Some((pos, now)),
                left: false,
            },
        );
    }

    pub fn estimates(&mut self, now: u64) -> Vec<PalletEstimate> {
        self.advance_to(now);
        let positions = self.positions_at(now);
        let mut ids: Vec<String> = self.geo.pallets.clone();
        ids.extend(self.tracks.keys().filter(|k| !self.geo.pallets.contains(k)).cloned());
        ids.into_iter()
            .map(|rfid| match (self.tracks.get(&rfid), positions.get(&rfid)) {
                (Some(tr), Some(&(pos, _))) => {
                    let (segment, offset) = self.geo.layout.locate(pos);
                    let on_checkpoint = tr.checkpoint.is_some_and(|(cp, _)| cp == pos) && !tr.left;
                    PalletEstimate {
                        rfid,
                        position: Some(pos),
                        segment: Some(segment),
                        offset: Some(offset),
                        basis: if on_checkpoint { Basis::RfidCheckpoint } else { Basis::DeadReckoned },
                        staleness_ms: tr.checkpoint.map(|(_, at)| now.saturating_sub(at)),
                    }
                }
                _ => PalletEstimate {
                    rfid,
                    position: None,
                    segment: None,
                    offset: None,
                    basis: Basis::DeadReckoned,
                    staleness_ms: None,
                },
            })
            .collect()
    }

    /// Loop distance between each pallet's estimate and its true front.
    /// Harness use: it needs the simulated factory as an oracle.
    pub fn divergence(&mut self, truth: &FactoryState, now: u64) -> Vec<(String, Option<u64>)> {
        let l = truth.layout();
        let est: BTreeMap<String, Option<u64>> = self
            .estimates(now)
            .into_iter()
            .map(|e| (e.rfid, e.position))
            .collect();
        truth
            .pallets()
            .iter()
            .map(|p| {
                let err = est
                    .get(p.rfid())
                    .copied()
                    .flatten()
                    .map(|e| l.ahead(e, p.front()).min(l.ahead(p.front(), e)));
                (p.rfid().to_string(), err)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geo() -> LineGeometry {
        let cfg = FactoryConfig::default();
        LineGeometry::from_config(&cfg)
    }

    #[test]
    fn dead_reckons_past_an_open_reader() {
        let mut e = Estimator::new(geo());
        e.set_stop(1, false, 0, 0);
        e.checkpoint("P-001", 1, 1000, 1000);
        let est = e.estimates(1500);
        // 100 mm/s for 500 ms.
        assert_eq!(est[0].position, Some(1200 + 50));
        assert_eq!(est[0].basis, Basis::DeadReckoned);
        assert_eq!(est[0].staleness_ms, Some(500));
    }

    #[test]
    fn blocked_pallet_stays_pinned() {
        let mut e = Estimator::new(geo());
        e.checkpoint("P-001", 2, 0, 0);
        let est = e.estimates(60_000);
        assert_eq!(est[0].position, Some(2200));
        assert_eq!(est[0].basis, Basis::RfidCheckpoint);
    }

    #[test]
    fn fresh_checkpoint_has_zero_staleness() {
        let mut e = Estimator::new(geo());
        e.checkpoint("P-002", 3, 400, 400);
        let est = e.estimates(400);
        assert_eq!(est[1].staleness_ms, Some(0));
        assert_eq!(est[1].basis, Basis::RfidCheckpoint);
        assert_eq!(est[0].position, None);
        assert_eq!(est[0].staleness_ms, None);
    }

    #[test]
    fn released_pallet_runs_to_the_next_engaged_stop() {
        let mut e = Estimator::new(geo());
        e.checkpoint("P-001", 1, 0, 0);
        e.set_stop(1, false, 10_000, 10_000);
        // 1000 mm to stop 2 takes 10 s.
        assert_eq!(e.estimates(15_000)[0].position, Some(1700));
        assert_eq!(e.estimates(30_000)[0].position, Some(2200));
        e.set_stop(1, true, 20_000, 30_000);
        assert_eq!(e.estimates(30_000)[0].position, Some(2200));
    }

    #[test]
    fn scheduled_change_waits_for_its_time() {
        let mut e = Estimator::new(geo());
        e.checkpoint("P-001", 1, 0, 0);
        e.set_stop(1, false, 1000, 500);
        assert_eq!(e.estimates(900)[0].position, Some(1200));
        assert_eq!(e.estimates(2000)[0].position, Some(1300));
    }

    #[test]
    fn follower_keeps_a_pitch_behind() {
        let mut e = Estimator::new(geo());
        e.checkpoint("P-001", 2, 0, 0);
        e.checkpoint("P-002", 1, 0, 0);
        e.set_stop(1, false, 0, 0);
        let est = e.estimates(100_000);
        assert_eq!(est[0].position, Some(2200));
        assert_eq!(est[1].position, Some(2200 - 250));
    }

    #[test]
    fn queue_dwell_then_release() {
        let mut e = Estimator::new(geo());
        for k in 1..=6 {
            e.set_stop(k, false, 0, 0);
        }
        e.checkpoint("P-001", 6, 0, 0);
        // Stop 6 sits at 6200; the return leg is 1800 mm long.
        assert_eq!(e.estimates(18_000)[0].position, Some(0));
        e.set_queue(false, 18_000, 18_000);
        assert_eq!(e.estimates(18_500)[0].position, Some(0));
        assert_eq!(e.estimates(20_000)[0].position, Some(100));
    }
}
