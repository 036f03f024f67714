//! Loop geometry. Positions are integer millimetres along the closed conveyor,
//! in `[0, total)`, with 0 at the queue stop.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    segment_lengths: Vec<u64>,
    /// `segment_starts[i]` is the loop position where segment `i` begins.
    segment_starts: Vec<u64>,
    total: u64,
}

impl Layout {
    pub fn new(segment_lengths: &[u32]) -> Self {
        let mut starts = Vec::with_capacity(segment_lengths.len());
        let mut acc = 0u64;
        for &len in segment_lengths {
            starts.push(acc);
            acc += u64::from(len);
        }
        Self {
            segment_lengths: segment_lengths.iter().map(|&l| u64::from(l)).collect(),
            segment_starts: starts,
            total: acc,
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn segment_count(&self) -> usize {
        self.segment_lengths.len()
    }

    pub fn segment_length(&self, index: usize) -> u64 {
        self.segment_lengths[index]
    }

    pub fn station_count(&self) -> usize {
        self.segment_lengths.len() - 1
    }

    /// Docking stop of station `k` (1-based) sits at the end of segment `k - 1`.
    pub fn stop_position(&self, station: usize) -> u64 {
        self.segment_starts[station - 1] + self.segment_lengths[station - 1]
    }

    /// The queue stop closes the loop.
    pub fn queue_position(&self) -> u64 {
        0
    }

    /// Forward distance travelled going from `from` to `to`.
    pub fn ahead(&self, from: u64, to: u64) -> u64 {
        (to + self.total - from) % self.total
    }

    pub fn advance(&self, pos: u64, by: u64) -> u64 {
        (pos + by) % self.total
    }

    pub fn back(&self, pos: u64, by: u64) -> u64 {
        (pos + self.total - by % self.total) % self.total
    }

    /// Maps a loop position to `(segment, offset)` with `0 < offset <= len`;
    /// a point shared by two segments belongs to the one it ends.
    pub fn locate(&self, pos: u64) -> (usize, u64) {
        let pos = pos % self.total;
        if pos == 0 {
            let last = self.segment_count() - 1;
            return (last, self.segment_lengths[last]);
        }
        let idx = match self.segment_starts.binary_search(&pos) {
            Ok(i) => i - 1,
            Err(i) => i - 1,
        };
        (idx, pos - self.segment_starts[idx])
    }

    pub fn position(&self, segment: usize, offset: u64) -> u64 {
        (self.segment_starts[segment] + offset) % self.total
    }

    /// True when a pallet of `length` with its front at `front` covers `point`,
    /// i.e. `point` lies in `(front - length, front]`.
    pub fn covers(&self, front: u64, length: u64, point: u64) -> bool {
        self.ahead(point, front) < length
    }
}
