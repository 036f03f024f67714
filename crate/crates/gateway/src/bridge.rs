use std::collections::BTreeMap;
use std::fmt;

use tag_protocol::{Access, ErrorCode, NameFilter};

pub const NORTH_PREFIX: &str = "DT/";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BridgeDirection {
    NorthRead,
    NorthWrite,
    Both,
}

impl BridgeDirection {
    pub fn readable(self) -> bool {
        self != BridgeDirection::NorthWrite
    }

    pub fn writable(self) -> bool {
        self != BridgeDirection::NorthRead
    }

    pub fn name(self) -> &'static str {
        match self {
            BridgeDirection::NorthRead => "read",
            BridgeDirection::NorthWrite => "write",
            BridgeDirection::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "read" => Some(BridgeDirection::NorthRead),
            "write" => Some(BridgeDirection::NorthWrite),
            "both" => Some(BridgeDirection::Both),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BridgeEntry {
    pub south: String,
    pub direction: BridgeDirection,
    /// Writes need the `SubmitMission` scope.
    pub mission: bool,
}

impl fmt::Display for BridgeEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.south, self.direction.name())?;
        if self.mission {
            f.write_str(" mission")?;
        }
        Ok(())
    }
}

/// Injective map from north names (`DT/<tag>`) to south tag names.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BridgeMap {
    north: BTreeMap<String, BridgeEntry>,
    south: BTreeMap<String, String>,
}

impl BridgeMap {
    pub fn insert(&mut self, north: &str, entry: BridgeEntry) -> Result<(), String> {
        if !north.starts_with(NORTH_PREFIX) || north.len() == NORTH_PREFIX.len() {
            return Err(format!("north name `{north}` must start with {NORTH_PREFIX}"));
        }
        if self.north.contains_key(north) {
            return Err(format!("`{north}` mapped twice"));
        }
        if let Some(other) = self.south.get(&entry.south) {
            return Err(format!("`{}` already mapped from `{other}`", entry.south));
        }
        self.south.insert(entry.south.clone(), north.to_string());
        self.north.insert(north.to_string(), entry);
        Ok(())
    }

    /// `DT/<name>` for every device tag, with direction from its access.
    pub fn mirror<'a>(tags: impl IntoIterator<Item = (&'a str, Access)>) -> Self {
        let mut map = BridgeMap::default();
        for (name, access) in tags {
            let (direction, mission) = match access {
                Access::ReadOnly => (BridgeDirection::NorthRead, false),
                Access::Write => (BridgeDirection::Both, false),
                Access::Mission => (BridgeDirection::NorthWrite, true),
            };
            map.insert(
                &format!("{NORTH_PREFIX}{name}"),
                BridgeEntry {
                    south: name.to_string(),
                    direction,
                    mission,
                },
            )
            .expect("device tag names are unique");
        }
        map
    }

    pub fn len(&self) -> usize {
        self.north.len()
    }

    pub fn is_empty(&self) -> bool {
        self.north.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BridgeEntry)> {
        self.north.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn get(&self, north: &str) -> Option<&BridgeEntry> {
        self.north.get(north)
    }

    /// South name for a north write.
    pub fn write_target(&self, north: &str) -> Result<&BridgeEntry, ErrorCode> {
        let e = self.north.get(north).ok_or(ErrorCode::UnmappedTag)?;
        if e.direction.writable() {
            Ok(e)
        } else {
            Err(ErrorCode::DirectionDenied)
        }
    }

    /// North name of a south tag the north side may read.
    pub fn readable_north(&self, south: &str) -> Option<&str> {
        let n = self.south.get(south)?;
        self.north[n].direction.readable().then_some(n.as_str())
    }

    /// South names readable through a north filter, sorted. An exact name
    /// that is mapped but write-only is a direction error.
    pub fn expand_read(&self, filter: &NameFilter) -> Result<Vec<String>, ErrorCode> {
        match filter {
            NameFilter::Exact(n) => {
                let e = self.north.get(n).ok_or(ErrorCode::UnmappedTag)?;
                if e.direction.readable() {
                    Ok(vec![e.south.clone()])
                } else {
                    Err(ErrorCode::DirectionDenied)
                }
            }
            NameFilter::Prefix(_) => {
                let mut out: Vec<String> = self
                    .north
                    .iter()
                    .filter(|(n, e)| filter.matches(n) && e.direction.readable())
                    .map(|(_, e)| e.south.clone())
                    .collect();
                out.sort();
                if out.is_empty() {
                    Err(ErrorCode::UnmappedTag)
                } else {
                    Ok(out)
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(south: &str, d: BridgeDirection) -> BridgeEntry {
        BridgeEntry { south: south.into(), direction: d, mission: false }
    }

    #[test]
    fn mapping_rules() {
        let mut m = BridgeMap::default();
        m.insert("DT/ST3.STOP", entry("ST3.STOP", BridgeDirection::Both)).unwrap();
        m.insert("DT/ST3.PALLET_A", entry("ST3.PALLET_A", BridgeDirection::NorthRead)).unwrap();
        assert!(m.insert("DT/OTHER", entry("ST3.STOP", BridgeDirection::Both)).is_err());
        assert!(m.insert("ST3.X", entry("ST3.X", BridgeDirection::Both)).is_err());

        assert_eq!(m.write_target("DT/ST3.STOP").unwrap().south, "ST3.STOP");
        assert_eq!(m.write_target("DT/ST3.PALLET_A"), Err(ErrorCode::DirectionDenied));
        assert_eq!(m.write_target("DT/NOPE"), Err(ErrorCode::UnmappedTag));
        let all = m.expand_read(&NameFilter::parse("DT/ST3.*").unwrap()).unwrap();
        assert_eq!(all, vec!["ST3.PALLET_A".to_string(), "ST3.STOP".to_string()]);
        assert_eq!(
            m.expand_read(&NameFilter::parse("DT/NOPE").unwrap()),
            Err(ErrorCode::UnmappedTag)
        );
        assert_eq!(m.readable_north("ST3.STOP"), Some("DT/ST3.STOP"));
    }
}
