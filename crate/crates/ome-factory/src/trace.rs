use std::io::{self, BufRead, Write};

use crate::factory::{PointValue, SensorEvent};

/// Writes events as `tick,point_name,value` lines.
pub fn write_event_trace<W: Write>(mut out: W, events: &[SensorEvent]) -> io::Result<()> {
    for e in events {
        writeln!(out, "{e}")?;
    }
    Ok(())
}

/// Reads a trace written by [`write_event_trace`]. `RFID` points read back
/// as text, everything else as booleans.
pub fn read_event_trace<R: BufRead>(input: R) -> io::Result<Vec<SensorEvent>> {
    let bad = |line: usize| io::Error::new(io::ErrorKind::InvalidData, format!("line {line}"));
    let mut events = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, ',');
        let tick = parts.next().and_then(|t| t.parse().ok()).ok_or_else(|| bad(idx + 1))?;
        let point_name = parts.next().ok_or_else(|| bad(idx + 1))?.to_string();
        let raw = parts.next().ok_or_else(|| bad(idx + 1))?;
        let new_value = if point_name.ends_with(".RFID") {
            PointValue::Text(raw.to_string())
        } else {
            match raw {
                "0" => PointValue::Bool(false),
                "1" => PointValue::Bool(true),
                _ => return Err(bad(idx + 1)),
            }
        };
        events.push(SensorEvent { tick, point_name, new_value });
    }
    Ok(events)
}
