//! I/O point names. These are the tag names used by every layer above the
//! factory, so they must not change shape.

pub fn pallet_a(station: usize) -> String {
    format!("ST{station}.PALLET_A")
}

pub fn pallet_b(station: usize) -> String {
    format!("ST{station}.PALLET_B")
}

pub fn elev_a(station: usize) -> String {
    format!("ST{station}.ELEV_A")
}

pub fn elev_b(station: usize) -> String {
    format!("ST{station}.ELEV_B")
}

pub fn stop(station: usize) -> String {
    format!("ST{station}.STOP")
}

pub fn elev_cmd(station: usize) -> String {
    format!("ST{station}.ELEV_CMD")
}

pub fn rfid(station: usize) -> String {
    format!("ST{station}.RFID")
}

pub const QUEUE_SENSOR: &str = "SYS.QUEUE_SENSOR";
pub const QUEUE_STOP: &str = "SYS.QUEUE_STOP";

pub fn reader_id(station: usize) -> String {
    format!("R-{station}")
}

pub fn pallet_rfid(index: usize) -> String {
    format!("P-{:03}", index + 1)
}

/// Energy ledger device names.
pub const CONVEYOR: &str = "CONVEYOR";
pub const QUEUE_STOP_DEVICE: &str = "QUEUE_STOP";

pub fn stop_device(station: usize) -> String {
    format!("ST{station}_STOP")
}

pub fn elevator_device(station: usize) -> String {
    format!("ST{station}_ELEV")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Point {
    PalletA(usize),
    PalletB(usize),
    ElevA(usize),
    ElevB(usize),
    Rfid(usize),
    Stop(usize),
    ElevCmd(usize),
    QueueSensor,
    QueueStop,
}

impl Point {
    pub fn parse(name: &str) -> Option<Point> {
        match name {
            QUEUE_SENSOR => return Some(Point::QueueSensor),
            QUEUE_STOP => return Some(Point::QueueStop),
            _ => {}
        }
        let rest = name.strip_prefix("ST")?;
        let (num, point) = rest.split_once('.')?;
        if num.starts_with('0') {
            return None;
        }
        let k: usize = num.parse().ok()?;
        Some(match point {
            "PALLET_A" => Point::PalletA(k),
            "PALLET_B" => Point::PalletB(k),
            "ELEV_A" => Point::ElevA(k),
            "ELEV_B" => Point::ElevB(k),
            "RFID" => Point::Rfid(k),
            "STOP" => Point::Stop(k),
            "ELEV_CMD" => Point::ElevCmd(k),
            _ => return None,
        })
    }

    pub fn station(&self) -> Option<usize> {
        match *self {
            Point::PalletA(k)
            | Point::PalletB(k)
            | Point::ElevA(k)
            | Point::ElevB(k)
            | Point::Rfid(k)
            | Point::Stop(k)
            | Point::ElevCmd(k) => Some(k),
            Point::QueueSensor | Point::QueueStop => None,
        }
    }

    pub fn is_actuator(&self) -> bool {
        matches!(self, Point::Stop(_) | Point::ElevCmd(_) | Point::QueueStop)
    }

    pub fn name(&self) -> String {
        match *self {
            Point::PalletA(k) => pallet_a(k),
            Point::PalletB(k) => pallet_b(k),
            Point::ElevA(k) => elev_a(k),
            Point::ElevB(k) => elev_b(k),
            Point::Rfid(k) => rfid(k),
            Point::Stop(k) => stop(k),
            Point::ElevCmd(k) => elev_cmd(k),
            Point::QueueSensor => QUEUE_SENSOR.to_string(),
            Point::QueueStop => QUEUE_STOP.to_string(),
        }
    }
}
