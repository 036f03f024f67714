//! Frame layout, all integers big-endian:
//!
//! ```text
//! magic "TW01" | type u8 | seq u32 | payload_len u32 | payload | crc32 u32
//! ```
//!
//! The CRC (IEEE) covers every byte before it.

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"TW01";
pub const HEADER_LEN: usize = 13;
pub const CRC_LEN: usize = 4;
pub const MIN_FRAME_LEN: usize = HEADER_LEN + CRC_LEN;
pub const MAX_PAYLOAD: usize = 65536;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Read = 0x01,
    Write = 0x02,
    Subscribe = 0x03,
    Publish = 0x04,
    Ack = 0x05,
    Err = 0x06,
    Auth = 0x07,
}

impl MsgType {
    pub const ALL: [MsgType; 7] = [
        MsgType::Read,
        MsgType::Write,
        MsgType::Subscribe,
        MsgType::Publish,
        MsgType::Ack,
        MsgType::Err,
        MsgType::Auth,
    ];

    pub fn from_byte(b: u8) -> Option<MsgType> {
        Self::ALL.into_iter().find(|t| *t as u8 == b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("bad magic")]
    BadMagic,
    #[error("crc mismatch")]
    BadCrc,
    #[error("payload length {0} exceeds {MAX_PAYLOAD}")]
    Oversize(usize),
    #[error("truncated frame: need {needed} more bytes")]
    Truncated { needed: usize },
    #[error("unknown message type {0:#04x}")]
    BadType(u8),
    #[error("declared payload length {declared} but frame carries {actual}")]
    LengthMismatch { declared: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    msg_type: MsgType,
    seq: u32,
    payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MsgType, seq: u32, payload: Vec<u8>) -> Result<Self, DecodeError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(DecodeError::Oversize(payload.len()));
        }
        Ok(Self {
            msg_type,
            seq,
            payload,
        })
    }

    /// Text payload frame. Panics if the text exceeds [`MAX_PAYLOAD`].
    pub fn text(msg_type: MsgType, seq: u32, payload: impl Into<String>) -> Self {
        Self::new(msg_type, seq, payload.into().into_bytes()).expect("payload within frame limit")
    }

    pub fn msg_type(&self) -> MsgType {
        self.msg_type
    }

    pub fn seq(&self) -> u32 {
        self.seq
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn payload_str(&self) -> Option<&str> {
        std::str::from_utf8(&self.payload).ok()
    }

    pub fn with_seq(mut self, seq: u32) -> Self {
        self.seq = seq;
        self
    }

    pub fn encoded_len(&self) -> usize {
        MIN_FRAME_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        let start = out.len();
        out.extend_from_slice(&MAGIC);
        out.push(self.msg_type as u8);
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
        let crc = crc32fast::hash(&out[start..]);
        out.extend_from_slice(&crc.to_be_bytes());
    }
}

fn check_magic(buf: &[u8]) -> Result<(), DecodeError> {
    let n = buf.len().min(MAGIC.len());
    if buf[..n] != MAGIC[..n] {
        return Err(DecodeError::BadMagic);
    }
    Ok(())
}

fn read_u32(buf: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([buf[at], buf[at + 1], buf[at + 2], buf[at + 3]])
}

/// Decodes the first frame of a byte stream and returns it with the number
/// of bytes it occupied. An incomplete frame yields
/// [`DecodeError::Truncated`]; nothing past the declared length is read.
pub fn decode(buf: &[u8]) -> Result<(Frame, usize), DecodeError> {
    check_magic(buf)?;
    if buf.len() < HEADER_LEN {
        return Err(DecodeError::Truncated {
            needed: MIN_FRAME_LEN - buf.len(),
        });
    }
    let declared = read_u32(buf, 9) as usize;
    if declared > MAX_PAYLOAD {
        return Err(DecodeError::Oversize(declared));
    }
    let total = MIN_FRAME_LEN + declared;
    if buf.len() < total {
        return Err(DecodeError::Truncated {
            needed: total - buf.len(),
        });
    }
    let frame = finish(&buf[..total], declared)?;
    Ok((frame, total))
}

/// Decodes a buffer that holds exactly one frame, e.g. a datagram or a
/// frame already delimited by the transport. The frame's extent comes from
/// the buffer, so a corrupted length field shows up as a CRC failure.
pub fn decode_exact(buf: &[u8]) -> Result<Frame, DecodeError> {
    check_magic(buf)?;
    if buf.len() < MIN_FRAME_LEN {
        return Err(DecodeError::Truncated {
            needed: MIN_FRAME_LEN - buf.len(),
        });
    }
    let actual = buf.len() - MIN_FRAME_LEN;
    if actual > MAX_PAYLOAD {
        return Err(DecodeError::Oversize(actual));
    }
    let declared = read_u32(buf, 9) as usize;
    finish(buf, declared)
}

fn finish(frame: &[u8], declared: usize) -> Result<Frame, DecodeError> {
    let body_end = frame.len() - CRC_LEN;
    if crc32fast::hash(&frame[..body_end]) != read_u32(frame, body_end) {
        return Err(DecodeError::BadCrc);
    }
    let actual = body_end - HEADER_LEN;
    if declared != actual {
        return Err(DecodeError::LengthMismatch { declared, actual });
    }
    let msg_type = MsgType::from_byte(frame[4]).ok_or(DecodeError::BadType(frame[4]))?;
    Ok(Frame {
        msg_type,
        seq: read_u32(frame, 5),
        payload: frame[HEADER_LEN..body_end].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ack_header_layout() {
        let bytes = Frame::text(MsgType::Ack, 1, "").encode();
        assert_eq!(bytes.len(), 17);
        assert_eq!(
            &bytes[..13],
            &[0x54, 0x57, 0x30, 0x31, 0x05, 0, 0, 0, 1, 0, 0, 0, 0]
        );
    }

    #[test]
    fn stream_decode_reports_missing_bytes() {
        let bytes = Frame::text(MsgType::Read, 9, "ST1.*").encode();
        for cut in 0..bytes.len() {
            match decode(&bytes[..cut]) {
                Err(DecodeError::Truncated { needed }) => assert!(needed > 0),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
        let mut two = bytes.clone();
        two.extend_from_slice(&bytes);
        let (f, used) = decode(&two).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(f.payload_str(), Some("ST1.*"));
    }

    #[test]
    fn oversize_rejected_from_header_alone() {
        let mut header = MAGIC.to_vec();
        header.push(0x04);
        header.extend_from_slice(&1u32.to_be_bytes());
        header.extend_from_slice(&(MAX_PAYLOAD as u32 + 1).to_be_bytes());
        assert_eq!(decode(&header), Err(DecodeError::Oversize(MAX_PAYLOAD + 1)));
        assert!(Frame::new(MsgType::Publish, 0, vec![0; MAX_PAYLOAD + 1]).is_err());
        assert!(Frame::new(MsgType::Publish, 0, vec![0; MAX_PAYLOAD]).is_ok());
    }

    #[test]
    fn bad_magic_detected_early() {
        assert_eq!(decode(b"TX"), Err(DecodeError::BadMagic));
        assert_eq!(decode_exact(b"XW01"), Err(DecodeError::BadMagic));
    }
}
