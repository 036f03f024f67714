//! Blocking framing over any byte stream.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::frame::{decode, DecodeError, Frame, HEADER_LEN, MAX_PAYLOAD, MIN_FRAME_LEN};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// Reads one frame. Returns `Ok(None)` on a clean end of stream before the
/// first byte of a frame.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Frame>, TransportError> {
    let mut buf = vec![0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut buf[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into()),
            n => got += n,
        }
    }
    // Let the decoder vet magic and length before reading the body.
    match decode(&buf) {
        Err(DecodeError::Truncated { .. }) => {}
        Err(e) => return Err(e.into()),
        Ok(_) => unreachable!("header alone is never a full frame"),
    }
    let declared = u32::from_be_bytes([buf[9], buf[10], buf[11], buf[12]]) as usize;
    debug_assert!(declared <= MAX_PAYLOAD);
    buf.resize(MIN_FRAME_LEN + declared, 0);
    r.read_exact(&mut buf[HEADER_LEN..])?;
    let (frame, _) = decode(&buf)?;
    Ok(Some(frame))
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> io::Result<()> {
    w.write_all(&frame.encode())?;
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::MsgType;

    #[test]
    fn stream_round_trip() {
        let frames = [
            Frame::text(MsgType::Auth, 0, "dev:secret"),
            Frame::text(MsgType::Read, 1, "ST1.*"),
            Frame::text(MsgType::Ack, 2, ""),
        ];
        let mut wire = Vec::new();
        for f in &frames {
            write_frame(&mut wire, f).unwrap();
        }
        let mut cursor = io::Cursor::new(wire);
        for f in &frames {
            assert_eq!(read_frame(&mut cursor).unwrap().as_ref(), Some(f));
        }
        assert!(read_frame(&mut cursor).unwrap().is_none());
    }

    #[test]
    fn truncated_stream_is_an_error() {
        let bytes = Frame::text(MsgType::Read, 1, "ST1.*").encode();
        let mut cursor = io::Cursor::new(&bytes[..bytes.len() - 1]);
        assert!(read_frame(&mut cursor).is_err());
    }
}
