use proptest::prelude::*;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tag_protocol::{decode, decode_exact, DecodeError, Frame, MsgType, MAX_PAYLOAD};

/// Bit-at-a-time reflected CRC-32 (polynomial 0x04C11DB7), no tables.
fn crc32_reference(bytes: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc ^= u32::from(b);
        for _ in 0..8 {
            let lsb = crc & 1;
            crc >>= 1;
            if lsb == 1 {
                crc ^= 0xEDB8_8320;
            }
        }
    }
    !crc
}

#[test]
fn reference_crc_matches_check_value() {
    // Standard check input for CRC-32/ISO-HDLC.
    assert_eq!(crc32_reference(b"123456789"), 0xCBF4_3926);
}

#[test]
fn empty_ack_is_seventeen_bytes() {
    let header = [0x54, 0x57, 0x30, 0x31, 0x05, 0, 0, 0, 1, 0, 0, 0, 0];
    let crc = crc32_reference(&header);
    let mut expected = header.to_vec();
    expected.extend_from_slice(&crc.to_be_bytes());

    let bytes = Frame::text(MsgType::Ack, 1, "").encode();
    assert_eq!(bytes, expected);
    assert_eq!(decode_exact(&bytes).unwrap(), Frame::text(MsgType::Ack, 1, ""));
}

fn random_frame(rng: &mut ChaCha8Rng) -> Frame {
    let t = MsgType::ALL[rng.random_range(0..MsgType::ALL.len())];
    let len = if rng.random_bool(0.01) {
        rng.random_range(0..=MAX_PAYLOAD)
    } else {
        rng.random_range(0..64)
    };
    let mut payload = vec![0u8; len];
    rng.fill_bytes(&mut payload);
    Frame::new(t, rng.random(), payload).unwrap()
}

#[test]
fn round_trip_random_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100_000 {
        let f = random_frame(&mut rng);
        let bytes = f.encode();
        assert_eq!(bytes.len(), f.encoded_len());
        let (g, used) = decode(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(g, f);
    }
}

#[test]
fn decode_is_total_on_random_bytes() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut accepted = 0;
    for i in 0..100_000 {
        let len = rng.random_range(0..96);
        let mut buf = vec![0u8; len];
        rng.fill_bytes(&mut buf);
        // Half the inputs get a valid magic so the decoder gets past byte 4.
        if i % 2 == 0 && len >= 4 {
            buf[..4].copy_from_slice(b"TW01");
        }
        if let Ok((_, used)) = decode(&buf) {
            assert!(used <= buf.len());
            accepted += 1;
        }
        let _ = decode_exact(&buf);
    }
    // A random 32-bit CRC matching is vanishingly rare.
    assert!(accepted <= 1);
}

#[test]
fn every_single_byte_flip_is_detected() {
    let frames = [
        Frame::text(MsgType::Ack, 1, ""),
        Frame::text(MsgType::Write, 42, "ST3.STOP=B:0"),
        Frame::text(MsgType::Publish, u32::MAX, "@tick=9\nST1.RFID=S:P-001\nST1.PALLET_A=B:1"),
    ];
    for f in &frames {
        let bytes = f.encode();
        for pos in 0..bytes.len() {
            for delta in 1..=255u8 {
                let mut bad = bytes.clone();
                bad[pos] ^= delta;
                match decode_exact(&bad) {
                    Err(DecodeError::BadCrc) => assert!(pos >= 4),
                    Err(DecodeError::BadMagic) => assert!(pos < 4),
                    other => panic!("byte {pos} ^ {delta:#x}: {other:?}"),
                }
                // The stream decoder may instead wait for more bytes or
                // reject the length, but never accepts the frame.
                assert!(decode(&bad).is_err());
            }
        }
    }
}

#[test]
fn stream_decoder_stops_at_declared_length() {
    let a = Frame::text(MsgType::Read, 1, "ST1.*").encode();
    let mut stream = a.clone();
    stream.extend_from_slice(b"garbage that is not a frame");
    let (f, used) = decode(&stream).unwrap();
    assert_eq!(used, a.len());
    assert_eq!(f.payload(), b"ST1.*");
    assert_eq!(decode(&stream[used..]), Err(DecodeError::BadMagic));
}

proptest! {
    #[test]
    fn round_trip_any_frame(
        t in 0usize..7,
        seq in any::<u32>(),
        payload in proptest::collection::vec(any::<u8>(), 0..512),
    ) {
        let f = Frame::new(MsgType::ALL[t], seq, payload).unwrap();
        prop_assert_eq!(decode_exact(&f.encode()).unwrap(), f.clone());
        let (g, _) = decode(&f.encode()).unwrap();
        prop_assert_eq!(g, f);
    }

    #[test]
    fn prefixes_report_truncation(payload in proptest::collection::vec(any::<u8>(), 0..64), cut in 0usize..100) {
        let bytes = Frame::new(MsgType::Publish, 3, payload).unwrap().encode();
        let cut = cut % bytes.len();
        let is_truncated = matches!(decode(&bytes[..cut]), Err(DecodeError::Truncated { .. }));
        prop_assert!(is_truncated);
    }
}

#[test]
fn documented_examples() {
    let hex = |f: Frame| {
        f.encode()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    assert_eq!(
        hex(Frame::text(MsgType::Ack, 1, "")),
        "54 57 30 31 05 00 00 00 01 00 00 00 00 56 08 66 03"
    );
    assert_eq!(
        hex(Frame::text(MsgType::Write, 7, "ST3.STOP=B:0")),
        "54 57 30 31 02 00 00 00 07 00 00 00 0c 53 54 33 2e 53 54 4f 50 3d 42 3a 30 00 a8 27 e3"
    );
}
