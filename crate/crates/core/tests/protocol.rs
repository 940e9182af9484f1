mod common;

use std::io::Cursor;

use foamfed::federation::{
    deserialize_params, read_frame, recv_message, send_message, serialize_params, Frame, Message, MessageType, ProtocolError,
    HEADER_LEN, MAGIC,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn messages_roundtrip(seed in any::<u64>()) {
        let msg = common::random_message(&mut ChaCha8Rng::seed_from_u64(seed));
        let bytes = msg.encode().unwrap();
        let (frame, used) = Frame::decode(&bytes, u64::MAX).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(frame.msg_type, msg.msg_type());
        prop_assert_eq!(Message::from_frame(&frame).unwrap(), msg);
    }

    #[test]
    fn params_roundtrip(seed in any::<u64>()) {
        let p = common::random_params(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(deserialize_params(&serialize_params(&p).unwrap()).unwrap(), p);
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
        let _ = Frame::decode(&bytes, 1 << 20);
        let _ = deserialize_params(&bytes);
        let _ = read_frame(&mut Cursor::new(&bytes), 1 << 20);
        for t in MessageType::ALL {
            let _ = Message::from_frame(&Frame { msg_type: t, payload: bytes.clone() });
        }
    }

    #[test]
    fn every_strict_prefix_is_truncated(seed in any::<u64>()) {
        let bytes = common::random_message(&mut ChaCha8Rng::seed_from_u64(seed)).encode().unwrap();
        for cut in 0..bytes.len() {
            let truncated = matches!(Frame::decode(&bytes[..cut], u64::MAX), Err(ProtocolError::Truncated { .. }));
            prop_assert!(truncated, "prefix of {} bytes", cut);
        }
    }
}

#[test]
fn header_fields() {
    let bytes = Message::JoinAck { client_id: 3 }.encode().unwrap();
    assert_eq!(&bytes[..4], MAGIC);
    assert_eq!(bytes[4], 0x02);
    assert_eq!(u64::from_be_bytes(bytes[5..HEADER_LEN].try_into().unwrap()), 4);
    assert_eq!(&bytes[HEADER_LEN..], 3u32.to_le_bytes());
}

#[test]
fn oversized_length_is_refused_before_reading() {
    let mut bytes = MAGIC.to_vec();
    bytes.push(0x07);
    bytes.extend_from_slice(&(1u64 << 40).to_be_bytes());
    assert!(matches!(read_frame(&mut Cursor::new(bytes), 1 << 20), Err(ProtocolError::PayloadTooLarge { .. })));
}

#[test]
fn a_stream_of_messages_reads_back_in_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let msgs: Vec<Message> = (0..20).map(|_| common::random_message(&mut rng)).collect();
    let mut wire = Vec::new();
    for m in &msgs {
        send_message(&mut wire, m).unwrap();
    }
    let mut r = Cursor::new(wire);
    for m in &msgs {
        assert_eq!(&recv_message(&mut r, u64::MAX).unwrap(), m);
    }
    assert!(matches!(recv_message(&mut r, u64::MAX), Err(ProtocolError::Closed)));
}
