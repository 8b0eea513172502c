use proptest::prelude::*;
use sifl::protocol::wire::{
    decode_message, encode_message, read_message, Kind, Message, Payload, WireError,
};

fn arb_message() -> impl Strategy<Value = Message> {
    let floats = prop::collection::vec(any::<f64>(), 2..64);
    prop_oneof![
        (any::<u32>(), any::<u16>()).prop_map(|(r, c)| Message::empty(Kind::Hello, r, c)),
        (any::<u32>(), any::<u16>()).prop_map(|(r, c)| Message::empty(Kind::Done, r, c)),
        (any::<u32>(), prop::collection::vec(any::<f64>(), 0..64))
            .prop_map(|(r, v)| Message::floats(Kind::Global, r, 0, v)),
        (any::<u32>(), any::<u16>(), floats.clone()).prop_map(|(r, c, v)| Message::floats(
            Kind::Update,
            r,
            c,
            v
        )),
        (any::<u32>(), floats).prop_map(|(r, v)| Message::floats(Kind::Aggregate, r, 0, v)),
        (any::<u16>(), prop::collection::vec(any::<u8>(), 1..128))
            .prop_map(|(c, b)| Message::keyset(c, b)),
    ]
}

fn bits(m: &Message) -> (u8, u32, u16, Vec<u64>) {
    let payload = match &m.payload {
        Payload::Floats(v) => v.iter().map(|x| x.to_bits()).collect(),
        Payload::Bytes(b) => b.iter().map(|&x| x as u64).collect(),
    };
    (m.kind as u8, m.round, m.client_id, payload)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn round_trip_is_bit_exact(m in arb_message()) {
        let bytes = encode_message(&m);
        let back = decode_message(&bytes).unwrap();
        prop_assert_eq!(bits(&back), bits(&m));
        let mut cursor = &bytes[..];
        prop_assert_eq!(bits(&read_message(&mut cursor).unwrap()), bits(&m));
    }

    #[test]
    fn every_strict_prefix_is_rejected(m in arb_message(), cut in any::<prop::sample::Index>()) {
        let bytes = encode_message(&m);
        let at = cut.index(bytes.len());
        let err = decode_message(&bytes[..at]).unwrap_err();
        let rejected = matches!(err, WireError::Truncated { .. });
        prop_assert!(rejected, "prefix {} gave {:?}", at, err);
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..80)) {
        let _ = decode_message(&bytes);
    }
}
