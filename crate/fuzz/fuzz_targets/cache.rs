#![no_main]

use dilate::data::{decode_split, encode_split};
use libfuzzer_sys::fuzz_target;

// input: u32 LE sidecar length, sidecar JSON, raw payload
fuzz_target!(|data: &[u8]| {
    let Some((len, rest)) = data.split_first_chunk::<4>() else { return };
    let len = u32::from_le_bytes(*len) as usize;
    if len > rest.len() {
        return;
    }
    let (sidecar, bin) = rest.split_at(len);
    if let Ok(split) = decode_split(sidecar, bin) {
        let (s2, b2) = encode_split(&split).expect("decoded split re-encodes");
        assert_eq!(decode_split(&s2, &b2).expect("roundtrip"), split);
    }
});
