#![no_main]

use dilate::forecast::Checkpoint;
use libfuzzer_sys::fuzz_target;

// input: u32 LE sidecar length, sidecar JSON, raw weights
fuzz_target!(|data: &[u8]| {
    let Some((len, rest)) = data.split_first_chunk::<4>() else { return };
    let len = u32::from_le_bytes(*len) as usize;
    if len > rest.len() {
        return;
    }
    let (sidecar, bin) = rest.split_at(len);
    if let Ok(ck) = Checkpoint::decode(sidecar, bin) {
        let _ = ck.model();
    }
});
