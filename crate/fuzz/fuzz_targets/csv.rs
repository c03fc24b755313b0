#![no_main]

use dilate::data::{parse_csv_series, window_series, Normalization};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(values) = parse_csv_series(text) {
        assert!(values.iter().all(|v| v.is_finite()));
        let _ = window_series(&values, 4, 2, 1, Normalization::Zscore, "fuzz");
    }
});
