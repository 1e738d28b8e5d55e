#![no_main]

use libfuzzer_sys::fuzz_target;
use rkhs_gp::io::parse_dataset_csv;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(d) = parse_dataset_csv(text) {
        if let Some(y) = &d.y {
            assert_eq!(d.x.len(), y.len());
            assert!(y.iter().all(|v| v.is_finite()));
        }
    }
});
