#![no_main]

use libfuzzer_sys::fuzz_target;
use rkhs_gp::io::parse_measure_csv;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = parse_measure_csv(text) {
        assert_eq!(m.atoms.len(), m.weights.len());
        assert!(m.weights.iter().all(|w| w.is_finite()));
    }
});
