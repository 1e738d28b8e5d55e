#![no_main]

use libfuzzer_sys::fuzz_target;
use rkhs_gp::kernels::parse_kernel;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(k) = parse_kernel(text) {
        // printed form must parse back to the same kernel
        let again = parse_kernel(&k.to_string()).expect("display output parses");
        assert_eq!(again.to_string(), k.to_string());
    }
});
