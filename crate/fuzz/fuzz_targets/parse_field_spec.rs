#![no_main]

use ffeq::gf::parse_field_spec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(f) = parse_field_spec(data) {
        assert!(f.q() >= 2 && f.q() <= 1024);
        assert_eq!(f.elements().count() as u64, f.q());
    }
});
