#![no_main]

use ffeq::expcli::parse_quad;
use ffeq::gf::Field;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let f = Field::prime(3).unwrap();
    if let Ok(x) = parse_quad(data, &f) {
        assert_eq!(x.conj(&f).conj(&f), x);
        assert!(x.c().is_monic());
    }
});
