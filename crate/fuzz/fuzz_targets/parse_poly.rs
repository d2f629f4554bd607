#![no_main]

use ffeq::gf::Field;
use ffeq::poly::parse_poly;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    for p in [2, 3, 5] {
        let f = Field::prime(p).unwrap();
        if let Ok(x) = parse_poly(data, &f) {
            assert_eq!(parse_poly(&x.format(&f), &f).unwrap(), x);
        }
    }
});
