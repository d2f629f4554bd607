#![no_main]

use ffeq::gf::Field;
use ffeq::modgroup::SubgroupSpec;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let f = Field::prime(3).unwrap();
    if let Ok(g) = SubgroupSpec::parse(data, &f) {
        let again = SubgroupSpec::parse(&g.describe(&f), &f).unwrap();
        assert_eq!(again.describe(&f), g.describe(&f));
    }
});
