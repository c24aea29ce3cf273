#![no_main]

use das_core::tag::PublicParams;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(pp) = PublicParams::from_bytes(data) {
        assert_eq!(PublicParams::from_bytes(&pp.to_bytes()).unwrap(), pp);
    }
});
