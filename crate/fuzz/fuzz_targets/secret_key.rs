#![no_main]

use das_core::tag::SecretKey;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(sk) = SecretKey::from_bytes(data) {
        let again = SecretKey::from_bytes(&sk.to_bytes(true)).unwrap();
        assert_eq!(again.exponent(), sk.exponent());
    }
});
