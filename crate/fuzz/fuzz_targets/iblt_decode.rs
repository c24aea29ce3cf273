#![no_main]

use das_core::Iblt;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(table) = Iblt::from_bytes(data) {
        assert_eq!(table.to_bytes(), data);
    }
});
