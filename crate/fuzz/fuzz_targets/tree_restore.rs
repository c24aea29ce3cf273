#![no_main]

use das_core::IbltTree;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(tree) = IbltTree::restore(data) {
        assert_eq!(tree.snapshot(), data);
        assert!(tree.check_consistency().is_ok());
    }
});
