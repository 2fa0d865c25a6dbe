#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(batch) = hypoc::data::parse_features(data) {
        let mut out = Vec::new();
        hypoc::data::write_features(&batch, &mut out).unwrap();
        let again = hypoc::data::parse_features(out.as_slice()).unwrap();
        assert_eq!(batch, again);
    }
});
