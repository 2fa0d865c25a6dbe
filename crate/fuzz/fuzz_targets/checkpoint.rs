#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cp) = hypoc::trainer::Checkpoint::from_json_str(text) {
        let again = hypoc::trainer::Checkpoint::from_json_str(&cp.to_json()).unwrap();
        assert_eq!(cp, again);
    }
});
