#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = hypoc::config::TrainConfig::from_json_str(text) {
        let again = hypoc::config::TrainConfig::from_json_str(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again);
    }
});
