#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(kv) = disk_core::formats::parse_kv(text, "fuzz") {
        if let Ok(cfg) = disk_cli::RunConfig::from_kv(&kv) {
            // Accepted configs must survive a round trip.
            let text = cfg.to_kv();
            let again = disk_core::formats::parse_kv(&text, "round trip").unwrap();
            assert_eq!(disk_cli::RunConfig::from_kv(&again).unwrap().to_kv(), text);
        }
    }
});
