#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let names = ["beta_1", "sigma2", "tau2", "phi"];
        let _ = disk_core::formats::parse_draws(text, Some(&names), "", "fuzz");
        let _ = disk_core::formats::parse_draws(text, None, "w_", "fuzz");
    }
});
