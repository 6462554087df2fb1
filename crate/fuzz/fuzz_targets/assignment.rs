#![no_main]

use libfuzzer_sys::fuzz_target;

// First byte is the row count the assignment must cover.
fuzz_target!(|data: &[u8]| {
    let Some((&n, rest)) = data.split_first() else { return };
    if let Ok(text) = std::str::from_utf8(rest) {
        let _ = disk_core::formats::parse_assignment(text, n as usize, "fuzz");
    }
});
