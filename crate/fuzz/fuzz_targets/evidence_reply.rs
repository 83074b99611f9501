#![no_main]

use libfuzzer_sys::fuzz_target;
use scrollnav::trajgen::parse_evidence_reply;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Some(pages) = parse_evidence_reply(text) {
        assert!(pages.windows(2).all(|w| w[0] < w[1]));
    }
});
