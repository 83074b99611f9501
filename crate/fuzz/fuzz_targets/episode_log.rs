#![no_main]

use libfuzzer_sys::fuzz_target;
use scrollnav::episode_log::{parse_log, write_log};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(log) = parse_log(text) {
        let written = write_log(&log.policy, &log.config, &log.episodes);
        let again = parse_log(&written).expect("written logs parse");
        assert_eq!(again, log);
    }
});
