#![no_main]

use libfuzzer_sys::fuzz_target;
use scrollnav::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let mut cfg = RunConfig::default();
    if cfg.apply_kv(text).is_ok() {
        let mut again = RunConfig::default();
        again.apply_kv(&cfg.to_kv()).expect("serialized config parses");
        assert_eq!(again.as_map(), cfg.as_map());
    }
});
