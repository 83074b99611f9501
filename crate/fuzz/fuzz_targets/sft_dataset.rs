#![no_main]

use libfuzzer_sys::fuzz_target;
use scrollnav::trajgen::read_sft_dataset;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = read_sft_dataset(text);
});
