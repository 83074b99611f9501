#![no_main]

use libfuzzer_sys::fuzz_target;
use scrollnav::corpus::Corpus;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(corpus) = Corpus::from_jsonl(text) {
        let again = Corpus::from_jsonl(&corpus.to_jsonl()).expect("serialized corpus parses");
        assert_eq!(again, corpus);
    }
});
