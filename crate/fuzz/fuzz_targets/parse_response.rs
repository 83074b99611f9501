#![no_main]

use libfuzzer_sys::fuzz_target;
use scrollnav::nav::parse::render_action;
use scrollnav::nav::parse_response;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let parsed = parse_response(text);
    assert_eq!(parsed.tag_flags.scroll_value, parsed.scroll.is_some());
    // A parsed action re-rendered must parse to the same action.
    if let Ok(action) = parsed.action() {
        let again = parse_response(&render_action("t", &action));
        assert_eq!(again.action(), Ok(action));
    }
});
