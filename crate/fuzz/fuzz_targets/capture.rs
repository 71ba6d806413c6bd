#![no_main]

use libfuzzer_sys::fuzz_target;
use polarimeter_core::wire::Capture;

fuzz_target!(|data: &str| {
    if let Ok(capture) = Capture::parse(data) {
        let text = capture.to_text();
        let again = Capture::parse(&text).expect("written capture parses");
        assert_eq!(again.to_text(), text);
    }
});
