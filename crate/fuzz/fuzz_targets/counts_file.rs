#![no_main]

use libfuzzer_sys::fuzz_target;
use polarimeter_core::countfile::CountFile;

fuzz_target!(|data: &str| {
    if let Ok(file) = CountFile::parse(data) {
        let text = file.to_text();
        let again = CountFile::parse(&text).expect("written counts file parses");
        assert_eq!(again.to_text(), text);
    }
});
