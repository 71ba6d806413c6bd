#![no_main]

use libfuzzer_sys::fuzz_target;
use polarimeter_core::config::Config;

fuzz_target!(|data: &str| {
    if let Ok(config) = Config::parse(data) {
        let text = config.to_toml();
        let again = Config::parse(&text).expect("written config parses");
        assert_eq!(again.to_toml(), text);
    }
});
