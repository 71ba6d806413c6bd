#![no_main]

use libfuzzer_sys::fuzz_target;
use polarimeter_core::wire::WireCommand;

fuzz_target!(|data: &str| {
    // rejected commands must still come back as an error, never a panic
    if let Ok(cmd) = WireCommand::decode(data) {
        let text = cmd.encode();
        assert_eq!(WireCommand::decode(&text).expect("encoded command decodes"), cmd);
    }
});
