#![no_main]

use libfuzzer_sys::fuzz_target;
use polarimeter_core::wire::ServerMessage;

fuzz_target!(|data: &str| {
    if let Ok(message) = ServerMessage::decode(data) {
        let text = match &message {
            ServerMessage::Hello(h) => h.encode(),
            ServerMessage::Frame(f) => f.encode(),
            ServerMessage::Ack(a) => a.encode(),
        };
        let again = ServerMessage::decode(&text).expect("encoded message decodes");
        if let (ServerMessage::Frame(a), ServerMessage::Frame(b)) = (&message, &again) {
            assert_eq!(a.encode(), b.encode());
        }
    }
});
