//! Replays the checked-in fuzz seeds through the same checks the fuzz
//! targets make, so they run on stable in every `cargo test`.

use std::fs;
use std::path::{Path, PathBuf};

use polarimeter_core::config::Config;
use polarimeter_core::countfile::CountFile;
use polarimeter_core::wire::{Capture, ServerMessage, WireCommand};

fn seeds(target: &str) -> Vec<(String, String)> {
    let dir: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, String)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|entry| {
            let path = entry.unwrap().path();
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            (name, fs::read_to_string(&path).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

/// Seeds named for a failure are expected to be rejected.
fn should_fail(name: &str) -> bool {
    name.starts_with("not_") || name.starts_with("unknown_")
}

#[test]
fn counts_file_seeds() {
    for (name, text) in seeds("counts_file") {
        let file = CountFile::parse(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        let written = file.to_text();
        assert_eq!(CountFile::parse(&written).unwrap().to_text(), written, "{name}");
    }
}

#[test]
fn config_seeds() {
    for (name, text) in seeds("config") {
        let config = Config::parse(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        let written = config.to_toml();
        assert_eq!(Config::parse(&written).unwrap(), config, "{name}");
    }
}

#[test]
fn wire_command_seeds() {
    for (name, text) in seeds("wire_command") {
        match WireCommand::decode(&text) {
            Ok(cmd) => {
                assert!(!should_fail(&name), "{name} decoded");
                assert_eq!(WireCommand::decode(&cmd.encode()).unwrap(), cmd, "{name}");
            }
            Err(e) => assert!(should_fail(&name), "{name}: {e}"),
        }
    }
}

#[test]
fn server_message_seeds() {
    let mut kinds = Vec::new();
    for (name, text) in seeds("server_message") {
        let message = ServerMessage::decode(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        let written = match &message {
            ServerMessage::Hello(h) => h.encode(),
            ServerMessage::Frame(f) => f.encode(),
            ServerMessage::Ack(a) => a.encode(),
        };
        // seeds are stored exactly as the server sends them
        assert_eq!(written, text, "{name}");
        assert_eq!(ServerMessage::decode(&written).unwrap(), message, "{name}");
        kinds.push(std::mem::discriminant(&message));
    }
    kinds.dedup();
    assert_eq!(kinds.len(), 3, "seeds cover hello, frame and ack");
}

#[test]
fn capture_seeds() {
    for (name, text) in seeds("capture") {
        let capture = Capture::parse(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(capture.to_text(), text, "{name}");
    }
}
