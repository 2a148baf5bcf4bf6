#![no_main]

use libfuzzer_sys::fuzz_target;
use sacti_cli::store::{JournalEntry, SettingsPatch, Submission};

fuzz_target!(|data: &[u8]| {
    let _ = serde_json::from_slice::<Submission>(data);
    let _ = serde_json::from_slice::<SettingsPatch>(data);
    if let Ok(entry) = serde_json::from_slice::<JournalEntry>(data) {
        let line = serde_json::to_vec(&entry).unwrap();
        assert_eq!(serde_json::from_slice::<JournalEntry>(&line).unwrap(), entry);
    }
});
