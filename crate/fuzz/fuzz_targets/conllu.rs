#![no_main]

use libfuzzer_sys::fuzz_target;
use sacti_core::text::{parse_conllu, write_conllu};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(sentences) = parse_conllu(text) {
        let written = write_conllu(&sentences);
        assert_eq!(parse_conllu(&written).unwrap(), sentences);
    }
});
