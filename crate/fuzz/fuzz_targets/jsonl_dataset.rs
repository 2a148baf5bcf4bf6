#![no_main]

use libfuzzer_sys::fuzz_target;
use sacti_core::text::{parse_jsonl_dataset, write_jsonl_dataset};

fuzz_target!(|data: &[u8]| {
    if let Ok(instances) = parse_jsonl_dataset(data) {
        let mut buf = Vec::new();
        write_jsonl_dataset(&mut buf, &instances).unwrap();
        assert_eq!(parse_jsonl_dataset(&buf[..]).unwrap(), instances);
    }
});
