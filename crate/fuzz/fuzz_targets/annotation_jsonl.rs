#![no_main]

use libfuzzer_sys::fuzz_target;
use sacti_core::text::{parse_annotation_jsonl, summarize_annotations, write_annotation_jsonl};

fuzz_target!(|data: &[u8]| {
    if let Ok(records) = parse_annotation_jsonl(data) {
        let mut buf = Vec::new();
        write_annotation_jsonl(&mut buf, &records).unwrap();
        assert_eq!(parse_annotation_jsonl(&buf[..]).unwrap(), records);
        let summary = summarize_annotations(&records, 2);
        for k in summary.kappa.iter().filter_map(|p| p.kappa) {
            assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&k));
        }
    }
});
