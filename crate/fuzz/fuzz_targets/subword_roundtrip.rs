#![no_main]

use libfuzzer_sys::fuzz_target;
use sacti_core::text::SubwordVocab;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Some((size, corpus)) = text.split_once('\n') else {
        return;
    };
    let Ok(size) = size.trim().parse::<usize>() else {
        return;
    };
    let tokens: Vec<&str> = corpus.split_whitespace().collect();
    if size > 4096 {
        return;
    }
    if let Ok(vocab) = SubwordVocab::train(tokens.iter().copied(), size) {
        for t in &tokens {
            assert_eq!(vocab.decode(&vocab.encode(t)), *t);
        }
    }
});
