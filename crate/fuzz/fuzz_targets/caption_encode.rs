#![no_main]
use hornet::text::{tokenize, Vocabulary};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    let corpus: Vec<&str> = s.lines().collect();
    let Ok(vocab) = Vocabulary::build(&corpus, 1) else { return };
    for line in &corpus {
        let seq = vocab.encode(line);
        assert!(!seq.is_empty());
        assert!(seq.ids().iter().all(|&id| id < vocab.len()));
        // Every corpus word is in the vocabulary, so decoding is lossless.
        assert_eq!(vocab.encode(&vocab.decode(&seq)), seq);
        let tokens = tokenize(line);
        if !tokens.is_empty() {
            assert_eq!(vocab.decode(&seq), tokens.join(" "));
        }
    }
});
