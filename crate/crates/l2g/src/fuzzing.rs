//! Bodies for the fuzz targets under `fuzz/`.
//!
//! Each function takes raw fuzzer bytes, drives one parser or decoder, and
//! asserts the invariants that must hold on the accept path (round-trips,
//! bounds). Keeping the bodies here — with the thin `fuzz_target!` wrappers
//! in the separate fuzz crate — lets the regular test suite replay the
//! checked-in corpus seeds without a nightly toolchain.

use std::io::BufReader;

use crate::config::parse_config;
use crate::corpus::parse_triplets;
use crate::goalgen::CVAEModel;
use crate::instructions::instruction_set;
use crate::semantics::{is_valid, valid_configs, SemanticConfig};

/// 9-bit configuration strings: accepted inputs must print back to
/// themselves and agree with the valid-set membership test.
pub fn fuzz_semantic_config(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = text.parse::<SemanticConfig>() {
        assert_eq!(config.to_string(), text, "parse/print must round-trip");
        assert_eq!(is_valid(&config), valid_configs().contains(&config));
    }
}

/// Logical-expression parser: accepted inputs must survive a print/parse
/// round-trip structurally unchanged.
pub fn fuzz_expression(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let set = instruction_set();
    if let Ok(expr) = set.parse_expression(text) {
        assert!(!expr.leaves().is_empty(), "expressions have at least one leaf");
        let printed = expr.to_string();
        let reparsed = set.parse_expression(&printed)
            .unwrap_or_else(|e| panic!("printed form {printed:?} must re-parse: {e}"));
        assert_eq!(reparsed, expr, "print/parse must round-trip");
    }
}

/// Sentence tokenizer: every token of an accepted sentence indexes the
/// vocabulary.
pub fn fuzz_tokenize(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let vocab = instruction_set().vocab();
    if let Ok(tokens) = vocab.tokenize(text) {
        assert!(tokens.iter().all(|&t| t < vocab.len()), "token ids stay in range");
    }
}

/// Weight-file decoder: arbitrary bytes must either load or fail with a
/// typed error — never panic, never over-read — and an accepted model must
/// re-serialize to bytes that load back identically.
pub fn fuzz_model_file(data: &[u8]) {
    if let Ok(model) = CVAEModel::load_from_bytes(data) {
        let bytes = model.save_to_bytes();
        let reloaded = CVAEModel::load_from_bytes(&bytes).expect("saved bytes load");
        assert_eq!(reloaded.save_to_bytes(), bytes, "save/load/save is stable");
    }
}

/// Dataset reader: every accepted row must carry the guarantees the parser
/// promises — valid configurations and a sentence that describes the change.
pub fn fuzz_triplets(data: &[u8]) {
    if let Ok(triplets) = parse_triplets(BufReader::new(data)) {
        for t in &triplets {
            assert!(is_valid(&t.c_i) && is_valid(&t.c_f), "accepted configs are valid");
            assert!(
                t.sentence.meaning.shifted(&t.c_i, &t.c_f),
                "accepted rows describe their own transition",
            );
        }
    }
}

/// Run-configuration parser: accepted files contain only syntactically legal
/// keys, and parsing is insensitive to trailing newlines.
pub fn fuzz_config_file(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(map) = parse_config(text) {
        for key in map.keys() {
            assert!(!key.is_empty());
            assert!(key
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.')));
        }
        let with_newline = format!("{text}\n");
        assert_eq!(parse_config(&with_newline), Ok(map));
    }
}
