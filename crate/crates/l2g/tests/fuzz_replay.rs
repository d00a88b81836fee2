//! Replays the checked-in fuzz corpus through the fuzz-target bodies.
//!
//! The fuzz targets themselves need a nightly toolchain (`cargo fuzz run
//! <target>`); this test keeps their entry points and seed corpora honest on
//! stable by asserting that no seed panics.

use std::path::PathBuf;

fn corpus_dir(target: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target)
}

fn replay(target: &str, body: fn(&[u8])) {
    let dir = corpus_dir(target);
    let entries: Vec<PathBuf> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("corpus dir {} must exist: {e}", dir.display()))
        .map(|entry| entry.expect("readable dir entry").path())
        .filter(|p| p.is_file())
        .collect();
    assert!(!entries.is_empty(), "corpus {} must have seeds", dir.display());
    for path in entries {
        let data = std::fs::read(&path).expect("seed readable");
        // The assertion is simply "does not panic"; the bodies carry their
        // own invariant checks on the accept path.
        body(&data);
    }
}

#[test]
fn semantic_config_seeds_replay() {
    replay("semantic_config", l2g::fuzzing::fuzz_semantic_config);
}

#[test]
fn expression_seeds_replay() {
    replay("expression", l2g::fuzzing::fuzz_expression);
}

#[test]
fn tokenize_seeds_replay() {
    replay("tokenize", l2g::fuzzing::fuzz_tokenize);
}

#[test]
fn model_file_seeds_replay() {
    replay("model_file", l2g::fuzzing::fuzz_model_file);
}

#[test]
fn triplets_seeds_replay() {
    replay("triplets", l2g::fuzzing::fuzz_triplets);
}

#[test]
fn config_file_seeds_replay() {
    replay("config_file", l2g::fuzzing::fuzz_config_file);
}

#[test]
fn every_fuzz_target_has_a_wrapper_and_corpus() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz");
    for target in
        ["semantic_config", "expression", "tokenize", "model_file", "triplets", "config_file"]
    {
        let wrapper = root.join("fuzz_targets").join(format!("{target}.rs"));
        assert!(wrapper.is_file(), "{} missing", wrapper.display());
        let text = std::fs::read_to_string(&wrapper).unwrap();
        assert!(
            text.contains(&format!("fuzz_{target}(data)")),
            "{} must call its body",
            wrapper.display(),
        );
    }
}
