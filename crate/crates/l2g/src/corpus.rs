//! Social-partner data collection and the five train/test splits.
//!
//! The simulated partner watches a transition between two valid
//! configurations and utters one sentence: it picks one changed predicate
//! uniformly, then one template for that meaning uniformly. Datasets are
//! lists of (initial, final, sentence) triplets drawn from uniform random
//! transitions; splits hold out specific (initial, sentence) pairs to probe
//! generalization.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instructions::{instruction_set, Sentence};
use crate::semantics::{diff, is_valid, valid_configs, SemanticConfig};

/// One observed transition and the partner's description of it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triplet {
    pub c_i: SemanticConfig,
    pub c_f: SemanticConfig,
    pub sentence: Sentence,
}

/// A held-out evaluation input: initial configuration plus instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestPair {
    pub c_i: SemanticConfig,
    pub sentence: Sentence,
}

/// The training triplets and the five test-pair lists (ids 1–5 at indices
/// 0–4).
#[derive(Debug, Clone)]
pub struct SplitSpec {
    pub train: Vec<Triplet>,
    pub tests: [Vec<TestPair>; 5],
}

/// The partner has nothing to describe: the configurations are equal.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("configurations are identical ({0}); nothing to describe")]
pub struct NoChangeError(pub SemanticConfig);

/// Picks one changed predicate uniformly, then one of its templates
/// uniformly.
pub fn social_partner_describe(
    c_i: &SemanticConfig,
    c_f: &SemanticConfig,
    rng: &mut impl Rng,
) -> Result<Sentence, NoChangeError> {
    let changes = diff(c_i, c_f);
    if changes.is_empty() {
        return Err(NoChangeError(*c_i));
    }
    let (slot, direction) = changes[rng.gen_range(0..changes.len())];
    let set = instruction_set();
    let group = set.with_meaning(crate::instructions::ShiftMeaning { slot, direction });
    debug_assert!(!group.is_empty(), "every meaning has templates");
    let idx = group[rng.gen_range(0..group.len())];
    Ok(set.sentences()[idx].clone())
}

/// Draws `n` triplets: initial configuration uniform over the 35 valid
/// configs, final uniform over the remaining 34, sentence from the partner.
pub fn generate_dataset(n: usize, rng: &mut impl Rng) -> Vec<Triplet> {
    assert!(n >= 1, "dataset size must be at least 1");
    let valid = valid_configs();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let i = rng.gen_range(0..valid.len());
        let mut j = rng.gen_range(0..valid.len() - 1);
        if j >= i {
            j += 1;
        }
        let (c_i, c_f) = (valid[i], valid[j]);
        let sentence =
            social_partner_describe(&c_i, &c_f, rng).expect("distinct configs always differ");
        out.push(Triplet { c_i, c_f, sentence });
    }
    out
}

/// The held-out pair keys of tests 2–5, constructed from the split rules
/// (pinned pairs, pinned initial configuration, pinned sentences) over all
/// applicable (configuration, sentence) pairs.
fn holdout_tests() -> [Vec<TestPair>; 5] {
    let set = instruction_set();
    let pair = |ci: &str, s: &str| TestPair {
        c_i: ci.parse().expect("literal config"),
        sentence: set.find(s).expect("literal sentence").clone(),
    };

    let test2 = vec![
        pair("010000000", "put blue close_to green"),
        pair("001000000", "put green below red"),
    ];

    let c3: SemanticConfig = "110000000".parse().unwrap();
    let sentences4 = ["put green on_top_of red", "put blue far_from red"];

    // Test 5 first: the intersection pairs are removed from tests 3 and 4.
    let test5: Vec<TestPair> = sentences4.iter().map(|s| pair("110000000", s)).collect();

    let mut test3 = Vec::new();
    for sentence in set.sentences() {
        if sentence.meaning.applies_to(&c3) && !sentences4.contains(&sentence.text.as_str()) {
            test3.push(TestPair { c_i: c3, sentence: sentence.clone() });
        }
    }

    let mut test4 = Vec::new();
    for s in sentences4 {
        let sentence = set.find(s).expect("literal sentence");
        for c_i in valid_configs() {
            if sentence.meaning.applies_to(c_i) && *c_i != c3 {
                test4.push(TestPair { c_i: *c_i, sentence: sentence.clone() });
            }
        }
    }

    // Test 1 (index 0) is filled from the training remainder by
    // `build_splits`.
    [Vec::new(), test2, test3, test4, test5]
}

/// Builds the five splits from a dataset: removes every triplet whose
/// (initial config, sentence text) key is held out for tests 2–5, and makes
/// test 1 from the distinct keys that remain in train (in canonical order).
pub fn build_splits(dataset: &[Triplet]) -> SplitSpec {
    assert!(!dataset.is_empty(), "dataset must be nonempty");
    let mut tests = holdout_tests();
    let held: BTreeSet<(SemanticConfig, &str)> = tests[1..]
        .iter()
        .flatten()
        .map(|p| (p.c_i, p.sentence.text.as_str()))
        .collect();

    let train: Vec<Triplet> = dataset
        .iter()
        .filter(|t| !held.contains(&(t.c_i, t.sentence.text.as_str())))
        .cloned()
        .collect();

    let mut seen: BTreeSet<(SemanticConfig, &str)> = BTreeSet::new();
    for t in &train {
        seen.insert((t.c_i, t.sentence.text.as_str()));
    }
    let set = instruction_set();
    tests[0] = seen
        .into_iter()
        .map(|(c_i, text)| TestPair {
            c_i,
            sentence: set.find(text).expect("train sentences are members").clone(),
        })
        .collect();

    SplitSpec { train, tests }
}

/// On-disk JSONL row; fields are exactly `ci`, `cf`, `s`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TripletRecord {
    ci: SemanticConfig,
    cf: SemanticConfig,
    s: String,
}

/// Reading or validating a triplet file failed.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: configuration {config} is not physically valid")]
    InvalidConfig { line: usize, config: SemanticConfig },
    #[error("line {line}: {source}")]
    UnknownSentence {
        line: usize,
        #[source]
        source: crate::instructions::NotAnInstructionError,
    },
    #[error("line {line}: sentence {text:?} does not describe the change {ci} -> {cf}")]
    Inconsistent { line: usize, text: String, ci: SemanticConfig, cf: SemanticConfig },
}

/// Serializes triplets one JSON object per line.
pub fn write_jsonl(path: &Path, triplets: &[Triplet]) -> Result<(), CorpusError> {
    let mut out = BufWriter::new(File::create(path)?);
    for t in triplets {
        let record = TripletRecord { ci: t.c_i, cf: t.c_f, s: t.sentence.text.clone() };
        serde_json::to_writer(&mut out, &record)
            .map_err(|source| CorpusError::Json { line: 0, source })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Parses and fully validates a triplet stream: configurations must be
/// valid, sentences must be members of the instruction set, and each
/// sentence must truthfully describe one change of its transition.
pub fn parse_triplets(reader: impl BufRead) -> Result<Vec<Triplet>, CorpusError> {
    let set = instruction_set();
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TripletRecord = serde_json::from_str(&line)
            .map_err(|source| CorpusError::Json { line: line_no, source })?;
        for config in [record.ci, record.cf] {
            if !is_valid(&config) {
                return Err(CorpusError::InvalidConfig { line: line_no, config });
            }
        }
        let sentence = set
            .find(&record.s)
            .ok_or_else(|| CorpusError::UnknownSentence {
                line: line_no,
                source: crate::instructions::NotAnInstructionError(record.s.clone()),
            })?
            .clone();
        if !sentence.meaning.shifted(&record.ci, &record.cf) {
            return Err(CorpusError::Inconsistent {
                line: line_no,
                text: record.s,
                ci: record.ci,
                cf: record.cf,
            });
        }
        out.push(Triplet { c_i: record.ci, c_f: record.cf, sentence });
    }
    Ok(out)
}

/// Reads a JSONL triplet file written by [`write_jsonl`].
pub fn read_jsonl(path: &Path) -> Result<Vec<Triplet>, CorpusError> {
    parse_triplets(BufReader::new(File::open(path)?))
}

/// Split manifest: the held-out pair keys per test id, JSON-exportable.
#[derive(Debug, Serialize)]
pub struct SplitManifest {
    pub tests: Vec<TestManifest>,
}

#[derive(Debug, Serialize)]
pub struct TestManifest {
    pub test_id: usize,
    pub pairs: Vec<PairKey>,
}

#[derive(Debug, Serialize)]
pub struct PairKey {
    pub ci: SemanticConfig,
    pub s: String,
}

impl SplitSpec {
    pub fn manifest(&self) -> SplitManifest {
        SplitManifest {
            tests: self
                .tests
                .iter()
                .enumerate()
                .map(|(i, pairs)| TestManifest {
                    test_id: i + 1,
                    pairs: pairs
                        .iter()
                        .map(|p| PairKey { ci: p.c_i, s: p.sentence.text.clone() })
                        .collect(),
                })
                .collect(),
        }
    }
}
