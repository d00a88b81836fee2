//! Compatibility Probability and Coverage over the five test sets.
//!
//! Both metrics ask the generator for goals and score them against the
//! brute-force compatible set: CP is the fraction of draws that land inside
//! it, Coverage the fraction of it hit at least once. Sampled configurations
//! that are invalid simply count as misses — validity is measured, never
//! enforced.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::SplitSpec;
use crate::goalgen::{CVAEModel, GoalSource, ModelSampler};
use crate::oracle::{Oracle, OracleEntry};
use crate::semantics::SemanticConfig;

/// Fraction of `n` drawn goals that belong to the entry's compatible set.
pub fn compatibility_probability(
    source: &mut impl GoalSource,
    entry: &OracleEntry,
    n: usize,
) -> f64 {
    assert!(n >= 1, "need at least one draw");
    let draws = source.draw_goals(&entry.c_i, &entry.sentence, n);
    let hits = draws.iter().filter(|g| entry.c_f_set.contains(g)).count();
    hits as f64 / n as f64
}

/// Fraction of the entry's compatible set hit at least once in `n` draws.
pub fn coverage(source: &mut impl GoalSource, entry: &OracleEntry, n: usize) -> f64 {
    assert!(n >= 1, "need at least one draw");
    let draws = source.draw_goals(&entry.c_i, &entry.sentence, n);
    let distinct: std::collections::BTreeSet<&SemanticConfig> =
        draws.iter().filter(|g| entry.c_f_set.contains(g)).collect();
    distinct.len() as f64 / entry.c_f_set.len() as f64
}

/// Mean metrics for one test set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TestSetReport {
    pub test_id: usize,
    pub cp_mean: f64,
    pub cov_mean: f64,
    pub n_entries: usize,
}

/// The full Table-1-style evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub seed: u64,
    pub n: usize,
    pub tests: Vec<TestSetReport>,
}

/// A test pair had no oracle entry — its sentence does not apply to its
/// initial configuration.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no oracle entry for ({c_i}, {sentence:?})")]
pub struct MissingOracleEntry {
    pub c_i: SemanticConfig,
    pub sentence: String,
}

/// Averages CP and Coverage over every entry of every test set, drawing `n`
/// goals per metric. Each entry gets its own generator stream seeded
/// `seed ⊕ entry_index` (entries numbered consecutively across test sets),
/// so results are independent of `workers`; passing `workers > 1` fans the
/// per-entry work out across threads.
pub fn evaluate_testsets(
    model: &CVAEModel,
    oracle: &Oracle,
    splits: &SplitSpec,
    n: usize,
    seed: u64,
    workers: usize,
) -> Result<EvalReport, MissingOracleEntry> {
    assert!(n >= 1 && workers >= 1, "draw count and worker count must be positive");

    // Resolve every pair up front so missing entries fail fast.
    let mut flat: Vec<(usize, &OracleEntry)> = Vec::new();
    for pairs in &splits.tests {
        assert!(!pairs.is_empty(), "every test set must contain entries");
        for p in pairs {
            let entry =
                oracle.lookup(&p.c_i, &p.sentence.text).ok_or_else(|| MissingOracleEntry {
                    c_i: p.c_i,
                    sentence: p.sentence.text.clone(),
                })?;
            flat.push((flat.len(), entry));
        }
    }

    let score = |(idx, entry): &(usize, &OracleEntry)| -> (f64, f64) {
        let rng = ChaCha8Rng::seed_from_u64(seed ^ *idx as u64);
        let mut source = ModelSampler::new(model, rng);
        let cp = compatibility_probability(&mut source, entry, n);
        let cov = coverage(&mut source, entry, n);
        (cp, cov)
    };

    let scores: Vec<(f64, f64)> = if workers == 1 {
        flat.iter().map(score).collect()
    } else {
        let chunk = flat.len().div_ceil(workers);
        let mut out = vec![(0.0, 0.0); flat.len()];
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for (chunk_no, entries) in flat.chunks(chunk).enumerate() {
                handles.push((chunk_no, scope.spawn(move || entries.iter().map(score).collect::<Vec<_>>())));
            }
            for (chunk_no, handle) in handles {
                let part = handle.join().expect("evaluation worker panicked");
                out[chunk_no * chunk..chunk_no * chunk + part.len()].copy_from_slice(&part);
            }
        });
        out
    };

    let mut tests = Vec::with_capacity(splits.tests.len());
    let mut offset = 0;
    for (i, pairs) in splits.tests.iter().enumerate() {
        let slice = &scores[offset..offset + pairs.len()];
        offset += pairs.len();
        let m = pairs.len() as f64;
        tests.push(TestSetReport {
            test_id: i + 1,
            cp_mean: slice.iter().map(|(cp, _)| cp).sum::<f64>() / m,
            cov_mean: slice.iter().map(|(_, cov)| cov).sum::<f64>() / m,
            n_entries: pairs.len(),
        });
    }
    Ok(EvalReport { seed, n, tests })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_splits, generate_dataset, TestPair};
    use crate::goalgen::Hyperparams;
    use crate::instructions::{instruction_set, Sentence};
    use crate::oracle::build_oracle;
    use rand::Rng;

    /// Emits one fixed configuration forever.
    struct Always(SemanticConfig);

    impl GoalSource for Always {
        fn draw_goals(&mut self, _: &SemanticConfig, _: &Sentence, n: usize) -> Vec<SemanticConfig> {
            vec![self.0; n]
        }
    }

    /// Cycles through a fixed list.
    struct Cycle(Vec<SemanticConfig>);

    impl GoalSource for Cycle {
        fn draw_goals(&mut self, _: &SemanticConfig, _: &Sentence, n: usize) -> Vec<SemanticConfig> {
            (0..n).map(|i| self.0[i % self.0.len()]).collect()
        }
    }

    fn some_entry() -> &'static OracleEntry {
        let oracle = Box::leak(Box::new(build_oracle()));
        oracle
            .lookup(&"000000000".parse().unwrap(), "put red close_to green")
            .expect("applicable pair")
    }

    #[test]
    fn degenerate_sources_pin_the_metric_endpoints() {
        let entry = some_entry();
        let member = *entry.c_f_set.iter().next().unwrap();
        assert_eq!(compatibility_probability(&mut Always(member), entry, 100), 1.0);

        // All-zero is valid but has the instructed slot at 0, so it is
        // outside this compatible set.
        let zero: SemanticConfig = "000000000".parse().unwrap();
        assert!(!entry.c_f_set.contains(&zero));
        assert_eq!(compatibility_probability(&mut Always(zero), entry, 100), 0.0);
        assert_eq!(coverage(&mut Always(zero), entry, 100), 0.0);

        let everything: Vec<SemanticConfig> = entry.c_f_set.iter().cloned().collect();
        assert!(everything.len() <= 100);
        assert_eq!(coverage(&mut Cycle(everything), entry, 100), 1.0);

        let one_member = coverage(&mut Always(member), entry, 100);
        assert!((one_member - 1.0 / entry.c_f_set.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn singleton_compatible_set_is_covered_by_a_single_hit() {
        let base = some_entry();
        let target = *base.c_f_set.iter().next().unwrap();
        let entry = OracleEntry {
            c_i: base.c_i,
            sentence: base.sentence.clone(),
            c_f_set: [target].into_iter().collect(),
        };
        assert_eq!(coverage(&mut Always(target), &entry, 100), 1.0);
    }

    fn tiny_model() -> CVAEModel {
        let hp = Hyperparams { hidden: 12, latent: 5, embed: 8, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        CVAEModel::new(&hp, &mut rng)
    }

    #[test]
    fn coverage_is_monotone_in_the_draw_count_for_a_shared_prefix() {
        let model = tiny_model();
        let entry = some_entry();
        let cov_at = |n: usize| {
            let mut source = ModelSampler::new(&model, ChaCha8Rng::seed_from_u64(5));
            coverage(&mut source, entry, n)
        };
        let (c10, c40, c160) = (cov_at(10), cov_at(40), cov_at(160));
        assert!(c10 <= c40 && c40 <= c160, "{c10} {c40} {c160}");
    }

    #[test]
    fn report_covers_all_five_sets_independent_of_worker_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let data = generate_dataset(400, &mut rng);
        let splits = build_splits(&data);
        let oracle = build_oracle();
        let model = tiny_model();

        let serial = evaluate_testsets(&model, &oracle, &splits, 20, 9, 1).unwrap();
        assert_eq!(serial.tests.len(), 5);
        for (i, t) in serial.tests.iter().enumerate() {
            assert_eq!(t.test_id, i + 1);
            assert_eq!(t.n_entries, splits.tests[i].len());
            assert!((0.0..=1.0).contains(&t.cp_mean));
            assert!((0.0..=1.0).contains(&t.cov_mean));
        }

        let fanned = evaluate_testsets(&model, &oracle, &splits, 20, 9, 3).unwrap();
        assert_eq!(serial, fanned, "per-entry seeding makes workers invisible");

        let rerun = evaluate_testsets(&model, &oracle, &splits, 20, 9, 1).unwrap();
        assert_eq!(serial, rerun);

        let other_seed = evaluate_testsets(&model, &oracle, &splits, 20, 10, 1).unwrap();
        assert_ne!(serial, other_seed, "the seed matters");
    }

    #[test]
    fn inapplicable_pairs_are_reported_as_missing() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let data = generate_dataset(200, &mut rng);
        let mut splits = build_splits(&data);
        let bogus = TestPair {
            c_i: "100000000".parse().unwrap(),
            sentence: instruction_set().find("put red close_to green").unwrap().clone(),
        };
        splits.tests[1].push(bogus.clone());

        let oracle = build_oracle();
        let err = evaluate_testsets(&tiny_model(), &oracle, &splits, 10, 0, 1).unwrap_err();
        assert_eq!(err.c_i, bogus.c_i);
        assert_eq!(err.sentence, "put red close_to green");
    }

    #[test]
    fn report_serializes_with_the_pinned_field_names() {
        let report = EvalReport {
            seed: 3,
            n: 100,
            tests: vec![TestSetReport { test_id: 1, cp_mean: 0.5, cov_mean: 0.25, n_entries: 7 }],
        };
        let json = serde_json::to_string(&report).unwrap();
        assert_eq!(
            json,
            r#"{"seed":3,"n":100,"tests":[{"test_id":1,"cp_mean":0.5,"cov_mean":0.25,"n_entries":7}]}"#,
        );
    }

    /// The metric helpers accept any rng type, not just ChaCha.
    #[test]
    fn model_sampler_is_generic_over_rngs() {
        let model = tiny_model();
        let entry = some_entry();
        let mut thread = rand::thread_rng();
        let seed: u64 = thread.gen();
        let mut source = ModelSampler::new(&model, ChaCha8Rng::seed_from_u64(seed));
        let cp = compatibility_probability(&mut source, entry, 10);
        assert!((0.0..=1.0).contains(&cp));
    }
}
