//! Simulated grounding: executes sampled goals against a symbolic executor
//! and measures try-again success rates.
//!
//! The executor stands in for a low-level policy: it teleports the scene to
//! any valid goal configuration, except that it fails outright with
//! probability `p_fail` (and always fails on invalid goals). The protocols
//! then measure what the goal *generator* contributes: whether resampling a
//! different goal after a failure rescues the episode.

use std::collections::BTreeSet;

use rand::Rng;
use serde::Serialize;

use crate::goalgen::GoalSource;
use crate::instructions::{instruction_set, ExpressionKind, LogicalExpr, Sentence};
use crate::oracle::{compatible_set_expr, satisfied};
use crate::semantics::{is_valid, valid_configs, SemanticConfig};

/// How the executor treats valid goals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecutorMode {
    /// Every valid goal is reached; no randomness consumed.
    OracleSuccess,
    /// A valid goal is reached with probability `1 − p_fail`.
    Stochastic,
}

/// Executor behaviour: failure probability and mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecutorConfig {
    pub p_fail: f64,
    pub mode: ExecutorMode,
}

impl ExecutorConfig {
    pub fn oracle_success() -> Self {
        ExecutorConfig { p_fail: 0.0, mode: ExecutorMode::OracleSuccess }
    }

    pub fn stochastic(p_fail: f64) -> Self {
        assert!((0.0..=1.0).contains(&p_fail), "p_fail must lie in [0, 1]");
        ExecutorConfig { p_fail, mode: ExecutorMode::Stochastic }
    }
}

/// What one execution did to the scene. `achieved` is the configuration
/// afterwards — the goal on success, the unchanged input on failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecutionResult {
    Reached(SemanticConfig),
    Failed(SemanticConfig),
}

impl ExecutionResult {
    pub fn achieved(&self) -> &SemanticConfig {
        match self {
            ExecutionResult::Reached(c) | ExecutionResult::Failed(c) => c,
        }
    }

    pub fn reached(&self) -> bool {
        matches!(self, ExecutionResult::Reached(_))
    }
}

/// Attempts to reach `goal` from `c_current`. Invalid goals always fail and
/// leave the scene unchanged.
pub fn execute(
    c_current: &SemanticConfig,
    goal: &SemanticConfig,
    cfg: &ExecutorConfig,
    rng: &mut impl Rng,
) -> ExecutionResult {
    assert!(is_valid(c_current), "executor must start from a valid configuration");
    if !is_valid(goal) {
        return ExecutionResult::Failed(*c_current);
    }
    let fails = match cfg.mode {
        ExecutorMode::OracleSuccess => false,
        ExecutorMode::Stochastic => rng.gen::<f64>() < cfg.p_fail,
    };
    if fails {
        ExecutionResult::Failed(*c_current)
    } else {
        ExecutionResult::Reached(*goal)
    }
}

/// One episode's result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttemptOutcome {
    pub success: bool,
    pub attempts_used: usize,
    pub achieved: SemanticConfig,
}

/// Redraw budget for rejecting already-attempted goals within an episode;
/// after this many rejections a repeat is accepted.
pub const NOVELTY_REDRAWS: usize = 50;

/// Runs one try-again episode for a plain instruction: up to `max_attempts`
/// goal proposals (each novel within the episode, up to the redraw budget),
/// each executed from wherever the scene currently is. Success means the
/// scene ends up satisfying the sentence's shift relative to the original
/// `c_i`, and the episode stops there.
pub fn attempt_instruction(
    source: &mut impl GoalSource,
    cfg: &ExecutorConfig,
    c_i: &SemanticConfig,
    sentence: &Sentence,
    max_attempts: usize,
    rng: &mut impl Rng,
) -> AttemptOutcome {
    assert!(max_attempts >= 1, "need at least one attempt");
    let mut current = *c_i;
    let mut attempted: BTreeSet<SemanticConfig> = BTreeSet::new();
    for attempt in 1..=max_attempts {
        let mut goal = source.draw_goals(c_i, sentence, 1)[0];
        for _ in 0..NOVELTY_REDRAWS {
            if !attempted.contains(&goal) {
                break;
            }
            goal = source.draw_goals(c_i, sentence, 1)[0];
        }
        attempted.insert(goal);
        current = *execute(&current, &goal, cfg, rng).achieved();
        if sentence.meaning.shifted(c_i, &current) {
            return AttemptOutcome { success: true, attempts_used: attempt, achieved: current };
        }
    }
    AttemptOutcome { success: false, attempts_used: max_attempts, achieved: current }
}

/// Aggregate success rates after one attempt and after the full budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SuccessRates {
    pub sr1: f64,
    pub sr5: f64,
    pub episodes: usize,
}

fn rates(outcomes: &[AttemptOutcome]) -> SuccessRates {
    let n = outcomes.len() as f64;
    SuccessRates {
        sr1: outcomes.iter().filter(|o| o.success && o.attempts_used == 1).count() as f64 / n,
        sr5: outcomes.iter().filter(|o| o.success).count() as f64 / n,
        episodes: outcomes.len(),
    }
}

fn pick<'a, T>(items: &'a [T], rng: &mut impl Rng) -> &'a T {
    &items[rng.gen_range(0..items.len())]
}

/// The 102-instruction benchmark: each sentence is attempted
/// `episodes_per_sentence` times, each episode from a fresh initial
/// configuration drawn uniformly among the configurations the shift applies
/// to, with a 5-attempt budget.
pub fn transition_protocol(
    source: &mut impl GoalSource,
    cfg: &ExecutorConfig,
    episodes_per_sentence: usize,
    rng: &mut impl Rng,
) -> SuccessRates {
    assert!(episodes_per_sentence >= 1, "need at least one episode per sentence");
    let mut outcomes = Vec::with_capacity(102 * episodes_per_sentence);
    for sentence in instruction_set().sentences() {
        let starts: Vec<&SemanticConfig> =
            valid_configs().iter().filter(|c| sentence.meaning.applies_to(c)).collect();
        for _ in 0..episodes_per_sentence {
            let c_i = *pick(&starts, rng);
            outcomes.push(attempt_instruction(source, cfg, c_i, sentence, 5, rng));
        }
    }
    rates(&outcomes)
}

/// Expression episode counts per kind for `n` episodes, in the benchmark's
/// 1:2:2 proportions.
fn kind_counts(n: usize) -> [usize; 3] {
    let k1 = n / 5;
    let k2 = 2 * n / 5;
    [k1, k2, n - k1 - k2]
}

/// Runs one try-again episode for a logical expression. Goal proposals come
/// from the generator conditioned on a uniformly-chosen leaf and are
/// filtered by expression satisfaction; if the proposal budget runs dry the
/// last (unfiltered) draw is attempted anyway. Success means the scene ends
/// up satisfying the expression relative to the original `c_i`.
fn attempt_expression(
    source: &mut impl GoalSource,
    cfg: &ExecutorConfig,
    c_i: &SemanticConfig,
    expr: &LogicalExpr,
    max_attempts: usize,
    rng: &mut impl Rng,
) -> AttemptOutcome {
    let leaves = expr.leaves();
    let mut current = *c_i;
    let mut attempted: BTreeSet<SemanticConfig> = BTreeSet::new();
    for attempt in 1..=max_attempts {
        let mut goal = None;
        let mut fallback = None;
        for _ in 0..NOVELTY_REDRAWS {
            let leaf = *pick(&leaves, rng);
            let draw = source.draw_goals(c_i, leaf, 1)[0];
            fallback = Some(draw);
            if satisfied(c_i, &draw, expr) && !attempted.contains(&draw) {
                goal = Some(draw);
                break;
            }
        }
        let goal = goal.unwrap_or_else(|| fallback.expect("at least one proposal was drawn"));
        attempted.insert(goal);
        current = *execute(&current, &goal, cfg, rng).achieved();
        if satisfied(c_i, &current, expr) {
            return AttemptOutcome { success: true, attempts_used: attempt, achieved: current };
        }
    }
    AttemptOutcome { success: false, attempts_used: max_attempts, achieved: current }
}

/// The logical-expression benchmark: `n_expr` episodes over freshly sampled
/// expressions (kinds mixed 1:2:2), each from a fresh uniform valid initial
/// configuration. Expression/configuration pairs whose compatible set is
/// empty are resampled before evaluation.
pub fn expression_protocol(
    source: &mut impl GoalSource,
    cfg: &ExecutorConfig,
    n_expr: usize,
    rng: &mut impl Rng,
) -> SuccessRates {
    assert!(n_expr >= 1, "need at least one expression");
    let set = instruction_set();
    let mut outcomes = Vec::with_capacity(n_expr);
    for (kind, count) in ExpressionKind::ALL.into_iter().zip(kind_counts(n_expr)) {
        for _ in 0..count {
            let (c_i, expr) = loop {
                let c_i = *pick(valid_configs(), rng);
                let expr = set.sample_expression(kind, rng);
                if !compatible_set_expr(&c_i, &expr).is_empty() {
                    break (c_i, expr);
                }
            };
            outcomes.push(attempt_expression(source, cfg, &c_i, &expr, 5, rng));
        }
    }
    rates(&outcomes)
}

/// Sequence benchmark result: mean consecutive successes before the first
/// failure, capped per sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SequenceOutcome {
    pub mean_successes: f64,
    pub sequences: usize,
    pub cap: usize,
}

/// Success cap per sequence.
pub const SEQUENCE_CAP: usize = 50;

/// The no-reset benchmark: from a uniform valid start, repeatedly draw a
/// uniformly random instruction applicable to the *current* configuration
/// and run a 5-attempt episode from it; count consecutive successes until
/// the first failed episode (capped at [`SEQUENCE_CAP`]).
pub fn sequence_protocol(
    source: &mut impl GoalSource,
    cfg: &ExecutorConfig,
    n_seq: usize,
    rng: &mut impl Rng,
) -> SequenceOutcome {
    assert!(n_seq >= 1, "need at least one sequence");
    let set = instruction_set();
    let mut total = 0usize;
    for _ in 0..n_seq {
        let mut current = *pick(valid_configs(), rng);
        let mut successes = 0usize;
        while successes < SEQUENCE_CAP {
            let applicable: Vec<&Sentence> =
                set.sentences().iter().filter(|s| s.meaning.applies_to(&current)).collect();
            let sentence = *pick(&applicable, rng);
            let outcome = attempt_instruction(source, cfg, &current, sentence, 5, rng);
            current = outcome.achieved;
            if !outcome.success {
                break;
            }
            successes += 1;
        }
        total += successes;
    }
    SequenceOutcome { mean_successes: total as f64 / n_seq as f64, sequences: n_seq, cap: SEQUENCE_CAP }
}

/// Protocol run serialized for reports: `sr1`/`sr5` for the attempt-based
/// protocols, `n_s` for sequences.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProtocolReport {
    pub protocol: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sr1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sr5: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_s: Option<f64>,
    pub episodes: usize,
    pub p_fail: f64,
    pub seed: u64,
}

impl SuccessRates {
    pub fn report(&self, protocol: &'static str, cfg: &ExecutorConfig, seed: u64) -> ProtocolReport {
        ProtocolReport {
            protocol,
            sr1: Some(self.sr1),
            sr5: Some(self.sr5),
            n_s: None,
            episodes: self.episodes,
            p_fail: cfg.p_fail,
            seed,
        }
    }
}

impl SequenceOutcome {
    pub fn report(&self, cfg: &ExecutorConfig, seed: u64) -> ProtocolReport {
        ProtocolReport {
            protocol: "sequence",
            sr1: None,
            sr5: None,
            n_s: Some(self.mean_successes),
            episodes: self.sequences,
            p_fail: cfg.p_fail,
            seed,
        }
    }
}
