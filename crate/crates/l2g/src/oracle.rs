//! Brute-force ground truth over the 35-configuration universe.
//!
//! For an initial configuration and an instruction, the compatible set `C_f`
//! contains every valid final configuration whose instructed slot holds the
//! shift's target value — all other relations float freely. Logical
//! expressions extend this by set algebra: `and` intersects, `or` unions,
//! `not` complements within the valid set. [`build_oracle`] tabulates `C_f`
//! for every applicable (configuration, sentence) pair.

use std::collections::{BTreeSet, HashMap};

use thiserror::Error;

use crate::instructions::{instruction_set, LogicalExpr, Sentence, ShiftMeaning};
use crate::semantics::{is_valid, valid_configs, SemanticConfig};

/// Ground-truth compatible set for one (configuration, sentence) pair.
#[derive(Debug, Clone)]
pub struct OracleEntry {
    pub c_i: SemanticConfig,
    pub sentence: Sentence,
    pub c_f_set: BTreeSet<SemanticConfig>,
}

/// The requested shift cannot start from `c_i`: the slot already holds the
/// target value.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("shift {meaning} is not applicable at {c_i}")]
pub struct InapplicableShift {
    pub c_i: SemanticConfig,
    pub meaning: ShiftMeaning,
}

/// All valid final configurations compatible with applying `meaning` at
/// `c_i`: the instructed slot must land on the target value, everything else
/// is unconstrained.
///
/// `c_i` must be a valid configuration (caller contract).
pub fn compatible_set(
    c_i: &SemanticConfig,
    meaning: ShiftMeaning,
) -> Result<BTreeSet<SemanticConfig>, InapplicableShift> {
    assert!(is_valid(c_i), "compatible_set: {c_i} is not a valid configuration");
    if !meaning.applies_to(c_i) {
        return Err(InapplicableShift { c_i: *c_i, meaning });
    }
    Ok(target_filter(meaning))
}

/// The valid configurations whose instructed slot equals the target value.
fn target_filter(meaning: ShiftMeaning) -> BTreeSet<SemanticConfig> {
    valid_configs()
        .iter()
        .filter(|c| c.get(meaning.slot.index) == meaning.direction.target())
        .copied()
        .collect()
}

/// The tabulated oracle: one entry per applicable (valid `c_i`, sentence)
/// pair, ordered sentence-major (sentences in instruction-set order, initial
/// configurations in canonical order within each sentence).
#[derive(Debug, Clone)]
pub struct Oracle {
    entries: Vec<OracleEntry>,
    // (canonical config index, sentence index) → entry index.
    by_key: HashMap<(usize, usize), usize>,
}

/// Enumerates every applicable pair and its compatible set.
pub fn build_oracle() -> Oracle {
    let set = instruction_set();
    let mut entries = Vec::new();
    let mut by_key = HashMap::new();
    for (s_idx, sentence) in set.sentences().iter().enumerate() {
        for (c_idx, c_i) in valid_configs().iter().enumerate() {
            if !sentence.meaning.applies_to(c_i) {
                continue;
            }
            let c_f_set = compatible_set(c_i, sentence.meaning).expect("applicability checked");
            debug_assert!(!c_f_set.is_empty(), "every slot value occurs among the 35");
            by_key.insert((c_idx, s_idx), entries.len());
            entries.push(OracleEntry { c_i: *c_i, sentence: sentence.clone(), c_f_set });
        }
    }
    Oracle { entries, by_key }
}

impl Oracle {
    pub fn entries(&self) -> &[OracleEntry] {
        &self.entries
    }

    /// The entry for `(c_i, sentence text)`, if the pair is applicable.
    pub fn lookup(&self, c_i: &SemanticConfig, sentence_text: &str) -> Option<&OracleEntry> {
        let c_idx = valid_configs().binary_search(c_i).ok()?;
        let s_idx = instruction_set().index_of(sentence_text)?;
        self.by_key.get(&(c_idx, s_idx)).map(|&i| &self.entries[i])
    }
}

/// Whether the transition `c_i → c_f` satisfies the expression.
///
/// A leaf holds iff its slot moves from the shift's source value in `c_i` to
/// its target value in `c_f`; connectives are ordinary Boolean algebra.
pub fn satisfied(c_i: &SemanticConfig, c_f: &SemanticConfig, expr: &LogicalExpr) -> bool {
    match expr {
        LogicalExpr::Leaf(s) => s.meaning.shifted(c_i, c_f),
        LogicalExpr::Not(e) => !satisfied(c_i, c_f, e),
        LogicalExpr::And(l, r) => satisfied(c_i, c_f, l) && satisfied(c_i, c_f, r),
        LogicalExpr::Or(l, r) => satisfied(c_i, c_f, l) || satisfied(c_i, c_f, r),
    }
}

/// Goal-set algebra for expressions: intersection for `and`, union for `or`,
/// complement within the 35-config valid set for `not`.
///
/// Total: a leaf whose shift is inapplicable at `c_i` contributes the empty
/// set rather than an error, and the overall result may be empty.
pub fn compatible_set_expr(c_i: &SemanticConfig, expr: &LogicalExpr) -> BTreeSet<SemanticConfig> {
    match expr {
        LogicalExpr::Leaf(s) => {
            if s.meaning.applies_to(c_i) {
                target_filter(s.meaning)
            } else {
                BTreeSet::new()
            }
        }
        LogicalExpr::Not(e) => {
            let inner = compatible_set_expr(c_i, e);
            valid_configs().iter().filter(|c| !inner.contains(c)).copied().collect()
        }
        LogicalExpr::And(l, r) => {
            let left = compatible_set_expr(c_i, l);
            let right = compatible_set_expr(c_i, r);
            left.intersection(&right).copied().collect()
        }
        LogicalExpr::Or(l, r) => {
            let left = compatible_set_expr(c_i, l);
            let right = compatible_set_expr(c_i, r);
            left.union(&right).copied().collect()
        }
    }
}
