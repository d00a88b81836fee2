//! The 102-sentence instruction set, its grammar, and logical expressions.
//!
//! Sentences are generated from per-pair templates: 8 close-establishing and
//! 8 close-dissolving templates over the three unordered pairs, 4
//! stack-building and 5 stack-dismantling templates over the six ordered
//! pairs — 24 + 24 + 24 + 30 = 102 distinct texts. Each sentence denotes a
//! [`ShiftMeaning`]: one predicate slot plus a transition direction. On top
//! of single instructions, [`LogicalExpr`] combines them with `and`/`or`/
//! `not`, parsed from a small brace-delimited surface syntax.

use std::collections::HashMap;
use std::fmt;
use std::sync::OnceLock;

use rand::Rng;
use thiserror::Error;

use crate::semantics::{slot_of, Direction, ObjectId, PredicateKind, PredicateSlot, SemanticConfig};

/// What a sentence asks for: flip `slot` in the given direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ShiftMeaning {
    pub slot: PredicateSlot,
    pub direction: Direction,
}

impl ShiftMeaning {
    /// True iff the shift can start from `c`: the slot currently holds the
    /// direction's source value.
    pub fn applies_to(&self, c: &SemanticConfig) -> bool {
        c.get(self.slot.index) == self.direction.source()
    }

    /// True iff the shift actually happened between the two configurations.
    pub fn shifted(&self, c_i: &SemanticConfig, c_f: &SemanticConfig) -> bool {
        c_i.get(self.slot.index) == self.direction.source()
            && c_f.get(self.slot.index) == self.direction.target()
    }
}

impl fmt::Display for ShiftMeaning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (a, b) = self.slot.pair;
        let kind = match self.slot.kind {
            PredicateKind::Close => "c",
            PredicateKind::Above => "a",
        };
        write!(f, "{kind}({},{}) {}", a.word(), b.word(), self.direction)
    }
}

/// One instruction sentence: lowercase text, vocabulary indices, meaning.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sentence {
    pub text: String,
    pub tokens: Vec<usize>,
    pub meaning: ShiftMeaning,
}

/// Bidirectional word–index map over every word of the instruction set.
///
/// Words are indexed in sorted order, so the mapping is a pure function of
/// the sentence set — any two builds (e.g. training time and model-load time)
/// agree. Underscore compounds like `close_to` or `on_the_same_plane` are
/// single words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

/// A word outside the instruction vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown word {0:?}")]
pub struct UnknownTokenError(pub String);

impl Vocabulary {
    fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Vocabulary {
        let mut words: Vec<String> = texts
            .into_iter()
            .flat_map(str::split_whitespace)
            .map(str::to_owned)
            .collect();
        words.sort();
        words.dedup();
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocabulary { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, index: usize) -> &str {
        &self.words[index]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn lookup(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Lowercases, splits on whitespace, and resolves every word.
    pub fn tokenize(&self, text: &str) -> Result<Vec<usize>, UnknownTokenError> {
        text.to_lowercase()
            .split_whitespace()
            .map(|w| self.lookup(w).ok_or_else(|| UnknownTokenError(w.to_owned())))
            .collect()
    }
}

/// A text that is not one of the 102 instruction sentences.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("not an instruction: {0:?}")]
pub struct NotAnInstructionError(pub String);

/// The complete sentence set with its vocabulary and lookup indices.
#[derive(Debug, Clone)]
pub struct InstructionSet {
    sentences: Vec<Sentence>,
    vocab: Vocabulary,
    by_text: HashMap<String, usize>,
    by_meaning: HashMap<ShiftMeaning, Vec<usize>>,
}

/// Sentence templates for establishing closeness between `a` and `b`.
fn close_01_texts(a: ObjectId, b: ObjectId) -> [String; 8] {
    let (a, b) = (a.word(), b.word());
    [
        format!("put {a} close_to {b}"),
        format!("bring {b} and {a} together"),
        format!("put {b} close_to {a}"),
        format!("bring {a} and {b} together"),
        format!("get {b} and {a} close_from each_other"),
        format!("get {a} close_to {b}"),
        format!("get {a} and {b} close_from each_other"),
        format!("get {b} close_to {a}"),
    ]
}

/// Sentence templates for dissolving closeness between `a` and `b`.
fn close_10_texts(a: ObjectId, b: ObjectId) -> [String; 8] {
    let (a, b) = (a.word(), b.word());
    [
        format!("put {a} far_from {b}"),
        format!("get {a} far_from {b}"),
        format!("put {b} far_from {a}"),
        format!("get {b} far_from {a}"),
        format!("get {a} and {b} far_from each_other"),
        format!("bring {a} and {b} apart"),
        format!("get {b} and {a} far_from each_other"),
        format!("bring {b} and {a} apart"),
    ]
}

/// Sentence templates for putting `a` on top of `b`.
fn above_01_texts(a: ObjectId, b: ObjectId) -> [String; 4] {
    let (a, b) = (a.word(), b.word());
    [
        format!("put {a} above {b}"),
        format!("put {a} on_top_of {b}"),
        format!("put {b} under {a}"),
        format!("put {b} below {a}"),
    ]
}

/// Sentence templates for taking `a` off of `b`. The first-named block is the
/// one that was above, including in the same-plane phrasings.
fn above_10_texts(a: ObjectId, b: ObjectId) -> [String; 5] {
    let (a, b) = (a.word(), b.word());
    [
        format!("remove {a} from_above {b}"),
        format!("remove {a} from {b}"),
        format!("remove {b} from_below {a}"),
        format!("put {a} and {b} on_the_same_plane"),
        format!("bring {a} and {b} on_the_same_plane"),
    ]
}

const UNORDERED_PAIRS: [(ObjectId, ObjectId); 3] = [
    (ObjectId::Red, ObjectId::Green),
    (ObjectId::Red, ObjectId::Blue),
    (ObjectId::Green, ObjectId::Blue),
];

const ORDERED_PAIRS: [(ObjectId, ObjectId); 6] = [
    (ObjectId::Red, ObjectId::Green),
    (ObjectId::Green, ObjectId::Red),
    (ObjectId::Red, ObjectId::Blue),
    (ObjectId::Blue, ObjectId::Red),
    (ObjectId::Green, ObjectId::Blue),
    (ObjectId::Blue, ObjectId::Green),
];

/// Expands the sentence templates into the full 102-sentence set.
pub fn build_instruction_set() -> InstructionSet {
    let mut entries: Vec<(String, ShiftMeaning)> = Vec::with_capacity(102);
    for (a, b) in UNORDERED_PAIRS {
        let slot = slot_of(PredicateKind::Close, (a, b)).expect("distinct pair");
        for text in close_01_texts(a, b) {
            entries.push((text, ShiftMeaning { slot, direction: Direction::ZeroToOne }));
        }
        for text in close_10_texts(a, b) {
            entries.push((text, ShiftMeaning { slot, direction: Direction::OneToZero }));
        }
    }
    for (a, b) in ORDERED_PAIRS {
        let slot = slot_of(PredicateKind::Above, (a, b)).expect("distinct pair");
        for text in above_01_texts(a, b) {
            entries.push((text, ShiftMeaning { slot, direction: Direction::ZeroToOne }));
        }
        for text in above_10_texts(a, b) {
            entries.push((text, ShiftMeaning { slot, direction: Direction::OneToZero }));
        }
    }

    let vocab = Vocabulary::build(entries.iter().map(|(t, _)| t.as_str()));
    let mut sentences = Vec::with_capacity(entries.len());
    let mut by_text = HashMap::new();
    let mut by_meaning: HashMap<ShiftMeaning, Vec<usize>> = HashMap::new();
    for (text, meaning) in entries {
        let tokens = vocab.tokenize(&text).expect("templates only use vocabulary words");
        let index = sentences.len();
        let previous = by_text.insert(text.clone(), index);
        assert!(previous.is_none(), "duplicate sentence text {text:?}");
        by_meaning.entry(meaning).or_default().push(index);
        sentences.push(Sentence { text, tokens, meaning });
    }
    InstructionSet { sentences, vocab, by_text, by_meaning }
}

/// Shared, lazily-built instruction set.
pub fn instruction_set() -> &'static InstructionSet {
    static SET: OnceLock<InstructionSet> = OnceLock::new();
    SET.get_or_init(build_instruction_set)
}

impl InstructionSet {
    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Case-insensitive exact lookup of a sentence.
    pub fn find(&self, text: &str) -> Option<&Sentence> {
        self.index_of(text).map(|i| &self.sentences[i])
    }

    /// Index of a sentence in [`Self::sentences`] order.
    pub fn index_of(&self, text: &str) -> Option<usize> {
        let lowered = text.to_lowercase();
        self.by_text.get(lowered.trim()).copied()
    }

    /// The sentences denoting `meaning` (its template group).
    pub fn with_meaning(&self, meaning: ShiftMeaning) -> &[usize] {
        self.by_meaning.get(&meaning).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Exact-match parse of an instruction sentence to its meaning.
    pub fn parse_instruction(&self, text: &str) -> Result<ShiftMeaning, NotAnInstructionError> {
        self.find(text)
            .map(|s| s.meaning)
            .ok_or_else(|| NotAnInstructionError(text.to_owned()))
    }
}

/// AST over instruction sentences combined with `and`, `or`, `not`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LogicalExpr {
    Leaf(Sentence),
    Not(Box<LogicalExpr>),
    And(Box<LogicalExpr>, Box<LogicalExpr>),
    Or(Box<LogicalExpr>, Box<LogicalExpr>),
}

impl LogicalExpr {
    /// The leaf sentences in left-to-right order.
    pub fn leaves(&self) -> Vec<&Sentence> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a Sentence>) {
        match self {
            LogicalExpr::Leaf(s) => out.push(s),
            LogicalExpr::Not(e) => e.collect_leaves(out),
            LogicalExpr::And(l, r) | LogicalExpr::Or(l, r) => {
                l.collect_leaves(out);
                r.collect_leaves(out);
            }
        }
    }

    /// Writes `self`, parenthesizing operands only where reparsing would
    /// otherwise regroup them (lower-precedence children, and right-nested
    /// chains of the same operator).
    fn write(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogicalExpr::Leaf(s) => write!(f, "{{{}}}", s.text),
            LogicalExpr::Not(e) => {
                f.write_str("not ")?;
                e.write_wrapped(f, matches!(**e, LogicalExpr::And(..) | LogicalExpr::Or(..)))
            }
            LogicalExpr::And(l, r) => {
                l.write_wrapped(f, matches!(**l, LogicalExpr::Or(..)))?;
                f.write_str(" and ")?;
                r.write_wrapped(f, matches!(**r, LogicalExpr::Or(..) | LogicalExpr::And(..)))
            }
            LogicalExpr::Or(l, r) => {
                l.write(f)?;
                f.write_str(" or ")?;
                r.write_wrapped(f, matches!(**r, LogicalExpr::Or(..)))
            }
        }
    }

    fn write_wrapped(&self, f: &mut fmt::Formatter<'_>, parens: bool) -> fmt::Result {
        if parens {
            f.write_str("(")?;
            self.write(f)?;
            f.write_str(")")
        } else {
            self.write(f)
        }
    }
}

impl fmt::Display for LogicalExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(f)
    }
}

/// Expression parse failure; positions are byte offsets into the input.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExprParseError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("invalid leaf at byte {pos}: {source}")]
    BadLeaf {
        pos: usize,
        #[source]
        source: NotAnInstructionError,
    },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    And,
    Or,
    Not,
    LParen,
    RParen,
    Leaf(String),
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, ExprParseError> {
    let mut toks = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(pos, c)) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            '(' => {
                chars.next();
                toks.push((Tok::LParen, pos));
            }
            ')' => {
                chars.next();
                toks.push((Tok::RParen, pos));
            }
            '{' => {
                chars.next();
                let rest = &text[pos + 1..];
                let Some(end) = rest.find('}') else {
                    return Err(ExprParseError::Syntax {
                        pos,
                        msg: "unterminated '{' (missing closing '}')".into(),
                    });
                };
                toks.push((Tok::Leaf(rest[..end].trim().to_owned()), pos));
                for _ in 0..=end {
                    chars.next();
                }
            }
            '}' => {
                return Err(ExprParseError::Syntax { pos, msg: "unmatched '}'".into() });
            }
            _ => {
                let start = pos;
                let mut word = String::new();
                while let Some(&(_, c)) = chars.peek() {
                    if c.is_whitespace() || "(){}".contains(c) {
                        break;
                    }
                    word.push(c);
                    chars.next();
                }
                let tok = match word.to_lowercase().as_str() {
                    "and" => Tok::And,
                    "or" => Tok::Or,
                    "not" => Tok::Not,
                    _ => {
                        return Err(ExprParseError::Syntax {
                            pos: start,
                            msg: format!(
                                "expected 'and', 'or', 'not', '(' or '{{instruction}}', got {word:?}"
                            ),
                        })
                    }
                };
                toks.push((tok, start));
            }
        }
    }
    Ok(toks)
}

/// Recursion guard: `not` chains and parentheses nest on the call stack.
const MAX_EXPR_DEPTH: usize = 64;

struct ExprParser<'a> {
    toks: Vec<(Tok, usize)>,
    i: usize,
    set: &'a InstructionSet,
    end: usize,
}

impl ExprParser<'_> {
    fn peek(&self) -> Option<&(Tok, usize)> {
        self.toks.get(self.i)
    }

    fn here(&self) -> usize {
        self.peek().map_or(self.end, |&(_, pos)| pos)
    }

    fn expr(&mut self, depth: usize) -> Result<LogicalExpr, ExprParseError> {
        let mut lhs = self.term(depth)?;
        while matches!(self.peek(), Some((Tok::Or, _))) {
            self.i += 1;
            let rhs = self.term(depth)?;
            lhs = LogicalExpr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self, depth: usize) -> Result<LogicalExpr, ExprParseError> {
        let mut lhs = self.factor(depth)?;
        while matches!(self.peek(), Some((Tok::And, _))) {
            self.i += 1;
            let rhs = self.factor(depth)?;
            lhs = LogicalExpr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn factor(&mut self, depth: usize) -> Result<LogicalExpr, ExprParseError> {
        if depth >= MAX_EXPR_DEPTH {
            return Err(ExprParseError::Syntax {
                pos: self.here(),
                msg: format!("expression nests deeper than {MAX_EXPR_DEPTH} levels"),
            });
        }
        let Some((tok, pos)) = self.peek().cloned() else {
            return Err(ExprParseError::Syntax {
                pos: self.end,
                msg: "expected an expression, got end of input".into(),
            });
        };
        match tok {
            Tok::Not => {
                self.i += 1;
                Ok(LogicalExpr::Not(Box::new(self.factor(depth + 1)?)))
            }
            Tok::LParen => {
                self.i += 1;
                let inner = self.expr(depth + 1)?;
                match self.peek() {
                    Some((Tok::RParen, _)) => {
                        self.i += 1;
                        Ok(inner)
                    }
                    _ => Err(ExprParseError::Syntax {
                        pos: self.here(),
                        msg: "expected ')'".into(),
                    }),
                }
            }
            Tok::Leaf(text) => {
                self.i += 1;
                match self.set.find(&text) {
                    Some(sentence) => Ok(LogicalExpr::Leaf(sentence.clone())),
                    None => Err(ExprParseError::BadLeaf {
                        pos,
                        source: NotAnInstructionError(text),
                    }),
                }
            }
            Tok::And | Tok::Or | Tok::RParen => Err(ExprParseError::Syntax {
                pos,
                msg: "expected 'not', '(' or '{instruction}'".into(),
            }),
        }
    }
}

impl InstructionSet {
    /// Parses the expression grammar (precedence lowest to highest):
    ///
    /// ```text
    /// expr   := term ('or' term)*
    /// term   := factor ('and' factor)*
    /// factor := 'not' factor | '(' expr ')' | '{' instruction '}'
    /// ```
    pub fn parse_expression(&self, text: &str) -> Result<LogicalExpr, ExprParseError> {
        let toks = lex(text)?;
        let mut parser = ExprParser { toks, i: 0, set: self, end: text.len() };
        let expr = parser.expr(0)?;
        if let Some((_, pos)) = parser.peek() {
            return Err(ExprParseError::Syntax {
                pos: *pos,
                msg: "unexpected trailing input".into(),
            });
        }
        Ok(expr)
    }
}

/// The three expression shapes of the evaluation protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExpressionKind {
    /// `A and B`, both stack-building (above 0→1) with distinct slots.
    TwoAbove,
    /// `A and B`: an above instruction and a close instruction, the latter
    /// negated with probability ½.
    AboveClose,
    /// `(A and B) or (C and D)`: above/close conjunctions, every leaf
    /// independently negated with probability ½.
    TwoDisjuncts,
}

impl ExpressionKind {
    pub const ALL: [ExpressionKind; 3] =
        [ExpressionKind::TwoAbove, ExpressionKind::AboveClose, ExpressionKind::TwoDisjuncts];

    /// 1-based protocol index.
    pub fn index(self) -> u8 {
        match self {
            ExpressionKind::TwoAbove => 1,
            ExpressionKind::AboveClose => 2,
            ExpressionKind::TwoDisjuncts => 3,
        }
    }
}

impl InstructionSet {
    fn indices_where(&self, pred: impl Fn(&Sentence) -> bool) -> Vec<usize> {
        (0..self.sentences.len()).filter(|&i| pred(&self.sentences[i])).collect()
    }

    fn pick<'a, R: Rng>(&'a self, pool: &[usize], rng: &mut R) -> &'a Sentence {
        &self.sentences[pool[rng.gen_range(0..pool.len())]]
    }

    /// Draws a random expression of the given shape. Leaves are uniform among
    /// qualifying sentences; negations are independent fair coin flips.
    pub fn sample_expression<R: Rng>(&self, kind: ExpressionKind, rng: &mut R) -> LogicalExpr {
        let above_01 = self.indices_where(|s| {
            s.meaning.slot.kind == PredicateKind::Above
                && s.meaning.direction == Direction::ZeroToOne
        });
        let above = self.indices_where(|s| s.meaning.slot.kind == PredicateKind::Above);
        let close = self.indices_where(|s| s.meaning.slot.kind == PredicateKind::Close);

        fn leaf(s: &Sentence) -> LogicalExpr {
            LogicalExpr::Leaf(s.clone())
        }
        fn maybe_not<R: Rng>(e: LogicalExpr, rng: &mut R) -> LogicalExpr {
            if rng.gen_bool(0.5) {
                LogicalExpr::Not(Box::new(e))
            } else {
                e
            }
        }

        match kind {
            ExpressionKind::TwoAbove => {
                let a = self.pick(&above_01, rng);
                let b = loop {
                    let b = self.pick(&above_01, rng);
                    if b.meaning.slot != a.meaning.slot {
                        break b;
                    }
                };
                LogicalExpr::And(Box::new(leaf(a)), Box::new(leaf(b)))
            }
            ExpressionKind::AboveClose => {
                let a = leaf(self.pick(&above, rng));
                let b = maybe_not(leaf(self.pick(&close, rng)), rng);
                LogicalExpr::And(Box::new(a), Box::new(b))
            }
            ExpressionKind::TwoDisjuncts => {
                let conj = |rng: &mut R| {
                    let a = maybe_not(leaf(self.pick(&above, rng)), rng);
                    let b = maybe_not(leaf(self.pick(&close, rng)), rng);
                    LogicalExpr::And(Box::new(a), Box::new(b))
                };
                let left = conj(rng);
                let right = conj(rng);
                LogicalExpr::Or(Box::new(left), Box::new(right))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set() -> &'static InstructionSet {
        instruction_set()
    }

    fn meaning(kind: PredicateKind, pair: (ObjectId, ObjectId), direction: Direction) -> ShiftMeaning {
        ShiftMeaning { slot: slot_of(kind, pair).unwrap(), direction }
    }

    #[test]
    fn the_set_has_102_distinct_sentences_partitioned_by_template_block() {
        let s = set();
        assert_eq!(s.sentences().len(), 102);
        let texts: std::collections::HashSet<&str> =
            s.sentences().iter().map(|x| x.text.as_str()).collect();
        assert_eq!(texts.len(), 102, "sentence texts must be unique");

        let count = |kind, direction| {
            s.sentences()
                .iter()
                .filter(|x| x.meaning.slot.kind == kind && x.meaning.direction == direction)
                .count()
        };
        assert_eq!(count(PredicateKind::Close, Direction::ZeroToOne), 24);
        assert_eq!(count(PredicateKind::Close, Direction::OneToZero), 24);
        assert_eq!(count(PredicateKind::Above, Direction::ZeroToOne), 24);
        assert_eq!(count(PredicateKind::Above, Direction::OneToZero), 30);
    }

    #[test]
    fn meanings_form_18_groups_with_template_sizes() {
        let s = set();
        let mut groups: HashMap<ShiftMeaning, usize> = HashMap::new();
        for sentence in s.sentences() {
            *groups.entry(sentence.meaning).or_default() += 1;
        }
        assert_eq!(groups.len(), 18);
        for (m, n) in groups {
            let expected = match (m.slot.kind, m.direction) {
                (PredicateKind::Close, _) => 8,
                (PredicateKind::Above, Direction::ZeroToOne) => 4,
                (PredicateKind::Above, Direction::OneToZero) => 5,
            };
            assert_eq!(n, expected, "group {m} has wrong size");
            assert_eq!(s.with_meaning(m).len(), expected);
        }
    }

    #[test]
    fn paper_examples_parse_to_their_meanings() {
        let s = set();
        use Direction::*;
        use ObjectId::*;
        use PredicateKind::*;
        let cases = [
            ("put red above green", meaning(Above, (Red, Green), ZeroToOne)),
            ("put green below red", meaning(Above, (Red, Green), ZeroToOne)),
            ("get blue far_from red", meaning(Close, (Red, Blue), OneToZero)),
            ("bring red and green together", meaning(Close, (Red, Green), ZeroToOne)),
            ("put blue close_to green", meaning(Close, (Green, Blue), ZeroToOne)),
            ("put green on_top_of red", meaning(Above, (Green, Red), ZeroToOne)),
            ("put red and green on_the_same_plane", meaning(Above, (Red, Green), OneToZero)),
        ];
        for (text, expected) in cases {
            assert_eq!(s.parse_instruction(text).unwrap(), expected, "{text}");
        }
    }

    #[test]
    fn every_generated_sentence_parses_to_its_own_meaning() {
        let s = set();
        for sentence in s.sentences() {
            assert_eq!(s.parse_instruction(&sentence.text).unwrap(), sentence.meaning);
            assert_eq!(s.vocab().tokenize(&sentence.text).unwrap(), sentence.tokens);
            assert!(sentence.tokens.iter().all(|&t| t < s.vocab().len()));
        }
    }

    #[test]
    fn vocabulary_has_22_words_with_contiguous_indices() {
        let v = set().vocab();
        assert_eq!(v.len(), 22);
        for i in 0..v.len() {
            assert_eq!(v.lookup(v.word(i)), Some(i));
        }
        for compound in ["close_to", "on_the_same_plane", "each_other", "far_from"] {
            assert!(v.lookup(compound).is_some(), "{compound} must be a single token");
        }
    }

    #[test]
    fn tokenize_folds_case_and_rejects_unknown_words() {
        let v = set().vocab();
        let lower = v.tokenize("put red close_to green").unwrap();
        assert_eq!(
            lower,
            vec![
                v.lookup("put").unwrap(),
                v.lookup("red").unwrap(),
                v.lookup("close_to").unwrap(),
                v.lookup("green").unwrap(),
            ],
        );
        assert_eq!(v.tokenize("PUT RED CLOSE_TO GREEN").unwrap(), lower);
        assert_eq!(
            v.tokenize("put red onto green"),
            Err(UnknownTokenError("onto".to_owned())),
        );
    }

    #[test]
    fn parse_instruction_rejects_non_members() {
        let s = set();
        assert_eq!(
            s.parse_instruction("put red above red"),
            Err(NotAnInstructionError("put red above red".to_owned())),
        );
        assert!(s.parse_instruction("").is_err());
        // Case folding applies before matching.
        assert!(s.parse_instruction("Put Red Above Green").is_ok());
    }

    #[test]
    fn expressions_parse_with_precedence_and_braces() {
        let s = set();
        let e = s
            .parse_expression("{put red above green} and {put green close_to blue}")
            .unwrap();
        assert!(matches!(e, LogicalExpr::And(..)));

        let e = s
            .parse_expression(
                "({put red above green} and {bring red and green together}) or \
                 ({put blue on_top_of red} and {get red far_from green})",
            )
            .unwrap();
        let LogicalExpr::Or(l, r) = e else { panic!("expected Or") };
        assert!(matches!(*l, LogicalExpr::And(..)));
        assert!(matches!(*r, LogicalExpr::And(..)));

        let e = s.parse_expression("not not {put red above green}").unwrap();
        assert!(matches!(e, LogicalExpr::Not(inner) if matches!(*inner, LogicalExpr::Not(..))));

        // 'and' binds tighter than 'or'.
        let e = s
            .parse_expression(
                "{put red above green} or {put red close_to green} and {put red far_from blue}",
            )
            .unwrap();
        assert!(matches!(e, LogicalExpr::Or(..)));
    }

    #[test]
    fn expression_errors_carry_positions() {
        let s = set();
        match s.parse_expression("{put red above green") {
            Err(ExprParseError::Syntax { pos: 0, msg }) => assert!(msg.contains("unterminated")),
            other => panic!("expected unterminated-brace error, got {other:?}"),
        }
        match s.parse_expression("{put red above green} and") {
            Err(ExprParseError::Syntax { pos, .. }) => assert_eq!(pos, 25),
            other => panic!("expected missing-operand error, got {other:?}"),
        }
        match s.parse_expression("{put red above green} {put red above green}") {
            Err(ExprParseError::Syntax { pos, msg }) => {
                assert_eq!(pos, 22);
                assert!(msg.contains("trailing"));
            }
            other => panic!("expected trailing-input error, got {other:?}"),
        }
        match s.parse_expression("{put red onto green}") {
            Err(ExprParseError::BadLeaf { pos: 0, source }) => {
                assert_eq!(source, NotAnInstructionError("put red onto green".to_owned()));
            }
            other => panic!("expected bad-leaf error, got {other:?}"),
        }
        match s.parse_expression("banana") {
            Err(ExprParseError::Syntax { pos: 0, .. }) => {}
            other => panic!("expected unknown-word error, got {other:?}"),
        }
        let deep = format!("{}{}", "not ".repeat(100), "{put red above green}");
        assert!(matches!(s.parse_expression(&deep), Err(ExprParseError::Syntax { .. })));
    }

    #[test]
    fn sampled_expressions_have_the_documented_shapes() {
        let s = set();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let e = s.sample_expression(ExpressionKind::TwoAbove, &mut rng);
            let LogicalExpr::And(l, r) = &e else { panic!("kind 1 must be And") };
            let (LogicalExpr::Leaf(a), LogicalExpr::Leaf(b)) = (&**l, &**r) else {
                panic!("kind 1 leaves are bare")
            };
            for leaf in [a, b] {
                assert_eq!(leaf.meaning.slot.kind, PredicateKind::Above);
                assert_eq!(leaf.meaning.direction, Direction::ZeroToOne);
            }
            assert_ne!(a.meaning.slot, b.meaning.slot, "kind 1 slots are distinct");

            let e = s.sample_expression(ExpressionKind::AboveClose, &mut rng);
            let LogicalExpr::And(l, r) = &e else { panic!("kind 2 must be And") };
            let LogicalExpr::Leaf(a) = &**l else { panic!("kind 2 left is a bare leaf") };
            assert_eq!(a.meaning.slot.kind, PredicateKind::Above);
            let close = match &**r {
                LogicalExpr::Leaf(b) => b,
                LogicalExpr::Not(inner) => match &**inner {
                    LogicalExpr::Leaf(b) => b,
                    other => panic!("kind 2 negation wraps a leaf, got {other:?}"),
                },
                other => panic!("kind 2 right is leaf or negated leaf, got {other:?}"),
            };
            assert_eq!(close.meaning.slot.kind, PredicateKind::Close);

            let e = s.sample_expression(ExpressionKind::TwoDisjuncts, &mut rng);
            let LogicalExpr::Or(l, r) = &e else { panic!("kind 3 must be Or") };
            for side in [&**l, &**r] {
                let LogicalExpr::And(a, b) = side else { panic!("disjunct must be And") };
                for (part, kind) in [(&**a, PredicateKind::Above), (&**b, PredicateKind::Close)] {
                    let leaf = match part {
                        LogicalExpr::Leaf(s) => s,
                        LogicalExpr::Not(inner) => match &**inner {
                            LogicalExpr::Leaf(s) => s,
                            other => panic!("negation wraps a leaf, got {other:?}"),
                        },
                        other => panic!("expected leaf or negated leaf, got {other:?}"),
                    };
                    assert_eq!(leaf.meaning.slot.kind, kind);
                }
            }
            assert_eq!(e.leaves().len(), 4);
        }
    }

    #[test]
    fn kind_two_negates_about_half_the_time() {
        let s = set();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let negated = (0..2000)
            .filter(|_| {
                let e = s.sample_expression(ExpressionKind::AboveClose, &mut rng);
                let LogicalExpr::And(_, r) = e else { unreachable!() };
                matches!(*r, LogicalExpr::Not(..))
            })
            .count();
        assert!((800..1200).contains(&negated), "negation rate ~0.5, got {negated}/2000");
    }

    fn arb_expr() -> impl Strategy<Value = LogicalExpr> {
        let leaf = (0..102usize)
            .prop_map(|i| LogicalExpr::Leaf(instruction_set().sentences()[i].clone()));
        leaf.prop_recursive(5, 32, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|e| LogicalExpr::Not(Box::new(e))),
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| LogicalExpr::And(Box::new(a), Box::new(b))),
                (inner.clone(), inner)
                    .prop_map(|(a, b)| LogicalExpr::Or(Box::new(a), Box::new(b))),
            ]
        })
    }

    proptest! {
        #[test]
        fn printing_then_parsing_is_the_identity(e in arb_expr()) {
            let text = e.to_string();
            let reparsed = instruction_set().parse_expression(&text).unwrap();
            prop_assert_eq!(reparsed, e);
        }
    }
}
