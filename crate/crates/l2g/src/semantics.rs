//! Semantic configurations over three colored blocks.
//!
//! A configuration is a vector of 9 booleans, one per predicate slot: three
//! symmetric `close` relations over the unordered object pairs followed by six
//! asymmetric `above` relations over the ordered pairs. `above` means
//! *directly on top of* (in contact), so a block two levels up in a 3-stack is
//! not above the bottom one. Of the 512 bit patterns only 35 are physically
//! realizable; [`enumerate_valid`] materializes them from an explicit
//! decomposition into flat arrangements, 2-stacks, 3-stacks and pyramids.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// The three manipulable blocks, identified by color.
///
/// `Red`, `Green`, `Blue` are objects 1, 2, 3 throughout; the discriminant
/// order fixes the slot layout below.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObjectId {
    Red,
    Green,
    Blue,
}

impl ObjectId {
    pub const ALL: [ObjectId; 3] = [ObjectId::Red, ObjectId::Green, ObjectId::Blue];

    /// Zero-based index: red = 0, green = 1, blue = 2.
    pub fn index(self) -> usize {
        self as usize
    }

    /// The color word used in instruction sentences.
    pub fn word(self) -> &'static str {
        match self {
            ObjectId::Red => "red",
            ObjectId::Green => "green",
            ObjectId::Blue => "blue",
        }
    }

    /// The two objects other than `self`, in index order.
    pub fn others(self) -> [ObjectId; 2] {
        match self {
            ObjectId::Red => [ObjectId::Green, ObjectId::Blue],
            ObjectId::Green => [ObjectId::Red, ObjectId::Blue],
            ObjectId::Blue => [ObjectId::Red, ObjectId::Green],
        }
    }
}

/// The two spatial relations a slot can express.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PredicateKind {
    /// Symmetric: Euclidean distance below a threshold.
    Close,
    /// Asymmetric: first object resting directly on top of the second.
    Above,
}

/// One of the nine predicate slots of a configuration.
///
/// Slots 0–2 are `close` on the unordered pairs (red,green), (red,blue),
/// (green,blue); slots 3–8 are `above` on the ordered pairs (red,green),
/// (green,red), (red,blue), (blue,red), (green,blue), (blue,green) — exactly
/// in this order. For `close` slots the stored pair is the index-sorted
/// representative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PredicateSlot {
    pub index: usize,
    pub kind: PredicateKind,
    pub pair: (ObjectId, ObjectId),
}

use ObjectId::{Blue, Green, Red};
use PredicateKind::{Above, Close};

/// The nine slots in index order.
pub const SLOTS: [PredicateSlot; 9] = [
    PredicateSlot { index: 0, kind: Close, pair: (Red, Green) },
    PredicateSlot { index: 1, kind: Close, pair: (Red, Blue) },
    PredicateSlot { index: 2, kind: Close, pair: (Green, Blue) },
    PredicateSlot { index: 3, kind: Above, pair: (Red, Green) },
    PredicateSlot { index: 4, kind: Above, pair: (Green, Red) },
    PredicateSlot { index: 5, kind: Above, pair: (Red, Blue) },
    PredicateSlot { index: 6, kind: Above, pair: (Blue, Red) },
    PredicateSlot { index: 7, kind: Above, pair: (Green, Blue) },
    PredicateSlot { index: 8, kind: Above, pair: (Blue, Green) },
];

/// Error from [`slot_of`]: a predicate relates two *distinct* objects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("predicate pair must name two distinct objects, got {0:?} twice")]
pub struct IdenticalPairError(pub ObjectId);

/// Maps a predicate kind and object pair to its slot.
///
/// `close` is order-invariant, so both orders of a pair land on the same
/// slot; `above` slots are keyed by the ordered pair.
pub fn slot_of(kind: PredicateKind, pair: (ObjectId, ObjectId)) -> Result<PredicateSlot, IdenticalPairError> {
    let (a, b) = pair;
    if a == b {
        return Err(IdenticalPairError(a));
    }
    let index = match kind {
        Close => match (a.index().min(b.index()), a.index().max(b.index())) {
            (0, 1) => 0,
            (0, 2) => 1,
            _ => 2,
        },
        Above => match (a, b) {
            (Red, Green) => 3,
            (Green, Red) => 4,
            (Red, Blue) => 5,
            (Blue, Red) => 6,
            (Green, Blue) => 7,
            (Blue, Green) => 8,
            _ => unreachable!("distinct ids covered above"),
        },
    };
    Ok(SLOTS[index])
}

/// Direction of a single-bit transition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// The bit flips from 0 to 1 (a relation is established).
    #[serde(rename = "0->1")]
    ZeroToOne,
    /// The bit flips from 1 to 0 (a relation is dissolved).
    #[serde(rename = "1->0")]
    OneToZero,
}

impl Direction {
    /// Bit value before the transition.
    pub fn source(self) -> bool {
        matches!(self, Direction::OneToZero)
    }

    /// Bit value after the transition.
    pub fn target(self) -> bool {
        matches!(self, Direction::ZeroToOne)
    }

    /// The opposite transition.
    pub fn flipped(self) -> Direction {
        match self {
            Direction::ZeroToOne => Direction::OneToZero,
            Direction::OneToZero => Direction::ZeroToOne,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::ZeroToOne => "0->1",
            Direction::OneToZero => "1->0",
        })
    }
}

/// A 9-bit semantic configuration.
///
/// Ordering is lexicographic on the bit vector, which fixes the canonical
/// order of the valid set. The text form is nine `'0'`/`'1'` characters in
/// slot order (e.g. `"110000000"`), used by the CLI and in JSONL files; the
/// serde representation is that string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct SemanticConfig {
    bits: [bool; 9],
}

impl SemanticConfig {
    /// The all-zero configuration (three separated blocks on the table).
    pub const ZERO: SemanticConfig = SemanticConfig { bits: [false; 9] };

    pub fn from_bits(bits: [bool; 9]) -> SemanticConfig {
        SemanticConfig { bits }
    }

    pub fn bits(&self) -> &[bool; 9] {
        &self.bits
    }

    /// Bit at `slot` (0..9).
    pub fn get(&self, slot: usize) -> bool {
        self.bits[slot]
    }

    /// Returns a copy with the bit at `slot` set to `value`.
    pub fn with_bit(mut self, slot: usize, value: bool) -> SemanticConfig {
        self.bits[slot] = value;
        self
    }

    pub fn set(&mut self, slot: usize, value: bool) {
        self.bits[slot] = value;
    }

    /// The bits as 0.0/1.0 values, the network's input and target encoding.
    pub fn to_f64(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for (o, &b) in out.iter_mut().zip(&self.bits) {
            *o = if b { 1.0 } else { 0.0 };
        }
        out
    }
}

impl fmt::Display for SemanticConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Error parsing the 9-character text form of a configuration.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigParseError {
    #[error("expected 9 bits, got {0} characters")]
    BadLength(usize),
    #[error("invalid character {ch:?} at position {pos}; expected '0' or '1'")]
    BadChar { pos: usize, ch: char },
}

impl FromStr for SemanticConfig {
    type Err = ConfigParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let chars: Vec<char> = s.chars().collect();
        if chars.len() != 9 {
            return Err(ConfigParseError::BadLength(chars.len()));
        }
        let mut bits = [false; 9];
        for (pos, (&ch, bit)) in chars.iter().zip(bits.iter_mut()).enumerate() {
            *bit = match ch {
                '0' => false,
                '1' => true,
                _ => return Err(ConfigParseError::BadChar { pos, ch }),
            };
        }
        Ok(SemanticConfig { bits })
    }
}

impl Serialize for SemanticConfig {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SemanticConfig {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(de::Error::custom)
    }
}

/// Placement of the third block relative to a 2-stack.
///
/// Close to the top only is impossible: the top sits a block-height above the
/// table, so any third block near it is at least as near the bottom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ThirdPattern {
    /// Third block far from both stacked blocks.
    Isolated,
    /// Third block close to the bottom block only.
    NearBottom,
    /// Third block close to both stacked blocks.
    NearBoth,
}

impl ThirdPattern {
    pub const ALL: [ThirdPattern; 3] =
        [ThirdPattern::Isolated, ThirdPattern::NearBottom, ThirdPattern::NearBoth];
}

/// Generative decomposition of the physically valid configurations.
///
/// Every valid configuration arises from exactly one structure: one of the 8
/// flat close-patterns, a 2-stack with the third block in one of 3 placements
/// (18), a 3-stack (6), or a pyramid (3) — 35 in total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StructureClass {
    /// All blocks on the table; `pattern` holds the three close bits in slot
    /// order (red-green, red-blue, green-blue).
    Flat { pattern: [bool; 3] },
    /// `top` resting on `bottom`, third block placed per `third`.
    Stack2 { top: ObjectId, bottom: ObjectId, third: ThirdPattern },
    /// A full column: `top` on `mid` on `bottom`.
    Stack3 { top: ObjectId, mid: ObjectId, bottom: ObjectId },
    /// `top` resting on both other blocks, which sit side by side.
    Pyramid { top: ObjectId },
}

impl StructureClass {
    /// True iff the named objects are distinct where distinctness is required.
    pub fn is_well_formed(&self) -> bool {
        match *self {
            StructureClass::Flat { .. } | StructureClass::Pyramid { .. } => true,
            StructureClass::Stack2 { top, bottom, .. } => top != bottom,
            StructureClass::Stack3 { top, mid, bottom } => {
                top != mid && mid != bottom && top != bottom
            }
        }
    }
}

fn close_slot(a: ObjectId, b: ObjectId) -> usize {
    slot_of(Close, (a, b)).expect("distinct ids").index
}

fn above_slot(a: ObjectId, b: ObjectId) -> usize {
    slot_of(Above, (a, b)).expect("distinct ids").index
}

/// Materializes the unique configuration of a structure.
///
/// Panics if the structure is not well-formed (a caller bug, not an input
/// condition).
pub fn realize(structure: &StructureClass) -> SemanticConfig {
    assert!(structure.is_well_formed(), "realize: malformed structure {structure:?}");
    let mut c = SemanticConfig::ZERO;
    match *structure {
        StructureClass::Flat { pattern } => {
            for (slot, &bit) in pattern.iter().enumerate() {
                c.set(slot, bit);
            }
        }
        StructureClass::Stack2 { top, bottom, third } => {
            c.set(close_slot(top, bottom), true);
            c.set(above_slot(top, bottom), true);
            let k = ObjectId::ALL
                .into_iter()
                .find(|&o| o != top && o != bottom)
                .expect("one object remains");
            match third {
                ThirdPattern::Isolated => {}
                ThirdPattern::NearBottom => c.set(close_slot(k, bottom), true),
                ThirdPattern::NearBoth => {
                    c.set(close_slot(k, bottom), true);
                    c.set(close_slot(k, top), true);
                }
            }
        }
        StructureClass::Stack3 { top, mid, bottom } => {
            c.set(close_slot(top, mid), true);
            c.set(close_slot(mid, bottom), true);
            c.set(above_slot(top, mid), true);
            c.set(above_slot(mid, bottom), true);
            // top-to-bottom spans two block heights: neither close nor above.
        }
        StructureClass::Pyramid { top } => {
            for slot in 0..3 {
                c.set(slot, true);
            }
            let [x, y] = top.others();
            c.set(above_slot(top, x), true);
            c.set(above_slot(top, y), true);
        }
    }
    c
}

/// All 35 well-formed structures, in decomposition order (flat patterns,
/// 2-stacks by ordered pair then third placement, 3-stacks, pyramids).
pub fn enumerate_structures() -> Vec<StructureClass> {
    let mut out = Vec::with_capacity(35);
    for p in 0..8u8 {
        out.push(StructureClass::Flat {
            pattern: [p & 1 != 0, p & 2 != 0, p & 4 != 0],
        });
    }
    let ordered_pairs = [
        (Red, Green),
        (Green, Red),
        (Red, Blue),
        (Blue, Red),
        (Green, Blue),
        (Blue, Green),
    ];
    for (top, bottom) in ordered_pairs {
        for third in ThirdPattern::ALL {
            out.push(StructureClass::Stack2 { top, bottom, third });
        }
    }
    for top in ObjectId::ALL {
        for mid in ObjectId::ALL {
            for bottom in ObjectId::ALL {
                let s = StructureClass::Stack3 { top, mid, bottom };
                if s.is_well_formed() {
                    out.push(s);
                }
            }
        }
    }
    for top in ObjectId::ALL {
        out.push(StructureClass::Pyramid { top });
    }
    out
}

/// The 35 physically valid configurations in canonical (lexicographic) order.
pub fn enumerate_valid() -> Vec<SemanticConfig> {
    let mut configs: Vec<SemanticConfig> =
        enumerate_structures().iter().map(realize).collect();
    configs.sort();
    debug_assert!(configs.windows(2).all(|w| w[0] != w[1]), "realize must be injective");
    configs
}

/// Cached [`enumerate_valid`] result; the canonical valid set.
pub fn valid_configs() -> &'static [SemanticConfig] {
    static CACHE: OnceLock<Vec<SemanticConfig>> = OnceLock::new();
    CACHE.get_or_init(enumerate_valid)
}

/// Membership test in the valid set.
pub fn is_valid(c: &SemanticConfig) -> bool {
    valid_configs().binary_search(c).is_ok()
}

/// The per-slot differences between two configurations.
///
/// One entry per differing bit, in slot order; empty iff the configurations
/// are equal. Directions read as transitions from `c_i` to `c_f`.
pub fn diff(c_i: &SemanticConfig, c_f: &SemanticConfig) -> Vec<(PredicateSlot, Direction)> {
    SLOTS
        .iter()
        .filter_map(|slot| {
            match (c_i.get(slot.index), c_f.get(slot.index)) {
                (false, true) => Some((*slot, Direction::ZeroToOne)),
                (true, false) => Some((*slot, Direction::OneToZero)),
                _ => None,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn config(s: &str) -> SemanticConfig {
        s.parse().expect("test literal")
    }

    #[test]
    fn slot_layout_matches_the_configuration_vector() {
        assert_eq!(slot_of(Close, (Red, Green)).unwrap().index, 0);
        assert_eq!(slot_of(Close, (Green, Red)).unwrap().index, 0);
        assert_eq!(slot_of(Above, (Blue, Green)).unwrap().index, 8);
        // Full layout, both close orders.
        for slot in &SLOTS {
            assert_eq!(slot_of(slot.kind, slot.pair).unwrap(), *slot);
            if slot.kind == Close {
                let (a, b) = slot.pair;
                assert_eq!(slot_of(Close, (b, a)).unwrap(), *slot);
            }
        }
    }

    #[test]
    fn slot_of_rejects_identical_ids() {
        assert_eq!(slot_of(Close, (Red, Red)), Err(IdenticalPairError(Red)));
        assert_eq!(slot_of(Above, (Blue, Blue)), Err(IdenticalPairError(Blue)));
    }

    #[test]
    fn realize_matches_the_materialization_rules() {
        assert_eq!(realize(&StructureClass::Flat { pattern: [false; 3] }), SemanticConfig::ZERO);
        assert_eq!(
            realize(&StructureClass::Stack2 { top: Red, bottom: Green, third: ThirdPattern::Isolated }),
            config("100100000"),
        );
        assert_eq!(realize(&StructureClass::Pyramid { top: Blue }), config("111000101"));
        // A 3-stack leaves top-to-bottom neither close nor above.
        let s3 = realize(&StructureClass::Stack3 { top: Red, mid: Green, bottom: Blue });
        assert_eq!(s3, config("101100010"));
        assert!(!s3.get(1) || s3.get(0), "sanity: c(red,blue) must be clear");
    }

    #[test]
    fn valid_set_has_35_distinct_members_in_canonical_order() {
        let valid = enumerate_valid();
        assert_eq!(valid.len(), 35);
        for w in valid.windows(2) {
            assert!(w[0] < w[1], "sorted and distinct");
        }
        assert!(valid.contains(&SemanticConfig::ZERO));
    }

    #[test]
    fn close_red_green_holds_in_23_valid_configs() {
        // Frozen from an independent enumeration over the structure
        // decomposition: 4 flat patterns + 12 two-stack placements + 4
        // three-stacks + 3 pyramids have the red-green close bit set.
        let n = valid_configs().iter().filter(|c| c.get(0)).count();
        assert_eq!(n, 23);
        // By symmetry the other close slots match, and each above slot is set
        // in exactly 6 members (3 bare 2-stacks' worth of placements... i.e.
        // 3 third-patterns + 2 chain positions + 1 pyramid).
        for slot in 1..3 {
            assert_eq!(valid_configs().iter().filter(|c| c.get(slot)).count(), 23);
        }
        for slot in 3..9 {
            assert_eq!(valid_configs().iter().filter(|c| c.get(slot)).count(), 6);
        }
    }

    #[test]
    fn is_valid_accepts_members_and_rejects_contradictions() {
        assert!(is_valid(&SemanticConfig::ZERO));
        // Mutually above: physically impossible.
        assert!(!is_valid(&config("100110000")));
        // Above without close: contradicts contact.
        assert!(!is_valid(&config("000100000")));
        for c in valid_configs() {
            assert!(is_valid(c));
        }
    }

    #[test]
    fn valid_members_satisfy_structural_invariants() {
        for c in valid_configs() {
            for slot in &SLOTS[3..] {
                if c.get(slot.index) {
                    let (i, j) = slot.pair;
                    assert!(c.get(close_slot(i, j)), "above implies close in {c}");
                    assert!(!c.get(above_slot(j, i)), "above is asymmetric in {c}");
                }
            }
            let above: Vec<&PredicateSlot> =
                SLOTS[3..].iter().filter(|s| c.get(s.index)).collect();
            assert!(above.len() <= 2, "at most two above bits in {c}");
            if let [a, b] = above[..] {
                let pyramid = a.pair.0 == b.pair.0;
                let chain = a.pair.1 == b.pair.0 || b.pair.1 == a.pair.0;
                assert!(pyramid || chain, "two above bits must share a top or chain in {c}");
            }
        }
    }

    #[test]
    fn diff_lists_changed_slots_with_directions() {
        let zero = SemanticConfig::ZERO;
        assert!(diff(&zero, &zero).is_empty());
        let one_close = config("100000000");
        assert_eq!(diff(&zero, &one_close), vec![(SLOTS[0], Direction::ZeroToOne)]);
        let stack = realize(&StructureClass::Stack2 {
            top: Red,
            bottom: Green,
            third: ThirdPattern::Isolated,
        });
        assert_eq!(
            diff(&stack, &zero),
            vec![(SLOTS[0], Direction::OneToZero), (SLOTS[3], Direction::OneToZero)],
        );
    }

    #[test]
    fn text_form_round_trips_and_rejects_malformed_input() {
        let c = config("110000000");
        assert_eq!(c.to_string(), "110000000");
        assert!(c.get(0) && c.get(1) && !c.get(2));
        assert_eq!("11000000".parse::<SemanticConfig>(), Err(ConfigParseError::BadLength(8)));
        assert_eq!(
            "11000000x".parse::<SemanticConfig>(),
            Err(ConfigParseError::BadChar { pos: 8, ch: 'x' }),
        );
    }

    #[test]
    fn serde_uses_the_text_form() {
        let c = config("101100100");
        assert_eq!(serde_json::to_string(&c).unwrap(), "\"101100100\"");
        let back: SemanticConfig = serde_json::from_str("\"101100100\"").unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<SemanticConfig>("\"abc\"").is_err());
    }

    #[test]
    fn to_f64_encodes_bits_as_zero_or_one() {
        let c = config("101000001");
        let v = c.to_f64();
        assert_eq!(v[0], 1.0);
        assert_eq!(v[1], 0.0);
        assert_eq!(v[8], 1.0);
        assert_eq!(v.iter().sum::<f64>(), 3.0);
    }

    fn arb_config() -> impl Strategy<Value = SemanticConfig> {
        any::<[bool; 9]>().prop_map(SemanticConfig::from_bits)
    }

    proptest! {
        #[test]
        fn diff_is_antisymmetric(a in arb_config(), b in arb_config()) {
            let forward = diff(&a, &b);
            let backward = diff(&b, &a);
            prop_assert_eq!(forward.len(), backward.len());
            for (f, r) in forward.iter().zip(&backward) {
                prop_assert_eq!(f.0, r.0);
                prop_assert_eq!(f.1, r.1.flipped());
            }
        }

        #[test]
        fn display_parse_round_trip(c in arb_config()) {
            let s = c.to_string();
            prop_assert_eq!(s.parse::<SemanticConfig>().unwrap(), c);
        }

        #[test]
        fn ordering_matches_text_ordering(a in arb_config(), b in arb_config()) {
            prop_assert_eq!(a.cmp(&b), a.to_string().cmp(&b.to_string()));
        }
    }
}
