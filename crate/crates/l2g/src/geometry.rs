//! Continuous-scene stand-in for the environment.
//!
//! Blocks are cubes identified by their center positions; the semantic
//! mapping functions threshold distances to decide each predicate. Scene
//! samplers construct a physical witness for every [`StructureClass`], which
//! lets [`empirical_valid_set`] cross-check the enumerated valid set against
//! actual geometry instead of trusting the symbolic rules.

use std::collections::BTreeSet;
use std::f64::consts::TAU;

use rand::Rng;
use thiserror::Error;

use crate::semantics::{
    enumerate_structures, realize, ObjectId, PredicateKind, SemanticConfig, StructureClass,
    ThirdPattern, SLOTS,
};

/// A block center in meters.
pub type Position = [f64; 3];

/// Static positions of the three blocks, indexed by [`ObjectId::index`].
///
/// Invariants (maintained by the samplers): every `z ≥ 0`, and every pairwise
/// center distance is at least the block side (no interpenetration).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scene {
    pub positions: [Position; 3],
}

impl Scene {
    pub fn position(&self, id: ObjectId) -> Position {
        self.positions[id.index()]
    }

    /// True iff the no-interpenetration and above-table invariants hold.
    pub fn is_physical(&self, params: &MappingParams) -> bool {
        let h = params.block_side;
        self.positions.iter().all(|p| p[2] >= 0.0)
            && PAIRS
                .iter()
                .all(|&(i, j)| dist(self.positions[i], self.positions[j]) >= h - 1e-12)
    }

    /// Random global translation and rotation about the z-axis; the predicates
    /// depend only on relative positions, so the configuration is unchanged.
    fn shifted(mut self, rng: &mut impl Rng) -> Scene {
        let theta = rng.gen_range(0.0..TAU);
        let (sin, cos) = theta.sin_cos();
        let tx = rng.gen_range(-0.2..0.2);
        let ty = rng.gen_range(-0.2..0.2);
        for p in &mut self.positions {
            let (x, y) = (p[0], p[1]);
            p[0] = x * cos - y * sin + tx;
            p[1] = x * sin + y * cos + ty;
        }
        self
    }
}

const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

/// Thresholds of the semantic mapping functions, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MappingParams {
    /// Cube side `h`; blocks rest with centers at `z = h/2`.
    pub block_side: f64,
    /// `close` holds below this Euclidean distance (`δ_c`).
    pub close_threshold: f64,
    /// Horizontal tolerance for `above` (`δ_xy`).
    pub above_xy_tol: f64,
    /// Vertical tolerance around one block height for `above` (`ε`).
    pub above_z_tol: f64,
}

/// A parameter set violating the threshold geometry.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum InvalidParams {
    #[error("block side must be positive, got {0}")]
    NonPositiveSide(f64),
    #[error("close threshold {dc} must lie strictly between h={h} and 2h")]
    CloseThresholdOutOfRange { dc: f64, h: f64 },
    #[error("above xy tolerance {dxy} must be in (0, h={h}]")]
    XyTolOutOfRange { dxy: f64, h: f64 },
    #[error("above z tolerance {eps} must lie strictly between 0 and h/2={half_h}")]
    ZTolOutOfRange { eps: f64, half_h: f64 },
}

impl MappingParams {
    /// Validates the threshold invariants: `h < δ_c < 2h` (stacked pairs are
    /// close, the ends of a 3-stack are not), `0 < δ_xy ≤ h`, `0 < ε < h/2`.
    pub fn new(
        block_side: f64,
        close_threshold: f64,
        above_xy_tol: f64,
        above_z_tol: f64,
    ) -> Result<MappingParams, InvalidParams> {
        if block_side.is_nan() || block_side <= 0.0 {
            return Err(InvalidParams::NonPositiveSide(block_side));
        }
        if !(close_threshold > block_side && close_threshold < 2.0 * block_side) {
            return Err(InvalidParams::CloseThresholdOutOfRange {
                dc: close_threshold,
                h: block_side,
            });
        }
        if !(above_xy_tol > 0.0 && above_xy_tol <= block_side) {
            return Err(InvalidParams::XyTolOutOfRange { dxy: above_xy_tol, h: block_side });
        }
        if !(above_z_tol > 0.0 && above_z_tol < block_side / 2.0) {
            return Err(InvalidParams::ZTolOutOfRange {
                eps: above_z_tol,
                half_h: block_side / 2.0,
            });
        }
        Ok(MappingParams { block_side, close_threshold, above_xy_tol, above_z_tol })
    }

    /// Horizontal distance at which a resting block stops being close to the
    /// top of a 2-stack: √(δ_c² − h²).
    fn top_close_reach(&self) -> f64 {
        (self.close_threshold * self.close_threshold - self.block_side * self.block_side).sqrt()
    }
}

impl Default for MappingParams {
    /// Fetch-like block scale: h = 5 cm, δ_c = 7.5 cm, δ_xy = 4 cm, ε = 2 cm.
    ///
    /// δ_xy must exceed h/2 for pyramids to exist at all: the top block sits
    /// half the base separation (≥ h/2) from each base center.
    fn default() -> MappingParams {
        MappingParams::new(0.05, 0.075, 0.04, 0.02).expect("default params are coherent")
    }
}

fn dist(a: Position, b: Position) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

fn xy_dist(a: Position, b: Position) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// `close(i, j)`: Euclidean distance below `δ_c`. Symmetric by construction.
pub fn eval_close(p_i: Position, p_j: Position, params: &MappingParams) -> bool {
    dist(p_i, p_j) < params.close_threshold
}

/// `above(i, j)`: block `i` directly on top of block `j` — one block height
/// higher (within `ε`) and horizontally aligned (within `δ_xy`).
///
/// Asymmetric: the z-window around `+h` excludes the window around `−h`.
pub fn eval_above(p_i: Position, p_j: Position, params: &MappingParams) -> bool {
    (p_i[2] - p_j[2] - params.block_side).abs() < params.above_z_tol
        && xy_dist(p_i, p_j) < params.above_xy_tol
}

/// Applies the mapping functions slot by slot.
pub fn scene_to_config(scene: &Scene, params: &MappingParams) -> SemanticConfig {
    let mut c = SemanticConfig::ZERO;
    for slot in &SLOTS {
        let (a, b) = slot.pair;
        let v = match slot.kind {
            PredicateKind::Close => eval_close(scene.position(a), scene.position(b), params),
            PredicateKind::Above => eval_above(scene.position(a), scene.position(b), params),
        };
        c.set(slot.index, v);
    }
    c
}

/// Rejection sampling gave up: the structure has no witness under `params`
/// (or an astronomically unlucky draw streak, which the attempt budget rules
/// out in practice).
#[derive(Debug, Clone, PartialEq, Error)]
#[error("scene sampler exhausted {attempts} attempts for {structure:?}")]
pub struct SamplerExhausted {
    pub structure: StructureClass,
    pub attempts: usize,
}

const SAMPLE_ATTEMPTS: usize = 64;

/// Draws a scene whose semantic configuration is exactly `realize(structure)`.
///
/// Construction is analytic per structure class (with randomized placement,
/// rotation and jitter); a final mapping check rejects any draw that landed on
/// a threshold boundary, so the round-trip property holds for every returned
/// scene.
pub fn sample_scene(
    structure: &StructureClass,
    rng: &mut impl Rng,
    params: &MappingParams,
) -> Result<Scene, SamplerExhausted> {
    let target = realize(structure);
    for _ in 0..SAMPLE_ATTEMPTS {
        let Some(scene) = try_sample(structure, rng, params) else { continue };
        if scene.is_physical(params) && scene_to_config(&scene, params) == target {
            return Ok(scene);
        }
    }
    Err(SamplerExhausted { structure: *structure, attempts: SAMPLE_ATTEMPTS })
}

/// Samples every structure `n_per_structure` times and unions the observed
/// configurations — the geometric counterpart of `enumerate_valid`.
pub fn empirical_valid_set(
    n_per_structure: usize,
    rng: &mut impl Rng,
    params: &MappingParams,
) -> Result<BTreeSet<SemanticConfig>, SamplerExhausted> {
    assert!(n_per_structure >= 1, "need at least one scene per structure");
    let mut seen = BTreeSet::new();
    for structure in enumerate_structures() {
        for _ in 0..n_per_structure {
            let scene = sample_scene(&structure, rng, params)?;
            seen.insert(scene_to_config(&scene, params));
        }
    }
    Ok(seen)
}

/// One placement attempt; `None` when the parameter geometry leaves an empty
/// sampling interval (e.g. pyramids with δ_xy ≤ h/2, or a near-both third
/// block with δ_c ≤ h√2).
fn try_sample(
    structure: &StructureClass,
    rng: &mut impl Rng,
    params: &MappingParams,
) -> Option<Scene> {
    let h = params.block_side;
    let dc = params.close_threshold;
    let dxy = params.above_xy_tol;
    let reach = params.top_close_reach();
    let rest = h / 2.0;
    let mut positions = [[0.0; 3]; 3];

    match *structure {
        StructureClass::Flat { pattern } => {
            let close_pairs: Vec<(usize, usize)> = PAIRS
                .iter()
                .zip(pattern)
                .filter_map(|(&p, bit)| bit.then_some(p))
                .collect();
            let xy = flat_layout(&close_pairs, rng, params)?;
            for (i, &(x, y)) in xy.iter().enumerate() {
                positions[i] = [x, y, rest];
            }
        }
        StructureClass::Stack2 { top, bottom, third } => {
            let k = ObjectId::ALL.into_iter().find(|&o| o != top && o != bottom)?;
            // Keep the top's jitter radius small enough that the third
            // block's distance bands below stay crisp against both the close
            // and the above thresholds.
            let r_j = 0.02 * h.min(dxy);
            positions[bottom.index()] = [0.0, 0.0, rest];
            let (jx, jy) = disc(rng, r_j);
            positions[top.index()] = [jx, jy, rest + h];
            // Distance of the third block from the stack axis.
            let d = match third {
                ThirdPattern::Isolated => sample_in(rng, 2.0 * dc, 4.0 * dc)?,
                // Close to the bottom but not the top: beyond √(δ_c²−h²)
                // horizontally (the top is a block height up) yet inside δ_c.
                ThirdPattern::NearBottom => sample_in(rng, h.max(reach + r_j), dc)?,
                // Close to both: inside √(δ_c²−h²) but clear of the bottom
                // block and of the above-alignment cone around the top.
                ThirdPattern::NearBoth => sample_in(rng, h.max(dxy + r_j), reach - r_j)?,
            };
            let theta = rng.gen_range(0.0..TAU);
            positions[k.index()] = [d * theta.cos(), d * theta.sin(), rest];
        }
        StructureClass::Stack3 { top, mid, bottom } => {
            let r_j = 0.45 * dxy.min(reach);
            positions[bottom.index()] = [0.0, 0.0, rest];
            let (jx, jy) = disc(rng, r_j);
            positions[mid.index()] = [jx, jy, rest + h];
            let (kx, ky) = disc(rng, r_j);
            positions[top.index()] = [jx + kx, jy + ky, rest + 2.0 * h];
        }
        StructureClass::Pyramid { top } => {
            let [x, y] = top.others();
            // Base separation: wide enough to avoid interpenetration, narrow
            // enough that the centered top is above (δ_xy) and close (δ_c) to
            // both bases while the bases stay close to each other.
            let upper = dc.min(2.0 * dxy).min(2.0 * reach);
            let s = sample_in(rng, h, upper)?;
            positions[x.index()] = [-s / 2.0, 0.0, rest];
            positions[y.index()] = [s / 2.0, 0.0, rest];
            let slack = (dxy - s / 2.0).min(h / 10.0);
            let jy = rng.gen_range(-slack / 2.0..slack / 2.0);
            positions[top.index()] = [0.0, jy, rest + h];
        }
    }

    Some(Scene { positions }.shifted(rng))
}

/// Uniform draw from the middle 80% of `(lo, hi)`; `None` on an empty range.
fn sample_in(rng: &mut impl Rng, lo: f64, hi: f64) -> Option<f64> {
    if hi.is_nan() || lo.is_nan() || hi <= lo {
        return None;
    }
    let margin = 0.1 * (hi - lo);
    Some(rng.gen_range(lo + margin..hi - margin))
}

/// Uniform draw from a disc of radius `r`.
fn disc(rng: &mut impl Rng, r: f64) -> (f64, f64) {
    let rho = r * rng.gen::<f64>().sqrt();
    let theta = rng.gen_range(0.0..TAU);
    (rho * theta.cos(), rho * theta.sin())
}

/// Places three coplanar blocks realizing exactly the given close pairs.
fn flat_layout(
    close_pairs: &[(usize, usize)],
    rng: &mut impl Rng,
    params: &MappingParams,
) -> Option<[(f64, f64); 3]> {
    let h = params.block_side;
    let dc = params.close_threshold;
    let mut xy = [(0.0, 0.0); 3];
    match close_pairs {
        [] => {
            let d1 = sample_in(rng, 2.0 * dc, 4.0 * dc)?;
            let d2 = sample_in(rng, 2.0 * dc, 4.0 * dc)?;
            xy[1] = (d1, 0.0);
            xy[2] = (d1 / 2.0, d2);
        }
        [(i, j)] => {
            let near = sample_in(rng, h, dc)?;
            let far = sample_in(rng, 2.0 * dc, 4.0 * dc)?;
            xy[*j] = (near, 0.0);
            xy[other_of(*i, *j)] = (near / 2.0, far);
        }
        [a, b] => {
            // The object common to both close pairs sits between the other
            // two; opposite collinear placement keeps the outer pair apart
            // (their distance is at least 2h > δ_c).
            let center = common_of(*a, *b)?;
            let ends: Vec<usize> = (0..3).filter(|&i| i != center).collect();
            let d1 = sample_in(rng, h, dc)?;
            let d2 = sample_in(rng, h, dc)?;
            xy[ends[0]] = (-d1, 0.0);
            xy[ends[1]] = (d2, 0.0);
        }
        [_, _, _] => {
            // All pairs close: an equilateral triangle inside the close band.
            let s = sample_in(rng, h, dc)?;
            xy[1] = (s, 0.0);
            xy[2] = (s / 2.0, s * 3f64.sqrt() / 2.0);
        }
        _ => unreachable!("at most three pairs"),
    }
    Some(xy)
}

fn other_of(i: usize, j: usize) -> usize {
    3 - i - j
}

/// The object appearing in both pairs, if any.
fn common_of(a: (usize, usize), b: (usize, usize)) -> Option<usize> {
    [a.0, a.1].into_iter().find(|x| *x == b.0 || *x == b.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantics::enumerate_valid;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn defaults() -> MappingParams {
        MappingParams::default()
    }

    #[test]
    fn close_thresholds_the_euclidean_distance() {
        let p = defaults();
        assert!(eval_close([0.0, 0.0, 0.025], [0.0, 0.0, 0.075], &p));
        assert!(!eval_close([0.0, 0.0, 0.025], [1.0, 0.0, 0.025], &p));
        // √(0.06² + 0.05²) ≈ 0.0781 just exceeds δ_c = 0.075.
        assert!(!eval_close([0.0, 0.0, 0.025], [0.06, 0.0, 0.075], &p));
    }

    #[test]
    fn above_requires_one_block_height_and_alignment() {
        let p = defaults();
        assert!(eval_above([0.0, 0.0, 0.075], [0.0, 0.0, 0.025], &p));
        assert!(!eval_above([0.0, 0.0, 0.025], [0.06, 0.0, 0.025], &p));
        // Two levels up: |2h − h| = h ≥ ε.
        assert!(!eval_above([0.0, 0.0, 0.125], [0.0, 0.0, 0.025], &p));
    }

    #[test]
    fn scene_to_config_matches_hand_built_scenes() {
        let p = defaults();
        let far = Scene { positions: [[0.0, 0.0, 0.025], [1.0, 0.0, 0.025], [0.0, 1.0, 0.025]] };
        assert_eq!(scene_to_config(&far, &p), SemanticConfig::ZERO);

        // Red on green, blue far away.
        let stack = Scene { positions: [[0.0, 0.0, 0.075], [0.0, 0.0, 0.025], [1.0, 0.0, 0.025]] };
        let expected = realize(&StructureClass::Stack2 {
            top: ObjectId::Red,
            bottom: ObjectId::Green,
            third: ThirdPattern::Isolated,
        });
        assert_eq!(scene_to_config(&stack, &p), expected);

        // Blue centered on adjacent red and green.
        let pyramid =
            Scene { positions: [[-0.03, 0.0, 0.025], [0.03, 0.0, 0.025], [0.0, 0.0, 0.075]] };
        assert_eq!(
            scene_to_config(&pyramid, &p),
            realize(&StructureClass::Pyramid { top: ObjectId::Blue }),
        );
    }

    #[test]
    fn sampled_scenes_round_trip_for_every_structure() {
        let p = defaults();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for structure in enumerate_structures() {
            for _ in 0..20 {
                let scene = sample_scene(&structure, &mut rng, &p).expect("witness exists");
                assert!(scene.is_physical(&p));
                assert_eq!(
                    scene_to_config(&scene, &p),
                    realize(&structure),
                    "round trip failed for {structure:?}",
                );
            }
        }
    }

    #[test]
    fn near_bottom_third_block_sits_in_the_derived_band() {
        let p = defaults();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let structure = StructureClass::Stack2 {
            top: ObjectId::Green,
            bottom: ObjectId::Red,
            third: ThirdPattern::NearBottom,
        };
        let band = (p.top_close_reach(), p.close_threshold);
        for _ in 0..50 {
            let scene = sample_scene(&structure, &mut rng, &p).unwrap();
            let b = scene.position(ObjectId::Red);
            let t = scene.position(ObjectId::Blue);
            let d = ((b[0] - t[0]).powi(2) + (b[1] - t[1]).powi(2)).sqrt();
            assert!(d > band.0 && d < band.1, "distance {d} outside ({}, {})", band.0, band.1);
        }
    }

    #[test]
    fn empirical_valid_set_matches_the_enumeration() {
        let p = defaults();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let empirical = empirical_valid_set(10, &mut rng, &p).expect("all structures samplable");
        assert_eq!(empirical.len(), 35);
        assert!(empirical.contains(&SemanticConfig::ZERO));
        let enumerated: BTreeSet<SemanticConfig> = enumerate_valid().into_iter().collect();
        assert_eq!(empirical, enumerated);
    }

    #[test]
    fn params_validation_rejects_each_broken_invariant() {
        assert!(MappingParams::new(0.05, 0.075, 0.04, 0.02).is_ok());
        assert!(matches!(
            MappingParams::new(-1.0, 0.075, 0.04, 0.02),
            Err(InvalidParams::NonPositiveSide(_)),
        ));
        assert!(matches!(
            MappingParams::new(0.05, 0.11, 0.04, 0.02),
            Err(InvalidParams::CloseThresholdOutOfRange { .. }),
        ));
        assert!(matches!(
            MappingParams::new(0.05, 0.075, 0.06, 0.02),
            Err(InvalidParams::XyTolOutOfRange { .. }),
        ));
        assert!(matches!(
            MappingParams::new(0.05, 0.075, 0.04, 0.03),
            Err(InvalidParams::ZTolOutOfRange { .. }),
        ));
    }

    fn arb_position() -> impl Strategy<Value = Position> {
        [(-0.3f64..0.3), (-0.3f64..0.3), (0.0f64..0.3)].prop_map(|[x, y, z]| [x, y, z])
    }

    proptest! {
        #[test]
        fn close_is_symmetric(a in arb_position(), b in arb_position()) {
            let p = defaults();
            prop_assert_eq!(eval_close(a, b, &p), eval_close(b, a, &p));
        }

        #[test]
        fn above_is_never_mutual(a in arb_position(), b in arb_position()) {
            let p = defaults();
            prop_assert!(!(eval_above(a, b, &p) && eval_above(b, a, &p)));
        }
    }
}
