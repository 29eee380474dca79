//! Seeded affine augmentation and the A/B/C training-set expansion strategies.
//!
//! Parameters are drawn sequentially from one stream per training run; the
//! drawn values are logged so any augmented volume can be replayed exactly.
//!
//! Draws map a unit `u ∈ (0, 1)` to `center + half_width · (2u − 1)`, so a
//! source that always yields `0.5` produces identity parameters.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::rng::UnitSource;
use crate::volume::{mat_mul, warp_affine, AffineTransform, Dims, Mat3, Volume3D};
use crate::Label;

/// Drawn transform parameters. Shifts are fractions of each axis length;
/// angles are degrees about the x, y and z axes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub zoom: f64,
    pub shift: [f64; 3],
    pub angles: [f64; 3],
}

impl AugmentParams {
    pub const IDENTITY: AugmentParams = AugmentParams { zoom: 1.0, shift: [0.0; 3], angles: [0.0; 3] };

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Zoom,
    Shift,
    Rotation,
    All,
}

impl TransformKind {
    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Zoom => "zoom",
            TransformKind::Shift => "shift",
            TransformKind::Rotation => "rotation",
            TransformKind::All => "all",
        }
    }
}

/// Training-set expansion strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    /// One joint zoom+shift+rotation warp per sample.
    A,
    /// One zoom-only, one shift-only and one rotation-only warp per sample.
    B,
    /// Three independent joint warps per sample.
    C,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::A, Strategy::B, Strategy::C];

    /// Transform kinds applied to each sample, in order.
    pub fn kinds(self) -> &'static [TransformKind] {
        match self {
            Strategy::A => &[TransformKind::All],
            Strategy::B => &[TransformKind::Zoom, TransformKind::Shift, TransformKind::Rotation],
            Strategy::C => &[TransformKind::All, TransformKind::All, TransformKind::All],
        }
    }

    /// Augmented samples produced per input sample.
    pub fn multiplier(self) -> usize {
        self.kinds().len()
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::A => "A",
            Strategy::B => "B",
            Strategy::C => "C",
        }
    }
}

impl core::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Strategy::A),
            "B" | "b" => Ok(Strategy::B),
            "C" | "c" => Ok(Strategy::C),
            _ => Err(Error::InvalidConfig(alloc::format!("unknown strategy `{s}`"))),
        }
    }
}

/// Half-widths of the parameter ranges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentRanges {
    /// Zoom is drawn from `[1 - zoom, 1 + zoom]`.
    pub zoom: f64,
    /// Per-axis shift fraction is drawn from `(-shift, shift)`.
    pub shift: f64,
    /// Per-axis angle in degrees is drawn from `[-angle_deg, angle_deg]`.
    pub angle_deg: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        Self { zoom: 0.2, shift: 0.4, angle_deg: 5.0 }
    }
}

impl AugmentRanges {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.zoom)
            && self.shift.is_finite()
            && self.shift >= 0.0
            && self.angle_deg.is_finite()
            && self.angle_deg >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(alloc::format!("augmentation ranges {self:?}")))
        }
    }
}

fn symmetric<U: UnitSource + ?Sized>(src: &mut U, half: f64) -> f64 {
    half * (2.0 * src.next_unit() - 1.0)
}

/// Strictly inside `(-half, half)` (or exactly 0 when `half == 0`).
fn open_symmetric<U: UnitSource + ?Sized>(src: &mut U, half: f64) -> f64 {
    loop {
        let v = symmetric(src, half);
        if v.abs() < half || half == 0.0 {
            return v;
        }
    }
}

/// Draws parameters for `kind`; fields not selected keep their identity value.
///
/// Draw order: zoom, shift (x, y, z), angles (x, y, z), skipping unselected fields.
pub fn sample_params<U: UnitSource + ?Sized>(kind: TransformKind, ranges: &AugmentRanges, src: &mut U) -> AugmentParams {
    let mut p = AugmentParams::IDENTITY;
    let all = kind == TransformKind::All;
    if all || kind == TransformKind::Zoom {
        p.zoom = 1.0 + symmetric(src, ranges.zoom);
    }
    if all || kind == TransformKind::Shift {
        for s in &mut p.shift {
            *s = open_symmetric(src, ranges.shift);
        }
    }
    if all || kind == TransformKind::Rotation {
        for a in &mut p.angles {
            *a = symmetric(src, ranges.angle_deg);
        }
    }
    p
}

fn rotation(axis: usize, degrees: f64) -> Mat3 {
    let r = degrees.to_radians();
    let (s, c) = (math::sin(r), math::cos(r));
    match axis {
        0 => [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]],
        1 => [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
        _ => [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
    }
}

/// Scale, then rotate `Rz·Ry·Rx`, about the volume center, then translate by
/// `shift_i · dims_i` voxels.
pub fn to_affine(p: &AugmentParams, dims: Dims) -> AffineTransform {
    let r = mat_mul(&rotation(2, p.angles[2]), &mat_mul(&rotation(1, p.angles[1]), &rotation(0, p.angles[0])));
    let mut linear = r;
    for row in &mut linear {
        for v in row.iter_mut() {
            *v *= p.zoom;
        }
    }
    let d = dims.as_array();
    AffineTransform {
        linear,
        translation: [p.shift[0] * d[0] as f64, p.shift[1] * d[1] as f64, p.shift[2] * d[2] as f64],
        center: dims.center(),
    }
}

/// Warps one volume with the given parameters; output dims equal input dims.
pub fn apply_params(vol: &Volume3D, p: &AugmentParams) -> Result<Volume3D> {
    warp_affine(vol, &to_affine(p, vol.dims()), vol.dims())
}

/// One augmented sample's provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentRecord {
    /// Index of the source sample in the input sequence.
    pub source: usize,
    pub strategy: Strategy,
    pub kind: TransformKind,
    pub params: AugmentParams,
    /// Generator position before the draw (see [`UnitSource::position`]).
    pub seed_position: u64,
}

/// Draws the parameters for every augmented sample, sample-major.
pub fn plan<U: UnitSource + ?Sized>(
    n: usize,
    strategy: Strategy,
    ranges: &AugmentRanges,
    src: &mut U,
) -> Result<Vec<AugmentRecord>> {
    if n == 0 {
        return Err(Error::EmptySplit("augmentation input"));
    }
    ranges.validate()?;
    let mut out = Vec::with_capacity(n * strategy.multiplier());
    for source in 0..n {
        for &kind in strategy.kinds() {
            let seed_position = src.position();
            let params = sample_params(kind, ranges, src);
            out.push(AugmentRecord { source, strategy, kind, params, seed_position });
        }
    }
    Ok(out)
}

/// Augmented training set plus its replay log.
#[derive(Clone, Debug, PartialEq)]
pub struct Augmented {
    pub samples: Vec<(Volume3D, Label)>,
    pub log: Vec<AugmentRecord>,
}

/// Expands `samples` with `strategy`. With `include_originals` the output is
/// the originals followed by the augmented samples (in log order).
pub fn augment_set<U: UnitSource + ?Sized>(
    samples: &[(Volume3D, Label)],
    strategy: Strategy,
    ranges: &AugmentRanges,
    include_originals: bool,
    src: &mut U,
) -> Result<Augmented> {
    let log = plan(samples.len(), strategy, ranges, src)?;
    let mut out = Vec::with_capacity(samples.len() * (include_originals as usize) + log.len());
    if include_originals {
        out.extend(samples.iter().cloned());
    }
    for rec in &log {
        let (vol, label) = &samples[rec.source];
        out.push((apply_params(vol, &rec.params)?, *label));
    }
    Ok(Augmented { samples: out, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::{any, prop_assert_eq, proptest, ProptestConfig};

    struct Midpoint;

    impl UnitSource for Midpoint {
        fn next_unit(&mut self) -> f64 {
            0.5
        }
    }

    struct Fixed(Vec<f64>, usize);

    impl UnitSource for Fixed {
        fn next_unit(&mut self) -> f64 {
            self.1 += 1;
            self.0[(self.1 - 1) % self.0.len()]
        }
    }

    fn blob(dims: Dims, seed: u64) -> Volume3D {
        let mut rng = SeededRng::new(seed);
        Volume3D::from_fn(dims, |_, _, _| rng.uniform()).unwrap()
    }

    #[test]
    fn zoom_kind_leaves_other_fields() {
        let mut rng = SeededRng::new(1);
        for _ in 0..1000 {
            let p = sample_params(TransformKind::Zoom, &AugmentRanges::default(), &mut rng);
            assert_eq!((p.shift, p.angles), ([0.0; 3], [0.0; 3]));
            assert!((0.8..=1.2).contains(&p.zoom));
        }
    }

    #[test]
    fn midpoint_source_gives_identity() {
        for kind in [TransformKind::Zoom, TransformKind::Shift, TransformKind::Rotation, TransformKind::All] {
            assert!(sample_params(kind, &AugmentRanges::default(), &mut Midpoint).is_identity());
        }
    }

    #[test]
    fn ranges_hold_at_extreme_units() {
        let mut src = Fixed(alloc::vec![f64::EPSILON / 2.0, 1.0 - f64::EPSILON / 2.0], 0);
        for _ in 0..10 {
            let p = sample_params(TransformKind::All, &AugmentRanges::default(), &mut src);
            assert!((0.8..=1.2).contains(&p.zoom));
            assert!(p.shift.iter().all(|s| s.abs() < 0.4));
            assert!(p.angles.iter().all(|a| a.abs() <= 5.0));
        }
    }

    #[test]
    fn identity_params_give_identity_transform() {
        let dims = Dims::new(5, 6, 7);
        assert_eq!(to_affine(&AugmentParams::IDENTITY, dims), AffineTransform::identity(dims.center()));
    }

    #[test]
    fn pure_zoom_is_diagonal() {
        let p = AugmentParams { zoom: 1.2, ..AugmentParams::IDENTITY };
        let t = to_affine(&p, Dims::new(4, 4, 4));
        assert_eq!(t.linear, [[1.2, 0.0, 0.0], [0.0, 1.2, 0.0], [0.0, 0.0, 1.2]]);
        assert_eq!(t.translation, [0.0; 3]);
        assert_eq!(t.center, [1.5; 3]);
    }

    #[test]
    fn x_rotation_matches_closed_form() {
        let p = AugmentParams { angles: [5.0, 0.0, 0.0], ..AugmentParams::IDENTITY };
        let l = to_affine(&p, Dims::new(3, 3, 3)).linear;
        let a = 5.0f64 * core::f64::consts::PI / 180.0;
        let want = [[1.0, 0.0, 0.0], [0.0, a.cos(), -a.sin()], [0.0, a.sin(), a.cos()]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((l[i][j] - want[i][j]).abs() < 1e-15, "{i}{j}");
            }
        }
    }

    #[test]
    fn integer_shift_is_exact_translation() {
        let dims = Dims::new(10, 8, 5);
        let vol = blob(dims, 3);
        let p = AugmentParams { shift: [0.2, -0.25, 0.0], ..AugmentParams::IDENTITY };
        let out = apply_params(&vol, &p).unwrap();
        for x in 0..10 {
            for y in 0..8 {
                for z in 0..5 {
                    let (sx, sy) = (x as isize - 2, y as isize + 2);
                    let want = if (0..10).contains(&sx) && (0..8).contains(&sy) {
                        vol.get(sx as usize, sy as usize, z)
                    } else {
                        0.0
                    };
                    assert_eq!(out.get(x, y, z), want);
                }
            }
        }
    }

    #[test]
    fn strategy_b_has_one_of_each_kind() {
        let vol = blob(Dims::new(6, 6, 6), 4);
        let mut rng = SeededRng::new(9);
        let aug =
            augment_set(&[(vol.clone(), Label::Ad)], Strategy::B, &AugmentRanges::default(), true, &mut rng).unwrap();
        assert_eq!(aug.samples.len(), 4);
        let kinds: Vec<_> = aug.log.iter().map(|r| r.kind).collect();
        assert_eq!(kinds, [TransformKind::Zoom, TransformKind::Shift, TransformKind::Rotation]);
        let [z, s, r] = [aug.log[0].params, aug.log[1].params, aug.log[2].params];
        assert!(z.zoom != 1.0 && z.shift == [0.0; 3] && z.angles == [0.0; 3]);
        assert!(s.zoom == 1.0 && s.shift != [0.0; 3] && s.angles == [0.0; 3]);
        assert!(r.zoom == 1.0 && r.shift == [0.0; 3] && r.angles != [0.0; 3]);
        for (rec, (out, label)) in aug.log.iter().zip(&aug.samples[1..]) {
            assert_eq!(*out, apply_params(&vol, &rec.params).unwrap());
            assert_eq!(*label, Label::Ad);
        }
        assert_eq!(aug.log.iter().map(|r| r.seed_position).collect::<Vec<_>>(), [0, 1, 4]);
    }

    #[test]
    fn empty_input_is_an_error() {
        let r = augment_set(&[], Strategy::A, &AugmentRanges::default(), true, &mut SeededRng::new(1));
        assert_eq!(r, Err(Error::EmptySplit("augmentation input")));
    }

    fn labelled(n: usize, seed: u64) -> Vec<(Volume3D, Label)> {
        (0..n)
            .map(|i| (blob(Dims::new(3, 2, 2), seed + i as u64), if i % 3 == 0 { Label::Ad } else { Label::Cn }))
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn cardinality_and_labels(n in 1usize..50, seed in any::<u64>(), s in 0usize..3) {
            let strategy = Strategy::ALL[s];
            let input = labelled(n, seed);
            let aug = augment_set(&input, strategy, &AugmentRanges::default(), true, &mut SeededRng::new(seed)).unwrap();
            let want = if strategy == Strategy::A { 2 * n } else { 4 * n };
            prop_assert_eq!(aug.samples.len(), want);
            let count = |xs: &[(Volume3D, Label)], l| xs.iter().filter(|(_, x)| *x == l).count();
            for l in [Label::Cn, Label::Ad] {
                prop_assert_eq!(count(&aug.samples[n..], l), strategy.multiplier() * count(&input, l));
            }
            prop_assert_eq!(&aug.samples[..n], &input[..]);
        }

        #[test]
        fn deterministic_for_a_seed(n in 1usize..8, seed in any::<u64>()) {
            let input = labelled(n, seed);
            let a = augment_set(&input, Strategy::C, &AugmentRanges::default(), true, &mut SeededRng::new(seed)).unwrap();
            let b = augment_set(&input, Strategy::C, &AugmentRanges::default(), true, &mut SeededRng::new(seed)).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn identity_params_are_bit_identical(n in 1usize..10, seed in any::<u64>(), s in 0usize..3) {
            let input = labelled(n, seed);
            let aug = augment_set(&input, Strategy::ALL[s], &AugmentRanges::default(), false, &mut Midpoint).unwrap();
            for (rec, (vol, label)) in aug.log.iter().zip(&aug.samples) {
                prop_assert_eq!(vol, &input[rec.source].0);
                prop_assert_eq!(*label, input[rec.source].1);
            }
        }
    }
}
