//! Sample records, stratified K-fold plans and a synthetic volume generator.

use alloc::collections::BTreeMap;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::rng::{mix_seed, SeededRng};
use crate::volume::{Dims, Volume3D};
use crate::Label;

/// One manifest row.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub path: String,
    pub label: Label,
    pub cohort_tag: String,
}

/// Rejects duplicate ids.
pub fn validate_records(records: &[SampleRecord]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::DuplicateId(r.id.clone()));
        }
    }
    Ok(())
}

/// Records per class, indexed by [`Label::index`].
pub fn class_totals(records: &[SampleRecord]) -> [usize; 2] {
    let mut t = [0; 2];
    for r in records {
        t[r.label.index()] += 1;
    }
    t
}

/// Fold assignment of every record, in manifest order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// `(id, label, fold)` in manifest order.
    pub assignments: Vec<(String, Label, usize)>,
}

/// Ids of one train/validation/test split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub test_fold: usize,
    pub val_fold: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

/// Per class: shuffle with a seeded stream, then deal round-robin from fold 0,
/// so remainders land in the lowest-indexed folds and the last fold is smallest.
pub fn stratified_kfold(records: &[SampleRecord], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 3 {
        return Err(Error::InvalidConfig(format!("{k} folds; need at least 3 for train/validation/test")));
    }
    validate_records(records)?;
    let mut fold = vec![0; records.len()];
    for label in [Label::Cn, Label::Ad] {
        let mut members: Vec<usize> = (0..records.len()).filter(|&i| records[i].label == label).collect();
        if members.len() < k {
            return Err(Error::TooFewSamples { class: label.name(), count: members.len(), k });
        }
        SeededRng::new(mix_seed(seed, label.index() as u64)).shuffle(&mut members);
        for (j, &i) in members.iter().enumerate() {
            fold[i] = j % k;
        }
    }
    let assignments = records.iter().zip(fold).map(|(r, f)| (r.id.clone(), r.label, f)).collect();
    Ok(FoldPlan { k, seed, assignments })
}

impl FoldPlan {
    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignments.iter().find(|(i, _, _)| i == id).map(|(_, _, f)| *f)
    }

    pub fn members(&self, fold: usize) -> Vec<String> {
        self.assignments.iter().filter(|(_, _, f)| *f == fold).map(|(id, _, _)| id.clone()).collect()
    }

    /// `counts[f][class]`.
    pub fn class_counts(&self) -> Vec<[usize; 2]> {
        let mut c = vec![[0; 2]; self.k];
        for (_, label, f) in &self.assignments {
            c[*f][label.index()] += 1;
        }
        c
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        self.class_counts().iter().map(|c| c[0] + c[1]).collect()
    }

    /// Folds whose size is neither `floor(n/k)` nor `ceil(n/k)`.
    pub fn unbalanced_folds(&self) -> Vec<usize> {
        let n = self.assignments.len();
        let (lo, hi) = (n / self.k, n.div_ceil(self.k));
        self.fold_sizes().iter().enumerate().filter(|(_, s)| **s < lo || **s > hi).map(|(f, _)| f).collect()
    }

    /// Test = `test_fold`, validation = `(test_fold + 1) mod k`, training = the rest.
    pub fn materialize_split(&self, test_fold: usize) -> Result<Split> {
        if test_fold >= self.k {
            return Err(Error::InvalidConfig(format!("test fold {test_fold} with k = {}", self.k)));
        }
        let val_fold = (test_fold + 1) % self.k;
        let mut split = Split { test_fold, val_fold, train: Vec::new(), val: Vec::new(), test: Vec::new() };
        for (id, _, f) in &self.assignments {
            let dst = match *f {
                f if f == test_fold => &mut split.test,
                f if f == val_fold => &mut split.val,
                _ => &mut split.train,
            };
            dst.push(id.clone());
        }
        Ok(split)
    }
}

/// Parameters of the synthetic cohort.
///
/// Every volume holds a smooth ellipsoid of "tissue" (intensity 1) around a
/// central cavity of lower intensity; AD volumes have a larger cavity.
/// Per-sample anatomy jitter and additive Gaussian noise make the task
/// non-trivial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub dims: Dims,
    /// `(CN, AD)` counts.
    pub n_per_class: [usize; 2],
    /// Ellipsoid semi-axes as fractions of each axis length.
    pub semi_axes: [f64; 3],
    /// CN cavity radius as a fraction of the ellipsoid.
    pub cavity_radius: f64,
    /// Extra AD cavity radius (same units).
    pub delta: f64,
    /// Cavity intensity (tissue is 1, background 0).
    pub cavity_intensity: f64,
    /// Edge width of the smooth boundaries, in voxels.
    pub softness: f64,
    /// Relative jitter of the ellipsoid size per sample.
    pub size_jitter: f64,
    /// Uniform jitter of the cavity radius per sample (same units as `delta`).
    pub cavity_jitter: f64,
    /// Uniform jitter of the centre per axis, in voxels.
    pub center_jitter: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            dims: Dims::new(32, 32, 25),
            n_per_class: [70, 70],
            semi_axes: [0.38, 0.38, 0.38],
            cavity_radius: 0.3,
            delta: 0.2,
            cavity_intensity: 0.2,
            softness: 1.0,
            size_jitter: 0.05,
            cavity_jitter: 0.05,
            center_jitter: 1.0,
            noise_sigma: 0.3,
            seed: 0,
        }
    }
}

/// Per-sample anatomy.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Anatomy {
    center: [f64; 3],
    axes: [f64; 3],
    cavity: f64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = [
            self.cavity_radius,
            self.delta,
            self.cavity_intensity,
            self.size_jitter,
            self.cavity_jitter,
            self.center_jitter,
            self.noise_sigma,
        ]
        .iter()
        .all(|v| v.is_finite() && *v >= 0.0);
        if self.dims.is_empty() || !finite_nonneg || !(self.softness > 0.0) || self.semi_axes.iter().any(|a| !(*a > 0.0)) {
            return Err(Error::InvalidConfig(format!("synthetic spec {self:?}")));
        }
        Ok(())
    }

    fn prototype(&self, label: Label) -> Anatomy {
        let d = self.dims.as_array();
        Anatomy {
            center: self.dims.center(),
            axes: [0, 1, 2].map(|i| self.semi_axes[i] * d[i] as f64),
            cavity: self.cavity_radius + if label == Label::Ad { self.delta } else { 0.0 },
        }
    }

    fn jittered(&self, label: Label, rng: &mut SeededRng) -> Anatomy {
        let mut a = self.prototype(label);
        let s = 1.0 + self.size_jitter * (2.0 * rng.uniform() - 1.0);
        for i in 0..3 {
            a.axes[i] *= s;
            a.center[i] += self.center_jitter * (2.0 * rng.uniform() - 1.0);
        }
        a.cavity = (a.cavity + self.cavity_jitter * (2.0 * rng.uniform() - 1.0)).max(0.0);
        a
    }

    /// Noise-free intensity at voxel `p`.
    fn intensity(&self, a: &Anatomy, p: [f64; 3]) -> f64 {
        let r = math::sqrt(
            (0..3).map(|i| ((p[i] - a.center[i]) / a.axes[i]) * ((p[i] - a.center[i]) / a.axes[i])).sum::<f64>(),
        );
        // Approximate signed distance in voxels along the smallest semi-axis.
        let scale = a.axes.iter().copied().fold(f64::INFINITY, f64::min);
        let step = |edge: f64| 1.0 / (1.0 + math::exp((r - edge) * scale / self.softness));
        let tissue = step(1.0);
        let cavity = if a.cavity > 0.0 { step(a.cavity) } else { 0.0 };
        tissue - (1.0 - self.cavity_intensity) * cavity
    }

    fn render(&self, a: &Anatomy, noise: Option<&mut SeededRng>) -> Volume3D {
        let mut v = Volume3D::from_fn(self.dims, |x, y, z| self.intensity(a, [x as f64, y as f64, z as f64]))
            .expect("finite intensities");
        if let Some(rng) = noise {
            if self.noise_sigma > 0.0 {
                let sigma = self.noise_sigma;
                let noisy: Vec<f64> = v.data().iter().map(|x| x + sigma * rng.normal()).collect();
                v = Volume3D::new(self.dims, noisy).expect("finite");
            }
        }
        v
    }

    /// Noise- and jitter-free class prototype.
    pub fn prototype_volume(&self, label: Label) -> Volume3D {
        self.render(&self.prototype(label), None)
    }
}

/// Generates `n_per_class[0]` CN volumes followed by `n_per_class[1]` AD volumes.
///
/// Sample `i` of class `c` draws from its own stream derived from
/// `(seed, c, i)`, so counts can change without disturbing other samples.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<(Volume3D, Label)>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(spec.n_per_class[0] + spec.n_per_class[1]);
    for label in [Label::Cn, Label::Ad] {
        for i in 0..spec.n_per_class[label.index()] {
            let mut rng = SeededRng::new(mix_seed(mix_seed(spec.seed, label.index() as u64), i as u64));
            let anatomy = spec.jittered(label, &mut rng);
            out.push((spec.render(&anatomy, Some(&mut rng)), label));
        }
    }
    Ok(out)
}

/// Mean-intensity rule over the shell where CN tissue becomes AD cavity.
#[derive(Clone, Debug, PartialEq)]
pub struct CavityRule {
    pub region: Vec<usize>,
    pub threshold: f64,
}

impl CavityRule {
    /// Region: prototype voxels whose normalized radius lies between the CN and
    /// AD cavity radii. Threshold: midpoint of the two prototypes' region means.
    pub fn from_spec(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let cn = spec.prototype(Label::Cn);
        let (lo, hi) = (spec.cavity_radius, spec.cavity_radius + spec.delta);
        let d = spec.dims;
        let mut region = Vec::new();
        for x in 0..d.nx {
            for y in 0..d.ny {
                for z in 0..d.nz {
                    let p = [x as f64, y as f64, z as f64];
                    let r = math::sqrt((0..3).map(|i| (p[i] - cn.center[i]) / cn.axes[i]).map(|t| t * t).sum::<f64>());
                    if r >= lo && r < hi {
                        region.push(d.index(x, y, z));
                    }
                }
            }
        }
        if region.is_empty() {
            return Err(Error::DegenerateInput("cavity rule region is empty"));
        }
        let mut rule = CavityRule { region, threshold: 0.0 };
        let m_cn = rule.region_mean(&spec.prototype_volume(Label::Cn));
        let m_ad = rule.region_mean(&spec.prototype_volume(Label::Ad));
        rule.threshold = 0.5 * (m_cn + m_ad);
        Ok(rule)
    }

    pub fn region_mean(&self, v: &Volume3D) -> f64 {
        self.region.iter().map(|&i| v.data()[i]).sum::<f64>() / self.region.len() as f64
    }

    /// AD when the shell is darker than the threshold.
    pub fn classify(&self, v: &Volume3D) -> Label {
        if self.region_mean(v) < self.threshold {
            Label::Ad
        } else {
            Label::Cn
        }
    }

    pub fn accuracy(&self, set: &[(Volume3D, Label)]) -> f64 {
        if set.is_empty() {
            return f64::NAN;
        }
        set.iter().filter(|(v, l)| self.classify(v) == *l).count() as f64 / set.len() as f64
    }
}

/// Builds records with ids `{prefix}-{cn|ad}-{index:04}` for a generated set.
pub fn synthetic_records(set: &[(Volume3D, Label)], prefix: &str, cohort_tag: &str) -> Vec<SampleRecord> {
    let mut counters: BTreeMap<Label, usize> = BTreeMap::new();
    set.iter()
        .map(|(_, label)| {
            let n = counters.entry(*label).or_default();
            let id = format!("{prefix}-{}-{:04}", label.name().to_ascii_lowercase(), *n);
            *n += 1;
            SampleRecord { path: format!("{id}.vol"), id, label: *label, cohort_tag: cohort_tag.into() }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn records(cn: usize, ad: usize) -> Vec<SampleRecord> {
        (0..cn + ad)
            .map(|i| SampleRecord {
                id: format!("s{i}"),
                path: format!("s{i}.vol"),
                label: if i < cn { Label::Cn } else { Label::Ad },
                cohort_tag: "1.5T".into(),
            })
            .collect()
    }

    #[test]
    fn paper_cohort_fold_counts() {
        let recs = records(307, 243);
        assert_eq!(class_totals(&recs), [307, 243]);
        let plan = stratified_kfold(&recs, 7, 1).unwrap();
        let c = plan.class_counts();
        assert_eq!(c.iter().map(|c| c[0]).collect::<Vec<_>>(), [44, 44, 44, 44, 44, 44, 43]);
        assert_eq!(c.iter().map(|c| c[1]).collect::<Vec<_>>(), [35, 35, 35, 35, 35, 34, 34]);
        assert_eq!(plan.fold_sizes(), [79, 79, 79, 79, 79, 78, 77]);
        assert_eq!(plan.unbalanced_folds(), [6]);
        let split = plan.materialize_split(6).unwrap();
        assert_eq!((split.test.len(), split.val.len(), split.train.len()), (77, 79, 394));
        for f in 0..7 {
            let s = plan.materialize_split(f).unwrap();
            assert!((392..=395).contains(&s.train.len()));
            assert!((77..=79).contains(&s.val.len()) && (77..=79).contains(&s.test.len()));
        }
    }

    #[test]
    fn one_per_class_per_fold() {
        let plan = stratified_kfold(&records(7, 7), 7, 3).unwrap();
        assert!(plan.class_counts().iter().all(|c| *c == [1, 1]));
    }

    #[test]
    fn too_few_and_duplicates() {
        assert_eq!(
            stratified_kfold(&records(6, 10), 7, 0),
            Err(Error::TooFewSamples { class: "CN", count: 6, k: 7 })
        );
        let mut recs = records(8, 8);
        recs[3].id = "s0".into();
        assert_eq!(stratified_kfold(&recs, 7, 0), Err(Error::DuplicateId("s0".into())));
    }

    #[test]
    fn split_rotation() {
        let plan = stratified_kfold(&records(14, 14), 7, 0).unwrap();
        let s = plan.materialize_split(6).unwrap();
        assert_eq!((s.test_fold, s.val_fold), (6, 0));
        assert!(plan.materialize_split(7).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn folds_partition_and_balance(cn in 7usize..120, ad in 7usize..120, seed in any::<u64>(), f in 0usize..7) {
            let recs = records(cn, ad);
            let plan = stratified_kfold(&recs, 7, seed).unwrap();
            prop_assert_eq!(&plan, &stratified_kfold(&recs, 7, seed).unwrap());
            for class in 0..2 {
                let counts: Vec<usize> = plan.class_counts().iter().map(|c| c[class]).collect();
                let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
                prop_assert!(hi - lo <= 1);
                prop_assert!(counts.windows(2).all(|w| w[0] >= w[1]));
            }
            let s = plan.materialize_split(f).unwrap();
            let mut all: Vec<&String> = s.train.iter().chain(&s.val).chain(&s.test).collect();
            prop_assert_eq!(all.len(), recs.len());
            all.sort();
            all.dedup();
            prop_assert_eq!(all.len(), recs.len());
        }
    }

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec { dims: Dims::new(16, 16, 12), n_per_class: [10, 10], seed: 4, ..SyntheticSpec::default() }
    }

    #[test]
    fn noiseless_set_is_separated_by_the_rule() {
        let spec = SyntheticSpec { noise_sigma: 0.0, delta: 0.3, ..small_spec() };
        let set = generate_synthetic(&spec).unwrap();
        let rule = CavityRule::from_spec(&spec).unwrap();
        assert_eq!(rule.accuracy(&set), 1.0);
        // class means differ on the rule's region
        let mean = |l: Label| {
            let vs: Vec<f64> = set.iter().filter(|(_, x)| *x == l).map(|(v, _)| rule.region_mean(v)).collect();
            vs.iter().sum::<f64>() / vs.len() as f64
        };
        assert!(mean(Label::Cn) > mean(Label::Ad) + 0.2);
    }

    #[test]
    fn empty_and_deterministic() {
        let spec = SyntheticSpec { n_per_class: [0, 0], ..small_spec() };
        assert!(generate_synthetic(&spec).unwrap().is_empty());
        assert_eq!(generate_synthetic(&small_spec()).unwrap(), generate_synthetic(&small_spec()).unwrap());
    }

    #[test]
    fn rule_accuracy_degrades_with_noise() {
        let spec = SyntheticSpec { n_per_class: [60, 60], ..small_spec() };
        let rule = CavityRule::from_spec(&spec).unwrap();
        let acc = |sigma: f64| {
            let s = SyntheticSpec { noise_sigma: sigma, ..spec.clone() };
            rule.accuracy(&generate_synthetic(&s).unwrap())
        };
        let accs: Vec<f64> = [0.0, 1.0, 2.0, 4.0, 8.0, 16.0].into_iter().map(acc).collect();
        // Same seed at every sigma: the noise fields are scaled copies, so the
        // comparison is coupled; allow a small finite-sample slack.
        assert!(accs.windows(2).all(|w| w[1] <= w[0] + 0.05), "{accs:?}");
        assert!(accs[0] == 1.0 && accs[5] < 0.6, "{accs:?}");
    }

    #[test]
    fn record_ids() {
        let set = generate_synthetic(&SyntheticSpec { n_per_class: [2, 1], ..small_spec() }).unwrap();
        let ids: Vec<String> = synthetic_records(&set, "syn", "desk").into_iter().map(|r| r.id).collect();
        assert_eq!(ids, ["syn-cn-0000", "syn-cn-0001", "syn-ad-0000"]);
    }
}
