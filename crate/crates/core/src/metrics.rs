//! Classification metrics, aggregation over runs, and exact t-SNE.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::rng::SeededRng;
use crate::Label;

/// Counts with AD as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// The same counts with CN as the positive class.
    pub fn swapped(&self) -> Self {
        Self { tp: self.tn, tn: self.tp, fp: self.fn_, fn_: self.fp }
    }

    pub fn add(&mut self, other: &Self) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    /// Rates treating this matrix's positive class as the class of interest.
    pub fn positive_rates(&self) -> ClassRates {
        let predicted = self.tp + self.fp;
        let actual = self.tp + self.fn_;
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let precision = ratio(self.tp, predicted);
        let recall = ratio(self.tp, actual);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        ClassRates { precision, recall, f1, precision_undefined: predicted == 0, recall_undefined: actual == 0 }
    }
}

/// Per-class rates. A zero denominator yields 0 and sets the matching flag.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassRates {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub confusion: ConfusionMatrix,
    pub cn: ClassRates,
    pub ad: ClassRates,
    pub accuracy: f64,
}

impl Rates {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        Self {
            confusion,
            cn: confusion.swapped().positive_rates(),
            ad: confusion.positive_rates(),
            accuracy: confusion.accuracy(),
        }
    }

    pub fn class(&self, label: Label) -> &ClassRates {
        match label {
            Label::Cn => &self.cn,
            Label::Ad => &self.ad,
        }
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { left: a, right: b });
    }
    if a == 0 {
        return Err(Error::DegenerateInput("empty label sequence"));
    }
    Ok(())
}

pub fn confusion_matrix(labels: &[Label], predictions: &[Label]) -> Result<ConfusionMatrix> {
    check_lengths(labels.len(), predictions.len())?;
    let mut m = ConfusionMatrix::default();
    for (l, p) in labels.iter().zip(predictions) {
        match (l, p) {
            (Label::Ad, Label::Ad) => m.tp += 1,
            (Label::Cn, Label::Cn) => m.tn += 1,
            (Label::Cn, Label::Ad) => m.fp += 1,
            (Label::Ad, Label::Cn) => m.fn_ += 1,
        }
    }
    Ok(m)
}

pub fn confusion_and_rates(labels: &[Label], predictions: &[Label]) -> Result<Rates> {
    Ok(Rates::from_confusion(confusion_matrix(labels, predictions)?))
}

fn check_scores(labels: &[Label], scores: &[f64]) -> Result<()> {
    check_lengths(labels.len(), scores.len())?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::DegenerateInput("non-finite score"));
    }
    Ok(())
}

/// Ascending order of scores; ties grouped.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Area under the ROC curve (AD positive, larger score = more AD) via the
/// Mann–Whitney rank statistic with ties counted half.
///
/// Computed in integers as `2U / (2·n_pos·n_neg)`, so it matches pairwise
/// enumeration exactly.
pub fn roc_auc(labels: &[Label], scores: &[f64]) -> Result<f64> {
    check_scores(labels, scores)?;
    let n_pos = labels.iter().filter(|l| **l == Label::Ad).count() as u128;
    let n_neg = labels.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    // Twice the sum of (1-based, tie-averaged) positive ranks.
    let mut twice_rank_sum: u128 = 0;
    let mut next = 1u128;
    for g in tie_groups(scores) {
        let (first, last) = (next, next + g.len() as u128 - 1);
        let pos = g.iter().filter(|&&i| labels[i] == Label::Ad).count() as u128;
        twice_rank_sum += pos * (first + last);
        next = last + 1;
    }
    let twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

/// Area under the precision–recall curve by step summation over the sorted
/// unique thresholds: `Σ (R_k − R_{k−1}) · P_k`, predicting AD when
/// `score ≥ threshold`.
pub fn pr_auc(labels: &[Label], scores: &[f64]) -> Result<f64> {
    check_scores(labels, scores)?;
    let n_pos = labels.iter().filter(|l| **l == Label::Ad).count();
    if n_pos == 0 {
        return Err(Error::NoPositives);
    }
    let (mut tp, mut predicted, mut prev_recall, mut area) = (0usize, 0usize, 0.0, 0.0);
    for g in tie_groups(scores).iter().rev() {
        predicted += g.len();
        tp += g.iter().filter(|&&i| labels[i] == Label::Ad).count();
        let recall = tp as f64 / n_pos as f64;
        area += (recall - prev_recall) * (tp as f64 / predicted as f64);
        prev_recall = recall;
    }
    Ok(area)
}

/// Metrics of one evaluated run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub rates: Rates,
    pub roc_auc: f64,
    pub pr_auc: f64,
}

/// Rates from `predictions`; areas from AD `scores`.
pub fn run_metrics(labels: &[Label], predictions: &[Label], scores: &[f64]) -> Result<RunMetrics> {
    Ok(RunMetrics {
        rates: confusion_and_rates(labels, predictions)?,
        roc_auc: roc_auc(labels, scores)?,
        pr_auc: pr_auc(labels, scores)?,
    })
}

/// Mean and sample standard deviation (`n − 1`; defined as 0 for one value).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn aggregate(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::DegenerateInput("nothing to aggregate"));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        0.0
    } else {
        math::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64)
    };
    Ok(Summary { mean, std, n })
}

/// Overall summary plus the raw values of each fold (for distribution plots).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub overall: Summary,
    pub per_fold: BTreeMap<usize, Vec<f64>>,
}

pub fn aggregate_by_fold(values: &[(usize, f64)]) -> Result<FoldSummary> {
    let all: Vec<f64> = values.iter().map(|(_, v)| *v).collect();
    let mut per_fold: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (f, v) in values {
        per_fold.entry(*f).or_default().push(*v);
    }
    Ok(FoldSummary { overall: aggregate(&all)?, per_fold })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub precision: Summary,
    pub recall: Summary,
    pub f1: Summary,
}

/// Run metrics aggregated over folds/trials.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub cn: ClassReport,
    pub ad: ClassReport,
    pub accuracy: Summary,
    pub roc_auc: Summary,
    pub pr_auc: Summary,
    /// Summed over runs.
    pub confusion: ConfusionMatrix,
    /// Runs where some precision had no positive predictions.
    pub undefined_precision_runs: usize,
}

impl MetricReport {
    pub fn from_runs(runs: &[RunMetrics]) -> Result<Self> {
        let pick = |f: &dyn Fn(&RunMetrics) -> f64| aggregate(&runs.iter().map(f).collect::<Vec<_>>());
        let class = |label: Label| -> Result<ClassReport> {
            Ok(ClassReport {
                precision: pick(&|r| r.rates.class(label).precision)?,
                recall: pick(&|r| r.rates.class(label).recall)?,
                f1: pick(&|r| r.rates.class(label).f1)?,
            })
        };
        let mut confusion = ConfusionMatrix::default();
        for r in runs {
            confusion.add(&r.rates.confusion);
        }
        Ok(Self {
            cn: class(Label::Cn)?,
            ad: class(Label::Ad)?,
            accuracy: pick(&|r| r.rates.accuracy)?,
            roc_auc: pick(&|r| r.roc_auc)?,
            pr_auc: pick(&|r| r.pr_auc)?,
            confusion,
            undefined_precision_runs: runs
                .iter()
                .filter(|r| r.rates.cn.precision_undefined || r.rates.ad.precision_undefined)
                .count(),
        })
    }
}

/// ROC curve points `(fpr, tpr)` from the strictest threshold down, starting at `(0, 0)`.
pub fn roc_curve(labels: &[Label], scores: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_scores(labels, scores)?;
    let n_pos = labels.iter().filter(|l| **l == Label::Ad).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let (mut tp, mut fp) = (0, 0);
    let mut pts = vec![(0.0, 0.0)];
    for g in tie_groups(scores).iter().rev() {
        tp += g.iter().filter(|&&i| labels[i] == Label::Ad).count();
        fp += g.iter().filter(|&&i| labels[i] == Label::Cn).count();
        pts.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok(pts)
}

/// Exact t-SNE settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    pub min_gain: f64,
    /// Standard deviation of the Gaussian initial layout.
    pub init_std: f64,
    /// Record the KL divergence every this many iterations.
    pub kl_every: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 100,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            min_gain: 0.01,
            init_std: 1e-4,
            kl_every: 50,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsneResult {
    pub coords: Vec<[f64; 2]>,
    /// `(iteration, KL divergence)`; the first entry is the initial layout and
    /// the last the final one.
    pub kl_trace: Vec<(usize, f64)>,
}

const PERPLEXITY_TOL: f64 = 1e-6;
const BANDWIDTH_STEPS: usize = 200;

fn squared_distances(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Row `i` of the conditional affinities for precision `beta`; returns the
/// row and its perplexity `exp(H)`.
fn affinity_row(dist: &[f64], i: usize, beta: f64, row: &mut [f64]) -> f64 {
    let dmin = dist.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, d)| *d).fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, r) in row.iter_mut().enumerate() {
        *r = if j == i { 0.0 } else { math::exp(-beta * (dist[j] - dmin)) };
        sum += *r;
    }
    let mut entropy = 0.0;
    for (j, r) in row.iter_mut().enumerate() {
        *r /= sum;
        if j != i && *r > 0.0 {
            entropy -= *r * math::ln(*r);
        }
    }
    math::exp(entropy)
}

fn validate_points(points: &[Vec<f64>], perplexity: f64) -> Result<()> {
    let n = points.len();
    if n < 3 {
        return Err(Error::DegenerateInput("t-SNE needs at least 3 points"));
    }
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(Error::ShapeMismatch(format!("t-SNE points must share a nonzero dimension ({dim})")));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateInput("non-finite coordinate"));
    }
    if points.iter().all(|p| p == &points[0]) {
        return Err(Error::DegenerateInput("all points identical"));
    }
    if !(perplexity > 1.0) || perplexity >= n as f64 {
        return Err(Error::InvalidConfig(format!("perplexity {perplexity} must lie in (1, {n})")));
    }
    Ok(())
}

/// Row-stochastic conditional affinities `p_{j|i}` (row-major `n × n`) whose
/// rows each have the target perplexity, found by bisection on the Gaussian
/// precision.
pub fn conditional_affinities(points: &[Vec<f64>], perplexity: f64) -> Result<Vec<f64>> {
    validate_points(points, perplexity)?;
    let n = points.len();
    let dist = squared_distances(points);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let d = &dist[i * n..(i + 1) * n];
        let row = &mut p[i * n..(i + 1) * n];
        let (mut lo, mut hi, mut beta) = (0.0, f64::INFINITY, 1.0);
        let spread = d.iter().copied().fold(0.0, f64::max);
        if spread > 0.0 {
            beta = 1.0 / spread;
        }
        for _ in 0..BANDWIDTH_STEPS {
            let perp = affinity_row(d, i, beta, row);
            if (perp - perplexity).abs() < PERPLEXITY_TOL {
                break;
            }
            if perp > perplexity {
                lo = beta;
                beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
        }
        affinity_row(d, i, beta, row);
    }
    Ok(p)
}

/// Symmetrized joint affinities `(p_{j|i} + p_{i|j}) / 2n`.
pub fn joint_affinities(points: &[Vec<f64>], perplexity: f64) -> Result<Vec<f64>> {
    let n = points.len();
    let c = conditional_affinities(points, perplexity)?;
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (c[i * n + j] + c[j * n + i]) / (2 * n) as f64;
        }
    }
    Ok(p)
}

/// Perplexity `exp(H)` of a probability row (zero entries skipped).
pub fn row_perplexity(row: &[f64]) -> f64 {
    math::exp(-row.iter().filter(|p| **p > 0.0).map(|p| p * math::ln(*p)).sum::<f64>())
}

/// Student-t kernel values (zero diagonal) and their sum.
fn student_t(y: &[[f64; 2]], num: &mut [f64]) -> f64 {
    let n = y.len();
    let mut sum = 0.0;
    for i in 0..n {
        num[i * n + i] = 0.0;
        for j in i + 1..n {
            let (dx, dy) = (y[i][0] - y[j][0], y[i][1] - y[j][1]);
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            num[j * n + i] = v;
            sum += 2.0 * v;
        }
    }
    sum
}

fn kl_divergence(p: &[f64], num: &[f64], sum: f64) -> f64 {
    p.iter()
        .zip(num)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| p * math::ln(p / (q / sum).max(f64::MIN_POSITIVE)))
        .sum()
}

/// Exact t-SNE to two dimensions.
pub fn tsne(points: &[Vec<f64>], cfg: &TsneConfig) -> Result<TsneResult> {
    if cfg.iterations == 0 || !(cfg.learning_rate > 0.0) || !(cfg.early_exaggeration >= 1.0) || cfg.kl_every == 0 {
        return Err(Error::InvalidConfig(format!("t-SNE config {cfg:?}")));
    }
    let p = joint_affinities(points, cfg.perplexity)?;
    let n = points.len();
    let mut rng = SeededRng::new(cfg.seed);
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [cfg.init_std * rng.normal(), cfg.init_std * rng.normal()]).collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![[0.0; 2]; n];

    let sum = student_t(&y, &mut num);
    let mut kl_trace = vec![(0, kl_divergence(&p, &num, sum))];
    for iter in 1..=cfg.iterations {
        let exaggeration = if iter <= cfg.exaggeration_iterations { cfg.early_exaggeration } else { 1.0 };
        let momentum = if iter <= cfg.momentum_switch { cfg.initial_momentum } else { cfg.final_momentum };
        let sum = student_t(&y, &mut num);
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                let w = (exaggeration * p[i * n + j] - num[i * n + j] / sum) * num[i * n + j];
                g[0] += w * (y[i][0] - y[j][0]);
                g[1] += w * (y[i][1] - y[j][1]);
            }
            grad[i] = [4.0 * g[0], 4.0 * g[1]];
        }
        for i in 0..n {
            for k in 0..2 {
                let gain = &mut gains[i][k];
                *gain = if (grad[i][k] > 0.0) != (update[i][k] > 0.0) { *gain + 0.2 } else { *gain * 0.8 };
                *gain = (*gain).max(cfg.min_gain);
                update[i][k] = momentum * update[i][k] - cfg.learning_rate * *gain * grad[i][k];
                y[i][k] += update[i][k];
            }
        }
        let mean = [0, 1].map(|k| y.iter().map(|v| v[k]).sum::<f64>() / n as f64);
        for v in &mut y {
            v[0] -= mean[0];
            v[1] -= mean[1];
        }
        if iter % cfg.kl_every == 0 || iter == cfg.iterations {
            let sum = student_t(&y, &mut num);
            kl_trace.push((iter, kl_divergence(&p, &num, sum)));
        }
    }
    Ok(TsneResult { coords: y, kl_trace })
}
