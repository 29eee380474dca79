//! Adam training under mean cross-entropy plus an l2 weight penalty, with
//! accuracy-based early stopping and per-epoch diagnostics.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::nn::{batch_crossentropy, softmax, Batch5D, Mode, Model};
use crate::rng::SeededRng;
use crate::volume::Volume3D;
use crate::Label;

/// A labelled volume.
pub type Sample = (Volume3D, Label);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Multiplier of `sum(w^2)` over conv and dense weights.
    pub l2_weight: f64,
    pub max_epochs: usize,
    /// Epochs without strict validation-accuracy improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Drop the final partial minibatch instead of training on it.
    pub drop_last: bool,
    /// Batch size for inference passes.
    pub eval_batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            l2_weight: 0.01,
            max_epochs: 200,
            patience: 20,
            batch_size: 50,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            drop_last: false,
            eval_batch_size: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.learning_rate > 0.0
            && self.l2_weight >= 0.0
            && self.max_epochs > 0
            && self.patience > 0
            && self.batch_size > 0
            && self.eval_batch_size > 0
            && self.adam_epsilon > 0.0;
        let betas = (0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2);
        if !positive || !betas || self.patience > self.max_epochs || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!("training config {self:?}")));
        }
        Ok(())
    }
}

/// First and second moment accumulators, one tensor per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = sizes.into_iter().map(|n| (vec![0.0; n], vec![0.0; n])).unzip();
        Self { m, v, t: 0 }
    }

    pub fn for_model(model: &Model) -> Self {
        Self::new(model.params().iter().map(|(_, p)| p.len()))
    }
}

/// One bias-corrected Adam update of every tensor in `params`.
pub fn adam_step(params: &mut [&mut Vec<f64>], grads: &[Vec<f64>], state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    let shapes_ok = params.len() == grads.len()
        && params.len() == state.m.len()
        && params.iter().zip(grads).zip(&state.m).all(|((p, g), m)| p.len() == g.len() && p.len() == m.len());
    if !shapes_ok {
        return Err(Error::ShapeMismatch(format!(
            "adam over {} tensors with {} gradients and {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - math::powi(b1, state.t);
    let c2 = 1.0 - math::powi(b2, state.t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] -= cfg.learning_rate * mhat / (math::sqrt(vhat) + cfg.adam_epsilon);
        }
    }
    Ok(())
}

/// `weight * sum(w^2)` over conv and dense weights, and its gradient per
/// parameter tensor (zero for biases and batch-norm parameters).
pub fn l2_penalty(model: &Model, weight: f64) -> (f64, Vec<Vec<f64>>) {
    let mut total = 0.0;
    let grads = model
        .params()
        .iter()
        .map(|(kind, p)| {
            if kind.is_weight() {
                total += p.iter().map(|w| w * w).sum::<f64>();
                p.iter().map(|w| 2.0 * weight * w).collect()
            } else {
                vec![0.0; p.len()]
            }
        })
        .collect();
    (weight * total, grads)
}

/// Objective value split into its terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub data: f64,
    pub penalty: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.data + self.penalty
    }
}

/// Train-mode objective on one batch: mean cross-entropy plus the l2 penalty.
///
/// Returns the loss terms, gradients aligned with `model.params()`, and the
/// train-mode logits.
pub fn total_loss(
    model: &mut Model,
    batch: &Batch5D,
    labels: &[usize],
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<(LossParts, Vec<Vec<f64>>, Batch5D)> {
    if batch.batch() != labels.len() {
        return Err(Error::LengthMismatch { left: batch.batch(), right: labels.len() });
    }
    let (logits, tape) = model.forward_tape(batch, Mode::Train, rng)?;
    let (data, grad_logits) = batch_crossentropy(&logits, labels);
    let mut grads = model.backward(&tape, &grad_logits)?.tensors;
    let (penalty, pgrads) = l2_penalty(model, cfg.l2_weight);
    for (g, pg) in grads.iter_mut().zip(pgrads) {
        g.iter_mut().zip(pg).for_each(|(a, b)| *a += b);
    }
    Ok((LossParts { data, penalty }, grads, logits))
}

/// Accuracy-based early stopping with strict improvement.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    stale: usize,
}

/// Outcome of observing one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: None, best_epoch: 0, stale: 0 }
    }

    /// Records the metric for `epoch` (1-based). Ties do not count as improvement.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> StopDecision {
        let improved = self.best.is_none_or(|b| metric > b);
        if improved {
            self.best = Some(metric);
            self.best_epoch = epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        StopDecision { improved, stop: self.stale >= self.patience }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Result of an early-stopped epoch loop.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopOutcome<S> {
    /// Snapshot taken at the best epoch.
    pub best: S,
    pub best_epoch: usize,
    pub best_metric: f64,
    /// Last epoch run (1-based).
    pub stopped_epoch: usize,
}

/// Runs `epoch(state, e)` for `e = 1..=max_epochs`, snapshotting `state`
/// whenever the returned metric strictly improves, until `patience` epochs
/// pass without improvement.
pub fn early_stopping_loop<S: Clone>(
    max_epochs: usize,
    patience: usize,
    state: &mut S,
    mut epoch: impl FnMut(&mut S, usize) -> Result<f64>,
) -> Result<LoopOutcome<S>> {
    let mut stopper = EarlyStopping::new(patience);
    let mut best = state.clone();
    let mut stopped = 0;
    for e in 1..=max_epochs {
        let metric = epoch(state, e)?;
        stopped = e;
        let d = stopper.observe(e, metric);
        if d.improved {
            best = state.clone();
        }
        if d.stop {
            break;
        }
    }
    Ok(LoopOutcome {
        best,
        best_epoch: stopper.best_epoch(),
        best_metric: stopper.best().unwrap_or(f64::NAN),
        stopped_epoch: stopped,
    })
}

/// Quantile levels of the predicted-class probability summary.
pub const PROB_LEVELS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// One row of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean objective (cross-entropy + penalty) over the epoch's minibatches.
    pub loss: f64,
    pub data_loss: f64,
    pub penalty: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    /// Predicted-class probability on training outputs at [`PROB_LEVELS`].
    pub prob_quantiles: [f64; 5],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// Parameters from the best validation epoch.
    pub model: Model,
    pub history: TrainHistory,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = math::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn batch_of(set: &[Sample], idx: &[usize]) -> Result<(Batch5D, Vec<usize>)> {
    let x = Batch5D::from_volumes(idx.iter().map(|&i| &set[i].0))?;
    Ok((x, idx.iter().map(|&i| set[i].1.index()).collect()))
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Tag of the shuffling stream derived from `TrainConfig::seed`.
pub const SHUFFLE_STREAM: u64 = 1;
/// Tag of the dropout stream derived from `TrainConfig::seed`.
pub const DROPOUT_STREAM: u64 = 2;

/// Trains `model` and returns the best-validation-epoch parameters.
pub fn fit(model: Model, train: &[Sample], val: &[Sample], cfg: &TrainConfig) -> Result<FitResult> {
    fit_with(model, train, val, cfg, |_| {})
}

/// [`fit`] with a callback after every epoch.
pub fn fit_with(
    mut model: Model,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitResult> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptySplit("training"));
    }
    if val.is_empty() {
        return Err(Error::EmptySplit("validation"));
    }
    let base = SeededRng::new(cfg.seed);
    let mut shuffle_rng = base.fork(SHUFFLE_STREAM);
    let mut dropout_rng = base.fork(DROPOUT_STREAM);
    let mut adam = AdamState::for_model(&model);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..train.len()).collect();

    let outcome = early_stopping_loop(cfg.max_epochs, cfg.patience, &mut model, |model, epoch| {
        shuffle_rng.shuffle(&mut order);
        let (mut data_sum, mut pen_sum, mut seen, mut correct) = (0.0, 0.0, 0usize, 0usize);
        let mut probs = Vec::with_capacity(train.len());
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.drop_last && chunk.len() < cfg.batch_size && seen > 0 {
                break;
            }
            let (x, labels) = batch_of(train, chunk)?;
            let (parts, grads, logits) = total_loss(model, &x, &labels, cfg, &mut dropout_rng)?;
            let mut params: Vec<&mut Vec<f64>> = model.params_mut().into_iter().map(|(_, p)| p).collect();
            adam_step(&mut params, &grads, &mut adam, cfg)?;
            let b = chunk.len();
            data_sum += parts.data * b as f64;
            pen_sum += parts.penalty * b as f64;
            seen += b;
            for (s, &label) in labels.iter().enumerate() {
                let p = softmax(logits.sample(s));
                let pred = argmax(&p);
                correct += (pred == label) as usize;
                probs.push(p[pred]);
            }
        }
        probs.sort_by(f64::total_cmp);
        let val_acc = evaluate_batched(model, val, cfg.eval_batch_size)?.accuracy;
        let record = EpochRecord {
            epoch,
            loss: (data_sum + pen_sum) / seen as f64,
            data_loss: data_sum / seen as f64,
            penalty: pen_sum / seen as f64,
            train_acc: correct as f64 / seen as f64,
            val_acc,
            prob_quantiles: PROB_LEVELS.map(|q| quantile_sorted(&probs, q)),
        };
        on_epoch(&record);
        history.epochs.push(record);
        Ok(val_acc)
    })?;
    Ok(FitResult {
        model: outcome.best,
        history,
        best_epoch: outcome.best_epoch,
        stopped_epoch: outcome.stopped_epoch,
    })
}

/// Infer-mode predictions on a labelled set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub probabilities: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
}

impl Evaluation {
    /// Probability of class `k` for every sample.
    pub fn scores(&self, k: usize) -> Vec<f64> {
        self.probabilities.iter().map(|p| p[k]).collect()
    }
}

pub fn evaluate(model: &Model, set: &[Sample]) -> Result<Evaluation> {
    evaluate_batched(model, set, TrainConfig::default().eval_batch_size)
}

pub fn evaluate_batched(model: &Model, set: &[Sample], batch_size: usize) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(Error::EmptySplit("evaluation"));
    }
    let idx: Vec<usize> = (0..set.len()).collect();
    let mut ev = Evaluation {
        accuracy: 0.0,
        probabilities: Vec::with_capacity(set.len()),
        logits: Vec::with_capacity(set.len()),
        predictions: Vec::with_capacity(set.len()),
        labels: Vec::with_capacity(set.len()),
    };
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, labels) = batch_of(set, chunk)?;
        let logits = model.infer(&x)?;
        for (s, label) in labels.into_iter().enumerate() {
            let l = logits.sample(s).to_vec();
            let p = softmax(&l);
            ev.predictions.push(argmax(&p));
            ev.probabilities.push(p);
            ev.logits.push(l);
            ev.labels.push(label);
        }
    }
    let correct = ev.predictions.iter().zip(&ev.labels).filter(|(p, l)| p == l).count();
    ev.accuracy = correct as f64 / set.len() as f64;
    Ok(ev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{numeric_gradient, relative_error, tiny_spec};
    use crate::nn::{build_model, Dense, Layer};
    use crate::volume::Dims;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.5, -2.0];
        let mut state = AdamState::new([2]);
        adam_step(&mut [&mut p], &[vec![0.0, 0.0]], &mut state, &TrainConfig::default()).unwrap();
        assert_eq!(p, vec![1.5, -2.0]);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn first_step_closed_form() {
        // t = 1: mhat = g, vhat = g^2, so the step is lr * g / (|g| + eps).
        let cfg = TrainConfig::default();
        for g in [3.0, -0.25, 1e-3] {
            let mut p = vec![0.0];
            adam_step(&mut [&mut p], &[vec![g]], &mut AdamState::new([1]), &cfg).unwrap();
            let want = -0.001 * g / (g.abs() + 1e-8);
            assert!((p[0] - want).abs() < 1e-15, "{} vs {want}", p[0]);
        }
    }

    #[test]
    fn quadratic_converges_monotonically() {
        // f(x) = x^2 / 2 from x = 1. At the default rate of 0.001 Adam's step
        // shrinks with the gradient and |x| is still ~0.02 after 2000 steps.
        let cfg = TrainConfig { learning_rate: 0.01, ..TrainConfig::default() };
        let mut x = vec![1.0];
        let mut state = AdamState::new([1]);
        let mut prev = 1.0f64;
        let mut steps = 0;
        while prev >= 1e-3 {
            steps += 1;
            assert!(steps <= 2000);
            let g = vec![x[0]];
            adam_step(&mut [&mut x], &[g], &mut state, &cfg).unwrap();
            assert!(x[0].abs() < prev, "step {steps}");
            prev = x[0].abs();
        }
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut p = vec![0.0; 3];
        let r = adam_step(&mut [&mut p], &[vec![0.0; 2]], &mut AdamState::new([3]), &TrainConfig::default());
        assert!(matches!(r, Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn penalty_of_single_weight() {
        let model = Model::from_layers(vec![Layer::Dense(Dense::from_parts(1, 1, vec![2.0], vec![5.0]).unwrap())]);
        let (pen, g) = l2_penalty(&model, 0.01);
        assert!((pen - 0.04).abs() < 1e-15);
        assert_eq!(g, vec![vec![0.04], vec![0.0]]);
    }

    #[test]
    fn penalty_gradient_matches_differences() {
        let model = build_model(&tiny_spec(4), &mut SeededRng::new(4)).unwrap();
        let (_, g) = l2_penalty(&model, 0.01);
        let flat: Vec<f64> = model.params().iter().flat_map(|(_, p)| p.iter().copied()).collect();
        let n = numeric_gradient(&flat, 1e-5, |theta| {
            let mut m = model.clone();
            let mut at = 0;
            for (_, p) in m.params_mut() {
                let len = p.len();
                p.copy_from_slice(&theta[at..at + len]);
                at += len;
            }
            l2_penalty(&m, 0.01).0
        });
        assert!(relative_error(&g.concat(), &n) < 1e-6);
    }

    #[test]
    fn zero_model_loss_is_ln2() {
        let mut model = build_model(&tiny_spec(4), &mut SeededRng::new(1)).unwrap();
        for (_, p) in model.params_mut() {
            p.iter_mut().for_each(|v| *v = 0.0);
        }
        let d = tiny_spec(4).input_dims;
        let x = Batch5D::new([2, 1, d.nx, d.ny, d.nz], vec![0.5; 2 * d.len()]).unwrap();
        let (parts, _, _) = total_loss(&mut model, &x, &[0, 1], &TrainConfig::default(), &mut SeededRng::new(0)).unwrap();
        assert!((parts.data - core::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(parts.penalty, 0.0);
    }

    #[test]
    fn full_loss_gradient_matches_differences() {
        let spec = tiny_spec(4);
        let mut rng = SeededRng::new(21);
        let model = build_model(&spec, &mut rng).unwrap();
        let d = spec.input_dims;
        let x = Batch5D::new([3, 1, d.nx, d.ny, d.nz], (0..3 * d.len()).map(|_| rng.normal()).collect()).unwrap();
        let labels = [1, 0, 1];
        let cfg = TrainConfig::default();
        let (_, grads, _) = total_loss(&mut model.clone(), &x, &labels, &cfg, &mut SeededRng::new(0)).unwrap();
        let flat: Vec<f64> = model.params().iter().flat_map(|(_, p)| p.iter().copied()).collect();
        let n = numeric_gradient(&flat, 1e-5, |theta| {
            let mut m = model.clone();
            let mut at = 0;
            for (_, p) in m.params_mut() {
                let len = p.len();
                p.copy_from_slice(&theta[at..at + len]);
                at += len;
            }
            total_loss(&mut m, &x, &labels, &cfg, &mut SeededRng::new(0)).unwrap().0.total()
        });
        let err = relative_error(&grads.concat(), &n);
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn patience_two_trace() {
        let trace = [0.6, 0.7, 0.7, 0.7, 0.9];
        let mut weights = 0usize;
        let out = early_stopping_loop(10, 2, &mut weights, |w, e| {
            *w = e;
            Ok(trace[e - 1])
        })
        .unwrap();
        assert_eq!((out.stopped_epoch, out.best_epoch, out.best), (4, 2, 2));
    }

    #[test]
    fn max_epochs_bounds_the_loop() {
        let mut s = ();
        let out = early_stopping_loop(1, 1, &mut s, |_, _| Ok(0.5)).unwrap();
        assert_eq!(out.stopped_epoch, 1);
    }

    fn constant_model(bias: [f64; 2], dims: Dims) -> Model {
        Model::from_layers(vec![
            Layer::Flatten,
            Layer::Dense(Dense::from_parts(dims.len(), 2, vec![0.0; 2 * dims.len()], bias.to_vec()).unwrap()),
        ])
    }

    #[test]
    fn evaluate_constant_predictor() {
        let dims = Dims::new(2, 2, 2);
        let model = constant_model([1.0, 0.0], dims);
        let cn: Vec<Sample> = (0..5).map(|_| (Volume3D::zeros(dims), Label::Cn)).collect();
        let ad: Vec<Sample> = (0..5).map(|_| (Volume3D::zeros(dims), Label::Ad)).collect();
        assert_eq!(evaluate(&model, &cn).unwrap().accuracy, 1.0);
        let ev = evaluate(&model, &ad).unwrap();
        assert_eq!(ev.accuracy, 0.0);
        assert!(ev.probabilities.iter().all(|p| (p.iter().sum::<f64>() - 1.0).abs() < 1e-15));
        assert_eq!(evaluate(&model, &[]), Err(Error::EmptySplit("evaluation")));
    }

    fn separable(n: usize, dims: Dims, rng: &mut SeededRng) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Cn } else { Label::Ad };
                let level = if label == Label::Ad { 1.0 } else { -1.0 };
                let v = Volume3D::from_fn(dims, |_, _, _| level + 0.3 * rng.normal()).unwrap();
                (v, label)
            })
            .collect()
    }

    #[test]
    fn fit_is_deterministic_and_learns() {
        let spec = tiny_spec(4);
        let mut rng = SeededRng::new(8);
        let train = separable(24, spec.input_dims, &mut rng);
        let val = separable(10, spec.input_dims, &mut rng);
        let cfg = TrainConfig { max_epochs: 15, patience: 5, batch_size: 7, learning_rate: 0.01, seed: 3, ..TrainConfig::default() };
        let run = || fit(build_model(&spec, &mut SeededRng::new(2)).unwrap(), &train, &val, &cfg).unwrap();
        let a = run();
        let b = run();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
        assert!(a.history.epochs.len() <= 15);
        let best = a.history.epochs.iter().map(|e| e.val_acc).fold(0.0, f64::max);
        assert_eq!(evaluate(&a.model, &val).unwrap().accuracy, best);
        assert!(best >= 0.9, "{:?}", a.history);
    }

    #[test]
    fn fit_rejects_empty_splits() {
        let spec = tiny_spec(4);
        let model = build_model(&spec, &mut SeededRng::new(2)).unwrap();
        let set = separable(2, spec.input_dims, &mut SeededRng::new(1));
        let cfg = TrainConfig::default();
        assert!(matches!(fit(model.clone(), &[], &set, &cfg), Err(Error::EmptySplit("training"))));
        assert!(matches!(fit(model, &set, &[], &cfg), Err(Error::EmptySplit("validation"))));
    }

    #[test]
    fn quantiles_interpolate() {
        let s = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(quantile_sorted(&s, 0.5), 1.5);
        assert_eq!(quantile_sorted(&s, 1.0), 3.0);
        assert_eq!(quantile_sorted(&s, 0.0), 0.0);
    }
}
