//! Central finite-difference checks of every layer's analytic gradients.
//!
//! Each layer is checked through the scalar probe `L = sum(r * y)` for a
//! random upstream tensor `r`, so the analytic side is simply
//! `backward(grad_out = r)`. Errors are reported as
//! `|a - n| / max(|a|, |n|)` over the whole gradient vector.

use alloc::vec::Vec;

use super::activation::batch_crossentropy;
use super::*;
use crate::math;
use crate::rng::SeededRng;
use crate::volume::Dims;

pub const STEP: f64 = 1e-5;

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn numeric_gradient(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    math::sqrt(v.map(|x| x * x).sum())
}

/// Vector relative error; zero when both sides are exactly zero.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff = norm(analytic.iter().zip(numeric).map(|(a, n)| a - n));
    let scale = norm(analytic.iter().copied()).max(norm(numeric.iter().copied()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Worst error seen for one layer over a number of random trials.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: &'static str,
    pub trials: usize,
    pub worst: f64,
}

fn random_vec(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()
}

fn random_batch(rng: &mut SeededRng, shape: [usize; 5]) -> Batch5D {
    Batch5D::new(shape, random_vec(rng, shape.iter().product())).expect("finite")
}

fn probe(y: &Batch5D, r: &[f64]) -> f64 {
    y.data().iter().zip(r).map(|(a, b)| a * b).sum()
}

fn with_data(shape: [usize; 5], data: &[f64]) -> Batch5D {
    Batch5D::new(shape, data.to_vec()).expect("finite")
}

fn small_shape(rng: &mut SeededRng, max_batch: usize, max_c: usize, max_d: usize) -> [usize; 5] {
    [1 + rng.below(max_batch), 1 + rng.below(max_c), 1 + rng.below(max_d), 1 + rng.below(max_d), 1 + rng.below(max_d)]
}

/// One conv trial: input, weight and bias gradients.
pub fn conv_trial(rng: &mut SeededRng) -> f64 {
    let shape = small_shape(rng, 2, 3, 4);
    let co = 1 + rng.below(3);
    let ci = shape[1];
    let conv = Conv3d::from_parts(ci, co, random_vec(rng, co * ci * 27), random_vec(rng, co)).expect("shapes");
    let x = random_batch(rng, shape);
    let out_shape = [shape[0], co, shape[2], shape[3], shape[4]];
    let r = random_batch(rng, out_shape);
    let g = conv.backward(&x, &r, true).expect("shapes");
    let nx = numeric_gradient(x.data(), STEP, |d| probe(&conv.forward(&with_data(shape, d)).unwrap(), r.data()));
    let nw = numeric_gradient(&conv.weights, STEP, |w| {
        let c = Conv3d::from_parts(ci, co, w.to_vec(), conv.bias.clone()).unwrap();
        probe(&c.forward(&x).unwrap(), r.data())
    });
    let nb = numeric_gradient(&conv.bias, STEP, |b| {
        let c = Conv3d::from_parts(ci, co, conv.weights.clone(), b.to_vec()).unwrap();
        probe(&c.forward(&x).unwrap(), r.data())
    });
    relative_error(g.input.unwrap().data(), &nx)
        .max(relative_error(&g.weights, &nw))
        .max(relative_error(&g.bias, &nb))
}

fn random_bn(rng: &mut SeededRng, c: usize) -> BatchNorm3d {
    let mut bn = BatchNorm3d::new(c, DEFAULT_MOMENTUM, DEFAULT_EPSILON);
    bn.gamma = (0..c).map(|_| rng.uniform_range(0.5, 2.0)).collect();
    bn.beta = random_vec(rng, c);
    bn.running_mean = random_vec(rng, c);
    bn.running_var = (0..c).map(|_| rng.uniform_range(0.1, 3.0)).collect();
    bn
}

/// One batch-norm trial in the given mode: input, gamma and beta gradients.
pub fn batchnorm_trial(rng: &mut SeededRng, mode: Mode) -> f64 {
    let mut shape = small_shape(rng, 3, 3, 3);
    if shape[0] * shape[2] * shape[3] * shape[4] < 2 {
        shape[2] = 2;
    }
    let c = shape[1];
    let bn = random_bn(rng, c);
    let x = random_batch(rng, shape);
    let r = random_batch(rng, shape);
    let run = |layer: &BatchNorm3d, x: &Batch5D| match mode {
        Mode::Train => layer.clone().forward_train(x).unwrap().0,
        Mode::Infer => layer.forward_infer(x).unwrap(),
    };
    let g = match mode {
        Mode::Train => {
            let (_, cache) = bn.clone().forward_train(&x).unwrap();
            bn.backward_train(&x, &cache, &r)
        }
        Mode::Infer => bn.backward_infer(&x, &r),
    };
    let nx = numeric_gradient(x.data(), STEP, |d| probe(&run(&bn, &with_data(shape, d)), r.data()));
    let ng = numeric_gradient(&bn.gamma, STEP, |v| {
        let mut b = bn.clone();
        b.gamma = v.to_vec();
        probe(&run(&b, &x), r.data())
    });
    let nb = numeric_gradient(&bn.beta, STEP, |v| {
        let mut b = bn.clone();
        b.beta = v.to_vec();
        probe(&run(&b, &x), r.data())
    });
    relative_error(g.input.data(), &nx).max(relative_error(&g.gamma, &ng)).max(relative_error(&g.beta, &nb))
}

/// One pooling trial on an input whose values are well separated.
pub fn pool_trial(rng: &mut SeededRng, kind: PoolKind) -> f64 {
    let size = 1 + rng.below(3);
    let mut shape = small_shape(rng, 2, 2, 3);
    for d in &mut shape[2..] {
        *d = size * (1 + rng.below(2)) + rng.below(size);
    }
    let n = shape.iter().product();
    // A shuffled grid keeps every window's maximum unique by a wide margin.
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 / n as f64 - 0.5).collect();
    rng.shuffle(&mut vals);
    let x = Batch5D::new(shape, vals).unwrap();
    let pool = Pool3d::new(size, kind);
    let (y, argmax) = pool.forward(&x);
    let r = random_batch(rng, y.shape());
    let g = pool.backward(shape, &argmax, &r);
    let nx = numeric_gradient(x.data(), STEP.min(0.1 / n as f64), |d| probe(&pool.forward(&with_data(shape, d)).0, r.data()));
    relative_error(g.data(), &nx)
}

/// One dense-layer trial: input, weight and bias gradients.
pub fn dense_trial(rng: &mut SeededRng) -> f64 {
    let (b, fin, fout) = (1 + rng.below(4), 1 + rng.below(20), 1 + rng.below(4));
    let d = Dense::from_parts(fin, fout, random_vec(rng, fin * fout), random_vec(rng, fout)).unwrap();
    let shape = [b, fin, 1, 1, 1];
    let x = random_batch(rng, shape);
    let r = random_batch(rng, [b, fout, 1, 1, 1]);
    let g = d.backward(&x, &r).unwrap();
    let nx = numeric_gradient(x.data(), STEP, |v| probe(&d.forward(&with_data(shape, v)).unwrap(), r.data()));
    let nw = numeric_gradient(&d.weights, STEP, |w| {
        let l = Dense::from_parts(fin, fout, w.to_vec(), d.bias.clone()).unwrap();
        probe(&l.forward(&x).unwrap(), r.data())
    });
    let nb = numeric_gradient(&d.bias, STEP, |bias| {
        let l = Dense::from_parts(fin, fout, d.weights.clone(), bias.to_vec()).unwrap();
        probe(&l.forward(&x).unwrap(), r.data())
    });
    relative_error(g.input.data(), &nx).max(relative_error(&g.weights, &nw)).max(relative_error(&g.bias, &nb))
}

/// One dropout trial. `p = 0` checks the passthrough path; otherwise the mask
/// is fixed by reusing the same generator state for every evaluation.
pub fn dropout_trial(rng: &mut SeededRng, p: f64) -> f64 {
    let shape = small_shape(rng, 2, 2, 3);
    let x = random_batch(rng, shape);
    let r = random_batch(rng, shape);
    let layer = Dropout::new(p);
    let mask_rng = rng.fork(17);
    let (_, mask) = layer.forward_train(&x, &mut mask_rng.clone());
    let g = layer.backward(&mask, &r);
    let nx = numeric_gradient(x.data(), STEP, |d| {
        probe(&layer.forward_train(&with_data(shape, d), &mut mask_rng.clone()).0, r.data())
    });
    relative_error(g.data(), &nx)
}

/// One activation trial; inputs are kept away from the kink at zero.
pub fn activation_trial(rng: &mut SeededRng, act: Activation) -> f64 {
    let shape = small_shape(rng, 2, 2, 3);
    let n = shape.iter().product();
    let vals = (0..n)
        .map(|_| {
            let v = rng.uniform_range(0.01, 1.0);
            if rng.bernoulli(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    let x = Batch5D::new(shape, vals).unwrap();
    let r = random_batch(rng, shape);
    let g = act.backward(&x, &r);
    let nx = numeric_gradient(x.data(), STEP, |d| probe(&act.forward(&with_data(shape, d)), r.data()));
    relative_error(g.data(), &nx)
}

/// One softmax cross-entropy trial on 2..5 classes.
pub fn softmax_xent_trial(rng: &mut SeededRng) -> f64 {
    let k = 2 + rng.below(4);
    let logits: Vec<f64> = (0..k).map(|_| rng.uniform_range(-5.0, 5.0)).collect();
    let label = rng.below(k);
    let (_, g) = softmax_crossentropy(&logits, label);
    let n = numeric_gradient(&logits, STEP, |l| softmax_crossentropy(l, label).0);
    relative_error(&g, &n)
}

/// The small depth-4 network used by the whole-model check: 12x12x9 input.
pub fn tiny_spec(depth: usize) -> ArchitectureSpec {
    let mut spec = ArchitectureSpec::with_input(depth, Dims::new(12, 12, 9));
    spec.base_filters = 2;
    spec.pooling_sizes = [2, 2, 1, 1];
    spec
}

/// Mean cross-entropy gradient of a freshly built tiny model (train mode,
/// batch statistics) against central differences, over every parameter.
pub fn whole_model_trial(rng: &mut SeededRng, spec: &ArchitectureSpec) -> f64 {
    let mut model = build_model(spec, rng).expect("valid tiny spec");
    for (kind, p) in model.params_mut() {
        if !kind.is_weight() {
            p.iter_mut().for_each(|v| *v += rng.uniform_range(-0.1, 0.1));
        }
    }
    let b = 2 + rng.below(3);
    let d = spec.input_dims;
    let shape = [b, spec.in_channels, d.nx, d.ny, d.nz];
    let x = random_batch(rng, shape);
    let labels: Vec<usize> = (0..b).map(|i| i % 2).collect();
    let mut fwd_rng = rng.fork(3);
    let (logits, tape) = model.forward_tape(&x, Mode::Train, &mut fwd_rng).unwrap();
    let (_, gl) = batch_crossentropy(&logits, &labels);
    let grads = model.backward(&tape, &gl).unwrap();
    let analytic: Vec<f64> = grads.tensors.concat();
    let flat: Vec<f64> = model.params().iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let numeric = numeric_gradient(&flat, STEP, |theta| {
        let mut m = model.clone();
        let mut at = 0;
        for (_, p) in m.params_mut() {
            let n = p.len();
            p.copy_from_slice(&theta[at..at + n]);
            at += n;
        }
        let (logits, _) = m.forward_tape(&x, Mode::Train, &mut fwd_rng.clone()).unwrap();
        batch_crossentropy(&logits, &labels).0
    });
    relative_error(&analytic, &numeric)
}

fn run(name: &'static str, trials: usize, rng: &mut SeededRng, mut f: impl FnMut(&mut SeededRng) -> f64) -> GradCheck {
    let worst = (0..trials).map(|_| f(rng)).fold(0.0, f64::max);
    GradCheck { name, trials, worst }
}

/// Every per-layer check, `trials` random shapes each.
pub fn layer_suite(seed: u64, trials: usize) -> Vec<GradCheck> {
    let mut rng = SeededRng::new(seed);
    let r = &mut rng;
    alloc::vec![
        run("conv3d", trials, r, conv_trial),
        run("batchnorm/train", trials, r, |r| batchnorm_trial(r, Mode::Train)),
        run("batchnorm/infer", trials, r, |r| batchnorm_trial(r, Mode::Infer)),
        run("maxpool", trials, r, |r| pool_trial(r, PoolKind::Max)),
        run("meanpool", trials, r, |r| pool_trial(r, PoolKind::Mean)),
        run("dense", trials, r, dense_trial),
        run("dropout/p=0", trials, r, |r| dropout_trial(r, 0.0)),
        run("dropout/p=0.3", trials, r, |r| dropout_trial(r, 0.3)),
        run("relu", trials, r, |r| activation_trial(r, Activation::Relu)),
        run("softmax-xent", trials, r, softmax_xent_trial),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_gradient_of_cubic() {
        let g = numeric_gradient(&[2.0, -1.0], 1e-4, |x| x[0] * x[0] * x[0] + 3.0 * x[1]);
        assert!((g[0] - 12.0).abs() < 1e-6 && (g[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn every_layer_passes() {
        for check in layer_suite(11, 20) {
            let tol = if check.name == "softmax-xent" { 1e-8 } else { 1e-6 };
            assert!(check.worst < tol, "{check:?}");
        }
    }

    #[test]
    fn whole_tiny_model_passes() {
        let mut rng = SeededRng::new(12);
        for _ in 0..3 {
            let err = whole_model_trial(&mut rng, &tiny_spec(4));
            assert!(err < 1e-5, "{err}");
        }
    }
}
