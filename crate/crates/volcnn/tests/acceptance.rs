//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `cargo test --release -p volcnn --test acceptance` runs everything,
//! including the desk-scale study (hours on one core; resumable, state kept
//! under `$VOLCNN_ACCEPTANCE_DIR`, default `<target>/tmp/acceptance`).
//! Append `-- --quick` to skip the two study criteria.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use volcnn::config::Config;
use volcnn::experiment::{
    evaluate_model_external, execute_run, run_dropout_ablation, run_grid, AblationTable, GridSummary,
    RunKey, StudyContext, ABLATION_HEADER,
};
use volcnn::format::load_checkpoint;
use volcnn::pipeline::synthesize;
use volcnn::report::write_report;
use volcnn_core::augment::{apply_params, augment_set, AugmentParams, AugmentRanges, Strategy};
use volcnn_core::dataset::{generate_synthetic, stratified_kfold, CavityRule, SampleRecord, SyntheticSpec};
use volcnn_core::metrics::{confusion_and_rates, pr_auc, roc_auc};
use volcnn_core::nn::gradcheck::{layer_suite, numeric_gradient, relative_error, tiny_spec, whole_model_trial};
use volcnn_core::nn::{build_model, set_portable_kernels, ArchitectureSpec, Batch5D, Conv3d, Model, DEPTHS};
use volcnn_core::train::{early_stopping_loop, evaluate, fit, l2_penalty, total_loss, TrainConfig};
use volcnn_core::volume::{Dims, Volume3D};
use volcnn_core::{Label, SeededRng};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

struct Runner {
    results: Vec<(String, bool)>,
}

impl Runner {
    fn check(&mut self, id: &str, name: &str, limit_s: f64, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let o = f();
        let secs = start.elapsed().as_secs_f64();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("{id} {verdict} {name}: {} [{secs:.1} s, target < {limit_s} s]", o.detail);
        self.results.push((id.into(), o.pass));
    }

    fn skip(&mut self, id: &str, name: &str) {
        println!("{id} SKIP {name}: skipped by --quick");
    }
}

fn c1_parameter_counts() -> Outcome {
    let mut rng = SeededRng::new(1);
    let big = Model::conv_stack(1, &[32, 64], &mut rng).count_conv_parameters();
    let small = Model::conv_stack(1, &[8, 16], &mut rng).count_conv_parameters();
    let reduction = 1.0 - small as f64 / big as f64;
    let shown = format!("{:.1}", 100.0 * reduction);
    outcome(
        big == 56256 && small == 3696 && shown == "93.4",
        format!("(32,64) -> {big}, (8,16) -> {small}, reduction {shown}%"),
    )
}

/// Total objective (cross-entropy + l2) of a tiny model against central differences.
fn total_loss_trial(rng: &mut SeededRng) -> f64 {
    let spec = tiny_spec(4);
    let mut model = build_model(&spec, rng).unwrap();
    let d = spec.input_dims;
    let b = 2 + rng.below(3);
    let n = b * d.len();
    let x = Batch5D::new([b, 1, d.nx, d.ny, d.nz], (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap();
    let labels: Vec<usize> = (0..b).map(|i| i % 2).collect();
    let cfg = TrainConfig { l2_weight: 0.05, ..TrainConfig::default() };
    let fwd = rng.fork(9);
    let (_, grads, _) = total_loss(&mut model, &x, &labels, &cfg, &mut fwd.clone()).unwrap();
    let flat: Vec<f64> = model.params().iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let numeric = numeric_gradient(&flat, 1e-5, |theta| {
        let mut m = model.clone();
        let mut at = 0;
        for (_, p) in m.params_mut() {
            let k = p.len();
            p.copy_from_slice(&theta[at..at + k]);
            at += k;
        }
        total_loss(&mut m, &x, &labels, &cfg, &mut fwd.clone()).unwrap().0.total()
    });
    relative_error(&grads.concat(), &numeric)
}

/// The l2 term alone.
fn l2_trial(rng: &mut SeededRng) -> f64 {
    let model = build_model(&tiny_spec(4), rng).unwrap();
    let weight = rng.uniform_range(0.001, 0.1);
    let (_, grads) = l2_penalty(&model, weight);
    let flat: Vec<f64> = model.params().iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let numeric = numeric_gradient(&flat, 1e-5, |theta| {
        let mut m = model.clone();
        let mut at = 0;
        for (_, p) in m.params_mut() {
            let k = p.len();
            p.copy_from_slice(&theta[at..at + k]);
            at += k;
        }
        l2_penalty(&m, weight).0
    });
    relative_error(&grads.concat(), &numeric)
}

fn c2_gradients() -> Outcome {
    const TRIALS: usize = 20;
    let mut worst_layer: f64 = 0.0;
    let mut failures = Vec::new();
    for check in layer_suite(2024, TRIALS) {
        worst_layer = worst_layer.max(check.worst);
        if check.worst >= 1e-6 || check.trials < TRIALS {
            failures.push(format!("{} {:.1e}", check.name, check.worst));
        }
    }
    let mut rng = SeededRng::new(77);
    let l2 = (0..TRIALS).map(|_| l2_trial(&mut rng)).fold(0.0, f64::max);
    if l2 >= 1e-6 {
        failures.push(format!("l2 {l2:.1e}"));
    }
    let whole = (0..TRIALS).map(|_| whole_model_trial(&mut rng, &tiny_spec(4))).fold(0.0, f64::max);
    let with_l2 = (0..TRIALS).map(|_| total_loss_trial(&mut rng)).fold(0.0, f64::max);
    if whole >= 1e-5 || with_l2 >= 1e-5 {
        failures.push(format!("whole model {whole:.1e} / with l2 {with_l2:.1e}"));
    }
    outcome(
        failures.is_empty(),
        format!(
            "worst per-layer {:.1e} (< 1e-6), l2 {l2:.1e}, whole depth-4 model {whole:.1e} / with l2 {with_l2:.1e} (< 1e-5), {TRIALS} shapes each{}",
            worst_layer,
            if failures.is_empty() { String::new() } else { format!("; failing: {}", failures.join(", ")) }
        ),
    )
}

/// Six nested loops over output voxel and kernel tap, zero outside the volume.
fn naive_conv(conv: &Conv3d, x: &Batch5D) -> Vec<f64> {
    let [b, ci, nx, ny, nz] = x.shape();
    let co = conv.out_channels();
    let at = |s: usize, c: usize, i: isize, j: isize, k: isize| -> f64 {
        if i < 0 || j < 0 || k < 0 || i >= nx as isize || j >= ny as isize || k >= nz as isize {
            return 0.0;
        }
        x.data()[(((s * ci + c) * nx + i as usize) * ny + j as usize) * nz + k as usize]
    };
    let mut out = Vec::with_capacity(b * co * nx * ny * nz);
    for s in 0..b {
        for o in 0..co {
            for i in 0..nx as isize {
                for j in 0..ny as isize {
                    for k in 0..nz as isize {
                        let mut acc = conv.bias[o];
                        for c in 0..ci {
                            for (dx, dy, dz) in (0..27).map(|t| (t / 9, t / 3 % 3, t % 3)) {
                                let w = conv.weights[conv.weight_index(o, c, dx, dy, dz)];
                                acc += w * at(s, c, i + dx as isize - 1, j + dy as isize - 1, k + dz as isize - 1);
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
    }
    out
}

fn c3_conv_oracle() -> Outcome {
    let mut rng = SeededRng::new(3);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (ci, co) = (1 + rng.below(4), 1 + rng.below(4));
        let shape = [1 + rng.below(3), ci, 1 + rng.below(7), 1 + rng.below(7), 1 + rng.below(7)];
        let n = shape.iter().product();
        let x = Batch5D::new(shape, (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap();
        let w = (0..ci * co * 27).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let bias = (0..co).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let conv = Conv3d::from_parts(ci, co, w, bias).unwrap();
        let oracle = naive_conv(&conv, &x);
        // both kernel paths
        for portable in [false, true] {
            set_portable_kernels(portable);
            let y = conv.forward(&x).unwrap();
            worst = y.data().iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
        }
        set_portable_kernels(false);
    }
    outcome(worst <= 1e-12, format!("max |optimized - naive| = {worst:.2e} over 50 instances (<= 1e-12)"))
}

fn c4_augmentation_law() -> Outcome {
    let mut rng = SeededRng::new(4);
    let dims = Dims::new(6, 5, 4);
    let mut problems = Vec::new();
    for round in 0..10 {
        let n = 1 + rng.below(50);
        let set: Vec<(Volume3D, Label)> = (0..n)
            .map(|_| {
                let v = Volume3D::from_fn(dims, |_, _, _| rng.uniform_range(0.0, 1.0)).unwrap();
                (v, if rng.bernoulli(0.5) { Label::Ad } else { Label::Cn })
            })
            .collect();
        for s in Strategy::ALL {
            let aug = augment_set(&set, s, &AugmentRanges::default(), true, &mut rng.fork(round)).unwrap();
            let expected = if s == Strategy::A { 2 * n } else { 4 * n };
            let labels_ok = aug.samples[..n].iter().zip(&set).all(|(a, b)| a.1 == b.1)
                && aug.log.iter().zip(&aug.samples[n..]).all(|(r, s)| s.1 == set[r.source].1);
            if aug.samples.len() != expected || !labels_ok {
                problems.push(format!("{} N={n}: {} samples", s.name(), aug.samples.len()));
            }
        }
        let identity = apply_params(&set[0].0, &AugmentParams::IDENTITY).unwrap();
        if identity.data().iter().zip(set[0].0.data()).any(|(a, b)| a.to_bits() != b.to_bits()) {
            problems.push("identity warp not bit-identical".into());
        }
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            "10 random N in [1,50]: A -> 2N, B/C -> 4N, labels preserved, identity bit-exact".to_string()
        } else {
            problems.join("; ")
        },
    )
}

fn c5_shapes() -> Outcome {
    let spec = ArchitectureSpec::paper(4);
    let pooled: Vec<[usize; 3]> = spec.pooled_dims().iter().map(|d| d.as_array()).collect();
    let mut ok = pooled == [[24, 24, 18], [8, 8, 6], [4, 4, 3], [2, 2, 1]] && spec.fc_input_len() == 128;
    let mut detail = format!("pooled {pooled:?}, FC input {}", spec.fc_input_len());
    let d = spec.input_dims;
    let mut rng = SeededRng::new(5);
    let x = Batch5D::new([1, 1, d.nx, d.ny, d.nz], (0..d.len()).map(|_| rng.normal()).collect()).unwrap();
    for depth in DEPTHS {
        let model = build_model(&ArchitectureSpec::paper(depth), &mut rng).unwrap();
        match model.infer_with_embeddings(&x) {
            Ok(f) => {
                let same = f.embeddings.first().is_some_and(|e| e.spatial() == d);
                let good = f.logits.shape() == [1, 2, 1, 1, 1] && f.embeddings.len() == depth && same;
                ok &= good;
                detail.push_str(&format!("; depth {depth} {}", if good { "ok" } else { "BAD" }));
            }
            Err(e) => {
                ok = false;
                detail.push_str(&format!("; depth {depth} failed: {e}"));
            }
        }
    }
    outcome(ok, detail)
}

fn c6_folds() -> Outcome {
    let records: Vec<SampleRecord> = (0..550)
        .map(|i| SampleRecord {
            id: format!("s{i:03}"),
            path: String::new(),
            label: if i < 307 { Label::Cn } else { Label::Ad },
            cohort_tag: String::new(),
        })
        .collect();
    let plan = stratified_kfold(&records, 7, 0).unwrap();
    let counts = plan.class_counts();
    let cn: Vec<usize> = counts.iter().map(|c| c[0]).collect();
    let ad: Vec<usize> = counts.iter().map(|c| c[1]).collect();
    let mut cn_sorted = cn.clone();
    cn_sorted.sort_unstable_by(|a, b| b.cmp(a));
    let mut ad_sorted = ad.clone();
    ad_sorted.sort_unstable_by(|a, b| b.cmp(a));
    let mut ids: Vec<&str> = plan.assignments.iter().map(|a| a.0.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    let partition = ids.len() == 550 && plan.assignments.len() == 550;
    let ok = cn_sorted == [44, 44, 44, 44, 44, 44, 43]
        && ad_sorted == [35, 35, 35, 35, 35, 34, 34]
        && partition
        && plan.unbalanced_folds() == [6];
    outcome(ok, format!("CN {cn:?}, AD {ad:?}, partition {partition}, off-balance folds {:?}", plan.unbalanced_folds()))
}

fn c7_metrics() -> Outcome {
    let mut rng = SeededRng::new(7);
    let mut mismatches = 0;
    for _ in 0..100 {
        let n = 2 + rng.below(199);
        let mut labels: Vec<Label> = (0..n).map(|_| if rng.bernoulli(0.5) { Label::Ad } else { Label::Cn }).collect();
        labels[0] = Label::Ad;
        labels[1] = Label::Cn;
        let levels = 2 + rng.below(30);
        let scores: Vec<f64> = (0..n).map(|_| rng.below(levels) as f64 / levels as f64).collect();
        let preds: Vec<Label> = (0..n).map(|_| if rng.bernoulli(0.5) { Label::Ad } else { Label::Cn }).collect();

        // pairwise rank oracle, in half-units
        let (mut twice, mut pos, mut neg) = (0u128, 0u128, 0u128);
        for i in 0..n {
            if labels[i] == Label::Ad {
                pos += 1;
            } else {
                neg += 1;
            }
            for j in 0..n {
                if labels[i] == Label::Ad && labels[j] == Label::Cn {
                    twice += if scores[i] > scores[j] { 2 } else if scores[i] == scores[j] { 1 } else { 0 };
                }
            }
        }
        let roc_oracle = twice as f64 / (2 * pos * neg) as f64;

        // threshold sweep from the highest score down
        let mut thresholds = scores.clone();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let (mut area, mut prev) = (0.0, 0.0);
        for t in thresholds {
            let tp = (0..n).filter(|&i| scores[i] >= t && labels[i] == Label::Ad).count();
            let predicted = (0..n).filter(|&i| scores[i] >= t).count();
            let recall = tp as f64 / pos as f64;
            area += (recall - prev) * (tp as f64 / predicted as f64);
            prev = recall;
        }

        // tally loop
        let mut tally = [[0usize; 2]; 2];
        for (l, p) in labels.iter().zip(&preds) {
            tally[l.index()][p.index()] += 1;
        }
        let rates = confusion_and_rates(&labels, &preds).unwrap();
        let c = rates.confusion;
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let rates_ok = [c.tn, c.fp, c.fn_, c.tp] == [tally[0][0], tally[0][1], tally[1][0], tally[1][1]]
            && rates.ad.precision == ratio(tally[1][1], tally[1][1] + tally[0][1])
            && rates.ad.recall == ratio(tally[1][1], tally[1][1] + tally[1][0])
            && rates.cn.precision == ratio(tally[0][0], tally[0][0] + tally[1][0])
            && rates.cn.recall == ratio(tally[0][0], tally[0][0] + tally[0][1])
            && rates.accuracy == (tally[0][0] + tally[1][1]) as f64 / n as f64;

        if roc_auc(&labels, &scores).unwrap() != roc_oracle || pr_auc(&labels, &scores).unwrap() != area || !rates_ok {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches} mismatches over 100 instances (n <= 200, tied scores)"))
}

fn c9_early_stopping() -> Outcome {
    let mut rng = SeededRng::new(9);
    let (mut bad, mut early) = (0, 0);
    for _ in 0..200 {
        let patience = 1 + rng.below(6);
        let max_epochs = 5 + rng.below(40);
        let trace: Vec<f64> = (0..max_epochs).map(|_| rng.below(8) as f64 / 8.0).collect();
        // oracle: first epoch of strict improvement, stop after `patience` stale epochs
        let (mut best, mut best_epoch, mut stop) = (f64::NEG_INFINITY, 0, max_epochs);
        for (e, &v) in trace.iter().enumerate() {
            if v > best {
                best = v;
                best_epoch = e + 1;
            } else if e + 1 - best_epoch >= patience {
                stop = e + 1;
                break;
            }
        }
        let mut weights = vec![0.0];
        let out = early_stopping_loop(max_epochs, patience, &mut weights, |w, e| {
            w[0] = e as f64;
            Ok(trace[e - 1])
        })
        .unwrap();
        if stop < max_epochs {
            early += 1;
        }
        if out.stopped_epoch != stop || out.best_epoch != best_epoch || out.best[0] != best_epoch as f64 {
            bad += 1;
        }
    }

    // a real fit returns the best-epoch weights
    let spec = tiny_spec(4);
    let set: Vec<(Volume3D, Label)> = (0..16)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Cn } else { Label::Ad };
            let shift = if label == Label::Ad { 0.4 } else { 0.0 };
            (Volume3D::from_fn(spec.input_dims, |_, _, _| rng.normal() + shift).unwrap(), label)
        })
        .collect();
    let model = build_model(&spec, &mut rng).unwrap();
    let cfg = TrainConfig { max_epochs: 15, patience: 3, batch_size: 4, seed: 3, ..TrainConfig::default() };
    let fitted = fit(model, &set[..10], &set[10..], &cfg).unwrap();
    let recorded = fitted.history.epochs[fitted.best_epoch - 1].val_acc;
    let replayed = evaluate(&fitted.model, &set[10..]).unwrap().accuracy;
    let fit_ok = recorded == replayed
        && (fitted.stopped_epoch == fitted.best_epoch + 3 || fitted.stopped_epoch == cfg.max_epochs);
    outcome(
        bad == 0 && fit_ok,
        format!(
            "{bad} of 200 constructed traces wrong ({early} stopped at best + patience); fit: best epoch {} stop {} val acc recorded {recorded} / replayed {replayed}",
            fitted.best_epoch, fitted.stopped_epoch
        ),
    )
}

fn desk_config() -> Config {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    Config::load(Some(&path), &[]).expect("desk config")
}

fn state_dir() -> PathBuf {
    std::env::var_os("VOLCNN_ACCEPTANCE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance"))
}

/// Completed desk study, shared by the study criteria.
struct Study {
    ctx: StudyContext,
    summary: GridSummary,
}

fn c8_desk_study(study: &mut Option<Study>) -> Outcome {
    let mut cfg = desk_config();
    let dir = state_dir().join("desk");
    let manifest = dir.join("data").join("manifest.csv");
    if !manifest.exists() {
        synthesize(&cfg.synthetic, &dir.join("data"), "syn", "synthetic").unwrap();
    }
    let set = generate_synthetic(&cfg.synthetic).unwrap();
    let oracle = CavityRule::from_spec(&cfg.synthetic).unwrap().accuracy(&set);
    cfg.data.manifest = Some(manifest.clone());
    let ctx = StudyContext::open(cfg.clone(), &dir).unwrap();
    let total = volcnn::experiment::ExperimentPlan::grid(&cfg, ctx.folds.k).unwrap().keys().len();
    let mut finished = 0;
    let results = run_grid(&ctx, |r| {
        finished += 1;
        eprintln!(
            "  [{finished}] {} val {:.3} test {:.3} epochs {} {:.0}s {}",
            r.key.dir_name(),
            r.val_accuracy,
            r.test_accuracy,
            r.stopped_epoch,
            r.seconds,
            if r.is_ok() { "" } else { "FAILED" }
        )
    })
    .unwrap();
    let ok_runs = results.iter().filter(|r| r.is_ok()).count();
    let run_seconds: f64 = results.iter().map(|r| r.seconds).sum();

    let (summary, files) = write_report(&dir, "results.jsonl").unwrap();
    let report_ok = [&files.grid_markdown, &files.grid_csv, &files.per_fold_svg, &files.curves_svg, &files.roc_svg]
        .iter()
        .all(|p| std::fs::metadata(p).is_ok_and(|m| m.len() > 0))
        && summary.cells.len() == 9;
    let best = summary.best_cell().clone();

    // replay one run of the best cell in reference mode, in a fresh directory
    let replay_dir = state_dir().join("replay");
    let _ = std::fs::remove_dir_all(&replay_dir);
    let mut rcfg = cfg.clone();
    rcfg.runtime.reference_mode = true;
    rcfg.data.folds = Some(cfg.folds_path(&dir));
    let rctx = StudyContext::open(rcfg, &replay_dir).unwrap();
    let key = RunKey { strategy: best.strategy, depth: best.depth, fold: 0, trial: 0, dropout_p: best.dropout_p };
    execute_run(&rctx, key).unwrap();
    let same = |name: &str| {
        std::fs::read(ctx.run_dir(&key).join(name)).ok() == std::fs::read(rctx.run_dir(&key).join(name)).ok()
    };
    let replay_ok = same("history.csv") && same("model.ckpt") && same("augment_log.jsonl");

    let accuracy_ok = oracle < 0.95 || best.test.mean >= 0.90;
    let runtime_ok = run_seconds < 2700.0;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    *study = Some(Study { ctx, summary });
    outcome(
        ok_runs == total && report_ok && replay_ok && accuracy_ok && oracle >= 0.95 && runtime_ok,
        format!(
            "{ok_runs}/{total} runs ok; report {}; replay of {} byte-identical: {replay_ok}; oracle {oracle:.3} (>= 0.95); \
             best {} depth {} test {:.4} ± {:.4} (>= 0.90), val {:.4}; summed run time {:.0} s on {cores} core(s) (target < 2700 s)",
            if report_ok { "complete" } else { "INCOMPLETE" },
            key.dir_name(),
            best.strategy.name(),
            best.depth,
            best.test.mean,
            best.test.std,
            best.val.mean,
            run_seconds
        ),
    )
}

fn c10_ablation_and_shift(study: &Study) -> Outcome {
    let best = study.summary.best_cell().clone();
    let mut ctx = study.ctx.clone();
    ctx.cfg.experiment.folds = Some(vec![0, 1]);
    ctx.cfg.experiment.trials = 1;
    let table: AblationTable = run_dropout_ablation(&ctx, (best.strategy, best.depth), |r| {
        eprintln!("  ablation {} test {:.3} epochs {}", r.key.dir_name(), r.test_accuracy, r.stopped_epoch)
    })
    .unwrap();
    let md = table.to_markdown();
    std::fs::write(ctx.dir.join("report").join("ablation.md"), &md).unwrap();
    let header = format!("| {} |", ABLATION_HEADER.join(" | "));
    let rows_ok = md.lines().skip(2).all(|l| {
        let cells: Vec<&str> = l.trim_matches('|').split('|').map(str::trim).collect();
        cells.len() == 4 && cells[1].contains(" ± ") && cells[2].contains(" ± ") && cells[3].parse::<u64>().is_ok()
    });
    let table_ok = md.lines().next() == Some(header.as_str())
        && md.lines().count() == 2 + ctx.cfg.experiment.dropout_grid.len()
        && rows_ok;

    // domain shift: best-cell checkpoints on fresh higher-noise cohorts
    let in_domain = best.test.mean;
    let mut hits = 0;
    let mut accs = Vec::new();
    let mut bound = 0.0;
    for r in 0..10u64 {
        let key = RunKey {
            strategy: best.strategy,
            depth: best.depth,
            fold: r as usize % ctx.folds.k,
            trial: r as usize / ctx.folds.k,
            dropout_p: best.dropout_p,
        };
        let ck = load_checkpoint(&study.ctx.run_dir(&key).join("model.ckpt")).unwrap();
        let spec = SyntheticSpec { seed: ctx.cfg.external.seed + r, ..ctx.cfg.external.clone() };
        let cohort = generate_synthetic(&spec).unwrap();
        let n = cohort.len() as f64;
        bound = 0.5 + 3.0 * (0.25 / n).sqrt();
        let acc = evaluate_model_external(&ck.model, &cohort, ctx.cfg.train.eval_batch_size).unwrap().metrics.rates.accuracy;
        if acc > bound && acc < in_domain {
            hits += 1;
        }
        accs.push(format!("{acc:.3}"));
    }
    outcome(
        table_ok && hits >= 8,
        format!(
            "ablation table {} ({} rows); external accuracy in ({bound:.3}, {in_domain:.3}) for {hits}/10 cohorts (>= 8): [{}]",
            if table_ok { "well-formed" } else { "MALFORMED" },
            table.rows.len(),
            accs.join(", ")
        ),
    )
}

fn main() -> ExitCode {
    volcnn::cli::tune_allocator();
    let quick = std::env::args().any(|a| a == "--quick");
    let start = Instant::now();
    let mut run = Runner { results: Vec::new() };
    run.check("C1", "parameter-count oracle", 1.0, c1_parameter_counts);
    run.check("C2", "gradient suite", 120.0, c2_gradients);
    run.check("C3", "convolution oracle", 30.0, c3_conv_oracle);
    run.check("C4", "augmentation cardinality", 60.0, c4_augmentation_law);
    run.check("C5", "shape chain", 60.0, c5_shapes);
    run.check("C6", "fold-plan law", 1.0, c6_folds);
    run.check("C7", "metric oracles", 60.0, c7_metrics);
    let mut study = None;
    if quick {
        run.skip("C8", "desk-scale study");
    } else {
        run.check("C8", "desk-scale study", 2700.0, || c8_desk_study(&mut study));
    }
    run.check("C9", "early-stopping contract", 1.0, c9_early_stopping);
    match &study {
        Some(s) => run.check("C10", "ablation + domain shift", 1200.0, || c10_ablation_and_shift(s)),
        None => run.skip("C10", "ablation + domain shift"),
    }
    let passed = run.results.iter().filter(|r| r.1).count();
    println!("{passed}/{} criteria passed in {:.1} s", run.results.len(), start.elapsed().as_secs_f64());
    if passed == run.results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
