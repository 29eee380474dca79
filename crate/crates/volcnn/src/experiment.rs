//! Grid runs over (strategy, depth, fold, trial, dropout), the results store,
//! summaries, the dropout ablation and external evaluation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use volcnn_core::augment::{augment_set, Strategy};
use volcnn_core::dataset::{stratified_kfold, FoldPlan, Split};
use volcnn_core::metrics::{aggregate, roc_curve, run_metrics, RunMetrics, Summary};
use volcnn_core::nn::{build_model, Model};
use volcnn_core::rng::mix_seed;
use volcnn_core::train::{evaluate_batched, fit, Evaluation, FitResult, TrainConfig};
use volcnn_core::volume::{Dims, Volume3D};
use volcnn_core::{Label, SeededRng};

use crate::config::Config;
use crate::error::{read_string, write_atomic, Error, Result};
use crate::format::{load_checkpoint, save_checkpoint};
use crate::manifest::{load_manifest, read_fold_plan, write_fold_plan, Manifest};
use crate::tables::{history_csv, write_augment_log};

/// Identifies one training run.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RunKey {
    pub strategy: Strategy,
    pub depth: usize,
    pub fold: usize,
    pub trial: usize,
    pub dropout_p: f64,
}

impl RunKey {
    fn order(&self) -> (Strategy, usize, u64, usize, usize) {
        (self.strategy, self.depth, self.dropout_p.to_bits(), self.fold, self.trial)
    }

    /// Directory name, unique per key.
    pub fn dir_name(&self) -> String {
        format!("{}-d{}-p{}-f{}-t{}", self.strategy.name(), self.depth, self.dropout_p, self.fold, self.trial)
    }
}

impl PartialEq for RunKey {
    fn eq(&self, other: &Self) -> bool {
        self.order() == other.order()
    }
}

impl Eq for RunKey {}

impl PartialOrd for RunKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for RunKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        let (a, b) = (self.order(), other.order());
        (a.0, a.1, f64::from_bits(a.2).total_cmp(&f64::from_bits(b.2)), a.3, a.4).cmp(&(
            b.0,
            b.1,
            std::cmp::Ordering::Equal,
            b.3,
            b.4,
        ))
    }
}

impl std::hash::Hash for RunKey {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.order().hash(state)
    }
}

/// Describes [`run_seed`] in seed ledgers.
pub const SEED_SCHEME: &str =
    "mix_seed chain: master -> strategy index -> depth -> fold -> trial -> dropout_p bits (splitmix64 finalizer)";

/// Per-run seed: the master seed mixed with every key component in turn.
pub fn run_seed(master: u64, key: &RunKey) -> u64 {
    let strategy = Strategy::ALL.iter().position(|s| *s == key.strategy).expect("known strategy") as u64;
    [strategy, key.depth as u64, key.fold as u64, key.trial as u64, key.dropout_p.to_bits()]
        .into_iter()
        .fold(master, mix_seed)
}

/// Independent streams of one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSeeds {
    pub run: u64,
    pub init: u64,
    pub augment: u64,
    pub train: u64,
}

impl RunSeeds {
    pub fn derive(master: u64, key: &RunKey) -> Self {
        let run = run_seed(master, key);
        Self { run, init: mix_seed(run, 1), augment: mix_seed(run, 2), train: mix_seed(run, 3) }
    }
}

/// The set of runs of one study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub strategies: Vec<Strategy>,
    pub depths: Vec<usize>,
    pub folds: Vec<usize>,
    pub trials: usize,
    pub dropouts: Vec<f64>,
    pub master_seed: u64,
}

impl ExperimentPlan {
    /// The strategy × depth grid at the configured dropout.
    pub fn grid(cfg: &Config, k: usize) -> Result<Self> {
        let e = &cfg.experiment;
        Self {
            strategies: e.strategies.clone(),
            depths: e.depths.clone(),
            folds: e.folds.clone().unwrap_or_else(|| (0..k).collect()),
            trials: e.trials,
            dropouts: vec![cfg.model.dropout_p],
            master_seed: e.master_seed,
        }
        .checked(k)
    }

    /// One configuration across the dropout grid.
    pub fn ablation(cfg: &Config, k: usize, best: (Strategy, usize)) -> Result<Self> {
        let e = &cfg.experiment;
        Self {
            strategies: vec![best.0],
            depths: vec![best.1],
            folds: e.folds.clone().unwrap_or_else(|| (0..k).collect()),
            trials: e.trials,
            dropouts: e.dropout_grid.clone(),
            master_seed: e.master_seed,
        }
        .checked(k)
    }

    /// Validates and checks that every derived seed is distinct.
    pub fn checked(self, k: usize) -> Result<Self> {
        if self.trials == 0
            || self.strategies.is_empty()
            || self.depths.is_empty()
            || self.folds.is_empty()
            || self.dropouts.is_empty()
        {
            return Err(Error::Config("plan needs ≥1 trial, strategy, depth, fold and dropout value".into()));
        }
        if let Some(f) = self.folds.iter().find(|f| **f >= k) {
            return Err(Error::Config(format!("fold {f} with k = {k}")));
        }
        let keys = self.keys();
        let mut seen = HashMap::new();
        for key in &keys {
            if let Some(other) = seen.insert(run_seed(self.master_seed, key), *key) {
                if other != *key {
                    return Err(Error::Config(format!("seed collision between {other:?} and {key:?}")));
                }
            }
        }
        if seen.len() != keys.len() {
            return Err(Error::Config("plan lists a run twice".into()));
        }
        Ok(self)
    }

    pub fn keys(&self) -> Vec<RunKey> {
        let mut keys = Vec::new();
        for &strategy in &self.strategies {
            for &depth in &self.depths {
                for &dropout_p in &self.dropouts {
                    for &fold in &self.folds {
                        for trial in 0..self.trials {
                            keys.push(RunKey { strategy, depth, fold, trial, dropout_p });
                        }
                    }
                }
            }
        }
        keys
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed { error: String },
}

/// Outcome of one run, persisted as one line of the results store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub key: RunKey,
    pub seed: u64,
    #[serde(flatten)]
    pub status: RunStatus,
    /// NaN for failed runs (stored as JSON null).
    #[serde(deserialize_with = "nan_if_null")]
    pub val_accuracy: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub test_accuracy: f64,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    /// Raw training-split size `N`.
    pub raw_train: usize,
    /// Training-set size after augmentation.
    pub train_size: usize,
    pub test_metrics: Option<RunMetrics>,
    /// Run directory relative to the study directory.
    pub run_dir: String,
    pub seconds: f64,
}

impl RunResult {
    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }

    fn failed(key: RunKey, seed: u64, error: String) -> Self {
        Self {
            key,
            seed,
            status: RunStatus::Failed { error },
            val_accuracy: f64::NAN,
            test_accuracy: f64::NAN,
            best_epoch: 0,
            stopped_epoch: 0,
            raw_train: 0,
            train_size: 0,
            test_metrics: None,
            run_dir: key.dir_name(),
            seconds: 0.0,
        }
    }
}

fn nan_if_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

/// Append-only JSON-lines store of [`RunResult`]s.
#[derive(Clone, Debug)]
pub struct ResultsStore {
    pub path: PathBuf,
}

impl ResultsStore {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self { path: path.into() }
    }

    /// Appends one record with a single write.
    pub fn append(&self, result: &RunResult) -> Result<()> {
        if let Some(dir) = self.path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut line = serde_json::to_vec(result).expect("result serializes");
        line.push(b'\n');
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path).map_err(|e| Error::io(&self.path, e))?;
        f.write_all(&line).and_then(|_| f.flush()).map_err(|e| Error::io(&self.path, e))
    }

    /// All records; a missing store is empty. A torn final line (interrupted
    /// write) is ignored; later records win for repeated keys.
    pub fn load(&self) -> Result<Vec<RunResult>> {
        if !self.path.exists() {
            return Ok(Vec::new());
        }
        let text = read_string(&self.path)?;
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let mut by_key: BTreeMap<RunKey, RunResult> = BTreeMap::new();
        for (i, line) in lines.iter().enumerate() {
            match serde_json::from_str::<RunResult>(line) {
                Ok(r) => {
                    by_key.insert(r.key, r);
                }
                Err(e) if i + 1 == lines.len() && !text.ends_with('\n') => {
                    log::warn!("{}: ignoring torn last record ({e})", self.path.display());
                }
                Err(e) => return Err(Error::parse(&self.path, format!("line {}: {e}", i + 1))),
            }
        }
        Ok(by_key.into_values().collect())
    }
}

/// Every manifest volume in memory, indexed by id.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub volumes: Vec<Volume3D>,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = load_manifest(manifest_path)?;
        let volumes = manifest.load_volumes()?;
        Self::from_parts(manifest, volumes)
    }

    pub fn from_parts(manifest: Manifest, volumes: Vec<Volume3D>) -> Result<Self> {
        if manifest.records.is_empty() {
            return Err(Error::Core(volcnn_core::Error::EmptySplit("manifest")));
        }
        let dims = volumes[0].dims();
        if let Some((r, v)) = manifest.records.iter().zip(&volumes).find(|(_, v)| v.dims() != dims) {
            return Err(Error::Config(format!("volume {} has dims {}, expected {dims}", r.id, v.dims())));
        }
        let index = manifest.records.iter().enumerate().map(|(i, r)| (r.id.clone(), i)).collect();
        Ok(Self { manifest, volumes, index })
    }

    pub fn dims(&self) -> Dims {
        self.volumes[0].dims()
    }

    pub fn samples(&self, ids: &[String]) -> Result<Vec<(Volume3D, Label)>> {
        ids.iter()
            .map(|id| {
                let &i = self.index.get(id).ok_or_else(|| Error::Config(format!("fold plan id {id} not in manifest")))?;
                Ok((self.volumes[i].clone(), self.manifest.records[i].label))
            })
            .collect()
    }

    pub fn all_samples(&self) -> Vec<(Volume3D, Label)> {
        self.volumes.iter().cloned().zip(self.manifest.records.iter().map(|r| r.label)).collect()
    }
}

/// Loads the fold plan from `cfg`'s folds path, or builds and writes one.
pub fn ensure_fold_plan(cfg: &Config, out: &Path, data: &Dataset) -> Result<FoldPlan> {
    let path = cfg.folds_path(out);
    let plan = if path.exists() {
        read_fold_plan(&path)?
    } else {
        let plan = stratified_kfold(&data.manifest.records, cfg.data.k, cfg.data.fold_seed)?;
        write_fold_plan(&path, &plan)?;
        plan
    };
    let ids: HashSet<&str> = data.manifest.records.iter().map(|r| r.id.as_str()).collect();
    let planned: HashSet<&str> = plan.assignments.iter().map(|a| a.0.as_str()).collect();
    if ids != planned {
        return Err(Error::Config(format!("fold plan {} does not cover the manifest exactly", path.display())));
    }
    Ok(plan)
}

/// Shared inputs of every run of a study.
#[derive(Clone, Debug)]
pub struct StudyContext {
    pub cfg: Config,
    pub data: std::sync::Arc<Dataset>,
    pub folds: FoldPlan,
    /// Study directory; run directories live under `runs/`.
    pub dir: PathBuf,
}

impl StudyContext {
    pub fn open(cfg: Config, out: &Path) -> Result<Self> {
        let data = Dataset::load(&cfg.manifest_path(out))?;
        let folds = ensure_fold_plan(&cfg, out, &data)?;
        Ok(Self { cfg, data: std::sync::Arc::new(data), folds, dir: out.to_path_buf() })
    }

    pub fn run_dir(&self, key: &RunKey) -> PathBuf {
        self.dir.join("runs").join(key.dir_name())
    }
}

#[derive(Serialize)]
struct SeedLedger<'a> {
    scheme: &'static str,
    rng: &'static str,
    master_seed: u64,
    fold_seed: u64,
    key: &'a RunKey,
    seeds: RunSeeds,
}

/// Everything a finished run produced in memory.
pub struct RunArtifacts {
    pub result: RunResult,
    pub fit: FitResult,
    pub split: Split,
    pub val: Evaluation,
    pub test: Evaluation,
}

/// Ensures no training (or augmented) sample comes from the validation or test ids.
pub fn check_leakage(split: &Split, augmented_sources: &[String]) -> Result<()> {
    let held_out: HashSet<&String> = split.val.iter().chain(&split.test).collect();
    if let Some(id) = split.train.iter().chain(augmented_sources).find(|id| held_out.contains(id)) {
        return Err(Error::Leakage(format!("training sample {id} is also held out")));
    }
    if let Some(id) = split.val.iter().find(|id| split.test.contains(id)) {
        return Err(Error::Leakage(format!("{id} is in both validation and test")));
    }
    Ok(())
}

/// Trains and evaluates one run and writes its directory: config snapshot,
/// seed ledger, augmentation log, history, checkpoint and metrics.
pub fn execute_run(ctx: &StudyContext, key: RunKey) -> Result<RunArtifacts> {
    let start = Instant::now();
    let cfg = &ctx.cfg;
    let seeds = RunSeeds::derive(cfg.experiment.master_seed, &key);
    let split = ctx.folds.materialize_split(key.fold)?;
    let train_raw = ctx.data.samples(&split.train)?;
    let val = ctx.data.samples(&split.val)?;
    let test = ctx.data.samples(&split.test)?;

    let include = cfg.augment.include_originals;
    let aug = augment_set(&train_raw, key.strategy, &cfg.augment.ranges(), include, &mut SeededRng::new(seeds.augment))?;
    let expected = train_raw.len() * (key.strategy.multiplier() + include as usize);
    if aug.samples.len() != expected {
        return Err(Error::Config(format!("augmented set has {} samples, expected {expected}", aug.samples.len())));
    }
    let sources: Vec<String> = aug.log.iter().map(|r| split.train[r.source].clone()).collect();
    check_leakage(&split, &sources)?;

    let spec = cfg.model.spec(key.depth, ctx.data.dims(), key.dropout_p);
    let model = build_model(&spec, &mut SeededRng::new(seeds.init))?;
    let train_cfg = TrainConfig { seed: seeds.train, ..cfg.train.clone() };
    let mut fit = fit(model, &aug.samples, &val, &train_cfg)?;
    // Evaluate exactly what the checkpoint stores.
    fit.model.round_to_f32();
    let val_eval = evaluate_batched(&fit.model, &val, cfg.train.eval_batch_size)?;
    let test_eval = evaluate_batched(&fit.model, &test, cfg.train.eval_batch_size)?;
    let test_metrics = metrics_of(&test_eval)?;

    let dir = ctx.run_dir(&key);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_atomic(&dir.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    let ledger = SeedLedger {
        scheme: SEED_SCHEME,
        rng: volcnn_core::rng::ALGORITHM,
        master_seed: cfg.experiment.master_seed,
        fold_seed: ctx.folds.seed,
        key: &key,
        seeds,
    };
    write_atomic(&dir.join("seeds.json"), &serde_json::to_vec_pretty(&ledger).expect("ledger serializes"))?;
    write_augment_log(&dir.join("augment_log.jsonl"), &aug.log, &split.train)?;
    let history_path = dir.join("history.csv");
    write_atomic(&history_path, &history_csv(&history_path, &fit.history)?)?;
    save_checkpoint(&dir.join("model.ckpt"), &fit.model, None)?;

    let result = RunResult {
        key,
        seed: seeds.run,
        status: RunStatus::Ok,
        val_accuracy: val_eval.accuracy,
        test_accuracy: test_eval.accuracy,
        best_epoch: fit.best_epoch,
        stopped_epoch: fit.stopped_epoch,
        raw_train: train_raw.len(),
        train_size: aug.samples.len(),
        test_metrics: Some(test_metrics),
        run_dir: Path::new("runs").join(key.dir_name()).to_string_lossy().into_owned(),
        seconds: start.elapsed().as_secs_f64(),
    };
    let test_labels: Vec<Label> = test.iter().map(|s| s.1).collect();
    let test_roc = roc_curve(&test_labels, &test_eval.scores(Label::Ad.index()))?;
    let metrics = serde_json::json!({
        "result": &result,
        "validation": metrics_of(&val_eval)?,
        "test_roc": test_roc,
    });
    write_atomic(&dir.join("metrics.json"), &serde_json::to_vec_pretty(&metrics).expect("metrics serialize"))?;
    Ok(RunArtifacts { result, fit, split, val: val_eval, test: test_eval })
}

fn metrics_of(ev: &Evaluation) -> Result<RunMetrics> {
    let labels: Vec<Label> = ev.labels.iter().map(|&l| Label::from_index(l).expect("binary label")).collect();
    let preds: Vec<Label> = ev.predictions.iter().map(|&l| Label::from_index(l).expect("binary label")).collect();
    Ok(run_metrics(&labels, &preds, &ev.scores(Label::Ad.index()))?)
}

fn run_guarded(ctx: &StudyContext, key: RunKey) -> RunResult {
    let seed = run_seed(ctx.cfg.experiment.master_seed, &key);
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| execute_run(ctx, key))) {
        Ok(Ok(a)) => a.result,
        Ok(Err(e)) => RunResult::failed(key, seed, e.to_string()),
        Err(p) => {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            RunResult::failed(key, seed, format!("panic: {}", msg.unwrap_or_default()))
        }
    }
}

/// Runs every key not already in `store` with up to `jobs` concurrent runs,
/// appending each result as it finishes. Failed runs are recorded, not
/// retried, and do not stop their siblings. Returns the results for `keys`.
pub fn run_keys(
    ctx: &StudyContext,
    keys: &[RunKey],
    store: &ResultsStore,
    jobs: usize,
    mut on_result: impl FnMut(&RunResult),
) -> Result<Vec<RunResult>> {
    let done: HashSet<RunKey> = store.load()?.into_iter().map(|r| r.key).collect();
    let todo: Vec<RunKey> = keys.iter().copied().filter(|k| !done.contains(k)).collect();
    log::info!("{} of {} runs to do ({} already stored)", todo.len(), keys.len(), keys.len() - todo.len());
    if jobs <= 1 {
        for key in todo {
            let r = run_guarded(ctx, key);
            store.append(&r)?;
            on_result(&r);
        }
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        let (tx, rx) = mpsc::channel();
        std::thread::scope(|s| -> Result<()> {
            s.spawn(move || {
                pool.install(|| {
                    use rayon::prelude::*;
                    todo.into_par_iter().for_each_with(tx, |tx, key| {
                        let _ = tx.send(run_guarded(ctx, key));
                    });
                })
            });
            for r in rx {
                store.append(&r)?;
                on_result(&r);
            }
            Ok(())
        })?;
    }
    let wanted: HashSet<RunKey> = keys.iter().copied().collect();
    Ok(store.load()?.into_iter().filter(|r| wanted.contains(&r.key)).collect())
}

/// Runs the strategy × depth grid of `ctx.cfg` into `<dir>/results.jsonl`.
pub fn run_grid(ctx: &StudyContext, on_result: impl FnMut(&RunResult)) -> Result<Vec<RunResult>> {
    let plan = ExperimentPlan::grid(&ctx.cfg, ctx.folds.k)?;
    let store = ResultsStore::new(ctx.dir.join("results.jsonl"));
    run_keys(ctx, &plan.keys(), &store, ctx.cfg.runtime.effective_jobs(), on_result)
}

/// Mean ± std of one grid cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub strategy: Strategy,
    pub depth: usize,
    pub dropout_p: f64,
    pub val: Summary,
    pub test: Summary,
    pub mean_stopped_epoch: f64,
    /// Validation accuracies per fold, ordered by trial.
    pub per_fold_val: BTreeMap<usize, Vec<f64>>,
    pub per_fold_test: BTreeMap<usize, Vec<f64>>,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub cells: Vec<CellSummary>,
    /// Index into `cells`.
    pub best: usize,
}

impl GridSummary {
    pub fn best_cell(&self) -> &CellSummary {
        &self.cells[self.best]
    }
}

/// Aggregates successful runs per (strategy, depth, dropout). Best cell:
/// highest mean validation accuracy, then lower std, then lower depth (then
/// strategy and dropout order, for a total order). Independent of input order.
pub fn summarize(results: &[RunResult]) -> Result<GridSummary> {
    let mut sorted: Vec<&RunResult> = results.iter().collect();
    sorted.sort_by_key(|r| r.key);
    let mut groups: BTreeMap<(Strategy, usize, u64), Vec<&RunResult>> = BTreeMap::new();
    for r in sorted {
        groups.entry((r.key.strategy, r.key.depth, r.key.dropout_p.to_bits())).or_default().push(r);
    }
    let mut cells = Vec::new();
    for ((strategy, depth, p), runs) in groups {
        let ok: Vec<&&RunResult> = runs.iter().filter(|r| r.is_ok()).collect();
        if ok.is_empty() {
            continue;
        }
        let mut per_fold_val: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut per_fold_test: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for r in &ok {
            per_fold_val.entry(r.key.fold).or_default().push(r.val_accuracy);
            per_fold_test.entry(r.key.fold).or_default().push(r.test_accuracy);
        }
        cells.push(CellSummary {
            strategy,
            depth,
            dropout_p: f64::from_bits(p),
            val: aggregate(&ok.iter().map(|r| r.val_accuracy).collect::<Vec<_>>())?,
            test: aggregate(&ok.iter().map(|r| r.test_accuracy).collect::<Vec<_>>())?,
            mean_stopped_epoch: ok.iter().map(|r| r.stopped_epoch as f64).sum::<f64>() / ok.len() as f64,
            per_fold_val,
            per_fold_test,
            failed: runs.len() - ok.len(),
        });
    }
    if cells.is_empty() {
        return Err(Error::Core(volcnn_core::Error::DegenerateInput("no successful runs to summarize")));
    }
    let best = (0..cells.len())
        .min_by(|&a, &b| {
            let (x, y) = (&cells[a], &cells[b]);
            y.val
                .mean
                .total_cmp(&x.val.mean)
                .then(x.val.std.total_cmp(&y.val.std))
                .then(x.depth.cmp(&y.depth))
                .then(x.strategy.cmp(&y.strategy))
                .then(x.dropout_p.total_cmp(&y.dropout_p))
        })
        .expect("nonempty");
    Ok(GridSummary { cells, best })
}

/// One row of the dropout table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub dropout_p: f64,
    pub val: Summary,
    pub test: Summary,
    pub mean_epochs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub strategy: Strategy,
    pub depth: usize,
    pub rows: Vec<AblationRow>,
}

pub const ABLATION_HEADER: [&str; 4] = ["Dropout", "Validation accuracy", "Testing accuracy", "N. epochs"];

impl AblationTable {
    pub fn from_summary(strategy: Strategy, depth: usize, summary: &GridSummary) -> Self {
        let rows = summary
            .cells
            .iter()
            .filter(|c| c.strategy == strategy && c.depth == depth)
            .map(|c| AblationRow {
                dropout_p: c.dropout_p,
                val: c.val.clone(),
                test: c.test.clone(),
                mean_epochs: c.mean_stopped_epoch,
            })
            .collect();
        Self { strategy, depth, rows }
    }

    /// Markdown table; accuracies in percent as `mean ± std`, epochs rounded.
    pub fn to_markdown(&self) -> String {
        let pct = |s: &Summary| format!("{:.2} ± {:.2}", 100.0 * s.mean, 100.0 * s.std);
        let mut out = format!("| {} |\n|---|---|---|---|\n", ABLATION_HEADER.join(" | "));
        for r in &self.rows {
            out.push_str(&format!(
                "| {} | {} | {} | {} |\n",
                r.dropout_p,
                pct(&r.val),
                pct(&r.test),
                r.mean_epochs.round() as i64
            ));
        }
        out
    }
}

/// Trains `best` across the configured dropout grid into `<dir>/ablation.jsonl`.
pub fn run_dropout_ablation(
    ctx: &StudyContext,
    best: (Strategy, usize),
    on_result: impl FnMut(&RunResult),
) -> Result<AblationTable> {
    let plan = ExperimentPlan::ablation(&ctx.cfg, ctx.folds.k, best)?;
    let store = ResultsStore::new(ctx.dir.join("ablation.jsonl"));
    let results = run_keys(ctx, &plan.keys(), &store, ctx.cfg.runtime.effective_jobs(), on_result)?;
    let summary = summarize(&results)?;
    Ok(AblationTable::from_summary(best.0, best.1, &summary))
}

/// Pure-inference evaluation on a cohort the model never saw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExternalReport {
    pub samples: usize,
    pub metrics: RunMetrics,
    pub roc: Vec<(f64, f64)>,
}

pub fn evaluate_model_external(model: &Model, samples: &[(Volume3D, Label)], batch: usize) -> Result<ExternalReport> {
    let ev = evaluate_batched(model, samples, batch)?;
    let labels: Vec<Label> = samples.iter().map(|s| s.1).collect();
    let metrics = metrics_of(&ev)?;
    let roc = roc_curve(&labels, &ev.scores(Label::Ad.index()))?;
    Ok(ExternalReport { samples: samples.len(), metrics, roc })
}

/// Loads `checkpoint` and evaluates it on every volume of `manifest`.
pub fn evaluate_external(checkpoint: &Path, manifest: &Path, batch: usize) -> Result<ExternalReport> {
    let ck = load_checkpoint(checkpoint)?;
    let data = Dataset::load(manifest)?;
    if data.dims() != ck.spec.input_dims {
        return Err(Error::CheckpointMismatch(format!(
            "model expects {} volumes, external cohort has {}",
            ck.spec.input_dims,
            data.dims()
        )));
    }
    evaluate_model_external(&ck.model, &data.all_samples(), batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(strategy: Strategy, depth: usize, fold: usize, trial: usize, dropout_p: f64) -> RunKey {
        RunKey { strategy, depth, fold, trial, dropout_p }
    }

    fn result(k: RunKey, val: f64) -> RunResult {
        RunResult {
            status: RunStatus::Ok,
            val_accuracy: val,
            test_accuracy: val - 0.05,
            stopped_epoch: 10,
            ..RunResult::failed(k, 0, String::new())
        }
    }

    #[test]
    fn plan_counts_and_unique_seeds() {
        let mut cfg = Config::default();
        cfg.experiment.strategies = vec![Strategy::B];
        cfg.experiment.depths = vec![8];
        let plan = ExperimentPlan::grid(&cfg, 7).unwrap();
        assert_eq!(plan.keys().len(), 70);
        cfg.experiment.strategies = Strategy::ALL.to_vec();
        cfg.experiment.depths = volcnn_core::nn::DEPTHS.to_vec();
        assert_eq!(ExperimentPlan::grid(&cfg, 7).unwrap().keys().len(), 1050);
        let ab = ExperimentPlan::ablation(&cfg, 7, (Strategy::B, 8)).unwrap();
        assert_eq!(ab.keys().len(), 4 * 70);
    }

    #[test]
    fn store_resume_and_torn_line() {
        let dir = tempfile::tempdir().unwrap();
        let store = ResultsStore::new(dir.path().join("r.jsonl"));
        assert!(store.load().unwrap().is_empty());
        let a = result(key(Strategy::A, 4, 0, 0, 0.0), 0.8);
        store.append(&a).unwrap();
        let mut f = OpenOptions::new().append(true).open(&store.path).unwrap();
        f.write_all(b"{\"key\":").unwrap();
        assert_eq!(store.load().unwrap(), vec![a]);
    }

    #[test]
    fn summary_best_and_ties() {
        let mut rs = Vec::new();
        for (s, d, vals) in [
            (Strategy::A, 4, [0.70, 0.72]),
            (Strategy::B, 8, [0.90, 0.92]),
            (Strategy::C, 6, [0.89, 0.93]),
            (Strategy::B, 4, [0.88, 0.90]),
        ] {
            for (f, v) in vals.iter().enumerate() {
                rs.push(result(key(s, d, f, 0, 0.0), *v));
            }
        }
        let sum = summarize(&rs).unwrap();
        assert_eq!((sum.best_cell().strategy, sum.best_cell().depth), (Strategy::B, 8));
        rs.reverse();
        assert_eq!(summarize(&rs).unwrap(), sum);
        // single result
        let one = summarize(&rs[..1]).unwrap();
        assert_eq!(one.cells.len(), 1);
        // equal means: C/6 (std 0.028) loses to B/8 (std 0.014); an equal-mean
        // equal-std pair resolves to the lower depth
        let tie = vec![
            result(key(Strategy::C, 8, 0, 0, 0.0), 0.9),
            result(key(Strategy::C, 8, 1, 0, 0.0), 0.9),
            result(key(Strategy::A, 6, 0, 0, 0.0), 0.9),
            result(key(Strategy::A, 6, 1, 0, 0.0), 0.9),
        ];
        let t = summarize(&tie).unwrap();
        assert_eq!((t.best_cell().strategy, t.best_cell().depth), (Strategy::A, 6));
    }

    #[test]
    fn ablation_table_shape() {
        let rs = vec![result(key(Strategy::B, 8, 0, 0, 0.0), 0.8721), result(key(Strategy::B, 8, 1, 0, 0.0), 0.8721)];
        let t = AblationTable::from_summary(Strategy::B, 8, &summarize(&rs).unwrap());
        let md = t.to_markdown();
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines[0], "| Dropout | Validation accuracy | Testing accuracy | N. epochs |");
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[2], "| 0 | 87.21 ± 0.00 | 82.21 ± 0.00 | 10 |");
    }

    #[test]
    fn leakage_is_detected() {
        let split = Split {
            test_fold: 0,
            val_fold: 1,
            train: vec!["a".into(), "b".into()],
            val: vec!["c".into()],
            test: vec!["d".into()],
        };
        assert!(check_leakage(&split, &["a".into()]).is_ok());
        assert!(matches!(check_leakage(&split, &["d".into()]), Err(Error::Leakage(_))));
    }
}
