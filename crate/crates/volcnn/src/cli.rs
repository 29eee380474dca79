//! Command-line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use volcnn_core::augment::Strategy;
use volcnn_core::Label;

use crate::config::Config;
use crate::error::{write_atomic, Error, Result};
use crate::experiment::{
    ensure_fold_plan, evaluate_external, execute_run, run_dropout_ablation, run_grid, summarize, Dataset,
    ExternalReport, ResultsStore, RunKey, RunResult, StudyContext,
};
use crate::manifest::fold_plan_json;
use crate::pipeline::{export_embeddings, preprocess_manifest, synthesize};
use crate::report::{grid_markdown, roc_svg, write_report};

/// Log-level environment variable (`error`, `warn`, `info`, `debug`, `trace`
/// or any `env_logger` filter). `-v` / `-q` take precedence.
pub const LOG_ENV: &str = "VOLCNN_LOG";

#[derive(Debug, Parser)]
#[command(name = "volcnn", version, about = "3D CNN experiments on structural brain volumes")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.max_epochs=60` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "out", global = true)]
    pub out: PathBuf,
    /// Concurrent runs (0 = all cores); same as `runtime.jobs`.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Master seed; same as `experiment.master_seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// One run at a time for bit-reproducible results.
    #[arg(long, global = true)]
    pub reference_mode: bool,
    /// More logging (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Warnings and errors only.
    #[arg(short, long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Resample and normalize every volume of a manifest.
    Preprocess {
        /// Input manifest (default: `data.manifest`).
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output directory (default: `<out>/preprocessed`).
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Generate a synthetic cohort.
    Synth {
        /// Use the `[external]` spec and write to `<out>/external`.
        #[arg(long)]
        external: bool,
        /// Output directory (default: `<out>/data` or `<out>/external`).
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Write the stratified fold plan of the manifest.
    Split,
    /// Train and evaluate one run.
    Train {
        #[arg(long, default_value = "B")]
        strategy: Strategy,
        #[arg(long, default_value_t = 4)]
        depth: usize,
        /// Test fold; validation is the next fold.
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long, default_value_t = 0)]
        trial: usize,
        /// Dropout probability (default: `model.dropout_p`).
        #[arg(long)]
        dropout: Option<f64>,
        /// Also export t-SNE embeddings of up to this many samples per split.
        #[arg(long, value_name = "N")]
        embeddings: Option<usize>,
    },
    /// Run the strategy × depth grid (resumes from the results store).
    Grid,
    /// Dropout ablation of one configuration (default: the grid's best).
    Ablate {
        #[arg(long, requires = "depth")]
        strategy: Option<Strategy>,
        #[arg(long, requires = "strategy")]
        depth: Option<usize>,
    },
    /// Evaluate a checkpoint on an external cohort without retraining.
    EvalExternal {
        #[arg(long)]
        checkpoint: PathBuf,
        /// External manifest (default: `<out>/external/manifest.csv`).
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Tables and plots from a results store.
    Report {
        /// Store file inside the output directory.
        #[arg(long, default_value = "results.jsonl")]
        store: String,
    },
}

impl GlobalArgs {
    /// Loads the config, then applies `--set`, then the dedicated flags.
    pub fn config(&self) -> Result<Config> {
        let mut overrides = self.overrides.clone();
        if let Some(j) = self.jobs {
            overrides.push(format!("runtime.jobs={j}"));
        }
        if self.reference_mode {
            overrides.push("runtime.reference_mode=true".into());
        }
        let mut cfg = Config::load(self.config.as_deref(), &overrides)?;
        if let Some(s) = self.seed {
            cfg.experiment.master_seed = s;
        }
        Ok(cfg)
    }

    fn log_filter(&self) -> Option<&'static str> {
        match (self.quiet, self.verbose) {
            (true, _) => Some("warn"),
            (false, 0) => None,
            (false, 1) => Some("debug"),
            (false, _) => Some("trace"),
        }
    }
}

fn init_logging(global: &GlobalArgs) {
    let env = env_logger::Env::new().filter_or(LOG_ENV, "info");
    let mut b = env_logger::Builder::from_env(env);
    if let Some(level) = global.log_filter() {
        b.parse_filters(level);
    }
    b.format_timestamp_secs().try_init().ok();
}

/// Large scratch buffers are reused across batches; keep glibc from
/// returning them to the OS (and faulting them back in) every step.
pub fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator parameters; called before any threads start.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn snapshot_config(cfg: &Config, out: &Path) -> Result<()> {
    write_atomic(&out.join("config.toml"), cfg.to_toml()?.as_bytes())
}

fn run_log(r: &RunResult) {
    match &r.status {
        crate::experiment::RunStatus::Ok => log::info!(
            "{}: val {:.4} test {:.4} epochs {} ({:.1}s)",
            r.key.dir_name(),
            r.val_accuracy,
            r.test_accuracy,
            r.stopped_epoch,
            r.seconds
        ),
        crate::experiment::RunStatus::Failed { error } => log::error!("{} failed: {error}", r.key.dir_name()),
    }
}

/// Executes one parsed invocation.
pub fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = cli.global.config()?;
    let out = &cli.global.out;
    volcnn_core::nn::set_portable_kernels(cfg.runtime.portable_kernels);
    match &cli.command {
        Command::Preprocess { manifest, dir } => {
            let src = manifest.clone().or_else(|| cfg.data.manifest.clone()).ok_or_else(|| {
                Error::Config("preprocess needs --manifest or data.manifest".into())
            })?;
            let dir = dir.clone().unwrap_or_else(|| out.join("preprocessed"));
            let m = preprocess_manifest(&src, &dir, cfg.preprocess.dims, cfg.preprocess.normalize)?;
            println!("{}", m.display());
        }
        Command::Synth { external, dir } => {
            let (spec, default_dir, tag) = if *external {
                (&cfg.external, out.join("external"), "external")
            } else {
                (&cfg.synthetic, out.join("data"), "synthetic")
            };
            let dir = dir.clone().unwrap_or(default_dir);
            let m = synthesize(spec, &dir, if *external { "ext" } else { "syn" }, tag)?;
            println!("{}", m.display());
        }
        Command::Split => {
            let data = Dataset::load(&cfg.manifest_path(out))?;
            let path = cfg.folds_path(out);
            if path.exists() {
                std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
            }
            let plan = ensure_fold_plan(&cfg, out, &data)?;
            for (f, [cn, ad]) in plan.class_counts().into_iter().enumerate() {
                log::info!("fold {f}: {cn} CN + {ad} AD = {}", cn + ad);
            }
            if !plan.unbalanced_folds().is_empty() {
                log::info!("folds off the balanced size: {:?}", plan.unbalanced_folds());
            }
            print!("{}", fold_plan_json(&plan));
        }
        Command::Train { strategy, depth, fold, trial, dropout, embeddings } => {
            snapshot_config(&cfg, out)?;
            let ctx = StudyContext::open(cfg.clone(), out)?;
            let key = RunKey {
                strategy: *strategy,
                depth: *depth,
                fold: *fold,
                trial: *trial,
                dropout_p: dropout.unwrap_or(cfg.model.dropout_p),
            };
            if key.fold >= ctx.folds.k {
                return Err(Error::Config(format!("fold {} with k = {}", key.fold, ctx.folds.k)));
            }
            let run = execute_run(&ctx, key)?;
            run_log(&run.result);
            if let Some(max) = embeddings {
                let tag = |ids: &[String]| -> Result<Vec<(String, _, Label)>> {
                    Ok(ids.iter().cloned().zip(ctx.data.samples(ids)?).map(|(id, (v, l))| (id, v, l)).collect())
                };
                let splits = [("train", tag(&run.split.train)?), ("test", tag(&run.split.test)?)];
                let path = ctx.run_dir(&key).join("embeddings.csv");
                export_embeddings(&run.fit.model, &splits, *max, &cfg.tsne, &path)?;
                log::info!("embeddings in {}", path.display());
            }
            print_json(&run.result);
        }
        Command::Grid => {
            snapshot_config(&cfg, out)?;
            let ctx = StudyContext::open(cfg, out)?;
            let results = run_grid(&ctx, run_log)?;
            let failed = results.iter().filter(|r| !r.is_ok()).count();
            if failed > 0 {
                log::warn!("{failed} of {} runs failed", results.len());
            }
            print!("{}", grid_markdown(&summarize(&results)?));
        }
        Command::Ablate { strategy, depth } => {
            snapshot_config(&cfg, out)?;
            let best = match (strategy, depth) {
                (Some(s), Some(d)) => (*s, *d),
                _ => {
                    let store = ResultsStore::new(out.join("results.jsonl"));
                    let results = store.load()?;
                    if results.is_empty() {
                        return Err(Error::EmptyStore(store.path));
                    }
                    let s = summarize(&results)?;
                    (s.best_cell().strategy, s.best_cell().depth)
                }
            };
            log::info!("dropout ablation of strategy {} depth {}", best.0.name(), best.1);
            let ctx = StudyContext::open(cfg, out)?;
            let table = run_dropout_ablation(&ctx, best, run_log)?;
            let md = table.to_markdown();
            write_atomic(&out.join("report").join("ablation.md"), md.as_bytes())?;
            print!("{md}");
        }
        Command::EvalExternal { checkpoint, manifest } => {
            let manifest = manifest.clone().unwrap_or_else(|| out.join("external").join("manifest.csv"));
            let report: ExternalReport = evaluate_external(checkpoint, &manifest, cfg.train.eval_batch_size)?;
            let dir = out.join("external_eval");
            write_atomic(&dir.join("report.json"), &serde_json::to_vec_pretty(&report).expect("serializable"))?;
            let label = format!("external (AUC {:.3})", report.metrics.roc_auc);
            roc_svg(&dir.join("roc.svg"), "external cohort ROC", &[(label, report.roc.clone())])?;
            print_json(&report.metrics);
        }
        Command::Report { store } => {
            let (summary, files) = write_report(out, store)?;
            print!("{}", grid_markdown(&summary));
            print_json(&files);
        }
    }
    Ok(())
}

/// Parses arguments, runs, and maps errors to exit codes.
pub fn main() -> ExitCode {
    tune_allocator();
    let cli = Cli::parse();
    init_logging(&cli.global);
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::from(e.exit_code())
        }
    }
}
