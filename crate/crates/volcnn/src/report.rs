//! Tables and static SVG plots from a study directory.

use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{read_string, write_atomic, Error, Result};
use crate::experiment::{summarize, CellSummary, GridSummary, ResultsStore, RunResult};
use crate::tables::{read_history, HistoryRow};

fn pct(mean: f64, std: f64) -> String {
    format!("{:.2} ± {:.2}", 100.0 * mean, 100.0 * std)
}

/// Markdown grid table; the best cell is marked with `*`.
pub fn grid_markdown(summary: &GridSummary) -> String {
    let mut out = String::from(
        "| Strategy | Depth | Dropout | Validation accuracy | Testing accuracy | N. epochs | Runs | Failed |\n\
         |---|---|---|---|---|---|---|---|\n",
    );
    for (i, c) in summary.cells.iter().enumerate() {
        out.push_str(&format!(
            "| {}{} | {} | {} | {} | {} | {:.1} | {} | {} |\n",
            c.strategy.name(),
            if i == summary.best { "*" } else { "" },
            c.depth,
            c.dropout_p,
            pct(c.val.mean, c.val.std),
            pct(c.test.mean, c.test.std),
            c.mean_stopped_epoch,
            c.val.n,
            c.failed
        ));
    }
    out
}

#[derive(Serialize)]
struct GridCsvRow {
    strategy: String,
    depth: usize,
    dropout_p: f64,
    val_mean: f64,
    val_std: f64,
    test_mean: f64,
    test_std: f64,
    mean_epochs: f64,
    runs: usize,
    failed: usize,
    best: bool,
}

pub fn grid_csv(path: &Path, summary: &GridSummary) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (i, c) in summary.cells.iter().enumerate() {
        w.serialize(GridCsvRow {
            strategy: c.strategy.name().into(),
            depth: c.depth,
            dropout_p: c.dropout_p,
            val_mean: c.val.mean,
            val_std: c.val.std,
            test_mean: c.test.mean,
            test_std: c.test.std,
            mean_epochs: c.mean_stopped_epoch,
            runs: c.val.n,
            failed: c.failed,
            best: i == summary.best,
        })
        .map_err(|e| Error::parse(path, e))?;
    }
    w.into_inner().map_err(|e| Error::parse(path, e.to_string()))
}

fn plot_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

fn svg_area(path: &Path, size: (u32, u32)) -> Result<DrawingArea<SVGBackend<'_>, plotters::coord::Shift>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let area = SVGBackend::new(path, size).into_drawing_area();
    area.fill(&WHITE).map_err(|e| plot_err(path, e))?;
    Ok(area)
}

fn grid_shape(n: usize) -> (usize, usize) {
    let cols = (n as f64).sqrt().ceil().max(1.0) as usize;
    (n.div_ceil(cols), cols)
}

/// One panel per grid cell: validation (blue) and test (red) accuracy of
/// every trial against the fold index, with the per-fold validation mean.
pub fn per_fold_svg(path: &Path, summary: &GridSummary) -> Result<()> {
    let (rows, cols) = grid_shape(summary.cells.len());
    let area = svg_area(path, (300 * cols as u32, 240 * rows as u32))?;
    let k = summary.cells.iter().flat_map(|c| c.per_fold_val.keys()).max().map_or(1, |m| m + 1);
    for (panel, cell) in area.split_evenly((rows, cols)).iter().zip(&summary.cells) {
        draw_fold_panel(panel, cell, k).map_err(|e| plot_err(path, e))?;
    }
    area.present().map_err(|e| plot_err(path, e))
}

fn draw_fold_panel<DB: DrawingBackend>(
    panel: &DrawingArea<DB, plotters::coord::Shift>,
    cell: &CellSummary,
    k: usize,
) -> std::result::Result<(), DrawingAreaErrorKind<DB::ErrorType>> {
    let title = format!("{} depth {} p={}", cell.strategy.name(), cell.depth, cell.dropout_p);
    let mut chart = ChartBuilder::on(panel)
        .caption(title, ("sans-serif", 14))
        .margin(6)
        .x_label_area_size(22)
        .y_label_area_size(32)
        .build_cartesian_2d(-0.5f64..k as f64 - 0.5, 0.0f64..1.0)?;
    chart.configure_mesh().x_labels(k).x_desc("fold").y_desc("accuracy").draw()?;
    for (accs, color) in [(&cell.per_fold_val, BLUE), (&cell.per_fold_test, RED)] {
        let offset = if color == BLUE { -0.1 } else { 0.1 };
        chart.draw_series(
            accs.iter()
                .flat_map(|(f, v)| v.iter().map(move |a| (*f as f64 + offset, *a)))
                .map(|p| Circle::new(p, 2, color.filled())),
        )?;
    }
    let means: Vec<(f64, f64)> =
        cell.per_fold_val.iter().map(|(f, v)| (*f as f64, v.iter().sum::<f64>() / v.len() as f64)).collect();
    chart.draw_series(LineSeries::new(means, BLUE.mix(0.6)))?;
    Ok(())
}

/// Training loss and validation accuracy per epoch, one line per run.
pub fn training_curves_svg(path: &Path, title: &str, runs: &[(String, Vec<HistoryRow>)]) -> Result<()> {
    let area = svg_area(path, (960, 380))?;
    let halves = area.split_evenly((1, 2));
    let max_epoch = runs.iter().flat_map(|r| r.1.iter().map(|h| h.epoch)).max().unwrap_or(1).max(1);
    let max_loss = runs.iter().flat_map(|r| r.1.iter().map(|h| h.loss)).fold(0.0f64, f64::max).max(1e-3);
    type Pick = fn(&HistoryRow) -> f64;
    let panels: [(&str, f64, Pick); 2] =
        [("training loss", max_loss * 1.05, |h| h.loss), ("validation accuracy", 1.0, |h| h.val_acc)];
    for (half, (what, ymax, pick)) in halves.iter().zip(panels) {
        let mut chart = ChartBuilder::on(half)
            .caption(format!("{title}: {what}"), ("sans-serif", 15))
            .margin(8)
            .x_label_area_size(28)
            .y_label_area_size(40)
            .build_cartesian_2d(1f64..max_epoch as f64, 0f64..ymax)
            .map_err(|e| plot_err(path, e))?;
        chart.configure_mesh().x_desc("epoch").draw().map_err(|e| plot_err(path, e))?;
        for (i, (label, rows)) in runs.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            chart
                .draw_series(LineSeries::new(rows.iter().map(|h| (h.epoch as f64, pick(h))), color))
                .map_err(|e| plot_err(path, e))?
                .label(label.clone())
                .legend(move |(x, y)| PathElement::new([(x, y), (x + 14, y)], color));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .label_font(("sans-serif", 10))
            .draw()
            .map_err(|e| plot_err(path, e))?;
    }
    area.present().map_err(|e| plot_err(path, e))
}

/// ROC curves with the chance diagonal.
pub fn roc_svg(path: &Path, title: &str, curves: &[(String, Vec<(f64, f64)>)]) -> Result<()> {
    let area = svg_area(path, (520, 480))?;
    let mut chart = ChartBuilder::on(&area)
        .caption(title, ("sans-serif", 16))
        .margin(10)
        .x_label_area_size(32)
        .y_label_area_size(40)
        .build_cartesian_2d(0f64..1.0, 0f64..1.0)
        .map_err(|e| plot_err(path, e))?;
    chart
        .configure_mesh()
        .x_desc("false positive rate")
        .y_desc("true positive rate")
        .draw()
        .map_err(|e| plot_err(path, e))?;
    chart.draw_series(LineSeries::new([(0.0, 0.0), (1.0, 1.0)], BLACK.mix(0.3))).map_err(|e| plot_err(path, e))?;
    for (i, (label, pts)) in curves.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color))
            .map_err(|e| plot_err(path, e))?
            .label(label.clone())
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 14, y)], color));
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::LowerRight)
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(path, e))?;
    area.present().map_err(|e| plot_err(path, e))
}

/// Files written by [`write_report`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFiles {
    pub grid_markdown: PathBuf,
    pub grid_csv: PathBuf,
    pub summary_json: PathBuf,
    pub per_fold_svg: PathBuf,
    pub curves_svg: PathBuf,
    pub roc_svg: PathBuf,
}

#[derive(Deserialize)]
struct RunMetricsFile {
    test_roc: Vec<(f64, f64)>,
}

/// Builds the report for the study in `dir` from its `results_file` store
/// into `dir/report`. Curves and ROC plots use the best cell's first trial
/// of every fold.
pub fn write_report(dir: &Path, results_file: &str) -> Result<(GridSummary, ReportFiles)> {
    let store = ResultsStore::new(dir.join(results_file));
    let results = store.load()?;
    if results.is_empty() {
        return Err(Error::EmptyStore(store.path.clone()));
    }
    let summary = summarize(&results)?;
    let out = dir.join("report");
    let files = ReportFiles {
        grid_markdown: out.join("grid.md"),
        grid_csv: out.join("grid.csv"),
        summary_json: out.join("summary.json"),
        per_fold_svg: out.join("per_fold.svg"),
        curves_svg: out.join("training_curves.svg"),
        roc_svg: out.join("roc.svg"),
    };
    write_atomic(&files.grid_markdown, grid_markdown(&summary).as_bytes())?;
    write_atomic(&files.grid_csv, &grid_csv(&files.grid_csv, &summary)?)?;
    write_atomic(&files.summary_json, &serde_json::to_vec_pretty(&summary).expect("summary serializes"))?;
    per_fold_svg(&files.per_fold_svg, &summary)?;

    let best = summary.best_cell();
    let mut best_runs: Vec<&RunResult> = results
        .iter()
        .filter(|r| {
            r.is_ok() && r.key.strategy == best.strategy && r.key.depth == best.depth && r.key.dropout_p == best.dropout_p
        })
        .collect();
    best_runs.sort_by_key(|r| r.key);
    best_runs.dedup_by_key(|r| r.key.fold);
    let title = format!("{} depth {}", best.strategy.name(), best.depth);
    let mut histories = Vec::new();
    let mut rocs = Vec::new();
    for r in &best_runs {
        let run_dir = dir.join(&r.run_dir);
        let label = format!("fold {}", r.key.fold);
        histories.push((label.clone(), read_history(&run_dir.join("history.csv"))?));
        let mpath = run_dir.join("metrics.json");
        let m: RunMetricsFile = serde_json::from_str(&read_string(&mpath)?).map_err(|e| Error::parse(&mpath, e))?;
        let auc = r.test_metrics.as_ref().map_or(f64::NAN, |m| m.roc_auc);
        rocs.push((format!("{label} (AUC {auc:.3})"), m.test_roc));
    }
    training_curves_svg(&files.curves_svg, &title, &histories)?;
    roc_svg(&files.roc_svg, &format!("{title}: test ROC"), &rocs)?;
    Ok((summary, files))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_store_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(write_report(dir.path(), "results.jsonl"), Err(Error::EmptyStore(_))));
    }

    #[test]
    fn plots_render() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("roc.svg");
        roc_svg(&p, "t", &[("a".into(), vec![(0.0, 0.0), (0.2, 0.8), (1.0, 1.0)])]).unwrap();
        let svg = std::fs::read_to_string(&p).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("false positive rate"));
    }
}
