//! JSON and CSV artifacts: dataset splits, predictions, loss curves, metric
//! reports and per-class plot data.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use htcl_core::data::Split;
use htcl_core::losses::LossBundle;
use htcl_core::metrics::{BiasReport, ImagePrediction, MetricsReport};
use htcl_core::train::{EpochLog, StepLoss};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{HtclError, Result};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HtclError + '_ {
    move |source| HtclError::Io { path: path.to_path_buf(), source }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|source| HtclError::Json { path: path.to_path_buf(), source })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| HtclError::Json { path: path.to_path_buf(), source })?;
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// Reads a split and checks every scene against its metadata.
pub fn load_split(path: &Path) -> Result<Split> {
    let split: Split = read_json(path)?;
    split.validate()?;
    Ok(split)
}

pub fn save_split(path: &Path, split: &Split) -> Result<()> {
    write_json(path, split)
}

pub fn load_predictions(path: &Path) -> Result<Vec<ImagePrediction>> {
    read_json(path)
}

pub fn save_predictions(path: &Path, preds: &[ImagePrediction]) -> Result<()> {
    write_json(path, &preds)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    csv::Writer::from_path(path).map_err(|source| HtclError::Csv { path: path.to_path_buf(), source })
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let csv_err = |source| HtclError::Csv { path: PathBuf::from(path), source };
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| HtclError::Io { path: path.to_path_buf(), source })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const LOSS_HEADER: [&str; 7] = ["step", "l_con", "l_hc", "l_rw", "l_hpc", "l_obj", "l_total"];

fn loss_row(step: u64, l: &LossBundle) -> Vec<String> {
    let mut row = vec![step.to_string()];
    row.extend([l.l_con, l.l_hc, l.l_rw, l.l_hpc, l.l_obj, l.l_total].map(|v| v.to_string()));
    row
}

pub fn write_loss_curve(path: &Path, curve: &[StepLoss]) -> Result<()> {
    write_rows(path, &LOSS_HEADER, curve.iter().map(|s| loss_row(s.step, &s.loss)))
}

pub fn write_epochs(path: &Path, epochs: &[EpochLog]) -> Result<()> {
    let rows = epochs.iter().map(|e| {
        vec![e.epoch.to_string(), e.mean_loss.to_string(), e.val_recall.to_string(), e.val_mean_recall.to_string()]
    });
    write_rows(path, &["epoch", "mean_loss", "val_recall", "val_mean_recall"], rows)
}

/// `(metric, K, value)` rows for R, mR, F and M at every K.
pub fn report_rows(report: &MetricsReport) -> Vec<(String, usize, f64)> {
    let mut rows = Vec::new();
    for m in &report.by_k {
        for (name, v) in [("R", m.recall), ("mR", m.mean_recall), ("F", m.f), ("M", m.m)] {
            rows.push((name.to_string(), m.k, v));
        }
    }
    rows
}

pub fn write_report(path: &Path, report: &MetricsReport) -> Result<()> {
    let rows = report_rows(report).into_iter().map(|(m, k, v)| vec![m, k.to_string(), v.to_string()]);
    write_rows(path, &["metric", "K", "value"], rows)
}

/// Per-class recall of one report at its first K, in class order.
pub fn write_class_recall(path: &Path, report: &MetricsReport) -> Result<()> {
    let Some(m) = report.by_k.first() else {
        return write_rows(path, &["class_id", "K", "recall", "hits", "total"], Vec::new());
    };
    let rows = (0..report.num_classes).map(|c| {
        vec![c.to_string(), m.k.to_string(), opt(m.per_class_recall[c]), m.class_hits[c].to_string(), m.class_totals[c].to_string()]
    });
    write_rows(path, &["class_id", "K", "recall", "hits", "total"], rows)
}

pub const PLOT_HEADER: [&str; 6] = ["class_id", "frequency_rank", "recall_baseline", "recall_ft", "recall_htcl", "gate"];

pub fn write_plot_data(path: &Path, report: &BiasReport) -> Result<()> {
    let rows = report.classes.iter().map(|r| {
        vec![
            r.class_id.to_string(),
            r.frequency_rank.to_string(),
            opt(r.recall_baseline),
            opt(r.recall_ft),
            opt(r.recall_htcl),
            r.gate.to_string(),
        ]
    });
    write_rows(path, &PLOT_HEADER, rows)
}

pub fn write_deltas(path: &Path, report: &BiasReport) -> Result<()> {
    let rows = report.deltas.iter().map(|d| {
        vec![
            d.name.clone(),
            d.k.to_string(),
            d.recall.to_string(),
            d.mean_recall.to_string(),
            d.f.to_string(),
            d.delta_recall.to_string(),
            d.delta_mean_recall.to_string(),
        ]
    });
    write_rows(path, &["model", "K", "R", "mR", "F", "delta_R", "delta_mR"], rows)
}

/// One row per variant, metric and K.
pub fn write_ablation(path: &Path, rows: &[(String, MetricsReport)]) -> Result<()> {
    let out = rows.iter().flat_map(|(name, report)| {
        report_rows(report).into_iter().map(move |(m, k, v)| vec![name.clone(), m, k.to_string(), v.to_string()])
    });
    write_rows(path, &["variant", "metric", "K", "value"], out)
}
