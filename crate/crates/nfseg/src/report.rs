//! CSV logs and metric tables.

use std::fmt::Write as _;
use std::path::Path;

use nfseg_core::train::IterationLog;
use nfseg_core::EvalReport;
use serde::Serialize;

use crate::error::{Error, Result};

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::format(path, format!("csv: {e}"))
}

pub fn write_iteration_log(path: &Path, rows: &[IterationLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Appends rows, writing the header only when the file is new or empty.
pub fn append_iteration_log(path: &Path, rows: &[IterationLog]) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct MetricRow<'a> {
    view: &'a str,
    psnr: f64,
    ssim: f64,
    nv_ari: f64,
    iou_bg: f64,
    iou_fg: f64,
    miou: f64,
    pooled_ari: Option<f64>,
}

/// One row per test view, then a `mean` row that also carries the pooled ARI.
pub fn metrics_csv(report: &EvalReport) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for v in &report.views {
        w.serialize(MetricRow {
            view: &v.view,
            psnr: v.psnr,
            ssim: v.ssim,
            nv_ari: v.nv_ari,
            iou_bg: v.iou_bg,
            iou_fg: v.iou_fg,
            miou: v.miou,
            pooled_ari: None,
        })
        .expect("in-memory csv");
    }
    w.serialize(MetricRow {
        view: "mean",
        psnr: report.psnr,
        ssim: report.ssim,
        nv_ari: report.mean.nv_ari,
        iou_bg: report.mean.iou_bg,
        iou_fg: report.mean.iou_fg,
        miou: report.mean.miou,
        pooled_ari: Some(report.pooled_ari),
    })
    .expect("in-memory csv");
    w.into_inner().expect("in-memory csv")
}

pub fn metrics_table(report: &EvalReport) -> String {
    let mut s = String::new();
    let name_w = report.views.iter().map(|v| v.view.len()).max().unwrap_or(4).max(4);
    writeln!(
        s,
        "{:<name_w$}  {:>7}  {:>6}  {:>6}  {:>7}  {:>7}  {:>6}",
        "view", "PSNR", "SSIM", "NV-ARI", "IoU(BG)", "IoU(FG)", "mIoU"
    )
    .unwrap();
    let mut row = |name: &str, p: f64, ss: f64, a: f64, bg: f64, fg: f64, m: f64| {
        writeln!(s, "{name:<name_w$}  {p:>7.2}  {ss:>6.4}  {a:>6.4}  {bg:>7.4}  {fg:>7.4}  {m:>6.4}").unwrap();
    };
    for v in &report.views {
        row(&v.view, v.psnr, v.ssim, v.nv_ari, v.iou_bg, v.iou_fg, v.miou);
    }
    let m = &report.mean;
    row("mean", report.psnr, report.ssim, m.nv_ari, m.iou_bg, m.iou_fg, m.miou);
    writeln!(s, "pooled ARI {:.4} ({} clusters)", report.pooled_ari, report.n_clusters).unwrap();
    s
}
