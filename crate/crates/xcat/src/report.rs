//! CSV outputs: training log, evaluation report, search report and the
//! ablation table.

use std::io::Write;
use std::path::Path;

use anyhow::Result;
use serde::Serialize;
use xcat_core::eval::{EvalReport, Psnr};
use xcat_core::model::{mac_count, param_count_for, presets};
use xcat_core::train::EpochStats;

#[derive(Serialize)]
struct TrainLogRow {
    epoch: usize,
    lr: f64,
    mean_loss: f64,
    wall_seconds: f64,
}

/// Training log that flushes after every epoch so partial runs stay readable.
pub struct TrainLog {
    writer: csv::Writer<std::fs::File>,
}

impl TrainLog {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            writer: csv::Writer::from_path(path)?,
        })
    }

    pub fn append(&mut self, s: &EpochStats, wall_seconds: f64) -> Result<()> {
        self.writer.serialize(TrainLogRow {
            epoch: s.epoch,
            lr: s.lr,
            mean_loss: s.mean_loss,
            wall_seconds,
        })?;
        self.writer.flush()?;
        Ok(())
    }
}

fn fmt_psnr(p: Option<Psnr>) -> String {
    match p {
        Some(Psnr::Db(d)) => format!("{d:.4}"),
        Some(Psnr::Infinite) => "inf".into(),
        None => String::new(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|d| format!("{d:.4}")).unwrap_or_default()
}

/// Per-image rows followed by a `#` summary line with the means and, when a
/// runtime is given, the challenge score.
pub fn write_eval_report(
    out: &mut impl Write,
    report: &EvalReport,
    score: Option<f64>,
) -> Result<()> {
    {
        let mut w = csv::Writer::from_writer(&mut *out);
        w.write_record(["image_id", "psnr_fp32", "psnr_uint8", "delta"])?;
        for r in &report.rows {
            w.write_record([
                r.id.clone(),
                fmt_psnr(r.psnr_fp32),
                fmt_psnr(r.psnr_uint8),
                fmt_opt(r.delta()),
            ])?;
        }
        w.flush()?;
    }
    write!(
        out,
        "# mean_fp32={} mean_uint8={} mean_delta={} images={} skipped={}",
        fmt_psnr(report.mean_fp32()),
        fmt_psnr(report.mean_uint8()),
        fmt_opt(report.mean_delta()),
        report.rows.len(),
        report.skipped.len()
    )?;
    if let Some(s) = score {
        write!(out, " challenge_score={s:.2}")?;
    }
    writeln!(out)?;
    Ok(())
}

pub fn write_search_report(
    out: impl Write,
    ids: &[String],
    scores: &[f64],
    best: usize,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["candidate_id", "psnr", "selected"])?;
    for (i, (id, s)) in ids.iter().zip(scores).enumerate() {
        w.write_record([id.clone(), format!("{s:.4}"), (i == best).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub name: String,
    pub trainable: usize,
    pub fixed: usize,
    pub macs_per_pixel: u64,
    pub macs: u64,
}

pub fn ablation_rows(names: &[String], h: usize, w: usize) -> Result<Vec<AblationRow>> {
    names
        .iter()
        .map(|n| {
            let cfg = presets::preset(n).ok_or_else(|| unknown_config(n))?;
            let p = param_count_for(&cfg);
            Ok(AblationRow {
                name: n.clone(),
                trainable: p.trainable,
                fixed: p.fixed,
                macs_per_pixel: mac_count(&cfg, 1, 1),
                macs: mac_count(&cfg, h, w),
            })
        })
        .collect()
}

pub fn unknown_config(name: &str) -> anyhow::Error {
    anyhow::anyhow!(
        "unknown config `{name}`; valid names: {}",
        presets::names().join(", ")
    )
}

pub fn write_ablation(out: impl Write, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use xcat_core::eval::EvalRow;

    #[test]
    fn eval_report_layout() {
        let report = EvalReport {
            rows: vec![
                EvalRow {
                    id: "a".into(),
                    psnr_fp32: Some(Psnr::Db(30.0)),
                    psnr_uint8: Some(Psnr::Db(29.5)),
                },
                EvalRow {
                    id: "b".into(),
                    psnr_fp32: Some(Psnr::Db(32.0)),
                    psnr_uint8: Some(Psnr::Infinite),
                },
            ],
            skipped: vec![("c".into(), "size".into())],
        };
        let mut buf = Vec::new();
        write_eval_report(&mut buf, &report, Some(240.0)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "image_id,psnr_fp32,psnr_uint8,delta");
        assert_eq!(lines[1], "a,30.0000,29.5000,0.5000");
        assert_eq!(lines[2], "b,32.0000,inf,");
        assert!(lines[3].starts_with("# mean_fp32=31.0000 mean_uint8=inf"));
        assert!(lines[3].ends_with("skipped=1 challenge_score=240.00"));
    }

    #[test]
    fn ablation_table() {
        let rows = ablation_rows(&["xcat-baseline".into(), "C".into(), "D".into()], 1, 1).unwrap();
        assert_eq!(rows[0].trainable, 16_519);
        assert_eq!(rows[0].fixed, 81);
        assert_eq!(rows[0].macs_per_pixel, 16_461);
        assert!(
            rows[1].macs_per_pixel > rows[0].macs_per_pixel
                && rows[2].macs_per_pixel > rows[0].macs_per_pixel
        );
        assert!(ablation_rows(&["nope".into()], 1, 1)
            .unwrap_err()
            .to_string()
            .contains("xcat-baseline"));
        let mut buf = Vec::new();
        write_ablation(&mut buf, &rows).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("name,trainable,fixed,macs_per_pixel,macs\n"));
    }
}
