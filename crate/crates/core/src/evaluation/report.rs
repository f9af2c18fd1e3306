use std::path::Path;

use serde::{Deserialize, Serialize};

use super::inference::{restore_image, RestoredImage};
use super::metrics::{l1, psnr, ssim};
use crate::datasets::{DatasetManifest, Image};
use crate::error::{Error, Result};
use crate::training::TrainState;

/// Metrics for one test image. `psnr_db` and `input_psnr_db` may be
/// infinite when the compared images are identical.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetrics {
    pub id: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub input_psnr_db: f64,
    pub input_ssim: f64,
    pub content_l1: f64,
    pub input_l1: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    /// Entries excluded from mean/std because they were infinite.
    pub infinite: usize,
}

impl Stat {
    /// Population mean and std over the finite values.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Stat {
        let (finite, infinite): (Vec<f64>, Vec<f64>) = values.into_iter().partition(|v| v.is_finite());
        if finite.is_empty() {
            return Stat {
                mean: f64::NAN,
                std: f64::NAN,
                infinite: infinite.len(),
            };
        }
        let n = finite.len() as f64;
        let mean = finite.iter().sum::<f64>() / n;
        let var = finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Stat {
            mean,
            std: var.sqrt(),
            infinite: infinite.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub count: usize,
    pub skipped: usize,
    pub psnr_db: Stat,
    pub ssim: Stat,
    pub input_psnr_db: Stat,
    pub input_ssim: Stat,
    pub content_l1: Stat,
    pub input_l1: Stat,
}

/// Per-image rows ordered by id, plus aggregates over them.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<ImageMetrics>,
    pub skipped: Vec<String>,
    pub summary: ReportSummary,
}

impl MetricReport {
    pub fn new(mut rows: Vec<ImageMetrics>, mut skipped: Vec<String>) -> Self {
        rows.sort_by(|a, b| a.id.cmp(&b.id));
        skipped.sort();
        let col = |f: fn(&ImageMetrics) -> f64| Stat::of(rows.iter().map(f));
        let summary = ReportSummary {
            count: rows.len(),
            skipped: skipped.len(),
            psnr_db: col(|r| r.psnr_db),
            ssim: col(|r| r.ssim),
            input_psnr_db: col(|r| r.input_psnr_db),
            input_ssim: col(|r| r.input_ssim),
            content_l1: col(|r| r.content_l1),
            input_l1: col(|r| r.input_l1),
        };
        Self { rows, skipped, summary }
    }

    pub const CSV_HEADER: [&'static str; 7] =
        ["id", "psnr_db", "ssim", "input_psnr_db", "input_ssim", "content_l1", "input_l1"];

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let err = |e: csv::Error| Error::Config(format!("{}: {e}", path.display()));
        w.write_record(Self::CSV_HEADER).map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.id.clone(),
                fmt_db(r.psnr_db),
                r.ssim.to_string(),
                fmt_db(r.input_psnr_db),
                r.input_ssim.to_string(),
                r.content_l1.to_string(),
                r.input_l1.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_summary_json(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Out<'a> {
            #[serde(flatten)]
            summary: &'a ReportSummary,
            skipped_ids: &'a [String],
        }
        let text = serde_json::to_string_pretty(&Out {
            summary: &self.summary,
            skipped_ids: &self.skipped,
        })
        .map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// PSNR text form; identical images are written as `inf`.
pub fn fmt_db(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        v.to_string()
    }
}

pub fn parse_db(s: &str) -> Option<f64> {
    if s == "inf" {
        Some(f64::INFINITY)
    } else {
        s.parse().ok()
    }
}

pub struct EvaluatedImage {
    pub id: String,
    pub input: Image,
    pub output: RestoredImage,
    pub reference: Image,
}

/// Runs the restoration pipeline on one input and scores it against its
/// reference.
pub fn evaluate_pair(state: &TrainState, id: &str, input: &Image, reference: &Image) -> Result<(ImageMetrics, RestoredImage)> {
    let out = restore_image(state, input)?;
    let input = input.clamped();
    let m = ImageMetrics {
        id: id.to_string(),
        psnr_db: psnr(&out.restored, reference)?,
        ssim: ssim(&out.restored, reference)?,
        input_psnr_db: psnr(&input, reference)?,
        input_ssim: ssim(&input, reference)?,
        content_l1: l1(&out.content, reference)?,
        input_l1: l1(&input, reference)?,
    };
    Ok((m, out))
}

/// Evaluates every record of a paired manifest. Records whose reference is
/// missing or unreadable are skipped and counted. The first `keep` evaluated
/// images (by id) are returned alongside the report.
pub fn evaluate_manifest(
    state: &TrainState,
    manifest: &DatasetManifest,
    keep: usize,
) -> Result<(MetricReport, Vec<EvaluatedImage>)> {
    if manifest.is_empty() {
        return Err(Error::Manifest("manifest is empty".into()));
    }
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut kept = Vec::new();
    for r in manifest.records() {
        let reference = match Image::load(&r.clean_path) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("skipping {}: {e}", r.id);
                skipped.push(r.id.clone());
                continue;
            }
        };
        let input = Image::load(&r.underwater_path)?;
        let (m, out) = evaluate_pair(state, &r.id, &input, &reference)?;
        rows.push(m);
        if kept.len() < keep {
            kept.push(EvaluatedImage {
                id: r.id.clone(),
                input,
                output: out,
                reference,
            });
        }
    }
    Ok((MetricReport::new(rows, skipped), kept))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, p: f64) -> ImageMetrics {
        ImageMetrics {
            id: id.into(),
            psnr_db: p,
            ssim: p / 100.0,
            input_psnr_db: 10.0,
            input_ssim: 0.5,
            content_l1: 0.1,
            input_l1: 0.2,
        }
    }

    #[test]
    fn aggregates_exclude_infinite_and_match_rows() {
        let r = MetricReport::new(vec![row("b", 20.0), row("a", f64::INFINITY), row("c", 30.0)], vec![]);
        assert_eq!(r.rows[0].id, "a");
        assert_eq!(r.summary.psnr_db.mean, 25.0);
        assert_eq!(r.summary.psnr_db.std, 5.0);
        assert_eq!(r.summary.psnr_db.infinite, 1);
        assert_eq!(r.summary.count, 3);
    }

    #[test]
    fn order_independent() {
        let rows: Vec<_> = (0..9).map(|i| row(&format!("r{i}"), 10.0 + (i as f64).sqrt())).collect();
        let mut rev = rows.clone();
        rev.reverse();
        assert_eq!(MetricReport::new(rows, vec![]), MetricReport::new(rev, vec![]));
    }

    #[test]
    fn csv_writes_inf_literal() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        MetricReport::new(vec![row("a", f64::INFINITY), row("b", 21.5)], vec!["z".into()]).write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("a,inf,"));
        assert_eq!(parse_db("inf"), Some(f64::INFINITY));
        assert_eq!(parse_db(&fmt_db(21.5)), Some(21.5));
    }
}
