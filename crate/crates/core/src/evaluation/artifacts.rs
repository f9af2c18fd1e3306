use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::report::{EvaluatedImage, MetricReport};
use crate::datasets::Image;
use crate::error::{Error, Result};
use crate::training::LossRecord;

pub const LOSS_CURVES_FILE: &str = "loss_curves.png";
pub const GRID_FILE: &str = "grid.png";
pub const SUMMARY_FILE: &str = "summary.txt";

const PANEL_W: u32 = 220;
const PANEL_H: u32 = 120;
const PANEL_COLS: u32 = 4;
const MARGIN: u32 = 8;
pub const GRID_CELL: usize = 96;

const PALETTE: [[u8; 3]; 11] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
    [0, 0, 0],
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ArtifactPaths {
    pub loss_curves: Option<PathBuf>,
    pub grid: Option<PathBuf>,
    pub summary: PathBuf,
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, c);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// One panel per loss series, each scaled to its own min/max, laid out
/// row-major in [`LossRecord::series`] order. The panel count is returned.
pub fn plot_loss_curves(trace: &[LossRecord], path: &Path) -> Result<usize> {
    if trace.is_empty() {
        return Err(Error::InvalidParam("cannot plot an empty trace".into()));
    }
    let names = trace[0].series().map(|(n, _)| n);
    let rows = (names.len() as u32).div_ceil(PANEL_COLS);
    let mut img = RgbImage::from_pixel(
        PANEL_COLS * (PANEL_W + MARGIN) + MARGIN,
        rows * (PANEL_H + MARGIN) + MARGIN,
        Rgb([255, 255, 255]),
    );
    let frame = Rgb([200, 200, 200]);
    for (k, _) in names.iter().enumerate() {
        let (col, row) = (k as u32 % PANEL_COLS, k as u32 / PANEL_COLS);
        let (ox, oy) = ((MARGIN + col * (PANEL_W + MARGIN)) as i64, (MARGIN + row * (PANEL_H + MARGIN)) as i64);
        let (w, h) = (PANEL_W as i64 - 1, PANEL_H as i64 - 1);
        for (a, b) in [((0, 0), (w, 0)), ((w, 0), (w, h)), ((w, h), (0, h)), ((0, h), (0, 0))] {
            line(&mut img, (ox + a.0, oy + a.1), (ox + b.0, oy + b.1), frame);
        }
        let ys: Vec<f64> = trace.iter().map(|r| r.series()[k].1).collect();
        let lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let n = ys.len().max(2) - 1;
        let pt = |i: usize, v: f64| {
            let x = ox + 2 + (i as f64 / n as f64 * (w - 4) as f64).round() as i64;
            let y = oy + h - 2 - ((v - lo) / span * (h - 4) as f64).round() as i64;
            (x, y)
        };
        let c = Rgb(PALETTE[k % PALETTE.len()]);
        for i in 0..ys.len() {
            let a = pt(i, ys[i]);
            let b = if i + 1 < ys.len() { pt(i + 1, ys[i + 1]) } else { a };
            line(&mut img, a, b, c);
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(names.len())
}

/// Rows of input | content | restored | reference, each cell resized to
/// `GRID_CELL` square.
pub fn image_grid(rows: &[EvaluatedImage]) -> Result<Image> {
    if rows.is_empty() {
        return Err(Error::InvalidParam("image grid needs at least one row".into()));
    }
    let c = GRID_CELL;
    let mut data = vec![0.0f32; 4 * c * rows.len() * c * 3];
    let stride = 4 * c * 3;
    for (r, row) in rows.iter().enumerate() {
        let cells = [&row.input, &row.output.content, &row.output.restored, &row.reference];
        for (k, cell) in cells.iter().enumerate() {
            let cell = if cell.width() == c && cell.height() == c {
                (*cell).clone()
            } else {
                cell.resize_bicubic(c, c)
            };
            for y in 0..c {
                let dst = (r * c + y) * stride + k * c * 3;
                data[dst..dst + c * 3].copy_from_slice(&cell.data()[y * c * 3..(y + 1) * c * 3]);
            }
        }
    }
    Image::new(4 * c, rows.len() * c, data)
}

fn short_db(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else {
        "inf".into()
    }
}

pub fn summary_text(trace: &[LossRecord], report: Option<&MetricReport>) -> String {
    let mut s = String::new();
    match (trace.first(), trace.last()) {
        (Some(first), Some(last)) => {
            let _ = writeln!(s, "loss trace: {} records, steps {}..{}", trace.len(), first.step, last.step);
            let _ = writeln!(s, "curve panels (row-major): {}", first.series().map(|(n, _)| n).join(", "));
            for ((name, a), (_, b)) in first.series().iter().zip(last.series()) {
                let _ = writeln!(s, "  {name:<6} first {a:.6} last {b:.6}");
            }
        }
        _ => s.push_str("loss trace: none recorded, no curve written\n"),
    }
    match report {
        Some(r) => {
            let m = &r.summary;
            let _ = writeln!(s, "evaluated images: {} (skipped {})", m.count, m.skipped);
            let _ = writeln!(
                s,
                "restored PSNR {} ± {:.4} dB (infinite: {}), SSIM {:.4} ± {:.4}",
                short_db(m.psnr_db.mean),
                m.psnr_db.std,
                m.psnr_db.infinite,
                m.ssim.mean,
                m.ssim.std
            );
            let _ = writeln!(
                s,
                "input    PSNR {} ± {:.4} dB (infinite: {}), SSIM {:.4} ± {:.4}",
                short_db(m.input_psnr_db.mean),
                m.input_psnr_db.std,
                m.input_psnr_db.infinite,
                m.input_ssim.mean,
                m.input_ssim.std
            );
            let _ = writeln!(s, "L1 to reference: content {:.5}, input {:.5}", m.content_l1.mean, m.input_l1.mean);
        }
        None => s.push_str("evaluation: none\n"),
    }
    s
}

/// Writes the curve plot (when the trace is non-empty), the image grid (when
/// rows are given) and the text summary into `out_dir`.
pub fn emit_artifacts(
    trace: &[LossRecord],
    report: Option<&MetricReport>,
    grid_rows: &[EvaluatedImage],
    out_dir: &Path,
) -> Result<ArtifactPaths> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut paths = ArtifactPaths {
        summary: out_dir.join(SUMMARY_FILE),
        ..Default::default()
    };
    if !trace.is_empty() {
        let p = out_dir.join(LOSS_CURVES_FILE);
        plot_loss_curves(trace, &p)?;
        paths.loss_curves = Some(p);
    }
    if !grid_rows.is_empty() {
        let p = out_dir.join(GRID_FILE);
        image_grid(grid_rows)?.save_png(&p)?;
        paths.grid = Some(p);
    }
    std::fs::write(&paths.summary, summary_text(trace, report)).map_err(|e| Error::io(&paths.summary, e))?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::inference::RestoredImage;

    fn rec(step: u64) -> LossRecord {
        let v = 1.0 / (step as f64 + 1.0);
        LossRecord {
            step,
            epoch: 0,
            l_d1: v,
            l_d2: v * 2.0,
            l_d3: v,
            l_d4: v,
            l_r1: v,
            l_r2: v,
            l_r3: v,
            l_r4: v,
            d_adv: 1.0 - v,
            d_c: v,
            d_u: v,
            hdn_total: v,
            restoration_total: v,
            generator_total: v,
            discriminator_total: v,
        }
    }

    #[test]
    fn empty_trace_writes_only_summary() {
        let dir = tempfile::tempdir().unwrap();
        let p = emit_artifacts(&[], None, &[], dir.path()).unwrap();
        assert!(p.loss_curves.is_none());
        assert!(!dir.path().join(LOSS_CURVES_FILE).exists());
        assert!(std::fs::read_to_string(&p.summary).unwrap().contains("none recorded"));
    }

    #[test]
    fn curve_has_eleven_panels() {
        let dir = tempfile::tempdir().unwrap();
        let trace: Vec<_> = (0..200).map(rec).collect();
        let p = dir.path().join("c.png");
        assert_eq!(plot_loss_curves(&trace, &p).unwrap(), 11);
        let img = image::open(&p).unwrap();
        assert_eq!(img.width(), PANEL_COLS * (PANEL_W + MARGIN) + MARGIN);
    }

    #[test]
    fn grid_has_one_row_per_image() {
        let rows: Vec<_> = (0..4)
            .map(|i| EvaluatedImage {
                id: format!("x{i}"),
                input: Image::filled(40, 30, [0.1; 3]),
                output: RestoredImage {
                    content: Image::filled(40, 30, [0.3; 3]),
                    restored: Image::filled(40, 30, [0.5; 3]),
                },
                reference: Image::filled(96, 96, [0.9; 3]),
            })
            .collect();
        let g = image_grid(&rows).unwrap();
        assert_eq!((g.width(), g.height()), (4 * GRID_CELL, 4 * GRID_CELL));
        assert!((g.pixel(3 * GRID_CELL + 5, 5)[0] - 0.9).abs() < 1e-6);
        assert!((g.pixel(2 * GRID_CELL + 5, 3 * GRID_CELL + 5)[1] - 0.5).abs() < 1e-3);
    }
}
