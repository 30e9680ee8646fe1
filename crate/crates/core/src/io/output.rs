//! Reconstruction outputs: complex arrays, 8-bit previews, CSV traces and
//! convergence plots.

use std::f64::consts::PI;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat, Rgb, RgbImage};
use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::array_file::{complex_stack, write_array, Dtype};
use super::{create_dir, write_atomic};
use crate::driver::{IterationRecord, ModeAddition, ReconResult};
use crate::error::{PtychoError, Result};

pub const TRACE_FILE: &str = "trace.csv";

/// Run summary written next to the arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub iterations: usize,
    pub modes: usize,
    pub final_ec: Option<f64>,
    pub final_nrmse: Option<f64>,
    pub mode_additions: Vec<ModeAddition>,
}

impl Summary {
    pub fn of(result: &ReconResult) -> Self {
        let last = result.records.last();
        Summary {
            iterations: result.records.len(),
            modes: result.probes.len(),
            final_ec: last.map(|r| r.ec),
            final_nrmse: last.and_then(|r| r.nrmse),
            mode_additions: result.mode_additions.clone(),
        }
    }
}

/// `|v| / max |v|` on `[0, 255]`.
pub fn magnitude_preview(a: &Array2<Complex64>) -> GrayImage {
    let peak = a.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let scale = if peak > 0.0 { 255.0 / peak } else { 0.0 };
    to_gray(a, |v| v.norm() * scale)
}

/// Phase on `(-pi, pi]` mapped linearly onto `[0, 255]`.
pub fn phase_preview(a: &Array2<Complex64>) -> GrayImage {
    to_gray(a, |v| (v.arg() + PI) / (2.0 * PI) * 255.0)
}

fn to_gray(a: &Array2<Complex64>, f: impl Fn(&Complex64) -> f64) -> GrayImage {
    let (rows, cols) = a.dim();
    GrayImage::from_fn(cols as u32, rows as u32, |c, r| {
        image::Luma([f(&a[(r as usize, c as usize)]).round().clamp(0.0, 255.0) as u8])
    })
}

fn write_png(path: &Path, img: impl Into<image::DynamicImage>) -> Result<()> {
    let mut bytes = Vec::new();
    img.into()
        .write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
        .map_err(|e| PtychoError::Format { path: path.to_path_buf(), reason: e.to_string() })?;
    write_atomic(path, &bytes)
}

/// One CSV row per iteration under the header `iteration,modes,ec,nrmse,seconds`.
pub fn write_trace(path: &Path, records: &[IterationRecord]) -> Result<()> {
    let fmt_err = |e: csv::Error| PtychoError::Format { path: path.to_path_buf(), reason: e.to_string() };
    let mut w = csv::Writer::from_writer(Vec::new());
    if records.is_empty() {
        w.write_record(["iteration", "modes", "ec", "nrmse", "seconds"]).map_err(fmt_err)?;
    }
    for r in records {
        w.serialize(r).map_err(fmt_err)?;
    }
    let bytes = w.into_inner().map_err(|e| PtychoError::Format { path: path.to_path_buf(), reason: e.to_string() })?;
    write_atomic(path, &bytes)
}

pub fn read_trace(path: &Path) -> Result<Vec<IterationRecord>> {
    let file = std::fs::File::open(path).map_err(|e| PtychoError::io(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| PtychoError::Format { path: path.to_path_buf(), reason: e.to_string() })
}

/// Write the image and probe modes (as exact `f64` complex containers),
/// their previews, the trace and a JSON summary. Returns the written paths.
pub fn save_result(result: &ReconResult, out_dir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(out_dir)?;
    let mut written = Vec::new();
    let image = result.image.as_array();
    let p = out_dir.join("image.bin");
    write_array(&p, &complex_stack(std::slice::from_ref(image), Dtype::C128)?)?;
    written.push(p);
    let p = out_dir.join("probes.bin");
    write_array(&p, &complex_stack(&result.probes, Dtype::C128)?)?;
    written.push(p);

    let mut previews: Vec<(String, &Array2<Complex64>)> = vec![("image".into(), image)];
    previews.extend(result.probes.iter().enumerate().map(|(k, d)| (format!("probe_{k}"), d)));
    for (name, a) in previews {
        let p = out_dir.join(format!("{name}_magnitude.png"));
        write_png(&p, magnitude_preview(a))?;
        written.push(p);
        let p = out_dir.join(format!("{name}_phase.png"));
        write_png(&p, phase_preview(a))?;
        written.push(p);
    }

    let p = out_dir.join(TRACE_FILE);
    write_trace(&p, &result.records)?;
    written.push(p);
    let p = out_dir.join("summary.json");
    let text = serde_json::to_string_pretty(&Summary::of(result))
        .map_err(|e| PtychoError::Format { path: p.clone(), reason: e.to_string() })?;
    write_atomic(&p, text.as_bytes())?;
    written.push(p);
    Ok(written)
}

const PLOT_W: u32 = 480;
const PLOT_H: u32 = 320;
const MARGIN: u32 = 24;

fn draw_line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), colour: Rgb<u8>) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, colour);
        }
    }
}

/// Line plot of `log10(values)` against iteration, axes drawn, no labels.
pub fn log_curve(values: &[f64], colour: Rgb<u8>) -> RgbImage {
    let mut img = RgbImage::from_pixel(PLOT_W, PLOT_H, Rgb([255, 255, 255]));
    let (left, bottom) = (MARGIN as f64, (PLOT_H - MARGIN) as f64);
    let (right, top) = ((PLOT_W - MARGIN) as f64, MARGIN as f64);
    let black = Rgb([0, 0, 0]);
    draw_line(&mut img, (left, top), (left, bottom), black);
    draw_line(&mut img, (left, bottom), (right, bottom), black);
    let logs: Vec<f64> = values.iter().filter(|v| **v > 0.0 && v.is_finite()).map(|v| v.log10()).collect();
    if logs.len() < 2 {
        return img;
    }
    let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = (logs.len() - 1) as f64;
    let point = |i: usize, v: f64| (left + (right - left) * i as f64 / n, bottom - (bottom - top) * (v - lo) / span);
    for i in 1..logs.len() {
        draw_line(&mut img, point(i - 1, logs[i - 1]), point(i, logs[i]), colour);
    }
    img
}

/// `ec.png` and, when a ground truth was tracked, `nrmse.png`.
pub fn emit_plots(result: &ReconResult, out_dir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(out_dir)?;
    let mut written = Vec::new();
    let p = out_dir.join("ec.png");
    write_png(&p, log_curve(&result.ec_trace(), Rgb([200, 30, 30])))?;
    written.push(p);
    let nrmse = result.nrmse_trace();
    if !nrmse.is_empty() {
        let p = out_dir.join("nrmse.png");
        write_png(&p, log_curve(&nrmse, Rgb([30, 30, 200])))?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::ComplexImage;
    use crate::io::array_file::{read_complex, read_complex_stack};

    fn result() -> ReconResult {
        let image = Array2::from_shape_fn((5, 7), |(r, c)| Complex64::from_polar(0.1 + r as f64 / 3.0, c as f64 - 3.1));
        ReconResult {
            image: ComplexImage::new(image).unwrap(),
            probes: vec![Array2::from_elem((3, 3), Complex64::new(0.3, 1.0 / 3.0)); 2],
            records: (1..=4)
                .map(|i| IterationRecord {
                    iteration: i,
                    modes: 1 + (i > 2) as usize,
                    ec: 0.1 / i as f64,
                    nrmse: (i != 3).then(|| 1.0 / (7.0 * i as f64)),
                    seconds: 0.01 * i as f64,
                })
                .collect(),
            mode_additions: vec![ModeAddition { iteration: 2, energy_before: 1.0, energy_after: 1.0 }],
        }
    }

    #[test]
    fn phase_mapping_endpoints() {
        let a = Array2::from_shape_vec(
            (1, 3),
            vec![Complex64::from_polar(1.0, PI), Complex64::new(1.0, 0.0), Complex64::from_polar(1.0, -PI + 1e-9)],
        )
        .unwrap();
        let p = phase_preview(&a);
        assert_eq!(p.get_pixel(0, 0)[0], 255);
        assert_eq!(p.get_pixel(1, 0)[0], 128);
        assert_eq!(p.get_pixel(2, 0)[0], 0);
        let m = magnitude_preview(&a.mapv(|v| v * 0.5));
        assert!(m.pixels().all(|px| px[0] == 255));
    }

    #[test]
    fn saved_result_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let res = result();
        let files = save_result(&res, dir.path()).unwrap();
        assert!(files.iter().all(|f| f.exists()));
        assert_eq!(&read_complex(&dir.path().join("image.bin")).unwrap(), res.image.as_array());
        assert_eq!(read_complex_stack(&dir.path().join("probes.bin")).unwrap(), res.probes);
        let text = std::fs::read_to_string(dir.path().join(TRACE_FILE)).unwrap();
        assert_eq!(text.lines().next(), Some("iteration,modes,ec,nrmse,seconds"));
        assert_eq!(text.lines().count(), 5);
        assert_eq!(read_trace(&dir.path().join(TRACE_FILE)).unwrap(), res.records);
        let png = image::open(dir.path().join("image_phase.png")).unwrap();
        assert_eq!((png.width(), png.height()), (7, 5));
        let plots = emit_plots(&res, dir.path()).unwrap();
        assert_eq!(plots.len(), 2);
    }

    #[test]
    fn empty_trace_keeps_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        write_trace(&p, &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().trim(), "iteration,modes,ec,nrmse,seconds");
        assert!(read_trace(&p).unwrap().is_empty());
    }
}
