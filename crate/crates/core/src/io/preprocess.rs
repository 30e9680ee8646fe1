//! Measured-frame preprocessing: dark subtraction, clamping, outlier
//! removal, centre crop, Tukey apodization and conversion to amplitudes.

use std::f64::consts::PI;

use ndarray::{s, Array2, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, FrameKind};
use crate::error::{PtychoError, Result};
use crate::grid::ScanGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Dark frames averaged for the background; `0` skips subtraction.
    #[serde(default)]
    pub dark_frame_count: usize,
    /// Frame indices (into the raw stack) to drop.
    #[serde(default)]
    pub outlier_indices: Vec<usize>,
    pub crop_size: usize,
    /// Tukey taper fraction in `[0, 1]`.
    #[serde(default = "default_tukey")]
    pub tukey_shape: f64,
}

fn default_tukey() -> f64 {
    0.5
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tukey_shape) {
            return Err(PtychoError::InvalidParam(format!("tukey_shape {} outside [0, 1]", self.tukey_shape)));
        }
        if self.crop_size < 2 {
            return Err(PtychoError::InvalidParam("crop_size must be at least 2".into()));
        }
        Ok(())
    }
}

/// Standard 1-D Tukey taper of `len` samples evaluated at the continuous
/// position `x` in `[0, 1]` (0 and 1 are the end samples).
pub fn tukey_1d(x: f64, alpha: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    if alpha <= 0.0 {
        return 1.0;
    }
    if x < alpha / 2.0 {
        0.5 * (1.0 + (2.0 * PI / alpha * (x - alpha / 2.0)).cos())
    } else if x <= 1.0 - alpha / 2.0 {
        1.0
    } else {
        0.5 * (1.0 + (2.0 * PI / alpha * (x - 1.0 + alpha / 2.0)).cos())
    }
}

/// Radially symmetric window: the 1-D Tukey taper evaluated at the distance
/// from the array centre, clamped at the half-length.
pub fn tukey_window_2d(size: usize, alpha: f64) -> Result<Array2<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(PtychoError::InvalidParam(format!("tukey alpha {alpha} outside [0, 1]")));
    }
    if size < 2 {
        return Err(PtychoError::InvalidParam("window size must be at least 2".into()));
    }
    let half = (size - 1) as f64 / 2.0;
    Ok(Array2::from_shape_fn((size, size), |(r, c)| {
        let radius = ((r as f64 - half).powi(2) + (c as f64 - half).powi(2)).sqrt().min(half);
        tukey_1d(0.5 + radius / (2.0 * half), alpha)
    }))
}

/// Centre crop; an odd excess drops its extra row/column at the trailing edge.
pub fn center_crop(frame: &Array2<f64>, size: usize) -> Result<Array2<f64>> {
    let (rows, cols) = frame.dim();
    if size > rows || size > cols {
        return Err(PtychoError::InvalidParam(format!("crop {size} exceeds frame {rows}x{cols}")));
    }
    let (r0, c0) = ((rows - size) / 2, (cols - size) / 2);
    Ok(frame.slice(s![r0..r0 + size, c0..c0 + size]).to_owned())
}

/// Mean of the first `count` dark frames.
pub fn mean_dark(darks: &[Array2<f64>], count: usize, dim: (usize, usize)) -> Result<Array2<f64>> {
    if count > darks.len() {
        return Err(PtychoError::InvalidParam(format!("{count} dark frames requested, {} available", darks.len())));
    }
    let mut mean = Array2::zeros(dim);
    for d in &darks[..count] {
        if d.dim() != dim {
            return Err(PtychoError::Shape(format!("dark frame {:?} differs from raw frame {dim:?}", d.dim())));
        }
        mean += d;
    }
    if count > 0 {
        mean /= count as f64;
    }
    Ok(mean)
}

/// The full pipeline, in this order: subtract the mean dark, clamp
/// negatives, drop outliers, crop, apodize, square root.
///
/// Returns the amplitude frames and the raw indices that were kept.
pub fn preprocess_measured(
    raw: &[Array2<f64>],
    darks: &[Array2<f64>],
    cfg: &PreprocessConfig,
) -> Result<(Vec<Array2<f64>>, Vec<usize>)> {
    cfg.validate()?;
    let dim = raw.first().map(|f| f.dim()).ok_or_else(|| PtychoError::InvalidParam("no raw frames".into()))?;
    if let Some(bad) = raw.iter().find(|f| f.dim() != dim) {
        return Err(PtychoError::Shape(format!("raw frame {:?} differs from {dim:?}", bad.dim())));
    }
    if let Some(&i) = cfg.outlier_indices.iter().find(|&&i| i >= raw.len()) {
        return Err(PtychoError::IndexOutOfRange { index: i, len: raw.len() });
    }
    if cfg.crop_size > dim.0 || cfg.crop_size > dim.1 {
        return Err(PtychoError::InvalidParam(format!("crop {} exceeds frame {}x{}", cfg.crop_size, dim.0, dim.1)));
    }
    let dark = mean_dark(darks, cfg.dark_frame_count, dim)?;
    let window = tukey_window_2d(cfg.crop_size, cfg.tukey_shape)?;
    let keep: Vec<usize> = (0..raw.len()).filter(|i| !cfg.outlier_indices.contains(i)).collect();
    let frames = keep
        .par_iter()
        .map(|&i| {
            let clean = Zip::from(&raw[i]).and(&dark).map_collect(|&v, &d| (v - d).max(0.0));
            let cropped = center_crop(&clean, cfg.crop_size)?;
            Ok(Zip::from(&cropped).and(&window).map_collect(|&v, &w| (v * w).sqrt()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((frames, keep))
}

/// Preprocess a raw-intensity dataset into an amplitude dataset, dropping
/// the scan positions of removed frames.
pub fn preprocess_dataset(raw: &Dataset, cfg: &PreprocessConfig) -> Result<Dataset> {
    if raw.manifest.kind != FrameKind::Intensity {
        return Err(PtychoError::Config("dataset is already in the amplitude domain".into()));
    }
    if cfg.crop_size != raw.manifest.patch_size {
        return Err(PtychoError::Config(format!(
            "crop_size {} must equal the manifest patch_size {}",
            cfg.crop_size, raw.manifest.patch_size
        )));
    }
    let darks = raw.darks.as_deref().unwrap_or(&[]);
    let (frames, keep) = preprocess_measured(&raw.frames, darks, cfg)?;
    let anchors: Vec<(i64, i64)> = keep
        .iter()
        .map(|&i| {
            let (r, c) = raw.grid.anchors()[i];
            (r as i64, c as i64)
        })
        .collect();
    let grid = ScanGrid::new(&anchors, cfg.crop_size, raw.grid.image_dims())?;
    let mut manifest = raw.manifest.clone();
    manifest.kind = FrameKind::Amplitude;
    manifest.anchors = Some(anchors.iter().map(|&(r, c)| [r, c]).collect());
    manifest.positions = None;
    manifest.dark_frames = None;
    Ok(Dataset {
        manifest,
        frames,
        grid,
        darks: None,
        truth_image: raw.truth_image.clone(),
        truth_probes: raw.truth_probes.clone(),
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Frames whose total counts sit more than `5` median absolute deviations
/// from the median: a suggestion list for review, not applied automatically.
pub fn suggest_outliers(raw: &[Array2<f64>]) -> Vec<usize> {
    if raw.is_empty() {
        return Vec::new();
    }
    let totals: Vec<f64> = raw.iter().map(|f| f.sum()).collect();
    let med = median(&mut totals.clone());
    let mad = median(&mut totals.iter().map(|t| (t - med).abs()).collect::<Vec<_>>());
    totals.iter().enumerate().filter(|(_, t)| (*t - med).abs() > 5.0 * mad).map(|(i, _)| i).collect()
}
