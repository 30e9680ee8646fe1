//! Dataset manifests: a JSON file naming binary containers for the frames,
//! optional dark frames and optional ground truth.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::array_file::{complex_stack, read_complex_stack, read_real_stack, real_stack, write_array, Dtype};
use super::{read_text, write_atomic};
use crate::array::ComplexImage;
use crate::error::{PtychoError, Result};
use crate::fft::ifftshift;
use crate::forward::MeasurementSet;
use crate::fresnel::FresnelParams;
use crate::grid::ScanGrid;

pub const VERSION: &str = "ptyd-1";

/// What the stored frames contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    /// Square-rooted counts, ready for reconstruction.
    #[default]
    Amplitude,
    /// Raw detector counts, before preprocessing.
    Intensity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: String,
    pub image_dims: [usize; 2],
    pub patch_size: usize,
    /// Top-left patch corners in image pixels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchors: Option<Vec<[i64; 2]>>,
    /// Physical scan positions (row, col) in metres; used when `anchors` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<[f64; 2]>>,
    /// Object-plane pixel size in metres.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_pitch: Option<f64>,
    pub measurements: String,
    #[serde(default)]
    pub kind: FrameKind,
    /// Zero frequency stored at the frame centre rather than at index (0, 0).
    #[serde(default)]
    pub dc_centered: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dark_frames: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_probes: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelength: Option<f64>,
    /// Propagation distance used to initialize the probe.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<f64>,
}

impl DatasetManifest {
    /// Manifest for amplitude frames at known pixel anchors.
    pub fn for_grid(grid: &ScanGrid) -> Self {
        let (rows, cols) = grid.image_dims();
        DatasetManifest {
            version: VERSION.into(),
            image_dims: [rows, cols],
            patch_size: grid.patch_size(),
            anchors: Some(grid.anchors().iter().map(|&(r, c)| [r as i64, c as i64]).collect()),
            positions: None,
            pixel_pitch: None,
            measurements: "measurements.bin".into(),
            kind: FrameKind::Amplitude,
            dc_centered: false,
            dark_frames: None,
            ground_truth_image: None,
            ground_truth_probes: None,
            wavelength: None,
            distance: None,
        }
    }

    /// Propagation parameters, when the manifest carries all three.
    pub fn fresnel(&self) -> Option<FresnelParams> {
        FresnelParams::new(self.wavelength?, self.distance?, self.pixel_pitch?).ok()
    }

    /// Pixel anchors, converting physical positions if needed.
    pub fn pixel_anchors(&self) -> Result<Vec<(i64, i64)>> {
        match (&self.anchors, &self.positions) {
            (Some(a), _) => Ok(a.iter().map(|&[r, c]| (r, c)).collect()),
            (None, Some(p)) => {
                let pitch = self.pixel_pitch.ok_or_else(|| PtychoError::Config("positions need pixel_pitch".into()))?;
                anchors_from_positions(p, pitch)
            }
            (None, None) => Err(PtychoError::Config("manifest has neither anchors nor positions".into())),
        }
    }
}

/// Convert physical positions to pixel anchors (round half to even), shifted
/// so the smallest row and column anchors are zero.
pub fn anchors_from_positions(positions: &[[f64; 2]], pitch: f64) -> Result<Vec<(i64, i64)>> {
    if !(pitch > 0.0 && pitch.is_finite()) {
        return Err(PtychoError::InvalidParam("pixel pitch must be positive".into()));
    }
    if positions.iter().flatten().any(|v| !v.is_finite()) {
        return Err(PtychoError::InvalidParam("positions must be finite".into()));
    }
    let px: Vec<(i64, i64)> = positions
        .iter()
        .map(|&[r, c]| ((r / pitch).round_ties_even() as i64, (c / pitch).round_ties_even() as i64))
        .collect();
    let r0 = px.iter().map(|p| p.0).min().unwrap_or(0);
    let c0 = px.iter().map(|p| p.1).min().unwrap_or(0);
    Ok(px.into_iter().map(|(r, c)| (r - r0, c - c0)).collect())
}

/// A dataset held in memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    /// Frames exactly as stored.
    pub frames: Vec<Array2<f64>>,
    pub grid: ScanGrid,
    pub darks: Option<Vec<Array2<f64>>>,
    pub truth_image: Option<ComplexImage>,
    pub truth_probes: Option<Vec<Array2<Complex64>>>,
}

impl Dataset {
    /// Reconstruction-ready measurements, with the zero frequency moved to
    /// index (0, 0).
    pub fn measurements(&self) -> Result<MeasurementSet> {
        if self.manifest.kind != FrameKind::Amplitude {
            return Err(PtychoError::Config("dataset holds raw intensities; preprocess it first".into()));
        }
        let frames =
            if self.manifest.dc_centered { self.frames.iter().map(ifftshift).collect() } else { self.frames.clone() };
        MeasurementSet::new(frames, self.grid.clone())
    }

    pub fn fresnel(&self) -> Option<FresnelParams> {
        self.manifest.fresnel()
    }
}

fn shape_err(entry: &str, detail: String) -> PtychoError {
    PtychoError::Shape(format!("{entry}: {detail}"))
}

/// Load and validate the dataset described by the manifest at `path`.
///
/// Referenced files are resolved relative to the manifest's directory.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = read_text(path)?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| PtychoError::Format { path: path.to_path_buf(), reason: e.to_string() })?;
    if manifest.version != VERSION {
        return Err(PtychoError::UnknownVersion(manifest.version));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let resolve = |name: &str| -> PathBuf { base.join(name) };
    let [rows, cols] = manifest.image_dims;
    let np = manifest.patch_size;
    let anchors = manifest.pixel_anchors()?;
    let grid = ScanGrid::new(&anchors, np, (rows, cols))?;

    let frames = read_real_stack(&resolve(&manifest.measurements))?;
    if frames.len() != anchors.len() {
        return Err(shape_err("measurements", format!("{} frames for {} scan positions", frames.len(), anchors.len())));
    }
    let frame_dim = frames.first().map(|f| f.dim()).unwrap_or((np, np));
    match manifest.kind {
        FrameKind::Amplitude if frame_dim != (np, np) => {
            return Err(shape_err("measurements", format!("frames are {frame_dim:?}, patch size is {np}")));
        }
        FrameKind::Intensity if frame_dim.0 < np || frame_dim.1 < np => {
            return Err(shape_err("measurements", format!("frames {frame_dim:?} are smaller than patch size {np}")));
        }
        _ => {}
    }
    if frames.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(PtychoError::Format {
            path: resolve(&manifest.measurements),
            reason: "frames must be finite and non-negative".into(),
        });
    }

    let darks = match &manifest.dark_frames {
        Some(name) => {
            let d = read_real_stack(&resolve(name))?;
            if let Some(bad) = d.iter().find(|f| f.dim() != frame_dim) {
                return Err(shape_err(
                    "dark_frames",
                    format!("{:?} differs from frame shape {frame_dim:?}", bad.dim()),
                ));
            }
            Some(d)
        }
        None => None,
    };
    let truth_image = match &manifest.ground_truth_image {
        Some(name) => {
            let mut items = read_complex_stack(&resolve(name))?;
            if items.len() != 1 || items[0].dim() != (rows, cols) {
                return Err(shape_err("ground_truth_image", format!("expected one {rows}x{cols} image")));
            }
            Some(ComplexImage::new(items.remove(0))?)
        }
        None => None,
    };
    let truth_probes = match &manifest.ground_truth_probes {
        Some(name) => {
            let items = read_complex_stack(&resolve(name))?;
            if items.is_empty() || items.iter().any(|p| p.dim() != (np, np)) {
                return Err(shape_err("ground_truth_probes", format!("expected {np}x{np} modes")));
            }
            Some(items)
        }
        None => None,
    };
    Ok(Dataset { manifest, frames, grid, darks, truth_image, truth_probes })
}

/// Write `dataset` under `dir` using the file names in its manifest.
///
/// Frames are stored as `f32`, complex arrays as interleaved `f32` pairs.
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<PathBuf> {
    super::create_dir(dir)?;
    let m = &dataset.manifest;
    write_array(&dir.join(&m.measurements), &real_stack(&dataset.frames, Dtype::F32)?)?;
    if let (Some(name), Some(d)) = (&m.dark_frames, &dataset.darks) {
        write_array(&dir.join(name), &real_stack(d, Dtype::F32)?)?;
    }
    if let (Some(name), Some(x)) = (&m.ground_truth_image, &dataset.truth_image) {
        write_array(&dir.join(name), &complex_stack(std::slice::from_ref(x.as_array()), Dtype::C64)?)?;
    }
    if let (Some(name), Some(p)) = (&m.ground_truth_probes, &dataset.truth_probes) {
        write_array(&dir.join(name), &complex_stack(p, Dtype::C64)?)?;
    }
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(m)
        .map_err(|e| PtychoError::Format { path: path.clone(), reason: e.to_string() })?;
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}
