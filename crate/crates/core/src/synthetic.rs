//! Seeded synthetic experiments: phantom, probe modes, scan grid and data.

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array::{norm_sqr, ComplexImage};
use crate::error::{PtychoError, Result};
use crate::forward::{all_intensities, intensity_peak, simulate_measurements, MeasurementSet, ProbeSet, SimParams};
use crate::fresnel::FresnelParams;
use crate::grid::{generate_scan_grid, ScanGrid};
use crate::phantom::{aperture_probe, companion_mode, gaussian_probe, piecewise_phantom, split_energy, PhantomSpec};

/// Illumination profile before propagation to the sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbeShape {
    /// Gaussian beam, width as a fraction of the probe size.
    Gaussian { sigma: f64 },
    /// Circular aperture with a raised-cosine rim.
    Aperture { radius: f64, rim: f64 },
}

/// Everything needed to regenerate one synthetic data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub image_size: usize,
    pub probe_size: usize,
    pub spacing: usize,
    pub jitter: usize,
    pub grid_seed: u64,
    pub phantom: PhantomSpec,
    pub phantom_seed: u64,
    pub probe: ProbeShape,
    /// Number of mutually incoherent modes used to simulate (1 or 2).
    pub modes: usize,
    /// Energy fraction of the main mode when `modes == 2`.
    pub main_fraction: f64,
    pub fresnel: FresnelParams,
    pub sim: SimParams,
}

impl Default for SyntheticSpec {
    /// Desk-scale single-mode experiment: 64x64 weak-contrast phantom,
    /// defocused 16x16 Gaussian probe on a jittered 4-pixel raster.
    fn default() -> Self {
        let wavelength = 1.4089e-10; // 8.8 keV
        let spacing = 1e-8;
        SyntheticSpec {
            image_size: 64,
            probe_size: 16,
            spacing: 4,
            jitter: 2,
            grid_seed: 3,
            phantom: PhantomSpec { shapes: 8, min_magnitude: 0.7, max_phase: 0.5 },
            phantom_seed: 7,
            probe: ProbeShape::Gaussian { sigma: 0.35 },
            modes: 1,
            main_fraction: 0.9,
            fresnel: FresnelParams {
                wavelength,
                distance: 32.0 * spacing * spacing / wavelength,
                sample_spacing: spacing,
            },
            sim: SimParams { photon_rate: 1e4, dark_level: 0.0, seed: 1, noiseless: true },
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.modes) {
            return Err(PtychoError::InvalidParam(format!("synthetic data supports 1 or 2 modes, got {}", self.modes)));
        }
        if !(self.main_fraction > 0.0 && self.main_fraction < 1.0) {
            return Err(PtychoError::InvalidParam("main_fraction must lie in (0, 1)".into()));
        }
        self.fresnel.validate()?;
        self.sim.validate()
    }

    /// The probe modes at unit total energy.
    pub fn probe_modes(&self) -> Result<ProbeSet> {
        let main = match self.probe {
            ProbeShape::Gaussian { sigma } => gaussian_probe(self.probe_size, sigma, &self.fresnel)?,
            ProbeShape::Aperture { radius, rim } => aperture_probe(self.probe_size, radius, rim, &self.fresnel)?,
        };
        let modes = if self.modes == 2 {
            let second = companion_mode(&main);
            split_energy(&[main, second], &[self.main_fraction, 1.0 - self.main_fraction], 1.0)?
        } else {
            split_energy(&[main], &[1.0], 1.0)?
        };
        ProbeSet::new(modes)
    }

    /// Build phantom, probes, grid and measurements.
    pub fn generate(&self) -> Result<SyntheticCase> {
        self.validate()?;
        let n = self.image_size;
        let truth = piecewise_phantom(n, n, &self.phantom, self.phantom_seed)?;
        let probes = self.probe_modes()?;
        let grid = generate_scan_grid((n, n), self.probe_size, self.spacing, self.jitter, self.grid_seed)?;
        let measurements = simulate_measurements(&truth, &probes, &grid, &self.sim)?;
        // the data are normalized to a peak of r_p; rescale the probes to match
        let peak = intensity_peak(&all_intensities(&truth, &probes, &grid)?);
        let data_probes = probes.scaled((self.sim.photon_rate / peak).sqrt());
        Ok(SyntheticCase { truth, probes: data_probes, grid, measurements })
    }
}

/// A generated experiment. `probes` are scaled so that `truth` and `probes`
/// reproduce the noiseless part of `measurements` exactly.
#[derive(Debug, Clone)]
pub struct SyntheticCase {
    pub truth: ComplexImage,
    pub probes: ProbeSet,
    pub grid: ScanGrid,
    pub measurements: MeasurementSet,
}

impl SyntheticCase {
    /// Pixels guaranteed to be scanned whatever the jitter draw.
    pub fn field_of_view(&self, jitter: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let (rows, cols) = self.grid.image_dims();
        let m = jitter.min(rows / 2).min(cols / 2);
        (m..rows - m, m..cols - m)
    }
}

/// Restrict an image to a rectangular window.
pub fn crop(
    image: &Array2<Complex64>,
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
) -> Array2<Complex64> {
    image.slice(ndarray::s![rows, cols]).to_owned()
}

/// Normalized correlation `|<a, b>| / (||a|| ||b||)`.
pub fn correlation(a: &Array2<Complex64>, b: &Array2<Complex64>) -> f64 {
    let denom = (norm_sqr(a) * norm_sqr(b)).sqrt();
    if denom > 0.0 {
        crate::array::inner(a, b).norm() / denom
    } else {
        0.0
    }
}
