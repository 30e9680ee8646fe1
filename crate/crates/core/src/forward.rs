//! Multi-mode far-field forward model and Poisson measurement simulation.

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array::{norm_sqr, ComplexImage};
use crate::error::{PtychoError, Result};
use crate::fft::dft2;
use crate::grid::ScanGrid;

/// K mutually incoherent probe modes of a common square shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    modes: Vec<Array2<Complex64>>,
}

impl ProbeSet {
    pub fn new(modes: Vec<Array2<Complex64>>) -> Result<Self> {
        let Some(first) = modes.first() else {
            return Err(PtychoError::InvalidParam("probe set needs at least one mode".into()));
        };
        let dim = first.dim();
        if dim.0 != dim.1 {
            return Err(PtychoError::Shape(format!("probe modes must be square, got {dim:?}")));
        }
        if let Some(k) = modes.iter().position(|m| m.dim() != dim) {
            return Err(PtychoError::Shape(format!("probe mode {k} differs in shape from mode 0")));
        }
        let set = Self { modes };
        if !(set.total_energy() > 0.0) {
            return Err(PtychoError::ZeroEnergy("probe set has no energy".into()));
        }
        Ok(set)
    }

    pub fn single(mode: Array2<Complex64>) -> Result<Self> {
        Self::new(vec![mode])
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn size(&self) -> usize {
        self.modes[0].nrows()
    }

    pub fn mode(&self, k: usize) -> &Array2<Complex64> {
        &self.modes[k]
    }

    pub fn modes(&self) -> &[Array2<Complex64>] {
        &self.modes
    }

    pub fn into_modes(self) -> Vec<Array2<Complex64>> {
        self.modes
    }

    /// Per-mode energies `||d_k||^2`.
    pub fn energies(&self) -> Vec<f64> {
        self.modes.iter().map(norm_sqr).collect()
    }

    pub fn total_energy(&self) -> f64 {
        self.energies().iter().sum()
    }

    pub fn scaled(&self, factor: f64) -> ProbeSet {
        ProbeSet { modes: self.modes.iter().map(|m| m.mapv(|v| v * factor)).collect() }
    }
}

/// Amplitude-domain measurements, one per scan location, with the zero
/// frequency at index `(0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    amplitudes: Vec<Array2<f64>>,
    grid: ScanGrid,
}

impl MeasurementSet {
    pub fn new(amplitudes: Vec<Array2<f64>>, grid: ScanGrid) -> Result<Self> {
        if amplitudes.len() != grid.len() {
            return Err(PtychoError::Shape(format!(
                "{} measurements for {} scan locations",
                amplitudes.len(),
                grid.len()
            )));
        }
        let n = grid.patch_size();
        for (j, y) in amplitudes.iter().enumerate() {
            if y.dim() != (n, n) {
                return Err(PtychoError::Shape(format!("measurement {j} is {:?}, expected {n}x{n}", y.dim())));
            }
            if y.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(PtychoError::InvalidParam(format!("measurement {j} has negative or non-finite entries")));
            }
        }
        Ok(Self { amplitudes, grid })
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub fn grid(&self) -> &ScanGrid {
        &self.grid
    }

    pub fn amplitude(&self, j: usize) -> &Array2<f64> {
        &self.amplitudes[j]
    }

    pub fn amplitudes(&self) -> &[Array2<f64>] {
        &self.amplitudes
    }

    pub fn into_parts(self) -> (Vec<Array2<f64>>, ScanGrid) {
        (self.amplitudes, self.grid)
    }
}

/// Photon scaling for synthetic data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    /// Peak expected count `r_p` after normalization.
    pub photon_rate: f64,
    /// Additive dark level `lambda` in counts.
    pub dark_level: f64,
    pub seed: u64,
    /// Replace each Poisson draw by its mean.
    #[serde(default)]
    pub noiseless: bool,
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.photon_rate.is_finite() && self.photon_rate > 0.0) {
            return Err(PtychoError::InvalidParam(format!("photon_rate must be positive, got {}", self.photon_rate)));
        }
        if !(self.dark_level.is_finite() && self.dark_level >= 0.0) {
            return Err(PtychoError::InvalidParam(format!("dark_level must be non-negative, got {}", self.dark_level)));
        }
        Ok(())
    }
}

fn check_probes(probes: &ProbeSet, grid: &ScanGrid) -> Result<()> {
    grid.check_patch(probes.mode(0).dim())
}

/// `sum_k |F (d_k o v)|^2` for one patch.
pub fn patch_intensity(patch: &Array2<Complex64>, probes: &ProbeSet) -> Array2<f64> {
    let mut total = Array2::<f64>::zeros(patch.dim());
    for d in probes.modes() {
        let exit = Zip::from(d).and(patch).map_collect(|&a, &b| a * b);
        let spectrum = dft2(&exit);
        Zip::from(&mut total).and(&spectrum).for_each(|t, s| *t += s.norm_sqr());
    }
    total
}

/// Noiseless far-field intensity at scan location `j`.
pub fn diffraction_intensity(x: &ComplexImage, probes: &ProbeSet, grid: &ScanGrid, j: usize) -> Result<Array2<f64>> {
    check_probes(probes, grid)?;
    let patch = grid.extract_patch(x.as_array(), j)?;
    Ok(patch_intensity(&patch, probes))
}

/// Square root of [`diffraction_intensity`].
pub fn noiseless_magnitude(x: &ComplexImage, probes: &ProbeSet, grid: &ScanGrid, j: usize) -> Result<Array2<f64>> {
    Ok(diffraction_intensity(x, probes, grid, j)?.mapv(f64::sqrt))
}

/// All noiseless intensities, in scan order.
pub fn all_intensities(x: &ComplexImage, probes: &ProbeSet, grid: &ScanGrid) -> Result<Vec<Array2<f64>>> {
    check_probes(probes, grid)?;
    (0..grid.len()).into_par_iter().map(|j| diffraction_intensity(x, probes, grid, j)).collect()
}

/// `max_i ||I_i||_inf` over the whole scan.
pub fn intensity_peak(intensities: &[Array2<f64>]) -> f64 {
    intensities.iter().flat_map(|i| i.iter().copied()).fold(0.0, f64::max)
}

/// `y_j = sqrt(Pois(r_p I_j / max_i ||I_i||_inf + lambda))` at every location.
///
/// Each location draws from its own ChaCha stream so the result does not
/// depend on scheduling.
pub fn simulate_measurements(
    x: &ComplexImage,
    probes: &ProbeSet,
    grid: &ScanGrid,
    params: &SimParams,
) -> Result<MeasurementSet> {
    params.validate()?;
    let intensities = all_intensities(x, probes, grid)?;
    let peak = intensity_peak(&intensities);
    let gain = if peak > 0.0 { params.photon_rate / peak } else { 0.0 };

    let amplitudes: Vec<Array2<f64>> = intensities
        .into_par_iter()
        .enumerate()
        .map(|(j, intensity)| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(j as u64);
            intensity.mapv(|i| {
                let mean = gain * i + params.dark_level;
                let counts = if params.noiseless || mean <= 0.0 {
                    mean.max(0.0)
                } else {
                    // mean > 0 here, so construction cannot fail
                    Poisson::new(mean).map(|p| p.sample(&mut rng)).unwrap_or(mean)
                };
                counts.sqrt()
            })
        })
        .collect();
    MeasurementSet::new(amplitudes, grid.clone())
}
