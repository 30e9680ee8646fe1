//! Image-side agents: the data-fitting patch agent, the weighted
//! consensus operator and one Mann step on the patch stack.

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::array::{PatchStack, Stack};
use crate::error::{PtychoError, Result};
use crate::fft::{dft2, idft2};
use crate::forward::{MeasurementSet, ProbeSet};
use crate::grid::ScanGrid;
use crate::inverse::{stable_inverse, stable_inverse_real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageSideConfig {
    pub alpha1: f64,
    pub kappa: f64,
    pub rho: f64,
}

impl ImageSideConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha1) {
            return Err(PtychoError::InvalidParam(format!("alpha1 must lie in [0, 1], got {}", self.alpha1)));
        }
        if !(1.0..=2.0).contains(&self.kappa) {
            return Err(PtychoError::InvalidParam(format!("kappa must lie in [1, 2], got {}", self.kappa)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(PtychoError::InvalidParam(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        Ok(())
    }
}

/// `w_k = ||d_k||^2 / sum_m ||d_m||^2`.
///
/// The last weight is taken as the complement of the others so that the
/// weights, summed in order, give exactly `1.0`.
pub fn probe_energy_weights(probes: &ProbeSet) -> Result<Vec<f64>> {
    let energies = probes.energies();
    let total: f64 = energies.iter().sum();
    if !(total > 0.0) {
        return Err(PtychoError::ZeroEnergy("probe weights need positive total energy".into()));
    }
    let mut weights: Vec<f64> = energies.iter().map(|e| e / total).collect();
    let last = weights.len() - 1;
    let head: f64 = weights[..last].iter().sum();
    weights[last] = (1.0 - head).max(0.0);
    Ok(weights)
}

/// Magnitude-replaced exit waves for every mode at one location.
///
/// Returns `F* (y o F(d_k o v) / |model|)` for each `k`, with the model
/// magnitude `sqrt(sum_m |F(d_m o v)|^2)` inverted stably.
pub(crate) fn replaced_exit_waves(
    illuminators: &[Array2<Complex64>],
    patch: &Array2<Complex64>,
    y: &Array2<f64>,
) -> Vec<Array2<Complex64>> {
    let spectra: Vec<Array2<Complex64>> =
        illuminators.iter().map(|d| dft2(&Zip::from(d).and(patch).map_collect(|&a, &b| a * b))).collect();
    let mut magnitude = Array2::<f64>::zeros(y.dim());
    for s in &spectra {
        Zip::from(&mut magnitude).and(s).for_each(|m, v| *m += v.norm_sqr());
    }
    magnitude.mapv_inplace(f64::sqrt);
    let ratio = Zip::from(y).and(&stable_inverse_real(&magnitude)).map_collect(|&a, &b| a * b);
    spectra
        .into_iter()
        .map(|mut s| {
            Zip::from(&mut s).and(&ratio).for_each(|v, &r| *v *= r);
            idft2(&s)
        })
        .collect()
}

fn check_shapes(v: &Array2<Complex64>, probes: &ProbeSet, y: &Array2<f64>) -> Result<()> {
    let n = probes.size();
    if v.dim() != (n, n) || y.dim() != (n, n) {
        return Err(PtychoError::Shape(format!(
            "patch {:?} and measurement {:?} must match the {n}x{n} probe",
            v.dim(),
            y.dim()
        )));
    }
    Ok(())
}

fn all_mode_estimates(v: &Array2<Complex64>, probes: &ProbeSet, y: &Array2<f64>) -> Vec<Array2<Complex64>> {
    replaced_exit_waves(probes.modes(), v, y)
        .into_iter()
        .zip(probes.modes())
        .map(|(exit, d)| {
            let inv = stable_inverse(d, None);
            Zip::from(&exit).and(&inv).map_collect(|&e, &i| e * i)
        })
        .collect()
}

/// Probe-dependent patch estimate for mode `k` at one location.
pub fn patch_agent_mode(
    v: &Array2<Complex64>,
    probes: &ProbeSet,
    k: usize,
    y: &Array2<f64>,
) -> Result<Array2<Complex64>> {
    check_shapes(v, probes, y)?;
    if k >= probes.len() {
        return Err(PtychoError::IndexOutOfRange { index: k, len: probes.len() });
    }
    Ok(all_mode_estimates(v, probes, y).swap_remove(k))
}

/// `(1 - alpha1) v + alpha1 sum_k w_k v~_k`.
pub fn patch_agent(
    v: &Array2<Complex64>,
    probes: &ProbeSet,
    y: &Array2<f64>,
    cfg: &ImageSideConfig,
) -> Result<Array2<Complex64>> {
    check_shapes(v, probes, y)?;
    let weights = probe_energy_weights(probes)?;
    Ok(agent_with_weights(v, probes, &weights, y, cfg.alpha1))
}

fn agent_with_weights(
    v: &Array2<Complex64>,
    probes: &ProbeSet,
    weights: &[f64],
    y: &Array2<f64>,
    alpha1: f64,
) -> Array2<Complex64> {
    let mut out = v.mapv(|p| p * (1.0 - alpha1));
    if alpha1 == 0.0 {
        return out;
    }
    for (est, &w) in all_mode_estimates(v, probes, y).iter().zip(weights) {
        Zip::from(&mut out).and(est).for_each(|o, &e| *o += e * (alpha1 * w));
    }
    out
}

/// Stacked data-fitting operator applied at every location in parallel.
pub fn apply_patch_agents(
    v: &PatchStack,
    probes: &ProbeSet,
    measurements: &MeasurementSet,
    cfg: &ImageSideConfig,
) -> Result<PatchStack> {
    if v.len() != measurements.len() {
        return Err(PtychoError::Shape(format!("{} patches for {} measurements", v.len(), measurements.len())));
    }
    check_shapes(v.get(0), probes, measurements.amplitude(0))?;
    let weights = probe_energy_weights(probes)?;
    let items = (0..v.len())
        .into_par_iter()
        .map(|j| agent_with_weights(v.get(j), probes, &weights, measurements.amplitude(j), cfg.alpha1))
        .collect();
    Stack::new(items)
}

/// Output of the weighted consensus operator.
#[derive(Debug, Clone)]
pub struct Consensus {
    /// The averaged image `v-bar`.
    pub image: Array2<Complex64>,
    /// `[P_0 v-bar, ..., P_{J-1} v-bar]`.
    pub stack: PatchStack,
    /// Pixels that no weighted patch reaches; set to zero.
    pub uncovered: usize,
}

/// Inverse of a non-negative weight image; entries at or below a tiny
/// cutoff relative to the mean positive weight map to zero.
fn invert_weights(lambda: &Array2<f64>) -> Array2<f64> {
    let (sum, count) = lambda.iter().filter(|v| **v > 0.0).fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if count == 0 {
        return Array2::zeros(lambda.dim());
    }
    let cutoff = 1e-12 * sum / count as f64;
    lambda.mapv(|v| if v > cutoff { 1.0 / v } else { 0.0 })
}

/// Assemble `sum_k w_k Lambda_k^{-1} sum_j P_j^T |d_k|^kappa v_j`.
pub fn weighted_average_image(
    stack: &PatchStack,
    probes: &ProbeSet,
    grid: &ScanGrid,
    kappa: f64,
) -> Result<(Array2<Complex64>, usize)> {
    if stack.len() != grid.len() {
        return Err(PtychoError::Shape(format!("{} patches for {} scan locations", stack.len(), grid.len())));
    }
    grid.check_patch(stack.dim())?;
    grid.check_patch(probes.mode(0).dim())?;
    let weights = probe_energy_weights(probes)?;
    let dims = grid.image_dims();
    let mut image = Array2::<Complex64>::zeros(dims);
    let mut reach = Array2::<f64>::zeros(dims);

    for (d, &w) in probes.modes().iter().zip(&weights) {
        if w == 0.0 {
            continue;
        }
        let strength = d.mapv(|v| v.norm().powf(kappa));
        let strength_c = strength.mapv(|s| Complex64::new(s, 0.0));
        let mut numerator = Array2::<Complex64>::zeros(dims);
        let mut lambda = Array2::<f64>::zeros(dims);
        // ascending j keeps the reduction order fixed
        for j in 0..grid.len() {
            let weighted = Zip::from(stack.get(j)).and(&strength_c).map_collect(|&v, &s| v * s);
            grid.insert_patch_adjoint(&weighted, j, &mut numerator)?;
            grid.insert_real_adjoint(&strength, j, &mut lambda)?;
        }
        let inv = invert_weights(&lambda);
        Zip::from(&mut image).and(&numerator).and(&inv).and(&mut reach).for_each(|x, &n, &i, r| {
            *x += n * (w * i);
            if i > 0.0 {
                *r += w;
            }
        });
    }
    let uncovered = reach.iter().filter(|r| **r == 0.0).count();
    Ok((image, uncovered))
}

/// The consensus operator `G^I`.
pub fn consensus_image(stack: &PatchStack, probes: &ProbeSet, grid: &ScanGrid, kappa: f64) -> Result<Consensus> {
    let (image, uncovered) = weighted_average_image(stack, probes, grid, kappa)?;
    if uncovered > 0 {
        log::debug!("{uncovered} image pixels are not covered by any weighted patch; set to zero");
    }
    let items = (0..grid.len()).map(|j| grid.extract_patch(&image, j)).collect::<Result<Vec<_>>>()?;
    Ok(Consensus { image, stack: Stack::new(items)?, uncovered })
}

/// Result of one image-side Mann step.
#[derive(Debug, Clone)]
pub struct ImageStep {
    pub v: PatchStack,
    pub w: PatchStack,
    pub z: PatchStack,
}

/// `w = F(v); z = G(2w - v); v' = v + 2 rho (z - w)`.
pub fn mann_image_step(
    v: &PatchStack,
    probes: &ProbeSet,
    measurements: &MeasurementSet,
    cfg: &ImageSideConfig,
) -> Result<ImageStep> {
    cfg.validate()?;
    let w = apply_patch_agents(v, probes, measurements, cfg)?;
    let reflected = w.combine(2.0, v, -1.0)?;
    let z = consensus_image(&reflected, probes, measurements.grid(), cfg.kappa)?.stack;
    let step = z.combine(2.0 * cfg.rho, &w, -2.0 * cfg.rho)?;
    let v_next = v.combine(1.0, &step, 1.0)?;
    Ok(ImageStep { v: v_next, w, z })
}
