//! End-to-end blind multi-mode reconstruction: initialization, interlaced
//! image and probe Mann iterations, mode addition and final assembly.

use std::time::Instant;

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array::{norm_sqr, ComplexImage, PatchStack, ProbeStack, Stack};
use crate::error::{PtychoError, Result};
use crate::fft::{dft2, fftshift, idft2};
use crate::forward::{MeasurementSet, ProbeSet};
use crate::fresnel::{fresnel_propagate, FresnelParams};
use crate::grid::ScanGrid;
use crate::image_update::{mann_image_step, weighted_average_image, ImageSideConfig};
use crate::inverse::stable_inverse;
use crate::metrics::nrmse;
use crate::probe_update::{consensus_probe, mann_probe_step, ProbeSideConfig};

fn default_rho() -> f64 {
    0.5
}
fn default_kappa() -> f64 {
    1.25
}
fn default_alpha() -> f64 {
    0.6
}
fn default_max_iters() -> usize {
    100
}
fn default_max_modes() -> usize {
    4
}

/// Tuning parameters for [`run_bm_pmace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgoConfig {
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_alpha")]
    pub alpha1: f64,
    #[serde(default = "default_alpha")]
    pub alpha2: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Iterations after which one probe mode is appended.
    #[serde(default)]
    pub mode_add_schedule: Vec<usize>,
    #[serde(default = "default_max_modes")]
    pub max_modes: usize,
    /// Stop once `E_c` falls below this value; `0` disables the test.
    #[serde(default)]
    pub convergence_tol: f64,
    /// Also append modes when the forward residual stalls.
    #[serde(default)]
    pub auto_add_modes: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        Self {
            rho: default_rho(),
            kappa: default_kappa(),
            alpha1: default_alpha(),
            alpha2: default_alpha(),
            max_iters: default_max_iters(),
            mode_add_schedule: Vec::new(),
            max_modes: default_max_modes(),
            convergence_tol: 0.0,
            auto_add_modes: false,
            seed: 0,
        }
    }
}

impl AlgoConfig {
    pub fn validate(&self) -> Result<()> {
        self.image_side().validate()?;
        self.probe_side().validate()?;
        if self.max_modes == 0 {
            return Err(PtychoError::InvalidParam("max_modes must be at least 1".into()));
        }
        if self.mode_add_schedule.windows(2).any(|w| w[0] >= w[1]) {
            return Err(PtychoError::InvalidParam("mode_add_schedule must be strictly increasing".into()));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(PtychoError::InvalidParam("convergence_tol must be non-negative".into()));
        }
        Ok(())
    }

    pub fn image_side(&self) -> ImageSideConfig {
        ImageSideConfig { alpha1: self.alpha1, kappa: self.kappa, rho: self.rho }
    }

    pub fn probe_side(&self) -> ProbeSideConfig {
        ProbeSideConfig { alpha2: self.alpha2, rho: self.rho }
    }
}

/// Iterate state: image patch stacks and per-mode probe stacks.
#[derive(Debug, Clone)]
pub struct ReconState {
    pub v: PatchStack,
    pub w: PatchStack,
    pub z: PatchStack,
    pub s: Vec<ProbeStack>,
    pub r: Vec<ProbeStack>,
    pub u: Vec<ProbeStack>,
    pub iteration: usize,
    pub ec_history: Vec<f64>,
}

impl ReconState {
    /// Replicate an image and probe modes into all stacks.
    pub fn from_estimates(image: &Array2<Complex64>, probes: &[Array2<Complex64>], grid: &ScanGrid) -> Result<Self> {
        if probes.is_empty() {
            return Err(PtychoError::InvalidParam("need at least one probe mode".into()));
        }
        let patches = (0..grid.len()).map(|j| grid.extract_patch(image, j)).collect::<Result<Vec<_>>>()?;
        let v = Stack::new(patches)?;
        let stacks: Vec<ProbeStack> = probes
            .iter()
            .map(|d| {
                grid.check_patch(d.dim())?;
                Ok(Stack::replicate(d, grid.len()))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            w: v.clone(),
            z: v.clone(),
            v,
            s: stacks.clone(),
            r: stacks.clone(),
            u: stacks,
            iteration: 0,
            ec_history: Vec::new(),
        })
    }

    pub fn modes(&self) -> usize {
        self.s.len()
    }

    /// The shared probe estimates `u_*` seen by the image agents.
    pub fn consensus_probes(&self) -> Result<ProbeSet> {
        ProbeSet::new(self.u.iter().map(|u| u[0].clone()).collect())
    }

    fn probe_energy(&self) -> f64 {
        self.u.iter().map(|u| norm_sqr(&u[0])).sum()
    }

    fn scale_probes(&mut self, factor: f64) {
        for stack in self.s.iter_mut().chain(self.r.iter_mut()).chain(self.u.iter_mut()) {
            stack.scale(factor);
        }
    }
}

/// One row of the iteration log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Probe modes active during this iteration.
    pub modes: usize,
    pub ec: f64,
    pub nrmse: Option<f64>,
    pub seconds: f64,
}

impl std::fmt::Display for IterationRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "iter={} modes={} ec={:.6e}", self.iteration, self.modes, self.ec)?;
        if let Some(n) = self.nrmse {
            write!(f, " nrmse={n:.6e}")?;
        }
        write!(f, " secs={:.3}", self.seconds)
    }
}

/// A probe mode appended at the end of `iteration`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeAddition {
    pub iteration: usize,
    /// Total probe energy before the new mode was appended.
    pub energy_before: f64,
    /// Total probe energy after appending and rescaling.
    pub energy_after: f64,
}

#[derive(Debug, Clone)]
pub struct ReconResult {
    pub image: ComplexImage,
    pub probes: Vec<Array2<Complex64>>,
    pub records: Vec<IterationRecord>,
    pub mode_additions: Vec<ModeAddition>,
}

impl ReconResult {
    pub fn ec_trace(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.ec).collect()
    }

    pub fn nrmse_trace(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.nrmse).collect()
    }
}

/// `E_c = ||z - w|| / J`.
pub fn convergence_metric(w: &PatchStack, z: &PatchStack) -> Result<f64> {
    Ok(w.distance(z)? / w.len() as f64)
}

/// Inverse DFT of a non-negative spectrum amplitude, recentred so that its
/// peak sits in the middle of the patch rather than at the corner.
fn centred_field(amplitude: &Array2<f64>) -> Array2<Complex64> {
    fftshift(&idft2(&amplitude.mapv(|a| Complex64::new(a, 0.0))))
}

/// Initial probe from the averaged back-propagated measurement magnitudes.
pub fn init_probe(measurements: &MeasurementSet, fresnel: &FresnelParams) -> Result<Array2<Complex64>> {
    if measurements.is_empty() {
        return Err(PtychoError::InvalidParam("no measurements".into()));
    }
    let n = measurements.grid().patch_size();
    let ones = Array2::from_elem((n, n), Complex64::new(1.0, 0.0));
    // (P_j 1)^-1 is the same for every in-bounds patch
    let window_inverse = stable_inverse(&ones, None);
    let mut acc = Array2::<Complex64>::zeros((n, n));
    for y in measurements.amplitudes() {
        let field = centred_field(y);
        Zip::from(&mut acc).and(&field).and(&window_inverse).for_each(|a, &f, &w| *a += f * w);
    }
    let scale = 1.0 / measurements.len() as f64;
    acc.mapv_inplace(|v| v * scale);
    fresnel_propagate(&acc, fresnel)
}

/// Initial image: per-patch constants `||y_j|| / ||d0||` averaged over overlaps.
pub fn init_image(measurements: &MeasurementSet, probe: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    let probe_norm = norm_sqr(probe).sqrt();
    if !(probe_norm > 0.0) {
        return Err(PtychoError::ZeroEnergy("initial probe has no energy".into()));
    }
    let grid = measurements.grid();
    let n = grid.patch_size();
    let mut numerator = Array2::<f64>::zeros(grid.image_dims());
    for (j, y) in measurements.amplitudes().iter().enumerate() {
        let level = y.iter().map(|v| v * v).sum::<f64>().sqrt() / probe_norm;
        grid.insert_real_adjoint(&Array2::from_elem((n, n), level), j, &mut numerator)?;
    }
    let count = grid.coverage();
    Ok(Zip::from(&numerator)
        .and(&count)
        .map_collect(|&num, &c| Complex64::new(if c > 0.0 { num / c } else { 0.0 }, 0.0)))
}

/// New probe mode from the intensity left unexplained by the current modes.
///
/// `patches` are the current consensus transmittance patches and `probes`
/// the current shared probe modes. Measured intensities are taken as `y^2`.
pub fn add_probe_mode(
    patches: &PatchStack,
    probes: &ProbeSet,
    measurements: &MeasurementSet,
    fresnel: &FresnelParams,
) -> Result<Array2<Complex64>> {
    if patches.len() != measurements.len() {
        return Err(PtychoError::Shape(format!("{} patches for {} measurements", patches.len(), measurements.len())));
    }
    let n = measurements.grid().patch_size();
    let mut acc = Array2::<Complex64>::zeros((n, n));
    for (x, y) in patches.iter().zip(measurements.amplitudes()) {
        let mut residual = y.mapv(|a| a * a);
        for d in probes.modes() {
            let spectrum = dft2(&Zip::from(d).and(x).map_collect(|&a, &b| a * b));
            Zip::from(&mut residual).and(&spectrum).for_each(|r, s| *r -= s.norm_sqr());
        }
        let field = centred_field(&residual.mapv(|r| r.max(0.0).sqrt()));
        let inv = stable_inverse(x, None);
        Zip::from(&mut acc).and(&field).and(&inv).for_each(|a, &f, &i| *a += f * i);
    }
    let scale = 1.0 / measurements.len() as f64;
    acc.mapv_inplace(|v| v * scale);
    fresnel_propagate(&acc, fresnel)
}

/// Scale every mode by one common factor so the total energy equals `target`.
pub fn rescale_probe_energy(modes: &[Array2<Complex64>], target: f64) -> Result<Vec<Array2<Complex64>>> {
    let factor = energy_factor(modes.iter().map(norm_sqr).sum(), target)?;
    Ok(modes.iter().map(|m| m.mapv(|v| v * factor)).collect())
}

fn energy_factor(current: f64, target: f64) -> Result<f64> {
    if !(current > 0.0) {
        return Err(PtychoError::ZeroEnergy("probe modes carry no energy to rescale".into()));
    }
    Ok((target / current).sqrt())
}

/// Relative amplitude residual of the current consensus state.
fn forward_residual(state: &ReconState, probes: &ProbeSet, measurements: &MeasurementSet) -> f64 {
    let (mut err, mut total) = (0.0, 0.0);
    for (x, y) in state.z.iter().zip(measurements.amplitudes()) {
        let model = crate::forward::patch_intensity(x, probes);
        Zip::from(&model).and(y).for_each(|&m, &a| {
            err += (m.sqrt() - a).powi(2);
            total += a * a;
        });
    }
    if total > 0.0 {
        (err / total).sqrt()
    } else {
        0.0
    }
}

/// Where the iteration starts.
#[derive(Debug, Clone)]
pub enum Start {
    /// Probe and image initialized from the data.
    FromData,
    /// Caller-supplied image and probe modes.
    Given { image: Array2<Complex64>, probes: Vec<Array2<Complex64>> },
}

fn check_finite(stack: &Stack, iteration: usize, operator: &str) -> Result<()> {
    if stack.all_finite() {
        Ok(())
    } else {
        Err(PtychoError::NonFinite { iteration, operator: operator.to_string() })
    }
}

/// Run the blind multi-mode reconstruction from the data-driven start.
pub fn run_bm_pmace(
    measurements: &MeasurementSet,
    cfg: &AlgoConfig,
    fresnel: &FresnelParams,
    ground_truth: Option<&ComplexImage>,
) -> Result<ReconResult> {
    run_from(measurements, cfg, fresnel, Start::FromData, ground_truth)
}

/// Run the reconstruction from an explicit starting point.
pub fn run_from(
    measurements: &MeasurementSet,
    cfg: &AlgoConfig,
    fresnel: &FresnelParams,
    start: Start,
    ground_truth: Option<&ComplexImage>,
) -> Result<ReconResult> {
    cfg.validate()?;
    fresnel.validate()?;
    let grid = measurements.grid();
    if let Some(truth) = ground_truth {
        if truth.dim() != grid.image_dims() {
            return Err(PtychoError::Shape("ground truth does not match the scan image size".into()));
        }
    }
    let mut state = match start {
        Start::FromData => {
            let d0 = init_probe(measurements, fresnel)?;
            let x0 = init_image(measurements, &d0)?;
            ReconState::from_estimates(&x0, &[d0], grid)?
        }
        Start::Given { image, probes } => {
            if probes.len() > cfg.max_modes {
                return Err(PtychoError::InvalidParam("more starting modes than max_modes".into()));
            }
            ReconState::from_estimates(&image, &probes, grid)?
        }
    };

    let image_cfg = cfg.image_side();
    let probe_cfg = cfg.probe_side();
    let clock = Instant::now();
    let mut records = Vec::with_capacity(cfg.max_iters);
    let mut mode_additions = Vec::new();
    let mut residuals: Vec<f64> = Vec::new();
    let mut last_addition = 0;

    while state.iteration < cfg.max_iters {
        state.iteration += 1;
        let it = state.iteration;
        let modes = state.modes();

        let probes = state.consensus_probes()?;
        let step = mann_image_step(&state.v, &probes, measurements, &image_cfg)?;
        check_finite(&step.v, it, "image update")?;
        check_finite(&step.z, it, "image consensus")?;
        state.v = step.v;
        state.w = step.w;
        state.z = step.z;

        for k in 0..modes {
            let step = mann_probe_step(k, &state.s, &state.z, measurements, &probe_cfg)?;
            check_finite(&step.s, it, &format!("probe update (mode {k})"))?;
            state.s[k] = step.s;
            state.u[k] = step.u;
            state.r[k] = step.r;
        }

        let ec = convergence_metric(&state.w, &state.z)?;
        if !ec.is_finite() {
            return Err(PtychoError::NonFinite { iteration: it, operator: "convergence metric".into() });
        }
        state.ec_history.push(ec);

        let probes = state.consensus_probes()?;
        let nrmse_now = match ground_truth {
            Some(truth) => {
                let (image, _) = weighted_average_image(&state.v, &probes, grid, cfg.kappa)?;
                Some(nrmse(&image, truth.as_array())?)
            }
            None => None,
        };
        let record =
            IterationRecord { iteration: it, modes, ec, nrmse: nrmse_now, seconds: clock.elapsed().as_secs_f64() };
        log::info!("{record}");
        records.push(record);

        let mut add = cfg.mode_add_schedule.contains(&it);
        if cfg.auto_add_modes {
            residuals.push(forward_residual(&state, &probes, measurements));
            add |= residual_stalled(&residuals, last_addition);
        }
        if add && state.modes() < cfg.max_modes {
            let before = state.probe_energy();
            let new_mode = add_probe_mode(&state.z, &probes, measurements, fresnel)?;
            for stacks in [&mut state.s, &mut state.r, &mut state.u] {
                stacks.push(Stack::replicate(&new_mode, grid.len()));
            }
            let factor = energy_factor(state.probe_energy(), before)?;
            state.scale_probes(factor);
            mode_additions.push(ModeAddition {
                iteration: it,
                energy_before: before,
                energy_after: state.probe_energy(),
            });
            last_addition = it;
            log::info!("iter={it} added probe mode {}", state.modes() - 1);
        }

        if cfg.convergence_tol > 0.0 && ec < cfg.convergence_tol {
            break;
        }
    }

    let probes = state.consensus_probes()?;
    let (image, uncovered) = weighted_average_image(&state.v, &probes, grid, cfg.kappa)?;
    if uncovered > 0 {
        log::warn!("{uncovered} pixels of the final image are not covered by any probe");
    }
    let final_probes = state.s.iter().map(|s| consensus_probe(s).0).collect();
    Ok(ReconResult { image: ComplexImage::new(image)?, probes: final_probes, records, mode_additions })
}

/// Stall test: relative change of the forward residual below 1% across the
/// last 10 iterations, at least 10 iterations after the latest addition.
fn residual_stalled(residuals: &[f64], last_addition: usize) -> bool {
    const WINDOW: usize = 10;
    let n = residuals.len();
    if n < WINDOW + 1 || n < last_addition + WINDOW {
        return false;
    }
    let then = residuals[n - 1 - WINDOW];
    let now = residuals[n - 1];
    then > 0.0 && (then - now).abs() / then < 0.01
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::inner;
    use crate::synthetic::{correlation, SyntheticSpec};

    fn flat_fresnel() -> FresnelParams {
        // a vanishing distance makes the propagator the identity to rounding
        FresnelParams::new(1e-10, 1e-30, 1e-8).unwrap()
    }

    fn amplitudes(n: usize, seed: u64) -> Array2<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, n), |_| rng.random_range(0.0..2.0))
    }

    #[test]
    fn init_probe_single_location_is_backpropagation() {
        let grid = ScanGrid::new(&[(0, 0)], 6, (6, 6)).unwrap();
        let y = amplitudes(6, 1);
        let meas = MeasurementSet::new(vec![y.clone()], grid).unwrap();
        let d0 = init_probe(&meas, &flat_fresnel()).unwrap();
        // (P_j 1)^-1 is the stabilized inverse of ones: 1 / (1 + 1e-6)
        let expected = fftshift(&idft2(&y.mapv(|a| Complex64::new(a / (1.0 + 1e-6), 0.0))));
        assert!((&d0 - &expected).iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn init_probe_averages_and_handles_zero_data() {
        let grid = ScanGrid::new(&[(0, 0), (2, 2)], 4, (6, 6)).unwrap();
        let zero = MeasurementSet::new(vec![Array2::zeros((4, 4)); 2], grid.clone()).unwrap();
        assert!(init_probe(&zero, &flat_fresnel()).unwrap().iter().all(|v| v.norm() == 0.0));

        let (a, b) = (amplitudes(4, 2), amplitudes(4, 3));
        let meas = MeasurementSet::new(vec![a.clone(), b.clone()], grid).unwrap();
        let mean = (&a + &b).mapv(|v| v / 2.0);
        let single = MeasurementSet::new(vec![mean], ScanGrid::new(&[(0, 0)], 4, (4, 4)).unwrap()).unwrap();
        let (p, q) = (init_probe(&meas, &flat_fresnel()).unwrap(), init_probe(&single, &flat_fresnel()).unwrap());
        assert!((&p - &q).iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn init_image_overlap_average() {
        // two 2x2 patches overlapping in one pixel, constants 1 and 3
        let grid = ScanGrid::new(&[(0, 0), (1, 1)], 2, (4, 4)).unwrap();
        let d0 = Array2::from_elem((2, 2), Complex64::new(0.5, 0.0)); // ||d0|| = 1
        let y0 = Array2::from_elem((2, 2), 0.5); // ||y0|| = 1
        let y1 = Array2::from_elem((2, 2), 1.5); // ||y1|| = 3
        let meas = MeasurementSet::new(vec![y0, y1], grid).unwrap();
        let x0 = init_image(&meas, &d0).unwrap();
        let re = x0.mapv(|v| v.re);
        assert!(x0.iter().all(|v| v.im == 0.0));
        assert!((re[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((re[(1, 1)] - 2.0).abs() < 1e-12);
        assert!((re[(2, 2)] - 3.0).abs() < 1e-12);
        assert_eq!(re[(3, 0)], 0.0);
        assert!(init_image(&meas, &Array2::zeros((2, 2))).is_err());
    }

    #[test]
    fn init_image_single_patch() {
        let grid = ScanGrid::new(&[(1, 2)], 2, (4, 5)).unwrap();
        let d0 = Array2::from_elem((2, 2), Complex64::new(0.0, 1.0));
        let y = Array2::from_elem((2, 2), 3.0);
        let x0 = init_image(&MeasurementSet::new(vec![y], grid).unwrap(), &d0).unwrap();
        for ((r, c), v) in x0.indexed_iter() {
            let inside = (1..3).contains(&r) && (2..4).contains(&c);
            assert_eq!(v.re, if inside { 3.0 } else { 0.0 });
        }
    }

    #[test]
    fn rescale_keeps_ratios() {
        let a = Array2::from_elem((1, 1), Complex64::new(3.0, 0.0));
        let b = Array2::from_elem((1, 1), Complex64::new(0.0, 1.0));
        let out = rescale_probe_energy(&[a, b], 5.0).unwrap();
        assert!((norm_sqr(&out[0]) - 4.5).abs() < 1e-12);
        assert!((norm_sqr(&out[1]) - 0.5).abs() < 1e-12);
        assert!((norm_sqr(&out[0]) / norm_sqr(&out[1]) - 9.0).abs() < 1e-12);
        let zero = Array2::zeros((1, 1));
        assert!(rescale_probe_energy(&[zero], 1.0).is_err());
    }

    #[test]
    fn convergence_metric_cases() {
        let w = Stack::replicate(&Array2::from_elem((2, 2), Complex64::new(1.0, -1.0)), 4);
        assert_eq!(convergence_metric(&w, &w).unwrap(), 0.0);
        let mut items = w.clone().into_vec();
        items[2][(0, 1)] += Complex64::new(0.6, 0.8);
        let z = Stack::new(items).unwrap();
        assert!((convergence_metric(&w, &z).unwrap() - 0.25).abs() < 1e-15);
        let short = Stack::replicate(&Array2::zeros((2, 2)), 3);
        assert!(convergence_metric(&w, &short).is_err());
    }

    #[test]
    fn new_mode_vanishes_on_exact_single_mode_data() {
        let case = SyntheticSpec::default().generate().unwrap();
        let grid = &case.grid;
        let patches =
            Stack::new((0..grid.len()).map(|j| grid.extract_patch(case.truth.as_array(), j).unwrap()).collect())
                .unwrap();
        let fresnel = SyntheticSpec::default().fresnel;
        let dk = add_probe_mode(&patches, &case.probes, &case.measurements, &fresnel).unwrap();
        let ratio = (norm_sqr(&dk) / case.probes.total_energy()).sqrt();
        assert!(ratio <= 1e-6, "{ratio}");
    }

    #[test]
    fn new_mode_correlates_with_missing_mode() {
        let spec = SyntheticSpec { modes: 2, ..Default::default() };
        let case = spec.generate().unwrap();
        let grid = &case.grid;
        let patches =
            Stack::new((0..grid.len()).map(|j| grid.extract_patch(case.truth.as_array(), j).unwrap()).collect())
                .unwrap();
        let main = ProbeSet::single(case.probes.mode(0).clone()).unwrap();
        let dk = add_probe_mode(&patches, &main, &case.measurements, &spec.fresnel).unwrap();
        assert!(norm_sqr(&dk) > 0.0);
        let c = correlation(&dk, case.probes.mode(1));
        assert!(c > 0.3, "correlation {c}");
    }

    #[test]
    fn scheduled_mode_enters_at_iteration_twenty() {
        let spec = SyntheticSpec { modes: 2, ..Default::default() };
        let case = spec.generate().unwrap();
        let cfg = AlgoConfig { max_iters: 24, alpha1: 0.5, mode_add_schedule: vec![20], ..Default::default() };
        let res = run_bm_pmace(&case.measurements, &cfg, &spec.fresnel, None).unwrap();
        let modes: Vec<usize> = res.records.iter().map(|r| r.modes).collect();
        assert!(modes[..20].iter().all(|&k| k == 1));
        assert!(modes[20..].iter().all(|&k| k == 2));
        assert_eq!(res.probes.len(), 2);
        let add = res.mode_additions[0];
        assert_eq!(add.iteration, 20);
        assert!((add.energy_after - add.energy_before).abs() <= 1e-12 * add.energy_before);
    }

    #[test]
    fn mode_count_capped() {
        let case = SyntheticSpec::default().generate().unwrap();
        let cfg = AlgoConfig { max_iters: 4, mode_add_schedule: vec![1, 2, 3], max_modes: 2, ..Default::default() };
        let res = run_bm_pmace(&case.measurements, &cfg, &SyntheticSpec::default().fresnel, None).unwrap();
        assert_eq!(res.mode_additions.len(), 1);
        assert_eq!(res.records.last().unwrap().modes, 2);
    }

    #[test]
    fn truth_is_nearly_a_fixed_point() {
        let mut spec = SyntheticSpec { jitter: 0, spacing: 12, ..Default::default() };
        spec.sim.photon_rate = 1e6;
        let case = spec.generate().unwrap();
        let start = Start::Given { image: case.truth.as_array().clone(), probes: case.probes.modes().to_vec() };
        let cfg = AlgoConfig { max_iters: 10, ..Default::default() };
        let res = run_from(&case.measurements, &cfg, &spec.fresnel, start, Some(&case.truth)).unwrap();
        assert!(res.records[0].ec < 1e-4, "{}", res.records[0].ec);
        assert!(res.nrmse_trace().iter().all(|&n| n <= 1e-3));
    }

    #[test]
    fn runs_are_deterministic() {
        let case = SyntheticSpec::default().generate().unwrap();
        let cfg = AlgoConfig { max_iters: 8, ..Default::default() };
        let fresnel = SyntheticSpec::default().fresnel;
        let a = run_bm_pmace(&case.measurements, &cfg, &fresnel, None).unwrap();
        let b = run_bm_pmace(&case.measurements, &cfg, &fresnel, None).unwrap();
        let bits = |r: &ReconResult| r.ec_trace().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn tolerance_stops_early() {
        let case = SyntheticSpec::default().generate().unwrap();
        let cfg = AlgoConfig { max_iters: 50, convergence_tol: 1e9, ..Default::default() };
        let res = run_bm_pmace(&case.measurements, &cfg, &SyntheticSpec::default().fresnel, None).unwrap();
        assert_eq!(res.records.len(), 1);
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg: AlgoConfig = toml::from_str("max_iters = 7").unwrap();
        assert_eq!(cfg, AlgoConfig { max_iters: 7, ..Default::default() });
        assert!(toml::from_str::<AlgoConfig>("unknown = 1").is_err());
        for bad in [
            AlgoConfig { rho: 1.0, ..Default::default() },
            AlgoConfig { kappa: 2.5, ..Default::default() },
            AlgoConfig { alpha1: -0.1, ..Default::default() },
            AlgoConfig { alpha2: 1.1, ..Default::default() },
            AlgoConfig { mode_add_schedule: vec![5, 5], ..Default::default() },
            AlgoConfig { max_modes: 0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn stall_detection() {
        let flat = vec![1.0; 12];
        assert!(residual_stalled(&flat, 0));
        assert!(!residual_stalled(&flat[..10], 0));
        assert!(!residual_stalled(&flat, 5));
        let falling: Vec<f64> = (0..12).map(|i| 1.0 - 0.05 * i as f64).collect();
        assert!(!residual_stalled(&falling, 0));
    }

    #[test]
    fn record_display() {
        let r = IterationRecord { iteration: 3, modes: 1, ec: 0.5, nrmse: Some(0.25), seconds: 1.0 };
        assert_eq!(r.to_string(), "iter=3 modes=1 ec=5.000000e-1 nrmse=2.500000e-1 secs=1.000");
        let _ = inner(&Array2::<Complex64>::zeros((1, 1)), &Array2::zeros((1, 1)));
    }
}
