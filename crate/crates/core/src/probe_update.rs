//! Probe-side agents: per-location probe refinement, the simple-average
//! consensus and one Mann step for a single mode.

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::array::{ProbeStack, Stack};
use crate::error::{PtychoError, Result};
use crate::forward::MeasurementSet;
use crate::image_update::replaced_exit_waves;
use crate::inverse::stable_inverse;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeSideConfig {
    pub alpha2: f64,
    pub rho: f64,
}

impl ProbeSideConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha2) {
            return Err(PtychoError::InvalidParam(format!("alpha2 must lie in [0, 1], got {}", self.alpha2)));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(PtychoError::InvalidParam(format!("rho must lie in (0, 1), got {}", self.rho)));
        }
        Ok(())
    }
}

fn check(k: usize, modes: &[Array2<Complex64>], z: &Array2<Complex64>, y: &Array2<f64>) -> Result<()> {
    if k >= modes.len() {
        return Err(PtychoError::IndexOutOfRange { index: k, len: modes.len() });
    }
    let dim = z.dim();
    if y.dim() != dim || modes.iter().any(|m| m.dim() != dim) {
        return Err(PtychoError::Shape(format!("probe modes, patch {dim:?} and measurement {:?} disagree", y.dim())));
    }
    Ok(())
}

fn data_estimate(k: usize, modes: &[Array2<Complex64>], z: &Array2<Complex64>, y: &Array2<f64>) -> Array2<Complex64> {
    let exit = replaced_exit_waves(modes, z, y).swap_remove(k);
    let inv = stable_inverse(z, None);
    Zip::from(&exit).and(&inv).map_collect(|&e, &i| e * i)
}

/// Data-consistent estimate of mode `k` at one location.
///
/// `modes` holds every mode's current estimate at this location and `z` is
/// the consensus transmittance patch.
pub fn probe_agent_mode(
    k: usize,
    modes: &[Array2<Complex64>],
    z: &Array2<Complex64>,
    y: &Array2<f64>,
) -> Result<Array2<Complex64>> {
    check(k, modes, z, y)?;
    Ok(data_estimate(k, modes, z, y))
}

/// `(1 - alpha2) d_k + alpha2 d~_k`.
pub fn probe_agent(
    k: usize,
    modes: &[Array2<Complex64>],
    z: &Array2<Complex64>,
    y: &Array2<f64>,
    cfg: &ProbeSideConfig,
) -> Result<Array2<Complex64>> {
    check(k, modes, z, y)?;
    Ok(relaxed(k, modes, z, y, cfg.alpha2))
}

fn relaxed(
    k: usize,
    modes: &[Array2<Complex64>],
    z: &Array2<Complex64>,
    y: &Array2<f64>,
    alpha2: f64,
) -> Array2<Complex64> {
    let current = &modes[k];
    if alpha2 == 0.0 {
        return current.clone();
    }
    let est = data_estimate(k, modes, z, y);
    Zip::from(current).and(&est).map_collect(|&d, &e| d * (1.0 - alpha2) + e * alpha2)
}

/// Mean over locations, summed in ascending `j`, and its replication.
pub fn consensus_probe(stack: &ProbeStack) -> (Array2<Complex64>, ProbeStack) {
    let mut mean = Array2::<Complex64>::zeros(stack.dim());
    for d in stack.iter() {
        mean += d;
    }
    let scale = 1.0 / stack.len() as f64;
    mean.mapv_inplace(|v| v * scale);
    let replicated = Stack::replicate(&mean, stack.len());
    (mean, replicated)
}

/// Result of one probe-side Mann step for a single mode.
#[derive(Debug, Clone)]
pub struct ProbeStep {
    pub s: ProbeStack,
    pub u: ProbeStack,
    pub r: ProbeStack,
}

/// `r = F_k(s_k); u = G(2r - s_k); s_k' = s_k + 2 rho (u - r)`.
///
/// `stacks` holds the current per-location estimates of every mode; mode
/// `k` is the one updated, the others enter through the magnitude model.
pub fn mann_probe_step(
    k: usize,
    stacks: &[ProbeStack],
    z: &Stack,
    measurements: &MeasurementSet,
    cfg: &ProbeSideConfig,
) -> Result<ProbeStep> {
    cfg.validate()?;
    if k >= stacks.len() {
        return Err(PtychoError::IndexOutOfRange { index: k, len: stacks.len() });
    }
    let count = measurements.len();
    if z.len() != count || stacks.iter().any(|s| s.len() != count) {
        return Err(PtychoError::Shape(format!("probe and patch stacks must hold {count} entries")));
    }
    check(k, &stacks.iter().map(|s| s[0].clone()).collect::<Vec<_>>(), &z[0], measurements.amplitude(0))?;

    let r_items: Vec<Array2<Complex64>> = (0..count)
        .into_par_iter()
        .map(|j| {
            let modes: Vec<Array2<Complex64>> = stacks.iter().map(|s| s[j].clone()).collect();
            relaxed(k, &modes, &z[j], measurements.amplitude(j), cfg.alpha2)
        })
        .collect();
    let r = Stack::new(r_items)?;
    let s = &stacks[k];
    let (_, u) = consensus_probe(&r.combine(2.0, s, -1.0)?);
    let step = u.combine(2.0 * cfg.rho, &r, -2.0 * cfg.rho)?;
    let s_next = s.combine(1.0, &step, 1.0)?;
    Ok(ProbeStep { s: s_next, u, r })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::norm_sqr;
    use crate::fft::{dft2, idft2};
    use crate::forward::{patch_intensity, ProbeSet};
    use crate::grid::generate_scan_grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random(n: usize, rng: &mut ChaCha8Rng, lo: f64) -> Array2<Complex64> {
        Array2::from_shape_fn((n, n), |_| Complex64::from_polar(rng.random_range(lo..1.0), rng.random_range(-2.0..2.0)))
    }

    fn rel(a: &Array2<Complex64>, b: &Array2<Complex64>) -> f64 {
        (norm_sqr(&(a - b)) / norm_sqr(b)).sqrt()
    }

    fn cfg(alpha2: f64) -> ProbeSideConfig {
        ProbeSideConfig { alpha2, rho: 0.5 }
    }

    #[test]
    fn exact_data_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = random(8, &mut rng, 0.5);
        let modes = vec![random(8, &mut rng, 0.3), random(8, &mut rng, 0.3).mapv(|v| v * 0.3)];
        let y = patch_intensity(&z, &ProbeSet::new(modes.clone()).unwrap()).mapv(f64::sqrt);
        for k in 0..2 {
            let est = probe_agent_mode(k, &modes, &z, &y).unwrap();
            assert!(rel(&est, &modes[k]) <= 1e-5);
            for alpha in [0.0, 0.6, 1.0] {
                assert!(rel(&probe_agent(k, &modes, &z, &y, &cfg(alpha)).unwrap(), &modes[k]) <= 1e-5);
            }
        }
    }

    #[test]
    fn zero_data_and_alpha_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = random(4, &mut rng, 0.5);
        let modes = vec![random(4, &mut rng, 0.1)];
        let zero = Array2::zeros((4, 4));
        assert!(probe_agent_mode(0, &modes, &z, &zero).unwrap().iter().all(|v| v.norm() == 0.0));
        let y = Array2::from_shape_fn((4, 4), |(r, k)| 1.0 + (r * k) as f64);
        assert_eq!(probe_agent(0, &modes, &z, &y, &cfg(0.0)).unwrap(), modes[0]);
        assert_eq!(probe_agent(0, &modes, &z, &y, &cfg(1.0)).unwrap(), probe_agent_mode(0, &modes, &z, &y).unwrap());
        assert!(probe_agent_mode(1, &modes, &z, &y).is_err());
    }

    #[test]
    fn unit_patch_two_by_two() {
        let z = Array2::from_elem((2, 2), c(1.0, 0.0));
        let d = Array2::from_shape_vec((2, 2), vec![c(1.0, 0.5), c(-0.3, 0.0), c(0.2, 0.2), c(0.0, -1.0)]).unwrap();
        let y = Array2::from_shape_vec((2, 2), vec![0.7, 1.1, 0.4, 2.0]).unwrap();
        let est = probe_agent_mode(0, std::slice::from_ref(&d), &z, &y).unwrap();

        // direct expansion with X = I: F*(y o Fd / |Fd|), stabilizers included
        let fd = dft2(&d);
        let mags: Vec<f64> = fd.iter().map(|v| v.norm()).collect();
        let eps_m = 1e-6 * (mags.iter().map(|m| m * m).sum::<f64>() / 4.0).sqrt();
        let mut spec = fd.clone();
        for (i, v) in spec.iter_mut().enumerate() {
            *v *= y.as_slice().unwrap()[i] * mags[i] / (mags[i] * mags[i] + eps_m);
        }
        let expected = idft2(&spec).mapv(|v| v / (1.0 + 1e-6));
        assert!(rel(&est, &expected) < 1e-12);
        // and it is close to the unstabilized phase-replacement
        for (i, v) in spec.iter_mut().enumerate() {
            *v = fd.as_slice().unwrap()[i] / mags[i] * y.as_slice().unwrap()[i];
        }
        assert!(rel(&est, &idft2(&spec)) < 1e-5);
    }

    #[test]
    fn consensus_probe_cases() {
        let a = Array2::from_elem((2, 2), c(1.0, 1.0));
        let b = Array2::from_elem((2, 2), c(3.0, -1.0));
        let (mean, out) = consensus_probe(&Stack::new(vec![a.clone(), b]).unwrap());
        assert!(mean.iter().all(|v| *v == c(2.0, 0.0)));
        assert!(out.iter().all(|d| *d == mean));
        let same = Stack::new(vec![a.clone(), a.clone(), a.clone()]).unwrap();
        assert_eq!(consensus_probe(&same).1, same);
    }

    #[test]
    fn consensus_probe_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let stack = Stack::new((0..7).map(|_| random(5, &mut rng, 0.0)).collect()).unwrap();
        let (_, once) = consensus_probe(&stack);
        let (_, twice) = consensus_probe(&once);
        assert!(twice.distance(&once).unwrap() <= 1e-12 * once.norm_sqr().sqrt());
    }

    fn setup(rng: &mut ChaCha8Rng) -> (MeasurementSet, Stack, Array2<Complex64>) {
        let grid = generate_scan_grid((24, 24), 8, 4, 1, 9).unwrap();
        let x = Array2::from_shape_fn((24, 24), |_| {
            Complex64::from_polar(rng.random_range(0.6..1.0), rng.random_range(-1.0..1.0))
        });
        let probe = random(8, rng, 0.4);
        let probes = ProbeSet::single(probe.clone()).unwrap();
        let z = Stack::new((0..grid.len()).map(|j| grid.extract_patch(&x, j).unwrap()).collect()).unwrap();
        let y = z.iter().map(|p| patch_intensity(p, &probes).mapv(f64::sqrt)).collect();
        (MeasurementSet::new(y, grid).unwrap(), z, probe)
    }

    #[test]
    fn exact_data_mann_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (meas, z, probe) = setup(&mut rng);
        let s = Stack::replicate(&probe, meas.len());
        let step = mann_probe_step(0, std::slice::from_ref(&s), &z, &meas, &cfg(0.6)).unwrap();
        assert!(step.s.distance(&s).unwrap() / s.norm_sqr().sqrt() <= 1e-4);
        let tiny = ProbeSideConfig { alpha2: 0.6, rho: 1e-300 };
        let noisy = Stack::new((0..meas.len()).map(|_| random(8, &mut rng, 0.0)).collect()).unwrap();
        let step = mann_probe_step(0, std::slice::from_ref(&noisy), &z, &meas, &tiny).unwrap();
        assert!(step.s.distance(&noisy).unwrap() <= 1e-15 * noisy.norm_sqr().sqrt());
    }

    #[test]
    fn single_location_reduces_to_reflection() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = crate::grid::ScanGrid::new(&[(0, 0)], 4, (4, 4)).unwrap();
        let z = Stack::new(vec![random(4, &mut rng, 0.5)]).unwrap();
        let y = Array2::from_shape_fn((4, 4), |_| rng.random_range(0.0..3.0));
        let meas = MeasurementSet::new(vec![y.clone()], grid).unwrap();
        let s = Stack::new(vec![random(4, &mut rng, 0.2)]).unwrap();
        let c = ProbeSideConfig { alpha2: 0.6, rho: 0.3 };
        let step = mann_probe_step(0, std::slice::from_ref(&s), &z, &meas, &c).unwrap();
        let r = probe_agent(0, std::slice::from_ref(&s[0]), &z[0], &y, &c).unwrap();
        // with J = 1 the average is the identity: s' = s + 2 rho (r - s)
        let expected = &s[0] + &((&r - &s[0]).mapv(|v| v * 0.6));
        assert!(rel(&step.s[0], &expected) < 1e-13);
    }

    #[test]
    fn consensus_energy_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let stack = Stack::new((0..5).map(|_| random(4, &mut rng, 0.0)).collect()).unwrap();
        let (mean, _) = consensus_probe(&stack);
        let max_in = stack.iter().map(norm_sqr).fold(0.0, f64::max);
        assert!(norm_sqr(&mean) <= max_in);
    }
}
