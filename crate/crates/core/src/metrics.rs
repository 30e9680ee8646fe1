//! Gain-invariant reconstruction error metrics.

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::array::{inner, norm_sqr, ComplexImage};
use crate::error::{PtychoError, Result};
use crate::forward::{diffraction_intensity, MeasurementSet, ProbeSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub nrmse: f64,
    pub optimal_scale: Complex64,
    pub forward_nrmse: f64,
}

fn check_dims(a: &Array2<Complex64>, b: &Array2<Complex64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(PtychoError::Shape(format!("cannot compare {:?} with {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// `argmin_c ||c xhat - x|| = <xhat, x> / <xhat, xhat>`.
pub fn optimal_scale(estimate: &Array2<Complex64>, truth: &Array2<Complex64>) -> Result<Complex64> {
    check_dims(estimate, truth)?;
    let energy = norm_sqr(estimate);
    if !(energy > 0.0) {
        return Err(PtychoError::ZeroEnergy("estimate is identically zero".into()));
    }
    Ok(inner(estimate, truth) / energy)
}

/// `min_c ||c xhat - x|| / ||x||`.
pub fn nrmse(estimate: &Array2<Complex64>, truth: &Array2<Complex64>) -> Result<f64> {
    check_dims(estimate, truth)?;
    let truth_energy = norm_sqr(truth);
    if !(truth_energy > 0.0) {
        return Err(PtychoError::ZeroEnergy("ground truth is identically zero".into()));
    }
    if norm_sqr(estimate) == 0.0 {
        return Ok(1.0);
    }
    let c = optimal_scale(estimate, truth)?;
    let err = Zip::from(estimate).and(truth).fold(0.0, |acc, &e, &t| acc + (e * c - t).norm_sqr());
    Ok((err / truth_energy).sqrt())
}

/// NRMSE between measured amplitudes and the model amplitudes of
/// `estimate` under `probes`, over the whole scan, with a positive real gain.
pub fn forward_nrmse(estimate: &ComplexImage, probes: &ProbeSet, measurements: &MeasurementSet) -> Result<f64> {
    if measurements.is_empty() {
        return Err(PtychoError::InvalidParam("no measurements to compare against".into()));
    }
    let grid = measurements.grid();
    let models: Vec<Array2<f64>> = (0..grid.len())
        .into_par_iter()
        .map(|j| Ok(diffraction_intensity(estimate, probes, grid, j)?.mapv(f64::sqrt)))
        .collect::<Result<_>>()?;
    let (mut my, mut mm, mut yy) = (0.0, 0.0, 0.0);
    for (m, y) in models.iter().zip(measurements.amplitudes()) {
        Zip::from(m).and(y).for_each(|&a, &b| {
            my += a * b;
            mm += a * a;
            yy += b * b;
        });
    }
    if !(yy > 0.0) {
        return Err(PtychoError::ZeroEnergy("measurements are identically zero".into()));
    }
    if !(mm > 0.0 && my > 0.0) {
        return Ok(1.0);
    }
    let gain = my / mm;
    let err: f64 = models
        .iter()
        .zip(measurements.amplitudes())
        .map(|(m, y)| Zip::from(m).and(y).fold(0.0, |acc, &a, &b| acc + (gain * a - b).powi(2)))
        .sum();
    Ok((err / yy).sqrt())
}

/// All three metrics at once.
pub fn report(
    estimate: &ComplexImage,
    truth: &ComplexImage,
    probes: &ProbeSet,
    measurements: &MeasurementSet,
) -> Result<MetricReport> {
    Ok(MetricReport {
        nrmse: nrmse(estimate.as_array(), truth.as_array())?,
        optimal_scale: optimal_scale(estimate.as_array(), truth.as_array())?,
        forward_nrmse: forward_nrmse(estimate, probes, measurements)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::noiseless_magnitude;
    use crate::grid::ScanGrid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Array2<Complex64> {
        Array2::from_shape_fn((n, n), |_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn scale_of_identity_and_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(6, &mut rng);
        assert!((optimal_scale(&x, &x).unwrap() - 1.0).norm() < 1e-15);
        let g = Complex64::from_polar(2.0, std::f64::consts::PI / 3.0);
        let c = optimal_scale(&x.mapv(|v| v * g), &x).unwrap();
        assert!((c - Complex64::from_polar(0.5, -std::f64::consts::PI / 3.0)).norm() < 1e-14);
        assert!(optimal_scale(&Array2::zeros((6, 6)), &x).is_err());
    }

    #[test]
    fn nrmse_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(8, &mut rng);
        for theta in [0.0, 1.0, -2.5] {
            assert!(nrmse(&x.mapv(|v| v * Complex64::from_polar(1.0, theta)), &x).unwrap() < 1e-14);
        }
        // orthogonal estimate: c* = 0 so the error equals ||x||
        let mut a = Array2::zeros((2, 2));
        a[(0, 0)] = Complex64::new(1.0, 0.0);
        let mut b = Array2::zeros((2, 2));
        b[(1, 1)] = Complex64::new(0.0, 2.0);
        assert!((nrmse(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(nrmse(&Array2::zeros((2, 2)), &b).unwrap(), 1.0);
        assert!(nrmse(&a, &Array2::zeros((2, 2))).is_err());
    }

    #[test]
    fn nrmse_orthogonal_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(8, &mut rng);
        let mut delta = random(8, &mut rng);
        // Gram-Schmidt: remove the x component, then set ||delta|| = 0.1 ||x||
        let proj = inner(&x, &delta) / norm_sqr(&x);
        delta = &delta - &x.mapv(|v| v * proj);
        let s = 0.1 * (norm_sqr(&x) / norm_sqr(&delta)).sqrt();
        delta.mapv_inplace(|v| v * s);
        // best c projects x onto span(x + delta): error^2 = |delta|^2 |x|^2 / (|x|^2 + |delta|^2)
        let expected = (0.01f64 / 1.01).sqrt();
        let got = nrmse(&(&x + &delta), &x).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!((got - 0.0995).abs() < 1e-4);
    }

    #[test]
    fn forward_nrmse_exact_and_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = ComplexImage::new(random(12, &mut rng)).unwrap();
        let probes = ProbeSet::single(random(6, &mut rng)).unwrap();
        let grid = ScanGrid::new(&[(0, 0), (3, 2), (6, 6)], 6, (12, 12)).unwrap();
        let y = (0..3).map(|j| noiseless_magnitude(&x, &probes, &grid, j).unwrap()).collect();
        let meas = MeasurementSet::new(y, grid).unwrap();
        assert!(forward_nrmse(&x, &probes, &meas).unwrap() < 1e-10);
        let scaled = ComplexImage::new(x.as_array().mapv(|v| v * 3.5)).unwrap();
        assert!(forward_nrmse(&scaled, &probes, &meas).unwrap() < 1e-10);
        let other = ComplexImage::new(random(12, &mut rng)).unwrap();
        assert!(forward_nrmse(&other, &probes, &meas).unwrap() > 0.05);
    }
}
