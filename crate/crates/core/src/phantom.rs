//! Synthetic transmittance phantoms and probe modes.

use std::f64::consts::PI;

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::array::{norm_sqr, ComplexImage};
use crate::error::{PtychoError, Result};
use crate::fresnel::{fresnel_propagate, FresnelParams};

/// Shape count and contrast of a [`piecewise_phantom`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub shapes: usize,
    /// Shape magnitudes are drawn from `[min_magnitude, 1)`.
    pub min_magnitude: f64,
    /// Shape phases are drawn from `[-max_phase, max_phase)`.
    pub max_phase: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec { shapes: 8, min_magnitude: 0.5, max_phase: 1.2 }
    }
}

/// Piecewise-constant complex transmittance: a uniform background with
/// randomly placed ellipses and rectangles of distinct magnitude and phase.
pub fn piecewise_phantom(rows: usize, cols: usize, spec: &PhantomSpec, seed: u64) -> Result<ComplexImage> {
    if rows == 0 || cols == 0 {
        return Err(PtychoError::InvalidParam("phantom must be non-empty".into()));
    }
    if !(spec.min_magnitude > 0.0 && spec.min_magnitude < 1.0) || !(spec.max_phase > 0.0 && spec.max_phase <= PI) {
        return Err(PtychoError::InvalidParam("phantom contrast out of range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut image = Array2::from_elem((rows, cols), Complex64::from_polar(0.9, 0.0));
    let (fr, fc) = (rows as f64, cols as f64);
    for i in 0..spec.shapes {
        let cr = rng.random_range(0.1..0.9) * fr;
        let cc = rng.random_range(0.1..0.9) * fc;
        let hr = rng.random_range(0.06..0.22) * fr;
        let hc = rng.random_range(0.06..0.22) * fc;
        let value = Complex64::from_polar(
            rng.random_range(spec.min_magnitude..1.0),
            rng.random_range(-spec.max_phase..spec.max_phase),
        );
        let ellipse = i % 2 == 0;
        for r in 0..rows {
            for c in 0..cols {
                let dr = (r as f64 - cr) / hr;
                let dc = (c as f64 - cc) / hc;
                let inside = if ellipse { dr * dr + dc * dc <= 1.0 } else { dr.abs() <= 1.0 && dc.abs() <= 1.0 };
                if inside {
                    image[(r, c)] = value;
                }
            }
        }
    }
    ComplexImage::new(image)
}

/// Circular aperture with a raised-cosine rim, propagated to the sample.
///
/// `radius` and `rim` are fractions of the probe size.
pub fn aperture_probe(size: usize, radius: f64, rim: f64, fresnel: &FresnelParams) -> Result<Array2<Complex64>> {
    if size == 0 || !(radius > 0.0) || !(rim >= 0.0) {
        return Err(PtychoError::InvalidParam("aperture needs positive size and radius".into()));
    }
    let centre = size as f64 / 2.0;
    let (r0, width) = (radius * size as f64, rim * size as f64);
    let aperture = Array2::from_shape_fn((size, size), |(r, c)| {
        let d = ((r as f64 - centre).powi(2) + (c as f64 - centre).powi(2)).sqrt();
        let a = if d <= r0 {
            1.0
        } else if d >= r0 + width {
            0.0
        } else {
            0.5 * (1.0 + (PI * (d - r0) / width).cos())
        };
        Complex64::new(a, 0.0)
    });
    fresnel_propagate(&aperture, fresnel)
}

/// Gaussian beam of width `sigma` (a fraction of the probe size),
/// propagated to the sample.
pub fn gaussian_probe(size: usize, sigma: f64, fresnel: &FresnelParams) -> Result<Array2<Complex64>> {
    if size == 0 || !(sigma > 0.0) {
        return Err(PtychoError::InvalidParam("gaussian probe needs positive size and width".into()));
    }
    let centre = size as f64 / 2.0;
    let s = sigma * size as f64;
    let beam = Array2::from_shape_fn((size, size), |(r, c)| {
        let d2 = (r as f64 - centre).powi(2) + (c as f64 - centre).powi(2);
        Complex64::new((-d2 / (2.0 * s * s)).exp(), 0.0)
    });
    fresnel_propagate(&beam, fresnel)
}

/// A companion mode orthogonal to `primary`: the primary weighted by the
/// squared distance from the centre, with its primary component removed
/// (a radial, ring-like second mode).
pub fn companion_mode(primary: &Array2<Complex64>) -> Array2<Complex64> {
    let (rows, cols) = primary.dim();
    let (mr, mc) = (rows as f64 / 2.0, cols as f64 / 2.0);
    let weighted = Array2::from_shape_fn((rows, cols), |(r, c)| {
        let d2 = ((r as f64 - mr).powi(2) + (c as f64 - mc).powi(2)) / (mr * mc).max(1.0);
        primary[(r, c)] * d2
    });
    let e = norm_sqr(primary);
    if !(e > 0.0) {
        return weighted;
    }
    let proj = crate::array::inner(primary, &weighted) / e;
    Zip::from(&weighted).and(primary).map_collect(|&w, &p| w - p * proj)
}

/// Scale `modes` so that they carry `fractions` of `total` energy.
pub fn split_energy(modes: &[Array2<Complex64>], fractions: &[f64], total: f64) -> Result<Vec<Array2<Complex64>>> {
    if modes.len() != fractions.len() {
        return Err(PtychoError::InvalidParam("one energy fraction per mode".into()));
    }
    modes
        .iter()
        .zip(fractions)
        .map(|(m, &f)| {
            let e = norm_sqr(m);
            if !(e > 0.0) {
                return Err(PtychoError::ZeroEnergy("cannot rescale an empty mode".into()));
            }
            let s = (f * total / e).sqrt();
            Ok(m.mapv(|v| v * s))
        })
        .collect()
}
