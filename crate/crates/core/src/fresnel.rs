//! Fresnel propagation by the transfer-function method.

use std::f64::consts::PI;

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{PtychoError, Result};
use crate::fft::{dft2, fftfreq, idft2};

/// Source wavelength, propagation distance and sample spacing, all in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FresnelParams {
    pub wavelength: f64,
    pub distance: f64,
    pub sample_spacing: f64,
}

impl FresnelParams {
    pub fn new(wavelength: f64, distance: f64, sample_spacing: f64) -> Result<Self> {
        let p = Self { wavelength, distance, sample_spacing };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in
            [("wavelength", self.wavelength), ("distance", self.distance), ("sample_spacing", self.sample_spacing)]
        {
            if !(v.is_finite() && v > 0.0) {
                return Err(PtychoError::InvalidParam(format!("fresnel {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// `H(fu, fv) = exp(-i pi wavelength distance (fu^2 + fv^2))` on the DFT grid.
pub fn transfer_function(rows: usize, cols: usize, params: &FresnelParams) -> Array2<Complex64> {
    let fu: Vec<f64> = fftfreq(rows).into_iter().map(|f| f / params.sample_spacing).collect();
    let fv: Vec<f64> = fftfreq(cols).into_iter().map(|f| f / params.sample_spacing).collect();
    let k = -PI * params.wavelength * params.distance;
    Array2::from_shape_fn((rows, cols), |(r, c)| Complex64::from_polar(1.0, k * (fu[r] * fu[r] + fv[c] * fv[c])))
}

/// Propagate a square field. The constant phase `exp(i 2 pi z / wavelength)`
/// is omitted.
pub fn fresnel_propagate(field: &Array2<Complex64>, params: &FresnelParams) -> Result<Array2<Complex64>> {
    params.validate()?;
    let (rows, cols) = field.dim();
    if rows != cols {
        return Err(PtychoError::Shape(format!("fresnel propagation needs a square field, got {rows}x{cols}")));
    }
    let h = transfer_function(rows, cols, params);
    let mut spectrum = dft2(field);
    Zip::from(&mut spectrum).and(&h).for_each(|s, &t| *s *= t);
    Ok(idft2(&spectrum))
}
