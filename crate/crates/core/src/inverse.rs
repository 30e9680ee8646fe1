//! Numerically stable element-wise inversion of diagonal operators.

use ndarray::Array2;
use num_complex::Complex64;

const RELATIVE_EPS: f64 = 1e-6;

/// `eps = 1e-6 * sqrt(mean_square)`, falling back to the smallest normal
/// positive value when the array carries no energy.
pub fn stabilizer(mean_square: f64) -> f64 {
    let eps = RELATIVE_EPS * mean_square.sqrt();
    if eps > 0.0 {
        eps
    } else {
        f64::MIN_POSITIVE
    }
}

/// `d* / (|d|^2 + eps)` element-wise.
///
/// `eps` is derived from the mean-square value of `d`, or from
/// `mean_square` when supplied.
pub fn stable_inverse(d: &Array2<Complex64>, mean_square: Option<f64>) -> Array2<Complex64> {
    let ms = mean_square.unwrap_or_else(|| d.iter().map(|v| v.norm_sqr()).sum::<f64>() / d.len().max(1) as f64);
    let eps = stabilizer(ms);
    d.mapv(|v| v.conj() / (v.norm_sqr() + eps))
}

/// Real counterpart of [`stable_inverse`], used for magnitude denominators.
pub fn stable_inverse_real(d: &Array2<f64>) -> Array2<f64> {
    let ms = d.iter().map(|v| v * v).sum::<f64>() / d.len().max(1) as f64;
    let eps = stabilizer(ms);
    d.mapv(|v| v / (v * v + eps))
}
