//! Orthonormal 2D DFT with the zero frequency at index `(0, 0)`.

use std::cell::RefCell;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn transform_rows(data: &mut Array2<Complex64>, direction: FftDirection) {
    let cols = data.ncols();
    let fft = PLANNER.with(|p| p.borrow_mut().plan_fft(cols, direction));
    // rows of a standard-layout array are contiguous; rustfft walks the
    // buffer in chunks of the transform length
    let slice = data.as_slice_mut().expect("transform_rows requires standard layout");
    fft.process(slice);
}

fn transform(field: &Array2<Complex64>, direction: FftDirection) -> Array2<Complex64> {
    let (rows, cols) = field.dim();
    let mut work = field.as_standard_layout().into_owned();
    transform_rows(&mut work, direction);
    let mut t = work.reversed_axes().as_standard_layout().into_owned();
    transform_rows(&mut t, direction);
    let scale = 1.0 / ((rows * cols) as f64).sqrt();
    let mut out = t.reversed_axes().as_standard_layout().into_owned();
    out.mapv_inplace(|v| v * scale);
    out
}

/// Unitary forward DFT.
pub fn dft2(field: &Array2<Complex64>) -> Array2<Complex64> {
    transform(field, FftDirection::Forward)
}

/// Unitary inverse DFT, the adjoint of [`dft2`].
pub fn idft2(field: &Array2<Complex64>) -> Array2<Complex64> {
    transform(field, FftDirection::Inverse)
}

fn roll<T: Clone>(a: &Array2<T>, shift_r: usize, shift_c: usize) -> Array2<T> {
    let (rows, cols) = a.dim();
    Array2::from_shape_fn((rows, cols), |(r, c)| a[((r + rows - shift_r) % rows, (c + cols - shift_c) % cols)].clone())
}

/// Move the zero-frequency bin from `(0, 0)` to the array center.
pub fn fftshift<T: Clone>(a: &Array2<T>) -> Array2<T> {
    let (rows, cols) = a.dim();
    roll(a, rows / 2, cols / 2)
}

/// Inverse of [`fftshift`].
pub fn ifftshift<T: Clone>(a: &Array2<T>) -> Array2<T> {
    let (rows, cols) = a.dim();
    roll(a, rows - rows / 2, cols - cols / 2)
}

/// Signed DFT sample frequencies in cycles per sample, numpy `fftfreq` order.
pub fn fftfreq(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let signed = if k < n.div_ceil(2) { k as i64 } else { k as i64 - n as i64 };
            signed as f64 / n as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::norm_sqr;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    /// Direct O(N^4) evaluation of the orthonormal DFT.
    fn naive_dft(f: &Array2<Complex64>) -> Array2<Complex64> {
        let (m, n) = f.dim();
        let tau = 2.0 * std::f64::consts::PI;
        Array2::from_shape_fn((m, n), |(u, v)| {
            let mut acc = Complex64::new(0.0, 0.0);
            for r in 0..m {
                for c in 0..n {
                    let phase = -tau * ((u * r) as f64 / m as f64 + (v * c) as f64 / n as f64);
                    acc += f[(r, c)] * Complex64::from_polar(1.0, phase);
                }
            }
            acc / ((m * n) as f64).sqrt()
        })
    }

    #[test]
    fn matches_direct_sum_on_rectangle() {
        let f = random(4, 6, 9);
        let fast = dft2(&f);
        let slow = naive_dft(&f);
        for (a, b) in fast.iter().zip(slow.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn parseval_and_round_trip() {
        let f = random(8, 8, 1);
        let g = dft2(&f);
        let rel = (norm_sqr(&g).sqrt() - norm_sqr(&f).sqrt()).abs() / norm_sqr(&f).sqrt();
        assert!(rel < 1e-12);
        let back = idft2(&g);
        let err: f64 = back.iter().zip(f.iter()).map(|(a, b)| (a - b).norm_sqr()).sum();
        assert!(err.sqrt() / norm_sqr(&f).sqrt() < 1e-12);
    }

    #[test]
    fn delta_maps_to_constant() {
        let n = 8;
        let mut f = Array2::zeros((n, n));
        f[(0, 0)] = Complex64::new(1.0, 0.0);
        for v in dft2(&f).iter() {
            assert!((v - Complex64::new(1.0 / n as f64, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn shifts_are_inverse() {
        let f = random(5, 6, 2);
        assert_eq!(ifftshift(&fftshift(&f)), f);
        let mut d = Array2::zeros((4, 4));
        d[(0, 0)] = 1.0;
        assert_eq!(fftshift(&d)[(2, 2)], 1.0);
    }

    #[test]
    fn fftfreq_ordering() {
        assert_eq!(fftfreq(4), vec![0.0, 0.25, -0.5, -0.25]);
        assert_eq!(fftfreq(5), vec![0.0, 0.2, 0.4, -0.4, -0.2]);
    }
}
