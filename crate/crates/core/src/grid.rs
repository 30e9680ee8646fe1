//! Scan grids and the patch extraction operator `P_j` with its adjoint.

use ndarray::{s, Array2, ArrayView2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{PtychoError, Result};

/// Ordered integer patch anchors inside an image of fixed size.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanGrid {
    anchors: Vec<(usize, usize)>,
    patch_size: usize,
    image_dims: (usize, usize),
}

impl ScanGrid {
    /// Validates that every anchor keeps its patch inside the image.
    pub fn new(anchors: &[(i64, i64)], patch_size: usize, image_dims: (usize, usize)) -> Result<Self> {
        if anchors.is_empty() {
            return Err(PtychoError::InvalidParam("scan grid needs at least one anchor".into()));
        }
        if patch_size == 0 {
            return Err(PtychoError::InvalidParam("patch size must be positive".into()));
        }
        let (rows, cols) = image_dims;
        let mut out = Vec::with_capacity(anchors.len());
        for (index, &(row, col)) in anchors.iter().enumerate() {
            let fits = |a: i64, n: usize| a >= 0 && (a as usize) + patch_size <= n;
            if !fits(row, rows) || !fits(col, cols) {
                return Err(PtychoError::AnchorOutOfBounds { index, row, col, patch: patch_size, rows, cols });
            }
            out.push((row as usize, col as usize));
        }
        Ok(Self { anchors: out, patch_size, image_dims })
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn anchors(&self) -> &[(usize, usize)] {
        &self.anchors
    }

    pub fn anchor(&self, j: usize) -> Result<(usize, usize)> {
        self.anchors.get(j).copied().ok_or(PtychoError::IndexOutOfRange { index: j, len: self.anchors.len() })
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn image_dims(&self) -> (usize, usize) {
        self.image_dims
    }

    fn window(&self, j: usize) -> Result<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        let (r, c) = self.anchor(j)?;
        Ok((r..r + self.patch_size, c..c + self.patch_size))
    }

    /// Borrowing view of patch `j` of `image`.
    pub fn patch_view<'a>(&self, image: &'a Array2<Complex64>, j: usize) -> Result<ArrayView2<'a, Complex64>> {
        self.check_image(image.dim())?;
        let (rr, cc) = self.window(j)?;
        Ok(image.slice(s![rr, cc]))
    }

    /// `P_j x`: copy of the `N_p x N_p` sub-array anchored at location `j`.
    pub fn extract_patch(&self, image: &Array2<Complex64>, j: usize) -> Result<Array2<Complex64>> {
        Ok(self.patch_view(image, j)?.to_owned())
    }

    /// Real-valued variant of [`ScanGrid::extract_patch`].
    pub fn extract_real(&self, image: &Array2<f64>, j: usize) -> Result<Array2<f64>> {
        self.check_image(image.dim())?;
        let (rr, cc) = self.window(j)?;
        Ok(image.slice(s![rr, cc]).to_owned())
    }

    /// `acc += P_j^T patch`.
    pub fn insert_patch_adjoint(&self, patch: &Array2<Complex64>, j: usize, acc: &mut Array2<Complex64>) -> Result<()> {
        self.check_patch(patch.dim())?;
        self.check_image(acc.dim())?;
        let (rr, cc) = self.window(j)?;
        let mut region = acc.slice_mut(s![rr, cc]);
        region += patch;
        Ok(())
    }

    /// Real-valued variant of [`ScanGrid::insert_patch_adjoint`].
    pub fn insert_real_adjoint(&self, patch: &Array2<f64>, j: usize, acc: &mut Array2<f64>) -> Result<()> {
        self.check_patch(patch.dim())?;
        self.check_image(acc.dim())?;
        let (rr, cc) = self.window(j)?;
        let mut region = acc.slice_mut(s![rr, cc]);
        region += patch;
        Ok(())
    }

    fn check_image(&self, dim: (usize, usize)) -> Result<()> {
        if dim != self.image_dims {
            return Err(PtychoError::Shape(format!("image is {dim:?}, grid expects {:?}", self.image_dims)));
        }
        Ok(())
    }

    pub(crate) fn check_patch(&self, dim: (usize, usize)) -> Result<()> {
        if dim != (self.patch_size, self.patch_size) {
            return Err(PtychoError::Shape(format!("patch is {dim:?}, grid expects {0}x{0}", self.patch_size)));
        }
        Ok(())
    }

    /// Number of patches covering each image pixel (`sum_j P_j^T P_j 1`).
    pub fn coverage(&self) -> Array2<f64> {
        let mut count = Array2::zeros(self.image_dims);
        for &(r, c) in &self.anchors {
            count.slice_mut(s![r..r + self.patch_size, c..c + self.patch_size]).mapv_inplace(|v: f64| v + 1.0);
        }
        count
    }
}

/// Rectangular raster with independent uniform integer jitter per axis.
///
/// The raster is centered in the image; jittered anchors are clamped so
/// that every patch stays inside the image.
pub fn generate_scan_grid(
    image_dims: (usize, usize),
    patch_size: usize,
    nominal_spacing: usize,
    jitter_range: usize,
    seed: u64,
) -> Result<ScanGrid> {
    if nominal_spacing == 0 {
        return Err(PtychoError::InvalidParam("nominal spacing must be positive".into()));
    }
    if patch_size == 0 || patch_size > image_dims.0 || patch_size > image_dims.1 {
        return Err(PtychoError::InvalidParam(format!(
            "patch size {patch_size} does not fit a {}x{} image",
            image_dims.0, image_dims.1
        )));
    }
    let axis = |n: usize| -> Vec<i64> {
        let free = n - patch_size;
        let steps = free / nominal_spacing;
        let offset = (free - steps * nominal_spacing) / 2;
        (0..=steps).map(|i| (offset + i * nominal_spacing) as i64).collect()
    };
    let rows = axis(image_dims.0);
    let cols = axis(image_dims.1);
    let max_r = (image_dims.0 - patch_size) as i64;
    let max_c = (image_dims.1 - patch_size) as i64;
    let jitter = jitter_range as i64;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut anchors = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            let (dr, dc) = if jitter > 0 {
                (rng.random_range(-jitter..=jitter), rng.random_range(-jitter..=jitter))
            } else {
                (0, 0)
            };
            anchors.push(((r + dr).clamp(0, max_r), (c + dc).clamp(0, max_c)));
        }
    }
    ScanGrid::new(&anchors, patch_size, image_dims)
}

/// Diagnostic overlap: `1 - mean nearest-neighbour distance / N_p`, in `[0, 1]`.
pub fn overlap_ratio(grid: &ScanGrid) -> Result<f64> {
    let anchors = grid.anchors();
    if anchors.len() < 2 {
        return Err(PtychoError::InvalidParam("overlap ratio needs at least two anchors".into()));
    }
    let mut total = 0.0;
    for (i, &(ri, ci)) in anchors.iter().enumerate() {
        let nearest = anchors
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, &(rk, ck))| {
                let dr = ri as f64 - rk as f64;
                let dc = ci as f64 - ck as f64;
                (dr * dr + dc * dc).sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        total += nearest;
    }
    let mean = total / anchors.len() as f64;
    Ok((1.0 - mean / grid.patch_size() as f64).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(rows: usize, cols: usize) -> Array2<Complex64> {
        Array2::from_shape_fn((rows, cols), |(r, c)| Complex64::new((r * cols + c) as f64, 0.0))
    }

    fn re(a: &Array2<Complex64>) -> Vec<f64> {
        a.iter().map(|v| v.re).collect()
    }

    #[test]
    fn extract_sub_arrays() {
        let x = ramp(4, 4);
        let grid = ScanGrid::new(&[(0, 0), (2, 2)], 2, (4, 4)).unwrap();
        assert_eq!(re(&grid.extract_patch(&x, 0).unwrap()), vec![0.0, 1.0, 4.0, 5.0]);
        assert_eq!(re(&grid.extract_patch(&x, 1).unwrap()), vec![10.0, 11.0, 14.0, 15.0]);
        assert!(matches!(grid.extract_patch(&x, 2), Err(PtychoError::IndexOutOfRange { index: 2, len: 2 })));
    }

    #[test]
    fn rejects_out_of_bounds_anchor() {
        let err = ScanGrid::new(&[(0, 0), (3, 0)], 2, (4, 4)).unwrap_err();
        assert!(matches!(err, PtychoError::AnchorOutOfBounds { index: 1, .. }));
        assert!(ScanGrid::new(&[(-1, 0)], 2, (4, 4)).is_err());
    }

    #[test]
    fn adjoint_insert_places_block() {
        let grid = ScanGrid::new(&[(0, 0), (1, 1)], 2, (4, 4)).unwrap();
        let ones = Array2::from_elem((2, 2), Complex64::new(1.0, 0.0));
        let mut acc = Array2::zeros((4, 4));
        grid.insert_patch_adjoint(&ones, 0, &mut acc).unwrap();
        let expected_first: Vec<f64> = (0..16).map(|i| if i / 4 < 2 && i % 4 < 2 { 1.0 } else { 0.0 }).collect();
        assert_eq!(re(&acc), expected_first);

        grid.insert_patch_adjoint(&ones, 1, &mut acc).unwrap();
        // brute force: count how many of the two windows contain each pixel
        for r in 0..4 {
            for c in 0..4 {
                let hits = [(0usize, 0usize), (1, 1)]
                    .iter()
                    .filter(|&&(ar, ac)| r >= ar && r < ar + 2 && c >= ac && c < ac + 2)
                    .count();
                assert_eq!(acc[(r, c)].re, hits as f64);
            }
        }
        assert_eq!(acc[(1, 1)].re, 2.0);
    }

    #[test]
    fn insert_rejects_wrong_shapes() {
        let grid = ScanGrid::new(&[(0, 0)], 2, (4, 4)).unwrap();
        let mut acc = Array2::zeros((4, 4));
        let bad = Array2::zeros((3, 3));
        assert!(matches!(grid.insert_patch_adjoint(&bad, 0, &mut acc), Err(PtychoError::Shape(_))));
        let mut bad_acc = Array2::zeros((5, 4));
        let ok = Array2::zeros((2, 2));
        assert!(grid.insert_patch_adjoint(&ok, 0, &mut bad_acc).is_err());
    }

    #[test]
    fn extract_insert_extract_is_projection() {
        let x = ramp(6, 5);
        let grid = ScanGrid::new(&[(1, 2)], 3, (6, 5)).unwrap();
        let p = grid.extract_patch(&x, 0).unwrap();
        let mut acc = Array2::zeros((6, 5));
        grid.insert_patch_adjoint(&p, 0, &mut acc).unwrap();
        assert_eq!(grid.extract_patch(&acc, 0).unwrap(), p);
    }

    #[test]
    fn raster_without_jitter() {
        let grid = generate_scan_grid((256 + 36 * 4, 256 + 36 * 4), 256, 36, 0, 1).unwrap();
        assert_eq!(grid.len(), 25);
        for (i, &(r, c)) in grid.anchors().iter().enumerate() {
            assert_eq!(r, 36 * (i / 5));
            assert_eq!(c, 36 * (i % 5));
        }
    }

    #[test]
    fn jitter_stays_within_range() {
        let clean = generate_scan_grid((400, 400), 64, 36, 0, 3).unwrap();
        let jittered = generate_scan_grid((400, 400), 64, 36, 5, 3).unwrap();
        assert_eq!(clean.len(), jittered.len());
        let mut moved = false;
        for (a, b) in clean.anchors().iter().zip(jittered.anchors()) {
            assert!((a.0 as i64 - b.0 as i64).abs() <= 5);
            assert!((a.1 as i64 - b.1 as i64).abs() <= 5);
            moved |= a != b;
        }
        assert!(moved);
        assert_eq!(jittered, generate_scan_grid((400, 400), 64, 36, 5, 3).unwrap());
        assert_ne!(jittered, generate_scan_grid((400, 400), 64, 36, 5, 4).unwrap());
    }

    #[test]
    fn grid_generation_errors() {
        assert!(generate_scan_grid((10, 10), 16, 4, 0, 0).is_err());
        assert!(generate_scan_grid((10, 10), 4, 0, 0, 0).is_err());
    }

    #[test]
    fn overlap_ratio_cases() {
        let apart = ScanGrid::new(&[(0, 0), (0, 8)], 8, (8, 16)).unwrap();
        assert_eq!(overlap_ratio(&apart).unwrap(), 0.0);
        let same = ScanGrid::new(&[(0, 0), (0, 0)], 8, (8, 16)).unwrap();
        assert_eq!(overlap_ratio(&same).unwrap(), 1.0);
        let raster = generate_scan_grid((256 + 72, 256 + 72), 256, 36, 0, 0).unwrap();
        assert!((overlap_ratio(&raster).unwrap() - (1.0 - 36.0 / 256.0)).abs() < 1e-15);
        let single = ScanGrid::new(&[(0, 0)], 8, (8, 16)).unwrap();
        assert!(overlap_ratio(&single).is_err());
    }
}
