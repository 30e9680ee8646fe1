//! Complex 2D arrays and stacks of equally sized patches.

use ndarray::{Array2, Zip};
use num_complex::Complex64;

use crate::error::{PtychoError, Result};

/// A complex transmittance image or a single probe mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage(Array2<Complex64>);

impl ComplexImage {
    pub fn new(data: Array2<Complex64>) -> Result<Self> {
        let (rows, cols) = data.dim();
        if rows == 0 || cols == 0 {
            return Err(PtychoError::Shape(format!("image must be non-empty, got {rows}x{cols}")));
        }
        if !all_finite(&data) {
            return Err(PtychoError::InvalidParam("image contains NaN or Inf".into()));
        }
        Ok(Self(data))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self(Array2::zeros((rows, cols)))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn as_array(&self) -> &Array2<Complex64> {
        &self.0
    }

    pub fn as_array_mut(&mut self) -> &mut Array2<Complex64> {
        &mut self.0
    }

    pub fn into_array(self) -> Array2<Complex64> {
        self.0
    }
}

/// J equally shaped complex arrays, one per scan location.
///
/// Used both for image patch states and for per-location probe estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Stack {
    items: Vec<Array2<Complex64>>,
}

pub type PatchStack = Stack;
pub type ProbeStack = Stack;

impl Stack {
    pub fn new(items: Vec<Array2<Complex64>>) -> Result<Self> {
        let Some(first) = items.first() else {
            return Err(PtychoError::Shape("stack must hold at least one array".into()));
        };
        let dim = first.dim();
        if let Some((j, a)) = items.iter().enumerate().find(|(_, a)| a.dim() != dim) {
            return Err(PtychoError::Shape(format!("stack entry {j} has shape {:?}, expected {dim:?}", a.dim())));
        }
        Ok(Self { items })
    }

    /// `count` copies of one array.
    pub fn replicate(item: &Array2<Complex64>, count: usize) -> Self {
        Self { items: vec![item.clone(); count.max(1)] }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.items[0].dim()
    }

    pub fn get(&self, j: usize) -> &Array2<Complex64> {
        &self.items[j]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Array2<Complex64>> {
        self.items.iter()
    }

    pub fn as_slice(&self) -> &[Array2<Complex64>] {
        &self.items
    }

    pub fn into_vec(self) -> Vec<Array2<Complex64>> {
        self.items
    }

    fn check_same(&self, other: &Stack) -> Result<()> {
        if self.len() != other.len() || self.dim() != other.dim() {
            return Err(PtychoError::Shape(format!(
                "stacks differ: {}x{:?} vs {}x{:?}",
                self.len(),
                self.dim(),
                other.len(),
                other.dim()
            )));
        }
        Ok(())
    }

    /// Element-wise `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &Stack, b: f64) -> Result<Stack> {
        self.check_same(other)?;
        let items = self
            .items
            .iter()
            .zip(&other.items)
            .map(|(x, y)| Zip::from(x).and(y).map_collect(|&p, &q| p * a + q * b))
            .collect();
        Ok(Stack { items })
    }

    /// Squared 2-norm of the whole stack.
    pub fn norm_sqr(&self) -> f64 {
        self.items.iter().map(norm_sqr).sum()
    }

    /// 2-norm of `self - other` over the whole stack.
    pub fn distance(&self, other: &Stack) -> Result<f64> {
        self.check_same(other)?;
        let d: f64 = self
            .items
            .iter()
            .zip(&other.items)
            .map(|(x, y)| Zip::from(x).and(y).fold(0.0, |acc, &p, &q| acc + (p - q).norm_sqr()))
            .sum();
        Ok(d.sqrt())
    }

    pub fn scale(&mut self, factor: f64) {
        for a in &mut self.items {
            a.mapv_inplace(|v| v * factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.items.iter().all(all_finite)
    }
}

impl std::ops::Index<usize> for Stack {
    type Output = Array2<Complex64>;

    fn index(&self, j: usize) -> &Self::Output {
        &self.items[j]
    }
}

pub fn norm_sqr(a: &Array2<Complex64>) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum()
}

/// Inner product `<a, b>`, conjugate-linear in `a`.
pub fn inner(a: &Array2<Complex64>, b: &Array2<Complex64>) -> Complex64 {
    Zip::from(a).and(b).fold(Complex64::new(0.0, 0.0), |acc, &p, &q| acc + p.conj() * q)
}

pub fn all_finite(a: &Array2<Complex64>) -> bool {
    a.iter().all(|v| v.re.is_finite() && v.im.is_finite())
}

/// Promote a real array to complex.
pub fn to_complex(a: &Array2<f64>) -> Array2<Complex64> {
    a.mapv(|v| Complex64::new(v, 0.0))
}
