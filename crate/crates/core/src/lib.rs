//! Blind multi-mode PMACE ptychographic reconstruction.
//!
//! The crate jointly estimates a complex transmittance image and several
//! mutually incoherent probe modes from far-field diffraction magnitudes.
//! Image patches and per-location probe estimates are refined by local
//! data-fitting agents and reconciled by averaging operators, with Mann
//! iterations driving both sides toward a consensus equilibrium.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array;
pub mod driver;
pub mod error;
pub mod fft;
pub mod forward;
pub mod fresnel;
pub mod grid;
pub mod image_update;
pub mod inverse;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod probe_update;
pub mod synthetic;

pub use array::{ComplexImage, PatchStack, ProbeStack, Stack};
pub use error::{ErrorClass, PtychoError, Result};
pub use forward::{MeasurementSet, ProbeSet, SimParams};
pub use fresnel::FresnelParams;
pub use grid::ScanGrid;
