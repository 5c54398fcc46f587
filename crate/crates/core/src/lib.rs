//! Simulation and inference toolkit for ensemble NV electrometry.
//!
//! The crate models the statistics of internal electric fields produced by
//! random lattice charges, synthesizes resonant and off-resonant ODMR
//! spectra from them, extracts excited-state electric-field susceptibilities
//! from spectral splittings, and budgets DC electric-field sensitivity
//! across NV densities.
//!
//! Sign convention used throughout: positive optical detuning is *below* the
//! zero-phonon line.

pub mod constants;
mod error;
pub mod field;
pub mod fit;
pub mod numerics;
pub mod peaks;
pub mod sensitivity;
pub mod spectrum;
pub mod theory;

pub use constants::{ChargeDensity, PhysicalConstants};
pub use error::{FieldError, FitError, SensitivityError, SpectrumError};
pub use field::{FieldDistribution, FieldVector, McConfig};
pub use fit::{FitResult, PeakSummary};
pub use peaks::PeakExtraction;
pub use sensitivity::{ProtocolParams, SensitivityBreakdown};
pub use spectrum::{BroadeningParams, SampleParams, Spectrum, TemperaturePreset};
pub use theory::OrbitalInputs;
