//! Error types for the simulation and inference layers.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("physical constant {name} must be strictly positive, got {value}")]
    InvalidConstant { name: &'static str, value: f64 },
    #[error("charge density must be finite and non-negative, got {ppm} ppm")]
    NegativeDensity { ppm: f64 },
    #[error("magnitude pdf is defined for e_tilde > 0, got {e_tilde}")]
    PdfDomain { e_tilde: f64 },
    #[error("Monte Carlo sampling needs at least one charge")]
    NoCharges,
    #[error("calibration needs at least {required} samples, got {got}")]
    InsufficientSamples { got: usize, required: usize },
    #[error("rho_eff/rho_c ratio must be positive, got {ratio}")]
    NonPositiveRatio { ratio: f64 },
}

#[derive(Debug, Error)]
pub enum SpectrumError {
    #[error("sample parameter {name} out of range: {detail}")]
    InvalidParam { name: &'static str, detail: String },
}

#[derive(Debug, Error)]
pub enum FitError {
    #[error("peaks unresolved: {0}")]
    PeaksUnresolved(String),
    #[error("{unresolved} of {trials} noise trials had unresolved peaks (limit 10%)")]
    TooManyUnresolved { unresolved: usize, trials: usize },
    #[error("Monte Carlo uncertainty needs at least {required} trials, got {got}")]
    TooFewTrials { got: usize, required: usize },
    #[error("Lorentzian fit did not converge on the {side} peak")]
    LineFitDiverged { side: &'static str },
    #[error("optimizer did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("need at least {required} observations, got {got}")]
    TooFewObservations { got: usize, required: usize },
    #[error("observation {index} has non-positive uncertainty {sigma}")]
    BadSigma { index: usize, sigma: f64 },
    #[error("Jacobian is singular around the optimum")]
    SingularJacobian,
    #[error("arcsin argument {value} outside (0, 1]: slope·elbow/e0 inconsistent")]
    ElbowDomain { value: f64 },
}

#[derive(Debug, Error)]
pub enum SensitivityError {
    #[error("protocol parameter {name} out of range: {detail}")]
    InvalidParam { name: &'static str, detail: String },
    #[error("count rate must be positive, got {rate}")]
    ZeroCountRate { rate: f64 },
}
