//! Resonant and off-resonant ODMR spectrum synthesis.
//!
//! The excited-state branches shift with the local field as
//! Δν_{U,L} = χ^e_∥·E_∥ ∓ χ^e_⊥·E_⊥ (positive detuning is below the ZPL).
//! A configuration is resonantly driven when a branch sits within γ_e/2 of
//! the drive, and off-resonantly driven (phonon-sideband) for every branch
//! the drive sits above. Spectra are integrals of a primitive ground-state
//! lineshape over the resonant or off-resonant subset of the isotropic field
//! ensemble.
//!
//! The synthesis never grids (E, θ) in two dimensions. For each field
//! magnitude the resonance condition is solved for exact θ-intervals (the
//! cone cuts each sphere in a circle), their sin θ measure is pushed onto a
//! splitting histogram, the inhomogeneous kernel maps that histogram onto a
//! line-position density via u = √(ω² − Π²) cells with exact Lorentzian
//! masses, and one homogeneous convolution lands everything on the microwave
//! grid. The singular √ Jacobian of the lineshape never appears explicitly:
//! the u substitution absorbs it.

use serde::{Deserialize, Serialize};

use crate::constants::ChargeDensity;
use crate::field::FieldDistribution;
use crate::numerics::integrate;
use crate::{FieldVector, SpectrumError};

/// Hyperfine triple of the ¹⁴N host nucleus, as effective magnetic shifts
/// (MHz).
pub const DEFAULT_HYPERFINE_MHZ: [f64; 3] = [0.0, 2.16, -2.16];

/// All physical parameters of one sample / measurement configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleParams {
    /// Total charge density.
    pub rho_c: ChargeDensity,
    /// Ground-state transverse susceptibility (Hz/(V/cm)).
    pub chi_g_perp: f64,
    /// Ground-state longitudinal susceptibility (Hz/(V/cm)).
    pub chi_g_par: f64,
    /// Excited-state transverse susceptibility (MHz/(V/cm)).
    pub chi_e_perp: f64,
    /// Excited-state longitudinal susceptibility (MHz/(V/cm)).
    pub chi_e_par: f64,
    /// Ground-state zero-field splitting (GHz); presentation only.
    pub delta_zfs_ghz: f64,
    /// Effective hyperfine shifts (MHz), symmetric about zero.
    pub hyperfine_shifts_mhz: [f64; 3],
    /// Single-NV optical linewidth including power broadening (MHz). Sets
    /// absolute resonant fractions, not lineshapes.
    pub gamma_e_single_mhz: f64,
    /// Relative contrast factor between resonant and off-resonant
    /// contributions.
    pub epsilon_c: f64,
    /// Fluorescence enhancement factor of the resonant mechanism.
    pub epsilon_r_enh: f64,
}

impl Default for SampleParams {
    fn default() -> Self {
        Self {
            rho_c: ChargeDensity::from_ppm(15.0).unwrap(),
            chi_g_perp: 17.0,
            chi_g_par: 0.35,
            chi_e_perp: 1.43,
            chi_e_par: 0.68,
            delta_zfs_ghz: 2.879,
            hyperfine_shifts_mhz: DEFAULT_HYPERFINE_MHZ,
            gamma_e_single_mhz: 30.0,
            epsilon_c: 1.0e4,
            epsilon_r_enh: 1.0e5,
        }
    }
}

impl SampleParams {
    /// Validates invariants; returns configuration warnings (non-fatal).
    pub fn validate(&self) -> Result<Vec<String>, SpectrumError> {
        let positive = [
            ("chi_g_perp", self.chi_g_perp),
            ("chi_g_par", self.chi_g_par),
            ("chi_e_perp", self.chi_e_perp),
            ("chi_e_par", self.chi_e_par),
            ("gamma_e_single_mhz", self.gamma_e_single_mhz),
            ("delta_zfs_ghz", self.delta_zfs_ghz),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SpectrumError::InvalidParam {
                    name,
                    detail: format!("must be strictly positive, got {v}"),
                });
            }
        }
        for (name, v) in [("epsilon_c", self.epsilon_c), ("epsilon_r_enh", self.epsilon_r_enh)] {
            if !(v >= 0.0) {
                return Err(SpectrumError::InvalidParam {
                    name,
                    detail: format!("must be non-negative, got {v}"),
                });
            }
        }
        let mut hf = self.hyperfine_shifts_mhz;
        hf.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if (hf[0] + hf[2]).abs() > 1e-9 || hf[1].abs() > 1e-9 {
            return Err(SpectrumError::InvalidParam {
                name: "hyperfine_shifts_mhz",
                detail: format!("must be symmetric about zero, got {:?}", self.hyperfine_shifts_mhz),
            });
        }
        if self.gamma_e_single_mhz >= self.delta_zfs_ghz * 1e3 {
            return Err(SpectrumError::InvalidParam {
                name: "gamma_e_single_mhz",
                detail: "single-NV optical linewidth must stay below the zero-field splitting \
                         (inverted-contrast regime)"
                    .to_string(),
            });
        }
        let mut warnings = Vec::new();
        if self.rho_c.ppm() < 0.01 {
            warnings.push(format!(
                "rho_c = {} ppm: below ~10 ppb the transverse Stark splitting no longer \
                 dominates spin-orbit fine structure and the two-branch model degrades",
                self.rho_c.ppm()
            ));
        }
        Ok(warnings)
    }

    fn chi_e_par_ghz(&self) -> f64 {
        self.chi_e_par / 1e3
    }

    fn chi_e_perp_ghz(&self) -> f64 {
        self.chi_e_perp / 1e3
    }

    /// Ground-state splitting (MHz) for a transverse field in V/cm.
    fn splitting_mhz(&self, e_perp_vcm: f64) -> f64 {
        self.chi_g_perp * e_perp_vcm / 1e6
    }
}

/// Lorentzian broadening parameters (all FWHM, MHz) for the resonant and
/// off-resonant contributions.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BroadeningParams {
    pub kappa_ih_res_mhz: f64,
    pub kappa_h_res_mhz: f64,
    pub kappa_ih_offres_mhz: f64,
    pub kappa_h_offres_mhz: f64,
}

impl Default for BroadeningParams {
    fn default() -> Self {
        // Calibration values measured at low microwave power.
        Self {
            kappa_ih_res_mhz: 1.7,
            kappa_h_res_mhz: 1.0,
            kappa_ih_offres_mhz: 1.7,
            kappa_h_offres_mhz: 1.0,
        }
    }
}

impl BroadeningParams {
    pub fn validate(&self) -> Result<(), SpectrumError> {
        let pairs = [
            ("resonant", self.kappa_ih_res_mhz, self.kappa_h_res_mhz),
            ("off-resonant", self.kappa_ih_offres_mhz, self.kappa_h_offres_mhz),
        ];
        for (name, ih, h) in pairs {
            if !(ih >= 0.0) || !(h >= 0.0) {
                return Err(SpectrumError::InvalidParam {
                    name: "broadening",
                    detail: format!("{name} widths must be non-negative, got ({ih}, {h})"),
                });
            }
            if ih == 0.0 && h == 0.0 {
                return Err(SpectrumError::InvalidParam {
                    name: "broadening",
                    detail: format!("{name} pair needs at least one positive width"),
                });
            }
        }
        Ok(())
    }

    fn resonant(&self) -> (f64, f64) {
        (self.kappa_ih_res_mhz, self.kappa_h_res_mhz)
    }

    fn offresonant(&self) -> (f64, f64) {
        (self.kappa_ih_offres_mhz, self.kappa_h_offres_mhz)
    }
}

/// Named broadening/contrast presets from the temperature-dependent fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TemperaturePreset {
    T5K,
    T40K,
    T55K,
    T100K,
}

impl TemperaturePreset {
    /// (broadening, ε_C) for this temperature.
    pub fn params(self) -> (BroadeningParams, f64) {
        let (kh_r, kih_r, kh_or, kih_or, eps_c) = match self {
            TemperaturePreset::T5K => (2.0, 4.0, 20.0, 27.0, 1.0e4),
            TemperaturePreset::T40K => (2.0, 4.0, 16.0, 16.0, 4.0e3),
            TemperaturePreset::T55K => (2.0, 4.0, 12.0, 15.0, 1.7e3),
            TemperaturePreset::T100K => (2.0, 4.0, 9.0, 8.0, 1.7e3),
        };
        (
            BroadeningParams {
                kappa_ih_res_mhz: kih_r,
                kappa_h_res_mhz: kh_r,
                kappa_ih_offres_mhz: kih_or,
                kappa_h_offres_mhz: kh_or,
            },
            eps_c,
        )
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "5K" | "5k" => Some(TemperaturePreset::T5K),
            "40K" | "40k" => Some(TemperaturePreset::T40K),
            "55K" | "55k" => Some(TemperaturePreset::T55K),
            "100K" | "100k" => Some(TemperaturePreset::T100K),
            _ => None,
        }
    }
}

/// A tabulated ODMR trace: microwave offset from Δ_ZFS vs. signed contrast
/// (positive = inverted peak).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    mw_offset_mhz: Vec<f64>,
    signal: Vec<f64>,
}

impl Spectrum {
    pub fn new(mw_offset_mhz: Vec<f64>, signal: Vec<f64>) -> Result<Self, SpectrumError> {
        if mw_offset_mhz.len() != signal.len() || mw_offset_mhz.len() < 2 {
            return Err(SpectrumError::InvalidParam {
                name: "spectrum",
                detail: format!(
                    "grid and signal lengths must match and hold at least 2 points, got {} and {}",
                    mw_offset_mhz.len(),
                    signal.len()
                ),
            });
        }
        if mw_offset_mhz.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SpectrumError::InvalidParam {
                name: "spectrum",
                detail: "mw_offset grid must be strictly increasing".to_string(),
            });
        }
        if signal.iter().any(|s| !s.is_finite()) {
            return Err(SpectrumError::InvalidParam {
                name: "spectrum",
                detail: "signal must be finite everywhere".to_string(),
            });
        }
        Ok(Self {
            mw_offset_mhz,
            signal,
        })
    }

    pub fn mw_offset_mhz(&self) -> &[f64] {
        &self.mw_offset_mhz
    }

    pub fn signal(&self) -> &[f64] {
        &self.signal
    }

    pub fn len(&self) -> usize {
        self.signal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signal.is_empty()
    }
}

/// Resonant and off-resonant configuration fractions at one detuning,
/// normalized by the total number of configurations. Each branch can count
/// once, so both range over [0, 2].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfigFractions {
    pub f_resonant: f64,
    pub f_offresonant: f64,
}

/// Quadrature and grid controls for the synthesis pipeline.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisConfig {
    /// Half-width of the microwave grid (MHz).
    pub grid_half_width_mhz: f64,
    /// Grid spacing (MHz).
    pub grid_step_mhz: f64,
    /// Upper cutoff of the field integral in normalized units Ẽ = E/E_ref.
    pub e_tilde_max: f64,
    /// Nodes for the logarithmic field segment.
    pub n_field_nodes: usize,
    /// Target θ sub-interval width (radians) when depositing band measure.
    pub theta_step_rad: f64,
    /// Internal histogram bin width (MHz) for splitting and line-position
    /// densities.
    pub bin_step_mhz: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            grid_half_width_mhz: 15.0,
            grid_step_mhz: 0.03,
            e_tilde_max: 2000.0,
            n_field_nodes: 320,
            theta_step_rad: 0.01,
            bin_step_mhz: 0.03,
        }
    }
}

impl SynthesisConfig {
    /// Narrow grid used inside the susceptibility fit loop.
    pub fn for_fitting() -> Self {
        Self {
            grid_half_width_mhz: 12.0,
            ..Self::default()
        }
    }

    /// Wide grid for temperature-preset spectra.
    pub fn for_presets() -> Self {
        Self {
            grid_half_width_mhz: 60.0,
            grid_step_mhz: 0.06,
            bin_step_mhz: 0.06,
            ..Self::default()
        }
    }

    /// Same pipeline at `factor`× finer resolution on every internal knob;
    /// used by convergence checks.
    pub fn refined(&self, factor: f64) -> Self {
        Self {
            grid_half_width_mhz: self.grid_half_width_mhz,
            grid_step_mhz: self.grid_step_mhz,
            e_tilde_max: self.e_tilde_max * factor,
            n_field_nodes: (self.n_field_nodes as f64 * factor).round() as usize,
            theta_step_rad: self.theta_step_rad / factor,
            bin_step_mhz: self.bin_step_mhz / factor,
        }
    }

    fn omega_grid(&self) -> Vec<f64> {
        let k = (self.grid_half_width_mhz / self.grid_step_mhz).round() as i64;
        (-k..=k).map(|j| j as f64 * self.grid_step_mhz).collect()
    }
}

/// Fraction below which the resonant measure is reported as out of reach of
/// the field distribution.
pub const RESONANT_MEASURE_FLOOR: f64 = 1e-8;

/// A synthesized one-sided contribution (resonant or off-resonant).
#[derive(Debug, Clone)]
pub struct SynthesizedSpectrum {
    pub spectrum: Spectrum,
    /// Configuration fraction of this mechanism (F_R or F_OR).
    pub fraction: f64,
    /// True when the resonant measure fell below [`RESONANT_MEASURE_FLOOR`].
    pub low_measure: bool,
}

/// The full signed spectrum with its bookkeeping.
#[derive(Debug, Clone)]
pub struct TotalSpectrum {
    pub spectrum: Spectrum,
    pub fractions: ConfigFractions,
    pub low_measure: bool,
}

/// Shift of each excited-state branch (GHz), upper then lower:
/// Δν_{U,L} = χ^e_∥E_∥ ∓ χ^e_⊥E_⊥.
pub fn excited_branch_shifts(field: &FieldVector, params: &SampleParams) -> (f64, f64) {
    let par = params.chi_e_par_ghz() * field.e_par_vcm;
    let perp = params.chi_e_perp_ghz() * field.e_perp_vcm;
    (par - perp, par + perp)
}

/// Counts how many branches are resonant with the drive and how many are
/// phonon-sideband (off-resonant) excitable: resonant when within γ_e/2 of
/// the drive, off-resonant when the drive lies above the branch by more than
/// γ_e/2 in energy.
pub fn resonance_indicators(
    field: &FieldVector,
    detuning_ghz: f64,
    params: &SampleParams,
) -> (u8, u8) {
    let (upper, lower) = excited_branch_shifts(field, params);
    let half_gamma_ghz = 0.5 * params.gamma_e_single_mhz / 1e3;
    let mut d_r = 0;
    let mut d_or = 0;
    for branch in [upper, lower] {
        if (detuning_ghz - branch).abs() <= half_gamma_ghz {
            d_r += 1;
        }
        // Positive detuning is below the ZPL, so the drive sits above the
        // branch in energy when the branch detuning exceeds the drive's.
        if branch - detuning_ghz > half_gamma_ghz {
            d_or += 1;
        }
    }
    (d_r, d_or)
}

fn lorentzian(x: f64, fwhm: f64) -> f64 {
    let hw = 0.5 * fwhm;
    hw / (std::f64::consts::PI * (x * x + hw * hw))
}

/// Ground-state lineshape with inhomogeneous broadening alone; zero for
/// |ω| ≤ χ^g_⊥E_⊥, a Jacobian-weighted Lorentzian sum over the hyperfine
/// triple above it.
pub fn lineshape_ih(omega_mhz: f64, e_perp_vcm: f64, kappa_ih_mhz: f64, params: &SampleParams) -> f64 {
    let pi_split = params.splitting_mhz(e_perp_vcm);
    let w = omega_mhz.abs();
    if w <= pi_split {
        return 0.0;
    }
    let u = (omega_mhz * omega_mhz - pi_split * pi_split).sqrt();
    let hw = 0.5 * kappa_ih_mhz;
    params
        .hyperfine_shifts_mhz
        .iter()
        .map(|b| {
            let d = b.abs() - u;
            hw * w / (std::f64::consts::PI * u * (d * d + hw * hw))
        })
        .sum()
}

/// Primitive lineshape Λ(ω; E_⊥): the inhomogeneous form convolved with the
/// homogeneous Lorentzian of FWHM κ_H. Direct adaptive quadrature on
/// u = √(ω′² − Π²), which absorbs the edge singularity.
pub fn primitive_lineshape(
    omega_mhz: f64,
    e_perp_vcm: f64,
    kappa_ih_mhz: f64,
    kappa_h_mhz: f64,
    params: &SampleParams,
) -> f64 {
    let pi_split = params.splitting_mhz(e_perp_vcm);
    if kappa_h_mhz == 0.0 {
        return lineshape_ih(omega_mhz, e_perp_vcm, kappa_ih_mhz, params);
    }
    if kappa_ih_mhz == 0.0 {
        // δ inhomogeneous kernel: lines exactly at ±√(Π² + b²).
        return params
            .hyperfine_shifts_mhz
            .iter()
            .map(|b| {
                let s = (pi_split * pi_split + b * b).sqrt();
                0.5 * (lorentzian(omega_mhz - s, kappa_h_mhz)
                    + lorentzian(omega_mhz + s, kappa_h_mhz))
            })
            .sum();
    }
    let b_max = params
        .hyperfine_shifts_mhz
        .iter()
        .fold(0.0_f64, |m, b| m.max(b.abs()));
    let u_star = (omega_mhz * omega_mhz - pi_split * pi_split).max(0.0).sqrt();
    let u_max = ((omega_mhz.abs() + 60.0 * kappa_h_mhz).powi(2) - pi_split * pi_split)
        .max(0.0)
        .sqrt()
        .max(b_max + 60.0 * kappa_ih_mhz)
        + 60.0 * kappa_ih_mhz;
    let f = |u: f64| -> f64 {
        let s = (u * u + pi_split * pi_split).sqrt();
        let conv = lorentzian(omega_mhz - s, kappa_h_mhz) + lorentzian(omega_mhz + s, kappa_h_mhz);
        let ih: f64 = params
            .hyperfine_shifts_mhz
            .iter()
            .map(|b| lorentzian(u - b.abs(), kappa_ih_mhz))
            .sum();
        ih * conv
    };
    let mut breakpoints = vec![u_star];
    for b in params.hyperfine_shifts_mhz {
        breakpoints.push(b.abs());
        breakpoints.push(b.abs() + 5.0 * kappa_ih_mhz);
    }
    breakpoints.push(u_star + 5.0 * kappa_h_mhz);
    if u_star > 5.0 * kappa_h_mhz {
        breakpoints.push(u_star - 5.0 * kappa_h_mhz);
    }
    integrate(&f, 0.0, u_max, &breakpoints, 1e-8, 1e-14)
}

/// One θ range that satisfies a band condition, with its exact sin θ measure.
#[derive(Debug, Clone, Copy)]
struct ThetaInterval {
    lo: f64,
    hi: f64,
}

/// Solves f(θ) = E·(χ_∥cosθ + σ·χ_⊥sinθ) ∈ [lo, hi] for θ ∈ [0, π] exactly:
/// roots of both edges partition [0, π]; segments are kept by midpoint test.
fn branch_theta_intervals(
    e_vcm: f64,
    chi_par_ghz: f64,
    chi_perp_ghz: f64,
    sigma: f64,
    lo_ghz: f64,
    hi_ghz: f64,
    out: &mut Vec<ThetaInterval>,
) {
    let f = |theta: f64| e_vcm * (chi_par_ghz * theta.cos() + sigma * chi_perp_ghz * theta.sin());
    let amplitude = e_vcm * chi_par_ghz.hypot(chi_perp_ghz);
    let phi = chi_par_ghz.atan2(sigma * chi_perp_ghz);

    let mut edges: Vec<f64> = Vec::with_capacity(8);
    edges.push(0.0);
    edges.push(std::f64::consts::PI);
    for target in [lo_ghz, hi_ghz] {
        if !target.is_finite() || amplitude == 0.0 {
            continue;
        }
        let c = target / amplitude;
        if c.abs() > 1.0 {
            continue;
        }
        let a = c.asin();
        for x in [a, std::f64::consts::PI - a, a + 2.0 * std::f64::consts::PI] {
            let theta = x - phi;
            if (-1e-12..=std::f64::consts::PI + 1e-12).contains(&theta) {
                edges.push(theta.clamp(0.0, std::f64::consts::PI));
            }
        }
    }
    edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
    edges.dedup_by(|a, b| (*a - *b).abs() < 1e-13);

    for w in edges.windows(2) {
        let mid = 0.5 * (w[0] + w[1]);
        let v = f(mid);
        if v >= lo_ghz && v <= hi_ghz {
            match out.last_mut() {
                Some(last) if (last.hi - w[0]).abs() < 1e-12 => last.hi = w[1],
                _ => out.push(ThetaInterval { lo: w[0], hi: w[1] }),
            }
        }
    }
}

/// Log-spaced field nodes with trapezoid weights of the normalized pdf, plus
/// a √-refined segment just above a support edge when one exists.
fn field_nodes(
    dist: &FieldDistribution,
    e_tilde_lo: f64,
    config: &SynthesisConfig,
) -> Vec<(f64, f64)> {
    const E_TILDE_FLOOR: f64 = 0.28;
    let hi = config.e_tilde_max;
    let mut nodes: Vec<f64> = Vec::with_capacity(config.n_field_nodes + 40);
    let log_lo = if e_tilde_lo > E_TILDE_FLOOR {
        // Support edge: resolve the √(E − E_s) onset before going logarithmic.
        let edge_hi = (e_tilde_lo * 1.3).min(hi);
        let k = 32;
        for i in 0..k {
            let t = i as f64 / k as f64;
            nodes.push(e_tilde_lo + (edge_hi - e_tilde_lo) * t * t);
        }
        edge_hi
    } else {
        E_TILDE_FLOOR
    };
    if log_lo < hi {
        let n = config.n_field_nodes.max(8);
        let ratio = (hi / log_lo).ln();
        for i in 0..=n {
            nodes.push(log_lo * (ratio * i as f64 / n as f64).exp());
        }
    }
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    nodes.dedup();

    let pdf = |et: f64| dist.pdf_vcm(et * dist.e_ref_vcm()) * dist.e_ref_vcm();
    let mut weighted = Vec::with_capacity(nodes.len());
    for (i, &et) in nodes.iter().enumerate() {
        let left = if i == 0 { et } else { nodes[i - 1] };
        let right = if i + 1 == nodes.len() { et } else { nodes[i + 1] };
        let w = 0.5 * (right - left) * pdf(et);
        if w > 0.0 {
            weighted.push((et, w));
        }
    }
    weighted
}

/// Accumulates band measure into a splitting histogram (bin width
/// `bin_step`); mass that would land beyond the last bin is summed into
/// `overflow` and still counts toward fractions.
struct SplittingHistogram {
    bin_step: f64,
    bins: Vec<f64>,
    overflow: f64,
    total: f64,
}

impl SplittingHistogram {
    fn new(max_mhz: f64, bin_step: f64) -> Self {
        let n = (max_mhz / bin_step).ceil() as usize + 2;
        Self {
            bin_step,
            bins: vec![0.0; n],
            overflow: 0.0,
            total: 0.0,
        }
    }

    fn deposit(&mut self, pi_mhz: f64, mass: f64) {
        self.total += mass;
        let x = pi_mhz / self.bin_step;
        let i = x.floor() as usize;
        if i + 1 >= self.bins.len() {
            self.overflow += mass;
            return;
        }
        let frac = x - i as f64;
        self.bins[i] += mass * (1.0 - frac);
        self.bins[i + 1] += mass * frac;
    }
}

fn deposit_intervals(
    hist: &mut SplittingHistogram,
    intervals: &[ThetaInterval],
    e_vcm: f64,
    node_weight: f64,
    params: &SampleParams,
    theta_step: f64,
) {
    for iv in intervals {
        let span = iv.hi - iv.lo;
        if span <= 0.0 {
            continue;
        }
        let subs = ((span / theta_step).ceil() as usize).clamp(1, 2048);
        let d = span / subs as f64;
        let mut cos_a = iv.lo.cos();
        for k in 0..subs {
            let b = iv.lo + (k + 1) as f64 * d;
            let cos_b = b.cos();
            let mass = (cos_a - cos_b) * node_weight;
            if mass > 0.0 {
                let mid = iv.lo + (k as f64 + 0.5) * d;
                hist.deposit(params.splitting_mhz(e_vcm * mid.sin()), mass);
            }
            cos_a = cos_b;
        }
    }
}

/// Which resonance mechanism selects configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mechanism {
    Resonant,
    OffResonant,
}

/// Walks the field ensemble once and returns the splitting histogram of the
/// selected configurations plus the selected fraction (normalized to the
/// total measure of 2).
fn splitting_density(
    detuning_ghz: f64,
    params: &SampleParams,
    dist: &FieldDistribution,
    config: &SynthesisConfig,
    mechanism: Mechanism,
    pi_cap_mhz: f64,
) -> (SplittingHistogram, f64) {
    let chi_par = params.chi_e_par_ghz();
    let chi_perp = params.chi_e_perp_ghz();
    let amplitude_ghz_per_vcm = chi_par.hypot(chi_perp);
    let half_gamma = 0.5 * params.gamma_e_single_mhz / 1e3;

    // Smallest field magnitude that can satisfy the selection at all.
    let e_ref = dist.e_ref_vcm();
    let reach_ghz = match mechanism {
        Mechanism::Resonant => detuning_ghz.abs() - half_gamma,
        Mechanism::OffResonant => detuning_ghz + half_gamma,
    };
    let e_lo_vcm = if reach_ghz > 0.0 {
        reach_ghz / amplitude_ghz_per_vcm
    } else {
        0.0
    };
    let e_tilde_lo = if e_ref > 0.0 { e_lo_vcm / e_ref } else { 0.0 };

    let mut e_tilde_max = config.e_tilde_max;
    if e_ref > 0.0 {
        // Make sure the histogram window itself is always reachable.
        let needed = pi_cap_mhz * 1e6 / (params.chi_g_perp * e_ref);
        e_tilde_max = e_tilde_max.max(1.2 * needed);
    }
    let local = SynthesisConfig {
        e_tilde_max,
        ..*config
    };

    let mut hist = SplittingHistogram::new(pi_cap_mhz, config.bin_step_mhz);
    if e_ref == 0.0 || e_tilde_lo >= e_tilde_max {
        return (hist, 0.0);
    }

    let nodes = field_nodes(dist, e_tilde_lo, &local);
    let mut intervals: Vec<ThetaInterval> = Vec::with_capacity(4);
    for (e_tilde, weight) in nodes {
        let e_vcm = e_tilde * e_ref;
        intervals.clear();
        for sigma in [1.0, -1.0] {
            match mechanism {
                Mechanism::Resonant => branch_theta_intervals(
                    e_vcm,
                    chi_par,
                    chi_perp,
                    sigma,
                    detuning_ghz - half_gamma,
                    detuning_ghz + half_gamma,
                    &mut intervals,
                ),
                Mechanism::OffResonant => branch_theta_intervals(
                    e_vcm,
                    chi_par,
                    chi_perp,
                    sigma,
                    detuning_ghz + half_gamma,
                    f64::INFINITY,
                    &mut intervals,
                ),
            }
            deposit_intervals(
                &mut hist,
                &intervals,
                e_vcm,
                weight,
                params,
                config.theta_step_rad,
            );
            intervals.clear();
        }
    }
    let fraction = hist.total / 2.0;
    (hist, fraction)
}

/// Maps a splitting histogram through the inhomogeneous kernel onto a
/// line-position density q(s): for each splitting bin the u-axis Lorentzian
/// around each |b| is chopped into cells with exact arctan masses, and each
/// cell lands at s = √(u² + Π²).
fn line_position_density(
    hist: &SplittingHistogram,
    kappa_ih: f64,
    params: &SampleParams,
    s_max: f64,
    bin_step: f64,
) -> Vec<f64> {
    let n_s = (s_max / bin_step).ceil() as usize + 2;
    let mut q = vec![0.0_f64; n_s];
    let mut deposit = |s: f64, mass: f64| {
        let x = s / bin_step;
        let i = x.floor() as usize;
        if i + 1 < q.len() {
            let frac = x - i as f64;
            q[i] += mass * (1.0 - frac);
            q[i + 1] += mass * frac;
        }
    };

    // Hyperfine components folded by |b|.
    let mut components: Vec<(f64, f64)> = Vec::new();
    for b in params.hyperfine_shifts_mhz {
        let key = b.abs();
        match components.iter_mut().find(|(v, _)| (*v - key).abs() < 1e-12) {
            Some((_, w)) => *w += 1.0,
            None => components.push((key, 1.0)),
        }
    }

    let hw = 0.5 * kappa_ih;
    for (bin, &mass) in hist.bins.iter().enumerate() {
        if mass == 0.0 {
            continue;
        }
        let pi_c = bin as f64 * hist.bin_step;
        let u_cap = (s_max * s_max - pi_c * pi_c).max(0.0).sqrt();
        if u_cap == 0.0 {
            continue;
        }
        for &(b, weight) in &components {
            if kappa_ih == 0.0 {
                if b <= u_cap {
                    deposit((b * b + pi_c * pi_c).sqrt(), mass * weight);
                }
                continue;
            }
            // Cell edges: fine near the Lorentzian core, log-spaced tails.
            let mut edges: Vec<f64> = Vec::with_capacity(96);
            let core_lo = (b - 15.0 * kappa_ih).max(0.0);
            let core_hi = (b + 15.0 * kappa_ih).min(u_cap);
            if core_lo > 0.0 {
                // Tail cells from 0 up to the core.
                let mut u = core_lo;
                edges.push(u);
                while u > kappa_ih * 0.5 {
                    u /= 1.6;
                    edges.push(u);
                }
                edges.push(0.0);
            } else {
                edges.push(0.0);
            }
            if core_hi > core_lo {
                let n_core = ((core_hi - core_lo) / (kappa_ih / 6.0)).ceil() as usize;
                let n_core = n_core.clamp(4, 256);
                for i in 0..=n_core {
                    edges.push(core_lo + (core_hi - core_lo) * i as f64 / n_core as f64);
                }
            }
            if core_hi < u_cap {
                let mut u = core_hi.max(kappa_ih * 0.5);
                while u < u_cap {
                    edges.push(u);
                    u *= 1.6;
                }
                edges.push(u_cap);
            }
            edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
            edges.dedup_by(|a, b| (*a - *b).abs() < 1e-13);

            let inv_pi = 1.0 / std::f64::consts::PI;
            let mut atan_prev = ((edges[0] - b) / hw).atan();
            for w in edges.windows(2) {
                let atan_next = ((w[1] - b) / hw).atan();
                let cell_mass = (atan_next - atan_prev) * inv_pi;
                atan_prev = atan_next;
                if cell_mass <= 0.0 {
                    continue;
                }
                let u_mid = 0.5 * (w[0] + w[1]);
                deposit(
                    (u_mid * u_mid + pi_c * pi_c).sqrt(),
                    mass * weight * cell_mass,
                );
            }
        }
    }
    q
}

/// Final stage: homogeneous Lorentzian convolution of the symmetric
/// line-position density onto the microwave grid.
fn convolve_onto_grid(
    q: &[f64],
    bin_step: f64,
    kappa_h: f64,
    omega: &[f64],
) -> Vec<f64> {
    let mut signal = vec![0.0_f64; omega.len()];
    if kappa_h == 0.0 {
        // Deposit δ lines directly as bin densities.
        let grid_step = omega[1] - omega[0];
        for (i, &mass) in q.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let s = i as f64 * bin_step;
            for target in [s, -s] {
                let x = (target - omega[0]) / grid_step;
                let j = x.floor() as i64;
                if j >= 0 && (j as usize) + 1 < omega.len() {
                    let frac = x - j as f64;
                    signal[j as usize] += mass * (1.0 - frac) / grid_step;
                    signal[j as usize + 1] += mass * frac / grid_step;
                }
                // s = 0 deposits twice on purpose: the u ≥ 0 fold counts the
                // coincident ± lines separately, like the κ_H > 0 branch.
            }
        }
        return signal;
    }
    let hw = 0.5 * kappa_h;
    let norm = hw / std::f64::consts::PI;
    let occupied: Vec<(f64, f64)> = q
        .iter()
        .enumerate()
        .filter(|(_, &m)| m != 0.0)
        .map(|(i, &m)| (i as f64 * bin_step, m))
        .collect();
    for (j, &w) in omega.iter().enumerate() {
        let mut acc = 0.0;
        for &(s, mass) in &occupied {
            let dm = w - s;
            let dp = w + s;
            acc += mass * (1.0 / (dm * dm + hw * hw) + 1.0 / (dp * dp + hw * hw));
        }
        signal[j] = acc * norm;
    }
    signal
}

fn synthesize(
    detuning_ghz: f64,
    params: &SampleParams,
    kappa_ih: f64,
    kappa_h: f64,
    dist: &FieldDistribution,
    config: &SynthesisConfig,
    mechanism: Mechanism,
) -> SynthesizedSpectrum {
    let omega = config.omega_grid();
    let s_max = config.grid_half_width_mhz
        + 15.0 * kappa_h
        + 5.0 * kappa_ih
        + params
            .hyperfine_shifts_mhz
            .iter()
            .fold(0.0_f64, |m, b| m.max(b.abs()))
        + 1.0;
    let (hist, fraction) = splitting_density(detuning_ghz, params, dist, config, mechanism, s_max);
    let q = line_position_density(&hist, kappa_ih, params, s_max, config.bin_step_mhz);
    let signal = convolve_onto_grid(&q, config.bin_step_mhz, kappa_h, &omega);
    let low_measure = mechanism == Mechanism::Resonant && fraction < RESONANT_MEASURE_FLOOR;
    SynthesizedSpectrum {
        spectrum: Spectrum::new(omega, signal).expect("synthesized grid is valid"),
        fraction,
        low_measure,
    }
}

/// Spectrum of resonantly driven configurations at the given optical
/// detuning (GHz below the ZPL).
pub fn resonant_spectrum(
    detuning_ghz: f64,
    params: &SampleParams,
    broadening: &BroadeningParams,
    dist: &FieldDistribution,
    config: &SynthesisConfig,
) -> SynthesizedSpectrum {
    let (kappa_ih, kappa_h) = broadening.resonant();
    synthesize(
        detuning_ghz,
        params,
        kappa_ih,
        kappa_h,
        dist,
        config,
        Mechanism::Resonant,
    )
}

/// Spectrum of off-resonantly (phonon-sideband) driven configurations.
pub fn offresonant_spectrum(
    detuning_ghz: f64,
    params: &SampleParams,
    broadening: &BroadeningParams,
    dist: &FieldDistribution,
    config: &SynthesisConfig,
) -> SynthesizedSpectrum {
    let (kappa_ih, kappa_h) = broadening.offresonant();
    synthesize(
        detuning_ghz,
        params,
        kappa_ih,
        kappa_h,
        dist,
        config,
        Mechanism::OffResonant,
    )
}

/// Full signed spectrum S_tot = ε_C·S_R − S_OR, each side with its own
/// broadening parameters.
pub fn total_spectrum(
    detuning_ghz: f64,
    params: &SampleParams,
    broadening: &BroadeningParams,
    dist: &FieldDistribution,
    config: &SynthesisConfig,
) -> TotalSpectrum {
    let res = resonant_spectrum(detuning_ghz, params, broadening, dist, config);
    let off = offresonant_spectrum(detuning_ghz, params, broadening, dist, config);
    let signal: Vec<f64> = res
        .spectrum
        .signal()
        .iter()
        .zip(off.spectrum.signal())
        .map(|(r, o)| params.epsilon_c * r - o)
        .collect();
    TotalSpectrum {
        spectrum: Spectrum::new(res.spectrum.mw_offset_mhz().to_vec(), signal)
            .expect("grids match"),
        fractions: ConfigFractions {
            f_resonant: res.fraction,
            f_offresonant: off.fraction,
        },
        low_measure: res.low_measure,
    }
}

/// Fractions of resonant and off-resonant configurations at one detuning,
/// without building lineshapes.
pub fn config_fractions(
    detuning_ghz: f64,
    params: &SampleParams,
    dist: &FieldDistribution,
    config: &SynthesisConfig,
) -> ConfigFractions {
    // Only the total measure matters here: a minimal histogram keeps the
    // deposit cheap and leaves the field-node range untouched.
    let cheap = SynthesisConfig {
        bin_step_mhz: 1.0,
        ..*config
    };
    let (_, f_r) = splitting_density(detuning_ghz, params, dist, &cheap, Mechanism::Resonant, 1.0);
    let (_, f_or) =
        splitting_density(detuning_ghz, params, dist, &cheap, Mechanism::OffResonant, 1.0);
    ConfigFractions {
        f_resonant: f_r,
        f_offresonant: f_or,
    }
}

/// Relative fluorescence R(Δν) ∝ ε_R·F_R + F_OR, normalized so the plateau
/// far above the ZPL (where every configuration is counted twice) equals 1.
pub fn fluorescence(
    detuning_ghz: f64,
    params: &SampleParams,
    dist: &FieldDistribution,
    config: &SynthesisConfig,
) -> f64 {
    let f = config_fractions(detuning_ghz, params, dist, config);
    (params.epsilon_r_enh * f.f_resonant + f.f_offresonant) / 2.0
}

/// Response to an external field parallel to the NV axis: an overall shift
/// of the excited-state levels, equivalent to moving the optical detuning by
/// −χ^e_∥·δE_∥.
pub fn external_field_response(
    delta_e_par_vcm: f64,
    detuning_ghz: f64,
    params: &SampleParams,
    broadening: &BroadeningParams,
    dist: &FieldDistribution,
    config: &SynthesisConfig,
) -> (TotalSpectrum, f64) {
    let eff = detuning_ghz - params.chi_e_par_ghz() * delta_e_par_vcm;
    (
        total_spectrum(eff, params, broadening, dist, config),
        fluorescence(eff, params, dist, config),
    )
}

/// Equivalent detuning for an external parallel field.
pub fn equivalent_detuning_ghz(
    delta_e_par_vcm: f64,
    detuning_ghz: f64,
    params: &SampleParams,
) -> f64 {
    detuning_ghz - params.chi_e_par_ghz() * delta_e_par_vcm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::PhysicalConstants;

    fn dist() -> FieldDistribution {
        FieldDistribution::with_ratio(
            ChargeDensity::from_ppm(15.0).unwrap(),
            2.0,
            &PhysicalConstants::default(),
        )
        .unwrap()
    }

    #[test]
    fn branch_shifts_zero_field() {
        let p = SampleParams::default();
        let (u, l) = excited_branch_shifts(&FieldVector::new(0.0, 0.0), &p);
        assert_eq!((u, l), (0.0, 0.0));
    }

    #[test]
    fn branch_shifts_pure_transverse() {
        let p = SampleParams::default();
        let (u, l) = excited_branch_shifts(&FieldVector::new(0.0, 1.0e3), &p);
        let expect = p.chi_e_perp * 1.0e3 / 1e3;
        assert!((u + expect).abs() < 1e-12);
        assert!((l - expect).abs() < 1e-12);
    }

    #[test]
    fn cone_apex_on_axis() {
        // The lower-branch locus Δν_L(E) = Δν meets the axis (E_⊥ = 0) at
        // E_z = Δν/χ^e_∥.
        let p = SampleParams::default();
        let detuning = 156.0;
        let apex = detuning / p.chi_e_par_ghz();
        let (_, l) = excited_branch_shifts(&FieldVector::new(apex, 0.0), &p);
        assert!((l - detuning).abs() < 1e-9);
    }

    #[test]
    fn indicators_degenerate_at_zero() {
        let p = SampleParams::default();
        let (d_r, d_or) = resonance_indicators(&FieldVector::new(0.0, 0.0), 0.0, &p);
        assert_eq!((d_r, d_or), (2, 0));
    }

    #[test]
    fn indicators_drive_below_both() {
        // Large positive detuning (far below ZPL): drive below both branches.
        let p = SampleParams::default();
        let f = FieldVector::new(100.0, 50.0);
        let (_, d_or) = resonance_indicators(&f, 5_000.0, &p);
        assert_eq!(d_or, 0);
    }

    #[test]
    fn indicators_drive_above_both() {
        // Negative detuning (above ZPL): drive above both branches.
        let p = SampleParams::default();
        let f = FieldVector::new(100.0, 50.0);
        let (_, d_or) = resonance_indicators(&f, -5_000.0, &p);
        assert_eq!(d_or, 2);
    }

    #[test]
    fn lineshape_ih_support_is_exact() {
        let p = SampleParams::default();
        let e_perp = 2.0e5; // Π ≈ 3.4 MHz
        let pi_split = p.chi_g_perp * e_perp / 1e6;
        assert_eq!(lineshape_ih(pi_split * 0.999, e_perp, 1.7, &p), 0.0);
        assert_eq!(lineshape_ih(-pi_split * 0.999, e_perp, 1.7, &p), 0.0);
        assert!(lineshape_ih(pi_split * 1.001, e_perp, 1.7, &p) > 0.0);
    }

    #[test]
    fn lineshape_even_in_omega() {
        let p = SampleParams::default();
        for w in [0.3, 1.7, 4.9, 11.0] {
            let a = primitive_lineshape(w, 8.0e4, 1.7, 1.0, &p);
            let b = primitive_lineshape(-w, 8.0e4, 1.7, 1.0, &p);
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-30));
        }
    }

    #[test]
    fn lineshape_degenerate_limit_is_triple_lorentzian() {
        // E_⊥ = 0, κ_IH → 0: three Lorentzians of FWHM κ_H at ω ∈ {0, ±2.16}.
        let p = SampleParams::default();
        for w in [-4.0, -2.16, -1.0, 0.0, 0.7, 2.16, 5.0] {
            let got = primitive_lineshape(w, 0.0, 0.0, 1.0, &p);
            let expect: f64 = p
                .hyperfine_shifts_mhz
                .iter()
                .map(|b| {
                    0.5 * (lorentzian(w - b.abs(), 1.0) + lorentzian(w + b.abs(), 1.0))
                })
                .sum();
            assert!((got - expect).abs() < 1e-10, "w={w}: {got} vs {expect}");
        }
    }

    #[test]
    fn theta_band_measure_matches_brute_force() {
        let p = SampleParams::default();
        let chi_par = p.chi_e_par_ghz();
        let chi_perp = p.chi_e_perp_ghz();
        let e = 2.0e5;
        for (lo, hi) in [(100.0, 140.0), (-50.0, 10.0), (250.0, f64::INFINITY)] {
            for sigma in [1.0, -1.0] {
                let mut ivs = Vec::new();
                branch_theta_intervals(e, chi_par, chi_perp, sigma, lo, hi, &mut ivs);
                let analytic: f64 = ivs.iter().map(|iv| iv.lo.cos() - iv.hi.cos()).sum();
                // Brute-force Riemann sum of the same measure.
                let n = 400_000;
                let mut brute = 0.0;
                for i in 0..n {
                    let th = std::f64::consts::PI * (i as f64 + 0.5) / n as f64;
                    let f = e * (chi_par * th.cos() + sigma * chi_perp * th.sin());
                    if f >= lo && f <= hi {
                        brute += th.sin() * std::f64::consts::PI / n as f64;
                    }
                }
                assert!(
                    (analytic - brute).abs() < 2e-4,
                    "sigma={sigma} lo={lo} hi={hi}: {analytic} vs {brute}"
                );
            }
        }
    }

    #[test]
    fn resonant_spectrum_mirror_symmetric_and_positive() {
        let p = SampleParams::default();
        let b = BroadeningParams::default();
        let out = resonant_spectrum(156.0, &p, &b, &dist(), &SynthesisConfig::default());
        let s = out.spectrum.signal();
        let n = s.len();
        let m = s.iter().cloned().fold(0.0_f64, f64::max);
        assert!(m > 0.0);
        for i in 0..n {
            assert!(s[i] >= 0.0);
            let d = (s[i] - s[n - 1 - i]).abs();
            assert!(d <= 1e-9 * m, "asymmetry {d} at {i}");
        }
        assert!(!out.low_measure);
    }

    #[test]
    fn far_detuned_resonant_measure_flags_low() {
        let p = SampleParams::default();
        let b = BroadeningParams::default();
        let out = resonant_spectrum(2.0e6, &p, &b, &dist(), &SynthesisConfig::default());
        assert!(out.low_measure);
    }

    #[test]
    fn offresonant_far_above_equals_double_ensemble() {
        // Drive far above the ZPL: every configuration counts twice.
        let p = SampleParams::default();
        let cfg = SynthesisConfig::default();
        let f = config_fractions(-1.0e5, &p, &dist(), &cfg);
        assert!(f.f_resonant < 1e-9);
        assert!((f.f_offresonant - 2.0).abs() < 2e-3, "{}", f.f_offresonant);
    }

    #[test]
    fn fluorescence_plateau_is_one() {
        let p = SampleParams::default();
        let cfg = SynthesisConfig::default();
        let r = fluorescence(-1.0e5, &p, &dist(), &cfg);
        assert!((r - 1.0).abs() < 2e-3, "{r}");
    }

    #[test]
    fn external_field_matches_equivalent_detuning() {
        let p = SampleParams::default();
        let b = BroadeningParams::default();
        let cfg = SynthesisConfig::default();
        let d = dist();
        let (shifted, _) = external_field_response(1.0e4, 156.0, &p, &b, &d, &cfg);
        let direct = total_spectrum(
            equivalent_detuning_ghz(1.0e4, 156.0, &p),
            &p,
            &b,
            &d,
            &cfg,
        );
        assert_eq!(shifted.spectrum.signal(), direct.spectrum.signal());
    }

    #[test]
    fn preset_lookup() {
        assert_eq!(
            TemperaturePreset::from_name("5K"),
            Some(TemperaturePreset::T5K)
        );
        let (b, eps) = TemperaturePreset::T5K.params();
        assert_eq!(
            (b.kappa_h_res_mhz, b.kappa_ih_res_mhz, b.kappa_h_offres_mhz, b.kappa_ih_offres_mhz),
            (2.0, 4.0, 20.0, 27.0)
        );
        assert_eq!(eps, 1.0e4);
    }

    #[test]
    fn spectrum_rejects_non_monotone_grid() {
        assert!(Spectrum::new(vec![0.0, 0.0, 1.0], vec![1.0, 2.0, 3.0]).is_err());
        assert!(Spectrum::new(vec![0.0, 1.0], vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn validation_catches_asymmetric_hyperfine() {
        let p = SampleParams {
            hyperfine_shifts_mhz: [0.0, 2.16, -2.0],
            ..SampleParams::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn validation_warns_below_spin_orbit_floor() {
        let p = SampleParams {
            rho_c: ChargeDensity::from_ppm(0.005).unwrap(),
            ..SampleParams::default()
        };
        assert_eq!(p.validate().unwrap().len(), 1);
    }
}
