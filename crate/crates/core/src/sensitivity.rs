//! DC electric-field sensitivity model for the resonant ensemble protocol:
//! density-dependent linewidths and count rates, the peak-shift and
//! fluorescence channels, their harmonic combination, density sweeps with
//! asymptotic exponents, the bias-field requirement, and the suppression of
//! perpendicular-field response by the internal field bath.

use serde::{Deserialize, Serialize};

use crate::numerics::linear_fit;
use crate::SensitivityError;

/// Protocol calibration anchored to the reference sample (8 ppm NV density,
/// 0.1 mm³ illumination volume).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolParams {
    /// Lorentzian lineshape factor of the peak-shift channel.
    pub p_pi: f64,
    /// Lineshape factor of the fluorescence channel.
    pub p_f: f64,
    /// Maximum CW contrast of the resonant ODMR peaks.
    pub c0: f64,
    /// Effective susceptibility of the peak-shift channel (Hz/(V/cm)).
    pub chi_eff_hz: f64,
    /// Excited-state longitudinal susceptibility (Hz/(V/cm)).
    pub chi_e_par_hz: f64,
    /// Excited-state transverse susceptibility (Hz/(V/cm)); only the
    /// bias-field requirement uses it.
    pub chi_e_perp_hz: f64,
    /// Intrinsic ground-state ODMR broadening (MHz).
    pub kappa0_g_mhz: f64,
    /// Charge-induced ground-state broadening at the reference density (MHz).
    pub kappa_e_g_mhz: f64,
    /// Intrinsic optical-transition broadening (MHz); 10 GHz default,
    /// 100 GHz pessimistic variant.
    pub kappa0_e_mhz: f64,
    /// Charge-induced optical broadening at the reference density (MHz).
    pub kappa_e_e_mhz: f64,
    /// Density-independent prefactor of the resonant enhancement (MHz).
    pub kappa_ref_mhz: f64,
    /// Single-orientation off-resonant count rate at the reference density
    /// and volume (counts/s); back-computed from the measured total rate
    /// R = R₀(r + 5/3) with r ≈ 2.
    pub r0_reference: f64,
    /// NV density the charge-broadening terms are calibrated at (ppm).
    pub reference_density_ppm: f64,
    /// Illumination volume (mm³).
    pub illumination_volume_mm3: f64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            p_pi: 0.77,
            p_f: 0.39,
            c0: 0.21,
            chi_eff_hz: 6.97,
            chi_e_par_hz: 7.0e5,
            chi_e_perp_hz: 1.4e6,
            kappa0_g_mhz: 0.2,
            kappa_e_g_mhz: 3.7,
            kappa0_e_mhz: 1.0e4,
            kappa_e_e_mhz: 1.0e6,
            kappa_ref_mhz: 2.0e6,
            r0_reference: 6.581e14,
            reference_density_ppm: 8.0,
            illumination_volume_mm3: 0.1,
        }
    }
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<(), SensitivityError> {
        let positive = [
            ("p_pi", self.p_pi),
            ("p_f", self.p_f),
            ("c0", self.c0),
            ("chi_eff_hz", self.chi_eff_hz),
            ("chi_e_par_hz", self.chi_e_par_hz),
            ("chi_e_perp_hz", self.chi_e_perp_hz),
            ("kappa0_g_mhz", self.kappa0_g_mhz),
            ("kappa_e_g_mhz", self.kappa_e_g_mhz),
            ("kappa0_e_mhz", self.kappa0_e_mhz),
            ("kappa_e_e_mhz", self.kappa_e_e_mhz),
            ("kappa_ref_mhz", self.kappa_ref_mhz),
            ("r0_reference", self.r0_reference),
            ("reference_density_ppm", self.reference_density_ppm),
            ("illumination_volume_mm3", self.illumination_volume_mm3),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SensitivityError::InvalidParam {
                    name,
                    detail: format!("must be strictly positive, got {v}"),
                });
            }
        }
        for (name, v) in [("c0", self.c0), ("p_pi", self.p_pi), ("p_f", self.p_f)] {
            if v >= 1.0 {
                return Err(SensitivityError::InvalidParam {
                    name,
                    detail: format!("must lie in (0, 1), got {v}"),
                });
            }
        }
        Ok(())
    }

    fn rho_bar(&self, rho_nv_ppm: f64) -> f64 {
        rho_nv_ppm / self.reference_density_ppm
    }
}

/// Sensitivities and every intermediate at one NV density.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SensitivityBreakdown {
    pub rho_nv_ppm: f64,
    /// Peak-shift channel sensitivity (V/cm/√Hz).
    pub eta_pi: f64,
    /// Fluorescence channel sensitivity (V/cm/√Hz).
    pub eta_f: f64,
    /// Harmonic combination 1/η = 1/η_Π + 1/η_F (V/cm/√Hz).
    pub eta_total: f64,
    /// Ground-state ODMR linewidth (MHz).
    pub gamma_g_mhz: f64,
    /// Optical transition linewidth (MHz).
    pub gamma_e_mhz: f64,
    /// Resonant fluorescence enhancement factor.
    pub r_enh: f64,
    /// Fraction of photons from the resonant orientation, r/(r + 5/3).
    pub c_r: f64,
    /// Total photon count rate (counts/s).
    pub count_rate: f64,
}

/// Off-resonant count weight of the three tilted NV orientations in a
/// (111)-cut sample relative to R₀; they are not perpendicular to the laser
/// polarization.
pub const OFF_RESONANT_ORIENTATION_WEIGHT: f64 = 5.0 / 3.0;

/// Linewidth model Γ = κ⁰ + κ^E·(ρ_NV/ρ⁰_NV)^{2/3} (MHz).
pub fn linewidth_model(rho_nv_ppm: f64, kappa0_mhz: f64, kappa_e_mhz: f64, reference_density_ppm: f64) -> f64 {
    kappa0_mhz + kappa_e_mhz * (rho_nv_ppm / reference_density_ppm).powf(2.0 / 3.0)
}

/// Resonant enhancement r = κ_ref / (κ⁰_e + κ^E_e·ρ̄^{2/3}).
pub fn resonant_enhancement(rho_nv_ppm: f64, p: &ProtocolParams) -> f64 {
    let gamma_e = linewidth_model(
        rho_nv_ppm,
        p.kappa0_e_mhz,
        p.kappa_e_e_mhz,
        p.reference_density_ppm,
    );
    p.kappa_ref_mhz / gamma_e
}

/// Total count rate R = R₀(r + 5/3) and resonant photon fraction
/// C_r = r/(r + 5/3); R₀ scales linearly with density and volume from the
/// reference calibration.
pub fn count_rate_and_contrast(rho_nv_ppm: f64, p: &ProtocolParams) -> (f64, f64) {
    let r = resonant_enhancement(rho_nv_ppm, p);
    let r0 = p.r0_reference * p.rho_bar(rho_nv_ppm) * (p.illumination_volume_mm3 / 0.1);
    let rate = r0 * (r + OFF_RESONANT_ORIENTATION_WEIGHT);
    let c_r = r / (r + OFF_RESONANT_ORIENTATION_WEIGHT);
    (rate, c_r)
}

/// Full sensitivity budget at one NV density:
/// η_Π = P_Π·Γ_g/(χ_eff·C₀·C_r·√R), η_F = P_F·Γ_e/(χ^e_∥·C_r·√R),
/// combined harmonically.
pub fn sensitivity_breakdown(
    rho_nv_ppm: f64,
    p: &ProtocolParams,
) -> Result<SensitivityBreakdown, SensitivityError> {
    let gamma_g = linewidth_model(
        rho_nv_ppm,
        p.kappa0_g_mhz,
        p.kappa_e_g_mhz,
        p.reference_density_ppm,
    );
    let gamma_e = linewidth_model(
        rho_nv_ppm,
        p.kappa0_e_mhz,
        p.kappa_e_e_mhz,
        p.reference_density_ppm,
    );
    let r_enh = p.kappa_ref_mhz / gamma_e;
    let (rate, c_r) = count_rate_and_contrast(rho_nv_ppm, p);
    if !(rate > 0.0) {
        return Err(SensitivityError::ZeroCountRate { rate });
    }
    let sqrt_r = rate.sqrt();
    let eta_pi = p.p_pi * (gamma_g * 1e6) / (p.chi_eff_hz * p.c0 * c_r * sqrt_r);
    let eta_f = p.p_f * (gamma_e * 1e6) / (p.chi_e_par_hz * c_r * sqrt_r);
    let eta_total = 1.0 / (1.0 / eta_pi + 1.0 / eta_f);
    Ok(SensitivityBreakdown {
        rho_nv_ppm,
        eta_pi,
        eta_f,
        eta_total,
        gamma_g_mhz: gamma_g,
        gamma_e_mhz: gamma_e,
        r_enh,
        c_r,
        count_rate: rate,
    })
}

/// Sensitivity of the conventional (all off-resonant) protocol at the same
/// calibration: no resonant photon selection, so the C_r factor drops and
/// the count rate is the unenhanced 8/3·R₀.
pub fn conventional_sensitivity(
    rho_nv_ppm: f64,
    p: &ProtocolParams,
) -> Result<f64, SensitivityError> {
    let gamma_g = linewidth_model(
        rho_nv_ppm,
        p.kappa0_g_mhz,
        p.kappa_e_g_mhz,
        p.reference_density_ppm,
    );
    let r0 = p.r0_reference * p.rho_bar(rho_nv_ppm) * (p.illumination_volume_mm3 / 0.1);
    let rate = r0 * (1.0 + OFF_RESONANT_ORIENTATION_WEIGHT);
    if !(rate > 0.0) {
        return Err(SensitivityError::ZeroCountRate { rate });
    }
    Ok(p.p_pi * (gamma_g * 1e6) / (p.chi_eff_hz * p.c0 * rate.sqrt()))
}

/// One row of a density sweep.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SweepRow {
    pub breakdown: SensitivityBreakdown,
    pub eta_conventional: f64,
}

/// Density sweep with asymptotic log–log exponents fitted on the extreme
/// decades.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensitySweep {
    pub rows: Vec<SweepRow>,
    /// Log–log slope of η_total over the top decade of the sweep.
    pub high_density_exponent: f64,
    /// Log–log slope of η_total over the bottom decade.
    pub low_density_exponent: f64,
    /// Log–log slope of the conventional protocol over the top decade.
    pub conventional_high_density_exponent: f64,
}

/// Log-spaced density sweep of the full budget.
pub fn density_sweep(
    rho_min_ppm: f64,
    rho_max_ppm: f64,
    n_points: usize,
    p: &ProtocolParams,
) -> Result<DensitySweep, SensitivityError> {
    if !(rho_min_ppm > 0.0 && rho_max_ppm > rho_min_ppm) || n_points < 4 {
        return Err(SensitivityError::InvalidParam {
            name: "sweep",
            detail: format!(
                "need 0 < min < max and ≥ 4 points, got [{rho_min_ppm}, {rho_max_ppm}] × {n_points}"
            ),
        });
    }
    let log_lo = rho_min_ppm.ln();
    let log_hi = rho_max_ppm.ln();
    let mut rows = Vec::with_capacity(n_points);
    for i in 0..n_points {
        let rho = (log_lo + (log_hi - log_lo) * i as f64 / (n_points - 1) as f64).exp();
        rows.push(SweepRow {
            breakdown: sensitivity_breakdown(rho, p)?,
            eta_conventional: conventional_sensitivity(rho, p)?,
        });
    }
    let decade = |lo: f64, hi: f64, y: &dyn Fn(&SweepRow) -> f64| -> f64 {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.breakdown.rho_nv_ppm >= lo && r.breakdown.rho_nv_ppm <= hi)
            .map(|r| (r.breakdown.rho_nv_ppm.ln(), y(r).ln()))
            .collect();
        let (x, yv): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        linear_fit(&x, &yv).0
    };
    let high = decade(rho_max_ppm / 10.0, rho_max_ppm, &|r| r.breakdown.eta_total);
    let low = decade(rho_min_ppm, rho_min_ppm * 10.0, &|r| r.breakdown.eta_total);
    let conv_high = decade(rho_max_ppm / 10.0, rho_max_ppm, &|r| r.eta_conventional);
    Ok(DensitySweep {
        rows,
        high_density_exponent: high,
        low_density_exponent: low,
        conventional_high_density_exponent: conv_high,
    })
}

/// Smallest bias field (V/cm) that spectrally isolates the aligned NV group
/// in a (111)-cut sample.
///
/// With the bias along one NV axis, the three tilted groups see
/// E_∥ = −E_b/3 and E_⊥ = (2√2/3)·E_b, so their lowest branch sits at
/// −χ^e_∥·E_b/3 − χ^e_⊥·(2√2/3)·E_b while the aligned group sits at
/// χ^e_∥·E_b. Isolation demands the gap exceed Γ_e/2.
pub fn required_bias_field(
    gamma_e_mhz: f64,
    chi_e_perp_mhz: f64,
    chi_e_par_mhz: f64,
) -> f64 {
    let tilt = 2.0 * std::f64::consts::SQRT_2 / 3.0;
    let gap_per_field = chi_e_par_mhz + chi_e_par_mhz / 3.0 + chi_e_perp_mhz * tilt;
    0.5 * gamma_e_mhz / gap_per_field
}

/// Ensemble-average level shift (in units of χ^e_⊥·(V/cm)) of the lower
/// branch for a small external perpendicular field δE_⊥ on top of randomly
/// oriented internal transverse fields of strength e0:
/// (1/2π)∮√(E₀² + δE² + 2·δE·E₀·cosθ)dθ − E₀.
///
/// The first-order term vanishes by symmetry; the survivor is O(δE²/E₀).
pub fn perpendicular_suppression(delta_e_perp_vcm: f64, e0_vcm: f64) -> f64 {
    assert!(e0_vcm > 0.0, "ensemble field scale must be positive");
    // Periodic trapezoid rule: spectrally accurate for this integrand.
    let n = 4096;
    let mut acc = 0.0;
    for k in 0..n {
        let theta = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
        acc += (e0_vcm * e0_vcm
            + delta_e_perp_vcm * delta_e_perp_vcm
            + 2.0 * delta_e_perp_vcm * e0_vcm * theta.cos())
        .sqrt();
    }
    acc / n as f64 - e0_vcm
}

/// Fluorescence-only sensitivity with a substituted (e.g. thermally
/// broadened) optical linewidth; the microwave-free room-temperature
/// variant of the protocol.
pub fn microwave_free_sensitivity(
    gamma_e_thermal_mhz: f64,
    rho_nv_ppm: f64,
    p: &ProtocolParams,
) -> Result<f64, SensitivityError> {
    let (rate, c_r) = count_rate_and_contrast(rho_nv_ppm, p);
    if !(rate > 0.0) {
        return Err(SensitivityError::ZeroCountRate { rate });
    }
    Ok(p.p_f * (gamma_e_thermal_mhz * 1e6) / (p.chi_e_par_hz * c_r * rate.sqrt()))
}
