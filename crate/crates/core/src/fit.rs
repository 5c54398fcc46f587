//! χ² extraction of the excited-state susceptibilities from splitting data,
//! with linearized confidence regions, systematic scans over the assumed
//! charge environment, and the closed-form elbow/slope estimator.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constants::{ChargeDensity, PhysicalConstants};
use crate::field::FieldDistribution;
use crate::numerics::{linear_fit, Sym2};
use crate::peaks::{extract_peak_splitting, PeakExtraction};
use crate::spectrum::{resonant_spectrum, BroadeningParams, SampleParams, SynthesisConfig};
use crate::FitError;

/// Peak observables of one spectrum at one detuning.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PeakSummary {
    pub detuning_ghz: f64,
    /// Half peak-to-peak splitting (MHz).
    pub pi_perp_mhz: f64,
    /// 1σ uncertainty on the splitting (MHz).
    pub pi_perp_err_mhz: f64,
    /// Mean Lorentzian FWHM of the two peaks (MHz), when extracted.
    pub gamma_g_mhz: Option<f64>,
    /// Left/right FWHM difference (MHz), when extracted.
    pub gamma_g_err_mhz: Option<f64>,
}

impl PeakSummary {
    pub fn splitting(detuning_ghz: f64, pi_perp_mhz: f64, pi_perp_err_mhz: f64) -> Self {
        Self {
            detuning_ghz,
            pi_perp_mhz,
            pi_perp_err_mhz,
            gamma_g_mhz: None,
            gamma_g_err_mhz: None,
        }
    }
}

/// Result of the two-parameter susceptibility fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    /// Fitted χ^e_⊥ (MHz/(V/cm)).
    pub chi_e_perp: f64,
    /// Fitted χ^e_∥ (MHz/(V/cm)).
    pub chi_e_par: f64,
    /// Parameter covariance, ordered (⊥, ∥).
    pub covariance: [[f64; 2]; 2],
    pub chi2: f64,
    pub chi2_reduced: f64,
    pub n_obs: usize,
    /// True when the covariance condition number exceeds 10⁶ (shallow
    /// direction in parameter space).
    pub degenerate: bool,
    /// χ² of each accepted optimizer step, multistart winner first.
    pub objective_history: Vec<f64>,
    /// Max fractional deviation per parameter over a systematic grid, when
    /// one was scanned.
    pub systematic_spread: Option<[f64; 2]>,
}

/// 2σ confidence ellipse from the linearized model.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConfidenceRegion {
    /// Semi-axes of the 2σ ellipse (MHz/(V/cm)), major first.
    pub semi_axes_2sigma: [f64; 2],
    /// Angle of the major axis against the χ_⊥ axis (radians).
    pub angle_rad: f64,
    /// Marginal 2σ fractional errors per parameter (⊥, ∥).
    pub fractional_err_2sigma: [f64; 2],
}

impl ConfidenceRegion {
    /// Mahalanobis Δχ² threshold of the joint 2σ region for 2 parameters.
    pub const TWO_SIGMA_DELTA_CHI2: f64 = 6.17;
}

/// Everything the splitting model needs besides the two fit parameters.
pub struct ModelContext {
    pub params: SampleParams,
    pub broadening: BroadeningParams,
    pub dist: FieldDistribution,
    pub synthesis: SynthesisConfig,
    pub extraction: PeakExtraction,
}

impl ModelContext {
    pub fn new(
        params: SampleParams,
        broadening: BroadeningParams,
        dist: FieldDistribution,
    ) -> Self {
        Self {
            params,
            broadening,
            dist,
            synthesis: SynthesisConfig::for_fitting(),
            extraction: PeakExtraction::default(),
        }
    }

    /// Model splitting at one detuning for trial susceptibilities. Only the
    /// resonant configurations enter: near the positive peaks the
    /// off-resonant background is flat.
    pub fn model_splitting(
        &self,
        detuning_ghz: f64,
        chi_e_perp: f64,
        chi_e_par: f64,
    ) -> Result<f64, FitError> {
        let params = SampleParams {
            chi_e_perp,
            chi_e_par,
            ..self.params.clone()
        };
        let synth = resonant_spectrum(
            detuning_ghz,
            &params,
            &self.broadening,
            &self.dist,
            &self.synthesis,
        );
        let split = extract_peak_splitting(&synth.spectrum, &self.extraction)?;
        Ok(split.pi_perp_mhz)
    }

    /// Model splittings at many detunings, evaluated in parallel.
    pub fn model_splittings(
        &self,
        detunings_ghz: &[f64],
        chi_e_perp: f64,
        chi_e_par: f64,
    ) -> Result<Vec<f64>, FitError> {
        let results: Vec<Result<f64, FitError>> = detunings_ghz
            .par_iter()
            .map(|&d| self.model_splitting(d, chi_e_perp, chi_e_par))
            .collect();
        results.into_iter().collect()
    }
}

fn chi2_of(model: &[f64], data: &[PeakSummary]) -> f64 {
    model
        .iter()
        .zip(data)
        .map(|(m, d)| ((d.pi_perp_mhz - m) / d.pi_perp_err_mhz).powi(2))
        .sum()
}

fn validate_data(data: &[PeakSummary]) -> Result<(), FitError> {
    if data.len() < 3 {
        return Err(FitError::TooFewObservations {
            got: data.len(),
            required: 3,
        });
    }
    for (i, d) in data.iter().enumerate() {
        if !(d.pi_perp_err_mhz > 0.0) {
            return Err(FitError::BadSigma {
                index: i,
                sigma: d.pi_perp_err_mhz,
            });
        }
    }
    Ok(())
}

/// Fits (χ^e_⊥, χ^e_∥) to splitting observations by weighted least squares:
/// a 5×5 multistart grid seeds a Levenberg-damped Gauss–Newton descent with
/// finite-difference derivatives.
pub fn fit_susceptibilities(
    data: &[PeakSummary],
    ctx: &ModelContext,
) -> Result<FitResult, FitError> {
    validate_data(data)?;
    let detunings: Vec<f64> = data.iter().map(|d| d.detuning_ghz).collect();
    let eval = |p: [f64; 2]| -> Result<(Vec<f64>, f64), FitError> {
        let model = ctx.model_splittings(&detunings, p[0], p[1])?;
        let chi2 = chi2_of(&model, data);
        Ok((model, chi2))
    };

    // Multistart: a coarse grid centered on the elbow/slope estimate when it
    // exists, otherwise on the context defaults.
    let center = analytic_start(data, ctx)
        .unwrap_or([ctx.params.chi_e_perp, ctx.params.chi_e_par]);
    let factors = [0.55, 0.75, 1.0, 1.35, 1.8];
    let mut grid: Vec<[f64; 2]> = Vec::with_capacity(25);
    for fp in factors {
        for fq in factors {
            grid.push([center[0] * fp, center[1] * fq]);
        }
    }
    let scored: Vec<([f64; 2], f64)> = grid
        .into_iter()
        .filter_map(|p| eval(p).ok().map(|(_, c)| (p, c)))
        .collect();
    let (mut p, mut chi2) = scored
        .into_iter()
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .ok_or(FitError::NoConvergence { iterations: 0 })?;

    let mut history = vec![chi2];
    let mut lambda = 1e-3;
    let max_iter = 40;
    let mut converged = false;
    let mut jtj_opt = None;
    for _ in 0..max_iter {
        let (model, _) = eval(p)?;
        // Finite-difference Jacobian of the model splittings.
        let steps = [p[0] * 0.015, p[1] * 0.015];
        let model_dp = eval([p[0] + steps[0], p[1]])?.0;
        let model_dq = eval([p[0], p[1] + steps[1]])?.0;
        let mut jtj = Sym2 {
            m00: 0.0,
            m01: 0.0,
            m11: 0.0,
        };
        let mut jtr = [0.0_f64; 2];
        for i in 0..model.len() {
            let w = 1.0 / data[i].pi_perp_err_mhz.powi(2);
            let j0 = (model_dp[i] - model[i]) / steps[0];
            let j1 = (model_dq[i] - model[i]) / steps[1];
            let r = data[i].pi_perp_mhz - model[i];
            jtj.m00 += w * j0 * j0;
            jtj.m01 += w * j0 * j1;
            jtj.m11 += w * j1 * j1;
            jtr[0] += w * j0 * r;
            jtr[1] += w * j1 * r;
        }
        jtj_opt = Some(jtj);
        // Levenberg step.
        let mut accepted = false;
        for _ in 0..12 {
            let damped = Sym2 {
                m00: jtj.m00 * (1.0 + lambda),
                m01: jtj.m01,
                m11: jtj.m11 * (1.0 + lambda),
            };
            let Some(inv) = damped.inverse() else {
                lambda *= 10.0;
                continue;
            };
            let delta = inv.mul_vec(jtr);
            let trial = [(p[0] + delta[0]).max(1e-6), (p[1] + delta[1]).max(1e-6)];
            match eval(trial) {
                Ok((_, trial_chi2)) if trial_chi2 <= chi2 => {
                    let gain = chi2 - trial_chi2;
                    p = trial;
                    chi2 = trial_chi2;
                    history.push(chi2);
                    lambda = (lambda * 0.3).max(1e-10);
                    accepted = true;
                    if gain < 1e-8 * chi2.max(1.0)
                        || (delta[0] / p[0]).abs() + (delta[1] / p[1]).abs() < 1e-5
                    {
                        converged = true;
                    }
                    break;
                }
                _ => lambda *= 6.0,
            }
        }
        if !accepted {
            // No downhill step found: treat the current point as the optimum.
            converged = true;
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(FitError::NoConvergence {
            iterations: max_iter,
        });
    }
    let jtj = jtj_opt.ok_or(FitError::NoConvergence { iterations: 0 })?;
    let cov = jtj.inverse().ok_or(FitError::SingularJacobian)?;
    let degenerate = jtj.condition() > 1e6;
    let dof = (data.len() as f64 - 2.0).max(1.0);
    Ok(FitResult {
        chi_e_perp: p[0],
        chi_e_par: p[1],
        covariance: [[cov.m00, cov.m01], [cov.m01, cov.m11]],
        chi2,
        chi2_reduced: chi2 / dof,
        n_obs: data.len(),
        degenerate,
        objective_history: history,
        systematic_spread: None,
    })
}

/// Seeds the multistart grid from the closed-form estimator when the data
/// shows both regimes.
fn analytic_start(data: &[PeakSummary], ctx: &ModelContext) -> Option<[f64; 2]> {
    let det: Vec<f64> = data.iter().map(|d| d.detuning_ghz).collect();
    let pi: Vec<f64> = data.iter().map(|d| d.pi_perp_mhz).collect();
    let (elbow_ghz, slope, _) = two_segment_elbow(&det, &pi)?;
    let e0_freq_mhz =
        ctx.params.chi_g_perp * ctx.dist.most_probable_field_vcm() / 1e6;
    analytic_susceptibilities(elbow_ghz, slope, e0_freq_mhz, ctx.params.chi_g_perp)
        .ok()
        .map(|(perp, par)| [perp, par])
}

/// Piecewise-linear two-segment fit with a free breakpoint. Returns
/// (elbow_ghz, large-detuning slope as a dimensionless MHz/MHz number,
/// plateau level in MHz).
pub fn two_segment_elbow(detunings_ghz: &[f64], pi_mhz: &[f64]) -> Option<(f64, f64, f64)> {
    let n = detunings_ghz.len();
    if n < 5 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| detunings_ghz[a].partial_cmp(&detunings_ghz[b]).unwrap());
    let x: Vec<f64> = order.iter().map(|&i| detunings_ghz[i]).collect();
    let y: Vec<f64> = order.iter().map(|&i| pi_mhz[i]).collect();

    let mut best: Option<(f64, usize, (f64, f64), (f64, f64))> = None;
    for k in 2..(n - 2) {
        let (m1, b1) = linear_fit(&x[..k], &y[..k]);
        let (m2, b2) = linear_fit(&x[k..], &y[k..]);
        let sse: f64 = x[..k]
            .iter()
            .zip(&y[..k])
            .map(|(&xi, &yi)| (yi - m1 * xi - b1).powi(2))
            .chain(
                x[k..]
                    .iter()
                    .zip(&y[k..])
                    .map(|(&xi, &yi)| (yi - m2 * xi - b2).powi(2)),
            )
            .sum();
        if best.is_none() || sse < best.as_ref().unwrap().0 {
            best = Some((sse, k, (m1, b1), (m2, b2)));
        }
    }
    let (_, _, (m1, b1), (m2, b2)) = best?;
    if (m2 - m1).abs() < 1e-12 {
        return None;
    }
    let elbow = (b1 - b2) / (m2 - m1);
    // Π carries MHz, Δν carries GHz: slope m2 is MHz/GHz, i.e. 10³·m_Π.
    let plateau = m1 * elbow + b1;
    Some((elbow, m2 / 1e3, plateau))
}

/// Closed-form susceptibilities from the elbow location and asymptotic slope
/// of Π_⊥(Δν): the exterior cone angle α obeys
/// sin α = m_Π·Δν*/(E₀χ^g_⊥), and χ^e_∥/χ^g_⊥ = cos α·Δν*/(E₀χ^g_⊥).
///
/// `slope` is dimensionless (MHz per MHz); `e0_freq_mhz` is E₀·χ^g_⊥.
/// Returns (χ^e_⊥, χ^e_∥) in MHz/(V/cm).
pub fn analytic_susceptibilities(
    elbow_detuning_ghz: f64,
    slope: f64,
    e0_freq_mhz: f64,
    chi_g_perp_hz: f64,
) -> Result<(f64, f64), FitError> {
    let elbow_mhz = elbow_detuning_ghz * 1e3;
    let sin_alpha = slope * elbow_mhz / e0_freq_mhz;
    if !(sin_alpha > 0.0 && sin_alpha <= 1.0) {
        return Err(FitError::ElbowDomain { value: sin_alpha });
    }
    let alpha = sin_alpha.asin();
    let ratio_par = alpha.cos() * elbow_mhz / e0_freq_mhz;
    let chi_e_par = ratio_par * chi_g_perp_hz / 1e6;
    let chi_e_perp = chi_e_par * alpha.tan();
    Ok((chi_e_perp, chi_e_par))
}

/// 2σ confidence ellipse and marginal fractional errors from the fitted
/// covariance.
pub fn confidence_region(fit: &FitResult) -> Result<ConfidenceRegion, FitError> {
    let cov = Sym2 {
        m00: fit.covariance[0][0],
        m01: fit.covariance[0][1],
        m11: fit.covariance[1][1],
    };
    if !(cov.m00 > 0.0 && cov.m11 > 0.0) || cov.det() <= 0.0 {
        return Err(FitError::SingularJacobian);
    }
    let (l1, l2, angle) = cov.eigen();
    Ok(ConfidenceRegion {
        semi_axes_2sigma: [2.0 * l1.sqrt(), 2.0 * l2.sqrt()],
        angle_rad: angle,
        fractional_err_2sigma: [
            2.0 * cov.m00.sqrt() / fit.chi_e_perp,
            2.0 * cov.m11.sqrt() / fit.chi_e_par,
        ],
    })
}

/// Mahalanobis Δχ² of a parameter point against a fit's covariance; within
/// the 2σ region when ≤ [`ConfidenceRegion::TWO_SIGMA_DELTA_CHI2`].
pub fn mahalanobis_delta_chi2(fit: &FitResult, chi_e_perp: f64, chi_e_par: f64) -> f64 {
    let d = [chi_e_perp - fit.chi_e_perp, chi_e_par - fit.chi_e_par];
    let cov = Sym2 {
        m00: fit.covariance[0][0],
        m01: fit.covariance[0][1],
        m11: fit.covariance[1][1],
    };
    match cov.inverse() {
        Some(inv) => {
            let v = inv.mul_vec(d);
            d[0] * v[0] + d[1] * v[1]
        }
        None => f64::INFINITY,
    }
}

/// One grid point of the systematic scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanPoint {
    pub rho_c_ppm: f64,
    pub kappa_ih_mhz: f64,
    pub chi_e_perp: Option<f64>,
    pub chi_e_par: Option<f64>,
    pub failure: Option<String>,
}

/// Systematic spread of the fitted parameters over assumed (ρ_c, κ_IH).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystematicScan {
    pub points: Vec<ScanPoint>,
    /// Max |Δp|/p against the central fit, per parameter (⊥, ∥).
    pub spread: [f64; 2],
}

/// Refits the same data at each (ρ_c, κ_IH) grid point and reports the max
/// fractional deviation from the central fit. Per-point failures are carried
/// in the result; the scan continues past them.
pub fn systematic_scan(
    data: &[PeakSummary],
    central: &FitResult,
    grid: &[(f64, f64)],
    ctx: &ModelContext,
    consts: &PhysicalConstants,
) -> Result<SystematicScan, FitError> {
    let ratio = ctx.dist.rho_eff().ppm() / ctx.dist.source_rho_c().ppm();
    let mut points = Vec::with_capacity(grid.len());
    let mut spread = [0.0_f64; 2];
    for &(rho_ppm, kappa_ih) in grid {
        let result = (|| -> Result<(f64, f64), FitError> {
            let rho = ChargeDensity::from_ppm(rho_ppm).map_err(|e| {
                FitError::PeaksUnresolved(e.to_string())
            })?;
            let dist = FieldDistribution::with_ratio(rho, ratio, consts)
                .map_err(|e| FitError::PeaksUnresolved(e.to_string()))?;
            let scan_ctx = ModelContext {
                params: SampleParams {
                    rho_c: rho,
                    ..ctx.params.clone()
                },
                broadening: BroadeningParams {
                    kappa_ih_res_mhz: kappa_ih,
                    ..ctx.broadening
                },
                dist,
                synthesis: ctx.synthesis,
                extraction: ctx.extraction,
            };
            let fit = fit_susceptibilities(data, &scan_ctx)?;
            Ok((fit.chi_e_perp, fit.chi_e_par))
        })();
        match result {
            Ok((perp, par)) => {
                spread[0] = spread[0].max(((perp - central.chi_e_perp) / central.chi_e_perp).abs());
                spread[1] = spread[1].max(((par - central.chi_e_par) / central.chi_e_par).abs());
                points.push(ScanPoint {
                    rho_c_ppm: rho_ppm,
                    kappa_ih_mhz: kappa_ih,
                    chi_e_perp: Some(perp),
                    chi_e_par: Some(par),
                    failure: None,
                });
            }
            Err(e) => points.push(ScanPoint {
                rho_c_ppm: rho_ppm,
                kappa_ih_mhz: kappa_ih,
                chi_e_perp: None,
                chi_e_par: None,
                failure: Some(e.to_string()),
            }),
        }
    }
    Ok(SystematicScan { points, spread })
}
