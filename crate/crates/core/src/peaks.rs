//! Peak observables of synthesized or measured spectra: the positive-peak
//! splitting Π_⊥, its shot-noise uncertainty, and Lorentzian linewidths.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::spectrum::Spectrum;
use crate::FitError;

/// Controls for peak detection.
#[derive(Debug, Clone, Copy)]
pub struct PeakExtraction {
    /// Peaks must rise above the central valley by this multiple of the
    /// robust noise estimate.
    pub prominence_sigma: f64,
}

impl Default for PeakExtraction {
    fn default() -> Self {
        Self {
            prominence_sigma: 3.0,
        }
    }
}

/// Splitting observables of one spectrum.
#[derive(Debug, Clone, Copy)]
pub struct SplittingExtraction {
    pub omega_plus_mhz: f64,
    pub omega_minus_mhz: f64,
    /// Half peak-to-peak splitting, (ω₊ − ω₋)/2.
    pub pi_perp_mhz: f64,
    /// Robust noise scale used for the prominence test.
    pub noise_sigma: f64,
}

/// Linewidth observables from per-peak Lorentzian fits.
#[derive(Debug, Clone, Copy)]
pub struct LinewidthExtraction {
    /// Mean FWHM of the left and right fits (MHz).
    pub gamma_g_mhz: f64,
    /// |left − right| FWHM difference (MHz).
    pub gamma_g_err_mhz: f64,
    pub fwhm_left_mhz: f64,
    pub fwhm_right_mhz: f64,
}

/// Robust noise scale: scaled median absolute deviation of first
/// differences. Exact zero for constant signals, small for smooth ones.
fn robust_noise(signal: &[f64]) -> f64 {
    let mut diffs: Vec<f64> = signal.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    if diffs.is_empty() {
        return 0.0;
    }
    let mid = diffs.len() / 2;
    diffs.select_nth_unstable_by(mid, |a, b| a.partial_cmp(b).unwrap());
    // MAD → σ for Gaussian noise, with the √2 of differencing removed.
    diffs[mid] * 1.4826 / std::f64::consts::SQRT_2
}

/// Quadratic refinement of a grid argmax through its two neighbors.
fn parabolic_peak(x: &[f64], y: &[f64], i: usize) -> f64 {
    let denom = y[i - 1] - 2.0 * y[i] + y[i + 1];
    if denom.abs() < 1e-300 {
        return x[i];
    }
    let off = (0.5 * (y[i - 1] - y[i + 1]) / denom).clamp(-0.5, 0.5);
    x[i] + off * (x[i + 1] - x[i - 1]) * 0.5
}

fn side_argmax(signal: &[f64], range: std::ops::Range<usize>) -> usize {
    let mut best = range.start;
    for i in range {
        if signal[i] > signal[best] {
            best = i;
        }
    }
    best
}

/// Locates the two positive-contrast peaks and returns the half splitting.
///
/// The maxima on each side of ω = 0 must be interior grid points, exceed the
/// central valley by a prominence floor, and be refined by a three-point
/// parabola. Fails with `PeaksUnresolved` otherwise.
pub fn extract_peak_splitting(
    spec: &Spectrum,
    opts: &PeakExtraction,
) -> Result<SplittingExtraction, FitError> {
    let x = spec.mw_offset_mhz();
    let y = spec.signal();
    let n = y.len();
    if n < 7 {
        return Err(FitError::PeaksUnresolved(format!(
            "grid of {n} points is too short"
        )));
    }
    let center = x.partition_point(|&v| v < 0.0);
    if center < 3 || center + 3 > n {
        return Err(FitError::PeaksUnresolved(
            "grid does not straddle zero offset".to_string(),
        ));
    }
    let i_minus = side_argmax(y, 1..center);
    let i_plus = side_argmax(y, center..n - 1);
    for (name, i) in [("left", i_minus), ("right", i_plus)] {
        if i == 0 || i + 1 >= n || y[i] < y[i - 1] || y[i] < y[i + 1] {
            return Err(FitError::PeaksUnresolved(format!(
                "{name} maximum is not an interior local maximum"
            )));
        }
    }
    // Valley between the two maxima.
    let valley = y[i_minus..=i_plus]
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let noise = robust_noise(y);
    let floor = opts.prominence_sigma * noise;
    let prominence = (y[i_minus] - valley).min(y[i_plus] - valley);
    if prominence <= floor || prominence <= 0.0 {
        return Err(FitError::PeaksUnresolved(format!(
            "prominence {prominence:.3e} below floor {floor:.3e}"
        )));
    }
    let omega_minus = parabolic_peak(x, y, i_minus);
    let omega_plus = parabolic_peak(x, y, i_plus);
    Ok(SplittingExtraction {
        omega_plus_mhz: omega_plus,
        omega_minus_mhz: omega_minus,
        pi_perp_mhz: 0.5 * (omega_plus - omega_minus),
        noise_sigma: noise,
    })
}

/// Standard deviation of the re-extracted ω₊ under Gaussian noise of scale
/// `noise_sigma`, over `trials` realizations. Fails when more than 10% of
/// the trials lose the peaks.
pub fn peak_uncertainty_mc(
    spec: &Spectrum,
    noise_sigma: f64,
    trials: usize,
    seed: u64,
    opts: &PeakExtraction,
) -> Result<f64, FitError> {
    if trials < 100 {
        return Err(FitError::TooFewTrials {
            got: trials,
            required: 100,
        });
    }
    if noise_sigma <= 0.0 {
        // No noise, no spread; still demand the peaks resolve at all.
        extract_peak_splitting(spec, opts)?;
        return Ok(0.0);
    }
    let normal = Normal::new(0.0, noise_sigma).expect("sigma > 0");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut omegas: Vec<f64> = Vec::with_capacity(trials);
    let mut unresolved = 0usize;
    let mut noisy = spec.signal().to_vec();
    for _ in 0..trials {
        for (dst, &src) in noisy.iter_mut().zip(spec.signal()) {
            *dst = src + normal.sample(&mut rng);
        }
        let trial = Spectrum::new(spec.mw_offset_mhz().to_vec(), noisy.clone())
            .expect("grid already validated");
        match extract_peak_splitting(&trial, opts) {
            Ok(s) => omegas.push(s.omega_plus_mhz),
            Err(_) => unresolved += 1,
        }
    }
    if unresolved * 10 > trials {
        return Err(FitError::TooManyUnresolved {
            unresolved,
            trials,
        });
    }
    let n = omegas.len() as f64;
    let mean = omegas.iter().sum::<f64>() / n;
    let var = omegas.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(var.sqrt())
}

/// Lorentzian-plus-offset model for one peak.
fn lorentz_model(x: f64, p: &[f64; 4]) -> f64 {
    let hw = 0.5 * p[2];
    p[3] + p[0] * hw * hw / ((x - p[1]).powi(2) + hw * hw)
}

/// Levenberg-damped Gauss-Newton fit of amplitude, center, FWHM, offset.
fn fit_lorentzian(x: &[f64], y: &[f64], init: [f64; 4]) -> Option<[f64; 4]> {
    let mut p = init;
    let mut lambda = 1e-3;
    let sse = |p: &[f64; 4]| -> f64 {
        x.iter()
            .zip(y)
            .map(|(&xi, &yi)| (yi - lorentz_model(xi, p)).powi(2))
            .sum()
    };
    let mut best = sse(&p);
    for _ in 0..60 {
        // Analytic Jacobian of the residuals.
        let mut jtj = [[0.0_f64; 4]; 4];
        let mut jtr = [0.0_f64; 4];
        let hw = 0.5 * p[2];
        for (&xi, &yi) in x.iter().zip(y) {
            let dx = xi - p[1];
            let denom = dx * dx + hw * hw;
            let shape = hw * hw / denom;
            let r = yi - lorentz_model(xi, &p);
            let d_amp = shape;
            let d_center = p[0] * hw * hw * 2.0 * dx / (denom * denom);
            let d_fwhm = p[0] * (hw * denom - hw * hw * hw) / (denom * denom);
            let d_off = 1.0;
            let grad = [d_amp, d_center, d_fwhm, d_off];
            for a in 0..4 {
                jtr[a] += grad[a] * r;
                for b in 0..4 {
                    jtj[a][b] += grad[a] * grad[b];
                }
            }
        }
        // Solve (JᵀJ + λ diag) δ = Jᵀr by Gaussian elimination.
        let mut m = jtj;
        for (a, row) in m.iter_mut().enumerate() {
            row[a] *= 1.0 + lambda;
        }
        let delta = solve4(m, jtr)?;
        let trial = [
            p[0] + delta[0],
            p[1] + delta[1],
            (p[2] + delta[2]).max(1e-6),
            p[3] + delta[3],
        ];
        let trial_sse = sse(&trial);
        if trial_sse < best {
            let improvement = (best - trial_sse) / best.max(1e-300);
            p = trial;
            best = trial_sse;
            lambda = (lambda * 0.3).max(1e-12);
            if improvement < 1e-12 {
                break;
            }
        } else {
            lambda *= 8.0;
            if lambda > 1e10 {
                break;
            }
        }
    }
    if p.iter().all(|v| v.is_finite()) && p[2] > 0.0 {
        Some(p)
    } else {
        None
    }
}

fn solve4(mut m: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| {
            m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap()
        })?;
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..4 {
            let f = m[row][col] / m[col][col];
            for k in col..4 {
                m[row][k] -= f * m[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for col in (0..4).rev() {
        let mut acc = b[col];
        for k in (col + 1)..4 {
            acc -= m[col][k] * x[k];
        }
        x[col] = acc / m[col][col];
    }
    Some(x)
}

/// Fits a Lorentzian to each positive peak; Γ_g is the mean FWHM and the
/// error is the left/right difference.
pub fn extract_linewidth(
    spec: &Spectrum,
    opts: &PeakExtraction,
) -> Result<LinewidthExtraction, FitError> {
    let split = extract_peak_splitting(spec, opts)?;
    let x = spec.mw_offset_mhz();
    let y = spec.signal();
    let mut fwhm = [0.0_f64; 2];
    for (slot, (side, center)) in [
        ("left", split.omega_minus_mhz),
        ("right", split.omega_plus_mhz),
    ]
    .into_iter()
    .enumerate()
    {
        let i_peak = x.partition_point(|&v| v < center).min(x.len() - 2).max(1);
        // Initial width: walk to half maximum on each flank.
        let valley = y.iter().cloned().fold(f64::INFINITY, f64::min);
        let half = 0.5 * (y[i_peak] + valley);
        let mut i_lo = i_peak;
        while i_lo > 0 && y[i_lo] > half {
            i_lo -= 1;
        }
        let mut i_hi = i_peak;
        while i_hi + 1 < y.len() && y[i_hi] > half {
            i_hi += 1;
        }
        let w0 = (x[i_hi] - x[i_lo]).max(3.0 * (x[1] - x[0]));
        let span = 3.0 * w0;
        let lo = x.partition_point(|&v| v < center - span);
        let hi = x.partition_point(|&v| v < center + span);
        // Keep the window on this side of the valley so the twin peak does
        // not leak into the fit.
        let mid = x.partition_point(|&v| v < 0.0);
        let (lo, hi) = if center < 0.0 {
            (lo, hi.min(mid))
        } else {
            (lo.max(mid), hi)
        };
        if hi - lo < 8 {
            let side_name: &'static str = if slot == 0 { "left" } else { "right" };
            return Err(FitError::LineFitDiverged { side: side_name });
        }
        let init = [y[i_peak] - valley, center, w0, valley];
        let fitted = fit_lorentzian(&x[lo..hi], &y[lo..hi], init).ok_or({
            FitError::LineFitDiverged {
                side: if slot == 0 { "left" } else { "right" },
            }
        })?;
        let _ = side;
        fwhm[slot] = fitted[2];
    }
    Ok(LinewidthExtraction {
        gamma_g_mhz: 0.5 * (fwhm[0] + fwhm[1]),
        gamma_g_err_mhz: (fwhm[0] - fwhm[1]).abs(),
        fwhm_left_mhz: fwhm[0],
        fwhm_right_mhz: fwhm[1],
    })
}
