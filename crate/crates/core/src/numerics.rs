//! Small numerical kernels shared across the crate: adaptive quadrature,
//! 1-D minimization, and dense 2×2 linear algebra for the fit engine.

/// Adaptive Simpson quadrature with absolute+relative tolerance.
///
/// `breakpoints` lets callers split the interval at known kinks or peaks so
/// the recursion starts from well-behaved panels.
pub fn integrate<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    rel_tol: f64,
    abs_tol: f64,
) -> f64 {
    let mut edges: Vec<f64> = Vec::with_capacity(breakpoints.len() + 2);
    edges.push(a);
    for &x in breakpoints {
        if x > a && x < b {
            edges.push(x);
        }
    }
    edges.push(b);
    edges.sort_by(|x, y| x.partial_cmp(y).unwrap());
    edges.dedup();

    let mut total = 0.0;
    for w in edges.windows(2) {
        total += adaptive_panel(f, w[0], w[1], rel_tol, abs_tol, 48);
    }
    total
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive_panel<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    recurse(f, a, m, b, fa, fm, fb, whole, rel_tol, abs_tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    m: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    rel_tol: f64,
    abs_tol: f64,
    depth: u32,
) -> f64 {
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let err = left + right - whole;
    if depth == 0 || err.abs() <= 15.0 * (abs_tol + rel_tol * (left + right).abs()) {
        return left + right + err / 15.0;
    }
    let half_abs = abs_tol * 0.5;
    recurse(f, a, lm, m, fa, flm, fm, left, rel_tol, half_abs, depth - 1)
        + recurse(f, m, rm, b, fm, frm, fb, right, rel_tol, half_abs, depth - 1)
}

/// Golden-section search for the minimum of a unimodal function on [a, b].
pub fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, x_tol: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > x_tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Golden-section search for the maximum.
pub fn golden_max<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, x_tol: f64) -> f64 {
    golden_min(|x| -f(x), a, b, x_tol)
}

/// Symmetric 2×2 matrix in row-major [m00, m01, m11] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sym2 {
    pub m00: f64,
    pub m01: f64,
    pub m11: f64,
}

impl Sym2 {
    pub fn det(&self) -> f64 {
        self.m00 * self.m11 - self.m01 * self.m01
    }

    pub fn inverse(&self) -> Option<Sym2> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        Some(Sym2 {
            m00: self.m11 / det,
            m01: -self.m01 / det,
            m11: self.m00 / det,
        })
    }

    /// Eigenvalues sorted descending, with the eigenvector angle (radians)
    /// of the leading eigenvector.
    pub fn eigen(&self) -> (f64, f64, f64) {
        let tr = self.m00 + self.m11;
        let disc = (0.25 * (self.m00 - self.m11).powi(2) + self.m01 * self.m01).sqrt();
        let l1 = 0.5 * tr + disc;
        let l2 = 0.5 * tr - disc;
        let angle = if self.m01.abs() < 1e-300 && self.m00 >= self.m11 {
            0.0
        } else if self.m01.abs() < 1e-300 {
            std::f64::consts::FRAC_PI_2
        } else {
            (l1 - self.m00).atan2(self.m01)
        };
        (l1, l2, angle)
    }

    /// Condition number (ratio of eigenvalue magnitudes).
    pub fn condition(&self) -> f64 {
        let (l1, l2, _) = self.eigen();
        if l2.abs() == 0.0 {
            f64::INFINITY
        } else {
            (l1 / l2).abs()
        }
    }

    pub fn mul_vec(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.m00 * v[0] + self.m01 * v[1],
            self.m01 * v[0] + self.m11 * v[1],
        ]
    }
}

/// Ordinary least-squares slope and intercept of y against x.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let denom = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    (slope, intercept)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomial_exactly() {
        let got = integrate(&|x: f64| x * x * x - 2.0 * x, 0.0, 2.0, &[], 1e-12, 1e-14);
        assert!((got - 0.0).abs() < 1e-10);
    }

    #[test]
    fn integrates_gaussian() {
        let got = integrate(
            &|x: f64| (-x * x / 2.0).exp(),
            -8.0,
            8.0,
            &[0.0],
            1e-10,
            1e-14,
        );
        assert!((got - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-8);
    }

    #[test]
    fn golden_finds_quadratic_minimum() {
        let x = golden_min(|x| (x - 1.3).powi(2), -4.0, 4.0, 1e-9);
        assert!((x - 1.3).abs() < 1e-7);
    }

    #[test]
    fn sym2_inverse_roundtrip() {
        let m = Sym2 {
            m00: 3.0,
            m01: 0.7,
            m11: 2.0,
        };
        let inv = m.inverse().unwrap();
        let v = m.mul_vec(inv.mul_vec([1.0, -2.0]));
        assert!((v[0] - 1.0).abs() < 1e-12);
        assert!((v[1] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.5 * v - 1.0).collect();
        let (m, b) = linear_fit(&x, &y);
        assert!((m - 2.5).abs() < 1e-12);
        assert!((b + 1.0).abs() < 1e-12);
    }
}
