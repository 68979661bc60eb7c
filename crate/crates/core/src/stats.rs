//! Small statistics toolkit: moments, least-squares exponent fits, and the
//! two-sample KS, χ² and correlation tests used by the checks.

use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Moments {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub var: f64,
}

impl Moments {
    pub fn of(xs: impl IntoIterator<Item = f64>) -> Self {
        // Welford.
        let (mut n, mut mean, mut m2) = (0usize, 0.0, 0.0);
        for x in xs {
            n += 1;
            let delta = x - mean;
            mean += delta / n as f64;
            m2 += delta * (x - mean);
        }
        let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
        Moments { n, mean, var }
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            return f64::NAN;
        }
        (self.var / self.n as f64).sqrt()
    }

    /// Standard error of the sample variance, from the fourth central
    /// moment; callers pass that moment in since `Moments` does not keep it.
    pub fn var_stderr(&self, m4: f64) -> f64 {
        let n = self.n as f64;
        ((m4 - self.var * self.var * (n - 3.0) / (n - 1.0)) / n).max(0.0).sqrt()
    }
}

/// Fourth central moment about `mean`.
pub fn central_moment4(xs: &[f64], mean: f64) -> f64 {
    xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / xs.len() as f64
}

/// Ordinary least squares `y = intercept + slope · x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    /// 95% confidence half-width of the slope.
    pub slope_ci95: f64,
    pub points: usize,
}

impl LinearFit {
    pub fn within(&self, target: f64, tol: f64) -> bool {
        (self.slope - target).abs() <= tol
    }
}

/// Weighted least squares with weights `w_i`; pass all ones for OLS.
pub fn linear_fit_weighted(x: &[f64], y: &[f64], w: &[f64]) -> LinearFit {
    assert!(x.len() == y.len() && x.len() == w.len() && x.len() >= 2, "fit needs two or more matched points");
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(a, b)| b * (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).zip(w).map(|((a, c), b)| b * (a - mx) * (c - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let n = x.len();
    let (slope_stderr, slope_ci95) = if n > 2 {
        let rss: f64 = x.iter().zip(y).zip(w).map(|((a, c), b)| b * (c - intercept - slope * a).powi(2)).sum();
        // Normalize weights so the residual scale is per point.
        let s2 = rss / (n - 2) as f64 * n as f64 / sw;
        let se = (s2 / (sxx * n as f64 / sw)).sqrt();
        let t = StudentsT::new(0.0, 1.0, (n - 2) as f64).expect("valid t").inverse_cdf(0.975);
        (se, t * se)
    } else {
        (0.0, 0.0)
    };
    LinearFit { slope, intercept, slope_stderr, slope_ci95, points: n }
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    linear_fit_weighted(x, y, &vec![1.0; x.len()])
}

/// Fit of `log y` against `log x`. With standard errors `se`, points are
/// weighted by `(y / se)²`, the inverse variance of `log y`.
pub fn loglog_fit(x: &[f64], y: &[f64], se: Option<&[f64]>) -> LinearFit {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let w: Vec<f64> = match se {
        Some(se) => y.iter().zip(se).map(|(v, s)| if *s > 0.0 { (v / s).powi(2) } else { 1e12 }).collect(),
        None => vec![1.0; x.len()],
    };
    linear_fit_weighted(&lx, &ly, &w)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub df: f64,
}

/// Asymptotic Kolmogorov distribution tail `P(K > t)`.
pub fn kolmogorov_tail(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    if t < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..200 {
        let term = (-2.0 * (k * k) as f64 * t * t).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov-Smirnov test. With ties (integer data) the
/// asymptotic p-value is conservative.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> TestResult {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut dmax) = (0, 0, 0.0f64);
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        dmax = dmax.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let t = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * dmax;
    TestResult { statistic: dmax, p_value: kolmogorov_tail(t), df: ne }
}

/// Pearson χ² goodness of fit; `expected` are counts, `constraints` the
/// number of fitted parameters besides the total.
pub fn chi_square(observed: &[f64], expected: &[f64], constraints: usize) -> TestResult {
    assert_eq!(observed.len(), expected.len());
    let stat: f64 = observed.iter().zip(expected).filter(|(_, e)| **e > 0.0).map(|(o, e)| (o - e).powi(2) / e).sum();
    let cells = expected.iter().filter(|e| **e > 0.0).count();
    let df = cells.saturating_sub(1 + constraints).max(1) as f64;
    let p = 1.0 - ChiSquared::new(df).expect("positive df").cdf(stat);
    TestResult { statistic: stat, p_value: p, df }
}

/// Pearson correlation and its standard error `sqrt((1 - r²)/(n - 2))`.
pub fn correlation(x: &[f64], y: &[f64]) -> (f64, f64) {
    let mx = Moments::of(x.iter().copied());
    let my = Moments::of(y.iter().copied());
    let n = x.len() as f64;
    let cov = x.iter().zip(y).map(|(a, b)| (a - mx.mean) * (b - my.mean)).sum::<f64>() / (n - 1.0);
    let denom = (mx.var * my.var).sqrt();
    let r = if denom > 0.0 { cov / denom } else { 0.0 };
    (r, ((1.0 - r * r) / (n - 2.0)).max(0.0).sqrt())
}

/// Binomial proportion and its standard error; the error uses
/// `max(k, 1)` so that a zero count still has a nonzero bar.
pub fn proportion(k: usize, n: usize) -> (f64, f64) {
    let p = k as f64 / n as f64;
    let pe = k.max(1) as f64 / n as f64;
    (p, (pe * (1.0 - pe).max(0.0) / n as f64).sqrt())
}

/// Ratio of sums `Σ a_i / Σ b_i` over replicas with its delta-method error.
pub fn ratio_of_sums(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if sb == 0.0 {
        return (f64::NAN, f64::NAN);
    }
    let r = sa / sb;
    let mb = sb / n;
    let var = a.iter().zip(b).map(|(x, y)| (x - r * y).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (r, (var / n).sqrt() / mb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn moments_match_two_pass() {
        let xs = [1.0, 4.0, 4.0, 9.0, 2.5];
        let m = Moments::of(xs);
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((m.mean - mean).abs() < 1e-12 && (m.var - var).abs() < 1e-12);
    }

    #[test]
    fn fit_recovers_power_law() {
        let x = [2.0, 4.0, 8.0, 16.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-1.5)).collect();
        let f = loglog_fit(&x, &y, None);
        assert!((f.slope + 1.5).abs() < 1e-12 && (f.intercept - 3f64.ln()).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|v| 2.0 * v + 1.0 + rng.random_range(-1.0..1.0)).collect();
        let f = linear_fit(&xs, &ys);
        assert!((f.slope - 2.0).abs() < 3.0 * f.slope_stderr);
        assert!(f.slope_ci95 > f.slope_stderr);
    }

    #[test]
    fn kolmogorov_tail_reference_values() {
        // P(K > 1.3581) = 0.05 and P(K > 1.6276) = 0.01.
        assert!((kolmogorov_tail(1.3581) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_tail(1.6276) - 0.01).abs() < 1e-3);
    }

    #[test]
    fn ks_detects_shift_and_accepts_same_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
        let c: Vec<f64> = (0..2000).map(|_| rng.random::<f64>() + 0.1).collect();
        assert!(ks_two_sample(&a, &b).p_value > 0.01);
        assert!(ks_two_sample(&a, &c).p_value < 1e-6);
    }

    #[test]
    fn chi_square_reference() {
        // χ² with 2 df: P(X > 5.991) = 0.05.
        let r = chi_square(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0], 0);
        assert_eq!(r.df, 2.0);
        assert!((r.statistic - 3.0).abs() < 1e-12);
        let p = 1.0 - ChiSquared::new(2.0).unwrap().cdf(5.991);
        assert!((p - 0.05).abs() < 1e-3);
    }

    #[test]
    fn correlation_and_ratio() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((correlation(&x, &[2.0, 4.0, 6.0, 8.0]).0 - 1.0).abs() < 1e-12);
        let (r, _) = ratio_of_sums(&[1.0, 3.0], &[2.0, 6.0]);
        assert_eq!(r, 0.5);
        assert_eq!(proportion(3, 10).0, 0.3);
    }
}
