//! Kolmogorov's maximal inequality for the walk and the Paley-Zygmund
//! lower bound for Poisson variables.

use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use statrs::distribution::{DiscreteCDF, Poisson as PoissonLaw};

use super::{CheckReport, CheckRow, Scale};
use crate::error::{Error, Result};
use crate::lattice::LatticePoint;
use crate::rng::RngStream;
use crate::stats::proportion;
use crate::walk::random_step;

#[derive(Clone, Debug)]
pub struct InequalityParams {
    pub dims: Vec<usize>,
    pub times: Vec<usize>,
    /// `λ = k·sqrt(n)` for each `k`.
    pub lambda_factors: Vec<f64>,
    pub walks: usize,
    pub poisson_means: Vec<f64>,
    pub thetas: Vec<f64>,
    pub poisson_samples: usize,
    pub slack: f64,
}

impl InequalityParams {
    pub fn at(scale: Scale) -> Self {
        let (walks, poisson_samples) = match scale {
            Scale::Full => (100_000, 1_000_000),
            Scale::Quick => (5_000, 50_000),
        };
        InequalityParams {
            dims: vec![3, 5],
            times: vec![16, 100, 256],
            lambda_factors: vec![1.0, 1.5, 2.0, 3.0],
            walks,
            poisson_means: vec![0.5, 1.0, 5.0],
            thetas: vec![0.25, 0.5],
            poisson_samples,
            slack: 5.0,
        }
    }
}

/// `max_{t<=n} |X(t)|²` (Euclidean) for a walk from the origin.
pub fn max_norm_sq(d: usize, n: usize, stream: RngStream) -> f64 {
    let mut rng = stream.rng();
    let mut x = LatticePoint::origin(d);
    let mut best = 0.0f64;
    for _ in 0..n {
        x.step(random_step(&mut rng, d));
        best = best.max(x.euclid_sq());
    }
    best
}

/// `(1-θ)² (Eξ)² / E[ξ²]` for `ξ ~ Poisson(λ)`.
pub fn paley_zygmund_bound(lambda: f64, theta: f64) -> f64 {
    (1.0 - theta).powi(2) * lambda * lambda / (lambda + lambda * lambda)
}

/// `P(ξ >= θλ)` for `ξ ~ Poisson(λ)`, exactly.
pub fn poisson_tail(lambda: f64, theta: f64) -> Result<f64> {
    let law = PoissonLaw::new(lambda).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let k = (theta * lambda).ceil() as u64;
    Ok(if k == 0 { 1.0 } else { 1.0 - law.cdf(k - 1) })
}

pub fn check_inequalities(p: &InequalityParams, seed: u64) -> Result<CheckReport> {
    let mut rep = CheckReport::new(
        "inequalities",
        "P(max_{t<=n} |X(t)| >= lambda) <= n/lambda^2 + 5 sigma over the (d, n, lambda) grid; P(xi >= theta E xi) >= (1-theta)^2 (E xi)^2/E xi^2 - 5 sigma for Poisson xi",
        seed,
    );
    rep.param("dims", format!("{:?}", p.dims)).param("times", format!("{:?}", p.times));
    rep.param("lambda_factors", format!("{:?}", p.lambda_factors)).param("walks", p.walks);
    rep.param("poisson_means", format!("{:?}", p.poisson_means)).param("thetas", format!("{:?}", p.thetas));
    for (i, &d) in p.dims.iter().enumerate() {
        for (j, &n) in p.times.iter().enumerate() {
            let stream = RngStream::new(seed, (i * 100 + j) as u64);
            let maxima: Vec<f64> = (0..p.walks).into_par_iter().map(|w| max_norm_sq(d, n, stream.child(w as u64))).collect();
            for &k in &p.lambda_factors {
                let lambda = k * (n as f64).sqrt();
                let hits = maxima.iter().filter(|m| **m >= lambda * lambda).count();
                let (ph, se) = proportion(hits, p.walks);
                let bound = n as f64 / (lambda * lambda);
                rep.row(CheckRow::at_most(format!("kolmogorov d={d} n={n} lambda={lambda:.3}"), ph, bound, se, p.slack));
            }
        }
    }
    for (i, &lambda) in p.poisson_means.iter().enumerate() {
        let law = Poisson::new(lambda).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let mut rng = RngStream::new(seed, 10_000 + i as u64).rng();
        let xs: Vec<f64> = (0..p.poisson_samples).map(|_| law.sample(&mut rng)).collect();
        for &theta in &p.thetas {
            let hits = xs.iter().filter(|x| **x >= theta * lambda).count();
            let (ph, se) = proportion(hits, p.poisson_samples);
            let bound = paley_zygmund_bound(lambda, theta);
            rep.row(CheckRow::at_least(format!("paley-zygmund lambda={lambda} theta={theta}"), ph, bound, se, p.slack));
            let exact = poisson_tail(lambda, theta)?;
            rep.row(CheckRow::new(
                format!("poisson tail vs exact lambda={lambda} theta={theta}"),
                ph,
                exact,
                se,
                (ph - exact).abs() <= p.slack * se.max(1.0 / p.poisson_samples as f64),
            ));
        }
    }
    rep.replicas = p.walks;
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paley_zygmund_at_half_and_one() {
        assert!((paley_zygmund_bound(1.0, 0.5) - 0.125).abs() < 1e-15);
        let tail = poisson_tail(1.0, 0.5).unwrap();
        assert!((tail - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        assert!(tail >= 0.125);
    }

    #[test]
    fn zero_threshold_tail_is_one() {
        assert_eq!(poisson_tail(2.0, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn maximum_dominates_endpoint_scale() {
        let m = max_norm_sq(3, 100, RngStream::new(1, 1));
        assert!(m >= 1.0 && m <= 100.0 * 100.0);
    }

    #[test]
    fn quick_suite_passes() {
        let mut p = InequalityParams::at(Scale::Quick);
        p.walks = 2000;
        p.poisson_samples = 20_000;
        let rep = check_inequalities(&p, 3).unwrap();
        assert!(rep.pass(), "{}", rep.to_text());
    }
}
