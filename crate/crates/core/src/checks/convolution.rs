//! Truncated `n`-fold convolution sums
//! `S_n(z0, z_end; L) = Σ_{z_1..z_n ∈ B(0,L)} Π_{i=0}^{n} f(z_{i+1} - z_i)`
//! with `f(v) = min(1, |v|^{2-d})` (Euclidean norm), `z_0 = z0` and
//! `z_{n+1} = z_end`. They stay bounded as `L → ∞` with decay
//! `|z0 - z_end|^{2n+2-d}` iff `n < s_d`.

use rand::Rng;
use rayon::prelude::*;

use super::{s_d, CheckReport, CheckRow, Scale};
use crate::error::{Error, Result};
use crate::lattice::{check_dim, Ball, LatticePoint};
use crate::rng::RngStream;
use crate::stats::loglog_fit;

/// `f(v)` from `|v|²`.
#[inline]
pub fn kernel(d: usize, euclid_sq: i64) -> f64 {
    if euclid_sq == 0 {
        1.0
    } else {
        (euclid_sq as f64).powf((2.0 - d as f64) / 2.0).min(1.0)
    }
}

/// `f` tabulated by `|v|²` up to `max_sq`.
fn kernel_table(d: usize, max_sq: i64) -> Vec<f64> {
    (0..=max_sq).map(|q| kernel(d, q)).collect()
}

fn validate(n: usize, z0: &LatticePoint, z_end: &LatticePoint, l: i64) -> Result<usize> {
    let d = z0.dim();
    check_dim(d)?;
    if z_end.dim() != d {
        return Err(Error::DimensionMismatch(z_end.dim(), d));
    }
    if l < 0 {
        return Err(Error::InvalidArgument(format!("truncation radius must be nonnegative, got {l}")));
    }
    let _ = n;
    Ok(d)
}

/// Largest `|B|^n` enumerated directly.
pub const DIRECT_BUDGET: f64 = 5e8;

/// Direct enumeration for `n <= 2` when `|B(0,L)|^n <= DIRECT_BUDGET`.
pub fn convolution_direct(n: usize, z0: &LatticePoint, z_end: &LatticePoint, l: i64) -> Result<f64> {
    let d = validate(n, z0, z_end, l)?;
    if n == 0 {
        return Ok(kernel(d, (*z0 - *z_end).norm_sq()));
    }
    let ball = Ball::centered(d, l);
    if n > 2 || (ball.volume() as f64).powi(n as i32) > DIRECT_BUDGET {
        return Err(Error::InvalidArgument(format!("direct sum too large for n={n}, L={l}")));
    }
    let sites = ball.sites();
    let tail: Vec<f64> = sites.iter().map(|z| kernel(d, (*z - *z_end).norm_sq())).collect();
    if n == 1 {
        return Ok(sites.iter().zip(&tail).map(|(z, t)| kernel(d, (*z - *z0).norm_sq()) * t).sum());
    }
    let ft = kernel_table(d, d as i64 * 4 * l * l);
    let total: f64 = sites
        .par_iter()
        .map(|z1| {
            let inner: f64 = sites.iter().zip(&tail).map(|(z2, t)| ft[(*z1 - *z2).euclid_sq() as usize] * t).sum();
            kernel(d, (*z1 - *z0).norm_sq()) * inner
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(total)
}

/// Exact `S_1(0, k·e_1; L)` for `0 <= k <= L`: the summand depends on `z`
/// only through `z_1` and the squared norm of the other coordinates, whose
/// multiplicities are counted once by convolving one-coordinate counts.
pub fn convolution_axis_exact(d: usize, k: i64, l: i64) -> Result<f64> {
    check_dim(d)?;
    if !(0..=l).contains(&k) {
        return Err(Error::InvalidArgument(format!("need 0 <= k <= L, got k={k}, L={l}")));
    }
    let m = (l * l) as usize;
    let mut counts = vec![0.0f64; 1];
    counts[0] = 1.0;
    for _ in 1..d {
        let mut next = vec![0.0f64; counts.len() + m];
        for c in -l..=l {
            let sq = (c * c) as usize;
            for (s, v) in counts.iter().enumerate() {
                if *v != 0.0 {
                    next[s + sq] += v;
                }
            }
        }
        counts = next;
    }
    let ft = kernel_table(d, 8 * l * l);
    let total: f64 = (-l..=l)
        .into_par_iter()
        .map(|z1| {
            let (a, b) = ((z1 * z1) as usize, ((z1 - k) * (z1 - k)) as usize);
            counts.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(s, c)| c * ft[a + s] * ft[b + s]).sum::<f64>()
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(total)
}

/// Step proposal: `k = |v|_∞` with `P(k) ∝ S_k · max(k,1)^{2-d}` where
/// `S_k` is the size of the sup-sphere, then `v` uniform on that sphere.
struct StepProposal {
    d: usize,
    cdf: Vec<f64>,
    /// `P(v)` for `|v|_∞ = k`.
    point_prob: Vec<f64>,
}

impl StepProposal {
    fn new(d: usize, kmax: i64) -> Self {
        let sphere = |k: i64| if k == 0 { 1.0 } else { ((2 * k + 1) as f64).powi(d as i32) - ((2 * k - 1) as f64).powi(d as i32) };
        let mass: Vec<f64> = (0..=kmax).map(|k| sphere(k) * (k.max(1) as f64).powf(2.0 - d as f64)).collect();
        let total: f64 = mass.iter().sum();
        let mut acc = 0.0;
        let cdf = mass.iter().map(|m| {
            acc += m / total;
            acc
        });
        let cdf: Vec<f64> = cdf.collect();
        let point_prob = mass.iter().enumerate().map(|(k, m)| m / total / sphere(k as i64)).collect();
        StepProposal { d, cdf, point_prob }
    }

    #[inline]
    fn prob(&self, v: &LatticePoint) -> f64 {
        self.point_prob.get(v.sup_norm() as usize).copied().unwrap_or(0.0)
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> LatticePoint {
        let x: f64 = rng.random();
        let k = self.cdf.partition_point(|c| *c < x).min(self.cdf.len() - 1) as i64;
        let mut c = [0i64; crate::lattice::MAX_DIM];
        if k == 0 {
            return LatticePoint::new(&c[..self.d]);
        }
        loop {
            for ci in c.iter_mut().take(self.d) {
                *ci = rng.random_range(-k..=k);
            }
            let i = rng.random_range(0..self.d);
            c[i] = if rng.random::<bool>() { k } else { -k };
            let on_face = c[..self.d].iter().filter(|v| v.abs() == k).count();
            if rng.random_range(0..on_face) == 0 {
                return LatticePoint::new(&c[..self.d]);
            }
        }
    }
}

/// Monte Carlo estimate of `S_n` with its standard error. Paths are
/// proposed half the time as a chain from `z0` and half the time as a chain
/// from `z_end`; the weight uses the mixture density, so the estimator is
/// unbiased and stays bounded near either endpoint.
pub fn convolution_mc(n: usize, z0: &LatticePoint, z_end: &LatticePoint, l: i64, samples: usize, stream: RngStream) -> Result<(f64, f64)> {
    let d = validate(n, z0, z_end, l)?;
    if n == 0 {
        return Ok((kernel(d, (*z0 - *z_end).norm_sq()), 0.0));
    }
    if samples < 2 {
        return Err(Error::InvalidArgument("need at least 2 samples".into()));
    }
    let ball = Ball::centered(d, l);
    let kmax = 2 * l + z0.sup_norm().max(z_end.sup_norm());
    let prop = StepProposal::new(d, kmax);
    let chunk = 4096;
    let chunks = samples.div_ceil(chunk);
    let parts: Vec<(f64, f64, usize)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream.child(c as u64).rng();
            let m = chunk.min(samples - c * chunk);
            let (mut s1, mut s2) = (0.0, 0.0);
            let mut z = vec![LatticePoint::origin(d); n + 2];
            for _ in 0..m {
                z[0] = *z0;
                z[n + 1] = *z_end;
                if rng.random::<bool>() {
                    for i in 1..=n {
                        z[i] = z[i - 1] + prop.sample(&mut rng);
                    }
                } else {
                    for i in (1..=n).rev() {
                        z[i] = z[i + 1] + prop.sample(&mut rng);
                    }
                }
                let w = if z[1..=n].iter().all(|p| ball.contains(p)) {
                    let h: f64 = (0..=n).map(|i| kernel(d, (z[i + 1] - z[i]).norm_sq())).product();
                    let pf: f64 = (1..=n).map(|i| prop.prob(&(z[i] - z[i - 1]))).product();
                    let pb: f64 = (1..=n).map(|i| prop.prob(&(z[i] - z[i + 1]))).product();
                    h / (0.5 * (pf + pb))
                } else {
                    0.0
                };
                s1 += w;
                s2 += w * w;
            }
            (s1, s2, m)
        })
        .collect();
    let (s1, s2, m) = parts.iter().fold((0.0, 0.0, 0usize), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let mean = s1 / m as f64;
    let var = (s2 / m as f64 - mean * mean).max(0.0) * m as f64 / (m - 1) as f64;
    Ok((mean, (var / m as f64).sqrt()))
}

/// `S_n` by the cheapest exact route available, else Monte Carlo.
pub fn convolution_sum(n: usize, z0: &LatticePoint, z_end: &LatticePoint, l: i64, samples: usize, stream: RngStream) -> Result<(f64, f64)> {
    let d = validate(n, z0, z_end, l)?;
    if n == 0 || (n <= 2 && (Ball::centered(d, l).volume() as f64).powi(n as i32) <= DIRECT_BUDGET) {
        return Ok((convolution_direct(n, z0, z_end, l)?, 0.0));
    }
    let on_axis = |p: &LatticePoint| p.coords()[1..].iter().all(|c| *c == 0);
    if n == 1 && *z0 == LatticePoint::origin(d) && on_axis(z_end) && (0..=l).contains(&z_end.coords()[0]) {
        return Ok((convolution_axis_exact(d, z_end.coords()[0], l)?, 0.0));
    }
    convolution_mc(n, z0, z_end, l, samples, stream)
}

#[derive(Clone, Debug)]
pub struct ConvolutionParams {
    pub d: usize,
    pub n: usize,
    /// Separations `|z0 - z_end|` (along an axis) for the decay fit.
    pub separations: Vec<i64>,
    /// Truncation radius for the decay fit; stabilisation is checked at
    /// `L/4, L/2, L` for the largest separation.
    pub truncation: i64,
    /// Truncation radii for the divergence branch.
    pub radii: Vec<i64>,
    pub samples: usize,
    pub exponent_tol: f64,
}

impl ConvolutionParams {
    pub fn at(d: usize, n: usize, scale: Scale) -> Self {
        let (separations, truncation, radii, samples) = match scale {
            Scale::Full => (vec![8, 16, 32, 64], 256, vec![8, 16, 32, 64], 400_000),
            Scale::Quick => (vec![4, 8, 16], 64, vec![4, 8, 16], 40_000),
        };
        ConvolutionParams { d, n, separations, truncation, radii, samples, exponent_tol: 0.3 }
    }
}

/// Decay exponent (`n < s_d`) or divergence in `L` (`n >= s_d`).
pub fn check_convolution(p: &ConvolutionParams, seed: u64) -> Result<CheckReport> {
    check_dim(p.d)?;
    let d = p.d;
    let sd = s_d(d);
    let origin = LatticePoint::origin(d);
    let mut rep = CheckReport::new(
        &format!("convolution_n{}_d{}", p.n, d),
        if p.n < sd {
            "n < s_d: sum stabilises in L and decays as |z0 - z_end|^(2n+2-d), fitted exponent within tolerance"
        } else {
            "n >= s_d: truncated sum strictly increasing in L (3 sigma steps) with positive fitted slope"
        },
        seed,
    );
    rep.param("d", d).param("n", p.n).param("s_d", sd);
    let mut k = 0u64;
    let mut next = || {
        k += 1;
        RngStream::new(seed, k)
    };
    if p.n == 0 {
        let z = LatticePoint::axis(d, 0, p.separations[0]);
        let s = convolution_direct(0, &origin, &z, p.truncation)?;
        rep.row(CheckRow::within("S_0 equals f(z0 - z_end)", s, kernel(d, z.norm_sq()), 0.0, 0.0));
        return Ok(rep);
    }
    if p.n < sd {
        rep.param("L", p.truncation).param("separations", format!("{:?}", p.separations));
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut ses = Vec::new();
        for &sep in &p.separations {
            let (s, se) = convolution_sum(p.n, &origin, &LatticePoint::axis(d, 0, sep), p.truncation, p.samples, next())?;
            rep.row(CheckRow::info(format!("S at |z|={sep}"), s, se));
            xs.push(sep as f64);
            ys.push(s);
            ses.push(se);
        }
        let fit = loglog_fit(&xs, &ys, if ses.iter().all(|s| *s > 0.0) { Some(&ses) } else { None });
        let target = (2 * p.n + 2) as f64 - d as f64;
        rep.row(CheckRow::within("decay exponent", fit.slope, target, p.exponent_tol, fit.slope_stderr));
        let sep = *p.separations.last().expect("separations");
        let z = LatticePoint::axis(d, 0, sep);
        let ls = [p.truncation / 4, p.truncation / 2, p.truncation];
        let mut vals = Vec::new();
        for &l in &ls {
            vals.push(convolution_sum(p.n, &origin, &z, l.max(sep), p.samples, next())?);
        }
        let (i1, i2) = (vals[1].0 - vals[0].0, vals[2].0 - vals[1].0);
        let sig = (vals[2].1.powi(2) + 2.0 * vals[1].1.powi(2) + vals[0].1.powi(2)).sqrt();
        rep.row(CheckRow::at_most("increment ratio S(L)-S(L/2) over S(L/2)-S(L/4)", i2 / i1, 0.75, sig / i1.abs(), 3.0));
        rep.row(CheckRow::info("relative last increment", i2 / vals[2].0, sig / vals[2].0));
    } else {
        let z = LatticePoint::axis(d, 0, p.separations[0].min(p.radii[0]));
        rep.param("z_end", z).param("radii", format!("{:?}", p.radii));
        let mut vals = Vec::new();
        for &l in &p.radii {
            let v = convolution_sum(p.n, &origin, &z, l, p.samples, next())?;
            rep.row(CheckRow::info(format!("S at L={l}"), v.0, v.1));
            vals.push(v);
        }
        for w in 0..vals.len() - 1 {
            let diff = vals[w + 1].0 - vals[w].0;
            let sig = (vals[w].1.powi(2) + vals[w + 1].1.powi(2)).sqrt();
            rep.row(CheckRow::new(format!("S(L={}) - S(L={})", p.radii[w + 1], p.radii[w]), diff, 0.0, sig, diff > 3.0 * sig && diff > 0.0));
        }
        let xs: Vec<f64> = p.radii.iter().map(|l| *l as f64).collect();
        let ys: Vec<f64> = vals.iter().map(|v| v.0).collect();
        let fit = loglog_fit(&xs, &ys, None);
        rep.row(CheckRow::new("slope in L", fit.slope, 0.0, fit.slope_stderr, fit.slope > 0.0));
    }
    rep.replicas = p.samples;
    Ok(rep)
}

/// Agreement of the Monte Carlo estimator with direct sums on small boxes.
pub fn check_estimator(samples: usize, seed: u64) -> Result<CheckReport> {
    let mut rep = CheckReport::new("convolution_estimator", "Monte Carlo sum within 3 sigma of the direct sum (n <= 2, small boxes)", seed);
    let cases: [(usize, usize, i64, i64); 4] = [(5, 1, 4, 3), (5, 2, 2, 2), (3, 2, 3, 2), (3, 1, 6, 5)];
    for (i, &(d, n, l, sep)) in cases.iter().enumerate() {
        let (z0, z) = (LatticePoint::origin(d), LatticePoint::axis(d, 0, sep));
        let exact = convolution_direct(n, &z0, &z, l)?;
        let (est, se) = convolution_mc(n, &z0, &z, l, samples, RngStream::new(seed, i as u64))?;
        rep.row(CheckRow::within(format!("d={d} n={n} L={l} |z|={sep}"), est, exact, 3.0 * se, se));
    }
    rep.param("samples", samples);
    rep.replicas = samples;
    Ok(rep)
}

/// The `d = 5` convolution checks: `n = 0`, decay at `n = 1`, divergence at
/// `n = 2`, and estimator validation, merged into one report.
pub fn check_convolution_suite(scale: Scale, seed: u64) -> Result<CheckReport> {
    let mut rep = CheckReport::new(
        "convolution",
        "S_0 exact; n=1 < s_5 decays with exponent -1 within 0.3 and stabilises in L; n=2 >= s_5 grows strictly in L; MC agrees with direct sums",
        seed,
    );
    rep.param("d", 5);
    for n in 0..=2 {
        let sub = check_convolution(&ConvolutionParams::at(5, n, scale), RngStream::new(seed, 100 + n as u64).index)?;
        for r in sub.rows {
            rep.row(CheckRow { label: format!("n={n}: {}", r.label), ..r });
        }
        rep.replicas = rep.replicas.max(sub.replicas);
    }
    let samples = if scale == Scale::Full { 400_000 } else { 100_000 };
    for r in check_estimator(samples, RngStream::new(seed, 200).index)?.rows {
        rep.row(CheckRow { label: format!("estimator {}", r.label), ..r });
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_product_is_kernel() {
        let d = 5;
        let z = LatticePoint::axis(d, 1, 3);
        assert_eq!(convolution_direct(0, &LatticePoint::origin(d), &z, 10).unwrap(), 9f64.powf(-1.5));
        assert_eq!(convolution_direct(0, &z, &z, 10).unwrap(), 1.0);
    }

    #[test]
    fn axis_method_matches_enumeration() {
        for (d, k, l) in [(3, 2, 5), (5, 3, 4), (4, 0, 3)] {
            let direct = convolution_direct(1, &LatticePoint::origin(d), &LatticePoint::axis(d, 0, k), l).unwrap();
            let axis = convolution_axis_exact(d, k, l).unwrap();
            assert!((direct - axis).abs() < 1e-9 * direct, "d={d}: {direct} vs {axis}");
        }
    }

    #[test]
    fn proposal_is_normalised_and_uniform_on_spheres() {
        let p = StepProposal::new(3, 3);
        let total: f64 = Ball::centered(3, 3).sites().iter().map(|v| p.prob(v)).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let mut rng = RngStream::new(1, 0).rng();
        let mut hits = std::collections::HashMap::new();
        let n = 200_000;
        for _ in 0..n {
            let v = p.sample(&mut rng);
            *hits.entry(v).or_insert(0usize) += 1;
        }
        for v in [LatticePoint::new(&[1, 0, 0]), LatticePoint::new(&[1, 1, 1]), LatticePoint::new(&[-3, 2, 3])] {
            let f = hits[&v] as f64 / n as f64;
            let e = p.prob(&v);
            assert!((f - e).abs() < 5.0 * (e / n as f64).sqrt(), "{v}: {f} vs {e}");
        }
    }

    #[test]
    fn estimator_matches_direct_sums() {
        let rep = check_estimator(100_000, 3).unwrap();
        assert!(rep.pass(), "{}", rep.to_text());
    }

    #[test]
    fn negative_radius_rejected() {
        let o = LatticePoint::origin(5);
        assert!(convolution_direct(1, &o, &o, -1).is_err());
    }
}
