//! Law of the sampled point process, its superposition and splitting, the
//! two-point bound `E μ(S(x,y)) <= 2u g(x,y)` and pair-connection decay.

use std::sync::Arc;

use rayon::prelude::*;

use super::{CheckReport, CheckRow, Scale};
use crate::capacity::ball_capacity_variational;
use crate::error::Result;
use crate::escape_field::EscapeField;
use crate::graph::build_graph;
use crate::green::GreenTable;
use crate::lattice::{Ball, LatticePoint, SiteSet};
use crate::rng::RngStream;
use crate::sampler::{split_by_ball, superpose, AnchorSet, BackwardLaw, Cut, Sampler};
use crate::stats::{central_moment4, chi_square, correlation, ks_two_sample, loglog_fit, ratio_of_sums, Moments};

fn replicate<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..n).into_par_iter().map(f).collect()
}

#[derive(Clone, Debug)]
pub struct LawParams {
    pub d: usize,
    pub ball_radius: i64,
    pub window_radius: i64,
    pub u: f64,
    pub count_replicas: usize,
    pub thinning_u: f64,
    pub thinning_eps: f64,
    pub thinning_replicas: usize,
    pub chi_anchors: usize,
    pub violation_samples: usize,
    pub violation_u: f64,
    pub violation_eps: f64,
}

impl LawParams {
    pub fn at(scale: Scale) -> Self {
        let (count_replicas, thinning_replicas, chi_anchors, violation_samples) = match scale {
            Scale::Full => (10_000, 10_000, 100_000, 1_000),
            Scale::Quick => (2_000, 500, 10_000, 50),
        };
        LawParams {
            d: 5,
            ball_radius: 2,
            window_radius: 4,
            u: 1.0,
            count_replicas,
            thinning_u: 0.25,
            thinning_eps: 1e-3,
            thinning_replicas,
            chi_anchors,
            violation_samples,
            violation_u: 0.2,
            violation_eps: 1e-2,
        }
    }
}

/// Mean and variance rows for Poisson counts with mean `lambda`; `bias`
/// widens both comparisons one-sidedly known truncation effects.
fn poisson_rows(rep: &mut CheckReport, label: &str, counts: &[f64], lambda: f64, bias: f64) {
    let m = Moments::of(counts.iter().copied());
    let m4 = central_moment4(counts, m.mean);
    let se_var = m.var_stderr(m4);
    let se_mean = (lambda / m.n as f64).sqrt();
    rep.row(CheckRow::new(format!("{label} mean"), m.mean, lambda, se_mean, (m.mean - lambda).abs() <= 3.0 * se_mean + bias));
    rep.row(CheckRow::new(format!("{label} variance"), m.var, lambda, se_var, (m.var - lambda).abs() <= 3.0 * se_var + bias));
}

/// Goodness of fit of `anchors` against the classes of `em`.
fn anchor_chi2(rep: &mut CheckReport, label: &str, anchors: &[LatticePoint], em: &crate::capacity::EquilibriumMeasure) {
    let classes = em.classes();
    let mut observed = vec![0.0; classes.len()];
    let mut stray = 0usize;
    for x in anchors {
        match em.class_of(x) {
            Some(j) => observed[j] += 1.0,
            None => stray += 1,
        }
    }
    let n = anchors.len() as f64;
    let expected: Vec<f64> = classes.iter().map(|(_, _, mass)| n * mass / em.capacity()).collect();
    let t = chi_square(&observed, &expected, 0);
    rep.row(CheckRow::at_least(format!("{label} chi2 p-value ({} df)", t.df), t.p_value, 0.01, 0.0, 0.0));
    rep.row(CheckRow::new(format!("{label} anchors outside the support"), stray as f64, 0.0, 0.0, stray == 0));
}

/// Trajectory counts are Poisson with mean `u cap(A)`, anchors follow
/// `ẽ_A`, and backward parts never return to `A`.
pub fn check_sampler_law(p: &LawParams, seed: u64) -> Result<CheckReport> {
    let d = p.d;
    let mut rep = CheckReport::new(
        "sampler_law",
        "N_A mean and variance within 3 sigma of u cap(A) (thinning: plus its truncation bias); anchor chi2 p >= 0.01 against the variational e_A; zero backward returns to A",
        seed,
    );
    rep.param("d", d).param("A", format!("B(0,{})", p.ball_radius)).param("window", p.window_radius);
    let t = GreenTable::shared(d)?;
    let ball = Ball::centered(d, p.ball_radius);
    let window = Ball::centered(d, p.window_radius);
    let em = ball_capacity_variational(&ball, &t)?;
    let cap = em.capacity();
    rep.row(CheckRow::info("cap(A) variational", cap, cap * t.tolerance()));
    let field = EscapeField::solve(&ball.to_site_set(), &window, &em, &t)?;
    let eq = Sampler::with_measure(AnchorSet::Ball(ball), window, p.violation_eps, em.clone(), BackwardLaw::HTransform(Arc::new(field)))?;
    let counts = replicate(p.count_replicas, |i| eq.sample_count(p.u, RngStream::new(seed, i as u64)).map(|c| c as f64))?;
    poisson_rows(&mut rep, &format!("equilibrium N_A at u={}", p.u), &counts, p.u * cap, 0.0);
    let th = Sampler::thinning_with_cut(AnchorSet::Ball(ball), window, p.thinning_eps, Cut::AnchorSet)?;
    let base = 1u64 << 32;
    let counts = replicate(p.thinning_replicas, |i| th.sample_count(p.thinning_u, RngStream::new(seed, base + i as u64)).map(|c| c as f64))?;
    let lam = p.thinning_u * cap;
    poisson_rows(&mut rep, &format!("thinning N_A at u={}", p.thinning_u), &counts, lam, th.certificate() * lam);
    let mut anchors = Vec::new();
    let mut k = 0u64;
    while anchors.len() < p.chi_anchors {
        let batch = replicate(64, |i| th.thinning_anchors(p.thinning_u, RngStream::new(seed, 2 * base + k + i as u64)))?;
        k += 64;
        anchors.extend(batch.into_iter().flatten());
    }
    anchor_chi2(&mut rep, "thinning anchors", &anchors, &em);
    let drawn = eq.draw_anchors(p.chi_anchors, RngStream::new(seed, 3 * base))?;
    anchor_chi2(&mut rep, "equilibrium draw_anchors", &drawn, &em);
    let eqv = Sampler::with_measure(
        AnchorSet::Ball(ball),
        window,
        p.violation_eps,
        em,
        eq.backward_law().clone(),
    )?;
    let viol = replicate(p.violation_samples, |i| {
        let s = eqv.sample(p.violation_u, RngStream::new(seed, 4 * base + i as u64))?;
        Ok((s.trajectories.iter().map(|t| t.backward_violations(&s.anchors)).sum::<usize>(), s.len()))
    })?;
    let (bad, total) = viol.iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    rep.row(CheckRow::new(format!("backward returns to A over {total} trajectories"), bad as f64, 0.0, 0.0, bad == 0));
    rep.replicas = p.count_replicas;
    Ok(rep)
}

#[derive(Clone, Debug)]
pub struct AlgebraParams {
    pub d: usize,
    pub u1: f64,
    pub u2: f64,
    pub window_radius: i64,
    pub eps: f64,
    pub ks_replicas: usize,
    pub split_ball: i64,
    pub split_window: i64,
    pub split_u: f64,
    pub split_eps: f64,
    pub split_r: i64,
    pub split_samples: usize,
}

impl AlgebraParams {
    pub fn at(scale: Scale) -> Self {
        let (ks_replicas, split_samples) = match scale {
            Scale::Full => (10_000, 10_000),
            Scale::Quick => (2_000, 500),
        };
        AlgebraParams {
            d: 5,
            u1: 0.5,
            u2: 0.5,
            window_radius: 3,
            eps: 1e-2,
            ks_replicas,
            split_ball: 8,
            split_window: 10,
            split_u: 0.001,
            split_eps: 0.05,
            split_r: 2,
            split_samples,
        }
    }
}

/// Superposition of independent samples at `u1`, `u2` against a direct
/// sample at `u1 + u2`; independence of the parts split by `B(r)`.
pub fn check_process_algebra(p: &AlgebraParams, seed: u64) -> Result<CheckReport> {
    let d = p.d;
    let mut rep = CheckReport::new(
        "process_algebra",
        "KS on N_A: superposed u1+u2 vs direct, p >= 0.01; counts of the parts meeting and avoiding B(r) uncorrelated within 3 sigma",
        seed,
    );
    rep.param("d", d).param("u1", p.u1).param("u2", p.u2).param("split_A", format!("B(0,{})", p.split_ball));
    rep.param("split_r", p.split_r);
    let t = GreenTable::shared(d)?;
    let a = SiteSet::from_points(d, [LatticePoint::origin(d)]);
    let sampler = Sampler::new(a, Ball::centered(d, p.window_radius), p.eps, &t, RngStream::new(seed, u64::MAX))?;
    let n = p.ks_replicas as u64;
    let sup = replicate(p.ks_replicas, |i| {
        let s1 = sampler.sample(p.u1, RngStream::new(seed, 2 * i as u64))?;
        let s2 = sampler.sample(p.u2, RngStream::new(seed, 2 * i as u64 + 1))?;
        Ok(superpose(&s1, &s2)?.len() as f64)
    })?;
    let direct = replicate(p.ks_replicas, |i| Ok(sampler.sample(p.u1 + p.u2, RngStream::new(seed, 2 * n + i as u64))?.len() as f64))?;
    let ks = ks_two_sample(&sup, &direct);
    rep.row(CheckRow::info("KS distance", ks.statistic, 0.0));
    rep.row(CheckRow::at_least("KS p-value", ks.p_value, 0.01, 0.0, 0.0));
    let (ms, md) = (Moments::of(sup.iter().copied()), Moments::of(direct.iter().copied()));
    rep.row(CheckRow::info("mean N_A superposed", ms.mean, ms.stderr()));
    rep.row(CheckRow::info("mean N_A direct", md.mean, md.stderr()));
    let th = Sampler::thinning(AnchorSet::Ball(Ball::centered(d, p.split_ball)), Ball::centered(d, p.split_window), p.split_eps)?;
    let parts = replicate(p.split_samples, |i| {
        let s = th.sample(p.split_u, RngStream::new(seed, 3 * n + i as u64))?;
        let (near, far) = split_by_ball(&s, p.split_r)?;
        Ok((near.len() as f64, far.len() as f64))
    })?;
    let (x, y): (Vec<f64>, Vec<f64>) = parts.into_iter().unzip();
    let (r, se) = correlation(&x, &y);
    rep.row(CheckRow::within("corr(|mu_r|, |mu_r,inf|)", r, 0.0, 3.0 * se, se));
    let (mx, my) = (Moments::of(x.iter().copied()), Moments::of(y.iter().copied()));
    rep.row(CheckRow::info("mean |mu_r|", mx.mean, mx.stderr()));
    rep.row(CheckRow::info("mean |mu_r,inf|", my.mean, my.stderr()));
    rep.replicas = p.ks_replicas;
    Ok(rep)
}

#[derive(Clone, Debug)]
pub struct MuSParams {
    pub d: usize,
    pub u: f64,
    pub separations: Vec<i64>,
    /// Replicas at the first separation; later ones scale as `|x - y|²`.
    pub base_replicas: usize,
    /// Half-paths are cut at sup-distance `gap_factor·|x - y|` beyond the
    /// bounding ball of `{x, y}`.
    pub gap_factor: i64,
    pub decay_tol: f64,
}

impl MuSParams {
    pub fn at(scale: Scale) -> Self {
        let base_replicas = match scale {
            Scale::Full => 50_000,
            Scale::Quick => 5_000,
        };
        MuSParams { d: 5, u: 1.0, separations: vec![2, 4, 8], base_replicas, gap_factor: 2, decay_tol: 0.4 }
    }
}

/// Rejection sampler for `A = {x, y}` whose cut ball reaches at least
/// `gap` beyond the bounding ball of `A`.
fn pair_sampler(x: LatticePoint, y: LatticePoint, gap: i64, t: &GreenTable) -> Result<Sampler> {
    let d = x.dim();
    let a = SiteSet::from_points(d, [x, y]);
    let bb = a.bounding_ball().expect("two points");
    let window = Ball::new(bb.center, bb.radius + 2);
    let em = crate::capacity::capacity_of(&a, t)?.to_measure()?;
    let mut eps = 1e-2;
    loop {
        let s = Sampler::with_measure_cut(AnchorSet::Sites(a.clone()), window, eps, em.clone(), BackwardLaw::Rejection, Cut::AnchorSet)?;
        if s.cut().radius >= bb.radius + gap {
            return Ok(s);
        }
        eps /= 2.0;
    }
}

/// Mean number of trajectories visiting both `x` and `y` per sample at
/// level `u`, its standard error, and the truncation correction.
///
/// Backward parts never meet `A`, so a visit can only be missed when the
/// forward part of a trajectory entering at one point reaches the other
/// after its cut. From outside the cut ball that has probability at most
/// `sup g(v)/g(0)` over `|v|_∞ >= dist`, bounded by `1.1 g(dist·e1)/g(0)`;
/// there are on average `u cap(A)` forward parts.
pub fn mu_s_estimate(d: usize, u: f64, sep: i64, replicas: usize, gap_factor: i64, seed: u64) -> Result<(f64, f64, f64)> {
    let t = GreenTable::shared(d)?;
    let (x, y) = (LatticePoint::origin(d), LatticePoint::axis(d, 0, sep));
    let sampler = pair_sampler(x, y, gap_factor * sep, &t)?;
    let hits = replicate(replicas, |i| {
        let s = sampler.sample(u, RngStream::new(seed, i as u64))?;
        Ok(s.trajectories.iter().filter(|t| t.meets(|p| *p == x) && t.meets(|p| *p == y)).count() as f64)
    })?;
    let m = Moments::of(hits);
    let cut = sampler.cut();
    let dist = [x, y].iter().map(|p| cut.radius + 1 - (*p - cut.center).sup_norm()).min().expect("two points");
    let correction = u * sampler.cap() * 1.1 * t.get(&LatticePoint::axis(d, 0, dist)) / t.g0();
    Ok((m.mean, m.stderr(), correction))
}

pub fn check_mu_s_bound(p: &MuSParams, seed: u64) -> Result<CheckReport> {
    let d = p.d;
    let t = GreenTable::shared(d)?;
    let mut rep = CheckReport::new(
        "mu_S_bound",
        "E mu(S(x,y)) plus truncation correction <= 2u g(x,y) with 5 sigma slack; decay exponent 2-d within tolerance; estimates at u and 2u in ratio 2 within 3 sigma",
        seed,
    );
    rep.param("d", d).param("u", p.u).param("separations", format!("{:?}", p.separations)).param("gap_factor", p.gap_factor);
    let (mut xs, mut ys, mut ss) = (Vec::new(), Vec::new(), Vec::new());
    let mut total = 0;
    for (k, &sep) in p.separations.iter().enumerate() {
        let scale = (sep as f64 / p.separations[0] as f64).powi(2);
        let n = (p.base_replicas as f64 * scale) as usize;
        total += n;
        let (m, se, corr) = mu_s_estimate(d, p.u, sep, n, p.gap_factor, RngStream::new(seed, k as u64).index)?;
        let g = t.get(&LatticePoint::axis(d, 0, sep));
        rep.row(CheckRow::at_most(format!("|x-y|={sep}"), m + corr, 2.0 * p.u * g, se, 5.0));
        xs.push(sep as f64);
        ys.push(m);
        ss.push(se);
    }
    if ys.iter().all(|v| *v > 0.0) && xs.len() >= 2 {
        let fit = loglog_fit(&xs, &ys, Some(&ss));
        rep.row(CheckRow::within("decay exponent", fit.slope, 2.0 - d as f64, p.decay_tol, fit.slope_stderr));
    } else {
        rep.row(CheckRow::new("decay exponent (no events at some separation)", f64::NAN, 2.0 - d as f64, f64::NAN, false));
    }
    let sep = p.separations[0];
    let (m2, se2, _) = mu_s_estimate(d, 2.0 * p.u, sep, p.base_replicas, p.gap_factor, RngStream::new(seed, 99).index)?;
    let ratio = m2 / ys[0];
    let se_ratio = ratio * ((se2 / m2).powi(2) + (ss[0] / ys[0]).powi(2)).sqrt();
    rep.row(CheckRow::within("ratio at 2u and u", ratio, 2.0, 3.0 * se_ratio, se_ratio));
    rep.replicas = total;
    Ok(rep)
}

#[derive(Clone, Debug)]
pub struct PairParams {
    pub d: usize,
    pub u: f64,
    /// Radius of the two small balls.
    pub a: i64,
    pub separations: Vec<i64>,
    pub replicas: usize,
    pub eps: f64,
}

impl PairParams {
    pub fn at(scale: Scale) -> Self {
        let replicas = match scale {
            Scale::Full => 1_000,
            Scale::Quick => 100,
        };
        PairParams { d: 5, u: 0.2, a: 1, separations: vec![8, 16, 32, 64], replicas, eps: 0.05 }
    }
}

/// Per separation: fraction of pairs (trajectory through `B(0,a)`,
/// different trajectory through `B(z,a)`) at graph distance 1, with its
/// error, and the fraction at distance exactly 2 among pairs within 2.
pub fn pair_distance_fractions(p: &PairParams, sep: i64, seed: u64) -> Result<((f64, f64), (f64, f64))> {
    let d = p.d;
    let z = LatticePoint::axis(d, 0, sep);
    let mut a = Ball::centered(d, p.a).to_site_set();
    a.extend(&Ball::new(z, p.a).to_site_set());
    let window = Ball::new(LatticePoint::axis(d, 0, sep / 2), sep);
    let sampler = Sampler::thinning_with_cut(AnchorSet::Sites(a), window, p.eps, Cut::AnchorSet)?;
    let (b0, bz) = (Ball::centered(d, p.a), Ball::new(z, p.a));
    let per = replicate(p.replicas, |i| {
        let s = sampler.sample(p.u, RngStream::new(seed, i as u64))?;
        let near0: Vec<usize> = (0..s.len()).filter(|&j| s.trajectories[j].meets_ball(&b0)).collect();
        let nearz: Vec<usize> = (0..s.len()).filter(|&j| s.trajectories[j].meets_ball(&bz)).collect();
        let g = build_graph(std::slice::from_ref(&s))?;
        let (mut pairs, mut one, mut two) = (0.0, 0.0, 0.0);
        for &v in &near0 {
            let vl = g.vertex((s.id, s.trajectories[v].index))?;
            let dist = g.distances_from(vl);
            for &w in &nearz {
                if w == v {
                    continue;
                }
                pairs += 1.0;
                let wl = g.vertex((s.id, s.trajectories[w].index))?;
                match dist[wl as usize] {
                    Some(1) => one += 1.0,
                    Some(2) => two += 1.0,
                    _ => {}
                }
            }
        }
        Ok((pairs, one, two))
    })?;
    let pairs: Vec<f64> = per.iter().map(|t| t.0).collect();
    let one: Vec<f64> = per.iter().map(|t| t.1).collect();
    let two: Vec<f64> = per.iter().map(|t| t.2).collect();
    let within: Vec<f64> = one.iter().zip(&two).map(|(a, b)| a + b).collect();
    Ok((ratio_of_sums(&one, &pairs), ratio_of_sums(&two, &within)))
}

pub fn check_pair_decay(p: &PairParams, seed: u64) -> Result<CheckReport> {
    let mut rep = CheckReport::new(
        "pair_decay",
        "fraction of trajectory pairs through B(0,a) and B(z,a) at graph distance 1 decreases across separations within 2 sigma, with negative fitted slope; below 0.5 at the largest separation",
        seed,
    );
    rep.param("d", p.d).param("u", p.u).param("a", p.a).param("separations", format!("{:?}", p.separations));
    let mut est = Vec::new();
    for (k, &sep) in p.separations.iter().enumerate() {
        let (one, two) = pair_distance_fractions(p, sep, RngStream::new(seed, k as u64).index)?;
        rep.row(CheckRow::info(format!("P(rho=1) at |z|={sep}"), one.0, one.1));
        rep.row(CheckRow::info(format!("P(rho=2 | rho<=2) at |z|={sep}"), two.0, two.1));
        est.push(one);
    }
    for w in est.windows(2).zip(p.separations.windows(2)) {
        let ((a, b), s) = ((w.0[0], w.0[1]), s_pair(w.1));
        let sig = (a.1 * a.1 + b.1 * b.1).sqrt();
        rep.row(CheckRow::at_most(format!("P(rho=1) at {} minus at {}", s.1, s.0), b.0 - a.0, 0.0, sig, 2.0));
    }
    let xs: Vec<f64> = p.separations.iter().map(|s| *s as f64).collect();
    if est.iter().all(|e| e.0 > 0.0) {
        let fit = loglog_fit(&xs, &est.iter().map(|e| e.0).collect::<Vec<_>>(), Some(&est.iter().map(|e| e.1).collect::<Vec<_>>()));
        rep.row(CheckRow::at_most("fitted slope", fit.slope, 0.0, 0.0, 0.0));
    }
    let last = est.last().expect("separations");
    rep.row(CheckRow::at_most("P(rho=1) at the largest separation", last.0, 0.5, 0.0, 0.0));
    rep.replicas = p.replicas;
    Ok(rep)
}

fn s_pair(w: &[i64]) -> (i64, i64) {
    (w[0], w[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mu_s_quick_estimate_is_below_bound() {
        let d = 5;
        let (m, se, corr) = mu_s_estimate(d, 1.0, 2, 4000, 2, 3).unwrap();
        let t = GreenTable::shared(d).unwrap();
        let g = t.get(&LatticePoint::axis(d, 0, 2));
        // oracle: u (cap{x} + cap{y} - cap{x,y})
        let exact = 2.0 / t.g0() - 2.0 / (t.g0() + g);
        assert!((m - exact).abs() < 4.0 * se + corr, "{m} vs {exact} (se {se})");
        assert!(exact <= 2.0 * g);
    }

    #[test]
    fn pair_fractions_are_probabilities() {
        let p = PairParams { replicas: 20, ..PairParams::at(Scale::Quick) };
        let ((one, _), (two, _)) = pair_distance_fractions(&p, 8, 5).unwrap();
        assert!((0.0..=1.0).contains(&one));
        assert!(two.is_nan() || (0.0..=1.0).contains(&two));
    }
}
