//! Capacities of walk trace sets and of the layered sets, and the Green
//! function sum over walk segments.

use rand::Rng;
use rayon::prelude::*;

use super::{s_d, CheckReport, CheckRow, Scale};
use crate::capacity::{capacity_mc_subsampled, capacity_of, default_outer_radius, BoundaryIndexed, SiteRegion};
use crate::error::Result;
use crate::green::GreenTable;
use crate::lattice::{LatticePoint, SiteSet};
use crate::layers::{build_layers, phi_horizon, phi_set, LayerParams};
use crate::rng::RngStream;
use crate::stats::{loglog_fit, Moments};
use crate::walk::{fixed_length, WalkPath};

/// Sets up to this size get the exact variational capacity.
pub const EXACT_CAPACITY_LIMIT: usize = 2048;

/// A capacity value and how it was obtained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SetCapacity {
    pub capacity: f64,
    pub stderr: f64,
    pub exact: bool,
}

/// Variational capacity for small sets, escape Monte Carlo from the inner
/// boundary otherwise.
pub fn set_capacity(k: &SiteSet, table: &GreenTable, walkers: usize, stream: RngStream) -> Result<SetCapacity> {
    if k.len() <= EXACT_CAPACITY_LIMIT {
        let v = capacity_of(k, table)?;
        return Ok(SetCapacity { capacity: v.capacity, stderr: v.capacity * table.tolerance(), exact: true });
    }
    let region = BoundaryIndexed::new(k)?;
    let est = capacity_mc_subsampled(&region, walkers, default_outer_radius(k.dim(), region.radius()), stream)?;
    Ok(SetCapacity { capacity: est.capacity, stderr: (est.stderr.powi(2) + est.bias_bound.powi(2)).sqrt(), exact: false })
}

#[derive(Clone, Debug)]
pub struct TraceParams {
    pub d: usize,
    pub sparse_radii: Vec<i64>,
    pub sparse_replicas: usize,
    pub saturated_radii: Vec<i64>,
    pub saturated_replicas: usize,
    pub walkers: usize,
    pub sparse_tol: f64,
    pub saturated_tol: f64,
}

impl TraceParams {
    pub fn at(scale: Scale) -> Self {
        let (sparse_radii, sparse_replicas, saturated_radii, saturated_replicas, walkers) = match scale {
            Scale::Full => (vec![8, 16, 32, 64], 16, vec![4, 8, 16, 32], 8, 20_000),
            Scale::Quick => (vec![4, 8, 16], 8, vec![2, 4, 8], 4, 4_000),
        };
        TraceParams { d: 5, sparse_radii, sparse_replicas, saturated_radii, saturated_replicas, walkers, sparse_tol: 0.3, saturated_tol: 0.4 }
    }
}

/// `Φ` of `n` walks of length `⌊R²/2⌋` started uniformly in `B(0, R)`
/// (`n = 1` starts at the origin).
pub fn random_phi(d: usize, n: usize, r: i64, stream: RngStream) -> Result<SiteSet> {
    let mut rng = stream.child(0).rng();
    let paths: Vec<WalkPath> = (0..n)
        .map(|i| {
            let start = if n == 1 {
                LatticePoint::origin(d)
            } else {
                let c: Vec<i64> = (0..d).map(|_| rng.random_range(-r..=r)).collect();
                LatticePoint::new(&c)
            };
            fixed_length(start, phi_horizon(r), stream.child2(1, i as u64))
        })
        .collect();
    phi_set(&paths, r)
}

/// Info rows with the slope between consecutive radii, which shows whether
/// the growth is still bending towards its asymptotic exponent.
fn local_slope_rows(rep: &mut CheckReport, label: &str, radii: &[i64], means: &[(f64, f64)]) {
    for (w, m) in radii.windows(2).zip(means.windows(2)) {
        let slope = (m[1].0 / m[0].0).ln() / (w[1] as f64 / w[0] as f64).ln();
        let se = ((m[0].1 / m[0].0).powi(2) + (m[1].1 / m[1].0).powi(2)).sqrt() / (w[1] as f64 / w[0] as f64).ln();
        rep.row(CheckRow::info(format!("{label} local slope R={}..{}", w[0], w[1]), slope, se));
    }
}

const LARGE_SET: f64 = 2e6;

struct RegimeResult {
    means: Vec<(f64, f64)>,
    /// Mean `|Φ| R² / |B(0, 2R)|`: saturation needs this well above 1.
    fill: Vec<f64>,
    worst_ratio: f64,
    worst_ratio_sigma: f64,
    max_size_ratio: f64,
}

fn regime(d: usize, radii: &[i64], n_of: impl Fn(i64) -> usize, replicas: usize, walkers: usize, seed: u64) -> Result<RegimeResult> {
    let t = GreenTable::shared(d)?;
    let mut out = RegimeResult { means: Vec::new(), fill: Vec::new(), worst_ratio: 0.0, worst_ratio_sigma: 0.0, max_size_ratio: 0.0 };
    for (k, &r) in radii.iter().enumerate() {
        let n = n_of(r);
        let bound_sites = (n * phi_horizon(r)) as f64;
        let one = |i: usize| {
            let s = RngStream::new(seed, (k * 10_000 + i) as u64);
            let phi = random_phi(d, n, r, s.child(7))?;
            Ok((set_capacity(&phi, &t, walkers, s.child(8))?, phi.len()))
        };
        // a set of 10^7 sites takes over a gigabyte; build those one at a time
        let vals: Vec<(SetCapacity, usize)> = if bound_sites > LARGE_SET {
            (0..replicas).map(one).collect::<Result<_>>()?
        } else {
            (0..replicas).into_par_iter().map(one).collect::<Result<_>>()?
        };
        for (c, len) in &vals {
            let ratio = c.capacity * t.g0() / bound_sites;
            if ratio > out.worst_ratio {
                out.worst_ratio = ratio;
                out.worst_ratio_sigma = if c.exact { 1e-9 * ratio } else { c.stderr * t.g0() / bound_sites };
            }
            out.max_size_ratio = out.max_size_ratio.max(*len as f64 / bound_sites);
        }
        let m = Moments::of(vals.iter().map(|v| v.0.capacity));
        out.means.push((m.mean, m.stderr()));
        let mean_len = vals.iter().map(|v| v.1 as f64).sum::<f64>() / replicas as f64;
        out.fill.push(mean_len * (r * r) as f64 / ((4 * r + 1) as f64).powi(d as i32));
    }
    Ok(out)
}

/// `cap Φ <= N R²/(2 g(0))`; `E cap Φ` grows as `R²` for one walk and as
/// `R^{d-2}` for `R^3` walks packed in `B(0,R)`.
pub fn check_trace_capacity(p: &TraceParams, seed: u64) -> Result<CheckReport> {
    let d = p.d;
    let mut rep = CheckReport::new(
        "trace_capacity",
        "|Phi| <= N R^2/2 and cap(Phi) <= N R^2/(2 g(0)) (exact for variational values, 5 sigma for Monte Carlo); E cap slope 2 (N=1) and d-2 (N=R^3) within tolerance",
        seed,
    );
    rep.param("d", d).param("sparse_radii", format!("{:?}", p.sparse_radii)).param("saturated_radii", format!("{:?}", p.saturated_radii));
    let sparse = regime(d, &p.sparse_radii, |_| 1, p.sparse_replicas, p.walkers, RngStream::new(seed, 1).index)?;
    let sat = regime(d, &p.saturated_radii, |r| (r * r * r) as usize, p.saturated_replicas, p.walkers, RngStream::new(seed, 2).index)?;
    for (label, res, radii) in [("N=1", &sparse, &p.sparse_radii), ("N=R^3", &sat, &p.saturated_radii)] {
        for ((r, m), fill) in radii.iter().zip(&res.means).zip(&res.fill) {
            rep.row(CheckRow::info(format!("{label} E cap at R={r}"), m.0, m.1));
            rep.row(CheckRow::info(format!("{label} fill |Phi| R^2/|B(2R)| at R={r}"), *fill, 0.0));
        }
        local_slope_rows(&mut rep, label, radii, &res.means);
        rep.row(CheckRow::at_most(format!("{label} max |Phi|/(N R^2/2)"), res.max_size_ratio, 1.0, 0.0, 0.0));
        rep.row(CheckRow::at_most(format!("{label} max cap(Phi) 2g(0)/(N R^2)"), res.worst_ratio, 1.0, res.worst_ratio_sigma, 5.0));
    }
    let fit = |radii: &[i64], res: &RegimeResult| {
        let xs: Vec<f64> = radii.iter().map(|r| *r as f64).collect();
        let ys: Vec<f64> = res.means.iter().map(|m| m.0).collect();
        let ss: Vec<f64> = res.means.iter().map(|m| m.1.max(1e-12 * m.0)).collect();
        loglog_fit(&xs, &ys, Some(&ss))
    };
    let f1 = fit(&p.sparse_radii, &sparse);
    rep.row(CheckRow::within("N=1 slope", f1.slope, 2.0, p.sparse_tol, f1.slope_stderr));
    let f2 = fit(&p.saturated_radii, &sat);
    rep.row(CheckRow::within("N=R^3 slope", f2.slope, d as f64 - 2.0, p.saturated_tol, f2.slope_stderr));
    rep.note("the R^(d-2) regime needs the fill |Phi| R^2/|B(2R)| to be large; with N = R^3 it is about R^2/2048");
    rep.replicas = p.sparse_replicas;
    Ok(rep)
}

#[derive(Clone, Debug)]
pub struct LayerCapParams {
    pub d: usize,
    pub radii: Vec<i64>,
    pub r: i64,
    pub u: f64,
    pub replicas: usize,
    pub walkers: usize,
    pub eps_trunc: f64,
    pub tol: f64,
}

impl LayerCapParams {
    pub fn at(scale: Scale) -> Self {
        let (radii, replicas, walkers) = match scale {
            Scale::Full => (vec![8, 16, 32, 64], 12, 20_000),
            Scale::Quick => (vec![4, 8, 16], 3, 4_000),
        };
        LayerCapParams { d: 5, radii, r: 1, u: 1.0, replicas, walkers, eps_trunc: 1e-2, tol: 0.4 }
    }

    /// `ε` with `r^{d-2} <= ε R` over the whole grid.
    pub fn epsilon(&self) -> f64 {
        (self.r as f64).powi(self.d as i32 - 2) / *self.radii.iter().min().expect("radii") as f64
    }
}

/// Capacities of `A^(1), ..., A^(s_max)` for one build.
pub fn layer_capacities(p: &LayerCapParams, big_r: i64, s_max: usize, stream: RngStream) -> Result<Vec<SetCapacity>> {
    let t = GreenTable::shared(p.d)?;
    let lp = LayerParams { eps_trunc: p.eps_trunc, ..LayerParams::new(p.d, s_max, p.r, big_r, p.u) };
    let layers = build_layers(&lp, stream.child(0))?;
    layers
        .iter()
        .enumerate()
        .map(|(s, l)| {
            if l.sites.is_empty() {
                Ok(SetCapacity { capacity: 0.0, stderr: 0.0, exact: true })
            } else {
                set_capacity(&l.sites, &t, p.walkers, stream.child2(1, s as u64))
            }
        })
        .collect()
}

/// `E cap A^(s)(r, R) ≍ R^{min(d-2, 2s)}` for `s = 1, 2`.
pub fn check_layer_capacity(p: &LayerCapParams, seed: u64) -> Result<CheckReport> {
    let d = p.d;
    let mut rep = CheckReport::new(
        "layer_capacity",
        "log-log slope of E cap(A^(s)) in R equals min(d-2, 2s) within tolerance for s = 1, 2, with r^(d-2) <= eps R",
        seed,
    );
    rep.param("d", d).param("r", p.r).param("u", p.u).param("radii", format!("{:?}", p.radii)).param("eps", p.epsilon());
    let mut means = vec![Vec::new(), Vec::new()];
    for (k, &big_r) in p.radii.iter().enumerate() {
        let caps: Vec<Vec<SetCapacity>> = (0..p.replicas)
            .into_par_iter()
            .map(|i| layer_capacities(p, big_r, 2, RngStream::new(seed, (k * 10_000 + i) as u64)))
            .collect::<Result<_>>()?;
        for s in 0..2 {
            let m = Moments::of(caps.iter().map(|c| c[s].capacity));
            rep.row(CheckRow::info(format!("E cap A^({}) at R={big_r}", s + 1), m.mean, m.stderr()));
            means[s].push((m.mean, m.stderr()));
        }
    }
    let xs: Vec<f64> = p.radii.iter().map(|r| *r as f64).collect();
    for (s, m) in means.iter().enumerate() {
        local_slope_rows(&mut rep, &format!("A^({})", s + 1), &p.radii, m);
        let ys: Vec<f64> = m.iter().map(|v| v.0).collect();
        let ss: Vec<f64> = m.iter().map(|v| v.1.max(1e-12 * v.0)).collect();
        let fit = loglog_fit(&xs, &ys, Some(&ss));
        let target = (d as f64 - 2.0).min(2.0 * (s + 1) as f64);
        rep.row(CheckRow::within(format!("slope s={}", s + 1), fit.slope, target, p.tol, fit.slope_stderr));
    }
    rep.note(format!("s_d = {}; r^(d-2) <= eps R holds with eps = {}", s_d(d), p.epsilon()));
    rep.replicas = p.replicas;
    Ok(rep)
}

#[derive(Clone, Debug)]
pub struct GfParams {
    pub d: usize,
    pub n_values: Vec<usize>,
    pub walker_counts: Vec<usize>,
    pub n_fixed: usize,
    pub replicas: usize,
    pub tol: f64,
}

impl GfParams {
    pub fn at(scale: Scale) -> Self {
        let replicas = match scale {
            Scale::Full => 4_000,
            Scale::Quick => 400,
        };
        GfParams { d: 5, n_values: vec![16, 32, 64, 128], walker_counts: vec![1, 2, 4, 8], n_fixed: 32, replicas, tol: 0.3 }
    }
}

/// Positions `X_i(s)` for `s = n+1..=2n` of `walkers` walks from the origin.
fn segment_positions(d: usize, walkers: usize, n: usize, stream: RngStream) -> Vec<Vec<LatticePoint>> {
    (0..walkers)
        .map(|i| {
            let w = fixed_length(LatticePoint::origin(d), 2 * n, stream.child(i as u64));
            w.points().skip(n + 1).collect()
        })
        .collect()
}

/// Diagonal (`i = j`) and off-diagonal (`i != j`) parts of
/// `Σ_{i,j} Σ_{s,t=n+1}^{2n} g(X_i(s), X_j(t))` for one replica.
fn gf_parts(table: &GreenTable, pos: &[Vec<LatticePoint>]) -> (f64, f64) {
    let (mut diag, mut off) = (0.0, 0.0);
    for (i, a) in pos.iter().enumerate() {
        for (j, b) in pos.iter().enumerate() {
            let s: f64 = a.iter().map(|x| b.iter().map(|y| table.between(x, y)).sum::<f64>()).sum();
            if i == j {
                diag += s;
            } else {
                off += s;
            }
        }
    }
    (diag, off)
}

/// `E Σ_{i,j} Σ_{s,t} g(X_i(s), X_j(t)) <= C(N n + N² n^{3-d/2})`: linear
/// in `n` for one walk, and a cross term per pair growing as `n^{3-d/2}`.
pub fn check_gf_sum(p: &GfParams, seed: u64) -> Result<CheckReport> {
    let d = p.d;
    let t = GreenTable::shared(d)?;
    let mut rep = CheckReport::new(
        "gf_sum",
        "N=1: E/n varies by at most a factor 2 over n; the cross term per walker pair has log-log slope 3-d/2 in n within tolerance; at fixed n the total is a N + b N^2 with both parts positive",
        seed,
    );
    rep.param("d", d).param("n_values", format!("{:?}", p.n_values)).param("N_values", format!("{:?}", p.walker_counts));
    let (mut per_n, mut cross, mut cross_se) = (Vec::new(), Vec::new(), Vec::new());
    for (k, &n) in p.n_values.iter().enumerate() {
        let parts: Vec<(f64, f64)> = (0..p.replicas)
            .into_par_iter()
            .map(|i| gf_parts(&t, &segment_positions(d, 2, n, RngStream::new(seed, (k * 1_000_000 + i) as u64))))
            .collect();
        // two walkers: the diagonal holds two copies of the one-walk sum and
        // the off-diagonal two copies of the pair cross term
        let diag = Moments::of(parts.iter().map(|v| v.0 / 2.0));
        let off = Moments::of(parts.iter().map(|v| v.1 / 2.0));
        rep.row(CheckRow::info(format!("N=1 E/n at n={n}"), diag.mean / n as f64, diag.stderr() / n as f64));
        rep.row(CheckRow::info(format!("cross term at n={n}"), off.mean, off.stderr()));
        per_n.push(diag.mean / n as f64);
        cross.push(off.mean);
        cross_se.push(off.stderr());
    }
    let (lo, hi) = per_n.iter().fold((f64::INFINITY, 0.0f64), |a, v| (a.0.min(*v), a.1.max(*v)));
    rep.row(CheckRow::at_most("N=1 max/min of E/n", hi / lo, 2.0, 0.0, 0.0));
    let xs: Vec<f64> = p.n_values.iter().map(|n| *n as f64).collect();
    let fit = loglog_fit(&xs, &cross, Some(&cross_se));
    rep.row(CheckRow::within("cross term slope", fit.slope, 3.0 - d as f64 / 2.0, p.tol, fit.slope_stderr));
    let (mut ns, mut totals) = (Vec::new(), Vec::new());
    for (k, &nw) in p.walker_counts.iter().enumerate() {
        let parts: Vec<(f64, f64)> = (0..p.replicas)
            .into_par_iter()
            .map(|i| gf_parts(&t, &segment_positions(d, nw, p.n_fixed, RngStream::new(seed, ((10 + k) * 1_000_000 + i) as u64))))
            .collect();
        let m = Moments::of(parts.iter().map(|v| v.0 + v.1));
        rep.row(CheckRow::info(format!("E total at N={nw}, n={}", p.n_fixed), m.mean, m.stderr()));
        ns.push(nw as f64);
        totals.push(m.mean);
    }
    // least squares for total = a N + b N² without intercept
    let (s22, s23, s33, s2y, s3y) = ns.iter().zip(&totals).fold((0.0, 0.0, 0.0, 0.0, 0.0), |acc, (x, y)| {
        (acc.0 + x * x, acc.1 + x * x * x, acc.2 + x.powi(4), acc.3 + x * y, acc.4 + x * x * y)
    });
    let det = s22 * s33 - s23 * s23;
    let a = (s2y * s33 - s3y * s23) / det;
    let b = (s22 * s3y - s23 * s2y) / det;
    rep.row(CheckRow::at_least("linear coefficient a", a, 0.0, 0.0, 0.0));
    rep.row(CheckRow::at_least("quadratic coefficient b", b, 0.0, 0.0, 0.0));
    rep.replicas = p.replicas;
    Ok(rep)
}
