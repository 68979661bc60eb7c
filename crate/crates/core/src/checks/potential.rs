//! Capacity by two routes, and the three basic scaling exponents.

use rand::Rng;
use rayon::prelude::*;

use super::{CheckReport, CheckRow, Scale};
use crate::capacity::{capacity_mc, capacity_mc_subsampled, capacity_of, default_outer_radius, BoundaryIndexed, SiteRegion};
use crate::error::Result;
use crate::green::{green, GreenTable};
use crate::lattice::{Ball, LatticePoint, SiteSet};
use crate::rng::RngStream;
use crate::stats::{loglog_fit, Moments};
use crate::walk::fixed_length;

#[derive(Clone, Debug)]
pub struct CrossParams {
    pub sets: usize,
    pub max_size: usize,
    pub dims: Vec<usize>,
    /// Sites are drawn uniformly from `B(0, spread)`.
    pub spread: i64,
    pub walkers_per_site: usize,
    /// Walkers for the one- and two-point sets.
    pub point_walkers: usize,
    pub pair_offsets: Vec<Vec<i64>>,
}

impl CrossParams {
    pub fn at(scale: Scale) -> Self {
        let (sets, walkers_per_site, point_walkers) = match scale {
            Scale::Full => (20, 20_000, 400_000),
            Scale::Quick => (6, 2_000, 40_000),
        };
        CrossParams {
            sets,
            max_size: 20,
            dims: vec![3, 5],
            spread: 3,
            walkers_per_site,
            point_walkers,
            pair_offsets: vec![vec![1], vec![1, 1], vec![3], vec![2, 1, 1]],
        }
    }
}

/// Random site set `K`, `1 <= |K| <= max_size`, inside `B(0, spread)`.
pub fn random_set(d: usize, max_size: usize, spread: i64, stream: RngStream) -> SiteSet {
    let mut rng = stream.rng();
    let size = rng.random_range(1..=max_size);
    let mut k = SiteSet::new(d);
    let mut c = vec![0i64; d];
    while k.len() < size {
        for ci in c.iter_mut() {
            *ci = rng.random_range(-spread..=spread);
        }
        k.insert(LatticePoint::new(&c));
    }
    k
}

/// Difference test `|a - b| <= 3 sqrt(σ_a² + σ_b²) + bias`.
fn agree(label: String, mc: f64, mc_se: f64, bias: f64, exact: f64, exact_se: f64) -> CheckRow {
    let sigma = (mc_se * mc_se + exact_se * exact_se).sqrt();
    CheckRow::new(label, mc, exact, sigma, (mc - exact).abs() <= 3.0 * sigma + bias)
}

pub fn check_capacity_cross(p: &CrossParams, seed: u64) -> Result<CheckReport> {
    let mut rep = CheckReport::new(
        "capacity_cross",
        "escape Monte Carlo within 3 sigma (plus its exit-bias bound) of the variational capacity on random sets; cap({0}) = 1/g(0); cap({0,x}) = 2/(g(0)+g(x))",
        seed,
    );
    rep.param("sets", p.sets).param("max_size", p.max_size).param("dims", format!("{:?}", p.dims));
    rep.param("walkers_per_site", p.walkers_per_site);
    for i in 0..p.sets {
        let d = p.dims[i % p.dims.len()];
        let t = GreenTable::shared(d)?;
        let k = random_set(d, p.max_size, p.spread, RngStream::new(seed, i as u64));
        let var = capacity_of(&k, &t)?;
        let rho = BoundaryIndexed::new(&k)?.radius();
        let mc = capacity_mc(&k, p.walkers_per_site, default_outer_radius(d, rho), RngStream::new(seed, 1000 + i as u64))?;
        rep.row(agree(format!("set {i} d={d} |K|={}", k.len()), mc.capacity, mc.stderr, mc.bias_bound, var.capacity, var.capacity * t.tolerance()));
    }
    for (j, &d) in p.dims.iter().enumerate() {
        let t = GreenTable::shared(d)?;
        let o = LatticePoint::origin(d);
        let k = SiteSet::from_points(d, [o]);
        let mc = capacity_mc(&k, p.point_walkers, default_outer_radius(d, 0), RngStream::new(seed, 2000 + j as u64))?;
        let exact = 1.0 / t.g0();
        rep.row(agree(format!("cap({{0}}) d={d}"), mc.capacity, mc.stderr, mc.bias_bound, exact, exact * t.tolerance()));
        for (m, off) in p.pair_offsets.iter().enumerate() {
            let mut c = vec![0i64; d];
            c[..off.len()].copy_from_slice(off);
            let x = LatticePoint::new(&c);
            let k = SiteSet::from_points(d, [o, x]);
            let rho = BoundaryIndexed::new(&k)?.radius();
            let mc = capacity_mc(&k, p.point_walkers / 2, default_outer_radius(d, rho), RngStream::new(seed, 3000 + 100 * j as u64 + m as u64))?;
            let exact = 2.0 / (t.g0() + t.get(&x));
            rep.row(agree(format!("cap({{0,{x}}}) d={d}"), mc.capacity, mc.stderr, mc.bias_bound, exact, exact * t.tolerance()));
        }
    }
    rep.replicas = p.sets;
    Ok(rep)
}

#[derive(Clone, Debug)]
pub struct ScalingParams {
    pub d: usize,
    pub ball_radii: Vec<i64>,
    pub ball_walkers: usize,
    pub green_norms: Vec<i64>,
    pub green_tolerance: f64,
    pub walk_times: Vec<usize>,
    pub walkers: usize,
    pub cap_tol: f64,
    pub green_tol: f64,
    pub walk_tol: f64,
}

impl ScalingParams {
    pub fn at(scale: Scale) -> Self {
        let (ball_walkers, walkers) = match scale {
            Scale::Full => (100_000, 200_000),
            Scale::Quick => (10_000, 20_000),
        };
        ScalingParams {
            d: 5,
            ball_radii: (2..=12).collect(),
            ball_walkers,
            green_norms: vec![4, 8, 16, 32],
            green_tolerance: 1e-4,
            walk_times: vec![16, 32, 64, 128, 256],
            walkers,
            cap_tol: 0.25,
            green_tol: 0.15,
            walk_tol: 0.3,
        }
    }
}

/// `E g(X(s), 0)` for a walk from the origin, with its standard error.
pub fn expected_green_along_walk(table: &GreenTable, s: usize, walkers: usize, stream: RngStream) -> (f64, f64) {
    let d = table.dim();
    let vals: Vec<f64> = (0..walkers)
        .into_par_iter()
        .map(|i| table.get(&fixed_length(LatticePoint::origin(d), s, stream.child(i as u64)).end()))
        .collect();
    let m = Moments::of(vals);
    (m.mean, m.stderr())
}

pub fn check_scaling(p: &ScalingParams, seed: u64) -> Result<CheckReport> {
    let d = p.d;
    let mut rep = CheckReport::new(
        "scaling_exponents",
        "log-log slopes: cap(B(0,R)) vs R equals d-2, g(v) vs |v| equals 2-d, E g(X(s),0) vs s equals 1-d/2, within the stated tolerances",
        seed,
    );
    rep.param("d", d).param("radii", format!("{:?}", p.ball_radii)).param("norms", format!("{:?}", p.green_norms));
    rep.param("times", format!("{:?}", p.walk_times));
    let (mut cx, mut cy, mut cs) = (Vec::new(), Vec::new(), Vec::new());
    for &r in &p.ball_radii {
        let b = Ball::centered(d, r);
        let est = capacity_mc_subsampled(&b, p.ball_walkers, default_outer_radius(d, r), RngStream::new(seed, r as u64))?;
        rep.row(CheckRow::info(format!("cap(B(0,{r}))"), est.capacity, est.stderr));
        cx.push(r as f64);
        cy.push(est.capacity);
        cs.push(est.stderr);
    }
    let fit = loglog_fit(&cx, &cy, Some(&cs));
    rep.row(CheckRow::within("capacity slope", fit.slope, d as f64 - 2.0, p.cap_tol, fit.slope_stderr));
    let (mut gx, mut gy) = (Vec::new(), Vec::new());
    for &k in &p.green_norms {
        let g = green(&LatticePoint::axis(d, 0, k), p.green_tolerance)?;
        rep.row(CheckRow::info(format!("g({k} e1)"), g.estimate, g.stderr));
        gx.push(k as f64);
        gy.push(g.estimate);
    }
    let fit = loglog_fit(&gx, &gy, None);
    rep.row(CheckRow::within("green slope", fit.slope, 2.0 - d as f64, p.green_tol, fit.slope_stderr));
    let t = GreenTable::shared(d)?;
    let (mut wx, mut wy, mut ws) = (Vec::new(), Vec::new(), Vec::new());
    for (i, &s) in p.walk_times.iter().enumerate() {
        let (m, se) = expected_green_along_walk(&t, s, p.walkers, RngStream::new(seed, 100 + i as u64));
        rep.row(CheckRow::info(format!("E g(X({s}),0)"), m, se));
        wx.push(s as f64);
        wy.push(m);
        ws.push(se);
    }
    let fit = loglog_fit(&wx, &wy, Some(&ws));
    rep.row(CheckRow::within("walk green slope", fit.slope, 1.0 - d as f64 / 2.0, p.walk_tol, fit.slope_stderr));
    rep.replicas = p.walkers;
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_sets_have_requested_shape() {
        for i in 0..20 {
            let k = random_set(5, 20, 3, RngStream::new(9, i));
            assert!((1..=20).contains(&k.len()));
            assert!(k.iter().all(|p| p.sup_norm() <= 3));
        }
    }

    #[test]
    fn quick_cross_check_passes() {
        let mut p = CrossParams::at(Scale::Quick);
        p.sets = 2;
        p.pair_offsets.truncate(1);
        let rep = check_capacity_cross(&p, 11).unwrap();
        assert!(rep.pass(), "{}", rep.to_text());
        assert_eq!(rep.rows.len(), 2 + 2 * 2);
    }
}
