//! Capacity and equilibrium measure by two independent routes: the energy
//! minimisation over probability measures on `K`, and direct escape
//! simulation `e_K(x) = P_x(X(t) ∉ K for all t >= 1)`.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::green::{asymptotic_constant, green_asymptotic, random_orbit_point, GreenTable};
use crate::lattice::{Ball, LatticePoint, SiteSet};
use crate::rng::{RngStream, StreamRng};
use crate::walk::random_step;

/// `G(x, y) = g(y - x)` over `sites` (in the given order).
pub fn green_matrix_for(sites: &[LatticePoint], table: &GreenTable) -> Result<DMatrix<f64>> {
    if sites.is_empty() {
        return Err(Error::EmptySet);
    }
    let d = table.dim();
    if let Some(p) = sites.iter().find(|p| p.dim() != d) {
        return Err(Error::DimensionMismatch(p.dim(), d));
    }
    let n = sites.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = table.g0();
        for j in 0..i {
            let g = table.between(&sites[i], &sites[j]);
            m[(i, j)] = g;
            m[(j, i)] = g;
        }
    }
    Ok(m)
}

/// Green matrix of `K` with rows in lexicographic site order.
pub fn green_matrix(k: &SiteSet, table: &GreenTable) -> Result<DMatrix<f64>> {
    green_matrix_for(&k.sorted_points(), table)
}

#[derive(Clone, Debug)]
pub struct VariationalCapacity {
    pub sites: Vec<LatticePoint>,
    /// Minimising probability measure, i.e. the normalised equilibrium measure.
    pub nu: Vec<f64>,
    pub energy: f64,
    pub capacity: f64,
    pub iterations: usize,
}

impl VariationalCapacity {
    /// `e_K = cap(K) · ν`.
    pub fn equilibrium_weights(&self) -> Vec<f64> {
        self.nu.iter().map(|v| v * self.capacity).collect()
    }

    pub fn to_measure(&self) -> Result<EquilibriumMeasure> {
        let w = self.equilibrium_weights();
        let err = vec![0.0; w.len()];
        EquilibriumMeasure::from_sites(self.sites.clone(), w, err, "variational")
    }
}

/// Minimises `ν^T G ν` over probability vectors by an active-set method:
/// on the current support the minimiser is proportional to `G_S^{-1} 1`;
/// negative components leave the support and sites violating the optimality
/// condition `(Gν)_x >= energy` re-enter it.
pub fn capacity_variational(sites: &[LatticePoint], g: &DMatrix<f64>) -> Result<VariationalCapacity> {
    let n = sites.len();
    if n == 0 {
        return Ok(VariationalCapacity { sites: vec![], nu: vec![], energy: f64::INFINITY, capacity: 0.0, iterations: 0 });
    }
    if g.nrows() != n || g.ncols() != n {
        return Err(Error::InvalidArgument(format!("green matrix is {}x{}, expected {n}x{n}", g.nrows(), g.ncols())));
    }
    let scale = g.amax();
    for i in 0..n {
        for j in 0..i {
            if (g[(i, j)] - g[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::NotPositiveDefinite(format!("asymmetric at ({i},{j})")));
            }
        }
    }
    if g.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite("cholesky factorisation failed".into()));
    }
    let mut support: Vec<usize> = (0..n).collect();
    let mut prev_energy = f64::INFINITY;
    for it in 1..=(2 * n + 10) {
        let m = support.len();
        let sub = DMatrix::from_fn(m, m, |a, b| g[(support[a], support[b])]);
        let chol = sub.cholesky().ok_or_else(|| Error::NotPositiveDefinite("principal submatrix".into()))?;
        let x = chol.solve(&DVector::from_element(m, 1.0));
        let total: f64 = x.iter().sum();
        let energy = 1.0 / total;
        if x.iter().any(|&v| v < 0.0) {
            support = support.iter().zip(x.iter()).filter(|(_, &v)| v >= 0.0).map(|(&i, _)| i).collect();
            if support.is_empty() {
                return Err(Error::NoConvergence("active set emptied".into()));
            }
            continue;
        }
        let mut nu = vec![0.0; n];
        for (&i, &v) in support.iter().zip(x.iter()) {
            nu[i] = v / total;
        }
        let nu_vec = DVector::from_column_slice(&nu);
        let potential = g * &nu_vec;
        let worst = (0..n)
            .filter(|i| !support.contains(i))
            .map(|i| (i, potential[i]))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match worst {
            Some((i, p)) if p < energy * (1.0 - 1e-12) && (prev_energy - energy).abs() >= 1e-10 => {
                support.push(i);
                support.sort_unstable();
                prev_energy = energy;
            }
            _ => {
                return Ok(VariationalCapacity { sites: sites.to_vec(), nu, energy, capacity: total, iterations: it });
            }
        }
    }
    Err(Error::NoConvergence("active-set iteration limit".into()))
}

/// Variational capacity of a site set using the shared Green table.
pub fn capacity_of(k: &SiteSet, table: &GreenTable) -> Result<VariationalCapacity> {
    if k.is_empty() {
        return capacity_variational(&[], &DMatrix::zeros(0, 0));
    }
    let sites = k.sorted_points();
    let g = green_matrix_for(&sites, table)?;
    capacity_variational(&sites, &g)
}

/// A finite region of `Z^d` that escape walkers can be launched from.
pub trait SiteRegion: Sync {
    fn dim(&self) -> usize;
    fn contains(&self, p: &LatticePoint) -> bool;
    /// A point with `region ⊆ B(center, radius)`.
    fn center(&self) -> LatticePoint;
    fn radius(&self) -> i64;
    /// Number of sites with at least one neighbour outside the region; only
    /// these carry equilibrium mass.
    fn inner_boundary_count(&self) -> u64;
    fn sample_inner_boundary(&self, rng: &mut StreamRng) -> LatticePoint;
}

impl SiteRegion for Ball {
    fn dim(&self) -> usize {
        Ball::dim(self)
    }

    fn contains(&self, p: &LatticePoint) -> bool {
        Ball::contains(self, p)
    }

    fn center(&self) -> LatticePoint {
        self.center
    }

    fn radius(&self) -> i64 {
        self.radius
    }

    fn inner_boundary_count(&self) -> u64 {
        self.boundary_count()
    }

    fn sample_inner_boundary(&self, rng: &mut StreamRng) -> LatticePoint {
        let d = Ball::dim(self);
        let r = self.radius;
        if r == 0 {
            return self.center;
        }
        loop {
            let mut c = [0i64; 8];
            for x in c.iter_mut().take(d) {
                *x = rng.random_range(-r..=r);
            }
            if c[..d].iter().any(|x| x.abs() == r) {
                return self.center + LatticePoint::new(&c[..d]);
            }
        }
    }
}

/// A site set together with its inner boundary, for boundary sampling.
#[derive(Clone, Debug)]
pub struct BoundaryIndexed<'a> {
    pub set: &'a SiteSet,
    pub boundary: Vec<LatticePoint>,
    center: LatticePoint,
    radius: i64,
}

impl<'a> BoundaryIndexed<'a> {
    pub fn new(set: &'a SiteSet) -> Result<Self> {
        let ball = set.bounding_ball().ok_or(Error::EmptySet)?;
        let mut boundary: Vec<LatticePoint> =
            set.iter().filter(|p| p.neighbors().any(|q| !set.contains(&q))).collect();
        boundary.sort_unstable_by(|a, b| a.coords().cmp(b.coords()));
        Ok(BoundaryIndexed { set, boundary, center: ball.center, radius: ball.radius })
    }
}

impl SiteRegion for BoundaryIndexed<'_> {
    fn dim(&self) -> usize {
        self.set.dim()
    }

    fn contains(&self, p: &LatticePoint) -> bool {
        self.set.contains(p)
    }

    fn center(&self) -> LatticePoint {
        self.center
    }

    fn radius(&self) -> i64 {
        self.radius
    }

    fn inner_boundary_count(&self) -> u64 {
        self.boundary.len() as u64
    }

    fn sample_inner_boundary(&self, rng: &mut StreamRng) -> LatticePoint {
        self.boundary[rng.random_range(0..self.boundary.len())]
    }
}

/// Runs a walk from `x` (assumed in the region) until it re-enters the region
/// at some `t >= 1` (`None`) or leaves `B(center, outer)` (`Some(exit point)`).
pub fn escape_trial<R: Rng + ?Sized>(region: &dyn SiteRegion, x: LatticePoint, outer: i64, rng: &mut R) -> Option<LatticePoint> {
    let d = region.dim();
    let c = region.center();
    let rho = region.radius();
    let mut p = x;
    loop {
        p.step(random_step(rng, d));
        let dist = p.sup_dist(&c);
        if dist <= rho && region.contains(&p) {
            return None;
        }
        if dist > outer {
            return Some(p);
        }
    }
}

/// Default outer radius for escape estimates: four times the set radius,
/// and at least 32 in `d = 3` and 16 otherwise.
pub fn default_outer_radius(d: usize, radius: i64) -> i64 {
    let floor = if d == 3 { 32 } else { 16 };
    (4 * radius.max(1)).max(floor)
}

#[derive(Clone, Debug)]
pub struct SiteEscape {
    pub site: LatticePoint,
    pub estimate: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug)]
pub struct CapacityEstimate {
    pub capacity: f64,
    pub stderr: f64,
    /// Size of the raw `O(R_out^{2-d} cap)` return probability after exit,
    /// which the estimate corrects to first order.
    pub exit_return_bound: f64,
    /// Bound on what remains after the first-order correction.
    pub bias_bound: f64,
    pub outer_radius: i64,
    pub walkers: usize,
    /// Per-site `e_K` estimates (exhaustive mode only).
    pub per_site: Vec<SiteEscape>,
}

impl CapacityEstimate {
    pub fn to_measure(&self) -> Result<EquilibriumMeasure> {
        if self.per_site.is_empty() {
            return Err(Error::Incompatible("capacity estimate has no per-site weights".into()));
        }
        EquilibriumMeasure::from_sites(
            self.per_site.iter().map(|s| s.site).collect(),
            self.per_site.iter().map(|s| s.estimate).collect(),
            self.per_site.iter().map(|s| s.stderr).collect(),
            "monte-carlo",
        )
    }
}

/// Sufficient statistics of a batch of escape trials. Each escaped walker
/// exiting at `z` contributes `1 - cap · g(z - c)`: the chance of a later
/// return is replaced by its far-field value.
#[derive(Clone, Copy, Debug, Default)]
struct EscapeTally {
    n: usize,
    escaped: f64,
    s1: f64,
    s2: f64,
}

impl EscapeTally {
    fn add(&mut self, exit: Option<LatticePoint>, d: usize, c: &LatticePoint) {
        self.n += 1;
        if let Some(z) = exit {
            let g = green_asymptotic(d, (z - *c).euclid_sq());
            self.escaped += 1.0;
            self.s1 += g;
            self.s2 += g * g;
        }
    }

    fn mean(&self, cap: f64) -> f64 {
        (self.escaped - cap * self.s1) / self.n as f64
    }

    fn var_of_mean(&self, cap: f64) -> f64 {
        let n = self.n as f64;
        let m = self.mean(cap);
        let sq = (self.escaped - 2.0 * cap * self.s1 + cap * cap * self.s2) / n;
        ((sq - m * m).max(0.0)) / (n - 1.0).max(1.0)
    }
}

fn check_outer(region: &dyn SiteRegion, outer: i64) -> Result<()> {
    if 4 * region.radius() > outer {
        return Err(Error::Geometry(format!(
            "set of radius {} not inside a quarter of the outer radius {outer}",
            region.radius()
        )));
    }
    Ok(())
}

fn bias_terms(d: usize, cap: f64, rho: i64, outer: i64) -> (f64, f64) {
    let c_d = asymptotic_constant(d);
    let near = ((outer - rho).max(1) as f64).powf(2.0 - d as f64);
    let far = ((outer + 1 + rho) as f64).powf(2.0 - d as f64);
    let raw = (cap * c_d * near).min(1.0);
    (raw, cap * c_d * (near - far) + raw * raw)
}

/// Escape estimate of `cap(K)` launching `walkers_per_site` walkers from
/// every site of `K`.
pub fn capacity_mc(k: &SiteSet, walkers_per_site: usize, outer_radius: i64, stream: RngStream) -> Result<CapacityEstimate> {
    if walkers_per_site < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 walkers per site, got {walkers_per_site}")));
    }
    let region = BoundaryIndexed::new(k)?;
    check_outer(&region, outer_radius)?;
    let d = k.dim();
    let c = region.center();
    let sites = k.sorted_points();
    let tallies: Vec<EscapeTally> = sites
        .par_iter()
        .enumerate()
        .map(|(i, &x)| {
            let mut t = EscapeTally::default();
            if !x.neighbors().any(|q| !k.contains(&q)) {
                t.n = walkers_per_site;
                return t;
            }
            let mut rng = stream.child(i as u64).rng();
            for _ in 0..walkers_per_site {
                t.add(escape_trial(&region, x, outer_radius, &mut rng), d, &c);
            }
            t
        })
        .collect();
    let n = walkers_per_site as f64;
    let a: f64 = tallies.iter().map(|t| t.escaped).sum::<f64>() / n;
    let b: f64 = tallies.iter().map(|t| t.s1).sum::<f64>() / n;
    let cap = a / (1.0 + b);
    let per_site: Vec<SiteEscape> = sites
        .iter()
        .zip(&tallies)
        .map(|(&site, t)| SiteEscape { site, estimate: t.mean(cap), stderr: t.var_of_mean(cap).sqrt() })
        .collect();
    let var: f64 = tallies.iter().map(|t| t.var_of_mean(cap)).sum();
    let (raw, bias) = bias_terms(d, cap, region.radius(), outer_radius);
    Ok(CapacityEstimate {
        capacity: cap,
        stderr: var.sqrt(),
        exit_return_bound: raw,
        bias_bound: bias,
        outer_radius,
        walkers: walkers_per_site * sites.len(),
        per_site,
    })
}

/// Escape estimate of `cap` from `walkers` launches at uniform inner-boundary
/// sites: `cap = |∂K| · E[escape weight]`.
pub fn capacity_mc_subsampled(region: &dyn SiteRegion, walkers: usize, outer_radius: i64, stream: RngStream) -> Result<CapacityEstimate> {
    if walkers < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 walkers, got {walkers}")));
    }
    check_outer(region, outer_radius)?;
    let d = region.dim();
    let c = region.center();
    const CHUNK: usize = 256;
    let chunks = walkers.div_ceil(CHUNK);
    let parts: Vec<EscapeTally> = (0..chunks)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream.child(j as u64).rng();
            let mut t = EscapeTally::default();
            for _ in 0..CHUNK.min(walkers - j * CHUNK) {
                let x = region.sample_inner_boundary(&mut rng);
                t.add(escape_trial(region, x, outer_radius, &mut rng), d, &c);
            }
            t
        })
        .collect();
    let mut t = EscapeTally::default();
    for p in parts {
        t.n += p.n;
        t.escaped += p.escaped;
        t.s1 += p.s1;
        t.s2 += p.s2;
    }
    let nb = region.inner_boundary_count() as f64;
    let n = t.n as f64;
    let cap = nb * t.escaped / n / (1.0 + nb * t.s1 / n);
    let (raw, bias) = bias_terms(d, cap, region.radius(), outer_radius);
    Ok(CapacityEstimate {
        capacity: cap,
        stderr: nb * t.var_of_mean(cap).sqrt(),
        exit_return_bound: raw,
        bias_bound: bias,
        outer_radius,
        walkers: t.n,
        per_site: Vec::new(),
    })
}

/// Upper bound (estimate plus three standard errors and the bias bound) on
/// `cap(B(0, radius))`, cached per process. Radii above 8 are scaled from
/// radius 8 by `(radius / 8)^{d-2}`, which dominates the true growth.
pub fn ball_capacity_upper(d: usize, radius: i64) -> Result<f64> {
    use std::sync::{Mutex, OnceLock};
    static CACHE: OnceLock<Mutex<HashMap<(usize, i64), f64>>> = OnceLock::new();
    crate::lattice::check_dim(d)?;
    let base = radius.clamp(0, 8);
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let cached = cache.lock().expect("capacity cache poisoned").get(&(d, base)).copied();
    let at_base = match cached {
        Some(v) => v,
        None => {
            let ball = Ball::centered(d, base);
            let est = capacity_mc_subsampled(&ball, 4000, default_outer_radius(d, base), RngStream::new(0xba11, base as u64))?;
            let v = est.capacity + 3.0 * est.stderr + est.bias_bound;
            cache.lock().expect("capacity cache poisoned").insert((d, base), v);
            v
        }
    };
    Ok(if radius > 8 { at_base * (radius as f64 / 8.0).powi(d as i32 - 2) } else { at_base })
}

/// Orbits of the sphere `{|x| = R}` under coordinate permutations and sign
/// changes: canonical representatives (descending absolute coordinates) and
/// orbit sizes.
pub fn sphere_orbits(d: usize, radius: i64) -> Vec<(LatticePoint, f64)> {
    let mut out = Vec::new();
    if radius == 0 {
        out.push((LatticePoint::origin(d), 1.0));
        return out;
    }
    let mut cur = vec![0i64; d];
    cur[0] = radius;
    fn rec(d: usize, depth: usize, max_a: i64, cur: &mut Vec<i64>, out: &mut Vec<(LatticePoint, f64)>) {
        if depth == d {
            out.push((LatticePoint::new(cur), orbit_size(cur)));
            return;
        }
        for a in 0..=max_a {
            cur[depth] = a;
            rec(d, depth + 1, a, cur, out);
        }
    }
    rec(d, 1, radius, &mut cur, &mut out);
    out
}

/// Number of distinct points obtained from `c` by permutations and sign flips.
pub fn orbit_size(c: &[i64]) -> f64 {
    let mut fact = [1.0f64; 9];
    for i in 1..9 {
        fact[i] = fact[i - 1] * i as f64;
    }
    let mut counts: HashMap<i64, usize> = HashMap::new();
    for &x in c {
        *counts.entry(x.abs()).or_default() += 1;
    }
    let perms = counts.values().fold(fact[c.len()], |acc, &m| acc / fact[m]);
    let nonzero = c.iter().filter(|&&x| x != 0).count();
    perms * 2f64.powi(nonzero as i32)
}

/// Equilibrium measure of a ball from escape estimates at one representative
/// per boundary orbit.
pub fn ball_equilibrium(ball: &Ball, walkers_per_orbit: usize, outer_radius: i64, stream: RngStream) -> Result<EquilibriumMeasure> {
    if walkers_per_orbit < 100 {
        return Err(Error::InvalidArgument("need at least 100 walkers per orbit".into()));
    }
    check_outer(ball, outer_radius)?;
    let d = ball.dim();
    let orbits = sphere_orbits(d, ball.radius);
    let c = ball.center;
    let tallies: Vec<EscapeTally> = orbits
        .par_iter()
        .enumerate()
        .map(|(i, (rep, _))| {
            let mut rng = stream.child(i as u64).rng();
            let mut t = EscapeTally::default();
            for _ in 0..walkers_per_orbit {
                t.add(escape_trial(ball, c + *rep, outer_radius, &mut rng), d, &c);
            }
            t
        })
        .collect();
    let n = walkers_per_orbit as f64;
    let a: f64 = orbits.iter().zip(&tallies).map(|((_, m), t)| m * t.escaped).sum::<f64>() / n;
    let b: f64 = orbits.iter().zip(&tallies).map(|((_, m), t)| m * t.s1).sum::<f64>() / n;
    let cap = a / (1.0 + b);
    let weights: Vec<f64> = tallies.iter().map(|t| t.mean(cap).max(0.0)).collect();
    let errs: Vec<f64> = tallies.iter().map(|t| t.var_of_mean(cap).sqrt()).collect();
    let (reps, mult): (Vec<_>, Vec<_>) = orbits.into_iter().unzip();
    EquilibriumMeasure::from_ball_orbits(*ball, reps, mult, weights, errs, "monte-carlo")
}

/// Variational equilibrium measure of a ball, reduced by symmetry. The
/// minimiser is invariant under the cube group, so `e_K` is constant on
/// each boundary orbit `O_j` and solves `Σ_j M_ij w_j = 1` with
/// `M_ij = Σ_{y ∈ O_j} g(x_i - y)` on the orbits carrying mass. Orbits with
/// negative solution leave the support, as in [`capacity_variational`].
pub fn ball_capacity_variational(ball: &Ball, table: &GreenTable) -> Result<EquilibriumMeasure> {
    let d = ball.dim();
    if table.dim() != d {
        return Err(Error::DimensionMismatch(table.dim(), d));
    }
    let orbits = sphere_orbits(d, ball.radius);
    let n = orbits.len();
    let index: HashMap<LatticePoint, usize> = orbits.iter().enumerate().map(|(i, (p, _))| (*p, i)).collect();
    let origin = Ball::centered(d, ball.radius);
    let shell: Vec<(LatticePoint, usize)> = origin
        .sites()
        .into_iter()
        .filter(|p| p.sup_norm() == ball.radius)
        .map(|p| (p, index[&p.canonical()]))
        .collect();
    let m: Vec<Vec<f64>> = orbits
        .par_iter()
        .map(|(x, _)| {
            let mut row = vec![0.0; n];
            for (y, j) in &shell {
                row[*j] += table.between(x, y);
            }
            row
        })
        .collect();
    let mut support: Vec<usize> = (0..n).collect();
    for _ in 0..=n {
        let k = support.len();
        let sub = DMatrix::from_fn(k, k, |a, b| m[support[a]][support[b]]);
        let w = sub.lu().solve(&DVector::from_element(k, 1.0)).ok_or_else(|| Error::NotPositiveDefinite("orbit system singular".into()))?;
        if w.iter().any(|&v| v < 0.0) {
            support = support.iter().zip(w.iter()).filter(|(_, &v)| v >= 0.0).map(|(&i, _)| i).collect();
            if support.is_empty() {
                return Err(Error::NoConvergence("orbit active set emptied".into()));
            }
            continue;
        }
        let mut weights = vec![0.0; n];
        for (&i, &v) in support.iter().zip(w.iter()) {
            weights[i] = v;
        }
        let (reps, mult): (Vec<_>, Vec<_>) = orbits.into_iter().unzip();
        return EquilibriumMeasure::from_ball_orbits(*ball, reps, mult, weights, vec![0.0; n], "variational");
    }
    Err(Error::NoConvergence("orbit active-set iteration limit".into()))
}

#[derive(Clone, Debug)]
enum Support {
    Sites { sites: Vec<LatticePoint>, index: HashMap<LatticePoint, usize> },
    BallOrbits { ball: Ball, reps: Vec<LatticePoint>, multiplicity: Vec<f64>, index: HashMap<LatticePoint, usize> },
}

/// `e_K` on its support, either site by site or (for balls) per orbit of
/// the cube symmetry group.
#[derive(Clone, Debug)]
pub struct EquilibriumMeasure {
    d: usize,
    support: Support,
    weights: Vec<f64>,
    stderr: Vec<f64>,
    total: f64,
    total_stderr: f64,
    method: String,
    sampler: Option<WeightedAliasIndex<f64>>,
}

impl EquilibriumMeasure {
    pub fn from_sites(sites: Vec<LatticePoint>, weights: Vec<f64>, stderr: Vec<f64>, method: &str) -> Result<Self> {
        if sites.len() != weights.len() || sites.len() != stderr.len() {
            return Err(Error::InvalidArgument("site and weight lists differ in length".into()));
        }
        let d = sites.first().map(|p| p.dim()).unwrap_or(3);
        let weights: Vec<f64> = weights.into_iter().map(|w| w.clamp(0.0, 1.0)).collect();
        let index = sites.iter().enumerate().map(|(i, p)| (*p, i)).collect();
        let total = weights.iter().sum();
        let total_stderr = stderr.iter().map(|e| e * e).sum::<f64>().sqrt();
        let sampler = if total > 0.0 { WeightedAliasIndex::new(weights.clone()).ok() } else { None };
        Ok(EquilibriumMeasure { d, support: Support::Sites { sites, index }, weights, stderr, total, total_stderr, method: method.into(), sampler })
    }

    fn from_ball_orbits(ball: Ball, reps: Vec<LatticePoint>, multiplicity: Vec<f64>, weights: Vec<f64>, stderr: Vec<f64>, method: &str) -> Result<Self> {
        let d = ball.dim();
        let weights: Vec<f64> = weights.into_iter().map(|w| w.clamp(0.0, 1.0)).collect();
        let total = weights.iter().zip(&multiplicity).map(|(w, m)| w * m).sum();
        let total_stderr = stderr.iter().zip(&multiplicity).map(|(e, m)| (e * m).powi(2)).sum::<f64>().sqrt();
        let mass: Vec<f64> = weights.iter().zip(&multiplicity).map(|(w, m)| w * m).collect();
        let sampler = if total > 0.0 { WeightedAliasIndex::new(mass).ok() } else { None };
        let index = reps.iter().enumerate().map(|(i, p)| (*p, i)).collect();
        Ok(EquilibriumMeasure {
            d,
            support: Support::BallOrbits { ball, reps, multiplicity, index },
            weights,
            stderr,
            total,
            total_stderr,
            method: method.into(),
            sampler,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Total mass, i.e. the capacity estimate.
    pub fn capacity(&self) -> f64 {
        self.total
    }

    pub fn capacity_stderr(&self) -> f64 {
        self.total_stderr
    }

    pub fn method(&self) -> &str {
        &self.method
    }

    /// `e_K(x)`, zero off the support.
    pub fn weight(&self, x: &LatticePoint) -> f64 {
        match &self.support {
            Support::Sites { index, .. } => index.get(x).map_or(0.0, |&i| self.weights[i]),
            Support::BallOrbits { ball, index, .. } => {
                let rel = (*x - ball.center).canonical();
                index.get(&rel).map_or(0.0, |&i| self.weights[i])
            }
        }
    }

    /// Whether `x` is in the set the measure lives on.
    pub fn in_support_set(&self, x: &LatticePoint) -> bool {
        match &self.support {
            Support::Sites { index, .. } => index.contains_key(x),
            Support::BallOrbits { ball, .. } => ball.contains(x),
        }
    }

    /// All `(site, e_K(site), stderr)` with positive weight.
    pub fn entries(&self) -> Vec<(LatticePoint, f64, f64)> {
        match &self.support {
            Support::Sites { sites, .. } => sites
                .iter()
                .zip(self.weights.iter().zip(&self.stderr))
                .map(|(p, (w, e))| (*p, *w, *e))
                .collect(),
            Support::BallOrbits { ball, index, .. } => ball
                .sites()
                .into_iter()
                .filter_map(|p| {
                    let rel = (p - ball.center).canonical();
                    index.get(&rel).map(|&i| (p, self.weights[i], self.stderr[i]))
                })
                .collect(),
        }
    }

    /// Orbit (or site) representatives with their multiplicity and mass
    /// `multiplicity · e`; used for goodness-of-fit tests.
    pub fn classes(&self) -> Vec<(LatticePoint, f64, f64)> {
        match &self.support {
            Support::Sites { sites, .. } => sites.iter().zip(&self.weights).map(|(p, w)| (*p, 1.0, *w)).collect(),
            Support::BallOrbits { reps, multiplicity, ball, .. } => reps
                .iter()
                .zip(multiplicity.iter().zip(&self.weights))
                .map(|(r, (m, w))| (ball.center + *r, *m, m * w))
                .collect(),
        }
    }

    /// Index into [`Self::classes`] of the class containing `x`.
    pub fn class_of(&self, x: &LatticePoint) -> Option<usize> {
        match &self.support {
            Support::Sites { index, .. } => index.get(x).copied(),
            Support::BallOrbits { ball, index, .. } => index.get(&(*x - ball.center).canonical()).copied(),
        }
    }

    /// Draws from the normalised measure `ẽ_K`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<LatticePoint> {
        let s = self.sampler.as_ref().ok_or(Error::EmptySet)?;
        let i = s.sample(rng);
        Ok(match &self.support {
            Support::Sites { sites, .. } => sites[i],
            Support::BallOrbits { ball, reps, .. } => ball.center + random_orbit_point(&reps[i], rng),
        })
    }

    /// Columnar text form `site<TAB>value<TAB>stderr<TAB>method<TAB>seed`.
    pub fn to_text(&self, seed: Option<u64>) -> String {
        let mut s = String::from("site\tvalue\tstderr\tmethod\tseed\n");
        let seed = seed.map_or_else(|| "-".to_string(), |x| x.to_string());
        for (p, w, e) in self.entries() {
            let _ = writeln!(s, "{p}\t{w:e}\t{e:e}\t{}\t{seed}", self.method);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut sites = Vec::new();
        let mut w = Vec::new();
        let mut e = Vec::new();
        let mut method = String::from("variational");
        for line in text.lines().skip(1) {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(Error::Parse(format!("bad equilibrium row {line:?}")));
            }
            sites.push(cols[0].parse()?);
            w.push(cols[1].parse().map_err(|x| Error::Parse(format!("{x}")))?);
            e.push(cols[2].parse().map_err(|x| Error::Parse(format!("{x}")))?);
            method = cols[3].to_string();
        }
        Self::from_sites(sites, w, e, &method)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HittingProbability {
    pub value: f64,
    pub raw: f64,
    pub error: f64,
    /// Raw value exceeded 1 by more than the propagated error.
    pub excess: bool,
}

/// `P_x(H(K) < ∞) = Σ_y g(x, y) e_K(y)`, clamped to `[0, 1]`.
pub fn hitting_prob(x: &LatticePoint, em: &EquilibriumMeasure, table: &GreenTable) -> Result<HittingProbability> {
    if x.dim() != em.dim() || table.dim() != em.dim() {
        return Err(Error::Incompatible(format!("dimensions {} / {} / {}", x.dim(), em.dim(), table.dim())));
    }
    if em.in_support_set(x) {
        return Ok(HittingProbability { value: 1.0, raw: 1.0, error: 0.0, excess: false });
    }
    let mut raw = 0.0;
    let mut err = 0.0;
    for (y, w, e) in em.entries() {
        let gv = table.lookup(&(y - *x));
        raw += gv.estimate * w;
        err += gv.stderr * w + gv.estimate * e;
    }
    let excess = raw > 1.0 + err;
    if excess {
        eprintln!("warning: hitting formula gave {raw} at {x} (error {err:e}); clamped to 1");
    }
    Ok(HittingProbability { value: raw.clamp(0.0, 1.0), raw, error: err, excess })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(d: usize) -> std::sync::Arc<GreenTable> {
        GreenTable::shared(d).unwrap()
    }

    #[test]
    fn singleton_and_pair_matrices() {
        let t = table(3);
        let k = SiteSet::from_points(3, [LatticePoint::origin(3)]);
        let g = green_matrix(&k, &t).unwrap();
        assert_eq!(g.nrows(), 1);
        assert_eq!(g[(0, 0)], t.g0());
        let x = LatticePoint::new(&[2, -1, 0]);
        let g = green_matrix_for(&[LatticePoint::origin(3), x], &t).unwrap();
        assert_eq!(g[(0, 1)], t.get(&x));
        assert_eq!(g[(1, 1)], t.g0());
        assert!(matches!(green_matrix(&SiteSet::new(3), &t), Err(Error::EmptySet)));
    }

    #[test]
    fn two_point_minimiser_is_uniform() {
        let t = table(5);
        let x = LatticePoint::new(&[3, 1, 0, 0, 0]);
        let sites = [LatticePoint::origin(5), x];
        let v = capacity_variational(&sites, &green_matrix_for(&sites, &t).unwrap()).unwrap();
        let expect = 2.0 / (t.g0() + t.get(&x));
        assert!((v.capacity - expect).abs() < 1e-12);
        assert!((v.nu[0] - 0.5).abs() < 1e-12 && (v.nu[1] - 0.5).abs() < 1e-12);
        assert!((1.0 / capacity_of(&SiteSet::from_points(5, [x]), &t).unwrap().capacity - t.g0()).abs() < 1e-12);
    }

    #[test]
    fn empty_set_has_zero_capacity() {
        assert_eq!(capacity_of(&SiteSet::new(4), &table(4)).unwrap().capacity, 0.0);
    }

    #[test]
    fn rejects_indefinite_and_asymmetric() {
        let p = [LatticePoint::origin(3), LatticePoint::axis(3, 0, 1)];
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(capacity_variational(&p, &bad), Err(Error::NotPositiveDefinite(_))));
        let asym = DMatrix::from_row_slice(2, 2, &[2.0, 0.1, 0.2, 2.0]);
        assert!(matches!(capacity_variational(&p, &asym), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn ball_interior_carries_no_mass() {
        let t = table(3);
        let b = Ball::centered(3, 2);
        let v = capacity_of(&b.to_site_set(), &t).unwrap();
        for (p, nu) in v.sites.iter().zip(&v.nu) {
            if p.sup_norm() < 2 {
                assert!(nu.abs() < 1e-6, "{p} {nu}");
            }
        }
        assert!(v.nu.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn green_matrices_positive_definite() {
        let t = table(5);
        let mut rng = RngStream::new(7, 0).rng();
        for _ in 0..20 {
            let n = rng.random_range(1..=12);
            let mut k = SiteSet::new(5);
            while k.len() < n {
                let c: Vec<i64> = (0..5).map(|_| rng.random_range(-3..=3)).collect();
                k.insert(LatticePoint::new(&c));
            }
            let g = green_matrix(&k, &t).unwrap();
            let eig = g.symmetric_eigenvalues();
            assert!(eig.iter().all(|&l| l > 0.0));
        }
    }

    #[test]
    fn monotone_under_inclusion() {
        let t = table(3);
        let mut rng = RngStream::new(8, 0).rng();
        for _ in 0..50 {
            let mut big = SiteSet::new(3);
            let n = rng.random_range(2..=30);
            while big.len() < n {
                let c: Vec<i64> = (0..3).map(|_| rng.random_range(-4..=4)).collect();
                big.insert(LatticePoint::new(&c));
            }
            let small = SiteSet::from_points(3, big.sorted_points().into_iter().filter(|_| rng.random::<bool>()));
            let cs = capacity_of(&small, &t).unwrap().capacity;
            let cb = capacity_of(&big, &t).unwrap().capacity;
            assert!(cs <= cb * (1.0 + 1e-10), "{cs} > {cb}");
        }
    }

    #[test]
    fn escape_estimate_of_point_capacity_d5() {
        let t = table(5);
        let k = SiteSet::from_points(5, [LatticePoint::origin(5)]);
        let est = capacity_mc(&k, 20_000, 16, RngStream::new(3, 0)).unwrap();
        let exact = 1.0 / t.g0();
        assert!((est.capacity - exact).abs() < 3.0 * est.stderr, "{est:?} vs {exact}");
        assert!(est.bias_bound < est.exit_return_bound);
    }

    #[test]
    fn escape_requires_room() {
        let k = Ball::centered(5, 5).to_site_set();
        assert!(matches!(capacity_mc(&k, 100, 16, RngStream::new(1, 0)), Err(Error::Geometry(_))));
        assert!(capacity_mc(&k, 10, 40, RngStream::new(1, 0)).is_err());
    }

    #[test]
    fn orbit_sizes_tile_the_sphere() {
        for (d, r) in [(3, 2), (5, 3), (4, 0)] {
            let total: f64 = sphere_orbits(d, r).iter().map(|(_, m)| m).sum();
            let b = Ball::centered(d, r);
            let expect = if r == 0 { 1 } else { b.boundary_count() };
            assert_eq!(total as u64, expect);
        }
    }

    #[test]
    fn ball_orbit_measure_matches_variational() {
        let t = table(5);
        let b = Ball::centered(5, 1);
        let v = capacity_of(&b.to_site_set(), &t).unwrap();
        let em = ball_equilibrium(&b, 4000, 16, RngStream::new(4, 0)).unwrap();
        assert!((em.capacity() - v.capacity).abs() < 3.0 * em.capacity_stderr(), "{} vs {}", em.capacity(), v.capacity);
        let sub = capacity_mc_subsampled(&b, 20_000, 16, RngStream::new(5, 0)).unwrap();
        assert!((sub.capacity - v.capacity).abs() < 3.0 * sub.stderr, "{sub:?} vs {}", v.capacity);
    }

    #[test]
    fn orbit_reduced_variational_matches_full_solve() {
        for (d, r) in [(3, 1), (3, 2), (5, 1)] {
            let t = table(d);
            let b = Ball::centered(d, r);
            let full = capacity_of(&b.to_site_set(), &t).unwrap();
            let em = ball_capacity_variational(&b, &t).unwrap();
            assert!((em.capacity() - full.capacity).abs() < 1e-6 * full.capacity, "d={d} r={r}: {} vs {}", em.capacity(), full.capacity);
            let w = full.equilibrium_weights();
            for (x, wx) in full.sites.iter().zip(&w) {
                assert!((em.weight(x) - wx).abs() < 1e-6, "{x}: {} vs {wx}", em.weight(x));
            }
            assert_eq!(em.method(), "variational");
        }
    }

    #[test]
    fn hitting_formula_against_simulation() {
        let d = 5;
        let t = table(d);
        let k = SiteSet::from_points(d, [LatticePoint::origin(d)]);
        let em = capacity_of(&k, &t).unwrap().to_measure().unwrap();
        let x = LatticePoint::axis(d, 0, 3);
        let h = hitting_prob(&x, &em, &t).unwrap();
        assert!((h.value - t.get(&x) / t.g0()).abs() < 1e-12);
        assert_eq!(hitting_prob(&LatticePoint::origin(d), &em, &t).unwrap().value, 1.0);
        // simulate hits of {0} before leaving B(0,64), plus the far-field
        // chance of hitting later
        let n = 40_000;
        let outer = Ball::centered(d, 64);
        let mut rng = RngStream::new(6, 0).rng();
        let mut acc = Vec::with_capacity(n);
        for _ in 0..n {
            let mut p = x;
            let v = loop {
                if p == LatticePoint::origin(d) {
                    break 1.0;
                }
                if !outer.contains(&p) {
                    break green_asymptotic(d, p.euclid_sq()) / t.g0();
                }
                p.step(random_step(&mut rng, d));
            };
            acc.push(v);
        }
        let mean = acc.iter().sum::<f64>() / n as f64;
        let sd = (acc.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1) as f64 / n as f64).sqrt();
        assert!((mean - h.value).abs() < 3.0 * sd, "{mean} vs {} (sd {sd})", h.value);
    }

    #[test]
    fn hitting_decays_with_distance() {
        let t = table(5);
        let em = capacity_of(&Ball::centered(5, 2).to_site_set(), &t).unwrap().to_measure().unwrap();
        let near = hitting_prob(&LatticePoint::axis(5, 0, 8), &em, &t).unwrap().value;
        let far = hitting_prob(&LatticePoint::axis(5, 0, 32), &em, &t).unwrap().value;
        assert!(far < near);
        assert!(near <= 1.0 && far >= 0.0);
    }

    #[test]
    fn measure_text_roundtrip() {
        let t = table(3);
        let k = SiteSet::from_points(3, [LatticePoint::origin(3), LatticePoint::axis(3, 1, 2)]);
        let em = capacity_of(&k, &t).unwrap().to_measure().unwrap();
        let back = EquilibriumMeasure::from_text(&em.to_text(Some(5))).unwrap();
        assert_eq!(back.entries(), em.entries());
    }
}
