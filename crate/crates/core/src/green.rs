//! The Green function `g(v) = Σ_t P_0(X(t) = v)` of simple random walk.
//!
//! The primary route is a truncated sum of exact transition probabilities.
//! `P_0(X(t) = v)` factorises over coordinates once the `t` steps have been
//! allocated to axes: the number of steps given to the last of `k` axes is
//! Binomial(t, 1/k) and each axis then performs a one-dimensional walk. This
//! gives the recursion
//!
//! ```text
//! P_k(t; a_1..a_k) = Σ_n Bin(t, 1/k)(n) · q(n, a_k) · P_{k-1}(t - n; a_1..a_{k-1})
//! ```
//!
//! with `q(n, a)` the one-dimensional law, evaluated for all `t <= T` at once.
//! The tail `Σ_{t>T}` is replaced by its local-CLT integral and the reported
//! error is the local-CLT remainder summed over the tail.
//!
//! Far outside the exactly tabulated region, [`GreenTable`] falls back to the
//! continuum asymptote `C_d |v|_2^{2-d}` with an error calibrated on the
//! outermost exact shell.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng;
use statrs::function::gamma::{gamma, gamma_lr};

use crate::error::{Error, Result};
use crate::lattice::{check_dim, Ball, LatticePoint, MAX_DIM};
use crate::rng::RngStream;
use crate::walk::random_step;

/// Largest truncation the adaptive evaluator will try.
pub const DEFAULT_MAX_TRUNCATION: usize = 1 << 17;

/// How a Green value was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GreenMethod {
    TruncatedSum,
    MonteCarlo,
    Asymptotic,
}

impl GreenMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            GreenMethod::TruncatedSum => "truncated-sum",
            GreenMethod::MonteCarlo => "monte-carlo",
            GreenMethod::Asymptotic => "asymptotic",
        }
    }

    pub fn from_tag(s: &str) -> Result<Self> {
        match s {
            "truncated-sum" => Ok(GreenMethod::TruncatedSum),
            "monte-carlo" => Ok(GreenMethod::MonteCarlo),
            "asymptotic" => Ok(GreenMethod::Asymptotic),
            _ => Err(Error::Parse(format!("unknown green method {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GreenValue {
    pub estimate: f64,
    /// Error bound for the truncated sum, standard error for Monte Carlo.
    pub stderr: f64,
    pub method: GreenMethod,
    pub truncation: usize,
}

/// `C_d = d Γ(d/2 - 1) / (2 π^{d/2})`, so that `g(v) ~ C_d |v|_2^{2-d}`.
pub fn asymptotic_constant(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    d as f64 * gamma(h - 1.0) / (2.0 * std::f64::consts::PI.powf(h))
}

/// Continuum approximation of `g(v)`; `v` must be nonzero.
#[inline]
pub fn green_asymptotic(d: usize, euclid_sq: f64) -> f64 {
    asymptotic_constant(d) * euclid_sq.powf(1.0 - d as f64 / 2.0)
}

struct LogFactorials(Vec<f64>);

impl LogFactorials {
    fn new(n: usize) -> Self {
        let mut v = Vec::with_capacity(n + 1);
        v.push(0.0);
        let mut acc = 0.0;
        for k in 1..=n {
            acc += (k as f64).ln();
            v.push(acc);
        }
        LogFactorials(v)
    }

    #[inline]
    fn get(&self, n: usize) -> f64 {
        self.0[n]
    }
}

/// `q(n, a)` for `n = 0..=t_max`: probability that a 1-d walk is at `a`
/// after `n` steps.
fn one_dim_law(a: usize, t_max: usize, lf: &LogFactorials) -> Vec<f64> {
    let ln2 = std::f64::consts::LN_2;
    (0..=t_max)
        .map(|n| {
            if n < a || (n - a) % 2 == 1 {
                0.0
            } else {
                (lf.get(n) - lf.get((n + a) / 2) - lf.get((n - a) / 2) - n as f64 * ln2).exp()
            }
        })
        .collect()
}

/// Half-width, in standard deviations, of the binomial window kept in the
/// recursion. Mass beyond it is below `1e-30`.
const BINOMIAL_WINDOW: f64 = 12.0;

/// One level of the axis-allocation recursion: combines `prev` (the law of
/// the first `k-1` coordinates as a function of their step count) with the
/// `k`-th axis at displacement `a`.
fn add_axis(prev: &[f64], k: usize, a: usize, lf: &LogFactorials) -> Vec<f64> {
    let t_max = prev.len() - 1;
    let q = one_dim_law(a, t_max, lf);
    let p = 1.0 / k as f64;
    let ratio = p / (1.0 - p);
    let (lnp, lnq) = (p.ln(), (1.0 - p).ln());
    let mut out = vec![0.0; t_max + 1];
    for (t, slot) in out.iter_mut().enumerate() {
        if t < a {
            continue;
        }
        let mean = t as f64 * p;
        let sd = (t as f64 * p * (1.0 - p)).sqrt();
        let lo = ((mean - BINOMIAL_WINDOW * sd).floor().max(0.0) as usize).max(a);
        let hi = ((mean + BINOMIAL_WINDOW * sd).ceil() as usize).min(t);
        if lo > hi {
            continue;
        }
        let mut pmf = (lf.get(t) - lf.get(lo) - lf.get(t - lo) + lo as f64 * lnp + (t - lo) as f64 * lnq).exp();
        let mut acc = 0.0;
        for n in lo..=hi {
            acc += pmf * q[n] * prev[t - n];
            pmf *= (t - n) as f64 / (n + 1) as f64 * ratio;
        }
        *slot = acc;
    }
    out
}

/// `∫_T^∞ (d/2πt)^{d/2} exp(-d r²/2t) dt`, the local-CLT tail of the sum.
fn lclt_tail(d: usize, r2: f64, t: usize) -> f64 {
    let h = d as f64 / 2.0;
    let a = h - 1.0;
    let pref = (d as f64 / (2.0 * std::f64::consts::PI)).powf(h);
    let t = t as f64;
    if r2 == 0.0 {
        return pref * t.powf(-a) / a;
    }
    let c = d as f64 * r2 / 2.0;
    let x = c / t;
    if x < 1e-8 {
        // small-argument limit of the incomplete gamma expression
        return pref * t.powf(-a) / a * (1.0 - a / (a + 1.0) * x);
    }
    pref * c.powf(-a) * gamma(a) * gamma_lr(a, x)
}

/// Bound on the error of replacing the tail by its local-CLT integral: the
/// local-CLT remainder is `O(t^{-(d+2)/2})`, summing to `O(T^{-d/2})`.
fn tail_error(d: usize, t: usize) -> f64 {
    lclt_tail(d, 0.0, t) * (2 * d) as f64 / t as f64
}

/// Transition-probability sums for one displacement (given as absolute
/// coordinates) truncated at `t_max`.
fn truncated_sum(abs: &[usize], t_max: usize, lf: &LogFactorials) -> GreenValue {
    let d = abs.len();
    let mut level = one_dim_law(abs[0], t_max, lf);
    for (k, &a) in abs.iter().enumerate().skip(1) {
        level = add_axis(&level, k + 1, a, lf);
    }
    let partial: f64 = level.iter().sum();
    let r2: f64 = abs.iter().map(|&a| (a * a) as f64).sum();
    let tail = lclt_tail(d, r2, t_max);
    GreenValue {
        estimate: partial + tail,
        stderr: tail_error(d, t_max),
        method: GreenMethod::TruncatedSum,
        truncation: t_max,
    }
}

fn abs_coords(v: &LatticePoint) -> Vec<usize> {
    let c = v.canonical();
    c.coords().iter().map(|&x| x as usize).collect()
}

/// `g(v)` to relative error `target_rel_err`, doubling the truncation from
/// 1024 up to `max_truncation`.
pub fn green_with(v: &LatticePoint, target_rel_err: f64, max_truncation: usize) -> Result<GreenValue> {
    let d = v.dim();
    check_dim(d)?;
    if !(target_rel_err > 0.0) {
        return Err(Error::InvalidArgument(format!("target_rel_err must be positive, got {target_rel_err}")));
    }
    let abs = abs_coords(v);
    let r2: usize = abs.iter().map(|a| a * a).sum();
    let mut t = 1024usize.max((4 * r2).next_power_of_two()).min(max_truncation);
    let lf = LogFactorials::new(max_truncation);
    loop {
        let gv = truncated_sum(&abs, t, &lf);
        let rel = gv.stderr / gv.estimate;
        if rel <= target_rel_err {
            return Ok(gv);
        }
        if t >= max_truncation {
            return Err(Error::ToleranceUnachievable { requested: target_rel_err, achievable: rel, truncation: t });
        }
        t = (t * 2).min(max_truncation);
    }
}

/// `g(v)` to relative error `target_rel_err` with the default truncation cap.
pub fn green(v: &LatticePoint, target_rel_err: f64) -> Result<GreenValue> {
    green_with(v, target_rel_err, DEFAULT_MAX_TRUNCATION)
}

/// Monte Carlo estimate of `g(v)`: mean number of visits to `v` by walks
/// from the origin, stopped on exiting `B(0, cap_radius)`. When
/// `exit_correction` is set, the expected number of later visits is added
/// using the asymptotic form at the exit point.
pub fn green_monte_carlo(
    v: &LatticePoint,
    walkers: usize,
    cap_radius: i64,
    exit_correction: bool,
    stream: RngStream,
) -> Result<GreenValue> {
    let d = v.dim();
    check_dim(d)?;
    if cap_radius <= v.sup_norm() {
        return Err(Error::InvalidArgument("cap radius must exceed |v|".into()));
    }
    let ball = Ball::centered(d, cap_radius);
    let samples: Vec<f64> = (0..walkers)
        .map(|i| {
            let mut rng = stream.child(i as u64).rng();
            let mut p = LatticePoint::origin(d);
            let mut visits = 0.0;
            loop {
                if p == *v {
                    visits += 1.0;
                }
                if !ball.contains(&p) {
                    break;
                }
                p.step(random_step(&mut rng, d));
            }
            if exit_correction {
                visits += green_asymptotic(d, (p - *v).euclid_sq());
            }
            visits
        })
        .collect();
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(GreenValue { estimate: mean, stderr: (var / n).sqrt(), method: GreenMethod::MonteCarlo, truncation: cap_radius as usize })
}

/// Default exactly-tabulated sup-norm radius per dimension, keeping the
/// number of distinct orbits near three thousand.
pub fn default_exact_radius(d: usize) -> usize {
    match d {
        3 => 16,
        4 => 14,
        5 => 10,
        6 => 8,
        7 => 6,
        _ => 5,
    }
}

/// Default table truncation: the `d = 3` tail decays slowest.
pub fn default_truncation(d: usize) -> usize {
    if d == 3 {
        8192
    } else {
        4096
    }
}

/// Cached Green values: exact truncated sums on `|v| <= exact_radius`
/// (stored densely by absolute coordinates), asymptotic beyond.
#[derive(Clone, Debug)]
pub struct GreenTable {
    d: usize,
    exact_radius: usize,
    truncation: usize,
    tolerance: f64,
    values: Vec<f64>,
    errors: Vec<f64>,
    strides: [usize; MAX_DIM],
    c_d: f64,
    exponent: f64,
    shell_rel_err: f64,
}

impl GreenTable {
    /// Builds the table with every exact entry within relative error
    /// `tolerance` (the truncation is chosen from the smallest entry).
    pub fn build(d: usize, exact_radius: usize, tolerance: f64) -> Result<Self> {
        check_dim(d)?;
        let g_min = Self::min_exact_value(d, exact_radius);
        let mut t = 1024usize;
        while tail_error(d, t) > tolerance * g_min {
            t *= 2;
            if t > DEFAULT_MAX_TRUNCATION {
                return Err(Error::ToleranceUnachievable {
                    requested: tolerance,
                    achievable: tail_error(d, DEFAULT_MAX_TRUNCATION) / g_min,
                    truncation: DEFAULT_MAX_TRUNCATION,
                });
            }
        }
        Self::build_with_truncation(d, exact_radius, t)
    }

    fn min_exact_value(d: usize, exact_radius: usize) -> f64 {
        green_asymptotic(d, (d * exact_radius * exact_radius).max(1) as f64)
    }

    /// Builds the table at a fixed truncation; the recorded tolerance is the
    /// worst relative error bound over the exact entries.
    pub fn build_with_truncation(d: usize, exact_radius: usize, t: usize) -> Result<Self> {
        check_dim(d)?;
        if t == 0 {
            return Err(Error::InvalidArgument("truncation must be positive".into()));
        }
        let l = exact_radius;
        let tolerance = tail_error(d, t) / Self::min_exact_value(d, l);
        let lf = LogFactorials::new(t);
        let mut canon: HashMap<Vec<usize>, (f64, f64)> = HashMap::new();
        // depth-first over descending tuples so that axis prefixes are shared
        let mut stack: Vec<(usize, Vec<f64>)> = Vec::new();
        fn dfs(
            d: usize,
            max_a: usize,
            t: usize,
            lf: &LogFactorials,
            stack: &mut Vec<(usize, Vec<f64>)>,
            out: &mut HashMap<Vec<usize>, (f64, f64)>,
        ) {
            let depth = stack.len();
            for a in 0..=max_a {
                let level = if depth == 0 { one_dim_law(a, t, lf) } else { add_axis(&stack[depth - 1].1, depth + 1, a, lf) };
                if depth + 1 == d {
                    let mut key: Vec<usize> = stack.iter().map(|(a, _)| *a).collect();
                    key.push(a);
                    let r2: f64 = key.iter().map(|&a| (a * a) as f64).sum();
                    let partial: f64 = level.iter().sum();
                    out.insert(key, (partial + lclt_tail(d, r2, t), tail_error(d, t)));
                } else {
                    stack.push((a, level));
                    dfs(d, a, t, lf, stack, out);
                    stack.pop();
                }
            }
        }
        dfs(d, l, t, &lf, &mut stack, &mut canon);
        Ok(Self::from_canonical(d, l, t, tolerance, &canon))
    }

    fn from_canonical(d: usize, l: usize, t: usize, tolerance: f64, canon: &HashMap<Vec<usize>, (f64, f64)>) -> Self {
        let side = l + 1;
        let mut strides = [0usize; MAX_DIM];
        let mut s = 1;
        for st in strides.iter_mut().take(d) {
            *st = s;
            s *= side;
        }
        let mut values = vec![0.0; s];
        let mut errors = vec![0.0; s];
        let mut idx = vec![0usize; d];
        for flat in 0..s {
            let mut rem = flat;
            for i in 0..d {
                idx[i] = rem % side;
                rem /= side;
            }
            let mut key = idx.clone();
            key.sort_unstable_by(|a, b| b.cmp(a));
            let (v, e) = canon[&key];
            values[flat] = v;
            errors[flat] = e;
        }
        let c_d = asymptotic_constant(d);
        let exponent = 1.0 - d as f64 / 2.0;
        let mut table = GreenTable {
            d,
            exact_radius: l,
            truncation: t,
            tolerance,
            values,
            errors,
            strides,
            c_d,
            exponent,
            shell_rel_err: 0.0,
        };
        if l > 0 {
            let mut worst: f64 = 0.0;
            for (key, (v, _)) in canon {
                if key[0] == l {
                    let r2: f64 = key.iter().map(|&a| (a * a) as f64).sum();
                    worst = worst.max((green_asymptotic(d, r2) - v).abs() / v);
                }
            }
            table.shell_rel_err = worst;
        }
        table
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn exact_radius(&self) -> usize {
        self.exact_radius
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// Worst relative deviation of the asymptote on the outermost exact shell.
    pub fn shell_rel_err(&self) -> f64 {
        self.shell_rel_err
    }

    #[inline]
    fn flat_index(&self, v: &LatticePoint) -> Option<usize> {
        let raw = v.raw();
        let mut flat = 0;
        for i in 0..self.d {
            let a = raw[i].unsigned_abs() as usize;
            if a > self.exact_radius {
                return None;
            }
            flat += a * self.strides[i];
        }
        Some(flat)
    }

    /// `g(v)`.
    #[inline]
    pub fn get(&self, v: &LatticePoint) -> f64 {
        match self.flat_index(v) {
            Some(i) => self.values[i],
            None => self.c_d * v.euclid_sq().powf(self.exponent),
        }
    }

    /// `g(x, y) = g(y - x)`.
    #[inline]
    pub fn between(&self, x: &LatticePoint, y: &LatticePoint) -> f64 {
        self.get(&(*y - *x))
    }

    /// `g(0)`.
    pub fn g0(&self) -> f64 {
        self.values[0]
    }

    /// Full record for `v` including error and method.
    pub fn lookup(&self, v: &LatticePoint) -> GreenValue {
        match self.flat_index(v) {
            Some(i) => GreenValue {
                estimate: self.values[i],
                stderr: self.errors[i],
                method: GreenMethod::TruncatedSum,
                truncation: self.truncation,
            },
            None => {
                let est = self.get(v);
                let ratio = self.exact_radius as f64 / v.sup_norm() as f64;
                // the deviation decays as |v|^-2 only to leading order; the
                // factor 2 covers the next term just outside the shell
                GreenValue {
                    estimate: est,
                    stderr: 2.0 * est * self.shell_rel_err * ratio * ratio,
                    method: GreenMethod::Asymptotic,
                    truncation: self.truncation,
                }
            }
        }
    }

    fn cache_name(d: usize, exact_radius: usize, truncation: usize) -> String {
        format!("green_d{d}_L{exact_radius}_T{truncation}.tsv")
    }

    /// Columnar text form: one row per symmetry orbit,
    /// `displacement<TAB>value<TAB>stderr<TAB>method<TAB>seed`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# green-table d={} exact_radius={} truncation={} tolerance={:e}",
            self.d, self.exact_radius, self.truncation, self.tolerance
        );
        let _ = writeln!(s, "displacement\tvalue\tstderr\tmethod\tseed");
        let mut keys = Vec::new();
        let mut cur = vec![0usize; self.d];
        fn rec(d: usize, max_a: usize, cur: &mut Vec<usize>, depth: usize, out: &mut Vec<Vec<usize>>) {
            for a in 0..=max_a {
                cur[depth] = a;
                if depth + 1 == d {
                    out.push(cur.clone());
                } else {
                    rec(d, a, cur, depth + 1, out);
                }
            }
        }
        rec(self.d, self.exact_radius, &mut cur, 0, &mut keys);
        for key in keys {
            let p = LatticePoint::new(&key.iter().map(|&a| a as i64).collect::<Vec<_>>());
            let i = self.flat_index(&p).expect("in range");
            let _ = writeln!(s, "{}\t{:e}\t{:e}\t{}\t-", p, self.values[i], self.errors[i], GreenMethod::TruncatedSum.tag());
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty green table".into()))?;
        let mut d = None;
        let mut l = None;
        let mut t = None;
        let mut tol = None;
        for tok in header.trim_start_matches('#').split_whitespace() {
            if let Some((k, v)) = tok.split_once('=') {
                match k {
                    "d" => d = v.parse().ok(),
                    "exact_radius" => l = v.parse().ok(),
                    "truncation" => t = v.parse().ok(),
                    "tolerance" => tol = v.parse().ok(),
                    _ => {}
                }
            }
        }
        let (d, l, t, tol): (usize, usize, usize, f64) = match (d, l, t, tol) {
            (Some(d), Some(l), Some(t), Some(tol)) => (d, l, t, tol),
            _ => return Err(Error::Parse(format!("bad green table header {header:?}"))),
        };
        check_dim(d)?;
        let mut canon = HashMap::new();
        for line in lines.skip(1) {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 5 {
                return Err(Error::Parse(format!("bad green table row {line:?}")));
            }
            let p: LatticePoint = cols[0].parse()?;
            let v: f64 = cols[1].parse().map_err(|e| Error::Parse(format!("{e}")))?;
            let e: f64 = cols[2].parse().map_err(|e| Error::Parse(format!("{e}")))?;
            GreenMethod::from_tag(cols[3])?;
            canon.insert(p.coords().iter().map(|&a| a as usize).collect::<Vec<_>>(), (v, e));
        }
        let expected = binomial(l + d, d);
        if canon.len() != expected {
            return Err(Error::Parse(format!("green table has {} rows, expected {expected}", canon.len())));
        }
        Ok(Self::from_canonical(d, l, t, tol, &canon))
    }

    /// Loads the table from `dir` if present, otherwise builds and stores it.
    pub fn load_or_build(dir: Option<&Path>, d: usize, exact_radius: usize, truncation: usize) -> Result<Self> {
        if let Some(dir) = dir {
            let path = dir.join(Self::cache_name(d, exact_radius, truncation));
            if let Ok(text) = std::fs::read_to_string(&path) {
                if let Ok(t) = Self::from_text(&text) {
                    if t.d == d && t.exact_radius == exact_radius && t.truncation == truncation {
                        return Ok(t);
                    }
                }
            }
            let table = Self::build_with_truncation(d, exact_radius, truncation)?;
            std::fs::create_dir_all(dir)?;
            let tmp = path.with_extension(format!("tmp{}", std::process::id()));
            std::fs::write(&tmp, table.to_text())?;
            std::fs::rename(&tmp, &path)?;
            Ok(table)
        } else {
            Self::build_with_truncation(d, exact_radius, truncation)
        }
    }

    /// Process-wide shared table for `d` at the default radius and
    /// truncation, cached on disk under `$INTERLACE_CACHE_DIR` (default: the
    /// system temp directory).
    pub fn shared(d: usize) -> Result<Arc<GreenTable>> {
        static TABLES: OnceLock<Mutex<HashMap<usize, Arc<GreenTable>>>> = OnceLock::new();
        check_dim(d)?;
        let map = TABLES.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = map.lock().expect("green table cache poisoned");
        if let Some(t) = guard.get(&d) {
            return Ok(t.clone());
        }
        let dir = cache_dir();
        let t = Arc::new(Self::load_or_build(Some(&dir), d, default_exact_radius(d), default_truncation(d))?);
        guard.insert(d, t.clone());
        Ok(t)
    }
}

/// Cache directory for tables: `$INTERLACE_CACHE_DIR` or `<tmp>/interlace-cache`.
pub fn cache_dir() -> PathBuf {
    std::env::var_os("INTERLACE_CACHE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("interlace-cache"))
}

fn binomial(n: usize, k: usize) -> usize {
    let mut r = 1usize;
    for i in 0..k {
        r = r * (n - i) / (i + 1);
    }
    r
}

/// Draws a uniformly random point of the orbit of `canonical` under
/// coordinate permutations and sign flips.
pub fn random_orbit_point<R: Rng + ?Sized>(canonical: &LatticePoint, rng: &mut R) -> LatticePoint {
    let d = canonical.dim();
    let mut c: Vec<i64> = canonical.coords().to_vec();
    for i in (1..d).rev() {
        let j = rng.random_range(0..=i);
        c.swap(i, j);
    }
    for x in c.iter_mut() {
        if rng.random::<bool>() {
            *x = -*x;
        }
    }
    LatticePoint::new(&c)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Return probabilities of SRW (Watson/Montroll values): g(0) = 1/(1-p_d).
    const RETURN_PROB_3: f64 = 0.340_537_329_550_999;

    #[test]
    fn g0_d3_matches_watson_integral() {
        let g = green(&LatticePoint::origin(3), 1e-6).unwrap();
        assert!((g.estimate - 1.0 / (1.0 - RETURN_PROB_3)).abs() < 1e-5, "{:?}", g);
    }

    #[test]
    fn truncation_error_bound_is_honest() {
        let lf = LogFactorials::new(1 << 15);
        for d in [3, 5] {
            for abs in [vec![0; d], { let mut v = vec![0; d]; v[0] = 6; v[1] = 2; v }] {
                let coarse = truncated_sum(&abs, 2048, &lf);
                let fine = truncated_sum(&abs, 1 << 15, &lf);
                assert!((coarse.estimate - fine.estimate).abs() <= coarse.stderr + fine.stderr, "d={d} {abs:?}: {coarse:?} {fine:?}");
            }
        }
    }

    #[test]
    fn symmetric_under_negation() {
        let mut rng = RngStream::new(1, 1).rng();
        for _ in 0..20 {
            let c: Vec<i64> = (0..5).map(|_| rng.random_range(-6..=6)).collect();
            let v = LatticePoint::new(&c);
            let a = green(&v, 1e-5).unwrap();
            let b = green(&v.neg(), 1e-5).unwrap();
            assert_eq!(a.estimate, b.estimate);
        }
    }

    #[test]
    fn rejects_low_dimension_and_impossible_tolerance() {
        assert!(matches!(green(&LatticePoint::origin(2), 1e-3), Err(Error::UnsupportedDimension(2))));
        assert!(matches!(
            green_with(&LatticePoint::origin(3), 1e-14, 4096),
            Err(Error::ToleranceUnachievable { .. })
        ));
    }

    #[test]
    fn table_matches_direct_evaluation_and_roundtrips() {
        let table = GreenTable::build(5, 4, 1e-6).unwrap();
        for c in [[0, 0, 0, 0, 0], [1, 0, 0, 0, 0], [3, -2, 1, 0, 4], [-4, 4, 4, 4, -4]] {
            let v = LatticePoint::new(&c);
            let direct = green(&v, 1e-7).unwrap().estimate;
            assert!((table.get(&v) - direct).abs() < 2e-6 * direct, "{c:?}");
        }
        let back = GreenTable::from_text(&table.to_text()).unwrap();
        assert_eq!(back.values, table.values);
        assert!(table.get(&LatticePoint::axis(5, 0, 30)) > 0.0);
    }

    #[test]
    fn monte_carlo_visit_count_agrees_with_truncated_sum_d3() {
        let exact = green(&LatticePoint::origin(3), 1e-7).unwrap();
        let mc = green_monte_carlo(&LatticePoint::origin(3), 10_000, 200, true, RngStream::new(99, 0)).unwrap();
        assert!((mc.estimate - exact.estimate).abs() < 3.0 * mc.stderr, "mc {:?} exact {:?}", mc, exact);
    }
}
