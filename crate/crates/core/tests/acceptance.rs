//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Each criterion combines the library's check reports with independent
//! oracles computed here: a Green function evaluated from the Bessel-integral
//! representation of the walk's transition probabilities, brute-force
//! convolution sums, a brute-force intersection graph, and the exact
//! two-point occupation measure.
//!
//! Environment:
//! - `INTERLACE_ACCEPTANCE=1,5,9` runs a subset of criteria.
//! - `INTERLACE_ACCEPTANCE_SCALE=quick` shrinks the library checks (the
//!   tolerances do not change); the default is `full`.

use std::collections::{HashMap, HashSet, VecDeque};
use std::process::ExitCode;
use std::time::Instant;

use interlace_core::capacity::{capacity_mc, default_outer_radius};
use interlace_core::checks::convolution::{convolution_mc, convolution_sum};
use interlace_core::checks::process::mu_s_estimate;
use interlace_core::checks::{run_check, CheckReport, Scale};
use interlace_core::graph::build_graph;
use interlace_core::green::GreenTable;
use interlace_core::sampler::sample;
use interlace_core::{Ball, LatticePoint, RngStream, SiteSet};

const SEED: u64 = 20_240_601;

// ---------------------------------------------------------------------------
// Green function oracle.
//
// For the continuous-time walk with unit jump rate the coordinates are
// independent, with P(X_i(t) = n) = e^{-t/d} I_n(t/d). The discrete-time
// Green function equals the time integral of the continuous-time kernel.

/// `e^{-s} I_n(s) = (1/π) ∫_0^π e^{s(cos θ - 1)} cos(nθ) dθ`. The integrand
/// is even and smooth at 0 and negligible beyond `θ_max`, so the trapezoid
/// rule on `[0, θ_max]` converges geometrically.
fn scaled_bessel(n: i64, s: f64) -> f64 {
    if s == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let theta_max = if s <= 40.0 { std::f64::consts::PI } else { (1.0 - 80.0 / s).acos() };
    let m = 600;
    let h = theta_max / m as f64;
    let f = |th: f64| (s * (th.cos() - 1.0)).exp() * (n as f64 * th).cos();
    let mut acc = 0.5 * (f(0.0) + f(theta_max));
    for k in 1..m {
        acc += f(k as f64 * h);
    }
    acc * h / std::f64::consts::PI
}

/// `g(x)` by Simpson's rule in `log t` over `[1e-8, T]` plus the analytic
/// Gaussian tail beyond `T`.
fn green_oracle(x: &[i64]) -> f64 {
    let d = x.len() as f64;
    let (y0, y1) = ((1e-8f64).ln(), (1e7f64).ln());
    let steps = 8000;
    let h = (y1 - y0) / steps as f64;
    let mut distinct: Vec<i64> = x.iter().map(|c| c.abs()).collect();
    distinct.sort_unstable();
    let integrand = |y: f64| {
        let t = y.exp();
        let s = t / d;
        let p: f64 = distinct.iter().map(|&n| scaled_bessel(n, s)).product();
        p * t
    };
    let mut acc = integrand(y0) + integrand(y1);
    for k in 1..steps {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * integrand(y0 + k as f64 * h);
    }
    let body = acc * h / 3.0;
    let t_end = y1.exp();
    let r2: f64 = x.iter().map(|c| (c * c) as f64).sum();
    let lead = (d / (2.0 * std::f64::consts::PI)).powf(d / 2.0);
    let tail = lead * (t_end.powf(1.0 - d / 2.0) / (d / 2.0 - 1.0) - d * r2 / 2.0 * t_end.powf(-d / 2.0) / (d / 2.0));
    body + tail
}

fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

// ---------------------------------------------------------------------------

struct Criterion {
    lines: Vec<(bool, String)>,
}

impl Criterion {
    fn new() -> Self {
        Criterion { lines: Vec::new() }
    }

    fn check(&mut self, pass: bool, detail: impl Into<String>) {
        self.lines.push((pass, detail.into()));
    }

    fn report(&mut self, r: &CheckReport) {
        print!("{}", r.to_text());
        let detail = if r.pass() { format!("{} ok", r.id) } else { format!("{} failed: {}", r.id, r.failures().join("; ")) };
        self.check(r.pass(), detail);
    }

    fn pass(&self) -> bool {
        self.lines.iter().all(|l| l.0)
    }
}

fn run_report(c: &mut Criterion, id: &str, scale: Scale) {
    match run_check(id, scale, SEED) {
        Ok(r) => c.report(&r),
        Err(e) => c.check(false, format!("{id} errored: {e}")),
    }
}

fn within_sigma(c: &mut Criterion, label: &str, value: f64, target: f64, sigma: f64, k: f64) {
    let ok = (value - target).abs() <= k * sigma;
    c.check(ok, format!("{label}: {value:.6} vs {target:.6} ({:.2} sigma)", (value - target) / sigma));
}

fn criterion_1(c: &mut Criterion, scale: Scale) {
    run_report(c, "capacity_cross", scale);
    let g0 = green_oracle(&[0, 0, 0, 0, 0]);
    c.check((g0 - 1.156_306).abs() < 5e-6, format!("oracle g(0) d=5 = {g0:.7}, literature 1.156306"));
    for d in [3usize, 5] {
        let t = GreenTable::shared(d).expect("green table");
        let mut worst: f64 = 0.0;
        for pt in [vec![0i64], vec![1], vec![1, 1], vec![2, 1, 1], vec![3], vec![5, 2]] {
            let mut x = vec![0i64; d];
            x[..pt.len()].copy_from_slice(&pt);
            let o = green_oracle(&x);
            worst = worst.max((t.get(&LatticePoint::new(&x)) - o).abs() / o);
        }
        c.check(worst < 1e-4, format!("green table vs Bessel oracle d={d}: max rel err {worst:.2e}"));
        let g0 = green_oracle(&vec![0; d]);
        let g1 = green_oracle(&LatticePoint::axis(d, 0, 1).coords().to_vec());
        let o = LatticePoint::origin(d);
        let one = SiteSet::from_points(d, [o]);
        let est = capacity_mc(&one, 200_000, default_outer_radius(d, 0), RngStream::new(SEED, d as u64)).expect("mc");
        within_sigma(c, &format!("MC cap({{0}}) d={d} vs 1/g(0)"), est.capacity, 1.0 / g0, est.stderr.hypot(est.bias_bound), 3.0);
        let two = SiteSet::from_points(d, [o, LatticePoint::axis(d, 0, 1)]);
        let est = capacity_mc(&two, 100_000, default_outer_radius(d, 1), RngStream::new(SEED, 10 + d as u64)).expect("mc");
        within_sigma(c, &format!("MC cap({{0,e1}}) d={d} vs 2/(g(0)+g(e1))"), est.capacity, 2.0 / (g0 + g1), est.stderr.hypot(est.bias_bound), 3.0);
    }
}

fn criterion_2(c: &mut Criterion, scale: Scale) {
    run_report(c, "scaling_exponents", scale);
    run_report(c, "gf_sum", scale);
    let radii = [4i64, 6, 8, 12, 16, 24, 32];
    let xs: Vec<f64> = radii.iter().map(|&r| r as f64).collect();
    let ys: Vec<f64> = radii.iter().map(|&r| green_oracle(&[r, 0, 0, 0, 0])).collect();
    let slope = loglog_slope(&xs, &ys);
    c.check((slope + 3.0).abs() <= 0.15, format!("oracle g(r e1) slope over r=4..32, d=5: {slope:.4} (target -3 +- 0.15)"));
    // beyond the exactly summed region the table is asymptotic and declares
    // its own error; the oracle must fall inside it
    let t = GreenTable::shared(5).expect("green table");
    let worst = radii
        .iter()
        .zip(&ys)
        .map(|(&r, o)| {
            let v = t.lookup(&LatticePoint::axis(5, 0, r));
            (v.estimate - o).abs() / v.stderr.max(1e-6 * o)
        })
        .fold(0.0f64, f64::max);
    c.check(worst <= 1.0, format!("green table vs oracle on the axis up to 32: max |error|/declared error {worst:.3}"));
}

fn criterion_5(c: &mut Criterion, scale: Scale) {
    run_report(c, "trace_capacity", scale);
}

/// `n = 1` sums by nested loops against the library routes.
fn criterion_8(c: &mut Criterion, scale: Scale) {
    run_report(c, "convolution", scale);
    let d = 5;
    let l = 3i64;
    let f = |v: &[i64]| {
        let q: i64 = v.iter().map(|c| c * c).sum();
        if q == 0 {
            1.0
        } else {
            (q as f64).powf((2.0 - d as f64) / 2.0).min(1.0)
        }
    };
    for z in [[2i64, 0, 0, 0, 0], [3, 1, 0, 0, 0], [5, 0, 2, 0, 0]] {
        let mut brute = 0.0;
        let side = 2 * l + 1;
        for k in 0..side.pow(d as u32) {
            let mut v = [0i64; 5];
            let mut r = k;
            for c in v.iter_mut() {
                *c = r % side - l;
                r /= side;
            }
            let w: Vec<i64> = z.iter().zip(&v).map(|(a, b)| a - b).collect();
            brute += f(&v) * f(&w);
        }
        let (o, ze) = (LatticePoint::origin(d), LatticePoint::new(&z));
        let (lib, _) = convolution_sum(1, &o, &ze, l, 100_000, RngStream::new(SEED, 77)).expect("sum");
        c.check((lib - brute).abs() <= 1e-9 * brute, format!("S_1(0,{z:?};{l}) library {lib:.9} vs nested loops {brute:.9}"));
        let (mc, se) = convolution_mc(1, &o, &ze, l, 200_000, RngStream::new(SEED, 78)).expect("mc");
        within_sigma(c, &format!("S_1(0,{z:?};{l}) Monte Carlo"), mc, brute, se, 3.0);
    }
}

/// Brute-force `E μ(S(0, 2e1)) = u (2/g(0) - 2/(g(0)+g(2e1)))`: the
/// occupation measure of trajectories visiting both points.
fn criterion_9(c: &mut Criterion, scale: Scale) {
    run_report(c, "pair_decay", scale);
    run_report(c, "mu_S_bound", scale);
    let (d, u, sep) = (5usize, 1.0, 2i64);
    let g0 = green_oracle(&[0, 0, 0, 0, 0]);
    let g = green_oracle(&[sep, 0, 0, 0, 0]);
    let exact = u * (2.0 / g0 - 2.0 / (g0 + g));
    let reps = match scale {
        Scale::Full => 40_000,
        Scale::Quick => 8_000,
    };
    match mu_s_estimate(d, u, sep, reps, 2, SEED) {
        Ok((mean, se, corr)) => {
            let ok = mean <= exact + 3.0 * se && mean + corr >= exact - 3.0 * se;
            c.check(ok, format!("E mu(S(0,{sep}e1)) = {mean:.5} (se {se:.1e}, truncation {corr:.1e}) vs exact {exact:.5}"));
        }
        Err(e) => c.check(false, format!("mu_s_estimate errored: {e}")),
    }
}

/// Edge sets and distances of the library graph against pairwise trace
/// intersection and a BFS over them, on 50 small instances.
fn criterion_10(c: &mut Criterion, scale: Scale) {
    run_report(c, "inequalities", scale);
    let mut mismatches = Vec::new();
    let mut total_edges = 0usize;
    for inst in 0..50u64 {
        let d = if inst % 2 == 0 { 3 } else { 4 };
        let t = GreenTable::shared(d).expect("green table");
        let a = Ball::centered(d, 1 + (inst % 3) as i64 % 2).to_site_set();
        let window = Ball::centered(d, 4 + (inst % 2) as i64);
        let u = 0.5 + (inst % 5) as f64 * 0.5;
        let samples: Vec<_> = (0..2)
            .map(|k| sample(u, &a, window, 1e-2, &t, RngStream::new(SEED + inst, k)).expect("sample"))
            .collect();
        let g = build_graph(&samples).expect("graph");
        let mut traces = Vec::new();
        let mut labels = Vec::new();
        for s in &samples {
            for tr in &s.trajectories {
                let set: HashSet<Vec<i64>> = tr.points().filter(|p| window.contains(p)).map(|p| p.coords().to_vec()).collect();
                traces.push(set);
                labels.push((tr.sample_id, tr.index));
            }
        }
        let n = traces.len();
        let mut brute: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut edges = HashSet::new();
        for i in 0..n {
            for j in i + 1..n {
                if !traces[i].is_disjoint(&traces[j]) {
                    brute[i].push(j);
                    brute[j].push(i);
                    edges.insert((labels[i], labels[j]));
                }
            }
        }
        total_edges += edges.len();
        let lib: HashSet<_> = g.edges().iter().map(|&(a, b)| (g.label(a), g.label(b))).map(|(a, b)| if a < b { (a, b) } else { (b, a) }).collect();
        let brute_sorted: HashSet<_> = edges.iter().map(|&(a, b)| if a < b { (a, b) } else { (b, a) }).collect();
        if lib != brute_sorted || g.vertex_count() != n {
            mismatches.push(format!("instance {inst}: edges {} vs {}", lib.len(), brute_sorted.len()));
            continue;
        }
        let index: HashMap<_, _> = labels.iter().enumerate().map(|(i, l)| (*l, i)).collect();
        for src in 0..n.min(5) {
            let mut dist = vec![None; n];
            dist[src] = Some(0u32);
            let mut q = VecDeque::from([src]);
            while let Some(v) = q.pop_front() {
                for &w in &brute[v] {
                    if dist[w].is_none() {
                        dist[w] = Some(dist[v].expect("visited") + 1);
                        q.push_back(w);
                    }
                }
            }
            for (l, &i) in &index {
                if g.distance(labels[src], *l).expect("distance") != dist[i] {
                    mismatches.push(format!("instance {inst}: distance {:?} -> {:?}", labels[src], l));
                }
            }
        }
    }
    c.check(
        mismatches.is_empty(),
        format!("graph vs brute force on 50 instances ({total_edges} edges): {}", if mismatches.is_empty() { "identical".into() } else { mismatches.join(", ") }),
    );
}

const TITLES: [&str; 10] = [
    "capacity cross-oracle",
    "scaling exponents",
    "sampler law",
    "process algebra",
    "trace-set capacity regimes",
    "layer capacities",
    "hitting lemma",
    "convolution lemma",
    "pair-connection decay",
    "inequality suite and graph equivalence",
];

fn main() -> ExitCode {
    let scale = match std::env::var("INTERLACE_ACCEPTANCE_SCALE").as_deref() {
        Ok("quick") => Scale::Quick,
        _ => Scale::Full,
    };
    let selected: Vec<usize> = match std::env::var("INTERLACE_ACCEPTANCE") {
        Ok(s) if !s.trim().is_empty() => s.split(',').filter_map(|x| x.trim().parse().ok()).collect(),
        _ => (1..=10).collect(),
    };
    let mut summary = Vec::new();
    for k in selected {
        let start = Instant::now();
        let mut c = Criterion::new();
        match k {
            1 => criterion_1(&mut c, scale),
            2 => criterion_2(&mut c, scale),
            3 => run_report(&mut c, "sampler_law", scale),
            4 => run_report(&mut c, "process_algebra", scale),
            5 => criterion_5(&mut c, scale),
            6 => run_report(&mut c, "layer_capacity", scale),
            7 => run_report(&mut c, "hitting_lemma", scale),
            8 => criterion_8(&mut c, scale),
            9 => criterion_9(&mut c, scale),
            10 => criterion_10(&mut c, scale),
            _ => {
                eprintln!("unknown criterion {k}");
                continue;
            }
        }
        let verdict = if c.pass() { "PASS" } else { "FAIL" };
        let details: Vec<String> = c.lines.iter().map(|(ok, s)| format!("{}{s}", if *ok { "" } else { "[x] " })).collect();
        let line = format!("criterion {k} [{}]: {verdict} ({:.0}s) {}", TITLES[k - 1], start.elapsed().as_secs_f64(), details.join(" | "));
        println!("{line}");
        summary.push((c.pass(), line));
    }
    println!("\n==== acceptance summary ====");
    for (_, line) in &summary {
        println!("{line}");
    }
    if summary.iter().all(|s| s.0) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
