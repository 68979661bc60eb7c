//! Subcommand bodies. Each writes its artifacts into the output directory
//! and returns a one-row summary used by `sweep`.

use std::fmt::Write as _;
use std::path::Path;

use interlace_core::capacity::{capacity_mc, capacity_of, default_outer_radius, BoundaryIndexed, SiteRegion};
use interlace_core::checks::{self, trace::LayerCapParams, CheckReport};
use interlace_core::graph::build_graph;
use interlace_core::green::{cache_dir, default_exact_radius, default_truncation, GreenTable};
use interlace_core::lattice::{Ball, LatticePoint};
use interlace_core::rng::RngStream;
use interlace_core::sampler::{AnchorSet, InterlacementSample, Sampler};
use interlace_core::stats::Moments;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::CliError;

pub const SWEEPABLE: [&str; 6] = ["green", "capacity", "sample", "graph", "layers", "checks"];

/// Header and values of one summary row, plus the id of a failed check.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Summary {
    pub columns: Vec<(String, String)>,
    pub failed: Option<String>,
}

impl Summary {
    fn put(&mut self, key: &str, value: impl std::fmt::Display) {
        self.columns.push((key.into(), value.to_string()));
    }
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    std::fs::write(dir.join(name), text).map_err(|e| CliError::Other(anyhow::anyhow!("writing {name}: {e}")))
}

pub fn run(command: &str, cfg: &ExperimentConfig, dir: &Path) -> Result<Summary, CliError> {
    match command {
        "green" => green(cfg, dir),
        "capacity" => capacity(cfg, dir),
        "sample" => sample(cfg, dir),
        "graph" => graph(cfg, dir),
        "layers" => layers(cfg, dir),
        "checks" => run_checks(cfg, dir),
        other => Err(CliError::Other(anyhow::anyhow!("unknown command {other}"))),
    }
}

/// Canonical points `a_1 >= ... >= a_d >= 0` with `a_1 <= max`.
fn canonical_points(d: usize, max: i64) -> Vec<LatticePoint> {
    fn rec(d: usize, upper: i64, prefix: &mut Vec<i64>, out: &mut Vec<LatticePoint>) {
        if prefix.len() == d {
            out.push(LatticePoint::new(prefix));
            return;
        }
        for a in (0..=upper).rev() {
            prefix.push(a);
            rec(d, a, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(d, max, &mut Vec::new(), &mut out);
    out.reverse();
    out
}

fn green(cfg: &ExperimentConfig, dir: &Path) -> Result<Summary, CliError> {
    let d = cfg.general.d;
    let radius = if cfg.green.exact_radius == 0 { default_exact_radius(d) } else { cfg.green.exact_radius };
    let cache = cache_dir();
    let table = GreenTable::load_or_build(Some(&cache), d, radius, default_truncation(d))?;
    let mut csv = String::from("v,sup_norm,euclid_sq,g,error,method\n");
    for v in canonical_points(d, cfg.green.max_norm) {
        let g = table.lookup(&v);
        let coords: Vec<String> = v.coords().iter().map(|c| c.to_string()).collect();
        let _ = writeln!(csv, "{},{},{},{:e},{:e},{}", coords.join(" "), v.sup_norm(), v.norm_sq(), g.estimate, g.stderr, g.method.tag());
    }
    write(dir, "green.csv", &csv)?;
    let mut s = Summary::default();
    s.put("d", d);
    s.put("g0", format!("{:e}", table.g0()));
    s.put("exact_radius", radius);
    s.put("cache", cache.display());
    Ok(s)
}

fn capacity(cfg: &ExperimentConfig, dir: &Path) -> Result<Summary, CliError> {
    let d = cfg.general.d;
    let a = cfg.anchor_set()?;
    let table = GreenTable::shared(d)?;
    let var = capacity_of(&a, &table)?;
    let rho = BoundaryIndexed::new(&a)?.radius();
    let mc = capacity_mc(&a, cfg.capacity.walkers_per_site, default_outer_radius(d, rho), RngStream::new(cfg.general.seed, 0))?;
    let var_se = var.capacity * table.tolerance();
    let sigma = (mc.stderr.powi(2) + var_se.powi(2)).sqrt();
    let pass = (mc.capacity - var.capacity).abs() <= 3.0 * sigma + mc.bias_bound;
    let mut csv = String::from("method,capacity,stderr,bias_bound\n");
    let _ = writeln!(csv, "variational,{:e},{:e},0", var.capacity, var_se);
    let _ = writeln!(csv, "escape_mc,{:e},{:e},{:e}", mc.capacity, mc.stderr, mc.bias_bound);
    write(dir, "capacity.csv", &csv)?;
    let mut eq = String::from("site,variational,escape_mc,escape_mc_stderr\n");
    let mc_measure = mc.to_measure()?;
    for (x, w, _) in var.to_measure()?.entries() {
        let coords: Vec<String> = x.coords().iter().map(|c| c.to_string()).collect();
        let m = mc.per_site.iter().find(|e| e.site == x);
        let _ = writeln!(
            eq,
            "{},{:e},{:e},{:e}",
            coords.join(" "),
            w,
            mc_measure.weight(&x),
            m.map_or(f64::NAN, |e| e.stderr)
        );
    }
    write(dir, "equilibrium.csv", &eq)?;
    let mut s = Summary::default();
    s.put("sites", a.len());
    s.put("variational", format!("{:e}", var.capacity));
    s.put("escape_mc", format!("{:e}", mc.capacity));
    s.put("escape_mc_stderr", format!("{:e}", mc.stderr));
    s.put("agree", pass);
    if !pass {
        s.failed = Some("capacity_cross".into());
    }
    Ok(s)
}

fn build_sampler(cfg: &ExperimentConfig) -> Result<Sampler, CliError> {
    let d = cfg.general.d;
    let a = cfg.anchor_set()?;
    let window = Ball::centered(d, cfg.general.window);
    Ok(match cfg.sample.method.as_str() {
        "thinning" => Sampler::thinning(AnchorSet::Sites(a), window, cfg.general.eps)?,
        _ => Sampler::new(a, window, cfg.general.eps, &*GreenTable::shared(d)?, RngStream::new(cfg.general.seed, u64::MAX))?,
    })
}

fn draw_samples(cfg: &ExperimentConfig, sampler: &Sampler) -> Result<Vec<InterlacementSample>, CliError> {
    let (u, seed) = (cfg.general.u, cfg.general.seed);
    let v: interlace_core::Result<Vec<_>> = (0..cfg.general.replicas).into_par_iter().map(|i| sampler.sample(u, RngStream::new(seed, i as u64))).collect();
    Ok(v?)
}

fn sample(cfg: &ExperimentConfig, dir: &Path) -> Result<Summary, CliError> {
    let sampler = build_sampler(cfg)?;
    let samples = draw_samples(cfg, &sampler)?;
    let mut csv = String::from("replica,trajectories,trace_sites\n");
    for (i, s) in samples.iter().enumerate() {
        let sites: usize = s.trajectories.iter().map(|t| t.trace.len()).sum();
        let _ = writeln!(csv, "{i},{},{sites}", s.len());
    }
    write(dir, "samples.csv", &csv)?;
    if cfg.sample.write_samples {
        let text: String = samples.iter().map(|s| s.to_text()).collect();
        write(dir, "samples.txt", &text)?;
    }
    let m = Moments::of(samples.iter().map(|s| s.len() as f64));
    let mut s = Summary::default();
    s.put("method", sampler.method().tag());
    s.put("u", cfg.general.u);
    s.put("replicas", samples.len());
    s.put("mean_n", format!("{:e}", m.mean));
    s.put("stderr_n", format!("{:e}", m.stderr()));
    s.put("var_n", format!("{:e}", m.var));
    s.put("expected_n", format!("{:e}", cfg.general.u * sampler.cap()));
    Ok(s)
}

fn graph(cfg: &ExperimentConfig, dir: &Path) -> Result<Summary, CliError> {
    let sampler = build_sampler(cfg)?;
    let samples = draw_samples(cfg, &sampler)?;
    let radius = (cfg.graph.diameter_radius > 0).then_some(cfg.graph.diameter_radius);
    let mut edges = String::new();
    let mut hist = String::from("replica,separation_bin,rho,count\n");
    let mut table = String::from("replica,vertices,edges,probe_vertices,pairs,disconnected_pairs,max_distance\n");
    let (mut connected, mut pairs) = (0usize, 0usize);
    for (i, s) in samples.iter().enumerate() {
        let g = build_graph(std::slice::from_ref(s))?;
        let _ = writeln!(edges, "# replica {i}");
        edges.push_str(&g.edge_list_text());
        for line in g.distance_histogram(std::slice::from_ref(s))?.lines().skip(1) {
            let _ = writeln!(hist, "{i},{line}");
        }
        let st = g.window_diameter(std::slice::from_ref(s), radius);
        pairs += st.pairs;
        connected += st.pairs - st.disconnected_pairs;
        let md = st.max_distance.map_or_else(|| "none".to_string(), |m| m.to_string());
        let _ = writeln!(table, "{i},{},{},{},{},{},{md}", g.vertex_count(), g.edge_count(), st.vertices, st.pairs, st.disconnected_pairs);
    }
    write(dir, "edges.txt", &edges)?;
    write(dir, "rho_histogram.csv", &hist)?;
    write(dir, "graph.csv", &table)?;
    let mut s = Summary::default();
    s.put("replicas", samples.len());
    s.put("probe_pairs", pairs);
    s.put("connected_fraction", if pairs == 0 { f64::NAN } else { connected as f64 / pairs as f64 });
    Ok(s)
}

fn layers(cfg: &ExperimentConfig, dir: &Path) -> Result<Summary, CliError> {
    let l = &cfg.layers;
    let p = LayerCapParams {
        d: cfg.general.d,
        radii: l.radii.clone(),
        r: l.r,
        u: cfg.general.u,
        replicas: cfg.general.replicas,
        walkers: l.walkers,
        eps_trunc: cfg.general.eps,
        tol: 0.0,
    };
    let mut csv = String::from("R,s,replica,capacity,stderr,exact\n");
    let mut summary_csv = String::from("R,s,mean_capacity,stderr\n");
    let mut s = Summary::default();
    for (k, &big_r) in l.radii.iter().enumerate() {
        let caps: interlace_core::Result<Vec<_>> = (0..cfg.general.replicas)
            .into_par_iter()
            .map(|i| checks::trace::layer_capacities(&p, big_r, l.s_max, RngStream::new(cfg.general.seed, (k * 1_000_000 + i) as u64)))
            .collect();
        let caps = caps?;
        for (i, c) in caps.iter().enumerate() {
            for (j, v) in c.iter().enumerate() {
                let _ = writeln!(csv, "{big_r},{},{i},{:e},{:e},{}", j + 1, v.capacity, v.stderr, v.exact);
            }
        }
        for j in 0..l.s_max {
            let m = Moments::of(caps.iter().map(|c| c[j].capacity));
            let _ = writeln!(summary_csv, "{big_r},{},{:e},{:e}", j + 1, m.mean, m.stderr());
            s.put(&format!("cap_R{big_r}_s{}", j + 1), format!("{:e}", m.mean));
        }
    }
    write(dir, "layers.csv", &csv)?;
    write(dir, "layers_summary.csv", &summary_csv)?;
    Ok(s)
}

fn run_checks(cfg: &ExperimentConfig, dir: &Path) -> Result<Summary, CliError> {
    let ids: Vec<&str> = if cfg.checks.only.is_empty() {
        checks::CHECK_IDS.to_vec()
    } else {
        cfg.checks.only.iter().map(String::as_str).collect()
    };
    let scale = cfg.scale();
    let mut reports: Vec<CheckReport> = Vec::new();
    for id in ids {
        let rep = checks::run_check(id, scale, cfg.general.seed)?;
        eprint!("{}", rep.to_text());
        reports.push(rep);
    }
    write(dir, "checks.csv", &checks::reports_csv(&reports))?;
    write(dir, "checks.txt", &reports.iter().map(CheckReport::to_text).collect::<String>())?;
    let mut s = Summary::default();
    s.put("reports", reports.len());
    s.put("passed", reports.iter().filter(|r| r.pass()).count());
    s.failed = reports.iter().find(|r| !r.pass()).map(|r| r.id.clone());
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_points_are_sorted_orbit_representatives() {
        let pts = canonical_points(3, 2);
        // multisets of size 3 from {0,1,2}
        assert_eq!(pts.len(), 10);
        assert_eq!(pts[0], LatticePoint::origin(3));
        assert!(pts.iter().all(|p| p.coords().windows(2).all(|w| w[0] >= w[1])));
    }
}
