//! `interlace`: command-line front end for the simulator and its checks.
//!
//! Exit status: 0 on success, 2 for an invalid configuration (the message
//! names the field), 3 when a requested check fails (the message names the
//! check id), 1 for anything else.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use toml::{Table, Value};

use crate::commands::Summary;
use crate::config::{from_table, parse_text, parse_value, set_key, ExperimentConfig};

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"), "-", env!("INTERLACE_GIT_DESCRIBE"));

#[derive(Debug)]
pub enum CliError {
    Config { field: String, message: String },
    Core(interlace_core::Error),
    Other(anyhow::Error),
}

impl From<interlace_core::Error> for CliError {
    fn from(e: interlace_core::Error) -> Self {
        CliError::Core(e)
    }
}

#[derive(Parser, Debug)]
#[command(name = "interlace", version = VERSION, about = "Random interlacements on Z^d: sampling, potential theory and numerical checks")]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    dim: Option<usize>,
    #[arg(long, global = true)]
    u: Option<f64>,
    #[arg(long, global = true)]
    replicas: Option<usize>,
    /// Worker threads (0: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Window radius.
    #[arg(long, global = true)]
    window: Option<i64>,
    /// Anchor set: point, ball:R or sites:x1,..,xd;y1,..,yd.
    #[arg(long, global = true)]
    anchors: Option<String>,
    /// Truncation threshold for sampled paths.
    #[arg(long, global = true)]
    eps: Option<f64>,
    /// Any config key, as section.key=value (repeatable).
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build or load the Green table and write g on small canonical points.
    Green {
        #[arg(long)]
        max_norm: Option<i64>,
    },
    /// Capacity of the anchor set by both methods, with a cross-check.
    Capacity {
        #[arg(long)]
        walkers: Option<usize>,
    },
    /// Interlacement samples on the anchor set.
    Sample {
        /// equilibrium or thinning.
        #[arg(long)]
        method: Option<String>,
    },
    /// Intersection graphs of samples: edge lists and distance histograms.
    Graph {
        #[arg(long)]
        method: Option<String>,
    },
    /// Layered sets and their capacities against R.
    Layers {
        #[arg(long, value_delimiter = ',')]
        radii: Option<Vec<i64>>,
        #[arg(long)]
        s_max: Option<usize>,
    },
    /// The numerical check suite.
    Checks {
        /// quick or full.
        #[arg(long)]
        scale: Option<String>,
        /// Comma-separated check ids.
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<String>>,
    },
    /// Another subcommand over a grid of values of one config key.
    Sweep {
        #[arg(long = "target")]
        target: Option<String>,
        /// Dotted key, e.g. general.u.
        #[arg(long)]
        param: Option<String>,
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<String>>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Green { .. } => "green",
            Command::Capacity { .. } => "capacity",
            Command::Sample { .. } => "sample",
            Command::Graph { .. } => "graph",
            Command::Layers { .. } => "layers",
            Command::Checks { .. } => "checks",
            Command::Sweep { .. } => "sweep",
        }
    }
}

/// Config table from the file plus every flag given on the command line.
fn effective_table(cli: &Cli) -> Result<(Table, Option<String>), CliError> {
    let source = match &cli.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| CliError::Config { field: "config".into(), message: format!("{}: {e}", p.display()) })?),
        None => None,
    };
    let mut t = match &source {
        Some(text) => parse_text(text)?,
        None => Table::new(),
    };
    let mut put = |key: &str, v: Value| set_key(&mut t, key, v);
    if let Some(v) = cli.seed {
        put("general.seed", Value::Integer(v as i64))?;
    }
    if let Some(v) = cli.dim {
        put("general.d", Value::Integer(v as i64))?;
    }
    if let Some(v) = cli.u {
        put("general.u", Value::Float(v))?;
    }
    if let Some(v) = cli.replicas {
        put("general.replicas", Value::Integer(v as i64))?;
    }
    if let Some(v) = cli.jobs {
        put("general.jobs", Value::Integer(v as i64))?;
    }
    if let Some(v) = &cli.out {
        put("general.out", Value::String(v.display().to_string()))?;
    }
    if let Some(v) = cli.window {
        put("general.window", Value::Integer(v))?;
    }
    if let Some(v) = &cli.anchors {
        put("general.anchors", Value::String(v.clone()))?;
    }
    if let Some(v) = cli.eps {
        put("general.eps", Value::Float(v))?;
    }
    match &cli.command {
        Command::Green { max_norm: Some(v) } => put("green.max_norm", Value::Integer(*v))?,
        Command::Capacity { walkers: Some(v) } => put("capacity.walkers_per_site", Value::Integer(*v as i64))?,
        Command::Sample { method: Some(v) } | Command::Graph { method: Some(v) } => put("sample.method", Value::String(v.clone()))?,
        Command::Layers { radii, s_max } => {
            if let Some(r) = radii {
                put("layers.radii", Value::Array(r.iter().map(|x| Value::Integer(*x)).collect()))?;
            }
            if let Some(s) = s_max {
                put("layers.s_max", Value::Integer(*s as i64))?;
            }
        }
        Command::Checks { scale, only } => {
            if let Some(s) = scale {
                put("checks.scale", Value::String(s.clone()))?;
            }
            if let Some(o) = only {
                put("checks.only", Value::Array(o.iter().map(|x| Value::String(x.clone())).collect()))?;
            }
        }
        Command::Sweep { target, param, values } => {
            if let Some(c) = target {
                put("sweep.command", Value::String(c.clone()))?;
            }
            if let Some(p) = param {
                put("sweep.param", Value::String(p.clone()))?;
            }
            if let Some(v) = values {
                put("sweep.values", Value::Array(v.iter().map(|x| parse_value(x)).collect()))?;
            }
        }
        _ => {}
    }
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Config { field: kv.clone(), message: "expected section.key=value".into() })?;
        set_key(&mut t, k.trim(), parse_value(v.trim()))?;
    }
    Ok((t, source))
}

fn io(e: std::io::Error, what: &Path) -> CliError {
    CliError::Other(anyhow::anyhow!("{}: {e}", what.display()))
}

/// Config copy, seed and version string in `dir`.
fn write_provenance(dir: &Path, cfg: &ExperimentConfig, source: Option<&str>) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io(e, dir))?;
    let w = |name: &str, text: &str| std::fs::write(dir.join(name), text).map_err(|e| io(e, &dir.join(name)));
    w("config.toml", &cfg.to_toml())?;
    if let Some(s) = source {
        w("config.source.toml", s)?;
    }
    w("seed.txt", &format!("{}\n", cfg.general.seed))?;
    w("version.txt", &format!("{VERSION}\n"))?;
    Ok(())
}

fn summary_text(s: &Summary) -> String {
    s.columns.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

fn csv_cell(v: &str) -> String {
    v.replace(',', ";")
}

fn run_sweep(table: &Table, cfg: &ExperimentConfig, dir: &Path) -> Result<Summary, CliError> {
    let sw = &cfg.sweep;
    let mut header: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    let mut failed = None;
    for (k, value) in sw.values.iter().enumerate() {
        let mut t = table.clone();
        set_key(&mut t, &sw.param, value.clone())?;
        let cell = from_table(t)?;
        let cell_dir = dir.join(format!("cell_{k}"));
        write_provenance(&cell_dir, &cell, None)?;
        let s = commands::run(&sw.command, &cell, &cell_dir)?;
        let keys: Vec<String> = s.columns.iter().map(|c| c.0.clone()).collect();
        if header.is_none() {
            header = Some(keys);
        }
        let vtext = match value {
            Value::String(x) => x.clone(),
            other => other.to_string(),
        };
        let mut row = vec![k.to_string(), csv_cell(&vtext)];
        row.extend(s.columns.iter().map(|c| csv_cell(&c.1)));
        row.push(s.failed.is_none().to_string());
        rows.push(row.join(","));
        if failed.is_none() {
            failed = s.failed;
        }
    }
    let mut csv = format!("cell,{},{},pass\n", sw.param, header.unwrap_or_default().join(","));
    for r in rows {
        csv.push_str(&r);
        csv.push('\n');
    }
    std::fs::write(dir.join("sweep.csv"), &csv).map_err(|e| io(e, dir))?;
    let mut s = Summary::default();
    s.columns.push(("cells".into(), sw.values.len().to_string()));
    s.failed = failed;
    Ok(s)
}

fn run(cli: &Cli) -> Result<Summary, CliError> {
    let (table, source) = effective_table(cli)?;
    let cfg = from_table(table.clone())?;
    if cfg.general.jobs > 0 {
        // fails only if a pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.general.jobs).build_global();
    }
    let dir = cfg.general.out.clone();
    write_provenance(&dir, &cfg, source.as_deref())?;
    let name = cli.command.name();
    let summary = if name == "sweep" { run_sweep(&table, &cfg, &dir)? } else { commands::run(name, &cfg, &dir)? };
    std::fs::write(dir.join("summary.txt"), summary_text(&summary)).map_err(|e| io(e, &dir))?;
    Ok(summary)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(s) => {
            print!("{}", summary_text(&s));
            match s.failed {
                Some(id) => {
                    eprintln!("check failed: {id}");
                    ExitCode::from(3)
                }
                None => ExitCode::SUCCESS,
            }
        }
        Err(CliError::Config { field, message }) => {
            eprintln!("invalid config: field {field}: {message}");
            ExitCode::from(2)
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(CliError::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
