//! Experiment configuration: a TOML file with one section per subcommand,
//! overridden by command-line flags.

use std::path::PathBuf;

use interlace_core::lattice::{Ball, LatticePoint, SiteSet, MAX_DIM};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub general: General,
    pub green: GreenSection,
    pub capacity: CapacitySection,
    pub sample: SampleSection,
    pub graph: GraphSection,
    pub layers: LayersSection,
    pub checks: ChecksSection,
    pub sweep: SweepSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct General {
    pub d: usize,
    pub u: f64,
    /// Radius of the window ball around the origin.
    pub window: i64,
    /// `point`, `ball:R` or `sites:x1,...,xd;y1,...,yd`.
    pub anchors: String,
    pub replicas: usize,
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    pub jobs: usize,
    pub out: PathBuf,
    pub eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GreenSection {
    /// Values are written for canonical `v` with `|v| <= max_norm`.
    pub max_norm: i64,
    /// 0 selects the default exact radius for the dimension.
    pub exact_radius: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CapacitySection {
    pub walkers_per_site: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    /// `equilibrium` or `thinning`.
    pub method: String,
    pub write_samples: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    /// Radius of the inner ball for the diameter probe; 0 uses a quarter
    /// of the window.
    pub diameter_radius: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayersSection {
    pub s_max: usize,
    pub r: i64,
    pub radii: Vec<i64>,
    pub walkers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChecksSection {
    /// `quick` or `full`.
    pub scale: String,
    /// Check ids to run; empty runs the whole suite.
    pub only: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub command: String,
    /// Dotted config key, e.g. `general.u`.
    pub param: String,
    pub values: Vec<Value>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            general: General::default(),
            green: GreenSection::default(),
            capacity: CapacitySection::default(),
            sample: SampleSection::default(),
            graph: GraphSection::default(),
            layers: LayersSection::default(),
            checks: ChecksSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

impl Default for General {
    fn default() -> Self {
        General {
            d: 5,
            u: 1.0,
            window: 4,
            anchors: "ball:1".into(),
            replicas: 100,
            seed: 1,
            jobs: 0,
            out: PathBuf::from("interlace-out"),
            eps: 1e-2,
        }
    }
}

impl Default for GreenSection {
    fn default() -> Self {
        GreenSection { max_norm: 4, exact_radius: 0 }
    }
}

impl Default for CapacitySection {
    fn default() -> Self {
        CapacitySection { walkers_per_site: 20_000 }
    }
}

impl Default for SampleSection {
    fn default() -> Self {
        SampleSection { method: "equilibrium".into(), write_samples: true }
    }
}

impl Default for GraphSection {
    fn default() -> Self {
        GraphSection { diameter_radius: 0 }
    }
}

impl Default for LayersSection {
    fn default() -> Self {
        LayersSection { s_max: 2, r: 1, radii: vec![4, 8], walkers: 4_000 }
    }
}

impl Default for ChecksSection {
    fn default() -> Self {
        ChecksSection { scale: "quick".into(), only: Vec::new() }
    }
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { command: "sample".into(), param: "general.u".into(), values: vec![Value::Float(0.5), Value::Float(1.0)] }
    }
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config { field: field.into(), message: msg.to_string() }
}

/// Parses a command-line value as a TOML literal, falling back to a bare
/// string.
pub fn parse_value(text: &str) -> Value {
    let doc = format!("v = {text}");
    match doc.parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(text.into())),
        Err(_) => Value::String(text.into()),
    }
}

/// Sets the dotted key `section.field` in `table`.
pub fn set_key(table: &mut Table, key: &str, value: Value) -> Result<(), CliError> {
    let (section, field) = key.split_once('.').ok_or_else(|| invalid(key, "expected section.field"))?;
    let entry = table.entry(section.to_string()).or_insert_with(|| Value::Table(Table::new()));
    let Value::Table(sec) = entry else {
        return Err(invalid(section, "not a section"));
    };
    sec.insert(field.to_string(), value);
    Ok(())
}

/// The first `section.key` of `table` that fails to deserialise on its own.
fn offending_key(table: &Table) -> Option<String> {
    for (section, v) in table {
        let Value::Table(sec) = v else {
            return Some(section.clone());
        };
        for (key, val) in sec {
            let mut one = Table::new();
            one.insert(section.clone(), Value::Table(Table::from_iter([(key.clone(), val.clone())])));
            if Value::Table(one).try_into::<ExperimentConfig>().is_err() {
                return Some(format!("{section}.{key}"));
            }
        }
    }
    None
}

/// Deserialises and validates a configuration table.
pub fn from_table(table: Table) -> Result<ExperimentConfig, CliError> {
    let cfg: ExperimentConfig = Value::Table(table.clone())
        .try_into()
        .map_err(|e: toml::de::Error| invalid(&offending_key(&table).unwrap_or_else(|| "config".into()), e.message()))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_text(text: &str) -> Result<Table, CliError> {
    text.parse::<Table>().map_err(|e| invalid("config", e.message()))
}

impl ExperimentConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let g = &self.general;
        if !(3..=MAX_DIM).contains(&g.d) {
            return Err(invalid("general.d", format!("dimension must be in 3..={MAX_DIM}, got {}", g.d)));
        }
        if !(g.u.is_finite() && g.u > 0.0) {
            return Err(invalid("general.u", format!("level must be positive, got {}", g.u)));
        }
        if g.window < 0 {
            return Err(invalid("general.window", "radius must be nonnegative"));
        }
        if g.replicas == 0 {
            return Err(invalid("general.replicas", "must be at least 1"));
        }
        if !(g.eps > 0.0 && g.eps < 1.0) {
            return Err(invalid("general.eps", "must lie in (0, 1)"));
        }
        let a = self.anchor_set()?;
        if !a.iter().all(|p| Ball::centered(g.d, g.window).contains(&p)) {
            return Err(invalid("general.anchors", "anchors must lie in the window"));
        }
        if self.green.max_norm < 0 {
            return Err(invalid("green.max_norm", "must be nonnegative"));
        }
        if self.capacity.walkers_per_site == 0 {
            return Err(invalid("capacity.walkers_per_site", "must be at least 1"));
        }
        if !["equilibrium", "thinning"].contains(&self.sample.method.as_str()) {
            return Err(invalid("sample.method", format!("expected equilibrium or thinning, got {}", self.sample.method)));
        }
        if self.graph.diameter_radius < 0 {
            return Err(invalid("graph.diameter_radius", "must be nonnegative"));
        }
        let l = &self.layers;
        if l.s_max == 0 {
            return Err(invalid("layers.s_max", "must be at least 1"));
        }
        if l.radii.is_empty() || l.radii.iter().any(|r| *r <= l.r) || l.r < 0 {
            return Err(invalid("layers.radii", "need nonempty radii, each larger than layers.r >= 0"));
        }
        if l.walkers == 0 {
            return Err(invalid("layers.walkers", "must be at least 1"));
        }
        self.checks.scale.parse::<interlace_core::checks::Scale>().map_err(|e| invalid("checks.scale", e))?;
        for id in &self.checks.only {
            if !interlace_core::checks::CHECK_IDS.contains(&id.as_str()) {
                return Err(invalid("checks.only", format!("unknown check id {id}")));
            }
        }
        if !crate::commands::SWEEPABLE.contains(&self.sweep.command.as_str()) {
            return Err(invalid("sweep.command", format!("cannot sweep {}", self.sweep.command)));
        }
        if !self.sweep.param.contains('.') {
            return Err(invalid("sweep.param", "expected section.field"));
        }
        Ok(())
    }

    /// The anchor set `A` described by `general.anchors`.
    pub fn anchor_set(&self) -> Result<SiteSet, CliError> {
        let d = self.general.d;
        let spec = self.general.anchors.trim();
        let field = "general.anchors";
        if spec == "point" {
            return Ok(SiteSet::from_points(d, [LatticePoint::origin(d)]));
        }
        if let Some(r) = spec.strip_prefix("ball:") {
            let r: i64 = r.trim().parse().map_err(|_| invalid(field, format!("bad ball radius in {spec}")))?;
            if r < 0 {
                return Err(invalid(field, "ball radius must be nonnegative"));
            }
            return Ok(Ball::centered(d, r).to_site_set());
        }
        if let Some(list) = spec.strip_prefix("sites:") {
            let mut k = SiteSet::new(d);
            for site in list.split(';').filter(|s| !s.trim().is_empty()) {
                let c: Vec<i64> = site
                    .split(',')
                    .map(|x| x.trim().parse::<i64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| invalid(field, format!("bad site {site}")))?;
                if c.len() != d {
                    return Err(invalid(field, format!("site {site} has {} coordinates, expected {d}", c.len())));
                }
                k.insert(LatticePoint::new(&c));
            }
            if k.is_empty() {
                return Err(invalid(field, "no sites given"));
            }
            return Ok(k);
        }
        Err(invalid(field, format!("expected point, ball:R or sites:..., got {spec}")))
    }

    pub fn scale(&self) -> interlace_core::checks::Scale {
        self.checks.scale.parse().expect("validated")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_and_validates() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back = from_table(parse_text(&c.to_toml()).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn errors_name_the_field() {
        let mut t = parse_text("[general]\nd = 2\n").unwrap();
        match from_table(t.clone()) {
            Err(CliError::Config { field, .. }) => assert_eq!(field, "general.d"),
            other => panic!("{other:?}"),
        }
        set_key(&mut t, "general.d", parse_value("5")).unwrap();
        set_key(&mut t, "general.bogus", parse_value("1")).unwrap();
        match from_table(t) {
            Err(CliError::Config { field, .. }) => assert_eq!(field, "general.bogus"),
            other => panic!("{other:?}"),
        }
        let t = parse_text("[general]\nu = \"high\"\n").unwrap();
        match from_table(t) {
            Err(CliError::Config { field, .. }) => assert_eq!(field, "general.u"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn anchor_specs() {
        let mut c = ExperimentConfig::default();
        c.general.anchors = "sites:0,0,0,0,0;1,0,0,0,0".into();
        assert_eq!(c.anchor_set().unwrap().len(), 2);
        c.general.anchors = "ball:1".into();
        assert_eq!(c.anchor_set().unwrap().len(), 243);
        c.general.anchors = "sites:0,0".into();
        assert!(c.anchor_set().is_err());
    }

    #[test]
    fn values_parse_as_toml_literals() {
        assert_eq!(parse_value("0.5"), Value::Float(0.5));
        assert_eq!(parse_value("[1, 2]"), Value::Array(vec![Value::Integer(1), Value::Integer(2)]));
        assert_eq!(parse_value("full"), Value::String("full".into()));
    }
}
