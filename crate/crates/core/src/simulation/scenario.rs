//! Scenario configuration and the TOML scenario-file format.
//!
//! A scenario file holds one or more `[[scenario]]` tables. Any field other
//! than `id` and `estimators` may be an array, in which case the scenario
//! expands to the Cartesian product of all arrays (a sweep):
//!
//! ```toml
//! [[scenario]]
//! id = "table1"
//! exp_beta_u = [0.5, 1.0, 2.0]
//! exp_beta_x = [0.5, 1.0, 2.0]
//! alpha_v = [1.0, 2.0]
//! rho = 1.0
//! replications = 500
//! estimators = ["naive", "2sri", "2sri-frailty-gaussian"]
//! ```

use std::fmt;
use std::str::FromStr;

use toml::{Table, Value};

use crate::error::{Error, Result};
use crate::two_stage::EstimatorKind;
use crate::frailty::FrailtyFamily;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Exposure {
    Continuous,
    Binary,
}

/// Joint law of the unmeasured survival predictor `U` and the unmeasured
/// treatment-selection variable `V`.
///
/// `g` are centred `Gamma(1, 1)` draws, `e` standard normals, all
/// independent; `a` is the mixing weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnmeasuredModel {
    /// Standard bivariate normal with correlation `rho`.
    JointNormal,
    /// `U = √a g1 + √(1-a) g2`, `V = √a g1 + √(1-a) g3`.
    M1,
    /// `U = √a g1 + √(1-a) e1`, `V = √a g1 + √(1-a) e2`.
    M2,
    /// `U = √a e1 + √(1-a) e2`, `V = √a e1 + √(1-a) e3`.
    M3,
    /// `U = √a e1 + √(1-a) g2`, `V = √a e1 + √(1-a) g3`.
    M4,
}

impl FromStr for Exposure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "continuous" => Ok(Exposure::Continuous),
            "binary" => Ok(Exposure::Binary),
            other => Err(Error::scenario("exposure", format!("unknown exposure `{other}`"))),
        }
    }
}

impl FromStr for UnmeasuredModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "joint-normal" | "normal" => Ok(UnmeasuredModel::JointNormal),
            "m1" | "m-i" => Ok(UnmeasuredModel::M1),
            "m2" | "m-ii" => Ok(UnmeasuredModel::M2),
            "m3" | "m-iii" => Ok(UnmeasuredModel::M3),
            "m4" | "m-iv" => Ok(UnmeasuredModel::M4),
            other => Err(Error::scenario("mixture", format!("unknown model `{other}`"))),
        }
    }
}

impl fmt::Display for UnmeasuredModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UnmeasuredModel::JointNormal => "joint-normal",
            UnmeasuredModel::M1 => "m1",
            UnmeasuredModel::M2 => "m2",
            UnmeasuredModel::M3 => "m3",
            UnmeasuredModel::M4 => "m4",
        })
    }
}

/// One simulation cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub id: String,
    /// True log hazard ratio of treatment.
    pub beta_x: f64,
    /// Log hazard ratio of the unmeasured predictor `U`.
    pub beta_u: f64,
    /// Weight of `V` in the treatment equation; larger means a weaker instrument.
    pub alpha_v: f64,
    /// `cor(U, V)` for the joint-normal model.
    pub rho: f64,
    pub exposure: Exposure,
    pub mixture: UnmeasuredModel,
    pub mixing_a: f64,
    pub n: usize,
    pub replications: usize,
    /// Expected censored fraction.
    pub censoring_target: f64,
    pub seed: u64,
    /// Binary exposure is `X = 1{X* >= binary_threshold}`.
    pub binary_threshold: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            id: "scenario".into(),
            beta_x: 0.0,
            beta_u: 0.0,
            alpha_v: 1.0,
            rho: 1.0,
            exposure: Exposure::Continuous,
            mixture: UnmeasuredModel::JointNormal,
            mixing_a: 0.5,
            n: 500,
            replications: 2000,
            censoring_target: 0.2,
            seed: 0,
            binary_threshold: 0.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::scenario(name, "must be finite"))
            }
        };
        finite("beta_x", self.beta_x)?;
        finite("beta_u", self.beta_u)?;
        finite("alpha_v", self.alpha_v)?;
        finite("binary_threshold", self.binary_threshold)?;
        if !(self.rho.abs() <= 1.0) {
            return Err(Error::scenario("rho", "must lie in [-1, 1]"));
        }
        if !(0.0..=1.0).contains(&self.mixing_a) {
            return Err(Error::scenario("mixing_a", "must lie in [0, 1]"));
        }
        if self.n < 10 {
            return Err(Error::scenario("n", "must be at least 10"));
        }
        if self.replications < 1 {
            return Err(Error::scenario("replications", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.censoring_target) {
            return Err(Error::scenario("censoring_target", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// A validated scenario together with the estimators to run on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub estimators: Vec<EstimatorKind>,
}

pub fn default_estimators() -> Vec<EstimatorKind> {
    vec![
        EstimatorKind::Naive,
        EstimatorKind::TwoStageRI,
        EstimatorKind::TwoStageRIFrailty(FrailtyFamily::Gaussian),
    ]
}

const SWEEP_KEYS: [&str; 15] = [
    "beta_x",
    "exp_beta_x",
    "beta_u",
    "exp_beta_u",
    "alpha_v",
    "rho",
    "exposure",
    "mixture",
    "mixing_a",
    "n",
    "replications",
    "censoring_target",
    "seed",
    "binary_threshold",
    "id",
];

/// Parses a scenario file, expanding sweeps. Every cell is validated before
/// anything is returned. `default_seed` applies where no `seed` is given.
pub fn parse_scenarios(text: &str, default_seed: u64) -> Result<Vec<Scenario>> {
    let doc: Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::scenario("<file>", e.message().to_string()))?;
    for key in doc.keys() {
        if key != "scenario" {
            return Err(Error::scenario(key.as_str(), "unknown top-level key (expected [[scenario]])"));
        }
    }
    let tables = match doc.get("scenario") {
        Some(Value::Array(items)) => items,
        _ => return Err(Error::scenario("scenario", "file must contain at least one [[scenario]] table")),
    };
    let mut out = Vec::new();
    for (k, item) in tables.iter().enumerate() {
        let table = item
            .as_table()
            .ok_or_else(|| Error::scenario("scenario", "each scenario must be a table"))?;
        out.extend(expand(table, k, default_seed)?);
    }
    Ok(out)
}

fn expand(table: &Table, position: usize, default_seed: u64) -> Result<Vec<Scenario>> {
    for key in table.keys() {
        if key != "estimators" && !SWEEP_KEYS.contains(&key.as_str()) {
            return Err(Error::scenario(key.as_str(), "unknown field"));
        }
    }
    if table.contains_key("beta_x") && table.contains_key("exp_beta_x") {
        return Err(Error::scenario("exp_beta_x", "give either beta_x or exp_beta_x, not both"));
    }
    if table.contains_key("beta_u") && table.contains_key("exp_beta_u") {
        return Err(Error::scenario("exp_beta_u", "give either beta_u or exp_beta_u, not both"));
    }
    let base_id = match table.get("id") {
        None => format!("scenario{}", position + 1),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(Error::scenario("id", "must be a string")),
    };
    let estimators = match table.get("estimators") {
        None => default_estimators(),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| {
                v.as_str()
                    .ok_or_else(|| Error::scenario("estimators", "entries must be strings"))?
                    .parse::<EstimatorKind>()
                    .map_err(|e| Error::scenario("estimators", e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?,
        Some(_) => return Err(Error::scenario("estimators", "must be an array of strings")),
    };
    if estimators.is_empty() {
        return Err(Error::scenario("estimators", "must not be empty"));
    }

    // (key, values) in declaration order of SWEEP_KEYS
    let mut axes: Vec<(&str, Vec<Value>)> = Vec::new();
    for key in SWEEP_KEYS.iter().filter(|k| **k != "id") {
        if let Some(v) = table.get(*key) {
            let values = match v {
                Value::Array(items) if items.is_empty() => {
                    return Err(Error::scenario(*key, "sweep array must not be empty"))
                }
                Value::Array(items) => items.clone(),
                other => vec![other.clone()],
            };
            axes.push((key, values));
        }
    }

    let total: usize = axes.iter().map(|(_, v)| v.len()).product();
    let mut cells = Vec::with_capacity(total);
    for mut flat in 0..total {
        let mut cfg = ScenarioConfig {
            id: base_id.clone(),
            seed: default_seed,
            ..ScenarioConfig::default()
        };
        let mut label = Vec::new();
        // last axis varies fastest
        let mut picks = vec![0; axes.len()];
        for (a, (_, values)) in axes.iter().enumerate().rev() {
            picks[a] = flat % values.len();
            flat /= values.len();
        }
        for (a, (key, values)) in axes.iter().enumerate() {
            let v = &values[picks[a]];
            apply(&mut cfg, key, v)?;
            if values.len() > 1 {
                label.push(format!("{key}={}", render(v)));
            }
        }
        if !label.is_empty() {
            cfg.id = format!("{base_id}/{}", label.join("/"));
        }
        cfg.validate()?;
        cells.push(Scenario {
            config: cfg,
            estimators: estimators.clone(),
        });
    }
    Ok(cells)
}

fn render(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Float(f) => format!("{f}"),
        other => other.to_string(),
    }
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(Error::scenario(key, "must be a number")),
    }
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(Error::scenario(key, "must be a non-negative integer")),
    }
}

fn apply(cfg: &mut ScenarioConfig, key: &str, v: &Value) -> Result<()> {
    let positive = |x: f64| {
        if x > 0.0 && x.is_finite() {
            Ok(x)
        } else {
            Err(Error::scenario(key, "hazard ratio must be positive"))
        }
    };
    match key {
        "beta_x" => cfg.beta_x = as_f64(key, v)?,
        "exp_beta_x" => cfg.beta_x = positive(as_f64(key, v)?)?.ln(),
        "beta_u" => cfg.beta_u = as_f64(key, v)?,
        "exp_beta_u" => cfg.beta_u = positive(as_f64(key, v)?)?.ln(),
        "alpha_v" => cfg.alpha_v = as_f64(key, v)?,
        "rho" => cfg.rho = as_f64(key, v)?,
        "mixing_a" => cfg.mixing_a = as_f64(key, v)?,
        "censoring_target" => cfg.censoring_target = as_f64(key, v)?,
        "binary_threshold" => cfg.binary_threshold = as_f64(key, v)?,
        "n" => cfg.n = as_usize(key, v)?,
        "replications" => cfg.replications = as_usize(key, v)?,
        "seed" => match v {
            Value::Integer(i) if *i >= 0 => cfg.seed = *i as u64,
            _ => return Err(Error::scenario(key, "must be a non-negative integer")),
        },
        "exposure" => {
            cfg.exposure = v
                .as_str()
                .ok_or_else(|| Error::scenario(key, "must be a string"))?
                .parse()?
        }
        "mixture" => {
            cfg.mixture = v
                .as_str()
                .ok_or_else(|| Error::scenario(key, "must be a string"))?
                .parse()?
        }
        _ => return Err(Error::scenario(key, "unknown field")),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_expands_product() {
        let text = r#"
            [[scenario]]
            id = "t1"
            exp_beta_u = [0.5, 1.0, 2.0]
            exp_beta_x = [0.5, 1.0, 2.0]
            alpha_v = [1, 2]
            replications = 10
        "#;
        let cells = parse_scenarios(text, 7).unwrap();
        assert_eq!(cells.len(), 18);
        assert_eq!(cells[0].config.id, "t1/exp_beta_x=0.5/exp_beta_u=0.5/alpha_v=1");
        assert!((cells[0].config.beta_u - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(cells[1].config.alpha_v, 2.0);
        assert_eq!(cells[17].config.seed, 7);
        assert_eq!(cells[0].estimators, default_estimators());
    }

    #[test]
    fn invalid_field_is_named() {
        let text = "[[scenario]]\nrho = 1.5\n";
        match parse_scenarios(text, 0).unwrap_err() {
            Error::Scenario { field, .. } => assert_eq!(field, "rho"),
            e => panic!("{e:?}"),
        }
        let text = "[[scenario]]\nbogus = 1\n";
        match parse_scenarios(text, 0).unwrap_err() {
            Error::Scenario { field, .. } => assert_eq!(field, "bogus"),
            e => panic!("{e:?}"),
        }
        let text = "[[scenario]]\nestimators = [\"2sps\"]\n";
        match parse_scenarios(text, 0).unwrap_err() {
            Error::Scenario { field, .. } => assert_eq!(field, "estimators"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn string_fields() {
        let text = "[[scenario]]\nexposure = \"binary\"\nmixture = [\"m1\", \"m-iv\"]\nseed = 3\n";
        let cells = parse_scenarios(text, 0).unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].config.exposure, Exposure::Binary);
        assert_eq!(cells[1].config.mixture, UnmeasuredModel::M4);
        assert_eq!(cells[1].config.seed, 3);
    }
}
