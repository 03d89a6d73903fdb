//! Experiment configuration: one flat key=value file (or the same fields
//! as a JSON object) resolved into a fully typed config with defaults.
//!
//! The flat format is line oriented: blank lines and lines starting with
//! `#` are skipped, everything else must be `key = value`. Values are
//! typed by shape: numbers parse as numbers, `true`/`false` as booleans,
//! `none` as the absent option, `a:b` with numeric halves as a range, and
//! anything else (weight grammar included) stays a string. Both formats
//! reject unknown and duplicate keys, so a typo can never silently fall
//! back to a default.
//!
//! Validation happens before any output is produced: the weights must
//! parse, the problem spec must accept the exponents, and each command's
//! numeric knobs are range checked. The defaults describe the admissible
//! demonstration family, so `eigen` with an empty config is a meaningful
//! end-to-end run.

use std::fmt;
use std::str::FromStr;

use serde_json::Value;

use crate::amp::{AmpError, LoadSpec};
use crate::fem::{FemError, RadialMesh};
use crate::ineq::{IneqError, TrialFamily};
use crate::weights::{ProblemSpec, WeightError, WeightFunction};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config line {line}: {msg}")]
    Flat { line: usize, msg: String },
    #[error("config: {0}")]
    Shape(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl From<WeightError> for ConfigError {
    fn from(e: WeightError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

impl From<FemError> for ConfigError {
    fn from(e: FemError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

impl From<AmpError> for ConfigError {
    fn from(e: AmpError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

impl From<IneqError> for ConfigError {
    fn from(e: IneqError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    CheckWeights,
    Eigen,
    AmpScan,
    Shoot,
    VerifyInequalities,
}

impl fmt::Display for CommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            CommandKind::CheckWeights => "check-weights",
            CommandKind::Eigen => "eigen",
            CommandKind::AmpScan => "amp-scan",
            CommandKind::Shoot => "shoot",
            CommandKind::VerifyInequalities => "verify-inequalities",
        };
        f.write_str(name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshKind {
    Log,
    Uniform,
}

/// Everything a run needs, echoed verbatim into the report. Ranges are
/// `lo:hi` in the flat format and `[lo, hi]` in JSON.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Optional in the file; the CLI subcommand fills or must match it.
    pub command: Option<CommandKind>,
    pub dim: u32,
    pub p: f64,
    pub alpha: f64,
    pub weight_l: String,
    pub weight_k: String,
    pub lower_v: String,
    pub upper_w: String,
    pub eps: f64,
    pub big_r: f64,
    pub mesh_elements: usize,
    pub mesh: MeshKind,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub out: String,
    pub svg: bool,
    // amp-scan
    pub load: String,
    pub support: Option<(f64, f64)>,
    /// Scan window as multiples of the computed lambda1.
    pub window: (f64, f64),
    pub steps: usize,
    pub region: (f64, f64),
    // shoot
    pub bracket: (f64, f64),
    pub ivp_steps: usize,
    // verify-inequalities
    pub trial_rho: (f64, f64),
    pub trial_k: (f64, f64),
    pub trial_m: (f64, f64),
    pub trial_samples: usize,
    // check-weights
    pub grid_size: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            command: None,
            dim: 2,
            p: 2.0,
            alpha: -0.5,
            weight_l: "ppow(1,1,1)".into(),
            weight_k: "pw(1:pow(0.25,-0.5),inf:pow(0.25,-2))".into(),
            lower_v: "ppow(1,1,1)".into(),
            upper_w: "pw(1:pow(0.5,-0.5),inf:pow(0.5,-2))".into(),
            eps: 1e-2,
            big_r: 1e2,
            mesh_elements: 200,
            mesh: MeshKind::Log,
            tol: 1e-8,
            max_iter: 20_000,
            seed: 0,
            out: "out".into(),
            svg: true,
            load: "pow(1,0)".into(),
            support: Some((0.5, 2.0)),
            window: (0.25, 0.9),
            steps: 4,
            region: (0.5, 2.0),
            bracket: (1e-3, 60.0),
            ivp_steps: 4000,
            trial_rho: (0.5, 5.0),
            trial_k: (1.0, 8.0),
            trial_m: (0.0, 2.0),
            trial_samples: 400,
            grid_size: 64,
        }
    }
}

/// Type a flat value by shape; see the module doc for the rules.
fn flat_value(raw: &str) -> Value {
    let raw = raw.trim();
    if raw.eq_ignore_ascii_case("none") {
        return Value::Null;
    }
    if raw == "true" {
        return Value::Bool(true);
    }
    if raw == "false" {
        return Value::Bool(false);
    }
    if let Ok(u) = raw.parse::<u64>() {
        return Value::from(u);
    }
    if let Ok(i) = raw.parse::<i64>() {
        return Value::from(i);
    }
    if let Ok(x) = raw.parse::<f64>() {
        if let Some(n) = serde_json::Number::from_f64(x) {
            return Value::Number(n);
        }
    }
    if let Some((a, b)) = raw.split_once(':') {
        if let (Ok(x), Ok(y)) = (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
            if x.is_finite() && y.is_finite() {
                return serde_json::json!([x, y]);
            }
        }
    }
    Value::String(raw.to_string())
}

/// Parse either format. A first non-whitespace `{` selects JSON.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    if text.trim_start().starts_with('{') {
        return serde_json::from_str(text).map_err(|e| ConfigError::Shape(e.to_string()));
    }
    let mut map = serde_json::Map::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed.split_once('=').ok_or_else(|| ConfigError::Flat {
            line: line_no,
            msg: format!("expected `key = value`, got `{trimmed}`"),
        })?;
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(ConfigError::Flat { line: line_no, msg: "empty key".into() });
        }
        if map.contains_key(&key) {
            return Err(ConfigError::Flat {
                line: line_no,
                msg: format!("duplicate key `{key}`"),
            });
        }
        map.insert(key, flat_value(value));
    }
    serde_json::from_value(Value::Object(map)).map_err(|e| ConfigError::Shape(e.to_string()))
}

impl ExperimentConfig {
    pub fn problem_spec(&self) -> Result<ProblemSpec, ConfigError> {
        let parse = |name: &str, s: &str| -> Result<WeightFunction, ConfigError> {
            WeightFunction::from_str(s)
                .map_err(|e| ConfigError::Invalid(format!("{name}: {e}")))
        };
        Ok(ProblemSpec::new(
            self.dim,
            self.p,
            self.alpha,
            parse("weight_l", &self.weight_l)?,
            parse("weight_k", &self.weight_k)?,
            parse("lower_v", &self.lower_v)?,
            parse("upper_w", &self.upper_w)?,
            self.eps,
            self.big_r,
        )?)
    }

    pub fn radial_mesh(&self) -> Result<RadialMesh, ConfigError> {
        Ok(match self.mesh {
            MeshKind::Log => RadialMesh::log_spaced(self.eps, self.big_r, self.mesh_elements)?,
            MeshKind::Uniform => RadialMesh::build_mesh(self.eps, self.big_r, self.mesh_elements, 1.0)?,
        })
    }

    pub fn load_spec(&self) -> Result<LoadSpec, ConfigError> {
        let profile = WeightFunction::from_str(&self.load)
            .map_err(|e| ConfigError::Invalid(format!("load: {e}")))?;
        Ok(LoadSpec::new(profile, self.support, true)?)
    }

    pub fn trial_family(&self) -> Result<TrialFamily, ConfigError> {
        Ok(TrialFamily::new(
            self.trial_rho,
            self.trial_k,
            self.trial_m,
            self.trial_samples,
            self.seed,
        )?)
    }

    /// Full command-aware validation; nothing may be written before this
    /// passes.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let command = self
            .command
            .ok_or_else(|| ConfigError::Invalid("no command selected".into()))?;
        self.problem_spec()?;
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(ConfigError::Invalid(format!(
                "tol must be positive and finite, got {}",
                self.tol
            )));
        }
        if self.max_iter == 0 {
            return Err(ConfigError::Invalid("max_iter must be positive".into()));
        }
        match command {
            CommandKind::CheckWeights => {
                if self.grid_size < 16 {
                    return Err(ConfigError::Invalid(format!(
                        "grid_size must be at least 16, got {}",
                        self.grid_size
                    )));
                }
            }
            CommandKind::Eigen => {
                self.radial_mesh()?;
            }
            CommandKind::AmpScan => {
                self.radial_mesh()?;
                self.load_spec()?;
                let (lo, hi) = self.window;
                if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo < hi) {
                    return Err(ConfigError::Invalid(format!(
                        "window must satisfy 0 < lo < hi (multiples of lambda1), got {lo}:{hi}"
                    )));
                }
                if self.steps == 0 {
                    return Err(ConfigError::Invalid("steps must be positive".into()));
                }
                let (ea, eb) = self.region;
                if !(ea.is_finite() && eb.is_finite() && 0.0 < ea && ea < eb) {
                    return Err(ConfigError::Invalid(format!(
                        "region must satisfy 0 < lo < hi, got {ea}:{eb}"
                    )));
                }
            }
            CommandKind::Shoot => {
                if (self.p - 2.0).abs() > 1e-12 || self.dim != 2 {
                    return Err(ConfigError::Invalid(format!(
                        "the shooting path is specific to p = 2, N = 2; got p = {}, N = {}",
                        self.p, self.dim
                    )));
                }
                let (lo, hi) = self.bracket;
                if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo < hi) {
                    return Err(ConfigError::Invalid(format!(
                        "bracket must satisfy 0 < lo < hi, got {lo}:{hi}"
                    )));
                }
                if self.ivp_steps < 16 {
                    return Err(ConfigError::Invalid(format!(
                        "ivp_steps must be at least 16, got {}",
                        self.ivp_steps
                    )));
                }
            }
            CommandKind::VerifyInequalities => {
                self.trial_family()?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_for_every_command() {
        for command in [
            CommandKind::CheckWeights,
            CommandKind::Eigen,
            CommandKind::AmpScan,
            CommandKind::Shoot,
            CommandKind::VerifyInequalities,
        ] {
            let cfg = ExperimentConfig { command: Some(command), ..Default::default() };
            cfg.validate().unwrap_or_else(|e| panic!("{command}: {e}"));
        }
    }

    #[test]
    fn flat_and_json_agree() {
        let flat = "\
# comment line
command = eigen
p = 2.5
mesh_elements = 120
mesh = uniform
window = 1.001:1.2
support = none
weight_k = pow(1,-0.5)
svg = false
seed = 42
";
        let json = r#"{
            "command": "eigen",
            "p": 2.5,
            "mesh_elements": 120,
            "mesh": "uniform",
            "window": [1.001, 1.2],
            "support": null,
            "weight_k": "pow(1,-0.5)",
            "svg": false,
            "seed": 42
        }"#;
        let a = parse_config(flat).unwrap();
        let b = parse_config(json).unwrap();
        assert_eq!(serde_json::to_value(&a).unwrap(), serde_json::to_value(&b).unwrap());
        assert_eq!(a.command, Some(CommandKind::Eigen));
        assert_eq!(a.p, 2.5);
        assert_eq!(a.mesh, MeshKind::Uniform);
        assert_eq!(a.window, (1.001, 1.2));
        assert_eq!(a.support, None);
        assert!(!a.svg);
        assert_eq!(a.seed, 42);
        // Untouched fields keep their defaults.
        assert_eq!(a.dim, 2);
        assert_eq!(a.out, "out");
    }

    #[test]
    fn unknown_and_duplicate_keys_are_rejected() {
        let err = parse_config("frobnicate = 1\n").unwrap_err();
        assert!(err.to_string().contains("frobnicate"), "{err}");

        let err = parse_config("p = 2\np = 3\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");

        let err = parse_config("p 2\n").unwrap_err();
        assert!(matches!(err, ConfigError::Flat { line: 1, .. }), "{err}");

        let err = parse_config(r#"{"frobnicate": 1}"#).unwrap_err();
        assert!(err.to_string().contains("frobnicate"), "{err}");
    }

    #[test]
    fn validation_rejects_bad_numerics_before_any_run() {
        let bad_p = ExperimentConfig {
            command: Some(CommandKind::Eigen),
            p: 0.5,
            ..Default::default()
        };
        assert!(bad_p.validate().is_err());

        let bad_weight = ExperimentConfig {
            command: Some(CommandKind::Eigen),
            weight_l: "pow(".into(),
            ..Default::default()
        };
        assert!(bad_weight.validate().is_err());

        let bad_window = ExperimentConfig {
            command: Some(CommandKind::AmpScan),
            window: (0.8, 0.2),
            ..Default::default()
        };
        assert!(bad_window.validate().is_err());

        let shoot_needs_p2 = ExperimentConfig {
            command: Some(CommandKind::Shoot),
            p: 2.5,
            ..Default::default()
        };
        assert!(shoot_needs_p2.validate().is_err());

        let no_command = ExperimentConfig::default();
        assert!(no_command.validate().is_err());
    }

    #[test]
    fn flat_values_are_typed_by_shape() {
        assert_eq!(flat_value("42"), serde_json::json!(42));
        assert_eq!(flat_value("-1.5e-3"), serde_json::json!(-1.5e-3));
        assert_eq!(flat_value("true"), serde_json::json!(true));
        assert_eq!(flat_value("none"), Value::Null);
        assert_eq!(flat_value("0.5:2"), serde_json::json!([0.5, 2.0]));
        assert_eq!(flat_value("pw(1:pow(1,0),inf:pow(1,-2))"),
            serde_json::json!("pw(1:pow(1,0),inf:pow(1,-2))"));
        // Non-finite numbers cannot enter through the flat format.
        assert_eq!(flat_value("inf"), serde_json::json!("inf"));
    }
}
