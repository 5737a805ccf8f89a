//! Experiment configuration: a single versioned JSON document.

use std::collections::BTreeMap;
use std::path::PathBuf;

use adiapump_core::registry::{ParamMap, ParamValue};
use adiapump_core::{CoreError, Result};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub family: FamilySpec,
    #[serde(default = "default_alphas")]
    pub alpha_values: Vec<f64>,
    #[serde(default = "default_epsilons")]
    pub epsilon_values: Vec<f64>,
    #[serde(default = "default_grid")]
    pub t_grid_size: usize,
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Named tolerance overrides (slope centers, r² floor, spreads, ...).
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    /// Loop specifications for the solid-angle experiment.
    #[serde(default)]
    pub loops: Vec<LoopConfig>,
}

fn default_alphas() -> Vec<f64> {
    vec![0.5]
}

fn default_epsilons() -> Vec<f64> {
    vec![1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0]
}

fn default_grid() -> usize {
    513
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FamilySpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, serde_json::Value>,
}

impl FamilySpec {
    pub fn param_map(&self) -> Result<ParamMap> {
        let mut out = ParamMap::new();
        for (k, v) in &self.params {
            let pv = match v {
                serde_json::Value::Number(n) => ParamValue::Scalar(
                    n.as_f64()
                        .ok_or_else(|| CoreError::Config(format!("param {k} is not finite")))?,
                ),
                serde_json::Value::Array(items) => {
                    let xs: Option<Vec<f64>> = items.iter().map(|x| x.as_f64()).collect();
                    ParamValue::List(xs.ok_or_else(|| {
                        CoreError::Config(format!("param {k} must be a numeric array"))
                    })?)
                }
                // string-valued params (file paths, ...) are consumed by
                // name-specific loaders, not the numeric map
                serde_json::Value::String(_) => continue,
                other => {
                    return Err(CoreError::Config(format!(
                        "param {k} has unsupported type: {other}"
                    )))
                }
            };
            out.insert(k.clone(), pv);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    ResidualSweep,
    ChargeTable,
    HolonomyCompare,
    OmegaCheck,
    InvariantSuite,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::ResidualSweep => "residual_sweep",
            ExperimentKind::ChargeTable => "charge_table",
            ExperimentKind::HolonomyCompare => "holonomy_compare",
            ExperimentKind::OmegaCheck => "omega_check",
            ExperimentKind::InvariantSuite => "invariant_suite",
        }
    }
}

/// Parametric loop forms for the solid-angle identity checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum LoopConfig {
    /// Latitude circle about one of the (r0, r1, r2) axes.
    Latitude {
        axis: usize,
        theta_c: f64,
        #[serde(default = "default_orientation")]
        orientation: f64,
    },
    /// Great-circle polygon through unit vertices.
    Polygon {
        name: String,
        vertices: Vec<[f64; 3]>,
    },
    /// Truncated Fourier series per component:
    /// `r_j(t) = c0 + Σ_k cos_k cos(2πkt) + sin_k sin(2πkt)`.
    Fourier {
        name: String,
        r0: FourierSeries,
        r1: FourierSeries,
        r2: FourierSeries,
    },
}

fn default_orientation() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FourierSeries {
    #[serde(default)]
    pub c0: f64,
    #[serde(default)]
    pub cos: Vec<f64>,
    #[serde(default)]
    pub sin: Vec<f64>,
}

impl FourierSeries {
    pub fn eval(&self, t: f64) -> f64 {
        let tau = std::f64::consts::TAU;
        let mut out = self.c0;
        for (k, a) in self.cos.iter().enumerate() {
            out += a * (tau * (k + 1) as f64 * t).cos();
        }
        for (k, b) in self.sin.iter().enumerate() {
            out += b * (tau * (k + 1) as f64 * t).sin();
        }
        out
    }
}

impl LoopConfig {
    pub fn to_param_loop(&self) -> adiapump_core::examplefam::ParamLoop {
        use adiapump_core::examplefam::ParamLoop;
        match self {
            LoopConfig::Latitude {
                axis,
                theta_c,
                orientation,
            } => ParamLoop::latitude(*axis, *theta_c, *orientation),
            LoopConfig::Polygon { name, vertices } => {
                ParamLoop::great_circle_polygon(name.clone(), vertices)
            }
            LoopConfig::Fourier { name, r0, r1, r2 } => {
                let (r0, r1, r2) = (r0.clone(), r1.clone(), r2.clone());
                ParamLoop::from_closure(name.clone(), move |t| [r0.eval(t), r1.eval(t), r2.eval(t)])
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            LoopConfig::Latitude {
                axis,
                theta_c,
                orientation,
            } => format!("latitude(r{axis}, theta_c={theta_c:.4}, orient={orientation:+.0})"),
            LoopConfig::Polygon { name, .. } | LoopConfig::Fourier { name, .. } => name.clone(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| CoreError::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CoreError::Config(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.epsilon_values.is_empty()
            || self.epsilon_values.iter().any(|&e| !(0.0 < e && e <= 1.0))
        {
            return Err(CoreError::Config(
                "epsilon_values must be non-empty and lie in (0, 1]".into(),
            ));
        }
        if self.epsilon_values.windows(2).any(|w| w[1] >= w[0]) {
            return Err(CoreError::Config(
                "epsilon_values must be strictly decreasing".into(),
            ));
        }
        if self.alpha_values.iter().any(|&a| !(0.0..=1.0).contains(&a)) {
            return Err(CoreError::Config("alpha_values must lie in [0, 1]".into()));
        }
        if self.t_grid_size < 3 || self.t_grid_size % 2 == 0 {
            return Err(CoreError::Config(
                "t_grid_size must be an odd node count >= 3 (Simpson-compatible)".into(),
            ));
        }
        Ok(())
    }

    pub fn tolerance(&self, key: &str, default: f64) -> f64 {
        self.tolerances.get(key).copied().unwrap_or(default)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(extra: &str) -> String {
        format!(
            r#"{{
            "schema_version": 1,
            "family": {{"name": "special_case"}},
            "experiment": "residual_sweep"{extra}
        }}"#
        )
    }

    #[test]
    fn parses_minimal_config_with_defaults() {
        let cfg = ExperimentConfig::from_json(&minimal("")).unwrap();
        assert_eq!(cfg.t_grid_size, 513);
        assert_eq!(cfg.epsilon_values.len(), 5);
        assert_eq!(cfg.experiment, ExperimentKind::ResidualSweep);
    }

    #[test]
    fn rejects_bad_epsilon_order() {
        let text = minimal(r#", "epsilon_values": [0.125, 0.25]"#);
        assert!(ExperimentConfig::from_json(&text).is_err());
    }

    #[test]
    fn rejects_even_grid() {
        let text = minimal(r#", "t_grid_size": 512"#);
        assert!(ExperimentConfig::from_json(&text).is_err());
    }

    #[test]
    fn loop_forms_evaluate() {
        let lat = LoopConfig::Latitude {
            axis: 1,
            theta_c: 0.5,
            orientation: 1.0,
        };
        let pl = lat.to_param_loop();
        assert_eq!(pl.n_segments(), 1);
        let f = FourierSeries {
            c0: 1.0,
            cos: vec![0.5],
            sin: vec![],
        };
        assert!((f.eval(0.0) - 1.5).abs() < 1e-15);
    }
}
