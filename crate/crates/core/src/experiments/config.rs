use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::scm::{LinearScm, ProxyModel, ScmConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Robustness,
    MisspecifiedSvr,
    CausalAnticausal,
    Targeted,
    /// Proxy pipeline on a user-supplied CSV and schema.
    Custom,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Robustness => "robustness",
            ExperimentKind::MisspecifiedSvr => "misspecified-svr",
            ExperimentKind::CausalAnticausal => "causal-anticausal",
            ExperimentKind::Targeted => "targeted",
            ExperimentKind::Custom => "custom",
        }
    }

    /// Built-in bundle used when no configuration file is given.
    pub fn default_bundle(self) -> &'static str {
        match self {
            ExperimentKind::Robustness => "e1",
            ExperimentKind::MisspecifiedSvr => "e2",
            ExperimentKind::CausalAnticausal => "e3",
            ExperimentKind::Targeted => "e4",
            ExperimentKind::Custom => "pollution",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "robustness" => Ok(ExperimentKind::Robustness),
            "misspecified-svr" | "misspecification" => Ok(ExperimentKind::MisspecifiedSvr),
            "causal-anticausal" => Ok(ExperimentKind::CausalAnticausal),
            "targeted" => Ok(ExperimentKind::Targeted),
            "custom" | "pollution" => Ok(ExperimentKind::Custom),
            other => Err(Error::param(
                "experiment",
                format!(
                    "unknown experiment '{other}' (robustness, misspecified-svr, causal-anticausal, targeted, custom)"
                ),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::param("format", format!("expected csv or json, got '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    pub path: String,
    #[serde(default)]
    pub format: OutputFormat,
}

fn default_replicates() -> usize {
    200
}

fn default_sizes() -> Vec<usize> {
    vec![10_000]
}

/// Scale and hyperparameters of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Training sample sizes.
    #[serde(default = "default_sizes")]
    pub sample_sizes: Vec<usize>,
    /// Test sample size; defaults to the training size.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_test: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Candidate penalties for cross-validation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lambda_grid: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub svr_grid: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assumed_svr: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Deterministic test intervention `nu`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervention: Option<Vec<f64>>,
    /// Targeted shift `A := kappa^T eps_A + eta`: the mean `eta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift_mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift_kappa: Option<Vec<Vec<f64>>>,
    /// Diagonal proxy noise variances overriding the bundle's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy_noise_var: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    /// CSV input of the custom pipeline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
    /// Column schema of the custom pipeline (file path or built-in name).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    /// Signal-to-variance ratio of synthetic proxies in the custom pipeline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy_svr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSpec>,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            kind,
            replicates: default_replicates(),
            sample_sizes: default_sizes(),
            n_test: None,
            lambda: None,
            lambda_grid: Vec::new(),
            svr_grid: Vec::new(),
            assumed_svr: None,
            seed: 0,
            intervention: None,
            shift_mean: None,
            shift_kappa: None,
            proxy_noise_var: None,
            jobs: None,
            data: None,
            schema: None,
            proxy_svr: None,
            output: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.kind != ExperimentKind::Custom {
            if self.sample_sizes.is_empty() {
                return Err(Error::Config("sample_sizes must not be empty".into()));
            }
            if self.sample_sizes.iter().any(|&n| n < 2) {
                return Err(Error::Config("sample sizes must be at least 2".into()));
            }
        }
        if self.n_test == Some(0) {
            return Err(Error::Config("n_test must be at least 1".into()));
        }
        for &x in &self.svr_grid {
            if !(x > 0.0 && x <= 1.0) {
                return Err(Error::Config(format!(
                    "signal-to-variance ratios must lie in (0, 1]; {x} is not allowed"
                )));
            }
        }
        let needs_svr = matches!(
            self.kind,
            ExperimentKind::Robustness | ExperimentKind::MisspecifiedSvr
        );
        if needs_svr && self.svr_grid.is_empty() {
            return Err(Error::Config("svr_grid must not be empty".into()));
        }
        if let Some(l) = self.lambda {
            if !(l >= -1.0 && l.is_finite()) {
                return Err(Error::Config(format!("lambda must be at least -1, got {l}")));
            }
        }
        if self.lambda_grid.iter().any(|l| !(*l >= -1.0 && l.is_finite())) {
            return Err(Error::Config("lambda_grid entries must be at least -1".into()));
        }
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn lambda_or(&self, default: f64) -> f64 {
        self.lambda.unwrap_or(default)
    }

    pub fn test_size(&self, n_train: usize) -> usize {
        self.n_test.unwrap_or(n_train)
    }

    pub fn intervention_vec(&self, d_a: usize) -> Result<Option<DVector<f64>>> {
        self.intervention
            .as_ref()
            .map(|v| {
                if v.len() != d_a {
                    return Err(Error::dim("intervention", d_a, v.len()));
                }
                Ok(DVector::from_column_slice(v))
            })
            .transpose()
    }

    pub fn kappa(&self) -> Result<Option<DMatrix<f64>>> {
        self.shift_kappa
            .as_ref()
            .map(|k| linalg::from_rows(k, "shift_kappa"))
            .transpose()
    }
}

/// An experiment configuration with its SCM (absent for the custom pipeline).
#[derive(Debug, Clone)]
pub struct ExperimentSetup {
    pub scm: Option<LinearScm>,
    pub proxies: Option<ProxyModel>,
    pub config: ExperimentConfig,
    /// Directory against which relative `data`/`schema` paths resolve.
    pub base_dir: Option<std::path::PathBuf>,
}

#[derive(Deserialize)]
struct ExperimentSection {
    experiment: ExperimentConfig,
}

impl ExperimentSetup {
    /// Parses a bundle: SCM keys at top level plus an `experiment` object.
    pub fn from_json(text: &str) -> Result<Self> {
        let section: ExperimentSection = serde_json::from_str(text)?;
        let value: serde_json::Value = serde_json::from_str(text)?;
        let (scm, proxies) = if value.get("dims").is_some() {
            let (s, p) = ScmConfig::from_json(text)?.build()?;
            (Some(s), p)
        } else {
            (None, None)
        };
        section.experiment.validate()?;
        Ok(ExperimentSetup {
            scm,
            proxies,
            config: section.experiment,
            base_dir: None,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        let mut s = Self::from_json(&text)?;
        s.base_dir = path.as_ref().parent().map(Path::to_path_buf);
        Ok(s)
    }

    /// Built-in bundle or file path.
    pub fn resolve(arg: &str) -> Result<Self> {
        match crate::bundles::text(arg) {
            Some(text) => Self::from_json(text),
            None => Self::load(arg),
        }
    }

    pub fn builtin(kind: ExperimentKind) -> Result<Self> {
        Self::resolve(kind.default_bundle())
    }

    pub fn scm(&self) -> Result<&LinearScm> {
        self.scm
            .as_ref()
            .ok_or_else(|| Error::Config(format!("experiment '{}' needs an SCM", self.config.kind.as_str())))
    }

    pub fn resolve_path(&self, p: &str) -> std::path::PathBuf {
        let path = Path::new(p);
        match (&self.base_dir, path.is_relative()) {
            (Some(dir), true) => dir.join(path),
            _ => path.to_path_buf(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_setups_load() {
        for kind in [
            ExperimentKind::Robustness,
            ExperimentKind::MisspecifiedSvr,
            ExperimentKind::CausalAnticausal,
            ExperimentKind::Targeted,
            ExperimentKind::Custom,
        ] {
            let s = ExperimentSetup::builtin(kind).unwrap();
            assert_eq!(s.config.kind, kind);
        }
    }

    #[test]
    fn zero_svr_rejected() {
        let mut c = ExperimentConfig::new(ExperimentKind::Robustness);
        c.svr_grid = vec![0.0, 0.5];
        assert!(c.validate().is_err());
        c.svr_grid = vec![0.5];
        c.validate().unwrap();
        c.replicates = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = r#"{"experiment": {"kind": "targeted", "replicate": 3}}"#;
        assert!(ExperimentSetup::from_json(text).is_err());
    }
}
