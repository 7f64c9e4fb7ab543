//! Built-in model and experiment configurations.

use crate::error::{Error, Result};
use crate::identifiability::ObservedCovariance3;
use crate::scm::{LinearScm, ProxyModel, ScmConfig};

pub const E1: &str = include_str!("../configs/e1.json");
pub const E2: &str = include_str!("../configs/e2.json");
pub const E3: &str = include_str!("../configs/e3.json");
pub const E4: &str = include_str!("../configs/e4.json");
pub const SUPP_B: &str = include_str!("../configs/suppB.json");
pub const POLLUTION_SCHEMA: &str = include_str!("../configs/pollution_schema.json");
pub const POLLUTION_EXPERIMENT: &str = include_str!("../configs/pollution.json");
pub const SYNTHETIC_POLLUTION_CSV: &str = include_str!("../data/synthetic_pollution.csv");

pub const NAMES: [&str; 6] = ["e1", "e2", "e3", "e4", "suppB", "pollution"];

/// JSON text of the bundle called `name`.
pub fn text(name: &str) -> Option<&'static str> {
    match name {
        "e1" => Some(E1),
        "e2" => Some(E2),
        "e3" => Some(E3),
        "e4" => Some(E4),
        "suppB" | "suppb" => Some(SUPP_B),
        "pollution" => Some(POLLUTION_EXPERIMENT),
        _ => None,
    }
}

/// Resolves `arg` as a bundle name or a path to a JSON file.
pub fn resolve(arg: &str) -> Result<String> {
    if let Some(t) = text(arg) {
        return Ok(t.to_string());
    }
    std::fs::read_to_string(arg).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Config(format!(
                "'{arg}' is neither a file nor a built-in bundle ({})",
                NAMES.join(", ")
            ))
        } else {
            Error::io(arg, e)
        }
    })
}

fn model(text: &str) -> Result<(LinearScm, Option<ProxyModel>)> {
    ScmConfig::from_json(text)?.build()
}

/// Robustness-experiment SCM with isotropic proxies `W`, `Z` at `svr`.
pub fn e1(svr: f64) -> Result<(LinearScm, ProxyModel)> {
    let (scm, _) = model(E1)?;
    let proxies = ProxyModel::isotropic(scm.dims().d_a, svr, true)?;
    Ok((scm, proxies))
}

/// Causal/anti-causal SCM with its two proxies.
pub fn e3() -> Result<(LinearScm, ProxyModel)> {
    let (scm, proxies) = model(E3)?;
    let proxies = proxies.ok_or_else(|| Error::Config("e3 bundle lacks proxies".into()))?;
    Ok((scm, proxies))
}

/// Targeted-shift SCM (anchors observed, no proxies).
pub fn e4() -> Result<(LinearScm, Option<ProxyModel>)> {
    model(E4)
}

#[derive(Debug, Clone, serde::Deserialize)]
pub struct SuppBConfig {
    pub sigma: [[f64; 3]; 3],
    pub lambda: f64,
    pub grid_step: f64,
}

impl SuppBConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn covariance(&self) -> Result<ObservedCovariance3> {
        ObservedCovariance3::from_matrix(&self.sigma)
    }
}

pub fn supp_b() -> Result<SuppBConfig> {
    SuppBConfig::from_json(SUPP_B)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_bundles_parse() {
        e1(0.5).unwrap();
        e3().unwrap();
        e4().unwrap();
        supp_b().unwrap().covariance().unwrap();
        for name in NAMES {
            assert!(text(name).is_some());
        }
    }

    #[test]
    fn e4_is_permuted_to_canonical_order() {
        let (scm, _) = e4().unwrap();
        // Y is written first in the file: Y := -0.06 X1 + ..., X1 := 0.05 Y + ...
        assert_eq!(scm.b()[(2, 0)], -0.06);
        assert_eq!(scm.b()[(0, 2)], 0.05);
        assert_eq!(scm.m_a()[(2, 0)], 2.0);
        assert_eq!(scm.m_a()[(0, 0)], 0.0);
    }

    #[test]
    fn unknown_bundle_reports_choices() {
        let err = resolve("no-such-bundle").unwrap_err();
        assert!(err.to_string().contains("e1"));
    }
}
