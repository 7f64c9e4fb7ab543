//! Linear predictors robust to bounded shifts of anchor variables that are
//! observed only through noisy proxies.
//!
//! Moments of `(X, Y, A, W, Z)` feed every fitter in [`estimators`];
//! [`scm`] supplies the linear structural model used for simulation and
//! for exact population quantities, and [`robustness`] the worst-case
//! oracles.

pub mod bundles;
pub mod data;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod identifiability;
pub mod linalg;
pub mod moments;
pub mod robustness;
pub mod scm;
pub mod simulate;

pub use data::Dataset;
pub use error::{Error, Result};
pub use estimators::{FitSpec, LinearPredictor, Method};
pub use moments::{moments_from_data, Aux, AuxBlock, MomentSet};
pub use robustness::{RobustnessSet, SetKind, WorstCase};
pub use scm::{InterventionSpec, LinearScm, ProxyModel};
