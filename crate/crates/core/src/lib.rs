//! Drawdown-constrained portfolio optimisation through Azéma–Yor transforms:
//! the `K_w`/`F_w` transform pair, path transforms, utility algebra, market
//! closed forms and Monte Carlo growth-rate estimation.

pub mod azema_yor;
pub mod drawdown;
pub mod error;
pub mod market;
pub mod monotone;
pub mod montecarlo;
pub mod quadrature;
pub mod utility;

pub use azema_yor::{ay_inverse, ay_transform, check_drawdown, DrawdownReport, SamplePath};
pub use drawdown::{build_fw, build_kw, relax_wn, DrawdownKind, DrawdownSpec, Extension, KwOptions, TransformPair};
pub use error::{Error, Result};
pub use market::{CompleteMarketSpec, DeflatorBound, FactorModelSpec, Units};
pub use monotone::{MonotoneMap, Representation};
pub use montecarlo::{CerEstimate, Check, Objective, Policy, Scheme, SimConfig, WealthSamples};
pub use utility::{ElasticityReport, SandwichBounds, Sign, UtilitySpec};
