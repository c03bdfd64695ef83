//! Learning from label proportions with large bags.
//!
//! Large bags are trained through mini-bags sampled without replacement.
//! Because a mini-bag's own class proportion is unknown, its supervision can
//! be the parent bag's proportion (the `PL` baseline) or a fresh draw from
//! the multivariate hypergeometric law of mini-bag compositions, optionally
//! weighted by the probability of the drawn composition.

pub mod audit;
pub mod bags;
pub mod error;
pub mod experiments;
pub mod hypergeom;
pub mod losses;
pub mod model;
pub mod plot;
pub mod proportion;
pub mod rng;
pub mod snapshot;
pub mod trainer;

pub use bags::{Bag, Instance, InstancePool, MiniBag};
pub use error::{LlpError, Result};
pub use experiments::{CalibrationTable, DatasetConfig, GridCell, GridSpec, MaeCurve};
pub use hypergeom::{ClassCounts, Hypergeometric, MultivariateHypergeometric};
pub use model::{ClassifierParams, GradientBundle, OptimizerKind, Shape};
pub use proportion::ProportionVector;
pub use trainer::{Method, TrainConfig, TrainOutcome, TrainTrace};
