//! First-order evaluation and spec-gated sizing.

pub mod circuit;
pub mod model;
pub mod optimizer;
pub mod spec;
pub mod tech;
pub mod units;

pub use circuit::Circuit;
pub use model::{evaluate, PerformanceVector};
pub use optimizer::{explore, select, size, SizingOutcome, Status};
pub use spec::{check_spec, Environment, Feature, SpecSet};
pub use tech::TechnologyModel;
