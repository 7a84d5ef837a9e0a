//! Graphical-model inference: junction trees, potential fitting, queries and
//! sampling.

pub mod factor;
pub mod fit;
pub mod junction;
pub mod model;

pub use fit::{estimate_total, fit_model, fit_on_tree, fit_potentials, tvd, FitOptions, FitReport, FitState, MarginalLoss};
pub use junction::{build_junction_tree, estimate_model_size, JunctionTree, TreeEdge};
pub use model::{Evidence, PGModel};
