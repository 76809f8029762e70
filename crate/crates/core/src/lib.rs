//! Spatiotemporal sensing utility of vehicle fleets and budgeted fleet selection.
//!
//! The pipeline runs trajectories → [`ingest`] (grid binning) → [`visit`] (coverage
//! probabilities and trajectory distributions) → [`weights`] (importance field) →
//! [`selection`] (greedy, entropy-greedy, baselines and an exact oracle) →
//! [`evaluation`] (estimation error against the full fleet). [`synth`] produces
//! reproducible synthetic scenarios for all of it.

pub mod error;
pub mod evaluation;
pub mod grid;
pub mod ingest;
pub mod layer;
pub mod numeric;
pub mod selection;
pub mod synth;
pub mod utility;
pub mod visit;
pub mod weights;

pub use error::{Error, Result};
pub use grid::{GridSpec, SpatiotemporalIndex};
pub use layer::SparseLayer;
pub use selection::{FleetSelection, SelectionProblem, Strategy};
pub use utility::CoverageState;
pub use visit::VisitModel;
pub use weights::{WeightField, WeightVariant};
