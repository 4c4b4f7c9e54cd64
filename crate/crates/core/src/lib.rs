pub mod data;
pub mod dgp;
pub mod driver;
pub mod error;
pub mod forest;
pub mod matrix;
pub mod metalearners;
pub mod metrics;
pub mod seed;
pub mod splitting;

pub use data::{ObservedDataset, SimulatedDataset};
pub use error::{CateError, Result};
pub use forest::{ForestModel, ForestParams};
pub use matrix::Matrix;
pub use metalearners::{BaseLearner, CateModel, ForestLearner, Learner, LearnerParams};
pub use metrics::{MetricsSummary, PredictionPanel};
pub use splitting::{ProcedureKind, ProcedureSpec};
pub use driver::{run_experiment, DataSource, ExperimentConfig, Profile, ResultTable};
