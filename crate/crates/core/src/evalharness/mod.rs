//! Evaluation program: error reports, training-set studies, density
//! correlation, comfort masks and dataset statistics.

pub mod comfort;
pub mod desk;
pub mod evaluate;
pub mod metrics;
pub mod studies;

pub use comfort::{comfort, comfort_of_field, ComfortResult, COMFORT_THRESHOLD};
pub use evaluate::{evaluate, evaluate_one, Aggregate, CaseError, EvalReport, ReplicateReport};
pub use metrics::{dataset_stats, spearman, DatasetStats};
pub use studies::{
    density_correlation, density_study, density_study_on, size_study, CorrelationResult, DensityStudyResult,
    SizeStudyResult, StudyConfig, StudyRow, StudyRunner,
};
