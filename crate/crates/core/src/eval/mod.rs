//! Scoring: one-second majority vote, Table-style metrics, baselines and
//! leave-one-session-out evaluation.

mod ablation;
mod cv;
mod forest;
mod metrics;
mod vote;

pub use ablation::{run_ablation, AblationRow, Architecture, BatchShape};
pub use cv::{cross_validate, fit_predict, fold_seed, Aggregate, CvConfig, CvReport, FoldOutcome, Method};
pub use forest::{DecisionTree, ForestConfig, MajorityClassifier, RandomForest};
pub use metrics::{
    accuracy, balanced_accuracy, mean_f_score, BalancedFormula, ClassMetrics, ConfusionMatrix,
    MetricsReport,
};
pub use vote::{majority_vote_1s, window_labels};
