mod metrics;
mod probe;
mod report;

pub use metrics::{classification_metrics, regression_metrics, ClassificationMetrics, RegressionMetrics};
pub use probe::{
    classify, classify_landcover, classify_pixels, forecast_index, forecast_metrics, AttachMode, ForecastSet,
    LabeledInputs, ProbeConfig, ProbeHead,
};
pub use report::{compare_runs, ranking_csv, ForecastMetrics, IndexMetrics, MetricsReport, RankRow};
