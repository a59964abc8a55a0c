//! Metrics, calibration, cross-validation and the anomalous-origin filter.

pub mod anomaly;
pub mod calibrate;
pub mod crossval;
pub mod metrics;

pub use anomaly::{detect_anomalous_origins, outflow_totals, AnomalyConfig, AnomalyFlag};
pub use calibrate::{
    beta_bounds, check_aligned, fit_alpha, fit_beta, fit_beta_with, graph_registry, BetaFit, CalibrationData,
    BETA_LOG_TOL,
};
pub use crossval::{
    cross_validate, fit_model, score, training_rows, CvMode, CvOptions, CvPlan, CvReport, FittedModel, FoldReport,
    FoldYear, Summary, CV_SCHEMA,
};
pub use metrics::{
    cpc, cpc_distance, cpc_distance_with, cpc_rows, distance_histogram, evaluate, graph_distance, incoming_from, mae,
    mae_rows, r_squared, r_squared_rows, vector_mae, vector_r_squared, MetricsReport, CPC_D_BIN_KM,
};
