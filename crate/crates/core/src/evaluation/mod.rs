//! Anomaly scores and AUC, the betaVAE disentanglement score, and
//! aggregation of repeated runs.

mod aggregate;
mod anomaly;
mod auc;
mod beta_vae;

pub use aggregate::{
    aggregate_runs, mean_sem, median, summaries_csv, summaries_table, MetricSummary, RunReport,
};
pub use anomaly::{anomaly_report, anomaly_scores, evaluate_anomaly, AnomalyReport, ScoreSummary};
pub use auc::auc;
pub use beta_vae::{
    beta_vae_score, BetaVaeConfig, ConstantEncoder, LatentEncoder, LogisticRegression,
    OracleEncoder,
};
