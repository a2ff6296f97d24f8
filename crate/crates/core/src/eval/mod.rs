//! Metrics, diagnostics, model selection and embedding export.

mod diagnostics;
mod embedding;
mod metrics;
mod selection;

pub use diagnostics::{
    diagnose, imputation_diagnostics, joint_latents, lambda_proxy, max_density_ratio, nearest_mode_distance, proxy_divergence,
    two_sample_error, DiagnosticsReport, ImputationDiagnostics, LambdaProxy, ProbeConfig,
};
pub use metrics::{accuracy, argmax, cross_entropy, error_rate, mean_std, prob_accuracy};
pub use embedding::{export_embeddings, Projection2d};
pub use selection::{
    losses_and_source_probs, normalized_weights, raw_weights, select_model_iw, weighted_risk, IwCandidate, IwRisk,
    IwSelection,
};
