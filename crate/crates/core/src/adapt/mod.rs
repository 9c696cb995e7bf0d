//! Test-time adaptation: transductive pseudo-labels, LayerNorm-only updates
//! and multi-template weight averaging.

mod loss;
mod mtwa;
mod templates;

pub use loss::{
    build_pseudo_labels, bundle_from_embeddings, classify, classify_embeddings, entropy_loss, pseudo_targets, tta_loss,
    SimilarityBundle, Targets,
};
pub use mtwa::{
    adapt_single_template, average_outputs, average_parameters, tta_loss_value, tta_loss_with_grads, watt,
    watt_parallel, watt_parallel_outcome, watt_sequential, watt_sequential_trace, LnAdapter, LossKind, MtwaConfig,
    MtwaMode, ParallelOutcome, RoundTrace,
};
pub use templates::{TemplateSet, TextBank, DEFAULT_TEMPLATES};
