//! Evaluation suite: word-level alignment of generated against true
//! text, the metric zoo (accuracy, KL, P/R/F1, confusion, prime-error
//! profile, token accuracy), model-driving grid sweeps, and the CSV /
//! JSON report emitters.

mod align;
mod csv;
mod grid;
mod metrics;

pub use align::{words_from_text, WordAlignment};
pub use csv::{
    write_fig2_accuracy, write_fig2_kl, write_fig4_prf1, write_fig5_confusion,
    write_fig6_prime_profile, write_fig7_grid, write_json,
};
pub use grid::{
    evaluate_mlm_grid, evaluate_nwp, evaluate_nwp_grid, nwp_instances, EvalInstance, MetricReport,
    MlmCell, SequenceModel,
};
pub use metrics::{
    confusion_matrix, prf1, prf1_from_pairs, prf1_table, prime_error_profile, token_accuracy,
    word_accuracy, word_kl, ConfusionMatrix, PrimeErrorProfile, Prf1, WordPrf1, NONE_LABEL,
    OTHER_LABEL, PRIME_WORD,
};
