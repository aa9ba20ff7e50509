//! Speaker-recognition evaluation of embeddings: PCA and LDA projections,
//! cosine and two-covariance PLDA scoring, trial lists, equal error rate,
//! and the length-filtered and speaker-subset analyses.

pub mod linalg;
mod pipeline;
mod plda;
mod projection;
mod scoring;

pub use pipeline::{
    eer_of, filter_trials_by_min_length, fit_backend, prepare_speaker_experiment, relabel_subsets, score_trials,
    split_speaker_subsets, BackendConfig, BackendKind, FittedBackend, ScoredTrial, SpeakerEvalConfig,
    SpeakerExperiment, SpeakerItem, SpeakerTask, SubsetAssignment,
};
pub use plda::{plda_fit, plda_score, PldaModel};
pub use projection::{lda_apply, lda_fit, pca_apply, pca_fit, pca_inverse, LdaModel, PcaModel};
pub use scoring::{cosine_score, eer, make_trials, speaker_representation, Trial, TrialSet};
