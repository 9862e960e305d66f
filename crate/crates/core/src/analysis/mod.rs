//! Checks that tokens carry dynamics: fluctuation measures, ANOVA with
//! permutation nulls and controls, the RMSF probe, mutation scores and
//! exemplars.

mod probe;
mod stats;
mod structure;
mod tokens;

pub use probe::{rmsf_probe, ProbeConfig, ProbeResult};
pub use stats::{
    anova_eta2, anova_with_null, control_groupings, f_survival, permutation_null,
    position_quintile, regularized_beta, spearman, AnovaReport, ControlGroupings, ResidueContext,
};
pub use structure::{compute_rmsf, motion_amplitude};
pub use tokens::{
    canonical_neighbors, codeword_features, exemplar_bundle, mutation_score, random_tokens,
    token_exemplars, Exemplar,
};
