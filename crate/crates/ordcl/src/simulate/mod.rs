//! Data-generating truths and the replication harness for the simulation
//! experiments: copula samplers, covariate layouts, inverse-cdf
//! discretization, seeded replication runs with summary statistics, and an
//! exact low-dimensional likelihood oracle for the exchangeable Gumbel model.

mod copula;
mod design;
mod harness;
mod oracle;

pub use copula::{CopulaSampler, CopulaSpec, GumbelCopula, MvnCopula, MvtCopula};
pub use design::{covariate_design, equiprobable_cutpoints, ordinalize, DesignKind};
pub use harness::{
    replication_rng, run_replications, simulate_dataset, summary_table, CandidateSpec,
    CoefficientSummary, SelectionCount, SimDesign, SimSummary, REJECTION_LEVELS,
};
pub use oracle::{gumbel_cdf, gumbel_cell_pmf, gumbel_ml_oracle, GumbelMlFit};
