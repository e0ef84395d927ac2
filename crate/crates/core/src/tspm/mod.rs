//! Raw and transitive sequential representation mining.
//!
//! A raw feature counts every occurrence of a code on a patient's buffered
//! timeline. A transitive sequence feature `A → B` is 1 for a patient whose
//! first `A` is dated no later than their first `B`; same-day first
//! occurrences set both directions.

mod container;
mod demographic;
mod matrix;
mod mining;

use thiserror::Error;

pub use container::{read_matrix, write_matrix, write_matrix_text, CONTAINER_MAGIC, CONTAINER_VERSION};
pub use demographic::{DemographicEncoder, DemographicEncoding};
pub use matrix::{ColumnMajor, FeatureDescriptor, FeatureKind, SparseFeatureMatrix};
pub use mining::{assemble_matrix, encode_clinical, mine_raw, mine_transitive, MiningOptions};

#[derive(Debug, Error)]
pub enum TspmError {
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("matrices do not share the same patient order")]
    PatientOrderMismatch,
    #[error("no feature class selected; nothing to assemble")]
    NothingToAssemble,
    #[error(
        "transitive mining would materialize {pairs} sequence entries, above the budget of {budget}; \
         enable the prevalence pre-filter (min_prevalence) to bound memory"
    )]
    PairBudgetExceeded { pairs: usize, budget: usize },
    #[error("matrix container: {0}")]
    Container(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
