//! Outcome prediction from longitudinal patient records: transitive
//! sequential representation mining, MSMR feature selection, boosted trees
//! and elastic-net logistic models, and discrimination/calibration reporting.

pub mod cohort;
pub mod evaluation;
pub mod learners;
pub mod msmr;
pub mod pipeline;
pub mod seed;
pub mod synth;
pub mod tspm;

/// Maps `f` over `items`, in parallel when the `parallel` feature is on.
/// Output order always matches input order.
#[cfg(feature = "parallel")]
pub(crate) fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
    items.iter().map(f).collect()
}
