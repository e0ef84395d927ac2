//! Binary classifiers behind a pluggable interface: stochastic gradient
//! boosting with regression trees, and elastic-net penalized logistic
//! regression.

mod cv;
mod elastic_net;
mod gbm;
mod tree;

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::tspm::{DemographicEncoding, FeatureDescriptor, SparseFeatureMatrix};

pub use cv::stratified_folds;
pub use elastic_net::{
    fit_elastic_net, fit_elastic_net_path, kkt_violation, lambda_max, ElasticNetLearner, ElasticNetModel,
    ElasticNetParams, LambdaPath, LambdaRule,
};
pub use gbm::{
    bernoulli_deviance, deviance_gradient, fit_gbm, GbmGrid, GbmLearner, GbmModel, GbmParams,
};
pub use tree::{Node, RegressionTree};

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("labels contain a single class; the model is undefined")]
    SingleClass,
    #[error("{labels} labels for a matrix with {rows} rows")]
    LabelLength { labels: usize, rows: usize },
    #[error("prediction matrix does not use the training feature dictionary: {0}")]
    FeatureMismatch(String),
    #[error("invalid hyperparameter: {0}")]
    InvalidParameter(String),
    #[error("training matrix has no rows")]
    EmptyTrainingSet,
}

pub(crate) fn check_training(x: &SparseFeatureMatrix, y: &[bool]) -> Result<(), LearnerError> {
    if x.n_rows() == 0 {
        return Err(LearnerError::EmptyTrainingSet);
    }
    if y.len() != x.n_rows() {
        return Err(LearnerError::LabelLength {
            labels: y.len(),
            rows: x.n_rows(),
        });
    }
    let positives = y.iter().filter(|&&v| v).count();
    if positives == 0 || positives == y.len() {
        return Err(LearnerError::SingleClass);
    }
    Ok(())
}

pub(crate) fn check_dictionary(
    trained: &[FeatureDescriptor],
    x: &SparseFeatureMatrix,
) -> Result<(), LearnerError> {
    if trained != x.features() {
        return Err(LearnerError::FeatureMismatch(format!(
            "model has {} features, matrix has {}",
            trained.len(),
            x.n_features()
        )));
    }
    Ok(())
}

pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Per-feature relative influence scaled so the largest equals 100; zero
/// entries are omitted. Sorted by decreasing influence, then feature index.
#[derive(Clone, Debug, PartialEq)]
pub struct InfluenceReport {
    pub entries: Vec<InfluenceEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InfluenceEntry {
    pub feature: usize,
    pub descriptor: FeatureDescriptor,
    pub influence: f64,
}

impl InfluenceReport {
    /// Rescales non-negative raw influences; an all-zero input gives an
    /// empty report.
    pub fn from_raw(raw: &[f64], features: &[FeatureDescriptor]) -> InfluenceReport {
        let max = raw.iter().copied().fold(0.0, f64::max);
        if max <= 0.0 {
            return InfluenceReport { entries: Vec::new() };
        }
        let mut entries: Vec<InfluenceEntry> = raw
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(feature, &v)| InfluenceEntry {
                feature,
                descriptor: features[feature].clone(),
                influence: if v == max { 100.0 } else { 100.0 * v / max },
            })
            .collect();
        entries.sort_by(|a, b| b.influence.total_cmp(&a.influence).then(a.feature.cmp(&b.feature)));
        InfluenceReport { entries }
    }

    pub fn get(&self, feature: usize) -> Option<f64> {
        self.entries.iter().find(|e| e.feature == feature).map(|e| e.influence)
    }
}

/// A fitted model.
pub trait Classifier: Send + Sync + fmt::Debug {
    fn family(&self) -> &str;
    fn features(&self) -> &[FeatureDescriptor];
    fn predict_proba(&self, x: &SparseFeatureMatrix) -> Result<Vec<f64>, LearnerError>;
    /// Indices of features the fitted model actually uses.
    fn screened_features(&self) -> BTreeSet<usize>;
    /// Unscaled per-feature influence, for models that define one.
    fn raw_influence(&self) -> Option<Vec<f64>> {
        None
    }
}

/// A learning algorithm with internal cross-validated tuning.
pub trait Learner: Send + Sync {
    fn name(&self) -> &str;
    fn demographic_encoding(&self) -> DemographicEncoding;
    fn fit(
        &self,
        x: &SparseFeatureMatrix,
        y: &[bool],
        folds: usize,
        seed: u64,
    ) -> Result<Box<dyn Classifier>, LearnerError>;
}

/// Features used by a fitted model: nonzero influence for boosted trees,
/// nonzero coefficients for the elastic net.
pub fn embedded_feature_screen(model: &dyn Classifier) -> BTreeSet<usize> {
    model.screened_features()
}

pub fn relative_influence(model: &dyn Classifier) -> Option<InfluenceReport> {
    model
        .raw_influence()
        .map(|raw| InfluenceReport::from_raw(&raw, model.features()))
}
