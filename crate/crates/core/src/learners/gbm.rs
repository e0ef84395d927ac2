//! Stochastic gradient boosting for the Bernoulli deviance.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tree::{Binning, RegressionTree, TreeBuilder, TreeParams};
use super::{check_dictionary, check_training, sigmoid, stratified_folds, Classifier, Learner, LearnerError};
use crate::seed::derive_seed;
use crate::tspm::{DemographicEncoding, FeatureDescriptor, SparseFeatureMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct GbmParams {
    pub n_trees: usize,
    pub shrinkage: f64,
    pub max_depth: usize,
    pub bag_fraction: f64,
    pub min_leaf: usize,
}

impl Default for GbmParams {
    fn default() -> Self {
        GbmParams {
            n_trees: 100,
            shrinkage: 0.1,
            max_depth: 2,
            bag_fraction: 0.5,
            min_leaf: 10,
        }
    }
}

impl GbmParams {
    fn validate(&self) -> Result<(), LearnerError> {
        if !(self.bag_fraction > 0.0 && self.bag_fraction <= 1.0) {
            return Err(LearnerError::InvalidParameter(format!(
                "bag_fraction {} outside (0, 1]",
                self.bag_fraction
            )));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage.is_finite()) {
            return Err(LearnerError::InvalidParameter(format!("shrinkage {}", self.shrinkage)));
        }
        Ok(())
    }
}

/// Mean Bernoulli deviance `(2/n) Σ [ln(1 + e^F) − y F]` of raw scores `f`.
pub fn bernoulli_deviance(y: &[bool], f: &[f64]) -> f64 {
    let total: f64 = y
        .iter()
        .zip(f)
        .map(|(&yi, &fi)| softplus(fi) - if yi { fi } else { 0.0 })
        .sum();
    2.0 * total / y.len() as f64
}

/// Negative gradient of `Σ [ln(1 + e^F) − y F]` with respect to each `F_i`,
/// which is `y_i − p_i`. These are the residuals each tree is fitted to.
pub fn deviance_gradient(y: &[bool], f: &[f64]) -> Vec<f64> {
    y.iter()
        .zip(f)
        .map(|(&yi, &fi)| if yi { 1.0 } else { 0.0 } - sigmoid(fi))
        .collect()
}

/// [`bernoulli_deviance`] that also writes `σ(F_i)` into `prob`, sharing one
/// exponential per row.
fn deviance_and_probabilities(y: &[bool], f: &[f64], prob: &mut [f64]) -> f64 {
    let mut total = 0.0;
    for ((&yi, &fi), p) in y.iter().zip(f).zip(prob.iter_mut()) {
        let e = (-fi.abs()).exp();
        total += fi.max(0.0) + e.ln_1p() - if yi { fi } else { 0.0 };
        *p = if fi >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
    }
    2.0 * total / y.len() as f64
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GbmModel {
    features: Vec<FeatureDescriptor>,
    initial_score: f64,
    shrinkage: f64,
    bag_fraction: f64,
    iterations: usize,
    /// Accepted trees with the iteration at which each was added.
    trees: Vec<(usize, RegressionTree)>,
    influence: Vec<f64>,
    deviance_trace: Vec<f64>,
    rejected: usize,
}

impl GbmModel {
    pub fn initial_score(&self) -> f64 {
        self.initial_score
    }

    pub fn shrinkage(&self) -> f64 {
        self.shrinkage
    }

    pub fn bag_fraction(&self) -> f64 {
        self.bag_fraction
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn trees(&self) -> impl Iterator<Item = &RegressionTree> {
        self.trees.iter().map(|(_, t)| t)
    }

    /// Training deviance before the first iteration and after each one.
    pub fn deviance_trace(&self) -> &[f64] {
        &self.deviance_trace
    }

    /// Iterations whose tree would have raised the training deviance.
    pub fn rejected_trees(&self) -> usize {
        self.rejected
    }

    /// Sum over iterations of split improvements per feature, divided by the
    /// iteration count.
    pub fn influence_accumulators(&self) -> &[f64] {
        &self.influence
    }

    /// Raw scores after `stages[k]` iterations, for each requested stage.
    pub fn decision_staged(&self, x: &SparseFeatureMatrix, stages: &[usize]) -> Result<Vec<Vec<f64>>, LearnerError> {
        check_dictionary(&self.features, x)?;
        let mut out = vec![vec![self.initial_score; x.n_rows()]; stages.len()];
        for (i, (idx, vals)) in x.rows().enumerate() {
            let mut f = self.initial_score;
            let mut tree_at = 0;
            let mut order: Vec<usize> = (0..stages.len()).collect();
            order.sort_by_key(|&k| stages[k]);
            for k in order {
                while tree_at < self.trees.len() && self.trees[tree_at].0 < stages[k] {
                    f += self.shrinkage * self.trees[tree_at].1.predict_row(idx, vals);
                    tree_at += 1;
                }
                out[k][i] = f;
            }
        }
        Ok(out)
    }

    pub fn decision_function(&self, x: &SparseFeatureMatrix) -> Result<Vec<f64>, LearnerError> {
        Ok(self.decision_staged(x, &[usize::MAX])?.remove(0))
    }
}

impl Classifier for GbmModel {
    fn family(&self) -> &str {
        "gbm"
    }

    fn features(&self) -> &[FeatureDescriptor] {
        &self.features
    }

    fn predict_proba(&self, x: &SparseFeatureMatrix) -> Result<Vec<f64>, LearnerError> {
        Ok(self.decision_function(x)?.into_iter().map(sigmoid).collect())
    }

    fn screened_features(&self) -> BTreeSet<usize> {
        self.influence
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(j, _)| j)
            .collect()
    }

    fn raw_influence(&self) -> Option<Vec<f64>> {
        Some(self.influence.clone())
    }
}

pub fn fit_gbm(x: &SparseFeatureMatrix, y: &[bool], params: &GbmParams, seed: u64) -> Result<GbmModel, LearnerError> {
    check_training(x, y)?;
    params.validate()?;
    let n = x.n_rows();
    let positives = y.iter().filter(|&&v| v).count() as f64;
    let initial_score = (positives / (n as f64 - positives)).ln();
    let bins = Binning::new(x);
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
    };
    let bag = ((params.bag_fraction * n as f64).floor() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = vec![initial_score; n];
    let mut prob = vec![0.0; n];
    let mut deviance = deviance_and_probabilities(y, &f, &mut prob);
    let mut trace = vec![deviance];
    let mut trees = Vec::new();
    let mut influence = vec![0.0; x.n_features()];
    let mut rejected = 0;
    let mut candidate = vec![0.0; n];
    let mut candidate_prob = vec![0.0; n];
    let mut residual = vec![0.0; n];
    let mut hessian = vec![0.0; n];
    for m in 0..params.n_trees {
        for i in 0..n {
            let p = prob[i];
            residual[i] = if y[i] { 1.0 } else { 0.0 } - p;
            hessian[i] = p * (1.0 - p);
        }
        let mut rows: Vec<u32> = if bag == n {
            (0..n as u32).collect()
        } else {
            index::sample(&mut rng, n, bag).into_iter().map(|i| i as u32).collect()
        };
        rows.sort_unstable();
        let tree = TreeBuilder::new(x, &bins, &residual, &hessian, &tree_params).grow(&rows);
        if tree.n_splits() == 0 && tree.predict_row(&[], &[]).abs() < 1e-300 {
            trace.push(deviance);
            continue;
        }
        for (i, (idx, vals)) in x.rows().enumerate() {
            candidate[i] = f[i] + params.shrinkage * tree.predict_row(idx, vals);
        }
        let next = deviance_and_probabilities(y, &candidate, &mut candidate_prob);
        if next <= deviance {
            std::mem::swap(&mut f, &mut candidate);
            std::mem::swap(&mut prob, &mut candidate_prob);
            deviance = next;
            tree.accumulate_improvement(&mut influence);
            trees.push((m, tree));
        } else {
            rejected += 1;
        }
        trace.push(deviance);
    }
    if params.n_trees > 0 {
        influence.iter_mut().for_each(|v| *v /= params.n_trees as f64);
    }
    Ok(GbmModel {
        features: x.features().to_vec(),
        initial_score,
        shrinkage: params.shrinkage,
        bag_fraction: params.bag_fraction,
        iterations: params.n_trees,
        trees,
        influence,
        deviance_trace: trace,
        rejected,
    })
}

/// Hyperparameter grid searched by cross-validated held-out deviance.
#[derive(Clone, Debug, PartialEq)]
pub struct GbmGrid {
    pub n_trees: Vec<usize>,
    pub shrinkage: Vec<f64>,
    pub max_depth: Vec<usize>,
    pub bag_fraction: f64,
    pub min_leaf: usize,
}

impl Default for GbmGrid {
    fn default() -> Self {
        GbmGrid {
            n_trees: vec![100, 300],
            shrinkage: vec![0.05, 0.1],
            max_depth: vec![2, 3],
            bag_fraction: 0.5,
            min_leaf: 10,
        }
    }
}

impl GbmGrid {
    pub fn single(params: GbmParams) -> GbmGrid {
        GbmGrid {
            n_trees: vec![params.n_trees],
            shrinkage: vec![params.shrinkage],
            max_depth: vec![params.max_depth],
            bag_fraction: params.bag_fraction,
            min_leaf: params.min_leaf,
        }
    }

    fn validate(&self) -> Result<(), LearnerError> {
        if self.n_trees.is_empty() || self.shrinkage.is_empty() || self.max_depth.is_empty() {
            return Err(LearnerError::InvalidParameter("empty gbm grid".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct GbmLearner {
    pub grid: GbmGrid,
}

impl GbmLearner {
    pub fn new(grid: GbmGrid) -> Self {
        GbmLearner { grid }
    }

    /// Cross-validates the grid and returns the winning parameters. Each
    /// (shrinkage, depth) pair is fitted once per fold at the largest tree
    /// count and scored at every requested count.
    pub fn select(&self, x: &SparseFeatureMatrix, y: &[bool], folds: usize, seed: u64) -> Result<GbmParams, LearnerError> {
        self.grid.validate()?;
        let mut counts = self.grid.n_trees.clone();
        counts.sort_unstable();
        counts.dedup();
        let max_trees = *counts.last().unwrap();
        let pairs: Vec<(f64, usize)> = self
            .grid
            .shrinkage
            .iter()
            .flat_map(|&s| self.grid.max_depth.iter().map(move |&d| (s, d)))
            .collect();
        let params_for = |(shrinkage, max_depth): (f64, usize), n_trees| GbmParams {
            n_trees,
            shrinkage,
            max_depth,
            bag_fraction: self.grid.bag_fraction,
            min_leaf: self.grid.min_leaf,
        };
        let (assignment, k) = stratified_folds(y, folds, seed);
        if k < 2 || (pairs.len() == 1 && counts.len() == 1) {
            return Ok(params_for(pairs[0], counts[0]));
        }
        let jobs: Vec<(usize, usize)> = (0..k).flat_map(|fold| (0..pairs.len()).map(move |c| (fold, c))).collect();
        let results = crate::par_map(&jobs, |&(fold, c)| -> Result<Vec<f64>, LearnerError> {
            let train: Vec<usize> = (0..y.len()).filter(|&i| assignment[i] != fold).collect();
            let test: Vec<usize> = (0..y.len()).filter(|&i| assignment[i] == fold).collect();
            let y_train: Vec<bool> = train.iter().map(|&i| y[i]).collect();
            let y_test: Vec<bool> = test.iter().map(|&i| y[i]).collect();
            let model = fit_gbm(
                &x.select_rows(&train),
                &y_train,
                &params_for(pairs[c], max_trees),
                derive_seed(seed, &[fold as u64, c as u64]),
            )?;
            let staged = model.decision_staged(&x.select_rows(&test), &counts)?;
            Ok(staged.iter().map(|f| bernoulli_deviance(&y_test, f)).collect())
        });
        let mut mean = vec![vec![0.0; counts.len()]; pairs.len()];
        for (&(_, c), r) in jobs.iter().zip(results) {
            for (acc, d) in mean[c].iter_mut().zip(r?) {
                *acc += d / k as f64;
            }
        }
        let mut best = (0, 0, f64::INFINITY);
        for (c, row) in mean.iter().enumerate() {
            for (t, &d) in row.iter().enumerate() {
                if d < best.2 {
                    best = (c, t, d);
                }
            }
        }
        Ok(params_for(pairs[best.0], counts[best.1]))
    }
}

impl Learner for GbmLearner {
    fn name(&self) -> &str {
        "gbm"
    }

    fn demographic_encoding(&self) -> DemographicEncoding {
        DemographicEncoding::OneHot
    }

    fn fit(
        &self,
        x: &SparseFeatureMatrix,
        y: &[bool],
        folds: usize,
        seed: u64,
    ) -> Result<Box<dyn Classifier>, LearnerError> {
        check_training(x, y)?;
        let params = self.select(x, y, folds, seed)?;
        Ok(Box::new(fit_gbm(x, y, &params, derive_seed(seed, &[u64::MAX]))?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: Vec<Vec<(u32, f64)>>, p: usize) -> SparseFeatureMatrix {
        let n = rows.len();
        SparseFeatureMatrix::from_rows(
            (0..p).map(|j| FeatureDescriptor::raw(format!("C{j}"))).collect(),
            (0..n).map(|i| format!("p{i:03}")).collect(),
            rows,
        )
        .unwrap()
    }

    #[test]
    fn stump_matches_newton_step() {
        // Rows: (x=1, y=1), (x=1, y=1), (x=1, y=0), (x=0, y=0).
        let x = matrix(vec![vec![(0, 1.0)], vec![(0, 1.0)], vec![(0, 1.0)], vec![]], 1);
        let y = [true, true, false, false];
        let params = GbmParams {
            n_trees: 1,
            shrinkage: 1.0,
            max_depth: 1,
            bag_fraction: 1.0,
            min_leaf: 1,
        };
        let model = fit_gbm(&x, &y, &params, 0).unwrap();
        // Prevalence 1/2: F0 = 0, residuals ±1/2, hessian 1/4.
        // Right leaf: (1/2 + 1/2 − 1/2) / (3/4) = 2/3; left leaf: −(1/2) / (1/4) = −2.
        let f = model.decision_function(&x).unwrap();
        assert!((f[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((f[3] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_model_predicts_prevalence() {
        let x = matrix(vec![vec![(0, 1.0)], vec![], vec![], vec![]], 1);
        let params = GbmParams {
            n_trees: 0,
            ..GbmParams::default()
        };
        let model = fit_gbm(&x, &[true, false, false, false], &params, 1).unwrap();
        for p in model.predict_proba(&x).unwrap() {
            assert!((p - 0.25).abs() < 1e-12);
        }
        assert!(model.screened_features().is_empty());
    }

    #[test]
    fn single_class_and_bad_bag_are_errors() {
        let x = matrix(vec![vec![], vec![]], 1);
        assert!(matches!(
            fit_gbm(&x, &[true, true], &GbmParams::default(), 0),
            Err(LearnerError::SingleClass)
        ));
        let bad = GbmParams {
            bag_fraction: 0.0,
            ..GbmParams::default()
        };
        assert!(matches!(
            fit_gbm(&x, &[true, false], &bad, 0),
            Err(LearnerError::InvalidParameter(_))
        ));
    }

    #[test]
    fn staged_scores_match_truncated_models() {
        let rows: Vec<Vec<(u32, f64)>> = (0..60)
            .map(|i| {
                let mut r = Vec::new();
                if i % 2 == 0 {
                    r.push((0, 1.0));
                }
                if i % 3 == 0 {
                    r.push((1, (i % 7 + 1) as f64));
                }
                r
            })
            .collect();
        let y: Vec<bool> = (0..60).map(|i| (i % 2 == 0) ^ (i % 5 == 0)).collect();
        let x = matrix(rows, 2);
        let mut params = GbmParams {
            n_trees: 20,
            min_leaf: 2,
            ..GbmParams::default()
        };
        let full = fit_gbm(&x, &y, &params, 9).unwrap();
        let staged = full.decision_staged(&x, &[20, 5]).unwrap();
        assert_eq!(staged[0], full.decision_function(&x).unwrap());
        params.n_trees = 5;
        let short = fit_gbm(&x, &y, &params, 9).unwrap();
        assert_eq!(staged[1], short.decision_function(&x).unwrap());
        assert!(full.deviance_trace().windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn foreign_dictionary_is_rejected() {
        let x = matrix(vec![vec![(0, 1.0)], vec![]], 1);
        let model = fit_gbm(&x, &[true, false], &GbmParams::default(), 0).unwrap();
        let other = matrix(vec![vec![]], 2);
        assert!(matches!(
            model.predict_proba(&other),
            Err(LearnerError::FeatureMismatch(_))
        ));
    }
}
