//! Elastic-net penalized logistic regression fitted by iteratively
//! reweighted least squares with cyclic coordinate descent, on internally
//! standardized features.

use std::collections::BTreeSet;

use super::{check_dictionary, check_training, sigmoid, stratified_folds, Classifier, Learner, LearnerError};
use crate::learners::bernoulli_deviance;
use crate::seed::derive_seed;
use crate::tspm::{ColumnMajor, DemographicEncoding, FeatureDescriptor, SparseFeatureMatrix};

const MIN_WEIGHT: f64 = 1e-5;
const INNER_TOL: f64 = 1e-10;
const OUTER_TOL: f64 = 1e-9;
const MAX_OUTER: usize = 100;
const MAX_INNER: usize = 10_000;
/// Relative slack in the soft-threshold test, so a score sitting exactly on
/// the boundary does not produce a coefficient of rounding-error size.
const THRESHOLD_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub enum LambdaPath {
    /// Geometric sequence from the data's λ_max down to `ratio · λ_max`.
    Auto { n_lambda: usize, ratio: f64 },
    /// Explicit values, used in decreasing order.
    Explicit(Vec<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LambdaRule {
    /// Smallest mean held-out deviance.
    #[default]
    Min,
    /// Largest λ within one standard error of the minimum.
    OneSe,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElasticNetParams {
    pub alpha: f64,
    pub path: LambdaPath,
    pub rule: LambdaRule,
}

impl Default for ElasticNetParams {
    fn default() -> Self {
        ElasticNetParams {
            alpha: 0.5,
            path: LambdaPath::Auto {
                n_lambda: 30,
                ratio: 0.01,
            },
            rule: LambdaRule::Min,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElasticNetModel {
    features: Vec<FeatureDescriptor>,
    alpha: f64,
    lambda: f64,
    intercept: f64,
    coefficients: Vec<f64>,
    standardized: Vec<f64>,
    means: Vec<f64>,
    scales: Vec<f64>,
}

impl ElasticNetModel {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Intercept on the original feature scale.
    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    /// Coefficients on the original feature scale.
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn standardized_coefficients(&self) -> &[f64] {
        &self.standardized
    }

    /// Training mean and population standard deviation per feature; a zero
    /// scale marks a constant feature that is left out of the fit.
    pub fn standardization(&self) -> (&[f64], &[f64]) {
        (&self.means, &self.scales)
    }

    pub fn decision_function(&self, x: &SparseFeatureMatrix) -> Result<Vec<f64>, LearnerError> {
        check_dictionary(&self.features, x)?;
        Ok(x.rows()
            .map(|(idx, vals)| {
                self.intercept
                    + idx
                        .iter()
                        .zip(vals)
                        .map(|(&j, &v)| self.coefficients[j as usize] * v)
                        .sum::<f64>()
            })
            .collect())
    }
}

impl Classifier for ElasticNetModel {
    fn family(&self) -> &str {
        "elastic_net"
    }

    fn features(&self) -> &[FeatureDescriptor] {
        &self.features
    }

    fn predict_proba(&self, x: &SparseFeatureMatrix) -> Result<Vec<f64>, LearnerError> {
        Ok(self.decision_function(x)?.into_iter().map(sigmoid).collect())
    }

    fn screened_features(&self) -> BTreeSet<usize> {
        self.coefficients
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0.0)
            .map(|(j, _)| j)
            .collect()
    }
}

struct Standardized {
    columns: ColumnMajor,
    means: Vec<f64>,
    scales: Vec<f64>,
    y: Vec<f64>,
    n: usize,
}

impl Standardized {
    fn new(x: &SparseFeatureMatrix, y: &[bool]) -> Standardized {
        let n = x.n_rows();
        let columns = x.to_column_major();
        let mut means = Vec::with_capacity(x.n_features());
        let mut scales = Vec::with_capacity(x.n_features());
        for j in 0..x.n_features() {
            let (_, vals) = columns.column(j);
            let mean = vals.iter().sum::<f64>() / n as f64;
            let second = vals.iter().map(|v| v * v).sum::<f64>() / n as f64;
            let var = (second - mean * mean).max(0.0);
            let sd = var.sqrt();
            means.push(mean);
            scales.push(if sd > 1e-12 * mean.abs().max(1.0) { sd } else { 0.0 });
        }
        Standardized {
            columns,
            means,
            scales,
            y: y.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
            n,
        }
    }

    fn active(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.scales.len()).filter(|&j| self.scales[j] > 0.0)
    }

    /// Linear predictor on the standardized scale.
    fn eta(&self, b0: f64, beta: &[f64]) -> Vec<f64> {
        let shift: f64 = self
            .active()
            .map(|j| beta[j] * self.means[j] / self.scales[j])
            .sum();
        let mut eta = vec![b0 - shift; self.n];
        for j in self.active() {
            if beta[j] == 0.0 {
                continue;
            }
            let (rows, vals) = self.columns.column(j);
            for (&i, &v) in rows.iter().zip(vals) {
                eta[i as usize] += beta[j] * v / self.scales[j];
            }
        }
        eta
    }

    /// `(1/n) Σ_i (y_i − p_i) z_ij` for every feature; zero for constants.
    fn scores(&self, eta: &[f64]) -> Vec<f64> {
        let resid: Vec<f64> = eta.iter().zip(&self.y).map(|(&e, &y)| y - sigmoid(e)).collect();
        let total: f64 = resid.iter().sum();
        (0..self.scales.len())
            .map(|j| {
                if self.scales[j] == 0.0 {
                    return 0.0;
                }
                let (rows, vals) = self.columns.column(j);
                let dot: f64 = rows.iter().zip(vals).map(|(&i, &v)| resid[i as usize] * v).sum();
                (dot - self.means[j] * total) / (self.n as f64 * self.scales[j])
            })
            .collect()
    }

    fn objective(&self, eta: &[f64], beta: &[f64], lambda: f64, alpha: f64) -> f64 {
        let nll: f64 = eta
            .iter()
            .zip(&self.y)
            .map(|(&e, &y)| {
                let sp = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
                sp - y * e
            })
            .sum::<f64>()
            / self.n as f64;
        let l1: f64 = beta.iter().map(|b| b.abs()).sum();
        let l2: f64 = beta.iter().map(|b| b * b).sum();
        nll + lambda * ((1.0 - alpha) / 2.0 * l2 + alpha * l1)
    }
}

fn soft_threshold(g: f64, t: f64) -> f64 {
    if g.abs() <= t * (1.0 + THRESHOLD_SLACK) {
        0.0
    } else {
        g - t * g.signum()
    }
}

/// Minimizes the penalized objective at one λ, starting from `(b0, beta)`.
fn solve(data: &Standardized, lambda: f64, alpha: f64, b0: &mut f64, beta: &mut [f64]) {
    let n = data.n as f64;
    let active: Vec<usize> = data.active().collect();
    let mut eta = data.eta(*b0, beta);
    let mut objective = data.objective(&eta, beta, lambda, alpha);
    let mut wx = vec![0.0; beta.len()];
    let mut quad = vec![0.0; beta.len()];
    for _ in 0..MAX_OUTER {
        let p: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let w: Vec<f64> = p.iter().map(|&pi| (pi * (1.0 - pi)).max(MIN_WEIGHT)).collect();
        // Residual of the working response is `rs_i + shift`; updates to a
        // standardized coordinate touch `rs` only on the column's nonzeros.
        let mut rs: Vec<f64> = (0..data.n).map(|i| (data.y[i] - p[i]) / w[i]).collect();
        let mut shift = 0.0;
        let sw: f64 = w.iter().sum();
        let mut wr: f64 = w.iter().zip(&rs).map(|(a, b)| a * b).sum();
        for &j in &active {
            let (rows, vals) = data.columns.column(j);
            let (mut sx, mut sxx) = (0.0, 0.0);
            for (&i, &v) in rows.iter().zip(vals) {
                sx += w[i as usize] * v;
                sxx += w[i as usize] * v * v;
            }
            let (mu, s) = (data.means[j], data.scales[j]);
            wx[j] = sx;
            quad[j] = (sxx - 2.0 * mu * sx + mu * mu * sw) / (n * s * s);
        }
        let old_b0 = *b0;
        let old_beta = beta.to_vec();
        let update = |j: usize, b0: &mut f64, beta: &mut [f64], rs: &mut [f64], shift: &mut f64, wr: &mut f64| -> f64 {
            let (rows, vals) = data.columns.column(j);
            let (mu, s) = (data.means[j], data.scales[j]);
            let dot: f64 = rows.iter().zip(vals).map(|(&i, &v)| w[i as usize] * v * rs[i as usize]).sum();
            let grad = (dot + *shift * wx[j] - mu * *wr) / (n * s);
            let g = grad + quad[j] * beta[j];
            let next = soft_threshold(g, lambda * alpha) / (quad[j] + lambda * (1.0 - alpha));
            let delta = next - beta[j];
            if delta != 0.0 {
                beta[j] = next;
                for (&i, &v) in rows.iter().zip(vals) {
                    rs[i as usize] -= delta * v / s;
                }
                *shift += delta * mu / s;
                *wr -= delta * (wx[j] - mu * sw) / s;
            }
            // Intercept absorbs the weighted mean residual.
            let d0 = *wr / sw;
            *b0 += d0;
            *shift -= d0;
            *wr = 0.0;
            quad[j] * delta * delta
        };
        let mut inner = 0;
        loop {
            let mut change = 0.0f64;
            for &j in &active {
                change = change.max(update(j, b0, beta, &mut rs, &mut shift, &mut wr));
            }
            if active.is_empty() {
                let d0 = wr / sw;
                *b0 += d0;
                wr = 0.0;
            }
            inner += 1;
            if change < INNER_TOL || inner >= MAX_INNER {
                break;
            }
            // Sweep the nonzero coordinates until they settle, then recheck all.
            let nonzero: Vec<usize> = active.iter().copied().filter(|&j| beta[j] != 0.0).collect();
            loop {
                let mut c = 0.0f64;
                for &j in &nonzero {
                    c = c.max(update(j, b0, beta, &mut rs, &mut shift, &mut wr));
                }
                inner += 1;
                if c < INNER_TOL || inner >= MAX_INNER {
                    break;
                }
            }
        }
        let mut next_eta = data.eta(*b0, beta);
        let mut next_obj = data.objective(&next_eta, beta, lambda, alpha);
        // Step halving if the Newton step overshoots.
        let mut halvings = 0;
        while next_obj > objective + 1e-15 * objective.abs() && halvings < 30 {
            *b0 = 0.5 * (*b0 + old_b0);
            for (b, o) in beta.iter_mut().zip(&old_beta) {
                *b = 0.5 * (*b + o);
            }
            next_eta = data.eta(*b0, beta);
            next_obj = data.objective(&next_eta, beta, lambda, alpha);
            halvings += 1;
        }
        let moved = beta
            .iter()
            .zip(&old_beta)
            .map(|(a, b)| (a - b).abs())
            .fold((*b0 - old_b0).abs(), f64::max);
        eta = next_eta;
        objective = next_obj;
        if moved < OUTER_TOL {
            break;
        }
    }
}

/// Smallest λ at which every standardized coefficient is zero, for
/// `α ≥ 0.001`; smaller α use 0.001 in the denominator.
pub fn lambda_max(x: &SparseFeatureMatrix, y: &[bool], alpha: f64) -> Result<f64, LearnerError> {
    check_training(x, y)?;
    let data = Standardized::new(x, y);
    Ok(lambda_max_of(&data, alpha))
}

fn lambda_max_of(data: &Standardized, alpha: f64) -> f64 {
    let prevalence = data.y.iter().sum::<f64>() / data.n as f64;
    let b0 = (prevalence / (1.0 - prevalence)).ln();
    let scores = data.scores(&vec![b0; data.n]);
    scores.iter().fold(0.0f64, |m, s| m.max(s.abs())) / alpha.max(1e-3)
}

fn lambdas(data: &Standardized, alpha: f64, path: &LambdaPath) -> Result<Vec<f64>, LearnerError> {
    match path {
        LambdaPath::Auto { n_lambda, ratio } => {
            if *n_lambda == 0 || !(*ratio > 0.0 && *ratio < 1.0) {
                return Err(LearnerError::InvalidParameter(format!(
                    "lambda path with {n_lambda} values and ratio {ratio}"
                )));
            }
            let top = lambda_max_of(data, alpha);
            if top == 0.0 {
                return Ok(vec![0.0]);
            }
            if *n_lambda == 1 {
                return Ok(vec![top]);
            }
            let step = ratio.ln() / (*n_lambda - 1) as f64;
            Ok((0..*n_lambda).map(|k| top * (step * k as f64).exp()).collect())
        }
        LambdaPath::Explicit(values) => {
            if values.is_empty() || values.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
                return Err(LearnerError::InvalidParameter("lambda values must be finite and non-negative".into()));
            }
            let mut v = values.clone();
            v.sort_by(|a, b| b.total_cmp(a));
            Ok(v)
        }
    }
}

fn fit_path_on(
    x: &SparseFeatureMatrix,
    data: &Standardized,
    alpha: f64,
    lambdas: &[f64],
) -> Vec<ElasticNetModel> {
    let p = x.n_features();
    let prevalence = data.y.iter().sum::<f64>() / data.n as f64;
    let mut b0 = (prevalence / (1.0 - prevalence)).ln();
    let mut beta = vec![0.0; p];
    lambdas
        .iter()
        .map(|&lambda| {
            solve(data, lambda, alpha, &mut b0, &mut beta);
            let coefficients: Vec<f64> = (0..p)
                .map(|j| if data.scales[j] > 0.0 { beta[j] / data.scales[j] } else { 0.0 })
                .collect();
            let intercept = b0 - (0..p).map(|j| coefficients[j] * data.means[j]).sum::<f64>();
            ElasticNetModel {
                features: x.features().to_vec(),
                alpha,
                lambda,
                intercept,
                coefficients,
                standardized: beta.clone(),
                means: data.means.clone(),
                scales: data.scales.clone(),
            }
        })
        .collect()
}

fn check_alpha(alpha: f64) -> Result<(), LearnerError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(LearnerError::InvalidParameter(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(())
}

/// Fits the whole λ path with warm starts, largest λ first.
pub fn fit_elastic_net_path(
    x: &SparseFeatureMatrix,
    y: &[bool],
    alpha: f64,
    path: &LambdaPath,
) -> Result<Vec<ElasticNetModel>, LearnerError> {
    check_training(x, y)?;
    check_alpha(alpha)?;
    let data = Standardized::new(x, y);
    let lambdas = lambdas(&data, alpha, path)?;
    Ok(fit_path_on(x, &data, alpha, &lambdas))
}

/// Fits the path and picks λ by cross-validated held-out deviance.
pub fn fit_elastic_net(
    x: &SparseFeatureMatrix,
    y: &[bool],
    params: &ElasticNetParams,
    folds: usize,
    seed: u64,
) -> Result<ElasticNetModel, LearnerError> {
    check_training(x, y)?;
    check_alpha(params.alpha)?;
    let data = Standardized::new(x, y);
    let lambdas = lambdas(&data, params.alpha, &params.path)?;
    let mut path = fit_path_on(x, &data, params.alpha, &lambdas);
    let (assignment, k) = stratified_folds(y, folds, derive_seed(seed, &[0]));
    if k < 2 || lambdas.len() == 1 {
        return Ok(path.pop().expect("non-empty path"));
    }
    let fold_ids: Vec<usize> = (0..k).collect();
    let per_fold = crate::par_map(&fold_ids, |&fold| {
        let train: Vec<usize> = (0..y.len()).filter(|&i| assignment[i] != fold).collect();
        let test: Vec<usize> = (0..y.len()).filter(|&i| assignment[i] == fold).collect();
        let y_train: Vec<bool> = train.iter().map(|&i| y[i]).collect();
        let y_test: Vec<bool> = test.iter().map(|&i| y[i]).collect();
        let x_train = x.select_rows(&train);
        let x_test = x.select_rows(&test);
        let fold_data = Standardized::new(&x_train, &y_train);
        fit_path_on(&x_train, &fold_data, params.alpha, &lambdas)
            .iter()
            .map(|m| bernoulli_deviance(&y_test, &m.decision_function(&x_test).expect("same dictionary")))
            .collect::<Vec<f64>>()
    });
    let kf = k as f64;
    let mean: Vec<f64> = (0..lambdas.len())
        .map(|l| per_fold.iter().map(|d| d[l]).sum::<f64>() / kf)
        .collect();
    let best = (0..lambdas.len()).fold(0, |b, l| if mean[l] < mean[b] { l } else { b });
    let chosen = match params.rule {
        LambdaRule::Min => best,
        LambdaRule::OneSe => {
            let var = per_fold.iter().map(|d| (d[best] - mean[best]).powi(2)).sum::<f64>() / (kf - 1.0);
            let se = (var / kf).sqrt();
            (0..=best).find(|&l| mean[l] <= mean[best] + se).unwrap_or(best)
        }
    };
    Ok(path.swap_remove(chosen))
}

/// Largest violation of the stationarity conditions at `model` on its
/// training data, measured on the standardized scale: `|score_j| − λα` for
/// zero coefficients, `|score_j − λα·sign(β_j) − λ(1−α)β_j|` for nonzero
/// ones, and the mean residual for the intercept.
pub fn kkt_violation(model: &ElasticNetModel, x: &SparseFeatureMatrix, y: &[bool]) -> Result<f64, LearnerError> {
    check_training(x, y)?;
    check_dictionary(&model.features, x)?;
    let data = Standardized::new(x, y);
    let eta = data.eta(model.intercept_standardized(), &model.standardized);
    let scores = data.scores(&eta);
    let (l, a) = (model.lambda, model.alpha);
    let mut worst = (eta.iter().zip(&data.y).map(|(&e, &yi)| yi - sigmoid(e)).sum::<f64>() / data.n as f64).abs();
    for j in data.active() {
        let b = model.standardized[j];
        let v = if b == 0.0 {
            (scores[j].abs() - l * a).max(0.0)
        } else {
            (scores[j] - l * a * b.signum() - l * (1.0 - a) * b).abs()
        };
        worst = worst.max(v);
    }
    Ok(worst)
}

impl ElasticNetModel {
    fn intercept_standardized(&self) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(&self.means)
                .map(|(b, m)| b * m)
                .sum::<f64>()
    }
}

#[derive(Clone, Debug, Default)]
pub struct ElasticNetLearner {
    pub params: ElasticNetParams,
}

impl ElasticNetLearner {
    pub fn new(params: ElasticNetParams) -> Self {
        ElasticNetLearner { params }
    }
}

impl Learner for ElasticNetLearner {
    fn name(&self) -> &str {
        "elastic_net"
    }

    fn demographic_encoding(&self) -> DemographicEncoding {
        DemographicEncoding::DropFirst
    }

    fn fit(
        &self,
        x: &SparseFeatureMatrix,
        y: &[bool],
        folds: usize,
        seed: u64,
    ) -> Result<Box<dyn Classifier>, LearnerError> {
        Ok(Box::new(fit_elastic_net(x, y, &self.params, folds, seed)?))
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

    fn signal_data() -> (SparseFeatureMatrix, Vec<bool>) {
        let rows: Vec<Vec<(u32, f64)>> = (0..80)
            .map(|i| {
                let mut r = Vec::new();
                if i % 2 == 0 {
                    r.push((0, 1.0));
                }
                if i % 5 < 2 {
                    r.push((1, 2.0));
                }
                if i % 7 == 0 {
                    r.push((2, 1.0));
                }
                r
            })
            .collect();
        let y = (0..80).map(|i| (i % 2 == 0) != (i % 9 == 0)).collect();
        (matrix(rows, 4), y)
    }

    #[test]
    fn lambda_max_zeroes_everything() {
        let (x, y) = signal_data();
        let top = lambda_max(&x, &y, 0.5).unwrap();
        let path = fit_elastic_net_path(&x, &y, 0.5, &LambdaPath::Explicit(vec![top])).unwrap();
        let m = &path[0];
        assert!(m.coefficients().iter().all(|&b| b == 0.0));
        let prevalence = y.iter().filter(|&&v| v).count() as f64 / y.len() as f64;
        assert!((m.intercept() - (prevalence / (1.0 - prevalence)).ln()).abs() < 1e-9);
        assert!(m.screened_features().is_empty());
    }

    #[test]
    fn path_satisfies_kkt_and_shrinks() {
        let (x, y) = signal_data();
        for alpha in [1.0, 0.5, 0.1] {
            let path = fit_elastic_net_path(&x, &y, alpha, &LambdaPath::Auto { n_lambda: 15, ratio: 0.01 }).unwrap();
            let mut last_l1 = 0.0;
            for m in &path {
                assert!(kkt_violation(m, &x, &y).unwrap() <= 1e-4, "alpha {alpha} lambda {}", m.lambda());
                let l1: f64 = m.standardized_coefficients().iter().map(|b| b.abs()).sum();
                assert!(l1 + 1e-9 >= last_l1);
                last_l1 = l1;
            }
            assert!(path.last().unwrap().coefficients()[0] > 0.0);
            // Constant column stays out of the model.
            assert!(path.iter().all(|m| m.coefficients()[3] == 0.0));
        }
    }

    #[test]
    fn original_scale_predictions_match_standardized() {
        let (x, y) = signal_data();
        let path = fit_elastic_net_path(&x, &y, 0.5, &LambdaPath::Explicit(vec![0.01])).unwrap();
        let m = &path[0];
        let data = Standardized::new(&x, &y);
        let eta = data.eta(m.intercept_standardized(), m.standardized_coefficients());
        for (a, b) in eta.iter().zip(m.decision_function(&x).unwrap()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn invalid_alpha_is_rejected() {
        let (x, y) = signal_data();
        assert!(matches!(
            fit_elastic_net_path(&x, &y, 1.5, &LambdaPath::Explicit(vec![0.1])),
            Err(LearnerError::InvalidParameter(_))
        ));
    }
}
