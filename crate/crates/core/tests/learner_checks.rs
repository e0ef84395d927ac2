use mlho::evaluation::auc_roc;
use mlho::learners::{
    bernoulli_deviance, deviance_gradient, fit_elastic_net_path, fit_gbm, lambda_max, relative_influence,
    stratified_folds, Classifier, ElasticNetModel, GbmGrid, GbmLearner, GbmParams, LambdaPath, Learner,
};
use mlho::tspm::{FeatureDescriptor, SparseFeatureMatrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dense_matrix(rows: &[Vec<f64>]) -> SparseFeatureMatrix {
    let p = rows[0].len();
    let sparse = rows
        .iter()
        .map(|r| r.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(j, &v)| (j as u32, v)).collect())
        .collect();
    SparseFeatureMatrix::from_rows(
        (0..p).map(|j| FeatureDescriptor::raw(format!("C{j:02}"))).collect(),
        (0..rows.len()).map(|i| format!("p{i:04}")).collect(),
        sparse,
    )
    .unwrap()
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

fn noise(n: usize, p: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = (0..n)
        .map(|_| (0..p).map(|_| if rng.random_bool(0.3) { rng.random_range(1..4) as f64 } else { 0.0 }).collect())
        .collect();
    let y = (0..n).map(|_| rng.random_bool(0.4)).collect();
    (x, y)
}

#[test]
fn gradient_matches_finite_difference() {
    let y = [true, false, true, true, false];
    let f = [0.3, -1.2, 2.5, -0.4, 0.0];
    let g = deviance_gradient(&y, &f);
    let n = y.len() as f64;
    let h = 1e-6;
    for i in 0..y.len() {
        let (mut up, mut down) = (f, f);
        up[i] += h;
        down[i] -= h;
        // Mean deviance is (2/n) times the summed loss.
        let numeric = (bernoulli_deviance(&y, &up) - bernoulli_deviance(&y, &down)) / (2.0 * h) * n / 2.0;
        assert!((numeric + g[i]).abs() < 1e-7, "row {i}: {numeric} vs {}", -g[i]);
    }
}

#[test]
fn single_signal_gets_all_influence() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rows: Vec<Vec<f64>> = (0..300).map(|_| vec![1.0, if rng.random_bool(0.5) { 1.0 } else { 0.0 }, 2.0]).collect();
    let y: Vec<bool> = rows.iter().map(|r| if r[1] == 1.0 { rng.random_bool(0.8) } else { rng.random_bool(0.2) }).collect();
    let model = fit_gbm(&dense_matrix(&rows), &y, &GbmParams::default(), 1).unwrap();
    let report = relative_influence(&model).unwrap();
    assert_eq!(report.entries.len(), 1);
    assert_eq!(report.entries[0].feature, 1);
    assert_eq!(report.entries[0].influence, 100.0);
}

#[test]
fn noise_cross_validated_auc_near_chance() {
    let (rows, y) = noise(500, 15, 9);
    let x = dense_matrix(&rows);
    let (assignment, k) = stratified_folds(&y, 5, 3);
    let mut scores = vec![0.0; y.len()];
    let learner = GbmLearner::new(GbmGrid::single(GbmParams::default()));
    for fold in 0..k {
        let train: Vec<usize> = (0..y.len()).filter(|&i| assignment[i] != fold).collect();
        let test: Vec<usize> = (0..y.len()).filter(|&i| assignment[i] == fold).collect();
        let y_train: Vec<bool> = train.iter().map(|&i| y[i]).collect();
        let model = learner.fit(&x.select_rows(&train), &y_train, 3, fold as u64).unwrap();
        for (&i, p) in test.iter().zip(model.predict_proba(&x.select_rows(&test)).unwrap()) {
            scores[i] = p;
        }
    }
    let auc = auc_roc(&scores, &y).unwrap().auc;
    assert!((0.4..=0.6).contains(&auc), "noise AUC {auc}");
}

#[test]
fn row_order_does_not_matter_without_bagging() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let rows: Vec<Vec<f64>> = (0..200)
        .map(|_| (0..4).map(|_| if rng.random_bool(0.5) { rng.random_range(1..50) as f64 } else { 0.0 }).collect())
        .collect();
    let y: Vec<bool> = rows.iter().map(|r| rng.random_bool(sigmoid(0.05 * r[0] - 0.04 * r[2]))).collect();
    let params = GbmParams {
        bag_fraction: 1.0,
        ..GbmParams::default()
    };
    let perm: Vec<usize> = (0..rows.len()).rev().collect();
    let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
    let y_perm: Vec<bool> = perm.iter().map(|&i| y[i]).collect();
    let a = fit_gbm(&dense_matrix(&rows), &y, &params, 1).unwrap();
    let b = fit_gbm(&dense_matrix(&permuted), &y_perm, &params, 2).unwrap();
    let probe = dense_matrix(&rows);
    for (pa, pb) in a.predict_proba(&probe).unwrap().iter().zip(b.predict_proba(&probe).unwrap()) {
        assert!((pa - pb).abs() < 1e-9);
    }
}

/// Stationarity conditions recomputed densely from the fitted model.
fn dense_kkt(model: &ElasticNetModel, rows: &[Vec<f64>], y: &[bool]) -> f64 {
    let n = rows.len() as f64;
    let (means, scales) = model.standardization();
    let beta = model.coefficients();
    let resid: Vec<f64> = rows
        .iter()
        .zip(y)
        .map(|(r, &yi)| {
            let eta = model.intercept() + r.iter().zip(beta).map(|(x, b)| x * b).sum::<f64>();
            f64::from(u8::from(yi)) - sigmoid(eta)
        })
        .collect();
    let (l, a) = (model.lambda(), model.alpha());
    let mut worst = (resid.iter().sum::<f64>() / n).abs();
    for j in 0..beta.len() {
        if scales[j] == 0.0 {
            continue;
        }
        let score: f64 = rows.iter().zip(&resid).map(|(r, e)| e * (r[j] - means[j]) / scales[j]).sum::<f64>() / n;
        let b = beta[j] * scales[j];
        let v = if b == 0.0 {
            (score.abs() - l * a).max(0.0)
        } else {
            (score - l * a * b.signum() - l * (1.0 - a) * b).abs()
        };
        worst = worst.max(v);
    }
    worst
}

fn signal(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..6).map(|_| if rng.random_bool(0.4) { rng.random_range(1..3) as f64 } else { 0.0 }).collect())
        .collect();
    let y = rows.iter().map(|r| rng.random_bool(sigmoid(-0.5 + 1.2 * r[0] - 0.8 * r[3]))).collect();
    (rows, y)
}

#[test]
fn elastic_net_path_satisfies_kkt() {
    let (rows, y) = signal(300, 5);
    let path = LambdaPath::Auto { n_lambda: 12, ratio: 0.01 };
    for alpha in [0.2, 0.5, 1.0] {
        for model in fit_elastic_net_path(&dense_matrix(&rows), &y, alpha, &path).unwrap() {
            let v = dense_kkt(&model, &rows, &y);
            assert!(v < 1e-5, "alpha {alpha} lambda {}: violation {v}", model.lambda());
        }
    }
}

#[test]
fn lambda_max_is_the_first_active_point() {
    let (rows, y) = signal(300, 6);
    let x = dense_matrix(&rows);
    let lmax = lambda_max(&x, &y, 0.5).unwrap();
    let models = fit_elastic_net_path(&x, &y, 0.5, &LambdaPath::Explicit(vec![lmax * 1.001, lmax * 0.95])).unwrap();
    assert!(models[0].coefficients().iter().all(|&b| b == 0.0));
    assert!(models[1].coefficients().iter().any(|&b| b != 0.0));
}

#[test]
fn duplicate_columns_share_weight() {
    let (mut rows, y) = signal(300, 7);
    for r in &mut rows {
        r.push(r[0]);
    }
    let x = dense_matrix(&rows);
    let lmax = lambda_max(&x, &y, 0.5).unwrap();
    let model = fit_elastic_net_path(&x, &y, 0.5, &LambdaPath::Explicit(vec![0.05 * lmax])).unwrap().remove(0);
    let b = model.coefficients();
    assert!(b[0] > 0.0);
    assert!((b[0] - b[6]).abs() < 1e-6 * b[0].abs().max(1.0), "{} vs {}", b[0], b[6]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn training_deviance_never_increases(seed in any::<u64>(), shrinkage in 0.05f64..1.0, depth in 1usize..4) {
        let (rows, y) = noise(80, 5, seed);
        prop_assume!(y.iter().any(|&v| v) && y.iter().any(|&v| !v));
        let params = GbmParams { n_trees: 30, shrinkage, max_depth: depth, bag_fraction: 0.5, min_leaf: 3 };
        let model = fit_gbm(&dense_matrix(&rows), &y, &params, seed).unwrap();
        let trace = model.deviance_trace();
        prop_assert_eq!(trace.len(), params.n_trees + 1);
        prop_assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    }
}
