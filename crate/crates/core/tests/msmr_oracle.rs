use std::collections::HashMap;

use mlho::msmr::{jmi_greedy_select, mi_from_table, mutual_information, run_msmr, MsmrConfig};
use mlho::tspm::{FeatureDescriptor, SparseFeatureMatrix};
use proptest::prelude::*;

fn matrix(columns: &[Vec<bool>]) -> SparseFeatureMatrix {
    let n = columns[0].len();
    let features = (0..columns.len()).map(|j| FeatureDescriptor::raw(format!("c{j}"))).collect();
    let rows = (0..n)
        .map(|i| {
            (0..columns.len())
                .filter(|&j| columns[j][i])
                .map(|j| (j as u32, 1.0))
                .collect()
        })
        .collect();
    SparseFeatureMatrix::from_rows(features, (0..n).map(|i| format!("p{i}")).collect(), rows).unwrap()
}

/// Plug-in entropy in nats of the joint distribution of the given columns.
fn entropy(columns: &[&[bool]]) -> f64 {
    let n = columns[0].len() as f64;
    let mut counts: HashMap<Vec<bool>, f64> = HashMap::new();
    for i in 0..columns[0].len() {
        *counts.entry(columns.iter().map(|c| c[i]).collect()).or_default() += 1.0;
    }
    -counts.values().map(|&c| c / n * (c / n).ln()).sum::<f64>()
}

/// `I(X; Y) = H(X) + H(Y) - H(X, Y)` with X possibly a column tuple.
fn mi(xs: &[&[bool]], y: &[bool]) -> f64 {
    let mut joint = xs.to_vec();
    joint.push(y);
    entropy(xs) + entropy(&[y]) - entropy(&joint)
}

/// Textbook greedy JMI: first pick by MI, then maximise the sum over
/// selected s of I((X_c, X_s); Y), ties to the lowest index.
fn brute_jmi(columns: &[Vec<bool>], y: &[bool], budget: usize) -> Vec<usize> {
    let pick = |scores: Vec<(usize, f64)>| {
        let max = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        scores.iter().find(|s| s.1 >= max - 1e-12 * max.abs().max(1.0)).unwrap().0
    };
    let mut selected = vec![pick((0..columns.len()).map(|j| (j, mi(&[&columns[j]], y))).collect())];
    while selected.len() < budget.min(columns.len()) {
        let scores = (0..columns.len())
            .filter(|c| !selected.contains(c))
            .map(|c| (c, selected.iter().map(|&s| mi(&[&columns[c], &columns[s]], y)).sum()))
            .collect();
        selected.push(pick(scores));
    }
    selected
}

fn bits(s: &str) -> Vec<bool> {
    s.chars().map(|c| c == '1').collect()
}

#[test]
fn closed_forms() {
    let y = bits("00001111");
    assert!((mutual_information(&y, &y) - std::f64::consts::LN_2).abs() < 1e-12);
    assert!(mutual_information(&bits("01010101"), &y).abs() < 1e-12);
    // x = y on 3 of 4 quarters: table [[2,0],[... ]] evaluated by hand.
    let x = bits("00011111");
    let hand = {
        let p = |c: f64| c / 8.0;
        let term = |c: f64, r: f64, k: f64| if c > 0.0 { p(c) * (c * 8.0 / (r * k)).ln() } else { 0.0 };
        term(3.0, 3.0, 4.0) + term(1.0, 5.0, 4.0) + term(4.0, 5.0, 4.0)
    };
    assert!((mutual_information(&x, &y) - hand).abs() < 1e-12);
    assert!((mi_from_table(&[[3.0, 0.0], [1.0, 4.0]]) - hand).abs() < 1e-12);
}

#[test]
fn redundant_copy_goes_last() {
    let a = bits("11100000");
    let b = bits("00011000");
    let y = bits("11110000");
    let m = matrix(&[a.clone(), a.clone(), b.clone()]);
    let sel = jmi_greedy_select(&m, &y, 3).unwrap();
    assert_eq!(sel.selected, vec![0, 2, 1]);
    assert_eq!(brute_jmi(&[a.clone(), a, b], &y, 3), vec![0, 2, 1]);
}

fn columns_strategy() -> impl Strategy<Value = (Vec<Vec<bool>>, Vec<bool>)> {
    (6usize..30, 2usize..8).prop_flat_map(|(n, p)| {
        (
            proptest::collection::vec(proptest::collection::vec(any::<bool>(), n), p),
            proptest::collection::vec(any::<bool>(), n),
        )
    })
}

proptest! {
    #[test]
    fn greedy_matches_brute_force((columns, y) in columns_strategy(), budget in 1usize..8) {
        let m = matrix(&columns);
        let sel = jmi_greedy_select(&m, &y, budget).unwrap();
        prop_assert_eq!(sel.selected, brute_jmi(&columns, &y, budget));
    }

    #[test]
    fn mi_matches_entropy_identity((columns, y) in columns_strategy()) {
        for c in &columns {
            prop_assert!((mutual_information(c, &y) - mi(&[c], &y)).abs() < 1e-10);
        }
    }

    #[test]
    fn selection_is_subset_without_repeats((columns, y) in columns_strategy(), keep in 1usize..6, budget in 1usize..6) {
        let m = matrix(&columns);
        let config = MsmrConfig { min_prevalence: 0.0, mi_keep: keep, jmi_budget: budget };
        let sel = run_msmr(&m, &y, &config).unwrap();
        let mut seen = sel.selected.clone();
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), sel.selected.len());
        prop_assert!(sel.selected.len() <= budget.min(keep));
        prop_assert!(sel.step_sizes[0] >= sel.step_sizes[1] && sel.step_sizes[1] >= sel.step_sizes[2]);
    }
}
