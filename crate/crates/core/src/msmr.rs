//! Minimize sparsity, maximize relevance: prevalence filtering, mutual
//! information ranking and greedy joint-mutual-information selection.
//!
//! Columns are binarized to presence indicators for every information
//! estimate; learners still see the original counts. Logs are natural, so
//! all scores are in nats.

use std::collections::HashMap;
use std::io::Write;

use thiserror::Error;

use crate::tspm::SparseFeatureMatrix;

#[derive(Debug, Error)]
pub enum MsmrError {
    #[error("prevalence threshold {threshold} removed all {n_features} features")]
    AllFeaturesRemoved { threshold: f64, n_features: usize },
    #[error("invalid MSMR parameter: {0}")]
    InvalidParameter(String),
    #[error("{labels} labels for a matrix with {rows} rows")]
    LabelLength { labels: usize, rows: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MiScore {
    pub feature: usize,
    pub mi: f64,
}

/// Greedy JMI result. `scores[k]` is the winning joint score at the step that
/// added `selected[k + 1]`; the first pick is by mutual information alone.
#[derive(Clone, Debug, PartialEq)]
pub struct JmiSelection {
    pub selected: Vec<usize>,
    pub scores: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MsmrConfig {
    pub min_prevalence: f64,
    pub mi_keep: usize,
    pub jmi_budget: usize,
}

impl Default for MsmrConfig {
    fn default() -> Self {
        MsmrConfig {
            min_prevalence: 0.002,
            mi_keep: 30_000,
            jmi_budget: 400,
        }
    }
}

/// Feature indices refer to the matrix handed to [`run_msmr`].
#[derive(Clone, Debug, PartialEq)]
pub struct MsmrSelection {
    pub selected: Vec<usize>,
    pub mi: Vec<f64>,
    pub jmi_gain: Vec<Option<f64>>,
    /// Feature counts after steps 1, 2 and 3.
    pub step_sizes: [usize; 3],
}

/// Relative slack under which two scores count as tied; ties go to the
/// lower feature index.
pub const SCORE_TIE_EPS: f64 = 1e-12;

/// Index of the maximum, scanning ascending and replacing only on a
/// strictly larger score beyond [`SCORE_TIE_EPS`].
pub fn argmax_with_ties(scores: impl IntoIterator<Item = (usize, f64)>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores {
        match best {
            Some((_, b)) if s <= b + SCORE_TIE_EPS * b.abs().max(1.0) => {}
            _ => best = Some((i, s)),
        }
    }
    best
}

/// `Σ p(a,b) ln(p(a,b) / (p(a) p(b)))` for a contingency table of counts,
/// with `0 ln 0 = 0`.
pub fn mi_from_table<const R: usize, const C: usize>(table: &[[f64; C]; R]) -> f64 {
    let n: f64 = table.iter().flatten().sum();
    if n <= 0.0 {
        return 0.0;
    }
    let row: [f64; R] = std::array::from_fn(|i| table[i].iter().sum());
    let col: [f64; C] = std::array::from_fn(|j| table.iter().map(|r| r[j]).sum());
    let mut mi = 0.0;
    for i in 0..R {
        for j in 0..C {
            let c = table[i][j];
            if c > 0.0 {
                mi += c / n * (c * n / (row[i] * col[j])).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Plug-in MI between two binary columns from their 2×2 counts.
fn mi_binary_counts(n: f64, n_x: f64, n_y: f64, n_xy: f64) -> f64 {
    mi_from_table(&[[n - n_x - n_y + n_xy, n_y - n_xy], [n_x - n_xy, n_xy]])
}

/// Empirical mutual information between a binarized feature column and a
/// binary outcome.
pub fn mutual_information(x: &[bool], y: &[bool]) -> f64 {
    assert_eq!(x.len(), y.len(), "columns must have equal length");
    let n = x.len() as f64;
    let n_x = x.iter().filter(|&&v| v).count() as f64;
    let n_y = y.iter().filter(|&&v| v).count() as f64;
    let n_xy = x.iter().zip(y).filter(|(&a, &b)| a && b).count() as f64;
    mi_binary_counts(n, n_x, n_y, n_xy)
}

/// Joint mutual information `I((X_c, X_s); Y)` from the counts
/// `(total, total positives, |c|, |c ∩ pos|, |s|, |s ∩ pos|, |c ∩ s|, |c ∩ s ∩ pos|)`.
#[allow(clippy::too_many_arguments)]
fn jmi_pair_counts(n: f64, n_pos: f64, c: f64, c_pos: f64, s: f64, s_pos: f64, cs: f64, cs_pos: f64) -> f64 {
    let n_neg = n - n_pos;
    let c_neg = c - c_pos;
    let s_neg = s - s_pos;
    let cs_neg = cs - cs_pos;
    mi_from_table(&[
        [n_neg - c_neg - s_neg + cs_neg, n_pos - c_pos - s_pos + cs_pos],
        [c_neg - cs_neg, c_pos - cs_pos],
        [s_neg - cs_neg, s_pos - cs_pos],
        [cs_neg, cs_pos],
    ])
}

fn check_labels(matrix: &SparseFeatureMatrix, labels: &[bool]) -> Result<(), MsmrError> {
    if labels.len() != matrix.n_rows() {
        return Err(MsmrError::LabelLength {
            labels: labels.len(),
            rows: matrix.n_rows(),
        });
    }
    Ok(())
}

/// Step 1: drop features observed in fewer than `min_prevalence` of patients.
/// Returns the filtered matrix and the kept original indices.
pub fn prevalence_filter(
    matrix: &SparseFeatureMatrix,
    min_prevalence: f64,
) -> Result<(SparseFeatureMatrix, Vec<usize>), MsmrError> {
    if !(0.0..1.0).contains(&min_prevalence) {
        return Err(MsmrError::InvalidParameter(format!(
            "min_prevalence must lie in [0, 1), got {min_prevalence}"
        )));
    }
    let n = matrix.n_rows() as f64;
    let keep: Vec<usize> = matrix
        .column_counts()
        .iter()
        .enumerate()
        .filter(|&(_, &c)| min_prevalence == 0.0 || c as f64 / n >= min_prevalence)
        .map(|(j, _)| j)
        .collect();
    if keep.is_empty() {
        return Err(MsmrError::AllFeaturesRemoved {
            threshold: min_prevalence,
            n_features: matrix.n_features(),
        });
    }
    Ok((matrix.select_columns(&keep), keep))
}

/// Per-column presence counts and presence-among-positives counts.
fn presence_counts(matrix: &SparseFeatureMatrix, labels: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let mut count = vec![0.0; matrix.n_features()];
    let mut pos = vec![0.0; matrix.n_features()];
    for (i, (idx, _)) in matrix.rows().enumerate() {
        for &j in idx {
            count[j as usize] += 1.0;
            if labels[i] {
                pos[j as usize] += 1.0;
            }
        }
    }
    (count, pos)
}

pub fn mi_scores(matrix: &SparseFeatureMatrix, labels: &[bool]) -> Result<Vec<MiScore>, MsmrError> {
    check_labels(matrix, labels)?;
    let n = labels.len() as f64;
    let n_pos = labels.iter().filter(|&&y| y).count() as f64;
    let (count, pos) = presence_counts(matrix, labels);
    Ok(count
        .iter()
        .zip(&pos)
        .enumerate()
        .map(|(feature, (&c, &p))| MiScore {
            feature,
            mi: mi_binary_counts(n, c, n_pos, p),
        })
        .collect())
}

/// Step 2: keep the `keep_count` features with the highest MI. Equal MI is
/// resolved in favor of the earlier dictionary index.
pub fn mi_rank_filter(
    matrix: &SparseFeatureMatrix,
    labels: &[bool],
    keep_count: usize,
) -> Result<(SparseFeatureMatrix, Vec<usize>), MsmrError> {
    if keep_count == 0 {
        return Err(MsmrError::InvalidParameter("keep_count must be at least 1".into()));
    }
    let mut scores = mi_scores(matrix, labels)?;
    scores.sort_by(|a, b| b.mi.total_cmp(&a.mi).then(a.feature.cmp(&b.feature)));
    let mut keep: Vec<usize> = scores.iter().take(keep_count).map(|s| s.feature).collect();
    keep.sort_unstable();
    Ok((matrix.select_columns(&keep), keep))
}

/// Step 3: greedy forward selection maximizing `Σ_{s∈S} I((X_c, X_s); Y)`,
/// starting from the top-MI feature.
pub fn jmi_greedy_select(
    matrix: &SparseFeatureMatrix,
    labels: &[bool],
    budget: usize,
) -> Result<JmiSelection, MsmrError> {
    check_labels(matrix, labels)?;
    if budget == 0 {
        return Err(MsmrError::InvalidParameter("JMI budget must be at least 1".into()));
    }
    let p = matrix.n_features();
    if p == 0 {
        return Err(MsmrError::InvalidParameter("matrix has no features".into()));
    }
    let n = labels.len() as f64;
    let n_pos = labels.iter().filter(|&&y| y).count() as f64;
    let (count, pos) = presence_counts(matrix, labels);
    let columns = matrix.to_column_major();

    let mi: Vec<f64> = (0..p).map(|j| mi_binary_counts(n, count[j], n_pos, pos[j])).collect();
    let (first, _) = argmax_with_ties(mi.iter().copied().enumerate()).expect("non-empty");
    let mut selected = vec![first];
    let mut is_selected = vec![false; p];
    is_selected[first] = true;
    let mut scores = Vec::new();
    let mut jmi = vec![0.0; p];
    let mut co = vec![0.0; p];
    let mut co_pos = vec![0.0; p];
    let mut touched: Vec<usize> = Vec::new();

    while selected.len() < budget.min(p) {
        let s = *selected.last().unwrap();
        let (s_rows, _) = columns.column(s);
        for &i in s_rows {
            let (idx, _) = matrix.row(i as usize);
            for &j in idx {
                let j = j as usize;
                if co[j] == 0.0 {
                    touched.push(j);
                }
                co[j] += 1.0;
                if labels[i as usize] {
                    co_pos[j] += 1.0;
                }
            }
        }
        // Candidates disjoint from s share a score whenever their marginal
        // counts agree.
        let mut disjoint: HashMap<(u64, u64), f64> = HashMap::new();
        for c in 0..p {
            if is_selected[c] {
                continue;
            }
            let gain = if co[c] == 0.0 {
                *disjoint
                    .entry((count[c] as u64, pos[c] as u64))
                    .or_insert_with(|| jmi_pair_counts(n, n_pos, count[c], pos[c], count[s], pos[s], 0.0, 0.0))
            } else {
                jmi_pair_counts(n, n_pos, count[c], pos[c], count[s], pos[s], co[c], co_pos[c])
            };
            jmi[c] += gain;
        }
        for j in touched.drain(..) {
            co[j] = 0.0;
            co_pos[j] = 0.0;
        }
        let Some((winner, score)) =
            argmax_with_ties((0..p).filter(|&c| !is_selected[c]).map(|c| (c, jmi[c])))
        else {
            break;
        };
        is_selected[winner] = true;
        selected.push(winner);
        scores.push(score);
    }
    Ok(JmiSelection { selected, scores })
}

/// All three MSMR steps.
pub fn run_msmr(
    matrix: &SparseFeatureMatrix,
    labels: &[bool],
    config: &MsmrConfig,
) -> Result<MsmrSelection, MsmrError> {
    check_labels(matrix, labels)?;
    let (step1, kept1) = prevalence_filter(matrix, config.min_prevalence)?;
    let (step2, kept2) = mi_rank_filter(&step1, labels, config.mi_keep)?;
    let jmi = jmi_greedy_select(&step2, labels, config.jmi_budget)?;
    let mi = mi_scores(&step2, labels)?;
    let to_original = |j: usize| kept1[kept2[j]];
    Ok(MsmrSelection {
        selected: jmi.selected.iter().map(|&j| to_original(j)).collect(),
        mi: jmi.selected.iter().map(|&j| mi[j].mi).collect(),
        jmi_gain: std::iter::once(None)
            .chain(jmi.scores.iter().map(|&s| Some(s)))
            .collect(),
        step_sizes: [step1.n_features(), step2.n_features(), jmi.selected.len()],
    })
}

/// `rank,kind,code_a,code_b,mi,jmi_gain`, one line per selected feature.
pub fn write_selection_report<W: Write>(
    matrix: &SparseFeatureMatrix,
    selection: &MsmrSelection,
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "rank,kind,code_a,code_b,mi,jmi_gain")?;
    for (rank, ((&j, mi), gain)) in selection
        .selected
        .iter()
        .zip(&selection.mi)
        .zip(&selection.jmi_gain)
        .enumerate()
    {
        let f = &matrix.features()[j];
        let gain = gain.map(|g| format!("{g:.9}")).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{mi:.9},{gain}",
            rank + 1,
            f.kind.key(),
            f.code_a,
            f.code_b.as_deref().unwrap_or("")
        )?;
    }
    w.flush()
}
