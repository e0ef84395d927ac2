use std::collections::{BTreeSet, HashMap};

use crate::cohort::{Cohort, Date, PatientRecord};
use crate::par_map;

use super::{FeatureDescriptor, FeatureKind, SparseFeatureMatrix, TspmError};

/// Knobs for transitive mining at scale.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MiningOptions {
    /// Materialize only pairs present in at least this fraction of patients.
    /// Equivalent to mining everything and then prevalence-filtering.
    pub min_prevalence: Option<f64>,
    /// Upper bound on the number of stored sequence entries.
    pub max_entries: Option<usize>,
}

struct CodeBook {
    codes: Vec<String>,
    ids: HashMap<String, u32>,
}

impl CodeBook {
    fn from_cohort(cohort: &Cohort) -> CodeBook {
        let distinct: BTreeSet<&str> = cohort
            .patients()
            .iter()
            .flat_map(|p| p.timeline.first_occurrence().keys().map(String::as_str))
            .collect();
        Self::from_sorted(distinct.into_iter().map(str::to_string).collect())
    }

    fn from_sorted(codes: Vec<String>) -> CodeBook {
        let ids = codes.iter().enumerate().map(|(i, c)| (c.clone(), i as u32)).collect();
        CodeBook { codes, ids }
    }

    /// Known codes of a patient with their first date, ascending by id.
    fn first_occurrences(&self, patient: &PatientRecord) -> Vec<(u32, Date)> {
        let mut out: Vec<(u32, Date)> = patient
            .timeline
            .first_occurrence()
            .iter()
            .filter_map(|(code, &date)| self.ids.get(code).map(|&id| (id, date)))
            .collect();
        out.sort_unstable_by_key(|&(id, _)| id);
        out
    }
}

/// Ordered pairs `(a, b)`, `a != b`, with `first(a) <= first(b)`, encoded as
/// `a * n_codes + b` and emitted in ascending order.
fn transitive_pairs(first: &[(u32, Date)], n_codes: u64) -> Vec<u64> {
    let mut pairs = Vec::with_capacity(first.len() * first.len().saturating_sub(1) / 2 + 1);
    for &(a, ta) in first {
        for &(b, tb) in first {
            if a != b && ta <= tb {
                pairs.push(u64::from(a) * n_codes + u64::from(b));
            }
        }
    }
    pairs
}

/// One raw feature per distinct code; values are occurrence counts.
pub fn mine_raw(cohort: &Cohort) -> SparseFeatureMatrix {
    let book = CodeBook::from_cohort(cohort);
    let rows = par_map(cohort.patients(), |p| {
        p.timeline
            .occurrence_count()
            .iter()
            .map(|(code, &count)| (book.ids[code], f64::from(count)))
            .collect::<Vec<_>>()
    });
    let features = book.codes.iter().map(FeatureDescriptor::raw).collect();
    SparseFeatureMatrix::from_rows(features, cohort.patient_ids(), rows)
        .expect("raw mining produces valid rows")
}

/// Binary transitive sequence features. Only pairs observed in at least one
/// patient (or in the `min_prevalence` fraction, when set) enter the
/// dictionary, sorted by `(code_a, code_b)`.
pub fn mine_transitive(cohort: &Cohort, options: &MiningOptions) -> Result<SparseFeatureMatrix, TspmError> {
    let book = CodeBook::from_cohort(cohort);
    let n_codes = book.codes.len() as u64;
    let n_patients = cohort.len();

    // First pass counts pair prevalence without keeping per-patient lists.
    let mut counts: HashMap<u64, u32> = HashMap::new();
    for p in cohort.patients() {
        for key in transitive_pairs(&book.first_occurrences(p), n_codes) {
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(u64, u32)> = counts
        .into_iter()
        .filter(|&(_, c)| match options.min_prevalence {
            Some(p) => c as f64 / n_patients as f64 >= p,
            None => true,
        })
        .collect();
    kept.sort_unstable_by_key(|&(k, _)| k);
    let entries: usize = kept.iter().map(|&(_, c)| c as usize).sum();
    if let Some(budget) = options.max_entries {
        if entries > budget {
            return Err(TspmError::PairBudgetExceeded {
                pairs: entries,
                budget,
            });
        }
    }

    let index: HashMap<u64, u32> = kept.iter().enumerate().map(|(i, &(k, _))| (k, i as u32)).collect();
    let rows = par_map(cohort.patients(), |p| {
        transitive_pairs(&book.first_occurrences(p), n_codes)
            .into_iter()
            .filter_map(|k| index.get(&k).map(|&j| (j, 1.0)))
            .collect::<Vec<_>>()
    });
    let features = kept
        .iter()
        .map(|&(k, _)| {
            let (a, b) = ((k / n_codes) as usize, (k % n_codes) as usize);
            FeatureDescriptor::sequence(book.codes[a].clone(), book.codes[b].clone())
        })
        .collect::<Result<Vec<_>, _>>()?;
    SparseFeatureMatrix::from_rows(features, cohort.patient_ids(), rows)
}

/// Encodes a cohort against a fixed dictionary of raw and sequence
/// descriptors (e.g. one learned on training patients). Codes outside the
/// dictionary are ignored; column order follows `features`.
pub fn encode_clinical(cohort: &Cohort, features: &[FeatureDescriptor]) -> Result<SparseFeatureMatrix, TspmError> {
    let mut codes: BTreeSet<&str> = BTreeSet::new();
    for f in features {
        match f.kind {
            FeatureKind::Raw => {
                codes.insert(&f.code_a);
            }
            FeatureKind::Sequence => {
                codes.insert(&f.code_a);
                codes.insert(f.code_b.as_deref().unwrap_or_default());
            }
            FeatureKind::Demographic => {
                return Err(TspmError::InvalidMatrix(format!(
                    "{f} is not a clinical descriptor"
                )))
            }
        }
    }
    let book = CodeBook::from_sorted(codes.into_iter().map(str::to_string).collect());
    let mut raw_index: HashMap<u32, u32> = HashMap::new();
    let mut seq_index: HashMap<(u32, u32), u32> = HashMap::new();
    for (j, f) in features.iter().enumerate() {
        let a = book.ids[&f.code_a];
        match &f.code_b {
            None => raw_index.insert(a, j as u32),
            Some(b) => seq_index.insert((a, book.ids[b]), j as u32),
        };
    }
    let rows = par_map(cohort.patients(), |p| {
        let first = book.first_occurrences(p);
        let counts = p.timeline.occurrence_count();
        let mut row: Vec<(u32, f64)> = Vec::new();
        for &(a, ta) in &first {
            if let Some(&j) = raw_index.get(&a) {
                row.push((j, f64::from(counts[&book.codes[a as usize]])));
            }
            if seq_index.is_empty() {
                continue;
            }
            for &(b, tb) in &first {
                if a != b && ta <= tb {
                    if let Some(&j) = seq_index.get(&(a, b)) {
                        row.push((j, 1.0));
                    }
                }
            }
        }
        row.sort_unstable_by_key(|&(j, _)| j);
        row
    });
    SparseFeatureMatrix::from_rows(features.to_vec(), cohort.patient_ids(), rows)
}

/// Concatenates the selected feature classes in raw, sequence, demographic
/// order.
pub fn assemble_matrix(
    raw: &SparseFeatureMatrix,
    seq: &SparseFeatureMatrix,
    demo: &SparseFeatureMatrix,
    include: &[FeatureKind],
) -> Result<SparseFeatureMatrix, TspmError> {
    let blocks: Vec<&SparseFeatureMatrix> = [
        (FeatureKind::Raw, raw),
        (FeatureKind::Sequence, seq),
        (FeatureKind::Demographic, demo),
    ]
    .into_iter()
    .filter(|(k, _)| include.contains(k))
    .map(|(_, m)| m)
    .collect();
    if blocks.is_empty() {
        return Err(TspmError::NothingToAssemble);
    }
    SparseFeatureMatrix::hstack(&blocks)
}
