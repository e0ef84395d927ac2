use std::collections::HashSet;
use std::fmt;

use super::TspmError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureKind {
    Raw,
    Sequence,
    Demographic,
}

impl FeatureKind {
    pub fn key(self) -> &'static str {
        match self {
            FeatureKind::Raw => "raw",
            FeatureKind::Sequence => "sequence",
            FeatureKind::Demographic => "demographic",
        }
    }

    pub fn from_key(key: &str) -> Option<FeatureKind> {
        [FeatureKind::Raw, FeatureKind::Sequence, FeatureKind::Demographic]
            .into_iter()
            .find(|k| k.key() == key)
    }
}

/// Identity of a column. A sequence descriptor `code_a → code_b` means the
/// first occurrence of `code_a` is not later than that of `code_b`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureDescriptor {
    pub kind: FeatureKind,
    pub code_a: String,
    pub code_b: Option<String>,
}

impl FeatureDescriptor {
    pub fn raw(code: impl Into<String>) -> Self {
        FeatureDescriptor {
            kind: FeatureKind::Raw,
            code_a: code.into(),
            code_b: None,
        }
    }

    pub fn sequence(code_a: impl Into<String>, code_b: impl Into<String>) -> Result<Self, TspmError> {
        let (code_a, code_b) = (code_a.into(), code_b.into());
        if code_a == code_b {
            return Err(TspmError::InvalidMatrix(format!(
                "sequence descriptor {code_a}->{code_b} repeats its code"
            )));
        }
        Ok(FeatureDescriptor {
            kind: FeatureKind::Sequence,
            code_a,
            code_b: Some(code_b),
        })
    }

    pub fn demographic(name: impl Into<String>) -> Self {
        FeatureDescriptor {
            kind: FeatureKind::Demographic,
            code_a: name.into(),
            code_b: None,
        }
    }

    fn is_well_formed(&self) -> bool {
        match self.kind {
            FeatureKind::Sequence => self.code_b.as_ref().is_some_and(|b| *b != self.code_a),
            _ => self.code_b.is_none(),
        }
    }
}

impl fmt::Display for FeatureDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.kind, &self.code_b) {
            (FeatureKind::Sequence, Some(b)) => write!(f, "{}->{}", self.code_a, b),
            (FeatureKind::Demographic, _) => write!(f, "demo:{}", self.code_a),
            _ => f.write_str(&self.code_a),
        }
    }
}

/// Patients × features in compressed sparse row layout.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseFeatureMatrix {
    features: Vec<FeatureDescriptor>,
    patient_ids: Vec<String>,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

/// Column-major view over the same entries.
#[derive(Clone, Debug)]
pub struct ColumnMajor {
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<u32>,
    pub values: Vec<f64>,
}

impl ColumnMajor {
    pub fn column(&self, j: usize) -> (&[u32], &[f64]) {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        (&self.row_idx[r.clone()], &self.values[r])
    }

    pub fn n_columns(&self) -> usize {
        self.col_ptr.len() - 1
    }
}

impl SparseFeatureMatrix {
    /// Validates and packs per-patient rows.
    pub fn from_rows(
        features: Vec<FeatureDescriptor>,
        patient_ids: Vec<String>,
        rows: Vec<Vec<(u32, f64)>>,
    ) -> Result<Self, TspmError> {
        if rows.len() != patient_ids.len() {
            return Err(TspmError::InvalidMatrix(format!(
                "{} rows for {} patients",
                rows.len(),
                patient_ids.len()
            )));
        }
        let mut seen = HashSet::with_capacity(features.len());
        for f in &features {
            if !f.is_well_formed() {
                return Err(TspmError::InvalidMatrix(format!("malformed descriptor {f}")));
            }
            if !seen.insert(f) {
                return Err(TspmError::InvalidMatrix(format!("duplicate descriptor {f}")));
            }
        }
        let nnz = rows.iter().map(Vec::len).sum();
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        indptr.push(0);
        for (r, row) in rows.iter().enumerate() {
            let mut last: Option<u32> = None;
            for &(j, v) in row {
                let Some(desc) = features.get(j as usize) else {
                    return Err(TspmError::InvalidMatrix(format!("row {r}: feature index {j} out of range")));
                };
                if last.is_some_and(|l| l >= j) {
                    return Err(TspmError::InvalidMatrix(format!("row {r}: indices not strictly increasing")));
                }
                if v == 0.0 || !v.is_finite() {
                    return Err(TspmError::InvalidMatrix(format!("row {r}: stored value {v} for {desc}")));
                }
                if desc.kind == FeatureKind::Sequence && v != 1.0 {
                    return Err(TspmError::InvalidMatrix(format!("row {r}: sequence value {v} for {desc}")));
                }
                last = Some(j);
                indices.push(j);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Ok(SparseFeatureMatrix {
            features,
            patient_ids,
            indptr,
            indices,
            values,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.patient_ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn features(&self) -> &[FeatureDescriptor] {
        &self.features
    }

    pub fn patient_ids(&self) -> &[String] {
        &self.patient_ids
    }

    pub fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[r.clone()], &self.values[r])
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[u32], &[f64])> + '_ {
        (0..self.n_rows()).map(|i| self.row(i))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (idx, vals) = self.row(i);
        idx.binary_search(&(j as u32)).map_or(0.0, |k| vals[k])
    }

    /// Number of patients with a nonzero value, per column.
    pub fn column_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_features()];
        for &j in &self.indices {
            counts[j as usize] += 1;
        }
        counts
    }

    pub fn prevalence(&self) -> Vec<f64> {
        let n = self.n_rows().max(1) as f64;
        self.column_counts().into_iter().map(|c| c as f64 / n).collect()
    }

    pub fn to_column_major(&self) -> ColumnMajor {
        let counts = self.column_counts();
        let mut col_ptr = Vec::with_capacity(counts.len() + 1);
        col_ptr.push(0);
        for c in &counts {
            col_ptr.push(col_ptr.last().unwrap() + c);
        }
        let mut next = col_ptr.clone();
        let mut row_idx = vec![0u32; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.n_rows() {
            let (idx, vals) = self.row(i);
            for (&j, &v) in idx.iter().zip(vals) {
                let slot = next[j as usize];
                row_idx[slot] = i as u32;
                values[slot] = v;
                next[j as usize] += 1;
            }
        }
        ColumnMajor {
            col_ptr,
            row_idx,
            values,
        }
    }

    /// Keeps the given columns (in ascending index order) and reindexes them.
    pub fn select_columns(&self, keep: &[usize]) -> SparseFeatureMatrix {
        let mut keep: Vec<usize> = keep.to_vec();
        keep.sort_unstable();
        keep.dedup();
        let mut remap = vec![u32::MAX; self.n_features()];
        for (new, &old) in keep.iter().enumerate() {
            remap[old] = new as u32;
        }
        let mut indptr = Vec::with_capacity(self.n_rows() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for i in 0..self.n_rows() {
            let (idx, vals) = self.row(i);
            for (&j, &v) in idx.iter().zip(vals) {
                let m = remap[j as usize];
                if m != u32::MAX {
                    indices.push(m);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        SparseFeatureMatrix {
            features: keep.iter().map(|&j| self.features[j].clone()).collect(),
            patient_ids: self.patient_ids.clone(),
            indptr,
            indices,
            values,
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> SparseFeatureMatrix {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for &i in rows {
            let (idx, vals) = self.row(i);
            indices.extend_from_slice(idx);
            values.extend_from_slice(vals);
            indptr.push(indices.len());
        }
        SparseFeatureMatrix {
            features: self.features.clone(),
            patient_ids: rows.iter().map(|&i| self.patient_ids[i].clone()).collect(),
            indptr,
            indices,
            values,
        }
    }

    /// Horizontal concatenation; column indices of later blocks are offset.
    pub fn hstack(blocks: &[&SparseFeatureMatrix]) -> Result<SparseFeatureMatrix, TspmError> {
        let Some(first) = blocks.first() else {
            return Err(TspmError::NothingToAssemble);
        };
        if blocks.iter().any(|b| b.patient_ids != first.patient_ids) {
            return Err(TspmError::PatientOrderMismatch);
        }
        let features: Vec<FeatureDescriptor> =
            blocks.iter().flat_map(|b| b.features.iter().cloned()).collect();
        let mut offsets = Vec::with_capacity(blocks.len());
        let mut acc = 0u32;
        for b in blocks {
            offsets.push(acc);
            acc += b.n_features() as u32;
        }
        let rows = (0..first.n_rows())
            .map(|i| {
                blocks
                    .iter()
                    .zip(&offsets)
                    .flat_map(|(b, &off)| {
                        let (idx, vals) = b.row(i);
                        idx.iter().zip(vals).map(move |(&j, &v)| (j + off, v))
                    })
                    .collect()
            })
            .collect();
        SparseFeatureMatrix::from_rows(features, first.patient_ids.clone(), rows)
    }

    pub(crate) fn raw_parts(&self) -> (&[usize], &[u32], &[f64]) {
        (&self.indptr, &self.indices, &self.values)
    }
}
