use std::collections::{BTreeSet, HashMap};

use crate::cohort::{Cohort, Demographics};

use super::{FeatureDescriptor, SparseFeatureMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DemographicEncoding {
    /// One indicator per observed level (tree learners).
    OneHot,
    /// Lexicographically first level of each field dropped (linear learners).
    DropFirst,
}

type Field = fn(&Demographics) -> &str;

const FIELDS: [(&str, Field); 3] = [
    ("gender", |d| &d.gender),
    ("race", |d| &d.race),
    ("ethnicity", |d| &d.ethnicity),
];

/// Age as one numeric column plus one-hot categorical columns. Levels are
/// learned from the cohort passed to [`DemographicEncoder::fit`]; levels
/// unseen there encode as all zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct DemographicEncoder {
    features: Vec<FeatureDescriptor>,
    level_index: Vec<HashMap<String, u32>>,
}

impl DemographicEncoder {
    pub fn fit(cohort: &Cohort, encoding: DemographicEncoding) -> Self {
        let mut features = vec![FeatureDescriptor::demographic("age")];
        let mut level_index = Vec::with_capacity(FIELDS.len());
        for (name, field) in FIELDS {
            let levels: BTreeSet<&str> = cohort.patients().iter().map(|p| field(&p.demographics)).collect();
            let skip = usize::from(encoding == DemographicEncoding::DropFirst);
            let mut index = HashMap::new();
            for level in levels.into_iter().skip(skip) {
                index.insert(level.to_string(), features.len() as u32);
                features.push(FeatureDescriptor::demographic(format!("{name}={level}")));
            }
            level_index.push(index);
        }
        DemographicEncoder { features, level_index }
    }

    pub fn features(&self) -> &[FeatureDescriptor] {
        &self.features
    }

    pub fn encode(&self, cohort: &Cohort) -> SparseFeatureMatrix {
        let rows = cohort
            .patients()
            .iter()
            .map(|p| {
                let d = &p.demographics;
                let mut row = Vec::with_capacity(4);
                if d.age > 0 {
                    row.push((0u32, f64::from(d.age)));
                }
                for ((_, field), index) in FIELDS.iter().zip(&self.level_index) {
                    if let Some(&j) = index.get(field(d)) {
                        row.push((j, 1.0));
                    }
                }
                row
            })
            .collect();
        SparseFeatureMatrix::from_rows(self.features.clone(), cohort.patient_ids(), rows)
            .expect("demographic encoding produces valid rows")
    }
}
