//! Flat `key = value` configuration.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::cohort::{BufferBoundary, Outcome, SplitStrategy};
use crate::evaluation::BinScheme;
use crate::learners::{ElasticNetParams, GbmGrid, LambdaPath, LambdaRule};
use crate::msmr::MsmrConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown key `{key}` on line {line}")]
    UnknownKey { line: usize, key: String },
    #[error("key `{key}` given twice (line {line})")]
    DuplicateKey { line: usize, key: String },
    #[error("invalid value for `{key}`: {message}")]
    Value { key: String, message: String },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FeatureClass {
    Demographic,
    Clinical,
    Combined,
}

impl FeatureClass {
    pub const ALL: [FeatureClass; 3] = [FeatureClass::Demographic, FeatureClass::Clinical, FeatureClass::Combined];

    pub fn key(self) -> &'static str {
        match self {
            FeatureClass::Demographic => "demographic",
            FeatureClass::Clinical => "clinical",
            FeatureClass::Combined => "combined",
        }
    }

    pub fn from_key(key: &str) -> Option<FeatureClass> {
        FeatureClass::ALL.into_iter().find(|c| c.key() == key)
    }

    pub fn uses_clinical(self) -> bool {
        self != FeatureClass::Demographic
    }
}

/// Whether phase 2 uses each outcome's own phase-1 union or the union
/// pooled over all outcomes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum UnionMode {
    #[default]
    PerOutcome,
    Pooled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub buffer_days: u32,
    pub buffer_boundary: BufferBoundary,
    pub test_fraction: f64,
    pub split_strategy: SplitStrategy,
    pub n_resamples: usize,
    pub cv_folds_phase1: usize,
    pub cv_folds_phase2: usize,
    pub msmr: MsmrConfig,
    /// Upper bound on stored sequence entries per mined training matrix.
    pub max_sequence_entries: Option<usize>,
    pub learners: Vec<String>,
    pub gbm: GbmGrid,
    pub elastic_net: ElasticNetParams,
    pub top_algorithms: usize,
    pub outcomes: Vec<Outcome>,
    pub feature_classes: Vec<FeatureClass>,
    pub union_mode: UnionMode,
    pub calibration_bins: usize,
    pub calibration_scheme: BinScheme,
    pub ci_level: f64,
    /// Optional `code,cluster_label` file applied to the influence listing.
    pub cluster_map: Option<String>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            buffer_days: 14,
            buffer_boundary: BufferBoundary::Inclusive,
            test_fraction: 0.2,
            split_strategy: SplitStrategy::Stratified,
            n_resamples: 10,
            cv_folds_phase1: 10,
            cv_folds_phase2: 5,
            msmr: MsmrConfig::default(),
            max_sequence_entries: None,
            learners: vec!["gbm".into(), "elastic_net".into()],
            gbm: GbmGrid::default(),
            elastic_net: ElasticNetParams::default(),
            top_algorithms: 2,
            outcomes: Outcome::ALL.to_vec(),
            feature_classes: FeatureClass::ALL.to_vec(),
            union_mode: UnionMode::PerOutcome,
            calibration_bins: 10,
            calibration_scheme: BinScheme::EqualWidth,
            ci_level: 0.95,
            cluster_map: None,
            seed: 2020,
        }
    }
}

pub const KNOWN_LEARNERS: [&str; 2] = ["gbm", "elastic_net"];

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl PipelineConfig {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("string write");
        put("buffer_days", self.buffer_days.to_string());
        put(
            "buffer_boundary",
            match self.buffer_boundary {
                BufferBoundary::Inclusive => "inclusive",
                BufferBoundary::Exclusive => "exclusive",
            }
            .into(),
        );
        put("test_fraction", self.test_fraction.to_string());
        put(
            "split_strategy",
            match self.split_strategy {
                SplitStrategy::Stratified => "stratified",
                SplitStrategy::Simple => "simple",
            }
            .into(),
        );
        put("n_resamples", self.n_resamples.to_string());
        put("cv_folds_phase1", self.cv_folds_phase1.to_string());
        put("cv_folds_phase2", self.cv_folds_phase2.to_string());
        put("msmr_min_prevalence", self.msmr.min_prevalence.to_string());
        put("msmr_mi_keep", self.msmr.mi_keep.to_string());
        put("msmr_jmi_budget", self.msmr.jmi_budget.to_string());
        put(
            "max_sequence_entries",
            self.max_sequence_entries.map_or("none".into(), |v| v.to_string()),
        );
        put("learners", self.learners.join(","));
        put("gbm_trees", join(&self.gbm.n_trees));
        put("gbm_shrinkage", join(&self.gbm.shrinkage));
        put("gbm_depth", join(&self.gbm.max_depth));
        put("gbm_bag_fraction", self.gbm.bag_fraction.to_string());
        put("gbm_min_leaf", self.gbm.min_leaf.to_string());
        put("enet_alpha", self.elastic_net.alpha.to_string());
        match &self.elastic_net.path {
            LambdaPath::Auto { n_lambda, ratio } => {
                put("enet_n_lambda", n_lambda.to_string());
                put("enet_lambda_ratio", ratio.to_string());
            }
            LambdaPath::Explicit(values) => put("enet_lambdas", join(values)),
        }
        put(
            "enet_rule",
            match self.elastic_net.rule {
                LambdaRule::Min => "min",
                LambdaRule::OneSe => "one_se",
            }
            .into(),
        );
        put("top_algorithms", self.top_algorithms.to_string());
        put(
            "outcomes",
            self.outcomes.iter().map(|o| o.key()).collect::<Vec<_>>().join(","),
        );
        put(
            "feature_classes",
            self.feature_classes.iter().map(|c| c.key()).collect::<Vec<_>>().join(","),
        );
        put(
            "union_mode",
            match self.union_mode {
                UnionMode::PerOutcome => "per_outcome",
                UnionMode::Pooled => "pooled",
            }
            .into(),
        );
        put("calibration_bins", self.calibration_bins.to_string());
        put("calibration_scheme", self.calibration_scheme.key().into());
        put("ci_level", self.ci_level.to_string());
        put("cluster_map", self.cluster_map.clone().unwrap_or_else(|| "none".into()));
        put("seed", self.seed.to_string());
        s
    }

    /// Parses a config; keys not given keep their defaults.
    pub fn parse(text: &str) -> Result<PipelineConfig, ConfigError> {
        let mut c = PipelineConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        let mut lambdas: Option<Vec<f64>> = None;
        let (mut n_lambda, mut ratio) = match c.elastic_net.path {
            LambdaPath::Auto { n_lambda, ratio } => (n_lambda, ratio),
            LambdaPath::Explicit(_) => unreachable!("default path is automatic"),
        };
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("expected `key = value`, got `{content}`"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::DuplicateKey {
                    line,
                    key: key.into(),
                });
            }
            let bad = |message: String| ConfigError::Value {
                key: key.into(),
                message,
            };
            match key {
                "buffer_days" => c.buffer_days = num(key, value)?,
                "buffer_boundary" => {
                    c.buffer_boundary = match value {
                        "inclusive" => BufferBoundary::Inclusive,
                        "exclusive" => BufferBoundary::Exclusive,
                        _ => return Err(bad(format!("`{value}` (inclusive|exclusive)"))),
                    }
                }
                "test_fraction" => c.test_fraction = num(key, value)?,
                "split_strategy" => {
                    c.split_strategy = match value {
                        "stratified" => SplitStrategy::Stratified,
                        "simple" => SplitStrategy::Simple,
                        _ => return Err(bad(format!("`{value}` (stratified|simple)"))),
                    }
                }
                "n_resamples" => c.n_resamples = num(key, value)?,
                "cv_folds_phase1" => c.cv_folds_phase1 = num(key, value)?,
                "cv_folds_phase2" => c.cv_folds_phase2 = num(key, value)?,
                "msmr_min_prevalence" => c.msmr.min_prevalence = num(key, value)?,
                "msmr_mi_keep" => c.msmr.mi_keep = num(key, value)?,
                "msmr_jmi_budget" => c.msmr.jmi_budget = num(key, value)?,
                "max_sequence_entries" => {
                    c.max_sequence_entries = if value == "none" { None } else { Some(num(key, value)?) }
                }
                "learners" => c.learners = list(value).map(str::to_string).collect(),
                "gbm_trees" => c.gbm.n_trees = list(value).map(|v| num(key, v)).collect::<Result<_, _>>()?,
                "gbm_shrinkage" => c.gbm.shrinkage = list(value).map(|v| num(key, v)).collect::<Result<_, _>>()?,
                "gbm_depth" => c.gbm.max_depth = list(value).map(|v| num(key, v)).collect::<Result<_, _>>()?,
                "gbm_bag_fraction" => c.gbm.bag_fraction = num(key, value)?,
                "gbm_min_leaf" => c.gbm.min_leaf = num(key, value)?,
                "enet_alpha" => c.elastic_net.alpha = num(key, value)?,
                "enet_n_lambda" => n_lambda = num(key, value)?,
                "enet_lambda_ratio" => ratio = num(key, value)?,
                "enet_lambdas" => {
                    lambdas = Some(list(value).map(|v| num(key, v)).collect::<Result<_, _>>()?);
                }
                "enet_rule" => {
                    c.elastic_net.rule = match value {
                        "min" => LambdaRule::Min,
                        "one_se" => LambdaRule::OneSe,
                        _ => return Err(bad(format!("`{value}` (min|one_se)"))),
                    }
                }
                "top_algorithms" => c.top_algorithms = num(key, value)?,
                "outcomes" => {
                    c.outcomes = list(value)
                        .map(|v| Outcome::from_key(v).ok_or_else(|| bad(format!("unknown outcome `{v}`"))))
                        .collect::<Result<_, _>>()?;
                }
                "feature_classes" => {
                    c.feature_classes = list(value)
                        .map(|v| FeatureClass::from_key(v).ok_or_else(|| bad(format!("unknown feature class `{v}`"))))
                        .collect::<Result<_, _>>()?;
                }
                "union_mode" => {
                    c.union_mode = match value {
                        "per_outcome" => UnionMode::PerOutcome,
                        "pooled" => UnionMode::Pooled,
                        _ => return Err(bad(format!("`{value}` (per_outcome|pooled)"))),
                    }
                }
                "calibration_bins" => c.calibration_bins = num(key, value)?,
                "calibration_scheme" => {
                    c.calibration_scheme = BinScheme::from_key(value)
                        .ok_or_else(|| bad(format!("`{value}` (equal_width|quantile)")))?;
                }
                "ci_level" => c.ci_level = num(key, value)?,
                "cluster_map" => c.cluster_map = (value != "none" && !value.is_empty()).then(|| value.to_string()),
                "seed" => c.seed = num(key, value)?,
                _ => {
                    return Err(ConfigError::UnknownKey {
                        line,
                        key: key.into(),
                    })
                }
            }
        }
        if lambdas.is_some() && (seen.contains("enet_n_lambda") || seen.contains("enet_lambda_ratio")) {
            return Err(ConfigError::Value {
                key: "enet_lambdas".into(),
                message: "cannot be combined with enet_n_lambda or enet_lambda_ratio".into(),
            });
        }
        c.elastic_net.path = match lambdas {
            Some(values) => LambdaPath::Explicit(values),
            None => LambdaPath::Auto { n_lambda, ratio },
        };
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<PipelineConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        PipelineConfig::parse(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, message: String| {
            Err(ConfigError::Value {
                key: key.into(),
                message,
            })
        };
        let fraction = |v: f64| v > 0.0 && v < 1.0;
        if !fraction(self.test_fraction) {
            return bad("test_fraction", format!("{} outside (0, 1)", self.test_fraction));
        }
        for (key, v) in [
            ("n_resamples", self.n_resamples),
            ("cv_folds_phase1", self.cv_folds_phase1),
            ("cv_folds_phase2", self.cv_folds_phase2),
            ("msmr_mi_keep", self.msmr.mi_keep),
            ("msmr_jmi_budget", self.msmr.jmi_budget),
            ("top_algorithms", self.top_algorithms),
            ("gbm_min_leaf", self.gbm.min_leaf),
        ] {
            if v == 0 {
                return bad(key, "must be at least 1".into());
            }
        }
        if !(0.0..1.0).contains(&self.msmr.min_prevalence) {
            return bad("msmr_min_prevalence", format!("{} outside [0, 1)", self.msmr.min_prevalence));
        }
        if self.calibration_bins < 2 {
            return bad("calibration_bins", "must be at least 2".into());
        }
        if !fraction(self.ci_level) {
            return bad("ci_level", format!("{} outside (0, 1)", self.ci_level));
        }
        if !(self.gbm.bag_fraction > 0.0 && self.gbm.bag_fraction <= 1.0) {
            return bad("gbm_bag_fraction", format!("{} outside (0, 1]", self.gbm.bag_fraction));
        }
        if self.gbm.n_trees.is_empty() || self.gbm.shrinkage.is_empty() || self.gbm.max_depth.is_empty() {
            return bad("gbm_trees", "gbm grid lists must be non-empty".into());
        }
        if self.gbm.shrinkage.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return bad("gbm_shrinkage", "values must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.elastic_net.alpha) {
            return bad("enet_alpha", format!("{} outside [0, 1]", self.elastic_net.alpha));
        }
        match &self.elastic_net.path {
            LambdaPath::Auto { n_lambda, ratio } => {
                if *n_lambda == 0 {
                    return bad("enet_n_lambda", "must be at least 1".into());
                }
                if !fraction(*ratio) {
                    return bad("enet_lambda_ratio", format!("{ratio} outside (0, 1)"));
                }
            }
            LambdaPath::Explicit(values) => {
                if values.is_empty() || values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return bad("enet_lambdas", "values must be finite and non-negative".into());
                }
            }
        }
        if self.learners.is_empty() {
            return bad("learners", "at least one learner is required".into());
        }
        for (i, l) in self.learners.iter().enumerate() {
            if !KNOWN_LEARNERS.contains(&l.as_str()) {
                return bad("learners", format!("unknown learner `{l}` (known: {})", KNOWN_LEARNERS.join(", ")));
            }
            if self.learners[..i].contains(l) {
                return bad("learners", format!("`{l}` listed twice"));
            }
        }
        if self.outcomes.is_empty() {
            return bad("outcomes", "at least one outcome is required".into());
        }
        if self.feature_classes.is_empty() {
            return bad("feature_classes", "at least one feature class is required".into());
        }
        for (key, n, unique) in [
            ("outcomes", self.outcomes.len(), dedup_len(&self.outcomes)),
            ("feature_classes", self.feature_classes.len(), dedup_len(&self.feature_classes)),
        ] {
            if n != unique {
                return bad(key, "values listed twice".into());
            }
        }
        Ok(())
    }
}

fn dedup_len<T: Ord + Clone>(items: &[T]) -> usize {
    items.iter().cloned().collect::<std::collections::BTreeSet<_>>().len()
}

fn list(value: &str) -> impl Iterator<Item = &str> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.into(),
        message: format!("`{value}`: {e}"),
    })
}
