//! Phase 1 (iterative feature and algorithm selection), phase 2 (final
//! models per outcome and feature class), and report assembly.

mod config;
mod report;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::cohort::{Cohort, CohortError, CohortSummary, Outcome, ScenarioTable, SplitIndices};
use crate::evaluation::{auc_roc, calibration_bins, AucRecord, CalibrationCurve, EvaluationError, MetricSummary};
use crate::learners::{
    Classifier, ElasticNetLearner, GbmLearner, InfluenceReport, Learner, LearnerError,
};
use crate::msmr::{run_msmr, MsmrError};
use crate::seed::derive_seed;
use crate::synth::SynthError;
use crate::tspm::{
    encode_clinical, mine_raw, mine_transitive, DemographicEncoder, FeatureDescriptor, MiningOptions,
    SparseFeatureMatrix, TspmError,
};

pub use config::{ConfigError, FeatureClass, PipelineConfig, UnionMode, KNOWN_LEARNERS};
pub use report::{
    emit_phase1, emit_phase2, read_cluster_map, read_phase1_summary, verify_manifest, write_manifest, ClusterMap,
    MANIFEST_FILE,
};

/// Seed-path tags, so that every random draw has its own stream.
const PHASE1: u64 = 1;
const PHASE2: u64 = 2;
const SPLIT: u64 = 0;
const FIT: u64 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{context}: {source}")]
    Tspm {
        context: String,
        #[source]
        source: TspmError,
    },
    #[error("feature selection for {outcome}, iteration {iteration}: {source}")]
    Msmr {
        outcome: Outcome,
        iteration: usize,
        #[source]
        source: MsmrError,
    },
    #[error("{algorithm} for {outcome} ({context}): {source}")]
    Learner {
        outcome: Outcome,
        algorithm: String,
        context: String,
        #[source]
        source: LearnerError,
    },
    #[error("{context}: {source}")]
    Evaluation {
        context: String,
        #[source]
        source: EvaluationError,
    },
    #[error("phase-1 feature union for {0} is empty; loosen the MSMR thresholds (msmr_min_prevalence, msmr_mi_keep, msmr_jmi_budget)")]
    EmptyUnion(Outcome),
    #[error("phase-1 results are malformed: {0}")]
    Phase1Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    /// 2 for configuration problems, 3 for input data problems, 4 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Cohort(_) | PipelineError::Phase1Format(_) => 3,
            PipelineError::Synth(SynthError::InvalidSpec(_)) => 2,
            _ => 4,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> PipelineError {
        PipelineError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub fn build_learners(config: &PipelineConfig) -> Vec<Box<dyn Learner>> {
    config
        .learners
        .iter()
        .map(|name| -> Box<dyn Learner> {
            match name.as_str() {
                "gbm" => Box::new(GbmLearner::new(config.gbm.clone())),
                "elastic_net" => Box::new(ElasticNetLearner::new(config.elastic_net.clone())),
                other => unreachable!("validated learner name {other}"),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectedFeature {
    pub descriptor: FeatureDescriptor,
    pub mi: f64,
    pub jmi_gain: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionRecord {
    pub outcome: Outcome,
    pub iteration: usize,
    /// Features in selection order.
    pub features: Vec<SelectedFeature>,
    pub step_sizes: [usize; 3],
}

/// Features used by one phase-1 model.
#[derive(Clone, Debug, PartialEq)]
pub struct ScreenRecord {
    pub outcome: Outcome,
    pub iteration: usize,
    pub algorithm: String,
    pub features: BTreeSet<FeatureDescriptor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlgorithmRank {
    pub algorithm: String,
    pub median_auc: f64,
}

/// What phase 2 needs from phase 1.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Phase1Summary {
    pub unions: BTreeMap<Outcome, BTreeSet<FeatureDescriptor>>,
    /// Ranking by median held-out AUC over all outcomes and iterations.
    pub ranking: Vec<AlgorithmRank>,
    pub outcome_ranking: BTreeMap<Outcome, Vec<AlgorithmRank>>,
}

impl Phase1Summary {
    pub fn pooled_union(&self) -> BTreeSet<FeatureDescriptor> {
        self.unions.values().flatten().cloned().collect()
    }

    pub fn union_for(&self, outcome: Outcome, mode: UnionMode) -> BTreeSet<FeatureDescriptor> {
        match mode {
            UnionMode::PerOutcome => self.unions.get(&outcome).cloned().unwrap_or_default(),
            UnionMode::Pooled => self.pooled_union(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phase1Report {
    /// Held-out AUC per (outcome, iteration, algorithm); feature class is
    /// always clinical.
    pub records: Vec<AucRecord>,
    pub selections: Vec<SelectionRecord>,
    pub screens: Vec<ScreenRecord>,
    pub summary: Phase1Summary,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn rank_algorithms<'a>(records: impl Iterator<Item = &'a AucRecord>) -> Vec<AlgorithmRank> {
    let mut by_algorithm: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in records {
        by_algorithm.entry(&r.algorithm).or_default().push(r.auc);
    }
    let mut ranking: Vec<AlgorithmRank> = by_algorithm
        .into_iter()
        .map(|(a, mut v)| AlgorithmRank {
            algorithm: a.to_string(),
            median_auc: median(&mut v),
        })
        .collect();
    ranking.sort_by(|a, b| b.median_auc.total_cmp(&a.median_auc).then(a.algorithm.cmp(&b.algorithm)));
    ranking
}

fn tspm_err(context: String) -> impl FnOnce(TspmError) -> PipelineError {
    move |source| PipelineError::Tspm { context, source }
}

fn eval_err(context: String) -> impl FnOnce(EvaluationError) -> PipelineError {
    move |source| PipelineError::Evaluation { context, source }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    One,
    Two,
}

/// The train/test split used by `phase` at resample `iteration`.
pub fn resample_split(
    cohort: &Cohort,
    config: &PipelineConfig,
    phase: Phase,
    iteration: usize,
) -> Result<SplitIndices, PipelineError> {
    let tag = match phase {
        Phase::One => PHASE1,
        Phase::Two => PHASE2,
    };
    Ok(cohort.split_indices(
        config.test_fraction,
        derive_seed(config.seed, &[tag, iteration as u64, SPLIT]),
        config.split_strategy,
    )?)
}

struct OutcomeResult {
    selection: SelectionRecord,
    aucs: Vec<AucRecord>,
    screens: Vec<ScreenRecord>,
}

/// Phase 1: per resample, mine the training split, run MSMR per outcome,
/// fit every learner, score it on the held-out split, and collect the
/// features each model uses.
pub fn run_phase1(cohort: &Cohort, config: &PipelineConfig) -> Result<Phase1Report, PipelineError> {
    config.validate()?;
    let buffered = cohort.apply_temporal_buffer(config.buffer_days, config.buffer_boundary);
    let learners = build_learners(config);
    let iterations: Vec<usize> = (0..config.n_resamples).collect();
    let per_iteration = crate::par_map(&iterations, |&k| -> Result<Vec<OutcomeResult>, PipelineError> {
        let split = resample_split(&buffered, config, Phase::One, k)?;
        let train = buffered.subset(&split.train);
        let test = buffered.subset(&split.test);
        let context = || format!("mining iteration {k}");
        let raw = mine_raw(&train);
        let seq = mine_transitive(
            &train,
            &MiningOptions {
                min_prevalence: Some(config.msmr.min_prevalence),
                max_entries: config.max_sequence_entries,
            },
        )
        .map_err(tspm_err(context()))?;
        let clinical = SparseFeatureMatrix::hstack(&[&raw, &seq]).map_err(tspm_err(context()))?;
        drop((raw, seq));
        let outcomes = config.outcomes.clone();
        crate::par_map(&outcomes, |&outcome| {
            phase1_outcome(&clinical, &train, &test, outcome, k, &learners, config)
        })
        .into_iter()
        .collect()
    });
    let mut records = Vec::new();
    let mut selections = Vec::new();
    let mut screens = Vec::new();
    for result in per_iteration {
        for r in result? {
            records.extend(r.aucs);
            selections.push(r.selection);
            screens.extend(r.screens);
        }
    }
    let mut unions: BTreeMap<Outcome, BTreeSet<FeatureDescriptor>> =
        config.outcomes.iter().map(|&o| (o, BTreeSet::new())).collect();
    for s in &screens {
        unions.get_mut(&s.outcome).expect("configured outcome").extend(s.features.iter().cloned());
    }
    let ranking = rank_algorithms(records.iter());
    let outcome_ranking = config
        .outcomes
        .iter()
        .map(|&o| (o, rank_algorithms(records.iter().filter(|r| r.outcome == o.key()))))
        .collect();
    Ok(Phase1Report {
        records,
        selections,
        screens,
        summary: Phase1Summary {
            unions,
            ranking,
            outcome_ranking,
        },
    })
}

fn phase1_outcome(
    clinical: &SparseFeatureMatrix,
    train: &Cohort,
    test: &Cohort,
    outcome: Outcome,
    k: usize,
    learners: &[Box<dyn Learner>],
    config: &PipelineConfig,
) -> Result<OutcomeResult, PipelineError> {
    let y_train = train.labels(outcome);
    let y_test = test.labels(outcome);
    let selection = run_msmr(clinical, &y_train, &config.msmr).map_err(|source| PipelineError::Msmr {
        outcome,
        iteration: k,
        source,
    })?;
    let x_train = clinical.select_columns(&selection.selected);
    let x_test = encode_clinical(test, x_train.features())
        .map_err(tspm_err(format!("projecting test rows, {outcome} iteration {k}")))?;
    let mut aucs = Vec::new();
    let mut screens = Vec::new();
    for (a, learner) in learners.iter().enumerate() {
        let learner_err = |source| PipelineError::Learner {
            outcome,
            algorithm: learner.name().to_string(),
            context: format!("phase 1 iteration {k}"),
            source,
        };
        let model = learner
            .fit(
                &x_train,
                &y_train,
                config.cv_folds_phase1,
                derive_seed(config.seed, &[PHASE1, k as u64, FIT, outcome.index() as u64, a as u64]),
            )
            .map_err(learner_err)?;
        let scores = model.predict_proba(&x_test).map_err(learner_err)?;
        let auc = auc_roc(&scores, &y_test)
            .map_err(eval_err(format!("{} AUC for {outcome} iteration {k}", learner.name())))?
            .auc;
        aucs.push(AucRecord {
            outcome: outcome.key().to_string(),
            feature_class: FeatureClass::Clinical.key().to_string(),
            iteration: k,
            algorithm: learner.name().to_string(),
            auc,
        });
        screens.push(ScreenRecord {
            outcome,
            iteration: k,
            algorithm: learner.name().to_string(),
            features: model
                .screened_features()
                .into_iter()
                .map(|j| model.features()[j].clone())
                .collect(),
        });
    }
    let features = selection
        .selected
        .iter()
        .zip(&selection.mi)
        .zip(&selection.jmi_gain)
        .map(|((&j, &mi), &jmi_gain)| SelectedFeature {
            descriptor: clinical.features()[j].clone(),
            mi,
            jmi_gain,
        })
        .collect();
    Ok(OutcomeResult {
        selection: SelectionRecord {
            outcome,
            iteration: k,
            features,
            step_sizes: selection.step_sizes,
        },
        aucs,
        screens,
    })
}

/// Results for one (outcome, feature class) cell of phase 2.
#[derive(Clone, Debug, PartialEq)]
pub struct Phase2Cell {
    pub outcome: Outcome,
    pub class: FeatureClass,
    /// Algorithms in phase-1 rank order; the first fills the summary table.
    pub algorithms: Vec<String>,
    pub n_models: usize,
    pub summaries: Vec<MetricSummary>,
    /// Calibration per algorithm, pooled over resamples.
    pub calibration: Vec<CalibrationCurve>,
    /// Boosted-tree influence averaged over resamples, scaled to max 100.
    pub influence: Vec<(FeatureDescriptor, f64)>,
    /// Every feature any model in the cell uses.
    pub model_features: BTreeSet<FeatureDescriptor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phase2Report {
    pub records: Vec<AucRecord>,
    pub cells: Vec<Phase2Cell>,
    pub scenarios: ScenarioTable,
    pub cohort_summary: CohortSummary,
}

struct FitResult {
    auc: f64,
    scores: Vec<f64>,
    labels: Vec<bool>,
    influence: Option<Vec<(FeatureDescriptor, f64)>>,
    features: BTreeSet<FeatureDescriptor>,
}

/// Phase 2: for each outcome and feature class, fit the top-ranked phase-1
/// algorithms on fresh resamples restricted to that class's columns.
pub fn run_phase2(
    cohort: &Cohort,
    config: &PipelineConfig,
    phase1: &Phase1Summary,
) -> Result<Phase2Report, PipelineError> {
    config.validate()?;
    if phase1.ranking.is_empty() {
        return Err(PipelineError::Phase1Format("algorithm ranking is empty".into()));
    }
    let buffered = cohort.apply_temporal_buffer(config.buffer_days, config.buffer_boundary);
    let all_learners = build_learners(config);
    let top: Vec<&dyn Learner> = phase1
        .ranking
        .iter()
        .take(config.top_algorithms)
        .map(|r| {
            all_learners
                .iter()
                .find(|l| l.name() == r.algorithm)
                .map(|l| l.as_ref())
                .ok_or_else(|| PipelineError::Phase1Format(format!("ranked algorithm `{}` is not configured", r.algorithm)))
        })
        .collect::<Result<_, _>>()?;
    let mut unions = BTreeMap::new();
    for &o in &config.outcomes {
        let union: Vec<FeatureDescriptor> = phase1.union_for(o, config.union_mode).into_iter().collect();
        if union.is_empty() && config.feature_classes.iter().any(|c| c.uses_clinical()) {
            return Err(PipelineError::EmptyUnion(o));
        }
        unions.insert(o, union);
    }
    let splits: Vec<(Cohort, Cohort)> = (0..config.n_resamples)
        .map(|r| {
            let split = resample_split(&buffered, config, Phase::Two, r)?;
            Ok((buffered.subset(&split.train), buffered.subset(&split.test)))
        })
        .collect::<Result<_, PipelineError>>()?;
    let mut jobs = Vec::new();
    for &o in &config.outcomes {
        for &c in &config.feature_classes {
            for r in 0..config.n_resamples {
                jobs.push((o, c, r));
            }
        }
    }
    let results = crate::par_map(&jobs, |&(outcome, class, r)| {
        let (train, test) = &splits[r];
        phase2_job(train, test, outcome, class, r, &unions[&outcome], &top, config)
    });
    let mut by_cell: BTreeMap<(Outcome, FeatureClass), Vec<Vec<FitResult>>> = BTreeMap::new();
    let mut records = Vec::new();
    for (&(outcome, class, r), result) in jobs.iter().zip(results) {
        let fits = result?;
        for (learner, fit) in top.iter().zip(&fits) {
            records.push(AucRecord {
                outcome: outcome.key().to_string(),
                feature_class: class.key().to_string(),
                iteration: r,
                algorithm: learner.name().to_string(),
                auc: fit.auc,
            });
        }
        by_cell.entry((outcome, class)).or_default().push(fits);
    }
    let mut cells = Vec::new();
    for &outcome in &config.outcomes {
        for &class in &config.feature_classes {
            let resamples = by_cell.remove(&(outcome, class)).unwrap_or_default();
            cells.push(assemble_cell(outcome, class, &top, resamples, config)?);
        }
    }
    Ok(Phase2Report {
        records,
        cells,
        scenarios: cohort.scenario_probabilities(),
        cohort_summary: cohort.summary(),
    })
}

#[allow(clippy::too_many_arguments)]
fn phase2_job(
    train: &Cohort,
    test: &Cohort,
    outcome: Outcome,
    class: FeatureClass,
    r: usize,
    union: &[FeatureDescriptor],
    top: &[&dyn Learner],
    config: &PipelineConfig,
) -> Result<Vec<FitResult>, PipelineError> {
    let context = format!("phase 2 {} resample {r}", class.key());
    let clinical = if class.uses_clinical() {
        Some((
            encode_clinical(train, union).map_err(tspm_err(context.clone()))?,
            encode_clinical(test, union).map_err(tspm_err(context.clone()))?,
        ))
    } else {
        None
    };
    let y_train = train.labels(outcome);
    let y_test = test.labels(outcome);
    top.iter()
        .enumerate()
        .map(|(a, learner)| {
            let demo = (class != FeatureClass::Clinical).then(|| {
                let encoder = DemographicEncoder::fit(train, learner.demographic_encoding());
                (encoder.encode(train), encoder.encode(test))
            });
            let (x_train, x_test) = match (&demo, &clinical) {
                (Some((d_tr, d_te)), Some((c_tr, c_te))) => (
                    SparseFeatureMatrix::hstack(&[d_tr, c_tr]).map_err(tspm_err(context.clone()))?,
                    SparseFeatureMatrix::hstack(&[d_te, c_te]).map_err(tspm_err(context.clone()))?,
                ),
                (Some((d_tr, d_te)), None) => (d_tr.clone(), d_te.clone()),
                (None, Some((c_tr, c_te))) => (c_tr.clone(), c_te.clone()),
                (None, None) => unreachable!("every class uses some columns"),
            };
            let learner_err = |source| PipelineError::Learner {
                outcome,
                algorithm: learner.name().to_string(),
                context: context.clone(),
                source,
            };
            let model: Box<dyn Classifier> = learner
                .fit(
                    &x_train,
                    &y_train,
                    config.cv_folds_phase2,
                    derive_seed(
                        config.seed,
                        &[PHASE2, r as u64, FIT, outcome.index() as u64, class as u64, a as u64],
                    ),
                )
                .map_err(learner_err)?;
            let scores = model.predict_proba(&x_test).map_err(learner_err)?;
            let auc = auc_roc(&scores, &y_test)
                .map_err(eval_err(format!("{} AUC for {outcome}, {context}", learner.name())))?
                .auc;
            let features = model.features();
            Ok(FitResult {
                auc,
                scores,
                labels: y_test.clone(),
                influence: model
                    .raw_influence()
                    .map(|raw| features.iter().cloned().zip(raw).collect()),
                features: model.screened_features().into_iter().map(|j| features[j].clone()).collect(),
            })
        })
        .collect()
}

fn assemble_cell(
    outcome: Outcome,
    class: FeatureClass,
    top: &[&dyn Learner],
    resamples: Vec<Vec<FitResult>>,
    config: &PipelineConfig,
) -> Result<Phase2Cell, PipelineError> {
    let mut summaries = Vec::new();
    let mut calibration = Vec::new();
    let mut influence_sum: BTreeMap<FeatureDescriptor, f64> = BTreeMap::new();
    let mut influence_fits = 0usize;
    let mut model_features = BTreeSet::new();
    for (a, learner) in top.iter().enumerate() {
        let fits: Vec<&FitResult> = resamples.iter().map(|r| &r[a]).collect();
        let aucs: Vec<f64> = fits.iter().map(|f| f.auc).collect();
        summaries.push(
            MetricSummary::from_values(aucs, config.ci_level)
                .map_err(eval_err(format!("{} summary for {outcome} {}", learner.name(), class.key())))?
                .clamped(0.0, 1.0),
        );
        let scores: Vec<f64> = fits.iter().flat_map(|f| f.scores.iter().copied()).collect();
        let labels: Vec<bool> = fits.iter().flat_map(|f| f.labels.iter().copied()).collect();
        calibration.push(
            calibration_bins(&scores, &labels, config.calibration_bins, config.calibration_scheme)
                .map_err(eval_err(format!("calibration for {outcome} {}", class.key())))?,
        );
        for f in &fits {
            model_features.extend(f.features.iter().cloned());
            if let Some(inf) = &f.influence {
                influence_fits += 1;
                for (d, v) in inf {
                    *influence_sum.entry(d.clone()).or_insert(0.0) += v;
                }
            }
        }
    }
    let descriptors: Vec<FeatureDescriptor> = influence_sum.keys().cloned().collect();
    let raw: Vec<f64> = influence_sum.values().map(|v| v / influence_fits.max(1) as f64).collect();
    let influence = InfluenceReport::from_raw(&raw, &descriptors)
        .entries
        .into_iter()
        .map(|e| (e.descriptor, e.influence))
        .collect();
    Ok(Phase2Cell {
        outcome,
        class,
        algorithms: top.iter().map(|l| l.name().to_string()).collect(),
        n_models: resamples.len() * top.len(),
        summaries,
        calibration,
        influence,
        model_features,
    })
}
