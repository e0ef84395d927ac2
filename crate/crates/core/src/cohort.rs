//! Longitudinal event ingestion, the pre-index temporal buffer, outcome
//! scenarios, cohort summaries and reproducible train/test resampling.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub type Date = NaiveDate;

pub const EVENTS_FILE: &str = "events.csv";
pub const DEMOGRAPHICS_FILE: &str = "demographics.csv";
pub const OUTCOMES_FILE: &str = "outcomes.csv";

pub const EVENTS_HEADER: [&str; 3] = ["patient_id", "code", "date"];
pub const DEMOGRAPHICS_HEADER: [&str; 5] = ["patient_id", "age", "gender", "race", "ethnicity"];
pub const OUTCOMES_HEADER: [&str; 10] = [
    "patient_id",
    "index_date",
    "hosp",
    "hosp_date",
    "icu",
    "icu_date",
    "vent",
    "vent_date",
    "death",
    "death_date",
];

const MAX_AGE: u32 = 130;

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("i/o error reading {file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: header has unknown columns [{}] and missing columns [{}]", unknown.join(","), missing.join(","))]
    Header {
        file: String,
        unknown: Vec<String>,
        missing: Vec<String>,
    },
    #[error("{file}:{line}: malformed row: {message}")]
    MalformedRow {
        file: String,
        line: u64,
        message: String,
    },
    #[error("{file}:{line}: invalid date {value:?} (expected YYYY-MM-DD)")]
    InvalidDate {
        file: String,
        line: u64,
        value: String,
    },
    #[error("{file}:{line}: patient {patient_id:?} is not present in the outcomes file")]
    UnknownPatient {
        file: String,
        line: u64,
        patient_id: String,
    },
    #[error("{file}:{line}: duplicate patient {patient_id:?}")]
    DuplicatePatient {
        file: String,
        line: u64,
        patient_id: String,
    },
    #[error("patient {0:?} has outcomes but no demographics row")]
    MissingDemographics(String),
    #[error("outcomes:{line}: patient {patient_id:?}: {message}")]
    OutcomeInvariant {
        line: u64,
        patient_id: String,
        message: String,
    },
    #[error("test fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
    #[error("cohort too small to place a positive {outcome} case on both sides of the split ({positives} positive(s))")]
    SplitTooSmall { outcome: Outcome, positives: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Outcome {
    Hospitalization,
    Icu,
    Ventilation,
    Death,
}

impl Outcome {
    /// Severity order.
    pub const ALL: [Outcome; 4] = [
        Outcome::Hospitalization,
        Outcome::Icu,
        Outcome::Ventilation,
        Outcome::Death,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Short key used in file formats and configuration.
    pub fn key(self) -> &'static str {
        match self {
            Outcome::Hospitalization => "hosp",
            Outcome::Icu => "icu",
            Outcome::Ventilation => "vent",
            Outcome::Death => "death",
        }
    }

    /// Stage label used in scenario strings.
    pub fn stage_label(self) -> &'static str {
        match self {
            Outcome::Hospitalization => "Hospitalized",
            Outcome::Icu => "ICU",
            Outcome::Ventilation => "Ventilation",
            Outcome::Death => "Died",
        }
    }

    pub fn from_key(key: &str) -> Option<Outcome> {
        Outcome::ALL.into_iter().find(|o| o.key() == key)
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClinicalEvent {
    pub patient_id: String,
    pub code: String,
    pub date: Date,
}

/// One coded record on a patient's timeline.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodedEvent {
    pub code: String,
    pub date: Date,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatientTimeline {
    patient_id: String,
    events: Vec<CodedEvent>,
    first_occurrence: BTreeMap<String, Date>,
    occurrence_count: BTreeMap<String, u32>,
}

impl PatientTimeline {
    /// Builds a timeline; events are stably sorted by date so same-day
    /// records keep their input order.
    pub fn new(patient_id: impl Into<String>, mut events: Vec<CodedEvent>) -> Self {
        events.sort_by_key(|e| e.date);
        let mut first_occurrence = BTreeMap::new();
        let mut occurrence_count = BTreeMap::new();
        for e in &events {
            first_occurrence.entry(e.code.clone()).or_insert(e.date);
            *occurrence_count.entry(e.code.clone()).or_insert(0u32) += 1;
        }
        PatientTimeline {
            patient_id: patient_id.into(),
            events,
            first_occurrence,
            occurrence_count,
        }
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn events(&self) -> &[CodedEvent] {
        &self.events
    }

    /// Earliest date per distinct code.
    pub fn first_occurrence(&self) -> &BTreeMap<String, Date> {
        &self.first_occurrence
    }

    pub fn occurrence_count(&self) -> &BTreeMap<String, u32> {
        &self.occurrence_count
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    fn retain_until(&self, keep: impl Fn(Date) -> bool) -> PatientTimeline {
        let events = self.events.iter().filter(|e| keep(e.date)).cloned().collect();
        PatientTimeline::new(self.patient_id.clone(), events)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Demographics {
    pub patient_id: String,
    pub age: u32,
    pub gender: String,
    pub race: String,
    pub ethnicity: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OutcomeFlag {
    pub positive: bool,
    pub date: Option<Date>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OutcomeLabels {
    pub patient_id: String,
    pub index_date: Date,
    flags: [OutcomeFlag; 4],
}

impl OutcomeLabels {
    /// Validates that positive outcomes are not dated before the index date
    /// and that negative outcomes carry no date.
    pub fn new(
        patient_id: impl Into<String>,
        index_date: Date,
        flags: [OutcomeFlag; 4],
    ) -> Result<Self, String> {
        for (outcome, flag) in Outcome::ALL.iter().zip(&flags) {
            match (flag.positive, flag.date) {
                (false, Some(_)) => return Err(format!("negative {outcome} outcome carries a date")),
                (true, Some(d)) if d < index_date => {
                    return Err(format!("{outcome} date {d} precedes index date {index_date}"))
                }
                _ => {}
            }
        }
        Ok(OutcomeLabels {
            patient_id: patient_id.into(),
            index_date,
            flags,
        })
    }

    pub fn flag(&self, outcome: Outcome) -> OutcomeFlag {
        self.flags[outcome.index()]
    }

    pub fn is_positive(&self, outcome: Outcome) -> bool {
        self.flags[outcome.index()].positive
    }

    fn pattern(&self) -> u8 {
        Outcome::ALL
            .iter()
            .filter(|o| self.is_positive(**o))
            .fold(0u8, |acc, o| acc | (1 << o.index()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatientRecord {
    pub timeline: PatientTimeline,
    pub demographics: Demographics,
    pub outcomes: OutcomeLabels,
}

impl PatientRecord {
    pub fn patient_id(&self) -> &str {
        &self.outcomes.patient_id
    }
}

/// Which side of the cutoff `index_date - buffer_days` is kept.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BufferBoundary {
    /// Events dated exactly on the cutoff are kept.
    #[default]
    Inclusive,
    Exclusive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SplitStrategy {
    #[default]
    Stratified,
    Simple,
}

/// Indices into [`Cohort::patients`]; both sides sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioTable {
    pub counts: BTreeMap<String, usize>,
    pub probabilities: BTreeMap<String, f64>,
    /// Patients left out because their outcome dates contradict the severity
    /// order or are missing.
    pub excluded: Vec<(String, String)>,
}

pub const NO_OUTCOME_SCENARIO: &str = "None";

#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeSummary {
    pub outcome: Outcome,
    pub positives: usize,
    pub rate: f64,
    pub mean_age: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CohortSummary {
    pub n_patients: usize,
    pub mean_age: Option<f64>,
    pub outcomes: Vec<OutcomeSummary>,
    pub mortality_rate: f64,
}

/// Patients sorted by id. Timelines, demographics and outcomes cover the
/// same patient set by construction.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Cohort {
    patients: Vec<PatientRecord>,
}

impl Cohort {
    pub fn from_records(mut patients: Vec<PatientRecord>) -> Self {
        patients.sort_by(|a, b| a.patient_id().cmp(b.patient_id()));
        Cohort { patients }
    }

    pub fn patients(&self) -> &[PatientRecord] {
        &self.patients
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn patient_ids(&self) -> Vec<String> {
        self.patients.iter().map(|p| p.patient_id().to_string()).collect()
    }

    pub fn labels(&self, outcome: Outcome) -> Vec<bool> {
        self.patients.iter().map(|p| p.outcomes.is_positive(outcome)).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Cohort {
        Cohort::from_records(indices.iter().map(|&i| self.patients[i].clone()).collect())
    }

    /// Reads `events.csv`, `demographics.csv` and `outcomes.csv` from `dir`.
    pub fn from_dir(dir: &Path) -> Result<Cohort, CohortError> {
        let open = |name: &str| {
            File::open(dir.join(name)).map_err(|source| CohortError::Io {
                file: name.to_string(),
                source,
            })
        };
        ingest_events(open(EVENTS_FILE)?, open(DEMOGRAPHICS_FILE)?, open(OUTCOMES_FILE)?)
    }

    /// Drops every event dated after `index_date - buffer_days` (or on it,
    /// for [`BufferBoundary::Exclusive`]). Patients with emptied timelines stay.
    pub fn apply_temporal_buffer(&self, buffer_days: u32, boundary: BufferBoundary) -> Cohort {
        let patients = self
            .patients
            .iter()
            .map(|p| {
                let cutoff = p.outcomes.index_date - Duration::days(i64::from(buffer_days));
                let timeline = match boundary {
                    BufferBoundary::Inclusive => p.timeline.retain_until(|d| d <= cutoff),
                    BufferBoundary::Exclusive => p.timeline.retain_until(|d| d < cutoff),
                };
                PatientRecord {
                    timeline,
                    demographics: p.demographics.clone(),
                    outcomes: p.outcomes.clone(),
                }
            })
            .collect();
        Cohort { patients }
    }

    pub fn scenario_probabilities(&self) -> ScenarioTable {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut excluded = Vec::new();
        for p in &self.patients {
            match scenario_of(&p.outcomes) {
                Ok(s) => *counts.entry(s).or_insert(0) += 1,
                Err(reason) => excluded.push((p.patient_id().to_string(), reason)),
            }
        }
        let total: usize = counts.values().sum();
        let probabilities = counts
            .iter()
            .map(|(k, &c)| (k.clone(), c as f64 / total as f64))
            .collect();
        ScenarioTable {
            counts,
            probabilities,
            excluded,
        }
    }

    pub fn summary(&self) -> CohortSummary {
        let n = self.patients.len();
        let mean = |ages: &[u32]| {
            (!ages.is_empty()).then(|| ages.iter().map(|&a| f64::from(a)).sum::<f64>() / ages.len() as f64)
        };
        let all_ages: Vec<u32> = self.patients.iter().map(|p| p.demographics.age).collect();
        let outcomes: Vec<OutcomeSummary> = Outcome::ALL
            .iter()
            .map(|&outcome| {
                let ages: Vec<u32> = self
                    .patients
                    .iter()
                    .filter(|p| p.outcomes.is_positive(outcome))
                    .map(|p| p.demographics.age)
                    .collect();
                OutcomeSummary {
                    outcome,
                    positives: ages.len(),
                    rate: if n == 0 { 0.0 } else { ages.len() as f64 / n as f64 },
                    mean_age: mean(&ages),
                }
            })
            .collect();
        let mortality_rate = outcomes[Outcome::Death.index()].rate;
        CohortSummary {
            n_patients: n,
            mean_age: mean(&all_ages),
            outcomes,
            mortality_rate,
        }
    }

    pub fn split_indices(
        &self,
        test_fraction: f64,
        seed: u64,
        strategy: SplitStrategy,
    ) -> Result<SplitIndices, CohortError> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(CohortError::InvalidFraction(test_fraction));
        }
        let n = self.patients.len();
        let n_test = (n as f64 * test_fraction).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut in_test = vec![false; n];

        match strategy {
            SplitStrategy::Simple => {
                let mut order: Vec<usize> = (0..n).collect();
                order.shuffle(&mut rng);
                for &i in order.iter().take(n_test) {
                    in_test[i] = true;
                }
            }
            SplitStrategy::Stratified => {
                let mut strata: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
                for (i, p) in self.patients.iter().enumerate() {
                    strata.entry(p.outcomes.pattern()).or_default().push(i);
                }
                for members in strata.values_mut() {
                    members.shuffle(&mut rng);
                }
                // Largest-remainder allocation keeps the total at exactly n_test.
                let exact: Vec<f64> = strata
                    .values()
                    .map(|m| m.len() as f64 * n_test as f64 / n.max(1) as f64)
                    .collect();
                let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
                let mut remaining = n_test - quota.iter().sum::<usize>();
                let mut by_remainder: Vec<usize> = (0..exact.len()).collect();
                by_remainder.sort_by(|&a, &b| {
                    let ra = exact[a] - exact[a].floor();
                    let rb = exact[b] - exact[b].floor();
                    rb.total_cmp(&ra).then(a.cmp(&b))
                });
                for &s in &by_remainder {
                    if remaining == 0 {
                        break;
                    }
                    quota[s] += 1;
                    remaining -= 1;
                }
                for (members, &q) in strata.values().zip(&quota) {
                    for &i in members.iter().take(q) {
                        in_test[i] = true;
                    }
                }
                self.repair_split(&mut in_test);
            }
        }

        for outcome in Outcome::ALL {
            let positives = self.labels(outcome);
            let total = positives.iter().filter(|&&y| y).count();
            if total == 0 {
                continue;
            }
            let test_pos = (0..n).filter(|&i| positives[i] && in_test[i]).count();
            if test_pos == 0 || test_pos == total {
                return Err(CohortError::SplitTooSmall {
                    outcome,
                    positives: total,
                });
            }
        }

        let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| in_test[i]);
        Ok(SplitIndices { train, test })
    }

    /// Swaps patients across the split so that every outcome with at least
    /// two positives has one on each side, keeping both side sizes fixed.
    fn repair_split(&self, in_test: &mut [bool]) {
        let n = self.patients.len();
        for _ in 0..Outcome::ALL.len() * 2 {
            let mut changed = false;
            for outcome in Outcome::ALL {
                let y = self.labels(outcome);
                let total = y.iter().filter(|&&v| v).count();
                if total < 2 {
                    continue;
                }
                let test_pos = (0..n).filter(|&i| y[i] && in_test[i]).count();
                let move_to_test = if test_pos == 0 {
                    true
                } else if test_pos == total {
                    false
                } else {
                    continue;
                };
                // Donor is a positive on the crowded side; receiver swaps back a
                // patient with the fewest positive outcomes.
                let donor = (0..n).find(|&i| y[i] && in_test[i] != move_to_test);
                let receiver = (0..n)
                    .filter(|&i| !y[i] && in_test[i] == move_to_test)
                    .min_by_key(|&i| self.patients[i].outcomes.pattern().count_ones());
                if let (Some(d), Some(r)) = (donor, receiver) {
                    in_test.swap(d, r);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    }

    pub fn split_train_test(
        &self,
        test_fraction: f64,
        seed: u64,
        strategy: SplitStrategy,
    ) -> Result<(Cohort, Cohort), CohortError> {
        let split = self.split_indices(test_fraction, seed, strategy)?;
        Ok((self.subset(&split.train), self.subset(&split.test)))
    }
}

fn scenario_of(labels: &OutcomeLabels) -> Result<String, String> {
    let positives: Vec<Outcome> = Outcome::ALL
        .into_iter()
        .filter(|o| labels.is_positive(*o))
        .collect();
    if positives.is_empty() {
        return Ok(NO_OUTCOME_SCENARIO.to_string());
    }
    let mut previous: Option<(Outcome, Date)> = None;
    for &o in &positives {
        let date = labels
            .flag(o)
            .date
            .ok_or_else(|| format!("positive {o} outcome has no date"))?;
        if let Some((prev, prev_date)) = previous {
            if date < prev_date {
                return Err(format!("{o} dated {date} before {prev} dated {prev_date}"));
            }
        }
        previous = Some((o, date));
    }
    let mut stages: Vec<&str> = positives.iter().map(|o| o.stage_label()).collect();
    if !labels.is_positive(Outcome::Death) {
        stages.push("Discharged");
    }
    Ok(stages.join("→"))
}

struct Table<R: Read> {
    file: &'static str,
    reader: csv::Reader<R>,
    columns: HashMap<String, usize>,
}

impl<R: Read> Table<R> {
    fn open(file: &'static str, input: R, expected: &[&str]) -> Result<Self, CohortError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(false)
            .from_reader(input);
        let header = reader.headers().map_err(|e| csv_error(file, e))?.clone();
        let present: BTreeSet<&str> = header.iter().collect();
        let unknown: Vec<String> = header
            .iter()
            .filter(|h| !expected.contains(h))
            .map(str::to_string)
            .collect();
        let missing: Vec<String> = expected
            .iter()
            .filter(|e| !present.contains(*e))
            .map(|e| e.to_string())
            .collect();
        if !unknown.is_empty() || !missing.is_empty() {
            return Err(CohortError::Header {
                file: file.to_string(),
                unknown,
                missing,
            });
        }
        let columns = header.iter().enumerate().map(|(i, h)| (h.to_string(), i)).collect();
        Ok(Table { file, reader, columns })
    }

    fn for_each_row(
        &mut self,
        mut visit: impl FnMut(u64, &Row<'_>) -> Result<(), CohortError>,
    ) -> Result<(), CohortError> {
        let mut record = csv::StringRecord::new();
        loop {
            match self.reader.read_record(&mut record) {
                Ok(false) => return Ok(()),
                Ok(true) => {
                    let line = record.position().map_or(0, |p| p.line());
                    let row = Row {
                        record: &record,
                        columns: &self.columns,
                    };
                    visit(line, &row)?;
                }
                Err(e) => return Err(csv_error(self.file, e)),
            }
        }
    }
}

struct Row<'a> {
    record: &'a csv::StringRecord,
    columns: &'a HashMap<String, usize>,
}

impl<'a> Row<'a> {
    fn get(&self, name: &str) -> &'a str {
        self.record.get(self.columns[name]).unwrap_or("")
    }
}

fn csv_error(file: &str, e: csv::Error) -> CohortError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => CohortError::Io {
            file: file.to_string(),
            source,
        },
        other => CohortError::MalformedRow {
            file: file.to_string(),
            line,
            message: format!("{other:?}"),
        },
    }
}

fn parse_date(file: &str, line: u64, value: &str) -> Result<Date, CohortError> {
    NaiveDate::parse_from_str(value, "%Y-%m-%d").map_err(|_| CohortError::InvalidDate {
        file: file.to_string(),
        line,
        value: value.to_string(),
    })
}

fn parse_optional_date(file: &str, line: u64, value: &str) -> Result<Option<Date>, CohortError> {
    if value.is_empty() {
        Ok(None)
    } else {
        parse_date(file, line, value).map(Some)
    }
}

fn non_empty(file: &str, line: u64, field: &str, value: &str) -> Result<String, CohortError> {
    if value.is_empty() {
        return Err(CohortError::MalformedRow {
            file: file.to_string(),
            line,
            message: format!("empty {field}"),
        });
    }
    Ok(value.to_string())
}

/// Assembles a cohort from the three delimited input streams. The outcomes
/// stream defines the patient set.
pub fn ingest_events<E: Read, D: Read, O: Read>(
    events: E,
    demographics: D,
    outcomes: O,
) -> Result<Cohort, CohortError> {
    let mut labels: BTreeMap<String, OutcomeLabels> = BTreeMap::new();
    let mut table = Table::open("outcomes", outcomes, &OUTCOMES_HEADER)?;
    table.for_each_row(|line, row| {
        let file = "outcomes";
        let patient_id = non_empty(file, line, "patient_id", row.get("patient_id"))?;
        let index_date = parse_date(file, line, row.get("index_date"))?;
        let mut flags = [OutcomeFlag::default(); 4];
        for (flag, outcome) in flags.iter_mut().zip(Outcome::ALL) {
            let key = outcome.key();
            let positive = match row.get(key) {
                "0" => false,
                "1" => true,
                other => {
                    return Err(CohortError::MalformedRow {
                        file: file.to_string(),
                        line,
                        message: format!("{key} must be 0 or 1, got {other:?}"),
                    })
                }
            };
            let date = parse_optional_date(file, line, row.get(&format!("{key}_date")))?;
            *flag = OutcomeFlag { positive, date };
        }
        let record = OutcomeLabels::new(patient_id.clone(), index_date, flags).map_err(|message| {
            CohortError::OutcomeInvariant {
                line,
                patient_id: patient_id.clone(),
                message,
            }
        })?;
        if labels.insert(patient_id.clone(), record).is_some() {
            return Err(CohortError::DuplicatePatient {
                file: file.to_string(),
                line,
                patient_id,
            });
        }
        Ok(())
    })?;

    let mut demo: BTreeMap<String, Demographics> = BTreeMap::new();
    let mut table = Table::open("demographics", demographics, &DEMOGRAPHICS_HEADER)?;
    table.for_each_row(|line, row| {
        let file = "demographics";
        let patient_id = non_empty(file, line, "patient_id", row.get("patient_id"))?;
        if !labels.contains_key(&patient_id) {
            return Err(CohortError::UnknownPatient {
                file: file.to_string(),
                line,
                patient_id,
            });
        }
        let age: u32 = row.get("age")
            .parse()
            .ok()
            .filter(|a| *a <= MAX_AGE)
            .ok_or_else(|| CohortError::MalformedRow {
                file: file.to_string(),
                line,
                message: format!("age must be an integer in 0..={MAX_AGE}, got {:?}", row.get("age")),
            })?;
        let row = Demographics {
            patient_id: patient_id.clone(),
            age,
            gender: non_empty(file, line, "gender", row.get("gender"))?,
            race: non_empty(file, line, "race", row.get("race"))?,
            ethnicity: non_empty(file, line, "ethnicity", row.get("ethnicity"))?,
        };
        if demo.insert(patient_id.clone(), row).is_some() {
            return Err(CohortError::DuplicatePatient {
                file: file.to_string(),
                line,
                patient_id,
            });
        }
        Ok(())
    })?;

    let mut timelines: HashMap<String, Vec<CodedEvent>> = HashMap::new();
    let mut table = Table::open("events", events, &EVENTS_HEADER)?;
    table.for_each_row(|line, row| {
        let file = "events";
        let patient_id = non_empty(file, line, "patient_id", row.get("patient_id"))?;
        if !labels.contains_key(&patient_id) {
            return Err(CohortError::UnknownPatient {
                file: file.to_string(),
                line,
                patient_id,
            });
        }
        let code = non_empty(file, line, "code", row.get("code"))?;
        let date = parse_date(file, line, row.get("date"))?;
        timelines.entry(patient_id).or_default().push(CodedEvent { code, date });
        Ok(())
    })?;

    let mut patients = Vec::with_capacity(labels.len());
    for (patient_id, outcomes) in labels {
        let demographics = demo
            .remove(&patient_id)
            .ok_or_else(|| CohortError::MissingDemographics(patient_id.clone()))?;
        let events = timelines.remove(&patient_id).unwrap_or_default();
        patients.push(PatientRecord {
            timeline: PatientTimeline::new(patient_id, events),
            demographics,
            outcomes,
        });
    }
    Ok(Cohort::from_records(patients))
}

/// Writes the cohort back out in the three input formats.
pub fn write_cohort_files(cohort: &Cohort, dir: &Path) -> std::io::Result<()> {
    use std::io::Write;
    let fmt_date = |d: Option<Date>| d.map(|d| d.format("%Y-%m-%d").to_string()).unwrap_or_default();
    let mut events = std::io::BufWriter::new(File::create(dir.join(EVENTS_FILE))?);
    let mut demo = std::io::BufWriter::new(File::create(dir.join(DEMOGRAPHICS_FILE))?);
    let mut outcomes = std::io::BufWriter::new(File::create(dir.join(OUTCOMES_FILE))?);
    writeln!(events, "{}", EVENTS_HEADER.join(","))?;
    writeln!(demo, "{}", DEMOGRAPHICS_HEADER.join(","))?;
    writeln!(outcomes, "{}", OUTCOMES_HEADER.join(","))?;
    for p in cohort.patients() {
        let id = p.patient_id();
        for e in p.timeline.events() {
            writeln!(events, "{id},{},{}", e.code, e.date.format("%Y-%m-%d"))?;
        }
        let d = &p.demographics;
        writeln!(demo, "{id},{},{},{},{}", d.age, d.gender, d.race, d.ethnicity)?;
        write!(outcomes, "{id},{}", p.outcomes.index_date.format("%Y-%m-%d"))?;
        for o in Outcome::ALL {
            let f = p.outcomes.flag(o);
            write!(outcomes, ",{},{}", u8::from(f.positive), fmt_date(f.date))?;
        }
        writeln!(outcomes)?;
    }
    events.flush()?;
    demo.flush()?;
    outcomes.flush()
}
