//! Synthetic cohorts with planted ground truth.
//!
//! Every patient gets a demographic profile, background codes spread over a
//! two-year pre-index window, and possibly some planted codes. A latent
//! logistic score per outcome drives a Hospitalization → ICU → Ventilation
//! chain plus death, and the exact per-patient probabilities are recorded.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use thiserror::Error;

use crate::cohort::{
    write_cohort_files, Cohort, CodedEvent, Date, Demographics, Outcome, OutcomeFlag, OutcomeLabels, PatientRecord,
    PatientTimeline,
};
use crate::learners::sigmoid;
use crate::seed::derive_seed;
use crate::tspm::FeatureDescriptor;

pub const GROUND_TRUTH_FILE: &str = "ground_truth.txt";
pub const TRUE_PROBS_FILE: &str = "true_probs.txt";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A code whose presence shifts each outcome's log-odds.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedRaw {
    pub code: String,
    pub prevalence: f64,
    /// Log-odds weight per outcome, in `Outcome::ALL` order.
    pub weights: [f64; 4],
}

/// A pair of codes whose ordering `first(a) <= first(b)` shifts the log-odds.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedSequence {
    pub code_a: String,
    pub code_b: String,
    /// Independent presence probability of each code.
    pub prevalence: f64,
    pub weights: [f64; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemographicEffects {
    /// Log-odds per decade of age above `reference_age`.
    pub age_per_decade: [f64; 4],
    pub male: [f64; 4],
    pub reference_age: f64,
}

/// Target rates of the outcome chain. The four stage intercepts are solved
/// for so that the expected rates over the generated cohort hit these
/// targets exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainParams {
    /// Fraction with no outcome at all.
    pub none_rate: f64,
    /// Mean P(ICU) / mean P(hospitalization).
    pub icu_given_hosp: f64,
    /// Mean P(ventilation) / mean P(ICU).
    pub vent_given_icu: f64,
    /// Marginal death rate.
    pub death_rate: f64,
    /// Log-odds added to death for patients never hospitalized.
    pub death_unhospitalized_offset: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorSpec {
    pub n_patients: usize,
    pub n_codes: usize,
    /// Background code prevalences are log-uniform over this range.
    pub prevalence_range: (f64, f64),
    /// Occurrences of a present code are `1 + Poisson(extra_occurrences)`.
    pub extra_occurrences: f64,
    pub history_days: u32,
    pub index_start: Date,
    pub index_end: Date,
    /// Planted exposures are evaluated after dropping this many days before
    /// the index date, matching the pipeline's temporal buffer.
    pub buffer_days: u32,
    pub planted_raw: Vec<PlantedRaw>,
    pub planted_sequences: Vec<PlantedSequence>,
    pub demographic: DemographicEffects,
    pub chain: ChainParams,
    pub seed: u64,
}

pub fn code_name(k: usize, n_codes: usize) -> String {
    let width = n_codes.saturating_sub(1).to_string().len().max(3);
    format!("C{k:0width$}")
}

fn date(y: i32, m: u32, d: u32) -> Date {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid literal date")
}

impl GeneratorSpec {
    /// 5,000 patients, 500 codes, 10 planted codes and 5 planted sequences.
    pub fn default_desk_scale(seed: u64) -> GeneratorSpec {
        Self::desk_scale(seed, 5000, 500)
    }

    /// The default effects on a cohort of a different size; planted codes
    /// are drawn from the `n_codes` universe, which needs at least 20 codes.
    pub fn desk_scale(seed: u64, n_patients: usize, n_codes: usize) -> GeneratorSpec {
        assert!(n_codes >= 20, "planted effects need at least 20 codes, got {n_codes}");
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x70_6c61_6e74]));
        let mut pool: Vec<usize> = (0..n_codes).collect();
        pool.shuffle(&mut rng);
        let planted_raw = (0..10)
            .map(|k| {
                let w = 1.4 + 0.05 * k as f64;
                PlantedRaw {
                    code: code_name(pool[k], n_codes),
                    prevalence: 0.12,
                    weights: [w, 0.6 * w, 0.6 * w, 0.8 * w],
                }
            })
            .collect();
        let planted_sequences = (0..5)
            .map(|k| {
                let w = 2.0 + 0.1 * k as f64;
                PlantedSequence {
                    code_a: code_name(pool[10 + 2 * k], n_codes),
                    code_b: code_name(pool[11 + 2 * k], n_codes),
                    prevalence: 0.4,
                    weights: [w, 0.6 * w, 0.6 * w, 0.8 * w],
                }
            })
            .collect();
        GeneratorSpec {
            n_patients,
            n_codes,
            prevalence_range: (0.005, 0.15),
            extra_occurrences: 1.0,
            history_days: 730,
            index_start: date(2020, 3, 1),
            index_end: date(2020, 9, 30),
            buffer_days: 14,
            planted_raw,
            planted_sequences,
            demographic: DemographicEffects {
                age_per_decade: [0.5, 0.3, 0.3, 1.0],
                male: [0.3, 0.3, 0.3, 0.4],
                reference_age: 51.0,
            },
            chain: ChainParams {
                none_rate: 0.72,
                icu_given_hosp: 0.37,
                vent_given_icu: 0.5,
                death_rate: 0.05,
                death_unhospitalized_offset: -3.0,
            },
            seed,
        }
    }

    /// All planted-code effects set to zero; demographic effects kept.
    pub fn without_code_effects(mut self) -> GeneratorSpec {
        self.planted_raw.iter_mut().for_each(|p| p.weights = [0.0; 4]);
        self.planted_sequences.iter_mut().for_each(|p| p.weights = [0.0; 4]);
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.n_patients == 0 || self.n_codes == 0 {
            return bad("n_patients and n_codes must be positive".into());
        }
        let (lo, hi) = self.prevalence_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad(format!("prevalence range ({lo}, {hi})"));
        }
        if !(self.extra_occurrences >= 0.0 && self.extra_occurrences.is_finite()) {
            return bad(format!("extra_occurrences {}", self.extra_occurrences));
        }
        if self.history_days <= self.buffer_days + 1 {
            return bad("history window must extend past the buffer".into());
        }
        if self.index_end < self.index_start {
            return bad("index window is empty".into());
        }
        let c = &self.chain;
        for (name, v) in [
            ("none_rate", c.none_rate),
            ("icu_given_hosp", c.icu_given_hosp),
            ("vent_given_icu", c.vent_given_icu),
            ("death_rate", c.death_rate),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} {v} outside (0, 1)"));
            }
        }
        if c.death_rate > 1.0 - c.none_rate {
            return bad("death_rate exceeds the outcome rate implied by none_rate".into());
        }
        let universe: BTreeSet<String> = (0..self.n_codes).map(|k| code_name(k, self.n_codes)).collect();
        let mut planted = BTreeSet::new();
        let codes = self
            .planted_raw
            .iter()
            .map(|p| (&p.code, p.prevalence, &p.weights))
            .chain(self.planted_sequences.iter().flat_map(|p| {
                [(&p.code_a, p.prevalence, &p.weights), (&p.code_b, p.prevalence, &p.weights)]
            }));
        for (code, prevalence, weights) in codes {
            if !universe.contains(code) {
                return bad(format!("planted code {code} outside the code universe"));
            }
            if !planted.insert(code.clone()) {
                return bad(format!("code {code} planted twice"));
            }
            if !(0.0..=1.0).contains(&prevalence) {
                return bad(format!("planted prevalence {prevalence} for {code}"));
            }
            if weights.iter().any(|w| !w.is_finite()) {
                return bad(format!("non-finite weight for {code}"));
            }
        }
        let d = &self.demographic;
        if d.age_per_decade.iter().chain(&d.male).any(|w| !w.is_finite())
            || !self.chain.death_unhospitalized_offset.is_finite()
        {
            return bad("non-finite demographic or chain parameter".into());
        }
        Ok(())
    }
}

/// Exact outcome probabilities for one patient.
#[derive(Clone, Debug, PartialEq)]
pub struct TrueProbabilities {
    pub patient_id: String,
    /// Marginal probability per outcome, in `Outcome::ALL` order.
    pub outcomes: [f64; 4],
    /// Probability of no outcome at all.
    pub none: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub spec: GeneratorSpec,
    /// Solved stage intercepts, in `Outcome::ALL` order; the death intercept
    /// applies to hospitalized patients.
    pub intercepts: [f64; 4],
    pub true_probs: Vec<TrueProbabilities>,
}

impl GroundTruth {
    /// Planted raw codes and planted sequences as feature descriptors.
    pub fn planted_features(&self) -> Vec<FeatureDescriptor> {
        self.spec
            .planted_raw
            .iter()
            .map(|p| FeatureDescriptor::raw(p.code.clone()))
            .chain(self.spec.planted_sequences.iter().map(|p| {
                FeatureDescriptor::sequence(p.code_a.clone(), p.code_b.clone()).expect("validated distinct codes")
            }))
            .collect()
    }

    pub fn write_ground_truth<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let s = &self.spec;
        writeln!(w, "# kind,code_a,code_b,prevalence,w_hosp,w_icu,w_vent,w_death")?;
        let weights = |ws: &[f64; 4]| ws.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(",");
        for p in &s.planted_raw {
            writeln!(w, "raw,{},,{:.6},{}", p.code, p.prevalence, weights(&p.weights))?;
        }
        for p in &s.planted_sequences {
            writeln!(w, "sequence,{},{},{:.6},{}", p.code_a, p.code_b, p.prevalence, weights(&p.weights))?;
        }
        let d = &s.demographic;
        writeln!(w, "age_per_decade,,,,{}", weights(&d.age_per_decade))?;
        writeln!(w, "male,,,,{}", weights(&d.male))?;
        writeln!(w, "reference_age,{:.1}", d.reference_age)?;
        writeln!(w, "none_rate,{:.6}", s.chain.none_rate)?;
        writeln!(w, "icu_given_hosp,{:.6}", s.chain.icu_given_hosp)?;
        writeln!(w, "vent_given_icu,{:.6}", s.chain.vent_given_icu)?;
        writeln!(w, "death_rate,{:.6}", s.chain.death_rate)?;
        writeln!(w, "intercepts,,,,{}", weights(&self.intercepts))?;
        writeln!(w, "death_unhospitalized_offset,{:.6}", s.chain.death_unhospitalized_offset)?;
        writeln!(w, "buffer_days,{}", s.buffer_days)?;
        writeln!(w, "seed,{}", s.seed)
    }

    pub fn write_true_probs<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "patient_id,p_hosp,p_icu,p_vent,p_death,p_none")?;
        for t in &self.true_probs {
            let [h, i, v, d] = t.outcomes;
            writeln!(w, "{},{h:.9},{i:.9},{v:.9},{d:.9},{:.9}", t.patient_id, t.none)?;
        }
        Ok(())
    }
}

/// Covariates and latent scores for one patient, before outcomes are drawn.
struct Draft {
    timeline: PatientTimeline,
    demographics: Demographics,
    index_date: Date,
    /// Log-odds shift per outcome from planted codes and demographics.
    scores: [f64; 4],
}

struct ChainProbs {
    hosp: f64,
    icu: f64,
    vent: f64,
    death_hosp: f64,
    death_other: f64,
}

fn chain_probs(b: &[f64; 4], death_offset: f64, s: &[f64; 4]) -> ChainProbs {
    ChainProbs {
        hosp: sigmoid(b[0] + s[0]),
        icu: sigmoid(b[1] + s[1]),
        vent: sigmoid(b[2] + s[2]),
        death_hosp: sigmoid(b[3] + s[3]),
        death_other: sigmoid(b[3] + death_offset + s[3]),
    }
}

fn none_probability(c: &ChainProbs) -> f64 {
    (1.0 - c.hosp) * (1.0 - c.death_other)
}

pub fn generate_cohort(spec: &GeneratorSpec) -> Result<(Cohort, GroundTruth), SynthError> {
    spec.validate()?;
    let n_codes = spec.n_codes;
    let planted: BTreeSet<String> = spec
        .planted_raw
        .iter()
        .map(|p| p.code.clone())
        .chain(spec.planted_sequences.iter().flat_map(|p| [p.code_a.clone(), p.code_b.clone()]))
        .collect();
    let mut code_rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[1]));
    let (lo, hi) = spec.prevalence_range;
    let background: Vec<(String, f64)> = (0..n_codes)
        .map(|k| {
            let u: f64 = code_rng.random();
            (code_name(k, n_codes), (lo.ln() + u * (hi.ln() - lo.ln())).exp())
        })
        .filter(|(code, _)| !planted.contains(code))
        .collect();
    let width = spec.n_patients.saturating_sub(1).to_string().len().max(5);
    let index_span = (spec.index_end - spec.index_start).num_days();
    let ids: Vec<usize> = (0..spec.n_patients).collect();

    let drafts: Vec<Draft> = crate::par_map(&ids, |&i| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[2, i as u64]));
        let patient_id = format!("P{i:0width$}");
        let age = Normal::new(51.0f64, 19.0)
            .expect("valid normal")
            .sample(&mut rng)
            .round()
            .clamp(18.0, 95.0) as u32;
        let male = rng.random_bool(0.48);
        let race = ["Asian", "Black", "Other", "White"]
            [pick(&mut rng, &[0.07, 0.12, 0.11, 0.70])]
        .to_string();
        let ethnicity = if rng.random_bool(0.15) { "Hispanic" } else { "NonHispanic" }.to_string();
        let index_date = spec.index_start + Duration::days(rng.random_range(0..=index_span));
        let mut events = Vec::new();
        let add_code = |rng: &mut ChaCha8Rng, code: &str, events: &mut Vec<CodedEvent>| {
            let k = 1 + if spec.extra_occurrences > 0.0 {
                Poisson::new(spec.extra_occurrences).expect("positive rate").sample(rng) as u32
            } else {
                0
            };
            for _ in 0..k {
                let back = rng.random_range(1..=i64::from(spec.history_days));
                events.push(CodedEvent {
                    code: code.to_string(),
                    date: index_date - Duration::days(back),
                });
            }
        };
        for (code, p) in &background {
            if rng.random_bool(*p) {
                add_code(&mut rng, code, &mut events);
            }
        }
        for p in &spec.planted_raw {
            if rng.random_bool(p.prevalence) {
                add_code(&mut rng, &p.code, &mut events);
            }
        }
        for p in &spec.planted_sequences {
            for code in [&p.code_a, &p.code_b] {
                if rng.random_bool(p.prevalence) {
                    add_code(&mut rng, code, &mut events);
                }
            }
        }
        let timeline = PatientTimeline::new(patient_id.clone(), events);
        let cutoff = index_date - Duration::days(i64::from(spec.buffer_days));
        let visible = PatientTimeline::new(
            patient_id.clone(),
            timeline.events().iter().filter(|e| e.date <= cutoff).cloned().collect(),
        );
        let first = visible.first_occurrence();
        let d = &spec.demographic;
        let mut scores = [0.0; 4];
        for (o, s) in scores.iter_mut().enumerate() {
            *s = d.age_per_decade[o] * (f64::from(age) - d.reference_age) / 10.0 + if male { d.male[o] } else { 0.0 };
            for p in &spec.planted_raw {
                if first.contains_key(&p.code) {
                    *s += p.weights[o];
                }
            }
            for p in &spec.planted_sequences {
                if let (Some(a), Some(b)) = (first.get(&p.code_a), first.get(&p.code_b)) {
                    if a <= b {
                        *s += p.weights[o];
                    }
                }
            }
        }
        Draft {
            timeline,
            demographics: Demographics {
                patient_id,
                age,
                gender: if male { "M" } else { "F" }.to_string(),
                race,
                ethnicity,
            },
            index_date,
            scores,
        }
    });

    let intercepts = solve_intercepts(&spec.chain, &drafts)?;
    let records: Vec<(PatientRecord, TrueProbabilities)> = crate::par_map(&ids, |&i| {
        let draft = &drafts[i];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[3, i as u64]));
        let c = chain_probs(&intercepts, spec.chain.death_unhospitalized_offset, &draft.scores);
        let hosp = rng.random_bool(c.hosp);
        let icu = hosp && rng.random_bool(c.icu);
        let vent = icu && rng.random_bool(c.vent);
        let death = rng.random_bool(if hosp { c.death_hosp } else { c.death_other });
        let hosp_date = hosp.then(|| draft.index_date + Duration::days(rng.random_range(0..=3)));
        let icu_date = hosp_date.filter(|_| icu).map(|d| d + Duration::days(rng.random_range(0..=3)));
        let vent_date = icu_date.filter(|_| vent).map(|d| d + Duration::days(rng.random_range(0..=2)));
        let last = vent_date.or(icu_date).or(hosp_date).unwrap_or(draft.index_date);
        let death_date = death.then(|| last + Duration::days(rng.random_range(1..=14)));
        let flag = |positive: bool, date: Option<Date>| OutcomeFlag { positive, date };
        let id = draft.demographics.patient_id.clone();
        let outcomes = OutcomeLabels::new(
            id.clone(),
            draft.index_date,
            [
                flag(hosp, hosp_date),
                flag(icu, icu_date),
                flag(vent, vent_date),
                flag(death, death_date),
            ],
        )
        .expect("generated dates follow the index date");
        let truth = TrueProbabilities {
            patient_id: id,
            outcomes: [
                c.hosp,
                c.hosp * c.icu,
                c.hosp * c.icu * c.vent,
                c.hosp * c.death_hosp + (1.0 - c.hosp) * c.death_other,
            ],
            none: none_probability(&c),
        };
        (
            PatientRecord {
                timeline: draft.timeline.clone(),
                demographics: draft.demographics.clone(),
                outcomes,
            },
            truth,
        )
    });
    let (patients, true_probs): (Vec<_>, Vec<_>) = records.into_iter().unzip();
    Ok((
        Cohort::from_records(patients),
        GroundTruth {
            spec: spec.clone(),
            intercepts,
            true_probs,
        },
    ))
}

fn pick(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let mut u: f64 = rng.random::<f64>() * weights.iter().sum::<f64>();
    for (k, w) in weights.iter().enumerate() {
        if u < *w {
            return k;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Finds `b` with `f(b) = target` for `f` increasing on [-40, 40].
fn bisect(target: f64, f: impl Fn(f64) -> f64) -> Option<f64> {
    let (mut lo, mut hi) = (-40.0, 40.0);
    if f(lo) > target || f(hi) < target {
        return None;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Solves the hospitalization and death intercepts jointly for the
/// no-outcome and death targets, then ICU and ventilation in turn.
fn solve_intercepts(chain: &ChainParams, drafts: &[Draft]) -> Result<[f64; 4], SynthError> {
    let n = drafts.len() as f64;
    let off = chain.death_unhospitalized_offset;
    let mean = |b: [f64; 4], g: &dyn Fn(&ChainProbs) -> f64| {
        drafts.iter().map(|d| g(&chain_probs(&b, off, &d.scores))).sum::<f64>() / n
    };
    let death = |c: &ChainProbs| c.hosp * c.death_hosp + (1.0 - c.hosp) * c.death_other;
    let unreachable = |what: &str| SynthError::InvalidSpec(format!("{what} target unreachable"));
    let death_for = |bh: f64| bisect(chain.death_rate, |bd| mean([bh, 0.0, 0.0, bd], &death));
    let bh = bisect(1.0 - chain.none_rate, |bh| match death_for(bh) {
        Some(bd) => 1.0 - mean([bh, 0.0, 0.0, bd], &none_probability),
        None => f64::NAN,
    })
    .filter(|b| b.is_finite())
    .ok_or_else(|| unreachable("no-outcome rate"))?;
    let bd = death_for(bh).ok_or_else(|| unreachable("death rate"))?;
    let hosp = mean([bh, 0.0, 0.0, bd], &|c| c.hosp);
    let bi = bisect(chain.icu_given_hosp * hosp, |bi| mean([bh, bi, 0.0, bd], &|c| c.hosp * c.icu))
        .ok_or_else(|| unreachable("ICU rate"))?;
    let icu = mean([bh, bi, 0.0, bd], &|c| c.hosp * c.icu);
    let bv = bisect(chain.vent_given_icu * icu, |bv| mean([bh, bi, bv, bd], &|c| c.hosp * c.icu * c.vent))
        .ok_or_else(|| unreachable("ventilation rate"))?;
    Ok([bh, bi, bv, bd])
}

/// Writes the three cohort files, `ground_truth.txt` and `true_probs.txt`.
pub fn write_synthetic(cohort: &Cohort, truth: &GroundTruth, dir: &Path) -> Result<(), SynthError> {
    std::fs::create_dir_all(dir)?;
    write_cohort_files(cohort, dir)?;
    truth.write_ground_truth(std::io::BufWriter::new(std::fs::File::create(dir.join(GROUND_TRUTH_FILE))?))?;
    truth.write_true_probs(std::io::BufWriter::new(std::fs::File::create(dir.join(TRUE_PROBS_FILE))?))?;
    Ok(())
}

/// Marginal outcome rates implied by the true probabilities.
pub fn expected_rates(truth: &GroundTruth) -> [f64; 4] {
    let n = truth.true_probs.len() as f64;
    let mut out = [0.0; 4];
    for t in &truth.true_probs {
        for o in Outcome::ALL {
            out[o.index()] += t.outcomes[o.index()] / n;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> GeneratorSpec {
        GeneratorSpec {
            n_patients: 400,
            n_codes: 60,
            ..GeneratorSpec::default_desk_scale(seed)
        }
        .with_planted_codes_within(60)
    }

    impl GeneratorSpec {
        fn with_planted_codes_within(mut self, n: usize) -> GeneratorSpec {
            for (k, p) in self.planted_raw.iter_mut().enumerate() {
                p.code = code_name(k, n);
            }
            for (k, p) in self.planted_sequences.iter_mut().enumerate() {
                p.code_a = code_name(20 + 2 * k, n);
                p.code_b = code_name(21 + 2 * k, n);
            }
            self
        }
    }

    #[test]
    fn deterministic_and_valid() {
        let (a, ta) = generate_cohort(&small(5)).unwrap();
        let (b, tb) = generate_cohort(&small(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        let (c, _) = generate_cohort(&small(6)).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.len(), 400);
        assert_eq!(ta.planted_features().len(), 15);
        for p in a.patients() {
            let o = &p.outcomes;
            assert!(!o.is_positive(Outcome::Icu) || o.is_positive(Outcome::Hospitalization));
            assert!(!o.is_positive(Outcome::Ventilation) || o.is_positive(Outcome::Icu));
            assert!(p.timeline.events().iter().all(|e| e.date < o.index_date));
        }
        for t in &ta.true_probs {
            let [h, i, v, d] = t.outcomes;
            assert!(v <= i && i <= h && (0.0..=1.0).contains(&d));
            assert!(t.none > 0.0 && t.none < 1.0);
        }
    }

    #[test]
    fn expected_none_rate_matches_target() {
        let (_, truth) = generate_cohort(&small(1)).unwrap();
        let mean: f64 = truth.true_probs.iter().map(|t| t.none).sum::<f64>() / 400.0;
        assert!((mean - 0.72).abs() < 1e-9);
    }

    #[test]
    fn planted_code_outside_universe_is_rejected() {
        let mut spec = small(1);
        spec.planted_raw[0].code = "Z99".into();
        assert!(matches!(generate_cohort(&spec), Err(SynthError::InvalidSpec(_))));
        let mut spec = small(1);
        spec.planted_raw[1].code = spec.planted_raw[0].code.clone();
        assert!(matches!(spec.validate(), Err(SynthError::InvalidSpec(_))));
    }

    #[test]
    fn code_names_are_padded() {
        assert_eq!(code_name(7, 500), "C007");
        assert_eq!(code_name(7, 5000), "C0007");
        assert_eq!(code_name(7, 20), "C007");
    }
}
