use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use mlho::cohort::{CodedEvent, Cohort, Demographics, OutcomeFlag, OutcomeLabels, PatientRecord, PatientTimeline};
use mlho::tspm::{mine_raw, mine_transitive, read_matrix, write_matrix, FeatureKind, MiningOptions};
use proptest::prelude::*;

fn day(offset: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Days::new(u64::from(offset))
}

fn record(id: &str, events: &[(&str, u32)]) -> PatientRecord {
    let events = events
        .iter()
        .map(|&(code, d)| CodedEvent {
            code: code.to_string(),
            date: day(d),
        })
        .collect();
    PatientRecord {
        timeline: PatientTimeline::new(id, events),
        demographics: Demographics {
            patient_id: id.to_string(),
            age: 50,
            gender: "F".into(),
            race: "white".into(),
            ethnicity: "no".into(),
        },
        outcomes: OutcomeLabels::new(id, day(400), [OutcomeFlag::default(); 4]).unwrap(),
    }
}

/// Every ordered pair of distinct codes whose first dates are ordered,
/// straight from the event list.
fn brute_pairs(events: &[(String, u32)]) -> BTreeSet<(String, String)> {
    let mut first: BTreeMap<&str, u32> = BTreeMap::new();
    for (c, d) in events {
        let e = first.entry(c).or_insert(*d);
        *e = (*e).min(*d);
    }
    let mut out = BTreeSet::new();
    for (a, ta) in &first {
        for (b, tb) in &first {
            if a != b && ta <= tb {
                out.insert((a.to_string(), b.to_string()));
            }
        }
    }
    out
}

fn cohort_from(patients: &[Vec<(String, u32)>]) -> Cohort {
    let records = patients
        .iter()
        .enumerate()
        .map(|(i, ev)| {
            let ev: Vec<(&str, u32)> = ev.iter().map(|(c, d)| (c.as_str(), *d)).collect();
            record(&format!("p{i:03}"), &ev)
        })
        .collect();
    Cohort::from_records(records)
}

#[test]
fn hand_worked_timeline() {
    // A on day 0 and again on day 9, B on day 5, C on day 5.
    let cohort = Cohort::from_records(vec![record("p1", &[("A", 0), ("B", 5), ("C", 5), ("A", 9)])]);
    let seq = mine_transitive(&cohort, &MiningOptions::default()).unwrap();
    let names: Vec<String> = seq.features().iter().map(|f| f.to_string()).collect();
    let expected: Vec<String> = [("A", "B"), ("A", "C"), ("B", "C"), ("C", "B")]
        .iter()
        .map(|(a, b)| mlho::tspm::FeatureDescriptor::sequence(*a, *b).unwrap().to_string())
        .collect();
    assert_eq!(names, expected);
    let raw = mine_raw(&cohort);
    assert_eq!(raw.get(0, 0), 2.0);
    assert_eq!(raw.get(0, 1), 1.0);
}

fn patients_strategy() -> impl Strategy<Value = Vec<Vec<(String, u32)>>> {
    let event = (0u8..6, 0u32..30).prop_map(|(c, d)| (format!("C{c}"), d));
    proptest::collection::vec(proptest::collection::vec(event, 0..8), 1..12)
}

proptest! {
    #[test]
    fn sequences_match_brute_force(patients in patients_strategy()) {
        let cohort = cohort_from(&patients);
        let seq = mine_transitive(&cohort, &MiningOptions::default()).unwrap();
        let mut union = BTreeSet::new();
        for (i, events) in patients.iter().enumerate() {
            let expected = brute_pairs(events);
            union.extend(expected.iter().cloned());
            let (idx, vals) = seq.row(i);
            let got: BTreeSet<(String, String)> = idx
                .iter()
                .map(|&j| {
                    let f = &seq.features()[j as usize];
                    (f.code_a.clone(), f.code_b.clone().unwrap())
                })
                .collect();
            prop_assert_eq!(got, expected);
            prop_assert!(vals.iter().all(|&v| v == 1.0));
        }
        prop_assert_eq!(seq.n_features(), union.len());
        prop_assert!(seq.features().iter().all(|f| f.kind == FeatureKind::Sequence));
    }

    #[test]
    fn raw_counts_match_events(patients in patients_strategy()) {
        let cohort = cohort_from(&patients);
        let raw = mine_raw(&cohort);
        for (i, events) in patients.iter().enumerate() {
            for (j, f) in raw.features().iter().enumerate() {
                let count = events.iter().filter(|(c, _)| *c == f.code_a).count() as f64;
                prop_assert_eq!(raw.get(i, j), count);
            }
        }
    }

    #[test]
    fn prevalence_option_equals_post_filter(patients in patients_strategy(), threshold in 0.0f64..0.6) {
        let cohort = cohort_from(&patients);
        let all = mine_transitive(&cohort, &MiningOptions::default()).unwrap();
        let filtered = mine_transitive(&cohort, &MiningOptions { min_prevalence: Some(threshold), max_entries: None }).unwrap();
        let keep: Vec<usize> = all
            .prevalence()
            .iter()
            .enumerate()
            .filter(|(_, &p)| p >= threshold)
            .map(|(j, _)| j)
            .collect();
        prop_assert_eq!(filtered, all.select_columns(&keep));
    }

    #[test]
    fn container_round_trip(patients in patients_strategy()) {
        let cohort = cohort_from(&patients);
        let seq = mine_transitive(&cohort, &MiningOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_matrix(&seq, &mut buf).unwrap();
        prop_assert_eq!(read_matrix(buf.as_slice()).unwrap(), seq);
    }
}
