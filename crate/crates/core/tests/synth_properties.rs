use chrono::Duration;
use mlho::cohort::{Cohort, Outcome};
use mlho::synth::{expected_rates, generate_cohort, write_synthetic, GeneratorSpec, GroundTruth};

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

fn cohort(seed: u64, n: usize) -> (Cohort, GroundTruth) {
    let spec = GeneratorSpec {
        n_patients: n,
        ..GeneratorSpec::default_desk_scale(seed)
    };
    generate_cohort(&spec).unwrap()
}

/// Outcome probabilities rebuilt from the written cohort: linear scores from
/// age, sex and planted exposures visible before the buffer, pushed through
/// the stage chain.
fn recompute(cohort: &Cohort, truth: &GroundTruth) -> Vec<[f64; 4]> {
    let spec = &truth.spec;
    let b = truth.intercepts;
    cohort
        .patients()
        .iter()
        .map(|p| {
            let cutoff = p.outcomes.index_date - Duration::days(i64::from(spec.buffer_days));
            let first = |code: &str| {
                p.timeline.events().iter().filter(|e| e.code == code && e.date <= cutoff).map(|e| e.date).min()
            };
            let age = f64::from(p.demographics.age);
            let male = p.demographics.gender == "M";
            let s: Vec<f64> = (0..4)
                .map(|o| {
                    let d = &spec.demographic;
                    let mut s = d.age_per_decade[o] * (age - d.reference_age) / 10.0 + if male { d.male[o] } else { 0.0 };
                    s += spec.planted_raw.iter().filter(|r| first(&r.code).is_some()).map(|r| r.weights[o]).sum::<f64>();
                    for q in &spec.planted_sequences {
                        if let (Some(a), Some(c)) = (first(&q.code_a), first(&q.code_b)) {
                            if a <= c {
                                s += q.weights[o];
                            }
                        }
                    }
                    s
                })
                .collect();
            let hosp = sigmoid(b[0] + s[0]);
            let icu = hosp * sigmoid(b[1] + s[1]);
            let vent = icu * sigmoid(b[2] + s[2]);
            let death = hosp * sigmoid(b[3] + s[3])
                + (1.0 - hosp) * sigmoid(b[3] + spec.chain.death_unhospitalized_offset + s[3]);
            [hosp, icu, vent, death]
        })
        .collect()
}

#[test]
fn true_probabilities_match_independent_recompute() {
    let (cohort, truth) = cohort(5, 1500);
    for (t, r) in truth.true_probs.iter().zip(recompute(&cohort, &truth)) {
        for (o, (a, b)) in t.outcomes.iter().zip(r).enumerate() {
            assert!((a - b).abs() < 1e-12, "{} outcome {o}", t.patient_id);
        }
    }
}

#[test]
fn intercepts_hit_chain_targets() {
    let (_, truth) = cohort(6, 2000);
    let rates = expected_rates(&truth);
    let chain = &truth.spec.chain;
    let none: f64 = truth.true_probs.iter().map(|t| t.none).sum::<f64>() / truth.true_probs.len() as f64;
    assert!((none - chain.none_rate).abs() < 1e-6);
    assert!((rates[1] / rates[0] - chain.icu_given_hosp).abs() < 1e-6);
    assert!((rates[2] / rates[1] - chain.vent_given_icu).abs() < 1e-6);
    assert!((rates[3] - chain.death_rate).abs() < 1e-6);
}

#[test]
fn observed_rates_within_three_sigma() {
    let (cohort, truth) = cohort(7, 5000);
    let n = cohort.len() as f64;
    for o in Outcome::ALL {
        let p: Vec<f64> = truth.true_probs.iter().map(|t| t.outcomes[o.index()]).collect();
        let expected = p.iter().sum::<f64>() / n;
        let sd = p.iter().map(|q| q * (1.0 - q)).sum::<f64>().sqrt() / n;
        let observed = cohort.labels(o).iter().filter(|&&y| y).count() as f64 / n;
        assert!((observed - expected).abs() < 3.0 * sd, "{o}: {observed} vs {expected} ± {sd}");
    }
}

#[test]
fn stages_nest_and_dates_follow_the_chain() {
    let (cohort, truth) = cohort(8, 2000);
    for (p, t) in cohort.patients().iter().zip(&truth.true_probs) {
        let o = &p.outcomes;
        let (h, i, v) = (o.flag(Outcome::Hospitalization), o.flag(Outcome::Icu), o.flag(Outcome::Ventilation));
        assert!(!v.positive || i.positive);
        assert!(!i.positive || h.positive);
        if v.positive {
            assert!(i.date <= v.date);
        }
        if i.positive {
            assert!(h.date <= i.date);
        }
        assert!(t.outcomes[2] <= t.outcomes[1] && t.outcomes[1] <= t.outcomes[0]);
        assert!(p.timeline.events().iter().all(|e| e.date < o.index_date));
    }
}

#[test]
fn written_files_round_trip() {
    let (cohort, truth) = cohort(9, 300);
    let dir = tempfile::tempdir().unwrap();
    write_synthetic(&cohort, &truth, dir.path()).unwrap();
    assert_eq!(Cohort::from_dir(dir.path()).unwrap(), cohort);
    let (again, _) = self::cohort(9, 300);
    assert_eq!(again, cohort);
}
