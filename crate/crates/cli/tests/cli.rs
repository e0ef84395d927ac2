use std::path::Path;
use std::process::{Command, Output};

fn mlho(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlho")).args(args).output().expect("spawn mlho")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

const QUICK: &str = "\
n_resamples = 1
cv_folds_phase1 = 3
cv_folds_phase2 = 3
msmr_min_prevalence = 0.01
msmr_jmi_budget = 30
gbm_trees = 30
gbm_shrinkage = 0.1
gbm_depth = 2
outcomes = hosp
seed = 5
";

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_phases_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let (data, out, config) = (dir.path().join("data"), dir.path().join("out"), dir.path().join("quick.conf"));
    std::fs::write(&config, QUICK).unwrap();
    let synth = mlho(&["synth", "--patients", "300", "--codes", "40", "--seed", "5", "--out", path(&data)]);
    assert_eq!(code(&synth), 0, "{}", String::from_utf8_lossy(&synth.stderr));
    assert!(data.join("ground_truth.txt").exists());

    let common = ["--config", path(&config), "--out", path(&out)];
    let p1 = mlho(&[&["phase1", "--data", path(&data)][..], &common].concat());
    assert_eq!(code(&p1), 0, "{}", String::from_utf8_lossy(&p1.stderr));
    let p2 = mlho(&[&["phase2", "--data", path(&data)][..], &common].concat());
    assert_eq!(code(&p2), 0, "{}", String::from_utf8_lossy(&p2.stderr));
    let table = String::from_utf8(p2.stdout).unwrap();
    assert_eq!(table.lines().count(), 4, "{table}");
    assert!(table.lines().nth(3).unwrap().starts_with("hosp     combined"));

    assert_eq!(code(&mlho(&["report", "--out", path(&out)])), 0);
    std::fs::write(out.join("phase2_auc.csv"), "edited\n").unwrap();
    let report = mlho(&["report", "--out", path(&out)]);
    assert_eq!(code(&report), 3);
    assert!(String::from_utf8_lossy(&report.stderr).contains("phase2_auc.csv"));
}

#[test]
fn ingest_normalizes_and_rejects_unknown_patients() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    };
    let events = write("events.csv", "patient_id,code,date\na,I10,2020-01-02\nb,E11,2020-02-01\n");
    let demographics = write("demo.csv", "patient_id,age,gender,race,ethnicity\na,60,F,White,NonHispanic\nb,40,M,Black,Hispanic\n");
    let outcomes = write(
        "outcomes.csv",
        "patient_id,index_date,hosp,hosp_date,icu,icu_date,vent,vent_date,death,death_date\n\
         a,2020-03-01,1,2020-03-02,0,,0,,0,\nb,2020-03-05,0,,0,,0,,0,\n",
    );
    let out = dir.path().join("norm");
    let ok = mlho(&["ingest", "--events", path(&events), "--demographics", path(&demographics), "--outcomes", path(&outcomes), "--out", path(&out)]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(out.join("events.csv").exists());

    let stray = write("stray.csv", "patient_id,code,date\nzz,I10,2020-01-02\n");
    let bad = mlho(&["ingest", "--events", path(&stray), "--demographics", path(&demographics), "--outcomes", path(&outcomes), "--out", path(&out)]);
    assert_eq!(code(&bad), 3);
}

#[test]
fn configuration_and_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.conf");
    std::fs::write(&config, "n_resample = 3\n").unwrap();
    let phase1 = mlho(&["phase1", "--data", path(dir.path()), "--config", path(&config), "--out", path(dir.path())]);
    assert_eq!(code(&phase1), 2);
    assert!(String::from_utf8_lossy(&phase1.stderr).contains("n_resample"));

    let missing = mlho(&["phase2", "--data", path(dir.path()), "--out", path(&dir.path().join("nothing"))]);
    assert_ne!(code(&missing), 0);
    assert_eq!(code(&mlho(&["synth", "--codes", "5", "--out", path(dir.path())])), 2);
}
