//! Report files and the hash manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{
    AlgorithmRank, PipelineConfig, PipelineError, Phase1Report, Phase1Summary, Phase2Report,
};
use crate::cohort::Outcome;
use crate::evaluation::{write_auc_records, write_calibration};
use crate::tspm::{FeatureDescriptor, FeatureKind};

pub const MANIFEST_FILE: &str = "manifest.txt";
const UNION_FILE: &str = "phase1_union.csv";
const RANKING_FILE: &str = "algorithm_ranking.csv";

/// Code to cluster label, from a `code,cluster_label` file.
pub type ClusterMap = BTreeMap<String, String>;

fn create(path: &Path) -> Result<BufWriter<File>, PipelineError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| PipelineError::io(path, e))
}

fn write_file(
    dir: &Path,
    name: &str,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), PipelineError> {
    let path = dir.join(name);
    let mut w = create(&path)?;
    body(&mut w).and_then(|_| w.flush()).map_err(|e| PipelineError::io(&path, e))
}

/// An empty file or a header-only file gives an empty map.
pub fn read_cluster_map(path: &Path) -> Result<ClusterMap, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let mut map = ClusterMap::new();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| PipelineError::Phase1Format(format!("{}: {e}", path.display())))?;
        if record.len() != 2 {
            return Err(PipelineError::Phase1Format(format!(
                "{} line {}: expected `code,cluster_label`",
                path.display(),
                k + 1
            )));
        }
        if k == 0 && &record[0] == "code" {
            continue;
        }
        map.insert(record[0].to_string(), record[1].to_string());
    }
    Ok(map)
}

fn cluster_label(d: &FeatureDescriptor, clusters: &ClusterMap) -> String {
    match d.kind {
        FeatureKind::Raw => clusters.get(&d.code_a).cloned().unwrap_or_default(),
        FeatureKind::Sequence => {
            let a = clusters.get(&d.code_a);
            let b = d.code_b.as_ref().and_then(|b| clusters.get(b));
            if a.is_none() && b.is_none() {
                String::new()
            } else {
                format!(
                    "{}->{}",
                    a.map_or(d.code_a.as_str(), String::as_str),
                    b.map_or(d.code_b.as_deref().unwrap_or(""), String::as_str)
                )
            }
        }
        FeatureKind::Demographic => "Demographic".into(),
    }
}

fn descriptor_fields(d: &FeatureDescriptor) -> String {
    format!("{},{},{}", d.kind.key(), d.code_a, d.code_b.as_deref().unwrap_or(""))
}

fn write_ranking(w: &mut impl Write, summary: &Phase1Summary) -> std::io::Result<()> {
    writeln!(w, "scope,rank,algorithm,median_auc")?;
    let mut put = |scope: &str, ranks: &[AlgorithmRank]| -> std::io::Result<()> {
        for (k, r) in ranks.iter().enumerate() {
            writeln!(w, "{scope},{},{},{:.6}", k + 1, r.algorithm, r.median_auc)?;
        }
        Ok(())
    };
    put("overall", &summary.ranking)?;
    for (o, ranks) in &summary.outcome_ranking {
        put(o.key(), ranks)?;
    }
    Ok(())
}

/// Writes the phase-1 files and the resolved config, then refreshes the
/// manifest.
pub fn emit_phase1(report: &Phase1Report, config: &PipelineConfig, dir: &Path) -> Result<(), PipelineError> {
    write_file(dir, "config.txt", |w| w.write_all(config.to_text().as_bytes()))?;
    write_file(dir, "phase1_auc.csv", |w| write_auc_records(w, &report.records))?;
    write_file(dir, RANKING_FILE, |w| write_ranking(w, &report.summary))?;
    write_file(dir, UNION_FILE, |w| {
        writeln!(w, "outcome,kind,code_a,code_b")?;
        for (o, union) in &report.summary.unions {
            for d in union {
                writeln!(w, "{},{}", o.key(), descriptor_fields(d))?;
            }
        }
        Ok(())
    })?;
    write_file(dir, "phase1_screens.csv", |w| {
        writeln!(w, "outcome,iteration,algorithm,n_features")?;
        for s in &report.screens {
            writeln!(w, "{},{},{},{}", s.outcome.key(), s.iteration, s.algorithm, s.features.len())?;
        }
        Ok(())
    })?;
    for s in &report.selections {
        let name = format!("selection/{}_iter{}.csv", s.outcome.key(), s.iteration);
        write_file(dir, &name, |w| {
            writeln!(w, "rank,kind,code_a,code_b,mi,jmi_gain")?;
            for (k, f) in s.features.iter().enumerate() {
                let gain = f.jmi_gain.map(|g| format!("{g:.9}")).unwrap_or_default();
                writeln!(w, "{},{},{:.9},{gain}", k + 1, descriptor_fields(&f.descriptor), f.mi)?;
            }
            Ok(())
        })?;
    }
    write_manifest(dir)
}

/// Reads the union and ranking files written by [`emit_phase1`].
pub fn read_phase1_summary(dir: &Path) -> Result<Phase1Summary, PipelineError> {
    let bad = |m: String| PipelineError::Phase1Format(m);
    let read = |name: &str| -> Result<Vec<csv::StringRecord>, PipelineError> {
        let path = dir.join(name);
        let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
        csv::ReaderBuilder::new()
            .from_reader(text.as_bytes())
            .records()
            .collect::<Result<_, _>>()
            .map_err(|e| bad(format!("{name}: {e}")))
    };
    let mut summary = Phase1Summary::default();
    for r in read(UNION_FILE)? {
        let outcome = Outcome::from_key(&r[0]).ok_or_else(|| bad(format!("{UNION_FILE}: unknown outcome `{}`", &r[0])))?;
        let descriptor = match FeatureKind::from_key(&r[1]) {
            Some(FeatureKind::Raw) => FeatureDescriptor::raw(&r[2]),
            Some(FeatureKind::Sequence) => {
                FeatureDescriptor::sequence(&r[2], &r[3]).map_err(|e| bad(format!("{UNION_FILE}: {e}")))?
            }
            _ => return Err(bad(format!("{UNION_FILE}: unexpected kind `{}`", &r[1]))),
        };
        summary.unions.entry(outcome).or_default().insert(descriptor);
    }
    for r in read(RANKING_FILE)? {
        let rank = AlgorithmRank {
            algorithm: r[2].to_string(),
            median_auc: r[3].parse().map_err(|e| bad(format!("{RANKING_FILE}: {e}")))?,
        };
        if &r[0] == "overall" {
            summary.ranking.push(rank);
        } else {
            let o = Outcome::from_key(&r[0]).ok_or_else(|| bad(format!("{RANKING_FILE}: unknown scope `{}`", &r[0])))?;
            summary.outcome_ranking.entry(o).or_default().push(rank);
            summary.unions.entry(o).or_default();
        }
    }
    Ok(summary)
}

/// Writes the phase-2 files and refreshes the manifest.
pub fn emit_phase2(
    report: &Phase2Report,
    config: &PipelineConfig,
    clusters: &ClusterMap,
    dir: &Path,
) -> Result<(), PipelineError> {
    write_file(dir, "config.txt", |w| w.write_all(config.to_text().as_bytes()))?;
    write_file(dir, "phase2_auc.csv", |w| write_auc_records(w, &report.records))?;
    write_file(dir, "table1.csv", |w| {
        writeln!(w, "outcome,feature_class,algorithm,n_models,mean_auc,ci_lower,ci_upper,auc_ci")?;
        for c in &report.cells {
            let s = &c.summaries[0];
            writeln!(
                w,
                "{},{},{},{},{:.6},{:.6},{:.6},{}",
                c.outcome.key(),
                c.class.key(),
                c.algorithms[0],
                c.n_models,
                s.mean,
                s.lower,
                s.upper,
                s.display()
            )?;
        }
        Ok(())
    })?;
    write_file(dir, "phase2_summary.csv", |w| {
        writeln!(w, "outcome,feature_class,algorithm,n_fits,mean_auc,ci_lower,ci_upper")?;
        for c in &report.cells {
            for (a, s) in c.algorithms.iter().zip(&c.summaries) {
                writeln!(
                    w,
                    "{},{},{a},{},{:.6},{:.6},{:.6}",
                    c.outcome.key(),
                    c.class.key(),
                    s.values.len(),
                    s.mean,
                    s.lower,
                    s.upper
                )?;
            }
        }
        Ok(())
    })?;
    let curves: Vec<(String, String, _)> = report
        .cells
        .iter()
        .map(|c| (c.outcome.key().to_string(), c.class.key().to_string(), c.calibration[0].clone()))
        .collect();
    write_file(dir, "calibration.csv", |w| write_calibration(w, &curves))?;
    write_file(dir, "influence.csv", |w| {
        writeln!(w, "outcome,feature_class,rank,kind,feature,cluster,influence")?;
        for c in &report.cells {
            for (k, (d, v)) in c.influence.iter().enumerate() {
                writeln!(
                    w,
                    "{},{},{},{},{d},{},{v:.6}",
                    c.outcome.key(),
                    c.class.key(),
                    k + 1,
                    d.kind.key(),
                    cluster_label(d, clusters)
                )?;
            }
        }
        Ok(())
    })?;
    write_file(dir, "scenarios.csv", |w| {
        writeln!(w, "scenario,count,probability")?;
        for (s, count) in &report.scenarios.counts {
            writeln!(w, "{s},{count},{:.6}", report.scenarios.probabilities[s])?;
        }
        Ok(())
    })?;
    write_file(dir, "cohort_summary.csv", |w| {
        let s = &report.cohort_summary;
        let age = |a: Option<f64>| a.map(|v| format!("{v:.2}")).unwrap_or_default();
        writeln!(w, "group,count,rate,mean_age")?;
        writeln!(w, "all,{},1.000000,{}", s.n_patients, age(s.mean_age))?;
        for o in &s.outcomes {
            writeln!(w, "{},{},{:.6},{}", o.outcome.key(), o.positives, o.rate, age(o.mean_age))?;
        }
        Ok(())
    })?;
    write_manifest(dir)
}

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeSet<String>) -> Result<(), PipelineError> {
    let entries = std::fs::read_dir(dir).map_err(|e| PipelineError::io(dir, e))?;
    for entry in entries {
        let path: PathBuf = entry.map_err(|e| PipelineError::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("walked under root");
            let rel = rel.iter().map(|c| c.to_string_lossy()).collect::<Vec<_>>().join("/");
            if rel != MANIFEST_FILE {
                out.insert(rel);
            }
        }
    }
    Ok(())
}

fn sha256_hex(path: &Path) -> Result<String, PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// `<sha256>  <relative path>` for every file under `dir`, sorted by path.
pub fn write_manifest(dir: &Path) -> Result<(), PipelineError> {
    let mut files = BTreeSet::new();
    collect_files(dir, dir, &mut files)?;
    let mut lines = String::new();
    for rel in &files {
        lines.push_str(&format!("{}  {rel}\n", sha256_hex(&dir.join(rel))?));
    }
    write_file(dir, MANIFEST_FILE, |w| w.write_all(lines.as_bytes()))
}

/// Paths whose current hash differs from the manifest, or that are missing.
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>, PipelineError> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
    let mut mismatched = Vec::new();
    for line in text.lines() {
        let Some((hash, rel)) = line.split_once("  ") else {
            return Err(PipelineError::Phase1Format(format!("malformed manifest line `{line}`")));
        };
        let file = dir.join(rel);
        if !file.exists() || sha256_hex(&file)? != hash {
            mismatched.push(rel.to_string());
        }
    }
    Ok(mismatched)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cluster_labels() {
        let mut clusters = ClusterMap::new();
        clusters.insert("I50".into(), "Cardiovascular disease".into());
        assert_eq!(
            cluster_label(&FeatureDescriptor::raw("I50"), &clusters),
            "Cardiovascular disease"
        );
        assert_eq!(cluster_label(&FeatureDescriptor::raw("E11"), &clusters), "");
        assert_eq!(
            cluster_label(&FeatureDescriptor::sequence("E11", "I50").unwrap(), &clusters),
            "E11->Cardiovascular disease"
        );
        assert_eq!(cluster_label(&FeatureDescriptor::raw("I50"), &ClusterMap::new()), "");
    }

    #[test]
    fn cluster_file_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "").unwrap();
        assert!(read_cluster_map(&empty).unwrap().is_empty());
        let map = dir.path().join("map.csv");
        std::fs::write(&map, "code,cluster_label\nI50,Cardiovascular disease\n").unwrap();
        assert_eq!(read_cluster_map(&map).unwrap()["I50"], "Cardiovascular disease");

        write_manifest(dir.path()).unwrap();
        assert!(verify_manifest(dir.path()).unwrap().is_empty());
        std::fs::write(&map, "changed").unwrap();
        assert_eq!(verify_manifest(dir.path()).unwrap(), vec!["map.csv".to_string()]);
    }
}
