use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use mlho::cohort::{ingest_events, write_cohort_files, Cohort};
use mlho::pipeline::{
    emit_phase1, emit_phase2, read_cluster_map, read_phase1_summary, run_phase1, run_phase2, verify_manifest,
    ClusterMap, PipelineConfig, PipelineError,
};
use mlho::synth::{generate_cohort, write_synthetic, GeneratorSpec, SynthError};

#[derive(Parser)]
#[command(name = "mlho", version, about = "Sequence mining, feature selection and outcome models for patient records")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "mlho_out")]
    out: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate raw event, demographic and outcome files and write a normalized cohort.
    Ingest {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        demographics: PathBuf,
        #[arg(long)]
        outcomes: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic cohort with planted effects.
    Synth {
        #[arg(long, default_value_t = 5000)]
        patients: usize,
        #[arg(long, default_value_t = 500)]
        codes: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Resampled feature mining, selection and algorithm screening.
    Phase1 {
        /// Cohort directory (events.csv, demographics.csv, outcomes.csv).
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Final models per outcome and feature class, using phase-1 results in --out.
    Phase2 {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Both phases; synthesizes a cohort into <out>/data when --data is absent.
    RunAll {
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Print the summary table and check the manifest hashes.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(common: &Common) -> Result<PipelineConfig, PipelineError> {
    let mut config = match &common.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn load_clusters(config: &PipelineConfig) -> Result<ClusterMap, PipelineError> {
    match &config.cluster_map {
        Some(path) => read_cluster_map(Path::new(path)),
        None => Ok(ClusterMap::new()),
    }
}

fn open(path: &Path) -> Result<File, PipelineError> {
    File::open(path).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn synthesize(common: &Common, patients: usize, codes: usize, dir: &Path) -> Result<Cohort, PipelineError> {
    let seed = common.seed.unwrap_or(load_config(common)?.seed);
    if codes < 20 {
        return Err(SynthError::InvalidSpec(format!("--codes must be at least 20, got {codes}")).into());
    }
    let (cohort, truth) = generate_cohort(&GeneratorSpec::desk_scale(seed, patients, codes))?;
    write_synthetic(&cohort, &truth, dir)?;
    eprintln!("wrote {} synthetic patients to {}", cohort.len(), dir.display());
    Ok(cohort)
}

fn phase1(cohort: &Cohort, config: &PipelineConfig, out: &Path) -> Result<(), PipelineError> {
    let start = Instant::now();
    let report = run_phase1(cohort, config)?;
    emit_phase1(&report, config, out)?;
    for (outcome, union) in &report.summary.unions {
        eprintln!("phase 1 {outcome}: {} features in union", union.len());
    }
    let ranking: Vec<String> = report
        .summary
        .ranking
        .iter()
        .map(|r| format!("{} {:.3}", r.algorithm, r.median_auc))
        .collect();
    eprintln!("phase 1 ranking: {} ({:.1?})", ranking.join(", "), start.elapsed());
    Ok(())
}

fn phase2(cohort: &Cohort, config: &PipelineConfig, out: &Path) -> Result<(), PipelineError> {
    let start = Instant::now();
    let summary = read_phase1_summary(out)?;
    let clusters = load_clusters(config)?;
    let report = run_phase2(cohort, config, &summary)?;
    emit_phase2(&report, config, &clusters, out)?;
    eprintln!("phase 2 finished in {:.1?}", start.elapsed());
    print_table(out)
}

fn print_table(out: &Path) -> Result<(), PipelineError> {
    let path = out.join("table1.csv");
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    println!("{:<8} {:<12} {:<12} {:>8}  AUC (CI)", "outcome", "features", "algorithm", "models");
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() == 8 {
            println!("{:<8} {:<12} {:<12} {:>8}  {}", f[0], f[1], f[2], f[3], f[7]);
        }
    }
    Ok(())
}

fn create_out(out: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(out).map_err(io_err(out))
}

fn run(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Ingest {
            events,
            demographics,
            outcomes,
            common,
        } => {
            let cohort = ingest_events(open(&events)?, open(&demographics)?, open(&outcomes)?)?;
            create_out(&common.out)?;
            write_cohort_files(&cohort, &common.out).map_err(io_err(&common.out))?;
            let s = cohort.summary();
            eprintln!("ingested {} patients into {}", s.n_patients, common.out.display());
            for o in &s.outcomes {
                eprintln!("  {}: {} positive ({:.1}%)", o.outcome, o.positives, 100.0 * o.rate);
            }
            Ok(())
        }
        Command::Synth { patients, codes, common } => {
            synthesize(&common, patients, codes, &common.out).map(|_| ())
        }
        Command::Phase1 { data, common } => {
            let config = load_config(&common)?;
            let cohort = Cohort::from_dir(&data)?;
            create_out(&common.out)?;
            phase1(&cohort, &config, &common.out)
        }
        Command::Phase2 { data, common } => {
            let config = load_config(&common)?;
            let cohort = Cohort::from_dir(&data)?;
            phase2(&cohort, &config, &common.out)
        }
        Command::RunAll { data, common } => {
            let config = load_config(&common)?;
            create_out(&common.out)?;
            let cohort = match data {
                Some(dir) => Cohort::from_dir(&dir)?,
                None => synthesize(&common, 5000, 500, &common.out.join("data"))?,
            };
            phase1(&cohort, &config, &common.out)?;
            phase2(&cohort, &config, &common.out)
        }
        Command::Report { common } => {
            print_table(&common.out)?;
            let mismatched = verify_manifest(&common.out)?;
            if mismatched.is_empty() {
                eprintln!("manifest verified");
                Ok(())
            } else {
                Err(PipelineError::Phase1Format(format!(
                    "manifest mismatch for {}",
                    mismatched.join(", ")
                )))
            }
        }
    }
}

fn jobs(command: &Command) -> Option<usize> {
    match command {
        Command::Ingest { common, .. }
        | Command::Synth { common, .. }
        | Command::Phase1 { common, .. }
        | Command::Phase2 { common, .. }
        | Command::RunAll { common, .. }
        | Command::Report { common } => common.jobs,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs(&cli.command) {
        pool = pool.num_threads(n.max(1));
    }
    let pool = match pool.build() {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(4);
        }
    };
    match pool.install(|| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
