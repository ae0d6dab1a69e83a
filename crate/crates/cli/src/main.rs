//! `sugar`: index a corpus, run and score the adaptive pipeline, calibrate
//! routing thresholds, and compare uncertainty triggers.
//!
//! Exit status: 0 success, 2 usage or configuration error, 3 data error,
//! 4 backend error.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use sugar_core::config::{RoutingChoice, RunConfig};
use sugar_core::entailment::Entailment;
use sugar_core::eval::{self, EvalReport};
use sugar_core::generator::Generator;
use sugar_core::orchestrator::Pipeline;
use sugar_core::retriever::{read_corpus, InvertedIndex, Retriever};
use sugar_core::router::{self, CalibrationOptions, Objective};
use sugar_core::{Error, ErrorKind};

#[derive(Parser)]
#[command(name = "sugar", version, about = "Semantic-uncertainty guided adaptive retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a BM25 index from a JSONL corpus.
    Ingest {
        #[arg(long)]
        corpus: PathBuf,
        /// Output directory; the index is written to <DIR>/index.json.
        #[arg(long)]
        index: PathBuf,
    },
    /// Answer and score a dataset.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Report of a single-step baseline run, for relative timing.
        #[arg(long)]
        baseline_report: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        /// Also write per-mode calibration records for this dataset.
        #[arg(long)]
        calibration_records: Option<PathBuf>,
    },
    /// Pick routing thresholds from calibration records.
    Calibrate {
        #[arg(long)]
        records: PathBuf,
        /// "default", "start:stop:step", or "lo,hi;lo,hi;...".
        #[arg(long, default_value = "default")]
        grid: String,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = ObjectiveArg::Accuracy)]
        objective: ObjectiveArg,
        #[arg(long, default_value_t = 0.25)]
        bucket_width: f64,
        /// Write the selected thresholds as a config fragment.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare predictive- and semantic-entropy triggered retrieval.
    Ablate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        tau_se: f64,
        #[arg(long, required = true, num_args = 1..)]
        tau_pe: Vec<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the comparison as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a saved report.
    Report {
        report: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

#[derive(clap::Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tau_low: Option<f64>,
    #[arg(long)]
    tau_high: Option<f64>,
    #[arg(long, value_enum)]
    routing: Option<RoutingArg>,
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RoutingArg {
    Adaptive,
    Binary,
    NoRetrieval,
    SingleStep,
    MultiStep,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Accuracy,
    F1,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => 2,
                ErrorKind::Data => 3,
                ErrorKind::Backend => 4,
            })
        }
    }
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::Ingest { corpus, index } => ingest(&corpus, &index),
        Command::Run {
            dataset,
            config,
            out,
            baseline_report,
            overrides,
            calibration_records,
        } => run(
            &dataset,
            &config,
            &out,
            baseline_report.as_deref(),
            &overrides,
            calibration_records.as_deref(),
        ),
        Command::Calibrate {
            records,
            grid,
            folds,
            seed,
            objective,
            bucket_width,
            out,
        } => calibrate(&records, &grid, folds, seed, objective, bucket_width, out.as_deref()),
        Command::Ablate {
            dataset,
            config,
            tau_se,
            tau_pe,
            seed,
            out,
        } => ablate(&dataset, &config, tau_se, &tau_pe, seed, out.as_deref()),
        Command::Report { report, format } => {
            let r = EvalReport::read(&report)?;
            match format {
                Format::Text => print!("{}", r.render()),
                Format::Json => print!("{}", r.to_json()),
            }
            Ok(())
        }
    }
}

fn ingest(corpus: &Path, dir: &Path) -> Result<(), Error> {
    let index = InvertedIndex::from_documents(read_corpus(corpus)?)?;
    let path = index.save(dir)?;
    let stats = index.stats();
    println!("documents: {}", stats.num_docs);
    println!("terms: {}", stats.num_terms);
    println!("avg length: {:.2}", stats.avg_doc_len);
    println!("index: {}", path.display());
    Ok(())
}

/// Loads the config and applies flag overrides. Everything is validated
/// here, before any backend is touched.
fn load_config(path: &Path, o: Option<&Overrides>) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::from_path(path)?;
    cfg.apply_env(|k| std::env::var(k).ok());
    if let Some(o) = o {
        if let Some(s) = o.seed {
            cfg.seed = s;
        }
        if let Some(t) = o.tau_low {
            cfg.router.tau_low = t;
        }
        if let Some(t) = o.tau_high {
            cfg.router.tau_high = t;
        }
        if let Some(r) = o.routing {
            cfg.router.routing = match r {
                RoutingArg::Adaptive => RoutingChoice::Adaptive,
                RoutingArg::Binary => RoutingChoice::Binary,
                RoutingArg::NoRetrieval => RoutingChoice::NoRetrieval,
                RoutingArg::SingleStep => RoutingChoice::SingleStep,
                RoutingArg::MultiStep => RoutingChoice::MultiStep,
            };
        }
        if let Some(p) = o.parallelism {
            cfg.runner.parallelism = p;
        }
    }
    cfg.validate_backends()?;
    Ok(cfg)
}

struct Backends {
    generator: Box<dyn Generator>,
    entailment: Box<dyn Entailment>,
    index: Option<InvertedIndex>,
}

impl Backends {
    fn build(cfg: &RunConfig) -> Result<Self, Error> {
        Ok(Backends {
            generator: cfg.build_generator()?,
            entailment: cfg.build_entailment()?,
            index: cfg.load_index()?,
        })
    }

    fn pipeline(&self, cfg: &RunConfig) -> Result<Pipeline<'_>, Error> {
        Pipeline::new(
            self.generator.as_ref(),
            self.entailment.as_ref(),
            self.index.as_ref().map(|i| i as &dyn Retriever),
            cfg.pipeline_config(),
        )
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(format!("creating {}", path.display()), e))
}

fn write_string(path: &Path, s: &str) -> Result<(), Error> {
    std::fs::write(path, s).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn run(
    dataset: &Path,
    config: &Path,
    out: &Path,
    baseline: Option<&Path>,
    overrides: &Overrides,
    calibration_records: Option<&Path>,
) -> Result<(), Error> {
    let cfg = load_config(config, Some(overrides))?;
    let baseline = baseline.map(EvalReport::read).transpose()?;
    let questions = eval::read_dataset(dataset)?;
    let backends = Backends::build(&cfg)?;
    let pipeline = backends.pipeline(&cfg)?;
    let name = dataset
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let result = eval::evaluate(&name, &questions, &pipeline, cfg.runner.parallelism, baseline.as_ref())?;

    std::fs::create_dir_all(out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    write_string(&out.join("report.json"), &result.report.to_json())?;
    write_string(&out.join("report.txt"), &result.report.render())?;
    eval::write_records(create(&out.join("records.jsonl"))?, &result.records)?;
    eval::write_traces(create(&out.join("traces.jsonl"))?, &result.outcomes)?;
    if let Some(path) = calibration_records {
        let records = eval::collect_calibration_records(&questions, &pipeline, cfg.runner.parallelism)?;
        router::write_calibration_records(create(path)?, &records)?;
    }
    print!("{}", result.report.render());
    for f in result.outcomes.iter().filter_map(|o| o.as_ref().err()) {
        eprintln!("warning: {f}");
    }
    Ok(())
}

fn calibrate(
    records: &Path,
    grid: &str,
    folds: usize,
    seed: u64,
    objective: ObjectiveArg,
    bucket_width: f64,
    out: Option<&Path>,
) -> Result<(), Error> {
    let grid = router::parse_grid(grid)?;
    let records = router::read_calibration_records(records)?;
    let options = CalibrationOptions {
        k_folds: folds,
        seed,
        objective: match objective {
            ObjectiveArg::Accuracy => Objective::Accuracy,
            ObjectiveArg::F1 => Objective::F1,
        },
        ..CalibrationOptions::default()
    };
    let calibration = router::calibrate(&records, &grid, options)?;
    let thresholds = calibration.thresholds();
    let profile = router::entropy_accuracy_profile(&records, thresholds, bucket_width)?;
    print!("{}", router::render_profile(&profile));
    println!();
    println!(
        "selected: tau_low = {}, tau_high = {} (cv score {:.4}, mean steps {:.3})",
        thresholds.tau_low, thresholds.tau_high, calibration.best.cv_score, calibration.best.mean_steps
    );
    let fragment = format!(
        "[router]\ntau_low = {:?}\ntau_high = {:?}\n",
        thresholds.tau_low, thresholds.tau_high
    );
    println!();
    print!("{fragment}");
    if let Some(path) = out {
        write_string(path, &fragment)?;
    }
    Ok(())
}

fn ablate(
    dataset: &Path,
    config: &Path,
    tau_se: f64,
    tau_pe: &[f64],
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<(), Error> {
    let overrides = Overrides {
        seed,
        tau_low: None,
        tau_high: None,
        routing: None,
        parallelism: None,
    };
    let cfg = load_config(config, Some(&overrides))?;
    let questions = eval::read_dataset(dataset)?;
    let backends = Backends::build(&cfg)?;
    let pipeline = backends.pipeline(&cfg)?;
    let name = dataset
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let table = eval::ablate(&name, &questions, &pipeline, tau_se, tau_pe, cfg.runner.parallelism)?;
    print!("{}", table.render());
    if let Some(path) = out {
        let mut s = serde_json::to_string_pretty(&table).expect("table serializes");
        s.push('\n');
        write_string(path, &s)?;
    }
    Ok(())
}
