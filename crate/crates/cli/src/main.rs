use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use oba_core::adsim::NoisePreset;
use oba_core::corpus::Condition;
use oba_core::experiment::{self, AnalyzeOptions, ExperimentError, Manifest, ReportOptions};
use oba_core::metrics::QuartileMethod;
use oba_core::pipeline::FilterSet;

/// Measure online behavioural advertising with trained personas.
#[derive(Debug, Parser)]
#[command(name = "oba", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a simulated ad ecosystem and run every persona session.
    Simulate {
        /// Experiment manifest (TOML). Defaults apply when omitted.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output directory for the corpus.
        #[arg(long)]
        out: PathBuf,
        /// Master seed; overrides the manifest and every derived seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Visits per session.
        #[arg(long)]
        budget: Option<u32>,
        /// Mean seconds between visits.
        #[arg(long)]
        mean_interval: Option<f64>,
        #[arg(long)]
        repetitions: Option<u32>,
        /// Run a single condition with this geo.
        #[arg(long)]
        geo: Option<String>,
        /// Run a single condition with Do-Not-Track set.
        #[arg(long)]
        dnt: bool,
        /// Tag-noise preset.
        #[arg(long, value_enum)]
        noise: Option<Noise>,
    },
    /// Compute TTK and BAiLP for every persona, source and filter set.
    Analyze {
        dir: PathBuf,
        /// Number of other sources that must agree on a training keyword.
        #[arg(long)]
        n: Option<usize>,
        /// Similarity threshold for keyword consensus.
        #[arg(long)]
        t: Option<f64>,
        /// Similarity threshold for the demographic & geographic filter.
        #[arg(long)]
        tprime: Option<f64>,
        /// Filter sets to evaluate (r, rsc, rscdg, ...); repeatable.
        #[arg(long = "filters")]
        filters: Vec<FilterSet>,
    },
    /// Score the oba classification against simulator ground truth.
    Validate {
        dir: PathBuf,
        #[arg(long)]
        tprime: Option<f64>,
    },
    /// Summaries, condition comparisons and value correlations.
    Report {
        dir: PathBuf,
        /// Filter set to summarise.
        #[arg(long)]
        filters: Option<FilterSet>,
        /// Compare two conditions, e.g. `--compare ES-nodnt US-nodnt`.
        #[arg(long, num_args = 2, value_names = ["A", "B"])]
        compare: Vec<Condition>,
        /// Persona to CPC file (JSON object or CSV) to correlate with BAiLP.
        #[arg(long)]
        cpc: Option<PathBuf>,
        /// Condition used for the CPC correlation.
        #[arg(long)]
        condition: Option<Condition>,
        #[arg(long, value_enum)]
        quartiles: Option<Quartiles>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Noise {
    Zero,
    PaperShaped,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Quartiles {
    MedianExclusive,
    MedianInclusive,
    Linear,
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    match cli.command {
        Command::Simulate { manifest, out, seed, budget, mean_interval, repetitions, geo, dnt, noise } => {
            let mut m = match manifest {
                Some(path) => Manifest::load(path)?,
                None => Manifest::default(),
            };
            if let Some(s) = seed {
                m.seed = s;
            }
            if let Some(b) = budget {
                m.session.visit_budget = b;
            }
            if let Some(i) = mean_interval {
                m.session.mean_interval_secs = i;
            }
            if let Some(r) = repetitions {
                m.repetitions = r;
            }
            if geo.is_some() || dnt {
                let geo = geo.unwrap_or_else(|| m.conditions[0].geo.clone());
                m.conditions = vec![Condition::new(geo, dnt)];
            }
            if let Some(n) = noise {
                m.noise = Some(match n {
                    Noise::Zero => NoisePreset::Zero,
                    Noise::PaperShaped => NoisePreset::PaperShaped,
                });
            }
            let summary = experiment::simulate(&m, &out)?;
            log::info!(
                "{} sessions, {} visits, {} impressions written to {}",
                summary.sessions,
                summary.visits,
                summary.impressions,
                out.display()
            );
            for id in &summary.rejected {
                log::warn!("persona {id} rejected during training-page selection");
            }
        }
        Command::Analyze { dir, n, t, tprime, filters } => {
            let opts = AnalyzeOptions {
                n,
                t,
                t_prime: tprime,
                filter_sets: (!filters.is_empty()).then_some(filters),
            };
            let report = experiment::analyze(&dir, &opts)?;
            log::info!("{} cells written to {}", report.cells.len(), dir.join(experiment::REPORT_JSON).display());
        }
        Command::Validate { dir, tprime } => {
            let report = experiment::validate(&dir, tprime)?;
            log::info!(
                "pooled recall {:?}, fpr {:?}; details in {}",
                report.overall.pooled.recall,
                report.overall.pooled.fpr,
                dir.join(experiment::PERFORMANCE_FILE).display()
            );
        }
        Command::Report { dir, filters, compare, cpc, condition, quartiles } => {
            let opts = ReportOptions {
                filters,
                compare: match compare.as_slice() {
                    [a, b] => Some((a.clone(), b.clone())),
                    _ => None,
                },
                cpc,
                condition,
                quartiles: quartiles.map(|q| match q {
                    Quartiles::MedianExclusive => QuartileMethod::MedianExclusive,
                    Quartiles::MedianInclusive => QuartileMethod::MedianInclusive,
                    Quartiles::Linear => QuartileMethod::Linear,
                }),
            };
            experiment::report(&dir, &opts)?;
            log::info!("summaries written to {}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
