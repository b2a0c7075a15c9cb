use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use irispad::experiment::{self, ExperimentConfig, ExperimentError, Quantity, TestKind};
use irispad::mock;
use irispad::prompt::PromptVariant;
use irispad::scoring::DEFAULT_HISTOGRAM_BINS;
use irispad::stats::DEFAULT_CONVERGENCE_EPSILON;
use tracing_subscriber::filter::LevelFilter;

/// Iris presentation attack detection experiments with multimodal LLMs.
#[derive(Debug, Parser)]
#[command(name = "irispad", version)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate manifest and annotations and write the capped per-class sample.
    Ingest {
        /// Instead, write a synthetic demo workspace into this directory.
        #[arg(long, value_name = "DIR")]
        demo: Option<PathBuf>,
        /// Mock server port written into the demo config.
        #[arg(long, default_value_t = 8765)]
        port: u16,
    },
    /// Query the endpoint for every variant and sampled image.
    Run,
    /// Rate tables, MSE and confidence histograms from a results store.
    Score {
        /// Defaults to the store in the output directory.
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_HISTOGRAM_BINS)]
        bins: usize,
    },
    /// Generate MESH descriptions from examiner feedback.
    Mesh,
    /// Learning curves and convergence points per variant.
    Curve {
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_CONVERGENCE_EPSILON)]
        epsilon: f64,
    },
    /// Compare two results stores.
    Stats {
        store_a: PathBuf,
        store_b: PathBuf,
        #[arg(long, value_enum, default_value_t = TestArg::Wilcoxon)]
        test: TestArg,
        #[arg(long, value_enum, default_value_t = QuantityArg::ClassRates)]
        quantity: QuantityArg,
        /// Restrict to one variant, e.g. `long+human`.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Fuse embeddings, project to 2-D and report class separability.
    Embed,
    /// Serve scripted responses until interrupted.
    MockServe {
        #[arg(long)]
        script: PathBuf,
        #[arg(long, default_value_t = 8765)]
        port: u16,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TestArg {
    Wilcoxon,
    MannWhitney,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum QuantityArg {
    ClassRates,
    Confidence,
    SampleError,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, ExperimentError> {
    let path = cli.config.as_ref().ok_or_else(|| ExperimentError::Config {
        path: PathBuf::from("<cli>"),
        field: "--config".into(),
        msg: "this command needs a configuration file".into(),
    })?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.output_dir {
        if cfg.mesh.output == cfg.output_dir.join("mesh_corpus.txt") {
            cfg.mesh.output = dir.join("mesh_corpus.txt");
        }
        cfg.output_dir = dir.clone();
    }
    Ok(cfg)
}

/// Output directory and seed for commands where a config is optional.
fn loose_settings(cli: &Cli) -> Result<(PathBuf, u64), ExperimentError> {
    let from_cfg = match &cli.config {
        Some(_) => Some(load_config(cli)?),
        None => None,
    };
    let dir = cli
        .output_dir
        .clone()
        .or_else(|| from_cfg.as_ref().map(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));
    let seed = cli.seed.or(from_cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
    Ok((dir, seed))
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("tokio runtime")
}

fn run(cli: &Cli) -> Result<(), ExperimentError> {
    match &cli.command {
        Command::Ingest { demo: Some(dir), port } => {
            let cfg = experiment::scaffold_demo(dir, cli.seed.unwrap_or(7), *port)?;
            println!("demo workspace written; config: {}", cfg.display());
        }
        Command::Ingest { demo: None, .. } => {
            let cfg = load_config(cli)?;
            let s = experiment::cmd_ingest(&cfg)?;
            println!(
                "samples={} sampled={} annotations={} written={}",
                s.samples,
                s.sampled,
                s.annotations,
                s.written.display()
            );
            for (class, n) in &s.class_counts {
                println!("{class} {n}");
            }
        }
        Command::Run => {
            let cfg = load_config(cli)?;
            let s = runtime().block_on(experiment::cmd_run(&cfg))?;
            for f in s.failures.iter().take(10) {
                eprintln!("failed | {} | {} | {}", f.sample_id, f.variant, f.error);
            }
            if s.failures.len() > 10 {
                eprintln!(
                    "... {} more in {}",
                    s.failures.len() - 10,
                    cfg.output_dir.join(experiment::FAILURES_FILE).display()
                );
            }
            println!(
                "new={} skipped={} failed={} total={} store={}",
                s.new_records,
                s.skipped,
                s.failures.len(),
                s.total_records,
                s.store.display()
            );
        }
        Command::Score { store, bins } => {
            let (dir, _) = loose_settings(cli)?;
            let store = store.clone().unwrap_or_else(|| dir.join(experiment::STORE_FILE));
            let report = experiment::cmd_score(&store, &dir, *bins)?;
            for row in &report.rows {
                println!("{} mse={:.3} n={}", row.variant, row.mse.rounded(3), row.verdicts);
            }
        }
        Command::Mesh => {
            let cfg = load_config(cli)?;
            let s = runtime().block_on(experiment::cmd_mesh(&cfg))?;
            for f in &s.failures {
                eprintln!("failed | {} | {} | {}", f.class, f.sample_id.as_deref().unwrap_or("-"), f.error);
            }
            println!("written={} failed={} corpus={}", s.written, s.failures.len(), s.corpus.display());
            if !s.failures.is_empty() {
                return Err(ExperimentError::MeshFailures {
                    failed: s.failures.len(),
                    total: s.failures.len() + s.written,
                });
            }
        }
        Command::Curve { store, epsilon } => {
            let (dir, seed) = loose_settings(cli)?;
            let store = store.clone().unwrap_or_else(|| dir.join(experiment::STORE_FILE));
            for c in experiment::cmd_curve(&store, &dir, seed, *epsilon)? {
                let at = c.converged_at.map_or("never".to_string(), |n| n.to_string());
                println!("{} converged_at={} final_mse={:.3}", c.variant, at, c.curve.points.last().map_or(0.0, |p| p.mse));
            }
        }
        Command::Stats { store_a, store_b, test, quantity, variant } => {
            let variant: Option<PromptVariant> = match variant {
                Some(v) => Some(v.parse()?),
                None => None,
            };
            let test = match test {
                TestArg::Wilcoxon => TestKind::Wilcoxon,
                TestArg::MannWhitney => TestKind::MannWhitney,
            };
            let quantity = match quantity {
                QuantityArg::ClassRates => Quantity::ClassRates,
                QuantityArg::Confidence => Quantity::Confidence,
                QuantityArg::SampleError => Quantity::SampleError,
            };
            let r = experiment::cmd_stats(store_a, store_b, test, quantity, variant)?;
            println!("{}", experiment::format_stat_line(test, &r));
        }
        Command::Embed => {
            let cfg = load_config(cli)?;
            let r = experiment::cmd_embed(&cfg)?;
            println!("{}", experiment::format_silhouette_line(&r));
        }
        Command::MockServe { script, port } => serve(script, *port)?,
    }
    Ok(())
}

fn serve(script: &Path, port: u16) -> Result<(), ExperimentError> {
    runtime().block_on(async {
        let server = mock::mock_serve(script, port).await?;
        println!("listening on {}", server.base_url());
        let _ = tokio::signal::ctrl_c().await;
        server.shutdown().await;
        Ok(())
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(if cli.verbose { LevelFilter::INFO } else { LevelFilter::WARN })
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
