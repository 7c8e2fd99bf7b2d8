use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use eotrack::consensus::generate_network;
use eotrack::dfilter::VariantKind;
use eotrack::experiment::{run_experiment, ExperimentConfig};
use eotrack::plot::{emit_plot_data, PlotKind};
use eotrack::simkit::ScenarioId;
use eotrack::{Error, Result};

#[derive(Parser)]
#[command(
    name = "eotrack",
    version,
    about = "Distributed extended object tracking experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo experiment and write result files.
    Run(ConfigArgs),
    /// Post-process results (or run sweeps) into plot tables.
    PlotData(PlotArgs),
    /// Generate a random connected network and print its edge list.
    GenNetwork(NetworkArgs),
    /// Check an experiment configuration without running it.
    Validate(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// s1 or s2
    #[arg(long)]
    scenario: Option<ScenarioId>,
    /// Comma-separated: dvbeot, dvbeot-known-r, dvbeot-no-r, non-coop, centralized
    #[arg(long, value_delimiter = ',')]
    variants: Option<Vec<VariantKind>>,
    #[arg(long)]
    runs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(id) = self.scenario {
            cfg.scenario.preset = Some(id);
        }
        if let Some(v) = &self.variants {
            cfg.variants = v.clone();
        }
        if let Some(r) = self.runs {
            cfg.runs = r;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct PlotArgs {
    /// rgwe-vs-scan, rgwe-vs-vb-iteration, rgwe-vs-L or ellipses
    #[arg(long)]
    kind: PlotKind,
    /// Directory written by `run` (rgwe-vs-scan, ellipses).
    #[arg(long)]
    results: Option<PathBuf>,
    /// Experiment file (sweeps; also supplies the scaling for ellipses).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sweep values, comma-separated.
    #[arg(long, value_delimiter = ',')]
    values: Vec<usize>,
    /// Run whose ellipses are emitted.
    #[arg(long, default_value_t = 1)]
    run: usize,
    /// Output CSV file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct NetworkArgs {
    #[arg(long, default_value_t = 20)]
    nodes: usize,
    #[arg(long, default_value_t = 2.5)]
    side: f64,
    #[arg(long, default_value_t = 0.8)]
    radius: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Validation(Error),
    Runtime(Error),
}

fn validated(args: &ConfigArgs) -> std::result::Result<ExperimentConfig, Failure> {
    let cfg = args.resolve().map_err(Failure::Validation)?;
    cfg.validate().map_err(Failure::Validation)?;
    Ok(cfg)
}

fn execute(cli: Cli) -> std::result::Result<(), Failure> {
    match cli.command {
        Command::Validate(args) => {
            validated(&args)?;
            println!("configuration is valid");
        }
        Command::Run(args) => {
            let cfg = validated(&args)?;
            let res = run_experiment(&cfg).map_err(Failure::Runtime)?;
            println!("wrote results to {}", cfg.output_dir.display());
            for v in &res.summary.variants {
                println!("{:<16} mean RGWE {:.3}", v.variant.name(), v.mean_rgwe);
            }
        }
        Command::PlotData(args) => {
            let cfg = match &args.config {
                Some(p) => {
                    let c = ExperimentConfig::load(p).map_err(Failure::Validation)?;
                    c.validate().map_err(Failure::Validation)?;
                    Some(c)
                }
                None => None,
            };
            emit_plot_data(
                args.kind,
                args.results.as_deref(),
                cfg.as_ref(),
                &args.values,
                args.run,
                &args.out,
            )
            .map_err(Failure::Runtime)?;
        }
        Command::GenNetwork(args) => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            let net = generate_network(args.nodes, args.side, args.radius, &mut rng).map_err(
                |e| match e {
                    Error::InvalidParameter(_) => Failure::Validation(e),
                    other => Failure::Runtime(other),
                },
            )?;
            match &args.out {
                Some(p) => net.save(p).map_err(Failure::Runtime)?,
                None => print!("{}", net.to_edge_list()),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("invalid configuration: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
