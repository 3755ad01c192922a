use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use probedesign::experiment::{emit_results, run_experiment, ExperimentConfig, MetricKind};
use probedesign::topology::default_radius;
use probedesign::{build_constraints, compute_design, design_matrix, path_set, DesignMethod, FwConfig, Topology};

#[derive(Parser)]
#[command(name = "probedesign", version, about = "Compute probing designs and run estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a probing distribution for a topology and print it as JSON.
    Design {
        #[arg(long)]
        topology: PathBuf,
        /// One of a_optimal, e_optimal, qr, uniform.
        #[arg(long, default_value = "a_optimal")]
        method: DesignMethod,
        #[arg(long, default_value_t = 300)]
        iters: usize,
        /// Enables per-source and per-destination caps with this excess.
        #[arg(long)]
        excess_budget: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a simulated experiment described by a JSON config.
    Run(RunArgs),
    /// Run an experiment that resamples recorded probes from a pool.
    Replay {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        pool: PathBuf,
    },
    /// Generate a random geometric topology.
    GenTopo {
        #[arg(long)]
        nodes: usize,
        /// Connection radius in the unit square; defaults to a value giving
        /// an expected degree of about six.
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    budgets: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    designs: Option<Vec<DesignMethod>>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    excess_budget: Option<f64>,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut config = ExperimentConfig::load(&self.config)
            .with_context(|| format!("cannot load config {}", self.config.display()))?;
        if let Some(out) = &self.out {
            config.output_dir = Some(out.clone());
        }
        if let Some(runs) = self.runs {
            config.runs = runs;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(budgets) = &self.budgets {
            config.budgets = budgets.clone();
        }
        if let Some(designs) = &self.designs {
            config.designs = designs.clone();
        }
        if let Some(iters) = self.iters {
            config.fw.iterations = iters;
        }
        if let Some(sigma) = self.sigma {
            config.sigma = sigma;
        }
        if self.excess_budget.is_some() {
            config.excess_budget = self.excess_budget;
        }
        Ok(config)
    }
}

fn execute(config: &ExperimentConfig) -> Result<()> {
    let table = run_experiment(config)?;
    let dir = config.output_dir.clone().unwrap_or_else(|| PathBuf::from("results"));
    let files = emit_results(&table, &dir)?;
    print!("{}", probedesign::experiment::results_csv(&table));
    eprintln!("wrote {} files to {}", files.len(), dir.display());
    Ok(())
}

fn main_inner(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Design { topology, method, iters, excess_budget, out } => {
            let topo = Topology::load(&topology)?;
            let paths = path_set(&topo)?;
            let x = design_matrix(&paths)?;
            let constraints = build_constraints(&paths.endpoints(), excess_budget)?;
            let config = FwConfig { iterations: iters, ..FwConfig::default() };
            let design = compute_design(method, &x, &constraints, &config)?;
            let text = serde_json::to_string_pretty(&design)? + "\n";
            match out {
                Some(path) => fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?,
                None => print!("{text}"),
            }
        }
        Command::Run(args) => execute(&args.load()?)?,
        Command::Replay { run, pool } => {
            let mut config = run.load()?;
            config.metric = MetricKind::Replay;
            config.pool = Some(pool);
            execute(&config)?;
        }
        Command::GenTopo { nodes, radius, seed, out } => {
            let topo = Topology::generate_geometric(nodes, radius.unwrap_or_else(|| default_radius(nodes)), seed)?;
            topo.save(&out)?;
            eprintln!("{} nodes, {} edges -> {}", nodes, topo.n_edges(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
