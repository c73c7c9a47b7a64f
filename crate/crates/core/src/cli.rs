//! Command-line interface.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use crate::config::RunConfig;
use crate::dataset_io::{load_dataset, save_dataset, write_file};
use crate::error::{Error, Result};
use crate::harness::{run_power_curve, run_threshold_sweep, write_sweep};
use crate::hypothesis::{
    edge_statistic, edge_support, entity_tests, population_test, write_edge_report, write_entity_report,
    write_population_report, EdgeStatisticForm, EntityPairs,
};
use crate::model::Family;
use crate::sampler::{read_trace, run_chain, write_trace, ModelVariant};
use crate::synth::{generate, SimulationSpec};

#[derive(Debug, Parser)]
#[command(name = "netpop", version, about = "Two-sample tests for populations of weighted networks")]
struct Cli {
    /// JSON run configuration; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Simulate {
        /// Simulation spec JSON.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override entities per population.
        #[arg(long)]
        entities: Option<usize>,
    },
    /// Fit the sampler to a dataset and write a trace directory.
    Fit {
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        chain: ChainArgs,
    },
    /// Compute population, entity and edge reports from a trace.
    Test {
        trace: PathBuf,
        /// Report directory (defaults to the trace directory).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        significance: Option<f64>,
        /// Edge deviation form: squared or printed.
        #[arg(long, value_parser = parse_form)]
        edge_form: Option<EdgeStatisticForm>,
        /// Binomial trials per edge: mean, median or a positive integer.
        #[arg(long)]
        trials: Option<String>,
        /// Entity pairs to test: none, cross or all.
        #[arg(long, value_parser = parse_pairs)]
        entity_pairs: Option<EntityPairs>,
    },
    /// Run the power-curve plan from the config.
    Power {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        chain: ChainArgs,
    },
    /// Threshold-sensitivity sweep on a dataset.
    Sweep {
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated threshold levels in [0, 1).
        #[arg(long, value_delimiter = ',')]
        levels: Option<Vec<f64>>,
        /// Skip the count-model reference fits.
        #[arg(long)]
        no_references: bool,
        #[command(flatten)]
        chain: ChainArgs,
    },
}

#[derive(Debug, Args)]
struct ChainArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// fixed or mixed.
    #[arg(long, value_parser = parse_variant)]
    variant: Option<ModelVariant>,
    /// binomial or poisson.
    #[arg(long, value_parser = parse_family)]
    family: Option<Family>,
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    /// Total sweeps including burn-in.
    #[arg(long)]
    samples: Option<u64>,
    #[arg(long)]
    burn_in: Option<u64>,
    #[arg(long)]
    thin: Option<u64>,
}

fn parse_variant(s: &str) -> std::result::Result<ModelVariant, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_family(s: &str) -> std::result::Result<Family, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_pairs(s: &str) -> std::result::Result<EntityPairs, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_form(s: &str) -> std::result::Result<EdgeStatisticForm, String> {
    match s {
        "squared" => Ok(EdgeStatisticForm::Squared),
        "printed" => Ok(EdgeStatisticForm::Printed),
        _ => Err(format!("unknown edge form {s:?}")),
    }
}

impl ChainArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(s) = self.seed {
            cfg.mcmc.seed = s;
        }
        if let Some(v) = self.variant {
            cfg.mcmc.model_variant = v;
        }
        if let Some(f) = self.family {
            cfg.hyperparams.family = f;
            cfg.hyperparams.link = f.link();
        }
        if let Some(h) = self.clusters {
            let default_alpha = cfg.hyperparams.alpha == 1.0 / cfg.hyperparams.n_clusters.max(1) as f64;
            cfg.hyperparams.n_clusters = h;
            if default_alpha {
                cfg.hyperparams.alpha = 1.0 / h.max(1) as f64;
            }
        }
        if let Some(r) = self.dim {
            cfg.hyperparams.latent_dim = r;
        }
        if let Some(n) = self.samples {
            cfg.mcmc.n_samples = n;
        }
        if let Some(b) = self.burn_in {
            cfg.mcmc.burn_in = b;
        }
        if let Some(t) = self.thin {
            cfg.mcmc.thin = t;
        }
        cfg.validate()
    }
}

fn configure_workers() {
    if let Ok(v) = std::env::var("NETPOP_WORKERS") {
        match v.parse::<usize>() {
            Ok(n) if n >= 1 => {
                if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
                    warn!("worker pool already initialised; NETPOP_WORKERS ignored");
                }
            }
            _ => warn!("ignoring invalid NETPOP_WORKERS={v:?}"),
        }
    }
}

fn load_spec(path: &Path) -> Result<SimulationSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let spec: SimulationSpec =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(spec)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Simulate { spec, out, seed, entities } => {
            let mut spec = load_spec(&spec)?;
            if let Some(n) = entities {
                spec = spec.with_entities(n);
            }
            spec.validate().map_err(|e| Error::Config(e.to_string()))?;
            let d = generate(&spec, seed)?;
            save_dataset(&d, &out)?;
            info!("wrote {} graphs to {}", d.graphs().len(), out.display());
        }
        Command::Fit { dataset, out, chain } => {
            chain.apply(&mut cfg)?;
            let d = load_dataset(&dataset)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            write_file(out.join("run_config.json"), cfg.to_json()?)?;
            match run_chain(&d, &cfg.hyperparams, &cfg.mcmc) {
                Ok(trace) => {
                    write_trace(&trace, &out)?;
                    info!("wrote {} records to {}", trace.records.len(), out.display());
                }
                Err(Error::ChainAborted { iteration, source, trace }) => {
                    write_trace(&trace, &out)?;
                    return Err(Error::ChainAborted { iteration, source, trace });
                }
                Err(e) => return Err(e),
            }
        }
        Command::Test {
            trace,
            out,
            threshold,
            significance,
            edge_form,
            trials,
            entity_pairs,
        } => {
            let t = &mut cfg.tests;
            if let Some(x) = threshold {
                t.threshold = x;
            }
            if let Some(x) = significance {
                t.significance = x;
            }
            if let Some(x) = edge_form {
                t.edge_form = x;
            }
            if let Some(x) = trials {
                t.trials = x;
            }
            if let Some(x) = entity_pairs {
                t.entity_pairs = x;
            }
            t.validate()?;
            let tc = cfg.tests.clone();
            let tr = read_trace(&trace)?;
            if !tr.is_complete() {
                warn!("trace is incomplete; reports cover the recorded iterations only");
            }
            let out = out.unwrap_or(trace);
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let pop = population_test(&tr, tc.threshold)?;
            write_population_report(&tr.meta, &pop, out.join("population_test.json"))?;
            let entities = entity_tests(&tr, tc.entity_pairs)?;
            write_entity_report(&entities, out.join("entity_tests.csv"))?;
            let support = edge_support(&tr.meta, tc.trials_rule()?)?;
            let edges = edge_statistic(&tr, &support, tc.significance, tc.edge_form)?;
            write_edge_report(&edges, out.join("edge_tests.csv"))?;
            println!("P(H1 | data) = {} ({})", pop.p_h1, if pop.reject_null { "reject H0" } else { "retain H0" });
        }
        Command::Power { out, chain } => {
            chain.apply(&mut cfg)?;
            let plan = cfg
                .plan
                .clone()
                .ok_or_else(|| Error::Config("the power command needs a `plan` in --config".into()))?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            write_file(out.join("run_config.json"), cfg.to_json()?)?;
            let points = run_power_curve(&plan, &cfg.hyperparams, &cfg.mcmc, cfg.tests.threshold, &out)?;
            for p in points {
                println!(
                    "n={} mean={} p05={} p95={} reject={}",
                    p.sample_size, p.mean_p_h1, p.percentile_05, p.percentile_95, p.rejection_rate
                );
            }
        }
        Command::Sweep {
            dataset,
            out,
            levels,
            no_references,
            chain,
        } => {
            chain.apply(&mut cfg)?;
            if let Some(l) = levels {
                cfg.sweep.levels = l;
            }
            if no_references {
                cfg.sweep.references = false;
            }
            cfg.validate()?;
            let d = load_dataset(&dataset)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            write_file(out.join("run_config.json"), cfg.to_json()?)?;
            let rows = run_threshold_sweep(&d, &cfg.sweep.levels, cfg.sweep.references, &cfg.hyperparams, &cfg.mcmc)?;
            write_sweep(&rows, out.join("sweep.csv"))?;
        }
    }
    Ok(())
}

/// Parse arguments and run; returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    configure_workers();
    match run(cli) {
        Ok(()) => 0,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            eprintln!("run `netpop --help` for usage");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
