use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use v2xfl::grid::{
    accuracy_at_budget, class_ratio_grid, connection_rate_grid, reduction_table, render_reduction_table, CLASS_RATIOS,
    TABLE_RATES,
};
use v2xfl::harness::load_datasets;
use v2xfl::output::{read_rows, ResultsWriter, RunLabel};
use v2xfl::{ExperimentConfig, Seeds, Simulation};
use v2xfl_core::selection::Strategy;

#[derive(Parser)]
#[command(version, about = "Federated learning over a simulated vehicular network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment file; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// greedy, gossip, data, network or contextual.
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Connection rate in (0, 1].
    #[arg(long)]
    cr: Option<f64>,
    #[arg(long)]
    classes_per_client: Option<usize>,
    /// Sets all four seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum GridKind {
    /// Strategies against connection rates.
    Rates,
    /// Strategies against classes per client.
    Ratios,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write the results CSV.
    Run(Common),
    /// Run an experiment grid, write the combined CSV and print summaries.
    Grid {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "rates")]
        kind: GridKind,
        /// Seeds for the class-ratio grid.
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
    },
    /// Profile the clients once and dump the cluster assignment as JSON.
    Fingerprint(Common),
    /// Run one experiment with a JSON-lines trace of fusion, profiling and selection.
    Trace {
        #[command(flatten)]
        common: Common,
        /// Trace destination.
        #[arg(long)]
        trace_out: PathBuf,
    },
    /// Print the reduction table of an existing results CSV.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

impl Common {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.strategy {
            cfg.experiment.strategy = s;
        }
        if let Some(cr) = self.cr {
            cfg.experiment.connection_rate = cr;
        }
        if let Some(c) = self.classes_per_client {
            cfg.partition.classes_per_client = c;
        }
        if let Some(seed) = self.seed {
            cfg.seeds = Seeds::uniform(seed);
        }
        if let Some(out) = &self.out {
            cfg.experiment.output_path = Some(out.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn sink(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cfg: &ExperimentConfig, trace: Option<&Path>) -> anyhow::Result<()> {
    let (train, test) = load_datasets(&cfg.dataset)?;
    let mut sim = Simulation::new(cfg, &train, &test)?;
    if let Some(p) = trace.or(cfg.experiment.trace_path.as_deref()) {
        sim = sim.with_trace(sink(Some(p))?);
    }
    let label = RunLabel {
        run_id: cfg.experiment.run_id.clone(),
        strategy: cfg.experiment.strategy.name().to_string(),
        connection_rate: cfg.experiment.connection_rate,
        classes_per_client: cfg.partition.classes_per_client,
    };
    let mut out = ResultsWriter::new(sink(cfg.experiment.output_path.as_deref())?)?;
    let summary = sim.run(|r| {
        log::info!("round {} t={:.2}s acc={:?}", r.round_index, r.sim_time_end, r.test_accuracy);
        Ok(out.push(label.row(r))?)
    })?;
    out.finish_run(summary.time_to_target)?;
    out.into_inner()?.flush()?;
    match summary.time_to_target {
        Some(t) => eprintln!("time to {:.2} accuracy: {t:.2} s", cfg.experiment.target_accuracy),
        None => eprintln!("time to {:.2} accuracy: not reached", cfg.experiment.target_accuracy),
    }
    Ok(())
}

fn grid(cfg: &ExperimentConfig, kind: GridKind, seeds: &[u64]) -> anyhow::Result<()> {
    let seed = seeds.first().copied().unwrap_or(cfg.seeds.mobility);
    let cells = match kind {
        GridKind::Rates => connection_rate_grid(&TABLE_RATES, cfg.partition.classes_per_client, seed),
        GridKind::Ratios => class_ratio_grid(&CLASS_RATIOS, seeds),
    };
    let (train, test) = load_datasets(&cfg.dataset)?;
    let outcomes = v2xfl::grid::run_grid(cfg, &cells, &train, &test);
    let mut buf = ResultsWriter::new(Vec::new())?;
    let mut failed = 0;
    for o in &outcomes {
        match &o.result {
            Ok(summary) => buf.write_run(summary)?,
            Err(e) => {
                failed += 1;
                eprintln!("FAILED {}: {e}", o.cell.run_id());
            }
        }
    }
    let bytes = buf.into_inner()?;
    sink(cfg.experiment.output_path.as_deref())?.write_all(&bytes)?;
    let rows = read_rows(&bytes[..])?;
    match kind {
        GridKind::Rates => eprint!("{}", render_reduction_table(&reduction_table(&rows))),
        GridKind::Ratios => {
            eprintln!("classes_per_client\tstrategy\taccuracy");
            for ((cpc, s), acc) in accuracy_at_budget(&rows, cfg.experiment.time_budget) {
                eprintln!("{cpc}\t{s}\t{acc:.4}");
            }
        }
    }
    if failed > 0 {
        bail!("{failed} of {} cells failed", outcomes.len());
    }
    Ok(())
}

fn fingerprint(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let (train, test) = load_datasets(&cfg.dataset)?;
    let mut sim = Simulation::new(cfg, &train, &test)?;
    let Some(clusters) = sim.profile_now()? else {
        bail!("no client was connected");
    };
    let json = serde_json::json!({
        "cluster_count": clusters.cluster_count,
        "assignment": clusters.assignment,
        "members": clusters.members(),
    });
    let mut w = sink(cfg.experiment.output_path.as_deref())?;
    serde_json::to_writer_pretty(&mut w, &json)?;
    writeln!(w)?;
    Ok(())
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(c) => run(&c.load()?, None),
        Command::Trace { common, trace_out } => run(&common.load()?, Some(&trace_out)),
        Command::Grid { common, kind, seeds } => grid(&common.load()?, kind, &seeds),
        Command::Fingerprint(c) => fingerprint(&c.load()?),
        Command::Summarize { input } => {
            let rows = read_rows(File::open(&input).with_context(|| format!("opening {}", input.display()))?)?;
            print!("{}", render_reduction_table(&reduction_table(&rows)));
            Ok(())
        }
    }
}
