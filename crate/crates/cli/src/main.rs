//! `vecrep` command line: replica planning, replica-table validation,
//! simulation, sweeps and synthetic traces.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use vecrep_core::analytics;
use vecrep_core::harness::{
    self, ConditionsSpec, ExperimentConfig, Horizon, LearnerSpec, OutputSpec, PolicyKind,
    ScenarioSpec, SimulationSpec, SweepAxis, TABLE1,
};
use vecrep_core::traffic::{self, RoadSpec, SpeedLaw, Topology};

#[derive(Parser, Debug)]
#[command(
    name = "vecrep",
    version,
    about = "Task replication planning and simulation for vehicular edge computing"
)]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the replica plan for the given network conditions.
    Plan {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        conditions: ConditionArgs,
    },
    /// Compare analytic and Monte Carlo optimal replica counts over the
    /// published grid.
    Validate {
        #[arg(long, value_enum, default_value_t = Cells::Table1)]
        cells: Cells,
        #[arg(long, default_value_t = 100_000)]
        tasks: u64,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run one experiment.
    Simulate(ExperimentArgs),
    /// Run one experiment per axis value.
    Sweep {
        #[command(flatten)]
        experiment: ExperimentArgs,
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        values: Vec<f64>,
        /// Merged metrics CSV with an axis column.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Emit a synthetic PPP trace as CSV.
    TraceGen(TraceArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Cells {
    Table1,
}

#[derive(Args, Debug, Default)]
struct ConditionArgs {
    /// Task arrival rate per TaV (tasks/s).
    #[arg(long)]
    lambda0: Option<f64>,
    /// Mean SeV service rate (tasks/s).
    #[arg(long)]
    mu: Option<f64>,
    /// Packet erasure probability.
    #[arg(long)]
    pe: Option<f64>,
    /// TaV density (vehicles/km).
    #[arg(long)]
    gamma_t: Option<f64>,
    /// SeV density (vehicles/km).
    #[arg(long)]
    gamma_s: Option<f64>,
    /// Total density (vehicles/km), split by `--ratio`.
    #[arg(long)]
    total_density: Option<f64>,
    /// TaV:SeV density ratio.
    #[arg(long)]
    ratio: Option<f64>,
    /// Communication range (km).
    #[arg(long)]
    range_km: Option<f64>,
    /// Failure-probability threshold.
    #[arg(long)]
    theta_f: Option<f64>,
}

impl ConditionArgs {
    fn apply(&self, base: Option<ConditionsSpec>) -> Result<ConditionsSpec> {
        let mut c = match base {
            Some(c) => c,
            None => {
                let lambda0 = self
                    .lambda0
                    .context("--lambda0 is required without --config")?;
                ConditionsSpec {
                    lambda0,
                    total_density: None,
                    ratio: None,
                    ..ConditionsSpec::table1(lambda0, 1.0)
                }
            }
        };
        if let Some(v) = self.lambda0 {
            c.lambda0 = v;
        }
        if let Some(v) = self.mu {
            c.mu_c = v;
        }
        if let Some(v) = self.pe {
            c.p_e = v;
        }
        if let Some(v) = self.range_km {
            c.range_km = v;
        }
        if let Some(v) = self.theta_f {
            c.theta_f = v;
        }
        if self.gamma_t.is_some() || self.gamma_s.is_some() {
            c.total_density = None;
            c.ratio = None;
            c.gamma_t = self.gamma_t.or(c.gamma_t);
            c.gamma_s = self.gamma_s.or(c.gamma_s);
        }
        if self.total_density.is_some() || self.ratio.is_some() {
            c.gamma_t = None;
            c.gamma_s = None;
            c.total_density = self.total_density.or(c.total_density);
            c.ratio = self.ratio.or(c.ratio);
        }
        Ok(c)
    }
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// JSON experiment config; other flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    conditions: ConditionArgs,
    #[arg(long)]
    policy: Option<PolicyKind>,
    #[arg(long)]
    seed: Option<u64>,
    /// Replica count for `ltra`; defaults to the analytic plan.
    #[arg(long)]
    k: Option<u32>,
    #[arg(long, conflicts_with = "tasks")]
    seconds: Option<f64>,
    #[arg(long)]
    tasks: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    d_max: Option<f64>,
    /// Synthetic ring road length (km).
    #[arg(long, conflicts_with = "trace")]
    road_km: Option<f64>,
    /// Replay a trace CSV instead of a synthetic road.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    metrics_csv: Option<PathBuf>,
    #[arg(long)]
    summary_json: Option<PathBuf>,
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let base = match &self.config {
            Some(path) => Some(ExperimentConfig::load(path)?),
            None => None,
        };
        let conditions = self
            .conditions
            .apply(base.as_ref().map(|b| b.conditions.clone()))?;
        let horizon = match (self.seconds, self.tasks) {
            (Some(s), _) => Some(Horizon::Seconds(s)),
            (_, Some(n)) => Some(Horizon::Tasks(n)),
            _ => None,
        };
        let mut c = match base {
            Some(mut b) => {
                b.conditions = conditions;
                b
            }
            None => ExperimentConfig {
                scenario: ScenarioSpec::default(),
                conditions,
                learner: LearnerSpec::default(),
                policy: self
                    .policy
                    .context("--policy is required without --config")?,
                horizon: horizon.context("--seconds or --tasks is required without --config")?,
                seed: self.seed.context("--seed is required without --config")?,
                simulation: SimulationSpec::default(),
                output: OutputSpec::default(),
            },
        };
        if let Some(p) = self.policy {
            c.policy = p;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(h) = horizon {
            c.horizon = h;
        }
        if self.k.is_some() {
            c.learner.k_replicas = self.k;
        }
        if let Some(v) = self.alpha {
            c.learner.alpha = v;
        }
        if let Some(v) = self.levels {
            c.learner.levels = v;
        }
        if let Some(v) = self.d_max {
            c.learner.d_max = v;
        }
        if let Some(km) = self.road_km {
            match &mut c.scenario {
                ScenarioSpec::Synthetic { road_km, .. } => *road_km = km,
                _ => bail!("--road-km applies to synthetic scenarios only"),
            }
        }
        if let Some(path) = &self.trace {
            c.scenario = ScenarioSpec::Trace {
                path: path.clone(),
                ring_length_m: None,
            };
        }
        if self.metrics_csv.is_some() {
            c.output.metrics_csv = self.metrics_csv.clone();
        }
        if self.summary_json.is_some() {
            c.output.summary_json = self.summary_json.clone();
        }
        Ok(c)
    }
}

#[derive(Args, Debug)]
struct TraceArgs {
    #[arg(long, default_value_t = 10.0)]
    road_km: f64,
    /// TaV density (vehicles/km).
    #[arg(long)]
    gamma_t: f64,
    /// SeV density (vehicles/km).
    #[arg(long)]
    gamma_s: f64,
    #[arg(long, default_value_t = 60.0)]
    seconds: f64,
    #[arg(long, default_value_t = 1.0)]
    timestep: f64,
    /// Speeds are drawn uniformly up to this value (m/s).
    #[arg(long, default_value_t = traffic::MAX_SPEED_MPS)]
    max_speed: f64,
    /// Keep vehicles on an open road instead of wrapping around a ring.
    #[arg(long)]
    open: bool,
    #[arg(long)]
    seed: u64,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn echo_config(config: &ExperimentConfig) {
    eprintln!("resolved config:\n{}", config.to_json());
    eprintln!("seed: {}", config.seed);
}

fn writer(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn plan(config: Option<PathBuf>, args: ConditionArgs) -> Result<()> {
    let base = match config {
        Some(path) => Some(ExperimentConfig::load(path)?.conditions),
        None => None,
    };
    let spec = args.apply(base)?;
    let cond = spec.resolve()?;
    eprintln!(
        "resolved conditions:\n{}",
        serde_json::to_string_pretty(&spec)?
    );
    let plan = analytics::optimal_replicas(&cond)?;
    let out = serde_json::json!({ "conditions": cond, "plan": plan });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn validate(tasks: u64, seed: u64, csv: Option<PathBuf>) -> Result<()> {
    eprintln!(
        "cells: table1 ({} rows), tasks per cell: {tasks}",
        TABLE1.len()
    );
    eprintln!("seed: {seed}");
    let checks = harness::validate_table1(&TABLE1, tasks, seed)?;
    let header = "lambda0,ratio,k_tilde,k_tilde_published,k_theory,k_sim,k_sim_published";
    let rows: Vec<String> = checks
        .iter()
        .map(|c| {
            let k_sim = c.k_sim.map_or_else(|| "-".to_string(), |k| k.to_string());
            format!(
                "{},1/{},{:.3},{:.2},{},{},{}",
                c.row.lambda0,
                c.row.ratio_den,
                c.k_tilde,
                c.row.k_tilde,
                c.k_theory,
                k_sim,
                c.row.k_sim
            )
        })
        .collect();
    println!("{header}");
    for r in &rows {
        println!("{r}");
    }
    if let Some(path) = &csv {
        let mut w = writer(&csv)?;
        writeln!(w, "{header}")?;
        for r in &rows {
            writeln!(w, "{r}")?;
        }
        w.flush()
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let agree = checks.iter().filter(|c| c.sim_matches_theory()).count();
    let published = checks
        .iter()
        .filter(|c| c.k_sim == Some(c.row.k_sim))
        .count();
    println!(
        "# K_sim = K_theory in {agree}/{n}; K_sim = published K_sim in {published}/{n}",
        n = checks.len()
    );
    Ok(())
}

fn simulate(args: ExperimentArgs) -> Result<()> {
    let config = args.resolve()?;
    echo_config(&config);
    let report = harness::run_experiment(&config)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn sweep(
    args: ExperimentArgs,
    axis: SweepAxis,
    values: Vec<f64>,
    csv: Option<PathBuf>,
) -> Result<()> {
    let config = args.resolve()?;
    echo_config(&config);
    let report = harness::sweep(&config, axis, &values)?;
    for p in &report.points {
        eprintln!("{} = {}: seed {}", axis.label(), p.value, p.seed);
    }
    if let Some(path) = &csv {
        let w = writer(&csv)?;
        harness::write_sweep_csv(&report, w)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    let failed = report.failed();
    if failed > 0 {
        bail!("{failed} of {} sweep points failed", report.points.len());
    }
    Ok(())
}

fn trace_gen(args: TraceArgs) -> Result<()> {
    let road = RoadSpec {
        length_km: args.road_km,
        gamma_t: args.gamma_t,
        gamma_s: args.gamma_s,
    };
    let topology = if args.open {
        Topology::Open
    } else {
        Topology::Ring {
            length_m: args.road_km * 1000.0,
        }
    };
    eprintln!("resolved trace: {args:?}");
    eprintln!("seed: {}", args.seed);
    let initial = traffic::generate_ppp_snapshot(&road, args.seed)?;
    let speed = SpeedLaw::Uniform {
        max_mps: args.max_speed,
    };
    let trace = traffic::generate_synthetic_trace(
        &initial,
        args.seconds,
        args.timestep,
        speed,
        topology,
        args.seed,
    )?;
    let mut w = writer(&args.out)?;
    traffic::write_trace(&trace, &mut w)?;
    w.flush()?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Plan { config, conditions } => plan(config, conditions),
        Command::Validate {
            cells: Cells::Table1,
            tasks,
            seed,
            csv,
        } => validate(tasks, seed, csv),
        Command::Simulate(args) => simulate(args),
        Command::Sweep {
            experiment,
            axis,
            values,
            csv,
        } => sweep(experiment, axis, values, csv),
        Command::TraceGen(args) => trace_gen(args),
    }
}
