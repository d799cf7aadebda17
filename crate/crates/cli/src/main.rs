use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use edgeseg::config::{ConfigError, ExperimentConfig};
use edgeseg::engine::{Simulation, SimulationError, Variant};
use edgeseg::localization::write_map_csv;
use edgeseg::segmentation::{write_segmentation_rows, SEGMENTATION_CSV_HEADER};
use edgeseg::sweep::{emit_aggregate_csv, emit_csv, emit_figures_data, run_sweep, SweepError, SweepSpec};

/// Edge-space segmentation experiments.
#[derive(Debug, Parser)]
#[command(name = "edgeseg", version)]
struct Cli {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration field, e.g. `--set kmeans.outlier_radius=12`.
    #[arg(long = "set", value_name = "PATH=VALUE", global = true)]
    overrides: Vec<String>,
    /// Global RNG seed (overrides `rng_seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (or file, for the dump verbs).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps; 0 means one per hardware thread.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Series {
    /// The three policies in lax mode.
    Core,
    /// Core plus strict mode and geographic placement; needed for every
    /// figure file.
    All,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one cell with the configured policy and print its report.
    Run,
    /// Run the user-count sweep and write raw, aggregate and figure CSVs.
    Sweep {
        #[arg(long, value_enum, default_value_t = Series::All)]
        series: Series,
        /// Override the repetition count.
        #[arg(long)]
        reps: Option<usize>,
        /// Override the user counts, comma separated.
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
    },
    /// Check a configuration and report every invalid field.
    ValidateConfig,
    /// Print the effective configuration (defaults, file and overrides) as TOML.
    ShowConfig,
    /// Write the latency map at a given simulated time as CSV.
    DumpMap {
        #[arg(long, default_value_t = 1.0)]
        at: f64,
    },
    /// Write the configured policy's subspaces over time as CSV.
    DumpSegmentation {
        /// Sampling interval in simulated seconds.
        #[arg(long, default_value_t = 60.0)]
        every: f64,
    },
}

#[derive(Debug)]
enum CliError {
    Config(ConfigError),
    Simulation(SimulationError),
    Sweep(SweepError),
    Io(String, io::Error),
    Usage(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(ConfigError::InvalidConfig(_)) => "InvalidConfig",
            CliError::Config(_) => "ConfigError",
            CliError::Simulation(_) => "SimulationError",
            CliError::Sweep(_) => "SweepError",
            CliError::Io(..) => "IoError",
            CliError::Usage(_) => "UsageError",
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Config(e) => e.to_string(),
            CliError::Simulation(e) => e.to_string(),
            CliError::Sweep(e) => e.to_string(),
            CliError::Io(p, e) => format!("{p}: {e}"),
            CliError::Usage(m) => m.clone(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    fn to_json(&self) -> serde_json::Value {
        let fields: Vec<_> = match self {
            CliError::Config(e) => e
                .fields()
                .iter()
                .map(|f| json!({"field": f.field, "message": f.message}))
                .collect(),
            _ => Vec::new(),
        };
        json!({"error": self.kind(), "message": self.message(), "fields": fields})
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<SimulationError> for CliError {
    fn from(e: SimulationError) -> Self {
        match e {
            SimulationError::Config(c) => CliError::Config(c),
            e => CliError::Simulation(e),
        }
    }
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Config(c) => CliError::Config(c),
            e => CliError::Sweep(e),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |e| CliError::Io(path.display().to_string(), e)
}

/// Prints a line to stdout; a closed pipe (`edgeseg run | head`) is not an error.
fn emit(line: impl std::fmt::Display) {
    let _ = writeln!(io::stdout().lock(), "{line}");
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for o in &cli.overrides {
        let (path, value) = o
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("override `{o}` is not PATH=VALUE")))?;
        cfg.apply_override(path.trim(), value.trim())?;
    }
    if let Some(s) = cli.seed {
        cfg.rng_seed = s;
    }
    Ok(cfg.validate()?)
}

fn out_file(cli: &Cli, default: &str) -> Result<PathBuf, CliError> {
    let path = cli.out.clone().unwrap_or_else(|| PathBuf::from(default));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(path)
}

fn run_cell(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let report = edgeseg::engine::run(cfg)?;
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    if let Some(dir) = &cli.out {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join("report.json");
        fs::write(&path, &text).map_err(io_err(&path))?;
    }
    emit(&text);
    Ok(())
}

fn sweep(cli: &Cli, series: Series, reps: Option<usize>, counts: Option<Vec<usize>>) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let mut spec = SweepSpec::from_config(&cfg);
    if series == Series::All {
        spec = spec.with_all_series();
    }
    if let Some(r) = reps {
        spec.repetitions = r;
    }
    if let Some(c) = counts {
        spec.user_counts = c;
    }
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("results"));
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let table = run_sweep(&spec, &cfg, cli.jobs)?;
    emit_csv(&table, dir.join("raw.csv"))?;
    emit_aggregate_csv(&table, dir.join("aggregate.csv"))?;
    let figs = emit_figures_data(&table, dir.join("figures"))?;
    for m in &figs.missing {
        eprintln!("{}", json!({"warning": "MissingSeries", "message": m.to_string()}));
    }
    emit(json!({
        "rows": table.rows.len(),
        "errors": table.error_count(),
        "figures": figs.written.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "missing": figs.missing.len(),
    }));
    Ok(())
}

fn validate(cli: &Cli) -> Result<(), CliError> {
    load_config(cli)?;
    emit(json!({"valid": true}));
    Ok(())
}

fn show_config(cli: &Cli) -> Result<(), CliError> {
    emit(load_config(cli)?.to_toml_string().trim_end());
    Ok(())
}

fn dump_map(cli: &Cli, at: f64) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    if !(at > 0.0 && at <= cfg.sim_duration_s) {
        return Err(CliError::Usage(format!("--at must be in (0, {}]", cfg.sim_duration_s)));
    }
    let mut sim = Simulation::new(cfg, &[])?;
    while sim.environment().clock().now_s < at - 1e-9 {
        sim.step()?;
    }
    let path = out_file(cli, "map.csv")?;
    let file = File::create(&path).map_err(io_err(&path))?;
    let map = sim.environment().map().expect("stepped at least once");
    write_map_csv(map, file).map_err(|e| CliError::Io(path.display().to_string(), e.into()))?;
    Ok(())
}

fn dump_segmentation(cli: &Cli, every: f64) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    if !cfg.policy.is_segmented() {
        return Err(CliError::Usage("the configured policy does not segment".into()));
    }
    if every <= 0.0 {
        return Err(CliError::Usage("--every must be positive".into()));
    }
    let path = out_file(cli, "segmentation.csv")?;
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Io(path.display().to_string(), e.into()))?;
    let wrap = |e: csv::Error| CliError::Io(path.display().to_string(), e.into());
    w.write_record(SEGMENTATION_CSV_HEADER).map_err(wrap)?;
    let mut sim = Simulation::new(cfg.clone(), &[Variant::of(&cfg)])?;
    let mut next = every;
    while !sim.is_finished() {
        let now = sim.step()?;
        if now + 1e-9 >= next {
            if let Some(seg) = sim.runs()[0].segmentation() {
                write_segmentation_rows(&mut w, now, seg).map_err(wrap)?;
            }
            next += every;
        }
    }
    w.flush().map_err(|e| CliError::Io(path.display().to_string(), e))?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run => run_cell(&cli),
        Command::Sweep { series, reps, counts } => sweep(&cli, *series, *reps, counts.clone()),
        Command::ValidateConfig => validate(&cli),
        Command::ShowConfig => show_config(&cli),
        Command::DumpMap { at } => dump_map(&cli, *at),
        Command::DumpSegmentation { every } => dump_segmentation(&cli, *every),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = writeln!(io::stderr(), "{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
