//! `simcf` command-line front end.
//!
//! `simcf run` evaluates the selected schemes over a range of trials;
//! `simcf sweep` repeats that for every value of one swept parameter. Both
//! write CSV tables plus a JSON metadata sidecar into `--out`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use simcf_core::driver::{monte_carlo, MonteCarloTable, SchemeId};
use simcf_core::report::{metadata_json, write_traces, ResultsWriter, SweepPoint};
use simcf_core::scenario::grid_shape;
use simcf_core::{Error, ScenarioConfig};

#[derive(Parser)]
#[command(name = "simcf", version, about = "SIM-aided cell-free massive MIMO downlink simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the selected schemes over a range of trials.
    Run(Common),
    /// Repeat a run for every value of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// PARAM=v1,v2,... with PARAM one of L, U, K, M, N, N_total, P_max.
        #[arg(long, value_name = "PARAM=VALUES")]
        sweep: String,
        /// Keep the total meta-atom count fixed: N per layer = N_TOTAL / L.
        #[arg(long, value_name = "N_TOTAL")]
        fixed_n_total: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated scheme tokens.
    #[arg(long, default_value = "aga-ao,nua-ao,aga-sim,nua-sim,aga-power,nua-power,aga-rp-ep,nua-rp-ep")]
    schemes: String,
    /// Number of Monte Carlo trials (trial indices 0..N).
    #[arg(long, default_value_t = 10)]
    trials: u64,
    /// Override the seed of the scenario file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Also write per-iteration AO traces.
    #[arg(long)]
    trace: bool,
    /// Fill the wall_time_s column. Timed output is not reproducible.
    #[arg(long)]
    wall_time: bool,
}

/// Failures split by exit code.
enum Failure {
    /// Bad configuration or arguments: exit 2.
    Config(String),
    /// Anything that went wrong while running: exit 1.
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::ConfigParse(_) | Error::InvalidConfig { .. } => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn load_config(common: &Common) -> Result<ScenarioConfig, Failure> {
    let mut config = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
            ScenarioConfig::from_json(&text)?
        }
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn parse_schemes(list: &str) -> Result<Vec<SchemeId>, Failure> {
    let schemes = SchemeId::parse_list(list)?;
    if schemes.is_empty() {
        return Err(Failure::Config("--schemes: empty list".into()));
    }
    Ok(schemes)
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("SIMCF_THREADS") else { return Ok(()) };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Failure::Config(format!("SIMCF_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().map_err(runtime)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<fs::File>, Failure> {
    let path = dir.join(name);
    fs::File::create(&path).map(BufWriter::new).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<(), Failure> {
    let mut w = create(dir, name)?;
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(runtime)
}

fn print_summary(table: &MonteCarloTable, label: Option<&SweepPoint>) {
    if let Some(p) = label {
        println!("{} = {}", p.param, p.value);
    }
    println!("{:<12} {:>8} {:>14} {:>12}", "scheme", "trials", "mean bit/s/Hz", "std");
    for s in &table.summaries {
        println!("{:<12} {:>8} {:>14.4} {:>12.4}", s.scheme.token(), s.trials, s.mean, s.std);
    }
}

fn cmd_run(common: &Common) -> Result<(), Failure> {
    let config = load_config(common)?;
    let schemes = parse_schemes(&common.schemes)?;
    if common.trials == 0 {
        return Err(Failure::Config("--trials must be at least 1".into()));
    }
    fs::create_dir_all(&common.out).map_err(runtime)?;
    let table = monte_carlo(&config, &schemes, 0..common.trials)?;

    let mut results = ResultsWriter::new(create(&common.out, "results.csv")?, false, common.wall_time)?;
    results.write_table(&config, &table, None)?;
    results.flush()?;
    if common.trace {
        let mut w = write_traces(create(&common.out, "traces.csv")?, &[(None, &table)])?;
        w.flush().map_err(runtime)?;
    }
    let tokens: Vec<String> = schemes.iter().map(|s| s.token().to_string()).collect();
    write_file(&common.out, "metadata.json", &metadata_json(&config, &tokens, 0..common.trials, None))?;
    print_summary(&table, None);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum SweepParam {
    L,
    U,
    K,
    M,
    N,
    NTotal,
    PMax,
}

impl SweepParam {
    fn parse(name: &str) -> Result<Self, Failure> {
        Ok(match name {
            "L" => Self::L,
            "U" => Self::U,
            "K" => Self::K,
            "M" => Self::M,
            "N" => Self::N,
            "N_total" => Self::NTotal,
            "P_max" => Self::PMax,
            other => return Err(Failure::Config(format!("--sweep: unknown parameter `{other}`"))),
        })
    }
}

/// Atoms per layer when `total` atoms are shared by `aps` SIMs.
fn per_layer_atoms(total: usize, aps: usize) -> usize {
    let n = ((total as f64) / (aps as f64)).round().max(1.0) as usize;
    if n * aps != total {
        log::warn!("N_total = {total} is not divisible by L = {aps}; using N = {n} per layer");
    }
    n
}

fn set_atoms(config: &mut ScenarioConfig, n: usize) {
    let (nx, ny) = grid_shape(n);
    config.nx = nx;
    config.ny = ny;
}

fn apply(base: &ScenarioConfig, param: SweepParam, raw: &str, fixed_total: Option<usize>) -> Result<ScenarioConfig, Failure> {
    let bad = |e: &dyn std::fmt::Display| Failure::Config(format!("--sweep: value `{raw}`: {e}"));
    let count = || -> Result<usize, Failure> {
        let v: usize = raw.parse().map_err(|e| bad(&e))?;
        if v == 0 {
            return Err(bad(&"must be positive"));
        }
        Ok(v)
    };
    let mut c = base.clone();
    match param {
        SweepParam::L => c.num_aps = count()?,
        SweepParam::U => c.antennas_per_ap = count()?,
        SweepParam::K => c.num_users = count()?,
        SweepParam::M => c.num_layers = count()?,
        SweepParam::N => set_atoms(&mut c, count()?),
        SweepParam::NTotal => {
            let n = per_layer_atoms(count()?, c.num_aps);
            set_atoms(&mut c, n);
        }
        SweepParam::PMax => {
            let v: f64 = raw.parse().map_err(|e| bad(&e))?;
            if !(v > 0.0) {
                return Err(bad(&"must be positive"));
            }
            c.p_max_w = v;
        }
    }
    if let Some(total) = fixed_total {
        if param == SweepParam::N || param == SweepParam::NTotal {
            return Err(Failure::Config("--fixed-n-total cannot be combined with sweeping N or N_total".into()));
        }
        let n = per_layer_atoms(total, c.num_aps);
        set_atoms(&mut c, n);
    }
    c.validate()?;
    Ok(c)
}

fn cmd_sweep(common: &Common, spec: &str, fixed_total: Option<usize>) -> Result<(), Failure> {
    let base = load_config(common)?;
    let schemes = parse_schemes(&common.schemes)?;
    if common.trials == 0 {
        return Err(Failure::Config("--trials must be at least 1".into()));
    }
    let (name, values) = spec.split_once('=').ok_or_else(|| Failure::Config("--sweep expects PARAM=v1,v2,...".into()))?;
    let param = SweepParam::parse(name.trim())?;
    let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(Failure::Config("--sweep: no values".into()));
    }
    let configs = values
        .iter()
        .map(|v| apply(&base, param, v, fixed_total).map(|c| (c, SweepPoint { param: name.trim().into(), value: v.to_string() })))
        .collect::<Result<Vec<_>, _>>()?;

    fs::create_dir_all(&common.out).map_err(runtime)?;
    let mut results = ResultsWriter::new(create(&common.out, "sweep.csv")?, true, common.wall_time)?;
    let mut tables = Vec::with_capacity(configs.len());
    for (config, point) in &configs {
        let table = monte_carlo(config, &schemes, 0..common.trials)?;
        results.write_table(config, &table, Some(point))?;
        print_summary(&table, Some(point));
        tables.push(table);
    }
    results.flush()?;
    if common.trace {
        let pairs: Vec<_> = configs.iter().zip(&tables).map(|((_, p), t)| (Some(p.clone()), t)).collect();
        let mut w = write_traces(create(&common.out, "traces.csv")?, &pairs)?;
        w.flush().map_err(runtime)?;
    }

    println!("best {name} per scheme:");
    for (i, scheme) in schemes.iter().enumerate() {
        let best = tables
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.summaries[i].mean.total_cmp(&b.1.summaries[i].mean))
            .map(|(j, _)| j)
            .expect("at least one sweep value");
        println!("  {:<12} {} = {} ({:.4} bit/s/Hz)", scheme.token(), name, values[best], tables[best].summaries[i].mean);
    }

    let tokens: Vec<String> = schemes.iter().map(|s| s.token().to_string()).collect();
    let description = match fixed_total {
        Some(t) => format!("{spec} (fixed N_total = {t})"),
        None => spec.to_string(),
    };
    write_file(&common.out, "metadata.json", &metadata_json(&base, &tokens, 0..common.trials, Some(&description)))?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = configure_threads().and_then(|_| match &cli.command {
        Command::Run(common) => cmd_run(common),
        Command::Sweep { common, sweep, fixed_n_total } => cmd_sweep(common, sweep, *fixed_n_total),
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
