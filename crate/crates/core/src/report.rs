//! CSV tables and the JSON metadata sidecar.
//!
//! Result rows use the columns
//! `scheme,trial,L,U,K,M,N,sum_rate_bpshz,rate_ue_min,rate_ue_max,outer_iters,wall_time_s,seed`
//! followed by `sum_rate_mean,sum_rate_std`, which only aggregate rows
//! (`trial = -1`) fill. Sweep tables append `sweep_param,sweep_value`.
//! Wall time is left blank unless requested so that repeated runs produce
//! identical files.

use std::io::Write;

use serde_json::json;

use crate::driver::{MonteCarloTable, RunReport};
use crate::scenario::ScenarioConfig;
use crate::{Error, Result};

pub const RESULT_COLUMNS: [&str; 15] = [
    "scheme",
    "trial",
    "L",
    "U",
    "K",
    "M",
    "N",
    "sum_rate_bpshz",
    "rate_ue_min",
    "rate_ue_max",
    "outer_iters",
    "wall_time_s",
    "seed",
    "sum_rate_mean",
    "sum_rate_std",
];

pub const SWEEP_COLUMNS: [&str; 2] = ["sweep_param", "sweep_value"];

pub const TRACE_COLUMNS: [&str; 5] = ["scheme", "trial", "outer_iter", "sum_rate_bpshz", "sweep_value"];

fn csv_err(e: csv::Error) -> Error {
    Error::Format { what: "csv", reason: e.to_string() }
}

/// Shortest representation that parses back to the same float.
fn num(v: f64) -> String {
    format!("{v}")
}

/// One swept parameter value attached to every row of a table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub param: String,
    pub value: String,
}

/// Streams result tables into one CSV file.
pub struct ResultsWriter<W: Write> {
    inner: csv::Writer<W>,
    sweep: bool,
    wall_time: bool,
}

impl<W: Write> ResultsWriter<W> {
    pub fn new(writer: W, sweep: bool, wall_time: bool) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = RESULT_COLUMNS.to_vec();
        if sweep {
            header.extend(SWEEP_COLUMNS);
        }
        inner.write_record(&header).map_err(csv_err)?;
        Ok(Self { inner, sweep, wall_time })
    }

    fn shape(config: &ScenarioConfig) -> [String; 5] {
        [
            config.num_aps.to_string(),
            config.antennas_per_ap.to_string(),
            config.num_users.to_string(),
            config.num_layers.to_string(),
            config.atoms_per_layer().to_string(),
        ]
    }

    fn finish_row(&mut self, mut row: Vec<String>, point: Option<&SweepPoint>) -> Result<()> {
        if self.sweep {
            let p = point.ok_or_else(|| Error::config("sweep", "sweep table row without a sweep point"))?;
            row.push(p.param.clone());
            row.push(p.value.clone());
        }
        self.inner.write_record(&row).map_err(csv_err)
    }

    fn run_row(&self, config: &ScenarioConfig, run: &RunReport) -> Vec<String> {
        let mut row = vec![run.scheme.token().to_string(), run.trial.to_string()];
        row.extend(Self::shape(config));
        row.extend([
            num(run.rate.sum_rate),
            num(run.rate.min_rate()),
            num(run.rate.max_rate()),
            run.iterations.outer.to_string(),
            if self.wall_time { format!("{:.6}", run.wall_time_s) } else { String::new() },
            run.seed.to_string(),
            String::new(),
            String::new(),
        ]);
        row
    }

    /// Per-trial rows followed by one aggregate row per scheme.
    pub fn write_table(&mut self, config: &ScenarioConfig, table: &MonteCarloTable, point: Option<&SweepPoint>) -> Result<()> {
        for run in &table.runs {
            let row = self.run_row(config, run);
            self.finish_row(row, point)?;
        }
        for s in &table.summaries {
            let runs: Vec<&RunReport> = table.runs_of(s.scheme).collect();
            let min = runs.iter().map(|r| r.rate.min_rate()).fold(f64::INFINITY, f64::min);
            let max = runs.iter().map(|r| r.rate.max_rate()).fold(f64::NEG_INFINITY, f64::max);
            let outer: usize = runs.iter().map(|r| r.iterations.outer).sum();
            let wall: f64 = runs.iter().map(|r| r.wall_time_s).sum();
            let mut row = vec![s.scheme.token().to_string(), "-1".to_string()];
            row.extend(Self::shape(config));
            row.extend([
                num(s.mean),
                num(min),
                num(max),
                outer.to_string(),
                if self.wall_time { format!("{wall:.6}") } else { String::new() },
                config.seed.to_string(),
                num(s.mean),
                num(s.std),
            ]);
            self.finish_row(row, point)?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush().map_err(Error::Io)
    }

    pub fn into_inner(self) -> Result<W> {
        self.inner.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

/// One row per outer-iteration trace entry of every run.
pub fn write_traces<W: Write>(writer: W, tables: &[(Option<SweepPoint>, &MonteCarloTable)]) -> Result<W> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRACE_COLUMNS).map_err(csv_err)?;
    for (point, table) in tables {
        let value = point.as_ref().map_or(String::new(), |p| p.value.clone());
        for run in &table.runs {
            for (i, r) in run.ao_trace.iter().enumerate() {
                w.write_record([run.scheme.token().to_string(), run.trial.to_string(), i.to_string(), num(*r), value.clone()])
                    .map_err(csv_err)?;
            }
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Reproducibility sidecar: the fully resolved configuration and run setup.
pub fn metadata_json(config: &ScenarioConfig, schemes: &[String], trials: std::ops::Range<u64>, sweep: Option<&str>) -> String {
    let config_value: serde_json::Value = serde_json::from_str(&config.to_json()).expect("config json");
    let meta = json!({
        "tool": "simcf",
        "version": env!("CARGO_PKG_VERSION"),
        "config": config_value,
        "derived": {
            "wavelength_m": config.wavelength(),
            "noise_power_w": config.noise_power_w(),
            "atoms_per_layer": config.atoms_per_layer(),
        },
        "schemes": schemes,
        "trials": { "start": trials.start, "end": trials.end },
        "sweep": sweep,
    });
    serde_json::to_string_pretty(&meta).expect("metadata serializes")
}
