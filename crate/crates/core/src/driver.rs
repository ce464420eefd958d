//! Benchmark schemes, alternating optimization and Monte Carlo runs.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::assoc::{aga, distance_tensor, nua, AssociationMatrix};
use crate::channel::{build_propagation, sample_channels, ChannelSet, PropagationSet};
use crate::pga::{pga_optimize, MultistartKey, PhaseState};
use crate::popt::power_control;
use crate::rate::{build_stacked, PowerAllocation, RateReport, SystemModel};
use crate::rng::{stream, Purpose};
use crate::scenario::{build_scenario_for_trial, Layout, ScenarioConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AssocKind {
    Aga,
    Nua,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OptimizerKind {
    /// Alternate power control and phase optimization.
    Ao,
    /// Phases only, at equal power.
    SimOpt,
    /// Power only, at random phases.
    PowerOpt,
    /// Random phases, equal power.
    RpEp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SchemeId {
    pub assoc: AssocKind,
    pub optimizer: OptimizerKind,
}

impl SchemeId {
    pub const ALL: [SchemeId; 8] = [
        SchemeId::new(AssocKind::Aga, OptimizerKind::Ao),
        SchemeId::new(AssocKind::Nua, OptimizerKind::Ao),
        SchemeId::new(AssocKind::Aga, OptimizerKind::SimOpt),
        SchemeId::new(AssocKind::Nua, OptimizerKind::SimOpt),
        SchemeId::new(AssocKind::Aga, OptimizerKind::PowerOpt),
        SchemeId::new(AssocKind::Nua, OptimizerKind::PowerOpt),
        SchemeId::new(AssocKind::Aga, OptimizerKind::RpEp),
        SchemeId::new(AssocKind::Nua, OptimizerKind::RpEp),
    ];

    pub const fn new(assoc: AssocKind, optimizer: OptimizerKind) -> Self {
        Self { assoc, optimizer }
    }

    /// Command-line token, e.g. `aga-ao`.
    pub fn token(self) -> &'static str {
        use AssocKind::*;
        use OptimizerKind::*;
        match (self.assoc, self.optimizer) {
            (Aga, Ao) => "aga-ao",
            (Nua, Ao) => "nua-ao",
            (Aga, SimOpt) => "aga-sim",
            (Nua, SimOpt) => "nua-sim",
            (Aga, PowerOpt) => "aga-power",
            (Nua, PowerOpt) => "nua-power",
            (Aga, RpEp) => "aga-rp-ep",
            (Nua, RpEp) => "nua-rp-ep",
        }
    }

    /// Parse a comma-separated token list.
    pub fn parse_list(list: &str) -> Result<Vec<SchemeId>> {
        list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect()
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeId::ALL
            .into_iter()
            .find(|id| id.token() == s)
            .ok_or_else(|| Error::config("schemes", format!("unknown scheme `{s}`")))
    }
}

/// Everything random about one trial, shared by every scheme run on it.
#[derive(Debug, Clone)]
pub struct Trial {
    pub index: u64,
    pub layout: Layout,
    pub prop: PropagationSet,
    pub channels: ChannelSet,
    pub noise: f64,
    /// Common random phase start of every scheme.
    pub initial_phases: PhaseState,
}

impl Trial {
    pub fn prepare(config: &ScenarioConfig, index: u64) -> Result<Self> {
        config.validate()?;
        let layout = build_scenario_for_trial(config, index)?;
        let prop = build_propagation(&layout, config)?;
        let channels = sample_channels(&layout, config, &mut stream(config.seed, index, Purpose::Channel))?;
        let initial_phases = PhaseState::uniform(
            config.num_aps,
            config.num_layers,
            config.atoms_per_layer(),
            &mut stream(config.seed, index, Purpose::PhaseInit),
        );
        Ok(Self { index, layout, prop, channels, noise: config.noise_power_w(), initial_phases })
    }

    pub fn association(&self, kind: AssocKind) -> Result<AssociationMatrix> {
        let d = distance_tensor(&self.layout);
        match kind {
            AssocKind::Aga => aga(&d),
            AssocKind::Nua => nua(&d),
        }
    }
}

/// Iteration counts of one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Iterations {
    pub outer: usize,
    pub pga: usize,
    pub power: usize,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub scheme: SchemeId,
    pub trial: u64,
    pub seed: u64,
    pub rate: RateReport,
    /// Sum rate at the start and after every outer iteration.
    pub ao_trace: Vec<f64>,
    pub iterations: Iterations,
    pub wall_time_s: f64,
    pub phases: PhaseState,
    pub power: PowerAllocation,
}

impl RunReport {
    pub fn sum_rate(&self) -> f64 {
        self.rate.sum_rate
    }

    /// Outer iterations until the trace first comes within `fraction` of
    /// its final value.
    pub fn iterations_to_within(&self, fraction: f64) -> usize {
        iterations_to_within(&self.ao_trace, fraction)
    }
}

pub fn iterations_to_within(trace: &[f64], fraction: f64) -> usize {
    let Some(&last) = trace.last() else { return 0 };
    trace.iter().position(|&r| r >= (1.0 - fraction) * last).unwrap_or(trace.len() - 1)
}

fn relative_gain(new: f64, old: f64) -> f64 {
    if old > 0.0 {
        (new - old) / old
    } else if new > old {
        f64::INFINITY
    } else {
        0.0
    }
}

/// Run one scheme on a prepared trial.
pub fn run_on_trial(trial: &Trial, config: &ScenarioConfig, scheme: SchemeId) -> Result<RunReport> {
    let start = Instant::now();
    let assoc = trial.association(scheme.assoc)?;
    let model = SystemModel::new(&trial.prop, &trial.channels, &assoc, trial.noise);
    let mut phases = trial.initial_phases.clone();
    let mut power = PowerAllocation::equal(config.num_aps, config.antennas_per_ap, config.p_max_w);
    let mut rate = model.rate_report(&phases, &power);
    let mut trace = vec![rate.sum_rate];
    let mut iterations = Iterations::default();
    let key = |call| MultistartKey { seed: config.seed, trial: trial.index, call };

    match scheme.optimizer {
        OptimizerKind::RpEp => {}
        OptimizerKind::SimOpt => {
            let out = pga_optimize(&model, &power, &phases, config, key(0))?;
            iterations = Iterations { outer: 1, pga: out.iterations, power: 0 };
            phases = out.phases;
            rate = out.report;
            trace.push(rate.sum_rate);
        }
        OptimizerKind::PowerOpt => {
            let stacked = build_stacked(&trial.channels, &phases, &trial.prop, &assoc, &power)?;
            let out = power_control(&stacked, config, trial.noise)?;
            iterations = Iterations { outer: 1, pga: 0, power: out.iterations };
            power = out.power;
            rate = model.rate_report(&phases, &power);
            trace.push(rate.sum_rate);
        }
        OptimizerKind::Ao => {
            for outer in 0..config.ao_max {
                let stacked = build_stacked(&trial.channels, &phases, &trial.prop, &assoc, &power)?;
                let p = power_control(&stacked, config, trial.noise)?;
                power = p.power;
                let ph = pga_optimize(&model, &power, &phases, config, key(outer as u32))?;
                phases = ph.phases;
                iterations.outer += 1;
                iterations.power += p.iterations;
                iterations.pga += ph.iterations;
                let previous = rate.sum_rate;
                rate = ph.report;
                trace.push(rate.sum_rate);
                log::debug!("trial {} {} outer {}: {:.6}", trial.index, scheme, outer + 1, rate.sum_rate);
                if relative_gain(rate.sum_rate, previous) < config.ao_rel_tol {
                    break;
                }
            }
        }
    }

    Ok(RunReport {
        scheme,
        trial: trial.index,
        seed: config.seed,
        rate,
        ao_trace: trace,
        iterations,
        wall_time_s: start.elapsed().as_secs_f64(),
        phases,
        power,
    })
}

/// Prepare trial `trial` of `config` and run one scheme on it.
pub fn run_scheme(config: &ScenarioConfig, trial: u64, scheme: SchemeId) -> Result<RunReport> {
    run_on_trial(&Trial::prepare(config, trial)?, config, scheme)
}

/// Mean and spread of one scheme over all trials.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeSummary {
    pub scheme: SchemeId,
    pub trials: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single trial.
    pub std: f64,
}

#[derive(Debug, Clone)]
pub struct MonteCarloTable {
    /// Per-run reports, ordered by trial then by scheme as requested.
    pub runs: Vec<RunReport>,
    /// One entry per requested scheme, in request order.
    pub summaries: Vec<SchemeSummary>,
}

impl MonteCarloTable {
    pub fn runs_of(&self, scheme: SchemeId) -> impl Iterator<Item = &RunReport> {
        self.runs.iter().filter(move |r| r.scheme == scheme)
    }

    pub fn summary(&self, scheme: SchemeId) -> Option<&SchemeSummary> {
        self.summaries.iter().find(|s| s.scheme == scheme)
    }
}

fn summarize(scheme: SchemeId, runs: &[RunReport]) -> SchemeSummary {
    let rates: Vec<f64> = runs.iter().filter(|r| r.scheme == scheme).map(RunReport::sum_rate).collect();
    let n = rates.len();
    let mean = if n == 0 { f64::NAN } else { rates.iter().sum::<f64>() / n as f64 };
    let std = if n < 2 {
        0.0
    } else {
        (rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    SchemeSummary { scheme, trials: n, mean, std }
}

/// Run every scheme on every trial index in `trials`, trials in parallel.
///
/// Results do not depend on the thread count: each trial owns its random
/// streams and reductions run over runs sorted by trial.
pub fn monte_carlo(config: &ScenarioConfig, schemes: &[SchemeId], trials: Range<u64>) -> Result<MonteCarloTable> {
    config.validate()?;
    if trials.is_empty() {
        return Err(Error::config("trials", "need at least one trial"));
    }
    if schemes.is_empty() {
        return Err(Error::config("schemes", "need at least one scheme"));
    }
    let per_trial: Vec<Vec<RunReport>> = trials
        .into_par_iter()
        .map(|t| {
            let trial = Trial::prepare(config, t)?;
            schemes.iter().map(|&s| run_on_trial(&trial, config, s)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let runs: Vec<RunReport> = per_trial.into_iter().flatten().collect();
    let summaries = schemes.iter().map(|&s| summarize(s, &runs)).collect();
    Ok(MonteCarloTable { runs, summaries })
}
