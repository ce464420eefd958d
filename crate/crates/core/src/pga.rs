//! SIM phase optimization by projected gradient ascent.
//!
//! For one AP and layer `m`, write the received amplitude as
//! `s[k][j] = Σ_n x_k[n] e^{jφ_n} y_j[n] + (other terms)`, where `x_k` is the
//! backward row vector seen from the users and `y_j` the forward vector of
//! stream `j` arriving at the layer. Then `∂|s|²/∂φ_n = 2 Im(conj(c_n) s)`
//! with `c_n = e^{jφ_n} x_k[n] y_j[n]`, and the sum-rate gradient follows by
//! the quotient rule.

use std::f64::consts::{LOG2_E, TAU};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::rate::{sinr_from_signals, PowerAllocation, RateReport, SystemModel};
use crate::rng::{stream, Purpose};
use crate::scenario::ScenarioConfig;
use crate::{Error, Result, C64};

/// Steps shorter than this are never tried.
pub const MIN_STEP: f64 = 1e-12;

/// Wrap an angle into [0, 2π).
pub fn wrap(phi: f64) -> f64 {
    let r = phi.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Phase shift of every meta-atom, `phi[l][m][n]`, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    aps: usize,
    layers: usize,
    atoms: usize,
    values: Vec<f64>,
}

impl PhaseState {
    pub fn zeros(aps: usize, layers: usize, atoms: usize) -> Self {
        Self { aps, layers, atoms, values: vec![0.0; aps * layers * atoms] }
    }

    /// Independent uniform draws on [0, 2π), in `(l, m, n)` order.
    pub fn uniform<R: Rng + ?Sized>(aps: usize, layers: usize, atoms: usize, rng: &mut R) -> Self {
        let values = (0..aps * layers * atoms).map(|_| wrap(rng.random::<f64>() * TAU)).collect();
        Self { aps, layers, atoms, values }
    }

    /// Build from flat values, wrapping each one.
    pub fn from_values(aps: usize, layers: usize, atoms: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != aps * layers * atoms {
            return Err(Error::DimensionMismatch(format!(
                "phase vector has {} entries, expected {}",
                values.len(),
                aps * layers * atoms
            )));
        }
        Ok(Self { aps, layers, atoms, values: values.into_iter().map(wrap).collect() })
    }

    pub fn aps(&self) -> usize {
        self.aps
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn atoms(&self) -> usize {
        self.atoms
    }

    /// Flat position of `(l, m, n)`; gradients use the same layout.
    pub fn index(&self, l: usize, m: usize, n: usize) -> usize {
        (l * self.layers + m) * self.atoms + n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, l: usize, m: usize, n: usize) -> f64 {
        self.values[self.index(l, m, n)]
    }

    pub fn set(&mut self, l: usize, m: usize, n: usize, phi: f64) {
        let i = self.index(l, m, n);
        self.values[i] = wrap(phi);
    }

    /// Diagonal of Φ_{l,m}.
    pub fn factors(&self, l: usize, m: usize) -> Vec<C64> {
        let start = self.index(l, m, 0);
        self.values[start..start + self.atoms].iter().map(|&p| C64::from_polar(1.0, p)).collect()
    }

    /// `wrap(φ + eta · g)` applied to every entry at once.
    pub fn stepped(&self, gradient: &[f64], eta: f64) -> Self {
        let values = self.values.iter().zip(gradient).map(|(p, g)| wrap(p + eta * g)).collect();
        Self { values, ..*self }
    }
}

/// Suffix and prefix products around every layer of one SIM:
/// `suffix[m] · Φ_m · prefix[m] = G`.
#[derive(Debug, Clone)]
pub struct PartialCascades {
    /// Φ_{M-1} W_{M-1} ⋯ Φ_{m+1} W_{m+1}; identity for the last layer.
    pub suffix: Vec<DMatrix<C64>>,
    /// W_m Φ_{m-1} ⋯ W_1 Φ_0; identity for the first layer.
    pub prefix: Vec<DMatrix<C64>>,
}

pub fn partial_cascades(phases: &PhaseState, prop: &crate::channel::PropagationSet, l: usize) -> PartialCascades {
    let (n, layers) = (prop.atoms(), prop.layers());
    let diag = |m: usize| DMatrix::from_diagonal(&DVector::from_vec(phases.factors(l, m)));

    let mut prefix = Vec::with_capacity(layers);
    prefix.push(DMatrix::identity(n, n));
    for m in 1..layers {
        let next = prop.layer_matrix(l, m) * diag(m - 1) * &prefix[m - 1];
        prefix.push(next);
    }

    let mut suffix = vec![DMatrix::identity(n, n); layers];
    for m in (0..layers.saturating_sub(1)).rev() {
        suffix[m] = &suffix[m + 1] * diag(m + 1) * prop.layer_matrix(l, m + 1);
    }
    PartialCascades { suffix, prefix }
}

/// Backward row vectors `x[m]` and forward vectors `y[j][m]` of one AP.
fn layer_vectors(
    model: &SystemModel,
    phases: &PhaseState,
    power: &PowerAllocation,
    l: usize,
) -> (Vec<Vec<DVector<C64>>>, Vec<Vec<DVector<C64>>>) {
    let prop = model.prop;
    let layers = prop.layers();
    let users = model.users();

    let backward = (0..users)
        .map(|k| {
            let mut xs = vec![DVector::zeros(0); layers];
            let mut x = model.channels.h_sim[l][k].map(|v| v.conj());
            for m in (0..layers).rev() {
                if m + 1 < layers {
                    let mut t = xs[m + 1].clone();
                    for (v, f) in t.iter_mut().zip(phases.factors(l, m + 1)) {
                        *v *= f;
                    }
                    x = prop.layer_matrix(l, m + 1).tr_mul(&t);
                }
                xs[m] = x.clone();
            }
            xs
        })
        .collect();

    let forward = (0..users)
        .map(|j| {
            let drive = DVector::from_fn(prop.antennas(), |u, _| {
                if model.assoc.served_user(l, u) == Some(j) {
                    C64::new(power.p[l][u].max(0.0).sqrt(), 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            });
            let mut ys = Vec::with_capacity(layers);
            ys.push(&prop.input[l] * drive);
            for m in 1..layers {
                let mut t = ys[m - 1].clone();
                for (v, f) in t.iter_mut().zip(phases.factors(l, m - 1)) {
                    *v *= f;
                }
                ys.push(prop.layer_matrix(l, m) * t);
            }
            ys
        })
        .collect();

    (backward, forward)
}

/// Quotient-rule weights: `∂R/∂|s_kj|²` equals `weights[(k, j)]`.
fn rate_weights(signals: &DMatrix<C64>, noise: f64) -> DMatrix<f64> {
    let users = signals.nrows();
    let gamma = sinr_from_signals(signals, noise);
    let mut w = DMatrix::zeros(users, users);
    for k in 0..users {
        let total: f64 = (0..users).map(|j| signals[(k, j)].norm_sqr()).sum::<f64>() + noise;
        let delta = 1.0 / total;
        for j in 0..users {
            w[(k, j)] = if j == k { LOG2_E * delta } else { -LOG2_E * delta * gamma[k] };
        }
    }
    w
}

/// Gradient of the sum rate with respect to every phase, flat in
/// [`PhaseState::index`] order.
pub fn grad_sum_rate(model: &SystemModel, phases: &PhaseState, power: &PowerAllocation) -> Vec<f64> {
    let signals = model.signals(phases, power);
    let weights = rate_weights(&signals, model.noise);
    let users = model.users();
    let mut grad = vec![0.0; phases.values.len()];

    for l in 0..model.num_aps() {
        let (xs, ys) = layer_vectors(model, phases, power, l);
        for m in 0..phases.layers {
            let factors = phases.factors(l, m);
            for (n, f) in factors.iter().enumerate() {
                let mut g = 0.0;
                for k in 0..users {
                    let xf = xs[k][m][n] * f;
                    for j in 0..users {
                        let c = xf * ys[j][m][n];
                        let chi = 2.0 * (c.conj() * signals[(k, j)]).im;
                        g += weights[(k, j)] * chi;
                    }
                }
                grad[phases.index(l, m, n)] = g;
            }
        }
    }
    grad
}

/// Upper bound Σ_k log2(1 + S_k/σ²), where S_k is the largest desired power
/// any phase and power setting could deliver with interference removed.
pub fn interference_free_bound(model: &SystemModel, p_max: f64) -> f64 {
    let spectral = |m: &DMatrix<C64>| m.clone().singular_values().max();
    let prop = model.prop;
    let gains: Vec<f64> = (0..model.num_aps())
        .map(|l| {
            let mut g = spectral(&prop.input[l]);
            for m in 1..prop.layers() {
                g *= spectral(prop.layer_matrix(l, m));
            }
            g * p_max.sqrt()
        })
        .collect();
    (0..model.users())
        .map(|k| {
            let amp: f64 = (0..model.num_aps()).map(|l| model.channels.h_sim[l][k].norm() * gains[l]).sum();
            (amp * amp / model.noise).ln_1p() / std::f64::consts::LN_2
        })
        .sum()
}

/// Result of [`pga_optimize`].
#[derive(Debug, Clone)]
pub struct PgaOutcome {
    pub phases: PhaseState,
    pub report: RateReport,
    /// Sum rate at the start and after every accepted step of the winning start.
    pub trace: Vec<f64>,
    /// Gradient iterations of the winning start.
    pub iterations: usize,
    /// Which start won; 0 is the supplied initial state.
    pub start: usize,
}

/// Keys of the random extra starts of one optimizer call.
#[derive(Debug, Clone, Copy)]
pub struct MultistartKey {
    pub seed: u64,
    pub trial: u64,
    /// Distinguishes successive calls inside one run.
    pub call: u32,
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

fn ascend(
    model: &SystemModel,
    power: &PowerAllocation,
    start: PhaseState,
    config: &ScenarioConfig,
) -> Result<(PhaseState, f64, Vec<f64>, usize)> {
    let mut phases = start;
    let mut rate = model.sum_rate(&phases, power);
    let mut trace = vec![rate];
    let mut iterations = 0;
    for _ in 0..config.pga_max {
        iterations += 1;
        let grad = grad_sum_rate(model, &phases, power);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient("phase"));
        }
        if grad.iter().all(|&g| g == 0.0) {
            break;
        }
        let mut eta = config.pga_init_step;
        let mut accepted = None;
        while eta >= MIN_STEP {
            let candidate = phases.stepped(&grad, eta);
            let r = model.sum_rate(&candidate, power);
            if r > rate {
                accepted = Some((candidate, r));
                break;
            }
            eta *= config.pga_decay;
        }
        let Some((candidate, r)) = accepted else { break };
        let gain = relative_gain(r, rate);
        phases = candidate;
        rate = r;
        trace.push(rate);
        if gain < config.inner_rel_tol {
            break;
        }
    }
    Ok((phases, rate, trace, iterations))
}

/// Multi-start projected gradient ascent over all phases at fixed power.
///
/// Start 0 is `initial`; the remaining `config.multistart - 1` starts are
/// uniform draws from the stream named by `key`.
pub fn pga_optimize(
    model: &SystemModel,
    power: &PowerAllocation,
    initial: &PhaseState,
    config: &ScenarioConfig,
    key: MultistartKey,
) -> Result<PgaOutcome> {
    let starts = config.multistart.max(1);
    let mut rng = stream(key.seed, key.trial, Purpose::Multistart(key.call));
    let mut best: Option<PgaOutcome> = None;
    for s in 0..starts {
        let init = if s == 0 {
            initial.clone()
        } else {
            PhaseState::uniform(initial.aps, initial.layers, initial.atoms, &mut rng)
        };
        let (phases, rate, trace, iterations) = ascend(model, power, init, config)?;
        if best.as_ref().is_none_or(|b| rate > b.report.sum_rate) {
            let report = model.rate_report(&phases, power);
            debug_assert_eq!(report.sum_rate, rate);
            best = Some(PgaOutcome { phases, report, trace, iterations, start: s });
        }
    }
    Ok(best.expect("at least one start"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assoc::{aga, distance_tensor};
    use crate::channel::{build_propagation, compute_cascade, sample_channels, ChannelSet, PropagationSet};
    use crate::rng::{stream, Purpose};
    use crate::scenario::build_scenario_for_trial;
    use crate::AssociationMatrix;

    struct Inst {
        cfg: ScenarioConfig,
        prop: PropagationSet,
        channels: ChannelSet,
        assoc: AssociationMatrix,
        power: PowerAllocation,
        phases: PhaseState,
    }

    fn inst(cfg: ScenarioConfig, trial: u64) -> Inst {
        let layout = build_scenario_for_trial(&cfg, trial).unwrap();
        let prop = build_propagation(&layout, &cfg).unwrap();
        let channels = sample_channels(&layout, &cfg, &mut stream(cfg.seed, trial, Purpose::Channel)).unwrap();
        let assoc = aga(&distance_tensor(&layout)).unwrap();
        let power = PowerAllocation::equal(cfg.num_aps, cfg.antennas_per_ap, cfg.p_max_w);
        let phases = PhaseState::uniform(
            cfg.num_aps,
            cfg.num_layers,
            cfg.atoms_per_layer(),
            &mut stream(cfg.seed, trial, Purpose::PhaseInit),
        );
        Inst { cfg, prop, channels, assoc, power, phases }
    }

    fn tiny() -> ScenarioConfig {
        ScenarioConfig { num_aps: 2, antennas_per_ap: 2, num_users: 2, num_layers: 2, nx: 2, ny: 2, ..Default::default() }
    }

    impl Inst {
        fn model(&self) -> SystemModel<'_> {
            SystemModel::new(&self.prop, &self.channels, &self.assoc, self.cfg.noise_power_w())
        }
    }

    #[test]
    fn wrap_range() {
        for x in [-1e-18, -TAU, -0.5, 0.0, 1.0, TAU, 3.0 * TAU + 0.25, 1e6] {
            let w = wrap(x);
            assert!((0.0..TAU).contains(&w), "{x} -> {w}");
        }
        assert!((wrap(TAU + 0.25) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn set_wraps() {
        let mut p = PhaseState::zeros(1, 1, 2);
        p.set(0, 0, 1, -0.5);
        assert!((p.get(0, 0, 1) - (TAU - 0.5)).abs() < 1e-15);
        assert!(PhaseState::from_values(1, 1, 2, vec![0.0]).is_err());
    }

    #[test]
    fn single_layer_cascades_are_identity() {
        let cfg = ScenarioConfig { num_layers: 1, ..tiny() };
        let i = inst(cfg, 0);
        let pc = partial_cascades(&i.phases, &i.prop, 0);
        let id = DMatrix::<C64>::identity(4, 4);
        assert_eq!(pc.suffix[0], id);
        assert_eq!(pc.prefix[0], id);
    }

    #[test]
    fn two_layer_cascades_read_off() {
        let i = inst(tiny(), 1);
        let pc = partial_cascades(&i.phases, &i.prop, 1);
        let d = |m| DMatrix::from_diagonal(&DVector::from_vec(i.phases.factors(1, m)));
        let w = i.prop.layer_matrix(1, 1);
        assert!((&pc.suffix[0] - d(1) * w).norm() < 1e-15 * w.norm());
        assert!((&pc.prefix[1] - w * d(0)).norm() < 1e-15 * w.norm());
    }

    #[test]
    fn sandwich_identity_three_layers() {
        let cfg = ScenarioConfig { num_layers: 3, nx: 3, ny: 2, ..tiny() };
        let i = inst(cfg, 2);
        for l in 0..2 {
            let g = compute_cascade(&i.phases, &i.prop, l);
            let pc = partial_cascades(&i.phases, &i.prop, l);
            for m in 0..3 {
                let d = DMatrix::from_diagonal(&DVector::from_vec(i.phases.factors(l, m)));
                let s = &pc.suffix[m] * d * &pc.prefix[m];
                for (a, b) in s.iter().zip(g.iter()) {
                    assert!((a - b).norm() <= 1e-10 * b.norm().max(1e-300));
                }
            }
        }
    }

    fn fd_gradient(model: &SystemModel, phases: &PhaseState, power: &PowerAllocation, h: f64) -> Vec<f64> {
        (0..phases.values.len())
            .map(|i| {
                let mut plus = phases.clone();
                let mut minus = phases.clone();
                plus.values[i] += h;
                minus.values[i] -= h;
                (model.sum_rate(&plus, power) - model.sum_rate(&minus, power)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for trial in 0..3 {
            let i = inst(tiny(), trial);
            let model = i.model();
            let g = grad_sum_rate(&model, &i.phases, &i.power);
            let fd = fd_gradient(&model, &i.phases, &i.power, i.cfg.fd_step);
            let scale = fd.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-5 * scale, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn gradient_matches_cascade_form() {
        // the same derivative written with suffix and prefix products
        let cfg = ScenarioConfig { num_layers: 3, ..tiny() };
        let i = inst(cfg, 4);
        let model = i.model();
        let g = grad_sum_rate(&model, &i.phases, &i.power);
        let s = model.signals(&i.phases, &i.power);
        let w = rate_weights(&s, model.noise);
        for l in 0..2 {
            let pc = partial_cascades(&i.phases, &i.prop, l);
            for m in 0..3 {
                let f = i.phases.factors(l, m);
                for n in 0..4 {
                    let mut expected = 0.0;
                    for k in 0..2 {
                        let b = pc.suffix[m].tr_mul(&i.channels.h_sim[l][k].map(|v| v.conj()));
                        for j in 0..2 {
                            let drive = DVector::from_fn(2, |u, _| {
                                let on = i.assoc.served_user(l, u) == Some(j);
                                C64::new(if on { i.power.p[l][u].sqrt() } else { 0.0 }, 0.0)
                            });
                            let q = &pc.prefix[m] * &i.prop.input[l] * drive;
                            let c = f[n] * b[n] * q[n];
                            expected += w[(k, j)] * 2.0 * (c.conj() * s[(k, j)]).im;
                        }
                    }
                    let got = g[i.phases.index(l, m, n)];
                    assert!((got - expected).abs() <= 1e-10 * expected.abs().max(1e-300));
                }
            }
        }
    }

    #[test]
    fn zero_channels_zero_gradient() {
        let mut i = inst(tiny(), 5);
        for v in i.channels.h_sim.iter_mut().flatten() {
            v.fill(C64::new(0.0, 0.0));
        }
        let g = grad_sum_rate(&i.model(), &i.phases, &i.power);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_is_periodic() {
        let i = inst(tiny(), 6);
        let model = i.model();
        let g = grad_sum_rate(&model, &i.phases, &i.power);
        let mut shifted = i.phases.clone();
        shifted.values[3] += TAU;
        let g2 = grad_sum_rate(&model, &shifted, &i.power);
        for (a, b) in g.iter().zip(&g2) {
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-12));
        }
    }

    #[test]
    fn zero_gradient_returns_initial_phases() {
        let mut i = inst(tiny(), 7);
        for v in i.channels.h_sim.iter_mut().flatten() {
            v.fill(C64::new(0.0, 0.0));
        }
        let cfg = ScenarioConfig { multistart: 1, ..i.cfg.clone() };
        let key = MultistartKey { seed: 1, trial: 0, call: 0 };
        let out = pga_optimize(&i.model(), &i.power, &i.phases, &cfg, key).unwrap();
        assert_eq!(out.phases, i.phases);
        assert_eq!(out.iterations, 1);
        assert_eq!(out.trace.len(), 1);
    }

    #[test]
    fn ascent_trace_and_bound() {
        let i = inst(ScenarioConfig { num_users: 3, ..tiny() }, 8);
        let model = i.model();
        let key = MultistartKey { seed: 1, trial: 8, call: 0 };
        let out = pga_optimize(&model, &i.power, &i.phases, &i.cfg, key).unwrap();
        for w in out.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
        assert!(out.report.sum_rate >= model.sum_rate(&i.phases, &i.power) || out.start != 0);
        assert!(out.report.sum_rate <= interference_free_bound(&model, i.cfg.p_max_w));
        assert!(out.phases.values().iter().all(|p| (0.0..TAU).contains(p)));
    }

    #[test]
    fn more_starts_never_hurt() {
        let i = inst(tiny(), 9);
        let model = i.model();
        let key = MultistartKey { seed: 3, trial: 9, call: 0 };
        let run = |starts| {
            let cfg = ScenarioConfig { multistart: starts, ..i.cfg.clone() };
            pga_optimize(&model, &i.power, &i.phases, &cfg, key).unwrap().report.sum_rate
        };
        let (one, two, three) = (run(1), run(2), run(3));
        assert!(three >= one && three >= two);
    }
}
