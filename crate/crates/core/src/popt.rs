//! Power control by the quadratic transform.
//!
//! For fixed auxiliaries `t_k` the objective
//! `Σ_k log2(1 + 2 t_k |s_kk| − t_k² (I_k + σ²))` lower-bounds the sum rate
//! and touches it at `t_k = |s_kk| / (I_k + σ²)`. Alternating the closed-form
//! `t` update with an ascent step on the amplitudes therefore never lowers
//! the sum rate.

use std::f64::consts::LN_2;

use nalgebra::DVector;

use crate::rate::{PowerAllocation, RateReport, StackedSystem};
use crate::scenario::ScenarioConfig;
use crate::{Error, Result};

/// Smallest trial step, relative to √P_max.
const MIN_STEP: f64 = 1e-12;

/// Quadratic-transform state at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct FpState {
    pub t: Vec<f64>,
    /// Surrogate SINR 2 t_k |s_kk| − t_k² (I_k + σ²).
    pub gamma_bar: Vec<f64>,
    pub amplitudes: DVector<f64>,
    pub surrogate_value: f64,
}

impl FpState {
    pub fn at(stacked: &StackedSystem, amplitudes: DVector<f64>, t: Vec<f64>, noise: f64) -> Self {
        let gamma_bar = surrogate_sinr(stacked, &amplitudes, &t, noise);
        let surrogate_value = gamma_bar.iter().map(|g| g.ln_1p() / LN_2).sum();
        Self { t, gamma_bar, amplitudes, surrogate_value }
    }
}

/// `(|s_kk|, I_k + σ²)` for every UE.
fn desired_and_floor(stacked: &StackedSystem, amplitudes: &DVector<f64>, noise: f64) -> Vec<(f64, f64)> {
    let s = stacked.signals_at(amplitudes);
    (0..s.nrows())
        .map(|k| {
            let interference: f64 = (0..s.ncols()).filter(|&j| j != k).map(|j| s[(k, j)].norm_sqr()).sum();
            (s[(k, k)].norm(), interference + noise)
        })
        .collect()
}

/// Closed-form maximizer of the surrogate in `t`.
pub fn optimal_t(stacked: &StackedSystem, amplitudes: &DVector<f64>, noise: f64) -> Vec<f64> {
    desired_and_floor(stacked, amplitudes, noise).into_iter().map(|(a, b)| a / b).collect()
}

pub fn surrogate_sinr(stacked: &StackedSystem, amplitudes: &DVector<f64>, t: &[f64], noise: f64) -> Vec<f64> {
    desired_and_floor(stacked, amplitudes, noise)
        .into_iter()
        .zip(t)
        .map(|((a, b), &t)| 2.0 * t * a - t * t * b)
        .collect()
}

/// Surrogate sum rate; NaN when some log argument is not positive.
pub fn surrogate(stacked: &StackedSystem, amplitudes: &DVector<f64>, t: &[f64], noise: f64) -> f64 {
    surrogate_sinr(stacked, amplitudes, t, noise)
        .into_iter()
        .map(|g| if g > -1.0 { g.ln_1p() / LN_2 } else { f64::NAN })
        .sum()
}

fn surrogate_gradient(stacked: &StackedSystem, amplitudes: &DVector<f64>, t: &[f64], noise: f64) -> DVector<f64> {
    let s = stacked.signals_at(amplitudes);
    let users = s.nrows();
    let mut g = DVector::zeros(stacked.dim());
    for k in 0..users {
        let desired = s[(k, k)].norm();
        let interference: f64 = (0..users).filter(|&j| j != k).map(|j| s[(k, j)].norm_sqr()).sum();
        let arg = 1.0 + 2.0 * t[k] * desired - t[k] * t[k] * (interference + noise);
        let outer = 1.0 / (LN_2 * arg);
        for i in 0..stacked.dim() {
            let mut d = 0.0;
            if desired > 0.0 {
                d += 2.0 * t[k] * (s[(k, k)].conj() * stacked.coefficient(k, k, i)).re / desired;
            }
            for j in (0..users).filter(|&j| j != k) {
                d -= t[k] * t[k] * 2.0 * (s[(k, j)].conj() * stacked.coefficient(k, j, i)).re;
            }
            g[i] += outer * d;
        }
    }
    g
}

/// Euclidean projection onto `{x ≥ 0, ‖E_l x‖² ≤ P_max for every AP}`.
pub fn project(amplitudes: &mut DVector<f64>, antennas: usize, p_max: f64) {
    for v in amplitudes.iter_mut() {
        *v = v.max(0.0);
    }
    for block in amplitudes.as_mut_slice().chunks_mut(antennas) {
        let energy: f64 = block.iter().map(|v| v * v).sum();
        if energy > p_max {
            let scale = (p_max / energy).sqrt();
            for v in block.iter_mut() {
                *v *= scale;
            }
        }
    }
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

/// Maximize the surrogate over feasible amplitudes for fixed `t`, starting
/// from `stacked.amplitudes`.
///
/// Projected gradient ascent. The first trial step has length √P_max along
/// the gradient direction; it halves on rejection and doubles after each
/// accepted step.
pub fn update_power(t: &[f64], stacked: &StackedSystem, config: &ScenarioConfig, noise: f64) -> Result<DVector<f64>> {
    let radius = config.p_max_w.sqrt();
    let mut x = stacked.amplitudes.clone();
    let mut value = surrogate(stacked, &x, t, noise);
    if !value.is_finite() {
        return Err(Error::NonFiniteGradient("power surrogate at start"));
    }
    let mut scale = 1.0;
    for _ in 0..config.power_max {
        let g = surrogate_gradient(stacked, &x, t, noise);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient("power"));
        }
        let norm = g.norm();
        if norm == 0.0 {
            break;
        }
        let mut accepted = None;
        while scale * radius >= MIN_STEP * radius.max(1.0) {
            let mut candidate = &x + &g * (scale * radius / norm);
            project(&mut candidate, stacked.antennas, config.p_max_w);
            let v = surrogate(stacked, &candidate, t, noise);
            if v.is_finite() && v > value {
                accepted = Some((candidate, v));
                break;
            }
            scale *= 0.5;
        }
        let Some((candidate, v)) = accepted else { break };
        let gain = relative_gain(v, value);
        x = candidate;
        value = v;
        scale = (scale * 2.0).min(1.0);
        if gain < config.inner_rel_tol {
            break;
        }
    }
    Ok(x)
}

/// Result of [`power_control`].
#[derive(Debug, Clone)]
pub struct PowerOutcome {
    pub power: PowerAllocation,
    pub report: RateReport,
    /// Sum rate at the start and after every outer iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

/// Alternate [`optimal_t`] and [`update_power`] from `stacked.amplitudes`
/// until the relative sum-rate gain drops below `inner_rel_tol`.
pub fn power_control(stacked: &StackedSystem, config: &ScenarioConfig, noise: f64) -> Result<PowerOutcome> {
    let mut x = stacked.amplitudes.clone();
    project(&mut x, stacked.antennas, config.p_max_w);
    let mut rate = stacked.sum_rate_at(&x, noise);
    let mut trace = vec![rate];
    let mut iterations = 0;
    let mut current = stacked.with_amplitudes(x.clone());
    for _ in 0..config.power_max {
        iterations += 1;
        let t = optimal_t(&current, &x, noise);
        let next = update_power(&t, &current, config, noise)?;
        let r = stacked.sum_rate_at(&next, noise);
        if r <= rate {
            break;
        }
        let gain = relative_gain(r, rate);
        x = next;
        rate = r;
        trace.push(rate);
        current = stacked.with_amplitudes(x.clone());
        if gain < config.inner_rel_tol {
            break;
        }
    }
    let power = PowerAllocation::from_amplitudes(&x, stacked.aps, stacked.antennas);
    let report = RateReport::from_sinr(current.sinr(noise));
    Ok(PowerOutcome { power, report, trace, iterations })
}

/// One quadratic-transform iteration: the optimal `t` at the current point
/// followed by a surrogate ascent.
pub fn fp_step(stacked: &StackedSystem, config: &ScenarioConfig, noise: f64) -> Result<FpState> {
    let t = optimal_t(stacked, &stacked.amplitudes, noise);
    let x = update_power(&t, stacked, config, noise)?;
    Ok(FpState::at(stacked, x, t, noise))
}
