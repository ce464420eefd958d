//! SINR and sum-rate evaluation.
//!
//! The received amplitude of stream `j` at UE `k` is
//! `s[k][j] = Σ_l h_sim[l][k]ᴴ G_l W_{l,1} P_l a_{l,j}`. Two independent routes
//! compute it: [`SystemModel`] chains matrix-vector products per AP, and
//! [`StackedSystem`] forms the block-diagonal network matrices used by the
//! power optimizer.

use nalgebra::{DMatrix, DVector};

use crate::assoc::AssociationMatrix;
use crate::channel::{compute_cascade, signal_row, ChannelSet, PropagationSet};
use crate::pga::PhaseState;
use crate::{Error, Result, C64};

/// Per-antenna transmit powers `p[l][u]`, W.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    pub p: Vec<Vec<f64>>,
}

impl PowerAllocation {
    /// `P_max / U` on every antenna.
    pub fn equal(aps: usize, antennas: usize, p_max: f64) -> Self {
        Self { p: vec![vec![p_max / antennas as f64; antennas]; aps] }
    }

    pub fn num_aps(&self) -> usize {
        self.p.len()
    }

    pub fn antennas(&self) -> usize {
        self.p.first().map_or(0, Vec::len)
    }

    /// Amplitudes √p stacked AP by AP.
    pub fn amplitudes(&self) -> DVector<f64> {
        DVector::from_iterator(self.num_aps() * self.antennas(), self.p.iter().flatten().map(|p| p.max(0.0).sqrt()))
    }

    pub fn from_amplitudes(amplitudes: &DVector<f64>, aps: usize, antennas: usize) -> Self {
        let p = (0..aps).map(|l| (0..antennas).map(|u| amplitudes[l * antennas + u].powi(2)).collect()).collect();
        Self { p }
    }

    pub fn ap_total(&self, l: usize) -> f64 {
        self.p[l].iter().sum()
    }

    /// Nonnegative powers with every AP total within `p_max + slack`.
    pub fn is_feasible(&self, p_max: f64, slack: f64) -> bool {
        self.p.iter().all(|ap| ap.iter().all(|&v| v >= 0.0) && ap.iter().sum::<f64>() <= p_max + slack)
    }
}

/// Per-UE SINR and rates.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub gamma: Vec<f64>,
    /// log2(1 + γ_k), bit/s/Hz.
    pub rate: Vec<f64>,
    pub sum_rate: f64,
}

impl RateReport {
    pub fn from_sinr(gamma: Vec<f64>) -> Self {
        let rate: Vec<f64> = gamma.iter().map(|g| g.ln_1p() / std::f64::consts::LN_2).collect();
        let sum_rate = rate.iter().sum();
        Self { gamma, rate, sum_rate }
    }

    pub fn min_rate(&self) -> f64 {
        self.rate.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_rate(&self) -> f64 {
        self.rate.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// γ_k from the K x K matrix of received amplitudes `s[(k, j)]`.
pub fn sinr_from_signals(signals: &DMatrix<C64>, noise: f64) -> Vec<f64> {
    (0..signals.nrows())
        .map(|k| {
            let desired = signals[(k, k)].norm_sqr();
            let interference: f64 = (0..signals.ncols()).filter(|&j| j != k).map(|j| signals[(k, j)].norm_sqr()).sum();
            desired / (interference + noise)
        })
        .collect()
}

/// Everything that stays fixed while powers and phases are optimized.
#[derive(Debug, Clone, Copy)]
pub struct SystemModel<'a> {
    pub prop: &'a PropagationSet,
    pub channels: &'a ChannelSet,
    pub assoc: &'a AssociationMatrix,
    /// Receiver noise power σ², W.
    pub noise: f64,
}

impl<'a> SystemModel<'a> {
    pub fn new(prop: &'a PropagationSet, channels: &'a ChannelSet, assoc: &'a AssociationMatrix, noise: f64) -> Self {
        Self { prop, channels, assoc, noise }
    }

    pub fn num_aps(&self) -> usize {
        self.prop.num_aps()
    }

    pub fn users(&self) -> usize {
        self.channels.num_users()
    }

    /// `rows[l][k] = h_sim[l][k]ᴴ G_l W_{l,1}`.
    pub fn signal_rows(&self, phases: &PhaseState) -> Vec<Vec<DVector<C64>>> {
        (0..self.num_aps())
            .map(|l| (0..self.users()).map(|k| signal_row(&self.channels.h_sim[l][k], phases, self.prop, l)).collect())
            .collect()
    }

    /// Received amplitudes `s[(k, j)]`.
    pub fn signals(&self, phases: &PhaseState, power: &PowerAllocation) -> DMatrix<C64> {
        let rows = self.signal_rows(phases);
        let users = self.users();
        let mut s = DMatrix::zeros(users, users);
        for (l, ap_rows) in rows.iter().enumerate() {
            for u in 0..power.antennas() {
                let Some(j) = self.assoc.served_user(l, u) else { continue };
                let amp = power.p[l][u].max(0.0).sqrt();
                for (k, row) in ap_rows.iter().enumerate() {
                    s[(k, j)] += row[u] * amp;
                }
            }
        }
        s
    }

    pub fn rate_report(&self, phases: &PhaseState, power: &PowerAllocation) -> RateReport {
        RateReport::from_sinr(sinr_from_signals(&self.signals(phases, power), self.noise))
    }

    pub fn sum_rate(&self, phases: &PhaseState, power: &PowerAllocation) -> f64 {
        self.rate_report(phases, power).sum_rate
    }
}

/// γ_k evaluated AP by AP.
pub fn sinr(
    k: usize,
    channels: &ChannelSet,
    phases: &PhaseState,
    prop: &PropagationSet,
    assoc: &AssociationMatrix,
    power: &PowerAllocation,
    noise: f64,
) -> f64 {
    let s = SystemModel::new(prop, channels, assoc, noise).signals(phases, power);
    sinr_from_signals(&s, noise)[k]
}

/// Per-UE SINRs and the sum rate Σ log2(1 + γ_k).
pub fn sum_rate(
    channels: &ChannelSet,
    phases: &PhaseState,
    prop: &PropagationSet,
    assoc: &AssociationMatrix,
    power: &PowerAllocation,
    noise: f64,
) -> RateReport {
    SystemModel::new(prop, channels, assoc, noise).rate_report(phases, power)
}

/// Network-wide stacked form: `s[k][j] = h_kᴴ Q A_j p`.
#[derive(Debug, Clone)]
pub struct StackedSystem {
    pub aps: usize,
    pub antennas: usize,
    /// Stacked channel of each UE, length N·L, AP blocks in ascending order.
    pub h: Vec<DVector<C64>>,
    /// Block diagonal with blocks G_l W_{l,1}, (N·L) x (U·L).
    pub q: DMatrix<C64>,
    /// Diagonal of the 0/1 selector A_k for each UE, length U·L.
    pub selectors: Vec<DVector<f64>>,
    /// Amplitudes √p, length U·L.
    pub amplitudes: DVector<f64>,
    /// Cached (h_kᴴ Q)ᵀ for each UE.
    effective: Vec<DVector<C64>>,
}

impl StackedSystem {
    pub fn users(&self) -> usize {
        self.h.len()
    }

    pub fn dim(&self) -> usize {
        self.aps * self.antennas
    }

    /// Diagonal of the AP selector E_l.
    pub fn ap_selector(&self, l: usize) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| if i / self.antennas == l { 1.0 } else { 0.0 })
    }

    /// Entry `i` of h_kᴴ Q A_j, the coefficient of amplitude `i` in `s[k][j]`.
    pub fn coefficient(&self, k: usize, j: usize, i: usize) -> C64 {
        self.effective[k][i] * self.selectors[j][i]
    }

    /// `s[k][j]` at the given amplitudes.
    pub fn signal_at(&self, k: usize, j: usize, amplitudes: &DVector<f64>) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..self.dim() {
            acc += self.effective[k][i] * (self.selectors[j][i] * amplitudes[i]);
        }
        acc
    }

    pub fn signals_at(&self, amplitudes: &DVector<f64>) -> DMatrix<C64> {
        let users = self.users();
        DMatrix::from_fn(users, users, |k, j| self.signal_at(k, j, amplitudes))
    }

    pub fn signal(&self, k: usize, j: usize) -> C64 {
        self.signal_at(k, j, &self.amplitudes)
    }

    /// h_kᴴ · Q · A_j · p as literal dense products.
    pub fn signal_dense(&self, k: usize, j: usize) -> C64 {
        let a = DMatrix::from_diagonal(&self.selectors[j].map(|v| C64::new(v, 0.0)));
        let p = self.amplitudes.map(|v| C64::new(v, 0.0));
        (self.h[k].adjoint() * &self.q * a * p)[(0, 0)]
    }

    pub fn sinr(&self, noise: f64) -> Vec<f64> {
        sinr_from_signals(&self.signals_at(&self.amplitudes), noise)
    }

    pub fn sum_rate_at(&self, amplitudes: &DVector<f64>, noise: f64) -> f64 {
        RateReport::from_sinr(sinr_from_signals(&self.signals_at(amplitudes), noise)).sum_rate
    }

    pub fn power(&self) -> PowerAllocation {
        PowerAllocation::from_amplitudes(&self.amplitudes, self.aps, self.antennas)
    }

    pub fn with_amplitudes(&self, amplitudes: DVector<f64>) -> Self {
        Self { amplitudes, ..self.clone() }
    }
}

/// Assemble the stacked system for fixed phases.
pub fn build_stacked(
    channels: &ChannelSet,
    phases: &PhaseState,
    prop: &PropagationSet,
    assoc: &AssociationMatrix,
    power: &PowerAllocation,
) -> Result<StackedSystem> {
    let aps = prop.num_aps();
    let (atoms, antennas) = (prop.atoms(), prop.antennas());
    let users = channels.num_users();
    let shapes = [
        ("channels", channels.num_aps(), aps),
        ("association APs", assoc.num_aps(), aps),
        ("association antennas", assoc.antennas(), antennas),
        ("association users", assoc.users(), users),
        ("power APs", power.num_aps(), aps),
        ("power antennas", power.antennas(), antennas),
        ("phase APs", phases.aps(), aps),
        ("phase layers", phases.layers(), prop.layers()),
        ("phase atoms", phases.atoms(), atoms),
    ];
    for (what, got, want) in shapes {
        if got != want {
            return Err(Error::DimensionMismatch(format!("{what}: expected {want}, got {got}")));
        }
    }

    let mut q = DMatrix::zeros(atoms * aps, antennas * aps);
    for l in 0..aps {
        let block = compute_cascade(phases, prop, l) * &prop.input[l];
        q.view_mut((l * atoms, l * antennas), (atoms, antennas)).copy_from(&block);
    }
    let h: Vec<DVector<C64>> = (0..users)
        .map(|k| DVector::from_iterator(atoms * aps, (0..aps).flat_map(|l| channels.h_sim[l][k].iter().copied())))
        .collect();
    let selectors = (0..users)
        .map(|k| {
            DVector::from_fn(aps * antennas, |i, _| if assoc.get(i / antennas, i % antennas, k) { 1.0 } else { 0.0 })
        })
        .collect();
    let effective = h.iter().map(|hk| q.tr_mul(&hk.map(|v| v.conj()))).collect();
    Ok(StackedSystem { aps, antennas, h, q, selectors, amplitudes: power.amplitudes(), effective })
}
