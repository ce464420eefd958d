//! SIM propagation matrices and correlated Rayleigh channels.
//!
//! Inside a SIM every plane (antenna array, then layers 1..M) is parallel and
//! separated by the same gap, so the obliquity factor cos χ is simply
//! `gap / d`. Layers are 0-based here: layer 0 faces the antennas and layer
//! `M - 1` radiates towards the users.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Point3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::pga::PhaseState;
use crate::scenario::{grid_offsets, path_loss, Layout, ScenarioConfig};
use crate::{Error, Result, C64};

/// Eigenvalues below this fraction of the largest are treated as zero.
pub const EIGEN_CLAMP: f64 = 1e-12;

/// Rayleigh-Sommerfeld transmission coefficient between two meta-atoms (or
/// an antenna and a meta-atom) on parallel planes `gap` apart.
pub fn rs_coefficient(distance: f64, gap: f64, element_area: f64, lambda: f64) -> C64 {
    let cos_chi = gap / distance;
    let amplitude = element_area * cos_chi / distance;
    let near_far = C64::new(1.0 / (2.0 * PI * distance), -1.0 / lambda);
    let phase = C64::from_polar(1.0, 2.0 * PI * distance / lambda);
    near_far * phase * amplitude
}

/// Fixed propagation matrices of every SIM.
#[derive(Debug, Clone)]
pub struct PropagationSet {
    /// Per AP, the N x U matrix from the antenna array to layer 0.
    pub input: Vec<DMatrix<C64>>,
    /// Per AP, the N x N matrices from layer `m - 1` to layer `m` for
    /// `m = 1..M`; entry `[m - 1]` feeds layer `m`.
    pub inter_layer: Vec<Vec<DMatrix<C64>>>,
}

impl PropagationSet {
    pub fn num_aps(&self) -> usize {
        self.input.len()
    }

    pub fn atoms(&self) -> usize {
        self.input[0].nrows()
    }

    pub fn antennas(&self) -> usize {
        self.input[0].ncols()
    }

    pub fn layers(&self) -> usize {
        self.inter_layer[0].len() + 1
    }

    /// Matrix feeding layer `m` (0-based, `m >= 1`) of AP `l`.
    pub fn layer_matrix(&self, l: usize, m: usize) -> &DMatrix<C64> {
        &self.inter_layer[l][m - 1]
    }
}

fn propagation_matrix(
    to: &[Point3<f64>],
    from: &[Point3<f64>],
    gap: f64,
    element_area: f64,
    lambda: f64,
) -> Result<DMatrix<C64>> {
    let mut w = DMatrix::zeros(to.len(), from.len());
    for (i, rx) in to.iter().enumerate() {
        for (j, tx) in from.iter().enumerate() {
            let d = nalgebra::distance(rx, tx);
            if !(d > 0.0) {
                return Err(Error::CoincidentElements(format!("receiver {i} and transmitter {j}")));
            }
            w[(i, j)] = rs_coefficient(d, gap, element_area, lambda);
        }
    }
    Ok(w)
}

/// Build the antenna-to-layer and layer-to-layer matrices of every AP.
pub fn build_propagation(layout: &Layout, config: &ScenarioConfig) -> Result<PropagationSet> {
    let lambda = config.wavelength();
    let gap = config.layer_gap();
    let area = config.element_size().powi(2);
    let layers = &layout.meta_atom_offsets;

    let mut inter = Vec::with_capacity(layers.len().saturating_sub(1));
    for m in 1..layers.len() {
        inter.push(propagation_matrix(&layers[m], &layers[m - 1], gap, area, lambda)?);
    }

    // Geometry is identical across APs unless the antenna arrays differ.
    let mut input = Vec::with_capacity(layout.antenna_offsets.len());
    for antennas in &layout.antenna_offsets {
        input.push(propagation_matrix(&layers[0], antennas, gap, area, lambda)?);
    }
    let inter_layer = vec![inter; input.len()];
    Ok(PropagationSet { input, inter_layer })
}

/// Normalized sinc, exactly zero at nonzero integers.
pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else if x.fract() == 0.0 {
        0.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// Spatial correlation of the radiating layer under isotropic scattering.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub matrix: DMatrix<f64>,
}

impl CorrelationMatrix {
    pub fn identity(n: usize) -> Self {
        Self { matrix: DMatrix::identity(n, n) }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// A factor F with F Fᵀ = R, from the eigen-decomposition with small or
    /// negative eigenvalues clamped to zero.
    pub fn factor(&self) -> Result<DMatrix<f64>> {
        if self.matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Factorization("correlation matrix has non-finite entries".into()));
        }
        let eig = self.matrix.clone().symmetric_eigen();
        let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        if !(max > 0.0) {
            return Err(Error::Factorization("correlation matrix has no positive eigenvalue".into()));
        }
        let floor = EIGEN_CLAMP * max;
        let mut f = eig.eigenvectors;
        for (j, &ev) in eig.eigenvalues.iter().enumerate() {
            let s = if ev < floor { 0.0 } else { ev.sqrt() };
            f.column_mut(j).scale_mut(s);
        }
        Ok(f)
    }
}

/// R_{n,n'} = sinc(2 d_{n,n'} / λ) over the meta-atom grid.
pub fn build_correlation(config: &ScenarioConfig) -> CorrelationMatrix {
    // Distances in wavelengths straight from grid indices, so half-wavelength
    // neighbours land exactly on sinc(1).
    let pitch = config.element_spacing_lambda;
    let pts: Vec<(f64, f64)> = grid_offsets(config.nx, config.ny).collect();
    let n = pts.len();
    let matrix = DMatrix::from_fn(n, n, |i, j| {
        let dx = (pts[i].0 - pts[j].0) * pitch;
        let dy = (pts[i].1 - pts[j].1) * pitch;
        sinc(2.0 * dx.hypot(dy))
    });
    CorrelationMatrix { matrix }
}

/// Small-scale channels from the radiating layer of every SIM to every UE.
#[derive(Debug, Clone)]
pub struct ChannelSet {
    /// `h_sim[l][k]`, length N.
    pub h_sim: Vec<Vec<DVector<C64>>>,
    /// Path-loss gain `beta[l][k]`.
    pub beta: Vec<Vec<f64>>,
    pub correlation: CorrelationMatrix,
}

impl ChannelSet {
    pub fn num_aps(&self) -> usize {
        self.h_sim.len()
    }

    pub fn num_users(&self) -> usize {
        self.h_sim.first().map_or(0, Vec::len)
    }
}

/// Draw √β · F z with z ~ CN(0, I).
pub fn correlated_draw<R: Rng + ?Sized>(factor: &DMatrix<f64>, beta: f64, rng: &mut R) -> DVector<C64> {
    let n = factor.nrows();
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let z = DVector::from_fn(factor.ncols(), |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re * scale, im * scale)
    });
    let amp = beta.sqrt();
    DVector::from_fn(n, |i, _| {
        let mut acc = C64::new(0.0, 0.0);
        for (j, zj) in z.iter().enumerate() {
            acc += zj * factor[(i, j)];
        }
        acc * amp
    })
}

/// Sample one realization of every SIM-to-UE channel.
pub fn sample_channels<R: Rng + ?Sized>(layout: &Layout, config: &ScenarioConfig, rng: &mut R) -> Result<ChannelSet> {
    let correlation = build_correlation(config);
    let factor = correlation.factor()?;
    let (aps, users) = (layout.ap_positions.len(), layout.ue_positions.len());
    let mut beta = vec![vec![0.0; users]; aps];
    let mut h_sim = Vec::with_capacity(aps);
    for l in 0..aps {
        let mut row = Vec::with_capacity(users);
        for k in 0..users {
            beta[l][k] = path_loss(layout.ap_ue_distance(l, k), config)?;
            row.push(correlated_draw(&factor, beta[l][k], rng));
        }
        h_sim.push(row);
    }
    Ok(ChannelSet { h_sim, beta, correlation })
}

/// G_l = Φ_M W_M ⋯ Φ_2 W_2 Φ_1, as a dense matrix.
pub fn compute_cascade(phases: &PhaseState, prop: &PropagationSet, l: usize) -> DMatrix<C64> {
    let n = prop.atoms();
    let mut g = DMatrix::from_diagonal(&DVector::from_vec(phases.factors(l, 0)));
    for m in 1..prop.layers() {
        g = prop.layer_matrix(l, m) * g;
        scale_rows(&mut g, &phases.factors(l, m));
    }
    debug_assert_eq!(g.nrows(), n);
    g
}

pub(crate) fn scale_rows(m: &mut DMatrix<C64>, factors: &[C64]) {
    for (i, f) in factors.iter().enumerate() {
        for v in m.row_mut(i).iter_mut() {
            *v *= f;
        }
    }
}

/// h_{l,k} = W_{l,1}ᴴ G_lᴴ h_sim[l][k].
pub fn effective_channel(
    channels: &ChannelSet,
    phases: &PhaseState,
    prop: &PropagationSet,
    l: usize,
    k: usize,
) -> DVector<C64> {
    signal_row(&channels.h_sim[l][k], phases, prop, l).map(|v| v.conj())
}

/// Row vector h_simᴴ G_l W_{l,1} (length U), evaluated right to left as a
/// chain of matrix-vector products.
pub fn signal_row(h_sim: &DVector<C64>, phases: &PhaseState, prop: &PropagationSet, l: usize) -> DVector<C64> {
    let mut row = h_sim.map(|v| v.conj());
    for m in (0..prop.layers()).rev() {
        for (v, f) in row.iter_mut().zip(phases.factors(l, m)) {
            *v *= f;
        }
        row = if m == 0 {
            prop.input[l].tr_mul(&row)
        } else {
            prop.layer_matrix(l, m).tr_mul(&row)
        };
    }
    row
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use crate::scenario::build_scenario;
    use approx::assert_relative_eq;

    fn small_config(m: usize, nx: usize, ny: usize, u: usize) -> ScenarioConfig {
        ScenarioConfig { num_layers: m, nx, ny, antennas_per_ap: u, num_aps: 2, num_users: 2, ..Default::default() }
    }

    fn random_phases(l: usize, m: usize, n: usize, tag: u32) -> PhaseState {
        PhaseState::uniform(l, m, n, &mut stream(1, 0, Purpose::Custom(tag)))
    }

    #[test]
    fn boresight_entry_matches_formula() {
        let cfg = small_config(2, 3, 3, 1);
        let layout = build_scenario(&cfg).unwrap();
        let prop = build_propagation(&layout, &cfg).unwrap();
        let lambda = cfg.wavelength();
        let gap = cfg.layer_gap();
        let d = cfg.element_size();
        // centre atom (index 4) of layer 0 to centre atom of layer 1
        let expected = C64::new(d * d / gap * (1.0 / (2.0 * PI * gap)), -(d * d / gap) / lambda)
            * C64::from_polar(1.0, 2.0 * PI * gap / lambda);
        let got = prop.layer_matrix(0, 1)[(4, 4)];
        assert_relative_eq!(got.re, expected.re, max_relative = 1e-12);
        assert_relative_eq!(got.im, expected.im, max_relative = 1e-12);
    }

    #[test]
    fn mirror_pairs_are_equal() {
        let cfg = small_config(2, 3, 3, 2);
        let layout = build_scenario(&cfg).unwrap();
        let prop = build_propagation(&layout, &cfg).unwrap();
        let w = prop.layer_matrix(0, 1);
        for i in 0..9 {
            for j in 0..9 {
                assert_relative_eq!(w[(i, j)].re, w[(j, i)].re, max_relative = 1e-12);
                assert_relative_eq!(w[(i, j)].im, w[(j, i)].im, max_relative = 1e-12);
            }
        }
        // symmetric antennas see mirror-image columns
        let input = &prop.input[0];
        assert_relative_eq!(input[(0, 0)].re, input[(2, 1)].re, max_relative = 1e-12);
    }

    #[test]
    fn coefficient_linear_in_element_area() {
        let lambda = 0.01;
        let a = rs_coefficient(0.03, 0.02, 1e-5, lambda);
        let b = rs_coefficient(0.03, 0.02, 2e-5, lambda);
        assert_relative_eq!(b.norm(), 2.0 * a.norm(), max_relative = 1e-12);
    }

    #[test]
    fn coincident_elements_error() {
        let p = [Point3::new(0.0, 0.0, 0.0)];
        assert!(matches!(propagation_matrix(&p, &p, 1.0, 1.0, 1.0), Err(Error::CoincidentElements(_))));
    }

    #[test]
    fn sinc_values() {
        assert_eq!(sinc(0.0), 1.0);
        assert_eq!(sinc(1.0), 0.0);
        assert_eq!(sinc(-3.0), 0.0);
        assert_relative_eq!(sinc(2f64.sqrt()), -0.2169, epsilon = 1e-4);
        assert_relative_eq!(sinc(0.5), 2.0 / PI, max_relative = 1e-12);
    }

    #[test]
    fn correlation_structure() {
        let cfg = small_config(1, 3, 3, 1);
        let r = build_correlation(&cfg).matrix;
        for i in 0..9 {
            assert_eq!(r[(i, i)], 1.0);
        }
        assert_eq!(r[(0, 1)], 0.0);
        assert_eq!(r[(0, 3)], 0.0);
        assert_relative_eq!(r[(0, 4)], sinc(2f64.sqrt()), max_relative = 1e-12);
        assert_eq!(r, r.transpose());
    }

    #[test]
    fn factor_reproduces_correlation() {
        let cfg = small_config(1, 4, 4, 1);
        let r = build_correlation(&cfg);
        let f = r.factor().unwrap();
        let rebuilt = &f * f.transpose();
        assert!((rebuilt - &r.matrix).abs().max() < 1e-10);
    }

    #[test]
    fn zero_gain_gives_zero_channel() {
        let f = CorrelationMatrix::identity(4).factor().unwrap();
        let h = correlated_draw(&f, 0.0, &mut stream(3, 0, Purpose::Channel));
        assert!(h.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn identity_correlation_unit_variance() {
        let f = CorrelationMatrix::identity(3).factor().unwrap();
        let mut rng = stream(5, 0, Purpose::Channel);
        let draws = 10_000;
        let mut power = [0.0; 3];
        for _ in 0..draws {
            let h = correlated_draw(&f, 1.0, &mut rng);
            for (p, v) in power.iter_mut().zip(h.iter()) {
                *p += v.norm_sqr();
            }
        }
        for p in power {
            assert!((p / draws as f64 - 1.0).abs() < 0.05, "variance {}", p / draws as f64);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = ScenarioConfig { nx: 3, ny: 3, ..Default::default() };
        let layout = build_scenario(&cfg).unwrap();
        let a = sample_channels(&layout, &cfg, &mut stream(9, 1, Purpose::Channel)).unwrap();
        let b = sample_channels(&layout, &cfg, &mut stream(9, 1, Purpose::Channel)).unwrap();
        assert_eq!(a.h_sim, b.h_sim);
        assert_eq!(a.beta, b.beta);
    }

    #[test]
    fn single_layer_cascade_is_phase_diagonal() {
        let cfg = small_config(1, 2, 2, 1);
        let layout = build_scenario(&cfg).unwrap();
        let prop = build_propagation(&layout, &cfg).unwrap();
        let phases = random_phases(2, 1, 4, 0);
        let g = compute_cascade(&phases, &prop, 1);
        let expected = DMatrix::from_diagonal(&DVector::from_vec(phases.factors(1, 0)));
        assert!((g - expected).camax() < 1e-15);
    }

    #[test]
    fn zero_phases_leave_plain_product() {
        let cfg = small_config(3, 2, 2, 1);
        let layout = build_scenario(&cfg).unwrap();
        let prop = build_propagation(&layout, &cfg).unwrap();
        let g = compute_cascade(&PhaseState::zeros(2, 3, 4), &prop, 0);
        let expected = prop.layer_matrix(0, 2) * prop.layer_matrix(0, 1);
        assert!((g - &expected).camax() <= 1e-12 * expected.camax());
    }

    #[test]
    fn two_layer_cascade_matches_elementwise_product() {
        let cfg = small_config(2, 2, 2, 1);
        let layout = build_scenario(&cfg).unwrap();
        let prop = build_propagation(&layout, &cfg).unwrap();
        let phases = random_phases(2, 2, 4, 1);
        let g = compute_cascade(&phases, &prop, 1);
        let w = prop.layer_matrix(1, 1);
        let (p1, p2) = (phases.factors(1, 0), phases.factors(1, 1));
        for i in 0..4 {
            for j in 0..4 {
                let expected = p2[i] * w[(i, j)] * p1[j];
                assert!((g[(i, j)] - expected).norm() < 1e-12 * expected.norm().max(1e-300));
            }
        }
    }

    #[test]
    fn cascade_entries_trace_a_circle_in_one_phase() {
        // G(φ) = A + B e^{jφ} for a single meta-atom phase.
        let cfg = small_config(3, 2, 2, 1);
        let layout = build_scenario(&cfg).unwrap();
        let prop = build_propagation(&layout, &cfg).unwrap();
        let base = random_phases(2, 3, 4, 2);
        let at = |phi: f64| {
            let mut p = base.clone();
            p.set(0, 1, 2, phi);
            compute_cascade(&p, &prop, 0)
        };
        let (g0, g1, g2) = (at(0.0), at(PI / 2.0), at(1.3));
        for idx in 0..16 {
            let a_plus_b = g0[idx];
            let a_plus_jb = g1[idx];
            let b = (a_plus_b - a_plus_jb) / C64::new(1.0, -1.0);
            let a = a_plus_b - b;
            let predicted = a + b * C64::from_polar(1.0, 1.3);
            assert!((predicted - g2[idx]).norm() <= 1e-10 * g2[idx].norm().max(1e-300));
        }
    }

    #[test]
    fn effective_channel_examples() {
        let cfg = small_config(2, 2, 2, 2);
        let layout = build_scenario(&cfg).unwrap();
        let prop = build_propagation(&layout, &cfg).unwrap();
        let phases = random_phases(2, 2, 4, 3);
        let mut channels = sample_channels(&layout, &cfg, &mut stream(4, 0, Purpose::Channel)).unwrap();
        let h = effective_channel(&channels, &phases, &prop, 1, 0);
        let g = compute_cascade(&phases, &prop, 1);
        let brute = prop.input[1].adjoint() * g.adjoint() * &channels.h_sim[1][0];
        assert!((&h - &brute).norm() <= 1e-12 * brute.norm());

        channels.h_sim[1][0].fill(C64::new(0.0, 0.0));
        assert!(effective_channel(&channels, &phases, &prop, 1, 0).norm() == 0.0);
    }

    #[test]
    fn scalar_chain() {
        let cfg = ScenarioConfig { num_aps: 1, num_users: 1, antennas_per_ap: 1, num_layers: 1, nx: 1, ny: 1, ..Default::default() };
        let layout = build_scenario(&cfg).unwrap();
        let prop = build_propagation(&layout, &cfg).unwrap();
        let mut phases = PhaseState::zeros(1, 1, 1);
        phases.set(0, 0, 0, 0.7);
        let channels = sample_channels(&layout, &cfg, &mut stream(4, 0, Purpose::Channel)).unwrap();
        let h = effective_channel(&channels, &phases, &prop, 0, 0);
        let w = prop.input[0][(0, 0)];
        let expected = w.conj() * C64::from_polar(1.0, -0.7) * channels.h_sim[0][0][0];
        assert!((h[0] - expected).norm() <= 1e-14 * expected.norm());
    }
}
