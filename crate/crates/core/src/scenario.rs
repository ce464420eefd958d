//! Scenario configuration, geometry and unit conversions.
//!
//! All powers are watts internally; dBm appears only in the scenario file.
//! The wavelength is always derived from the carrier frequency.

use std::f64::consts::PI;

use nalgebra::Point3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{self, Purpose};
use crate::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Spacing of the AP antenna array, in wavelengths.
pub const ANTENNA_SPACING_LAMBDA: f64 = 0.5;

/// Every physical and algorithmic parameter of a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// Number of APs (L).
    pub num_aps: usize,
    /// Antennas per AP (U).
    pub antennas_per_ap: usize,
    /// Number of single-antenna UEs (K).
    pub num_users: usize,
    /// Metasurface layers per SIM (M).
    pub num_layers: usize,
    /// Meta-atoms per layer along x.
    pub nx: usize,
    /// Meta-atoms per layer along y.
    pub ny: usize,

    pub carrier_freq_hz: f64,
    pub bandwidth_hz: f64,
    pub noise_density_dbm_hz: f64,
    /// Per-AP transmit power budget, W.
    pub p_max_w: f64,

    pub area_side_m: f64,
    pub ap_height_m: f64,
    pub ue_height_m: f64,
    /// Total SIM thickness in wavelengths.
    pub sim_thickness_lambda: f64,
    /// Meta-atom pitch in wavelengths (d_x = d_y).
    pub element_spacing_lambda: f64,

    pub pathloss_exponent: f64,
    pub d0_m: f64,

    pub ao_rel_tol: f64,
    pub inner_rel_tol: f64,
    /// Phase step for finite-difference gradient checks, rad.
    pub fd_step: f64,
    pub ao_max: usize,
    pub pga_max: usize,
    pub power_max: usize,
    pub pga_init_step: f64,
    pub pga_decay: f64,
    /// Number of PGA starts, counting the supplied initial phases.
    pub multistart: usize,

    pub seed: u64,
}

impl Default for ScenarioConfig {
    /// The desk-scale setup: 6 APs with 2 antennas, 4 UEs, 2-layer 5x5 SIMs at 28 GHz.
    fn default() -> Self {
        Self {
            num_aps: 6,
            antennas_per_ap: 2,
            num_users: 4,
            num_layers: 2,
            nx: 5,
            ny: 5,
            carrier_freq_hz: 28e9,
            bandwidth_hz: 10e6,
            noise_density_dbm_hz: -174.0,
            p_max_w: 0.2,
            area_side_m: 200.0,
            ap_height_m: 15.0,
            ue_height_m: 1.65,
            sim_thickness_lambda: 5.0,
            element_spacing_lambda: 0.5,
            pathloss_exponent: 3.5,
            d0_m: 1.0,
            ao_rel_tol: 1e-3,
            inner_rel_tol: 1e-4,
            fd_step: 1e-6,
            ao_max: 20,
            pga_max: 1000,
            power_max: 100,
            pga_init_step: 0.1,
            pga_decay: 0.5,
            multistart: 2,
            seed: 42,
        }
    }
}

impl ScenarioConfig {
    /// Meta-atoms per layer (N).
    pub fn atoms_per_layer(&self) -> usize {
        self.nx * self.ny
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq_hz
    }

    /// Meta-atom edge length d_x = d_y, m.
    pub fn element_size(&self) -> f64 {
        self.element_spacing_lambda * self.wavelength()
    }

    /// Gap between adjacent planes (antenna array, layer 1, ..., layer M), m.
    pub fn layer_gap(&self) -> f64 {
        self.sim_thickness_lambda * self.wavelength() / self.num_layers as f64
    }

    pub fn noise_power_w(&self) -> f64 {
        noise_power(self.noise_density_dbm_hz, self.bandwidth_hz)
    }

    /// Free-space gain at the reference distance, (λ / 4π d0)².
    pub fn reference_gain(&self) -> f64 {
        (self.wavelength() / (4.0 * PI * self.d0_m)).powi(2)
    }

    pub fn total_antennas(&self) -> usize {
        self.num_aps * self.antennas_per_ap
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("counts.L", self.num_aps),
            ("counts.U", self.antennas_per_ap),
            ("counts.K", self.num_users),
            ("counts.M", self.num_layers),
            ("counts.Nx", self.nx),
            ("counts.Ny", self.ny),
        ];
        for (field, value) in counts {
            if value == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        let positive = [
            ("radio.carrier_freq_hz", self.carrier_freq_hz),
            ("radio.bandwidth_hz", self.bandwidth_hz),
            ("radio.p_max_w", self.p_max_w),
            ("geometry.sim_thickness_lambda", self.sim_thickness_lambda),
            ("geometry.element_spacing_lambda", self.element_spacing_lambda),
            ("pathloss.d0_m", self.d0_m),
            ("opt.ao_rel_tol", self.ao_rel_tol),
            ("opt.inner_rel_tol", self.inner_rel_tol),
            ("opt.fd_step", self.fd_step),
            ("opt.pga_init_step", self.pga_init_step),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(field, format!("must be finite and > 0, got {value}")));
            }
        }
        let finite = [
            ("radio.noise_density_dbm_hz", self.noise_density_dbm_hz),
            ("geometry.ap_height_m", self.ap_height_m),
            ("geometry.ue_height_m", self.ue_height_m),
        ];
        for (field, value) in finite {
            if !value.is_finite() {
                return Err(Error::config(field, format!("must be finite, got {value}")));
            }
        }
        if !(self.area_side_m.is_finite() && self.area_side_m >= 0.0) {
            return Err(Error::config("geometry.area_side_m", format!("must be >= 0, got {}", self.area_side_m)));
        }
        if !(self.pathloss_exponent.is_finite() && self.pathloss_exponent > 2.0) {
            return Err(Error::config("pathloss.exponent", format!("must be > 2, got {}", self.pathloss_exponent)));
        }
        if !(self.pga_decay > 0.0 && self.pga_decay < 1.0) {
            return Err(Error::config("opt.pga_decay", format!("must lie in (0, 1), got {}", self.pga_decay)));
        }
        if self.multistart == 0 {
            return Err(Error::config("opt.multistart", "must be at least 1"));
        }
        Ok(())
    }

    /// Parse the structured scenario file and validate it.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            if path == "." || path.is_empty() {
                Error::ConfigParse(e.inner().to_string())
            } else {
                Error::ConfigParse(format!("`{path}`: {}", e.inner()))
            }
        })?;
        let config = Self::from(file);
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ScenarioFile::from(self)).expect("scenario file serializes")
    }
}

/// On-disk layout of a scenario file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub counts: CountsSection,
    pub radio: RadioSection,
    pub geometry: GeometrySection,
    pub pathloss: PathlossSection,
    pub opt: OptSection,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
pub struct CountsSection {
    pub L: usize,
    pub U: usize,
    pub K: usize,
    pub M: usize,
    pub Nx: usize,
    pub Ny: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioSection {
    pub carrier_freq_hz: f64,
    pub bandwidth_hz: f64,
    pub noise_density_dbm_hz: f64,
    pub p_max_w: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub area_side_m: f64,
    pub ap_height_m: f64,
    pub ue_height_m: f64,
    pub sim_thickness_lambda: f64,
    pub element_spacing_lambda: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathlossSection {
    pub exponent: f64,
    pub d0_m: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptSection {
    pub ao_rel_tol: f64,
    pub inner_rel_tol: f64,
    pub ao_max: usize,
    pub pga_max: usize,
    pub power_max: usize,
    pub pga_init_step: f64,
    pub pga_decay: f64,
    pub multistart: usize,
    #[serde(default = "default_fd_step", skip_serializing_if = "is_default_fd_step")]
    pub fd_step: f64,
}

fn default_fd_step() -> f64 {
    1e-6
}

fn is_default_fd_step(v: &f64) -> bool {
    *v == default_fd_step()
}

impl From<ScenarioFile> for ScenarioConfig {
    fn from(f: ScenarioFile) -> Self {
        Self {
            num_aps: f.counts.L,
            antennas_per_ap: f.counts.U,
            num_users: f.counts.K,
            num_layers: f.counts.M,
            nx: f.counts.Nx,
            ny: f.counts.Ny,
            carrier_freq_hz: f.radio.carrier_freq_hz,
            bandwidth_hz: f.radio.bandwidth_hz,
            noise_density_dbm_hz: f.radio.noise_density_dbm_hz,
            p_max_w: f.radio.p_max_w,
            area_side_m: f.geometry.area_side_m,
            ap_height_m: f.geometry.ap_height_m,
            ue_height_m: f.geometry.ue_height_m,
            sim_thickness_lambda: f.geometry.sim_thickness_lambda,
            element_spacing_lambda: f.geometry.element_spacing_lambda,
            pathloss_exponent: f.pathloss.exponent,
            d0_m: f.pathloss.d0_m,
            ao_rel_tol: f.opt.ao_rel_tol,
            inner_rel_tol: f.opt.inner_rel_tol,
            fd_step: f.opt.fd_step,
            ao_max: f.opt.ao_max,
            pga_max: f.opt.pga_max,
            power_max: f.opt.power_max,
            pga_init_step: f.opt.pga_init_step,
            pga_decay: f.opt.pga_decay,
            multistart: f.opt.multistart,
            seed: f.seed,
        }
    }
}

impl From<&ScenarioConfig> for ScenarioFile {
    fn from(c: &ScenarioConfig) -> Self {
        Self {
            counts: CountsSection {
                L: c.num_aps,
                U: c.antennas_per_ap,
                K: c.num_users,
                M: c.num_layers,
                Nx: c.nx,
                Ny: c.ny,
            },
            radio: RadioSection {
                carrier_freq_hz: c.carrier_freq_hz,
                bandwidth_hz: c.bandwidth_hz,
                noise_density_dbm_hz: c.noise_density_dbm_hz,
                p_max_w: c.p_max_w,
            },
            geometry: GeometrySection {
                area_side_m: c.area_side_m,
                ap_height_m: c.ap_height_m,
                ue_height_m: c.ue_height_m,
                sim_thickness_lambda: c.sim_thickness_lambda,
                element_spacing_lambda: c.element_spacing_lambda,
            },
            pathloss: PathlossSection { exponent: c.pathloss_exponent, d0_m: c.d0_m },
            opt: OptSection {
                ao_rel_tol: c.ao_rel_tol,
                inner_rel_tol: c.inner_rel_tol,
                ao_max: c.ao_max,
                pga_max: c.pga_max,
                power_max: c.power_max,
                pga_init_step: c.pga_init_step,
                pga_decay: c.pga_decay,
                multistart: c.multistart,
                fd_step: c.fd_step,
            },
            seed: c.seed,
        }
    }
}

/// Node positions for one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub ap_positions: Vec<Point3<f64>>,
    pub ue_positions: Vec<Point3<f64>>,
    /// Per AP, antenna positions relative to the AP reference point.
    pub antenna_offsets: Vec<Vec<Point3<f64>>>,
    /// Per layer (index 0 is the layer facing the antennas), meta-atom
    /// positions relative to the AP reference point. Index `iy * nx + ix`.
    pub meta_atom_offsets: Vec<Vec<Point3<f64>>>,
}

impl Layout {
    /// Draw AP and UE positions uniformly over the square area.
    pub fn generate<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let side = config.area_side_m;
        let mut draw = |z: f64| Point3::new(rng.random::<f64>() * side, rng.random::<f64>() * side, z);
        let ap_positions: Vec<_> = (0..config.num_aps).map(|_| draw(config.ap_height_m)).collect();
        let ue_positions: Vec<_> = (0..config.num_users).map(|_| draw(config.ue_height_m)).collect();

        let lambda = config.wavelength();
        let u_count = config.antennas_per_ap;
        let array: Vec<_> = (0..u_count)
            .map(|u| {
                let x = (u as f64 - (u_count as f64 - 1.0) / 2.0) * ANTENNA_SPACING_LAMBDA * lambda;
                Point3::new(x, 0.0, 0.0)
            })
            .collect();

        let pitch = config.element_size();
        let gap = config.layer_gap();
        let meta_atom_offsets = (1..=config.num_layers)
            .map(|m| {
                let z = m as f64 * gap;
                grid_offsets(config.nx, config.ny)
                    .map(|(gx, gy)| Point3::new(gx * pitch, gy * pitch, z))
                    .collect()
            })
            .collect();

        Ok(Self {
            ap_positions,
            ue_positions,
            antenna_offsets: vec![array; config.num_aps],
            meta_atom_offsets,
        })
    }

    /// 3-D distance from AP `l`'s reference point to UE `k`.
    pub fn ap_ue_distance(&self, l: usize, k: usize) -> f64 {
        nalgebra::distance(&self.ap_positions[l], &self.ue_positions[k])
    }

    /// Absolute position of antenna `u` of AP `l`.
    pub fn antenna_position(&self, l: usize, u: usize) -> Point3<f64> {
        self.ap_positions[l] + self.antenna_offsets[l][u].coords
    }
}

/// Centered grid coordinates in units of the pitch, row-major over x.
pub(crate) fn grid_offsets(nx: usize, ny: usize) -> impl Iterator<Item = (f64, f64)> {
    let cx = (nx as f64 - 1.0) / 2.0;
    let cy = (ny as f64 - 1.0) / 2.0;
    (0..ny).flat_map(move |iy| (0..nx).map(move |ix| (ix as f64 - cx, iy as f64 - cy)))
}

/// Layout for trial 0 of `config.seed`.
pub fn build_scenario(config: &ScenarioConfig) -> Result<Layout> {
    build_scenario_for_trial(config, 0)
}

pub fn build_scenario_for_trial(config: &ScenarioConfig, trial: u64) -> Result<Layout> {
    let mut rng = rng::stream(config.seed, trial, Purpose::Layout);
    Layout::generate(config, &mut rng)
}

/// Noise power in watts for a density in dBm/Hz over `bandwidth_hz`.
pub fn noise_power(noise_density_dbm_hz: f64, bandwidth_hz: f64) -> f64 {
    10f64.powf((noise_density_dbm_hz + 10.0 * bandwidth_hz.log10() - 30.0) / 10.0)
}

/// Large-scale gain β = C0 (d/d0)^(-ϖ).
pub fn path_loss(distance_m: f64, config: &ScenarioConfig) -> Result<f64> {
    if !(distance_m > config.d0_m) {
        return Err(Error::DistanceBelowReference { distance: distance_m, d0: config.d0_m });
    }
    Ok(config.reference_gain() * (distance_m / config.d0_m).powf(-config.pathloss_exponent))
}

/// Most-square factor pair `(nx, ny)` with `nx * ny == n` and `nx <= ny`.
/// Prime `n > 3` degenerates to a `1 x n` line.
pub fn grid_shape(n: usize) -> (usize, usize) {
    assert!(n > 0, "grid needs at least one element");
    let mut nx = (n as f64).sqrt().floor() as usize;
    while nx > 1 && n % nx != 0 {
        nx -= 1;
    }
    let nx = nx.max(1);
    let ny = n / nx;
    if nx == 1 && n > 3 {
        log::warn!("{n} meta-atoms per layer is prime; using a 1x{n} line");
    } else if nx != ny {
        log::warn!("{n} meta-atoms per layer is not square; using a {nx}x{ny} grid");
    }
    (nx, ny)
}
