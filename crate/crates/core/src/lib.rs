//! Downlink simulator for cell-free massive MIMO networks whose access points
//! precode in the wave domain through stacked intelligent metasurfaces.
//!
//! The pipeline for one Monte-Carlo trial is:
//!
//! 1. [`scenario`] draws AP/UE positions and fixes the SIM geometry.
//! 2. [`channel`] builds the Rayleigh-Sommerfeld inter-layer matrices and
//!    samples spatially correlated Rayleigh channels.
//! 3. [`assoc`] binds every AP antenna to exactly one UE (greedy or nearest).
//! 4. [`popt`] and [`pga`] alternately improve per-antenna powers and
//!    meta-atom phases, scored by [`rate`].
//! 5. [`driver`] runs the benchmark schemes and aggregates trials; [`report`]
//!    and [`io`] serialize the results.

pub mod assoc;
pub mod channel;
pub mod driver;
mod error;
pub mod io;
pub mod pga;
pub mod popt;
pub mod rate;
pub mod report;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};

pub use assoc::{aga, association_cost, brute_force_assoc, distance_tensor, nua, AssociationMatrix, DistanceTensor};
pub use channel::{
    build_correlation, build_propagation, compute_cascade, effective_channel, sample_channels, ChannelSet,
    CorrelationMatrix, PropagationSet,
};
pub use driver::{monte_carlo, run_scheme, AssocKind, MonteCarloTable, OptimizerKind, RunReport, SchemeId, Trial};
pub use pga::{grad_sum_rate, partial_cascades, pga_optimize, PartialCascades, PhaseState};
pub use popt::{optimal_t, power_control, update_power};
pub use rate::{build_stacked, sinr, sum_rate, PowerAllocation, RateReport, StackedSystem, SystemModel};
pub use scenario::{build_scenario, noise_power, path_loss, Layout, ScenarioConfig};

/// Complex sample type used throughout.
pub type C64 = nalgebra::Complex<f64>;
