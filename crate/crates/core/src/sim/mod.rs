//! DC operating point, AC small-signal analysis, and metric extraction.
//!
//! The solver formulates modified nodal equations (node voltages plus one
//! branch current per voltage source), solves DC by damped Newton iteration
//! with a gmin ramp as convergence aid, and linearizes at the operating
//! point for the AC sweep. Everything is dense; circuits in scope are well
//! under a hundred nodes.
//!
//! All solver state is per-call: concurrent evaluations share only the
//! immutable compiled circuit, so results are identical regardless of
//! evaluation order or parallelism degree.

mod ac;
mod dc;
mod device;
mod metrics;

pub use ac::{ac_sweep, log_grid, AcResponse};
pub use dc::{dc_operating_point, CompiledCircuit, DcSolution};
pub use device::mosfet_eval;
pub use metrics::{extract_metrics, Sign};

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Solver knobs. The defaults match the shipped configuration: KCL residual
/// bound 1e-9 A, 200 Newton iterations, gmin ramp 1e-3 down to 1e-12 S,
/// 0.5 V damping, AC grid 10 points/decade over 1 Hz - 10 GHz, and device
/// capacitances of 1 fF per micrometer of effective width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub dc_tol: f64,
    pub max_newton_iters: usize,
    pub gmin_start: f64,
    pub gmin_floor: f64,
    pub damping_vmax: f64,
    pub ac_points_per_decade: u32,
    pub ac_fstart: f64,
    pub ac_fstop: f64,
    pub cgs_per_m: f64,
    pub cgd_per_m: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            dc_tol: 1e-9,
            max_newton_iters: 200,
            gmin_start: 1e-3,
            gmin_floor: 1e-12,
            damping_vmax: 0.5,
            ac_points_per_decade: 10,
            ac_fstart: 1.0,
            ac_fstop: 1e10,
            cgs_per_m: 1e-9,
            cgd_per_m: 1e-9,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("singular system: {context}")]
    SingularSystem { context: String },
    #[error("singular system at {hz} Hz")]
    SingularAtFrequency { hz: f64 },
    #[error("DC solve did not converge after {iterations} iterations (residual {residual:.3e} A)")]
    NoConvergence { residual: f64, iterations: usize },
    #[error("netlist has no AC stimulus source")]
    NoAcSource,
    #[error("netlist has no `.probe out=` output designation")]
    NoOutputProbe,
    #[error("probe references unknown device or node `{name}`")]
    UnknownProbe { name: String },
}

/// Extracted performance figures of one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfMetrics {
    /// Magnitude gain at the lowest swept frequency, in dB.
    pub gain_db: f64,
    /// Sign of the real part of the low-frequency transfer.
    pub gain_sign: Sign,
    /// `None` when the gain never crosses unity (flagged, not fabricated).
    pub phase_margin_deg: Option<f64>,
    pub bw_3db_hz: f64,
    /// Set when the response never falls 3 dB below the low-frequency
    /// gain inside the grid; `bw_3db_hz` then saturates at the top frequency.
    pub bw_saturated: bool,
    /// Sum of |V * I| over the DC sources.
    pub power_w: f64,
    /// Transconductance of the probed input-pair device at the operating
    /// point (0 when no gm probe is configured).
    pub gm_s: f64,
    /// Drain/branch currents of the probed branches.
    pub branch_currents: BTreeMap<String, f64>,
    /// Newton iterations spent on the DC solve.
    pub dc_iterations: usize,
}
