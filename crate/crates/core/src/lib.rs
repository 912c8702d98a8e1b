//! Workbench for locking analog circuit netlists behind layout-arrangement keys.
//!
//! The pipeline: parse a SPICE-subset netlist ([`netlist`]), map per-transistor
//! layout arrangements to effective device parameters ([`lde`]), solve DC/AC and
//! extract performance metrics ([`sim`]), hide the designer's arrangements behind
//! one-hot keys ([`lock`]), explore the keyspace ([`sweep`]), and measure
//! obfuscation strength against oracle-guided attacks ([`attack`]).

pub mod attack;
pub mod eval;
pub mod lde;
pub mod lock;
pub mod netlist;
pub mod sim;
pub mod sweep;

pub use eval::Evaluator;
pub use lde::{LdeEntry, LdeTable, VariationEntry};
pub use netlist::{Arrangement, DeviceKind, Netlist, VtFlavor};
pub use sim::{PerfMetrics, SimOptions};
