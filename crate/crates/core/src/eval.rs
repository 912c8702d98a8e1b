//! One-shot evaluation of a netlist under a per-transistor arrangement map.
//!
//! The evaluator compiles the netlist once, validates the measurement
//! designations, and precomputes an all-baseline warm start for the DC
//! solver. Per-key evaluations then only swap the effective device
//! parameters, which keeps keyspace sweeps cheap and makes results
//! independent of evaluation order.

use crate::lde::{EffectiveParams, LdeTable};
use crate::netlist::{Arrangement, Mosfet, Netlist};
use crate::sim::{
    ac_sweep, dc_operating_point, extract_metrics, log_grid, CompiledCircuit, DcSolution,
    PerfMetrics, SimError, SimOptions,
};
use nalgebra::DVector;
use std::collections::BTreeMap;

pub type ArrangementMap = BTreeMap<String, Arrangement>;

pub struct Evaluator {
    netlist: Netlist,
    circ: CompiledCircuit,
    lde: LdeTable,
    opts: SimOptions,
    mosfets: Vec<Mosfet>,
    frequencies: Vec<f64>,
    out_node: String,
    warm: Option<DVector<f64>>,
    /// Layout-blind mode: every device is evaluated as baseline regardless
    /// of the requested arrangement (models a reverse engineer whose device
    /// models carry no layout information).
    blind: bool,
    /// Master seed for Monte Carlo parameter variation; `None` disables it.
    mc_seed: Option<u64>,
}

impl Evaluator {
    pub fn new(netlist: Netlist, lde: LdeTable, opts: SimOptions) -> Result<Evaluator, SimError> {
        let circ = CompiledCircuit::compile(&netlist, &opts)?;
        let mosfets: Vec<Mosfet> = netlist.mosfets().cloned().collect();

        let probe = &netlist.probe;
        let out_node = probe.out.clone().ok_or(SimError::NoOutputProbe)?;
        if out_node != crate::netlist::GROUND
            && !circ.node_names().iter().any(|n| *n == out_node)
        {
            return Err(SimError::UnknownProbe { name: out_node });
        }
        if let Some(gm_dev) = &probe.gm_device {
            if circ.mosfet_position(gm_dev).is_none() {
                return Err(SimError::UnknownProbe {
                    name: gm_dev.clone(),
                });
            }
        }
        for b in &probe.branches {
            if netlist.find_device(b).is_none() {
                return Err(SimError::UnknownProbe { name: b.clone() });
            }
        }

        let frequencies = match &netlist.ac {
            Some(ac) => log_grid(ac.points_per_decade, ac.fstart, ac.fstop),
            None => log_grid(opts.ac_points_per_decade, opts.ac_fstart, opts.ac_fstop),
        };

        let mut ev = Evaluator {
            netlist,
            circ,
            lde,
            opts,
            mosfets,
            frequencies,
            out_node,
            warm: None,
            blind: false,
            mc_seed: None,
        };

        // All-baseline solution as a deterministic, key-independent warm
        // start. A failure here is not fatal; solves fall back to cold.
        let baseline = ev.params_for(&ArrangementMap::new());
        if let Ok(dc) = dc_operating_point(&ev.circ, &baseline, &ev.opts, None) {
            if dc.converged {
                ev.warm = Some(dc.x);
            }
        }
        Ok(ev)
    }

    /// Force baseline parameters for every key (layout-blind adversary).
    pub fn with_blind(mut self, blind: bool) -> Evaluator {
        self.blind = blind;
        self
    }

    /// Enable Monte Carlo process/mismatch variation with a master seed.
    pub fn with_monte_carlo(mut self, seed: u64) -> Evaluator {
        self.mc_seed = Some(seed);
        self
    }

    pub fn netlist(&self) -> &Netlist {
        &self.netlist
    }

    pub fn lde(&self) -> &LdeTable {
        &self.lde
    }

    pub fn options(&self) -> &SimOptions {
        &self.opts
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    fn params_for(&self, arrangements: &ArrangementMap) -> Vec<EffectiveParams> {
        self.mosfets
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let arr = if self.blind {
                    Arrangement::Bl
                } else {
                    arrangements.get(&m.name).copied().unwrap_or(Arrangement::Bl)
                };
                let mut p = self.lde.apply(m, arr);
                if let Some(seed) = self.mc_seed {
                    let device_seed = seed
                        .wrapping_add((i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                    let (vth_mult, gm_mult) =
                        self.lde.sample_variation(m.kind, m.flavor, arr, device_seed);
                    p.vth_eff *= vth_mult;
                    p.kfactor_eff *= gm_mult;
                }
                p
            })
            .collect()
    }

    /// DC solve only.
    pub fn solve_dc(&self, arrangements: &ArrangementMap) -> Result<DcSolution, SimError> {
        let params = self.params_for(arrangements);
        dc_operating_point(&self.circ, &params, &self.opts, self.warm.as_ref())
    }

    /// Full pipeline: effective parameters, DC operating point, AC sweep,
    /// metric extraction. A non-converged DC solve is returned as
    /// [`SimError::NoConvergence`].
    pub fn eval(&self, arrangements: &ArrangementMap) -> Result<PerfMetrics, SimError> {
        let params = self.params_for(arrangements);
        let dc = dc_operating_point(&self.circ, &params, &self.opts, self.warm.as_ref())?;
        if !dc.converged {
            return Err(SimError::NoConvergence {
                residual: dc.residual,
                iterations: dc.iterations,
            });
        }
        let resp = ac_sweep(
            &self.circ,
            &params,
            &dc,
            &self.opts,
            &self.frequencies,
            &self.out_node,
        )?;
        Ok(extract_metrics(
            &resp,
            &dc,
            &self.circ,
            &params,
            &self.netlist.probe,
        ))
    }

    /// Metrics of the all-baseline arrangement.
    pub fn eval_baseline(&self) -> Result<PerfMetrics, SimError> {
        self.eval(&ArrangementMap::new())
    }
}
