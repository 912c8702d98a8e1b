//! Compiled circuit view and DC operating-point solver.
//!
//! The nonlinear nodal system is solved by damped Newton iteration. When a
//! cold or warm direct attempt fails, the solver retries on a gmin ladder:
//! an extra conductance to ground on every node diagonal, ramped down
//! geometrically, each level seeding the next. A final polish at gmin = 0
//! enforces the true KCL residual bound.

use super::device::mosfet_eval;
use super::{SimError, SimOptions};
use crate::lde::EffectiveParams;
use crate::netlist::{AcStimulus, Device, DeviceKind, Netlist, NodeRef};
use nalgebra::{DMatrix, DVector};
use std::collections::BTreeMap;

/// A resolved terminal: ground or an index into the unknown vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Term {
    Gnd,
    Node(usize),
}

impl Term {
    pub(crate) fn voltage(self, x: &DVector<f64>) -> f64 {
        match self {
            Term::Gnd => 0.0,
            Term::Node(i) => x[i],
        }
    }

    fn index(self) -> Option<usize> {
        match self {
            Term::Gnd => None,
            Term::Node(i) => Some(i),
        }
    }
}

pub(crate) struct CRes {
    pub name: String,
    pub a: Term,
    pub b: Term,
    pub conductance: f64,
}

pub(crate) struct CCap {
    pub a: Term,
    pub b: Term,
    pub farads: f64,
}

pub(crate) struct CVsrc {
    pub name: String,
    pub pos: Term,
    pub neg: Term,
    pub dc: f64,
    pub ac: Option<AcStimulus>,
    /// Row/column of this source's branch current in the unknown vector.
    pub branch: usize,
}

pub(crate) struct CIsrc {
    pub name: String,
    pub pos: Term,
    pub neg: Term,
    pub dc: f64,
    pub ac: Option<AcStimulus>,
}

pub(crate) struct CMos {
    pub name: String,
    pub d: Term,
    pub g: Term,
    pub s: Term,
    pub kind: DeviceKind,
    pub cgs: f64,
    pub cgd: f64,
}

/// Netlist lowered to index form for the solver. Immutable; per-key
/// evaluations only swap the MOSFET parameter vector.
pub struct CompiledCircuit {
    pub(crate) n_nodes: usize,
    pub(crate) n_branches: usize,
    pub(crate) node_names: Vec<String>,
    pub(crate) resistors: Vec<CRes>,
    pub(crate) capacitors: Vec<CCap>,
    pub(crate) vsources: Vec<CVsrc>,
    pub(crate) isources: Vec<CIsrc>,
    pub(crate) mosfets: Vec<CMos>,
}

impl CompiledCircuit {
    /// Lower a validated netlist. Checks that every node has a structural
    /// DC path to ground (through resistors, voltage sources, or MOSFET
    /// channels); nodes without one make the nodal system singular.
    pub fn compile(net: &Netlist, opts: &SimOptions) -> Result<CompiledCircuit, SimError> {
        let index = net.node_index();
        let term = |name: &str| match index.get(name) {
            NodeRef::Ground => Term::Gnd,
            NodeRef::Index(i) => Term::Node(i),
        };

        let mut circuit = CompiledCircuit {
            n_nodes: index.len(),
            n_branches: 0,
            node_names: index.names().to_vec(),
            resistors: Vec::new(),
            capacitors: Vec::new(),
            vsources: Vec::new(),
            isources: Vec::new(),
            mosfets: Vec::new(),
        };

        for dev in &net.devices {
            match dev {
                Device::Resistor(r) => circuit.resistors.push(CRes {
                    name: r.name.clone(),
                    a: term(&r.a),
                    b: term(&r.b),
                    conductance: 1.0 / r.ohms,
                }),
                Device::Capacitor(c) => circuit.capacitors.push(CCap {
                    a: term(&c.a),
                    b: term(&c.b),
                    farads: c.farads,
                }),
                Device::VSource(v) => {
                    let branch = circuit.n_nodes + circuit.n_branches;
                    circuit.n_branches += 1;
                    circuit.vsources.push(CVsrc {
                        name: v.name.clone(),
                        pos: term(&v.pos),
                        neg: term(&v.neg),
                        dc: v.dc,
                        ac: v.ac,
                        branch,
                    });
                }
                Device::ISource(i) => circuit.isources.push(CIsrc {
                    name: i.name.clone(),
                    pos: term(&i.pos),
                    neg: term(&i.neg),
                    dc: i.dc,
                    ac: i.ac,
                }),
                Device::Mosfet(m) => {
                    let w_eff = m.width * m.drive_mult();
                    circuit.mosfets.push(CMos {
                        name: m.name.clone(),
                        d: term(&m.drain),
                        g: term(&m.gate),
                        s: term(&m.source),
                        kind: m.kind,
                        cgs: opts.cgs_per_m * w_eff,
                        cgd: opts.cgd_per_m * w_eff,
                    });
                }
            }
        }

        circuit.check_dc_connectivity()?;
        Ok(circuit)
    }

    /// Union-find over conductive edges; every node must reach ground.
    fn check_dc_connectivity(&self) -> Result<(), SimError> {
        // Slot 0 is ground, node i lives at slot i + 1.
        let n = self.n_nodes + 1;
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        let slot = |t: Term| match t {
            Term::Gnd => 0,
            Term::Node(i) => i + 1,
        };
        let join = |a: Term, b: Term, parent: &mut Vec<usize>| {
            let ra = find(parent, slot(a));
            let rb = find(parent, slot(b));
            if ra != rb {
                parent[ra] = rb;
            }
        };
        for r in &self.resistors {
            join(r.a, r.b, &mut parent);
        }
        for v in &self.vsources {
            join(v.pos, v.neg, &mut parent);
        }
        for m in &self.mosfets {
            join(m.d, m.s, &mut parent);
        }
        let ground_root = find(&mut parent, 0);
        for i in 0..self.n_nodes {
            if find(&mut parent, i + 1) != ground_root {
                return Err(SimError::SingularSystem {
                    context: format!("node {} has no DC path to ground", self.node_names[i]),
                });
            }
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.n_nodes + self.n_branches
    }

    pub fn node_names(&self) -> &[String] {
        &self.node_names
    }

    pub(crate) fn mosfet_position(&self, name: &str) -> Option<usize> {
        self.mosfets.iter().position(|m| m.name == name)
    }

    /// Jacobian and residual of the nodal system at `x`. Node rows carry the
    /// KCL current residual in amps; branch rows the source voltage residual
    /// in volts. `gmin` adds a conductance to ground on every node diagonal.
    pub(crate) fn stamp(
        &self,
        params: &[EffectiveParams],
        x: &DVector<f64>,
        gmin: f64,
        jac: &mut DMatrix<f64>,
        res: &mut DVector<f64>,
    ) {
        jac.fill(0.0);
        res.fill(0.0);

        let add_j = |jac: &mut DMatrix<f64>, row: Option<usize>, col: Option<usize>, v: f64| {
            if let (Some(r), Some(c)) = (row, col) {
                jac[(r, c)] += v;
            }
        };
        let add_f = |res: &mut DVector<f64>, row: Option<usize>, v: f64| {
            if let Some(r) = row {
                res[r] += v;
            }
        };

        for i in 0..self.n_nodes {
            jac[(i, i)] += gmin;
            res[i] += gmin * x[i];
        }

        for r in &self.resistors {
            let (a, b) = (r.a.index(), r.b.index());
            let i = (r.a.voltage(x) - r.b.voltage(x)) * r.conductance;
            add_f(res, a, i);
            add_f(res, b, -i);
            add_j(jac, a, a, r.conductance);
            add_j(jac, b, b, r.conductance);
            add_j(jac, a, b, -r.conductance);
            add_j(jac, b, a, -r.conductance);
        }

        for s in &self.isources {
            // Current flows from pos through the source into neg.
            add_f(res, s.pos.index(), s.dc);
            add_f(res, s.neg.index(), -s.dc);
        }

        for v in &self.vsources {
            let (p, n) = (v.pos.index(), v.neg.index());
            let br = Some(v.branch);
            let iv = x[v.branch];
            add_f(res, p, iv);
            add_f(res, n, -iv);
            add_j(jac, p, br, 1.0);
            add_j(jac, n, br, -1.0);
            add_f(res, br, v.pos.voltage(x) - v.neg.voltage(x) - v.dc);
            add_j(jac, br, p, 1.0);
            add_j(jac, br, n, -1.0);
        }

        for (m, p) in self.mosfets.iter().zip(params) {
            let vgs = m.g.voltage(x) - m.s.voltage(x);
            let vds = m.d.voltage(x) - m.s.voltage(x);
            let (id, gm, gds) = mosfet_eval(p, vgs, vds, m.kind);
            let (d, g, s) = (m.d.index(), m.g.index(), m.s.index());
            add_f(res, d, id);
            add_f(res, s, -id);
            add_j(jac, d, d, gds);
            add_j(jac, d, g, gm);
            add_j(jac, d, s, -(gm + gds));
            add_j(jac, s, d, -gds);
            add_j(jac, s, g, -gm);
            add_j(jac, s, s, gm + gds);
        }
    }
}

/// DC operating point. `converged = false` means the solver exhausted all
/// retries; the fields then hold the last iterate for diagnosis.
#[derive(Debug, Clone, PartialEq)]
pub struct DcSolution {
    /// Node voltages followed by voltage-source branch currents.
    pub x: DVector<f64>,
    /// Node voltages by name.
    pub node_voltages: BTreeMap<String, f64>,
    /// Drain current per MOSFET, branch current per source/resistor.
    pub device_currents: BTreeMap<String, f64>,
    pub converged: bool,
    pub iterations: usize,
    /// KCL residual max-norm at the final iterate, in amps.
    pub residual: f64,
}

impl DcSolution {
    pub fn voltage(&self, node: &str) -> f64 {
        if node == crate::netlist::GROUND {
            0.0
        } else {
            self.node_voltages[node]
        }
    }
}

enum NewtonOutcome {
    Converged { x: DVector<f64>, iters: usize },
    Stalled { x: DVector<f64>, iters: usize, residual: f64 },
    Singular { iters: usize },
}

fn newton(
    circ: &CompiledCircuit,
    params: &[EffectiveParams],
    x0: DVector<f64>,
    gmin: f64,
    opts: &SimOptions,
) -> NewtonOutcome {
    let n = circ.size();
    let mut jac = DMatrix::zeros(n, n);
    let mut res = DVector::zeros(n);
    let mut x = x0;
    let mut iters = 0usize;

    loop {
        circ.stamp(params, &x, gmin, &mut jac, &mut res);
        let node_res = if circ.n_nodes > 0 {
            res.rows(0, circ.n_nodes).amax()
        } else {
            0.0
        };
        let branch_res = if circ.n_branches > 0 {
            res.rows(circ.n_nodes, circ.n_branches).amax()
        } else {
            0.0
        };
        if node_res < opts.dc_tol && branch_res < 1e-9 {
            return NewtonOutcome::Converged { x, iters };
        }
        if iters >= opts.max_newton_iters {
            return NewtonOutcome::Stalled {
                x,
                iters,
                residual: node_res,
            };
        }
        let lu = jac.clone().lu();
        let Some(delta) = lu.solve(&(-&res)) else {
            return NewtonOutcome::Singular { iters };
        };
        // Damp: no node voltage moves more than damping_vmax per iteration.
        let max_node_step = if circ.n_nodes > 0 {
            delta.rows(0, circ.n_nodes).amax()
        } else {
            0.0
        };
        let scale = if max_node_step > opts.damping_vmax {
            opts.damping_vmax / max_node_step
        } else {
            1.0
        };
        x += scale * delta;
        iters += 1;
    }
}

/// Solve the DC operating point.
///
/// Attempts, in order: a direct Newton solve from the warm start (when
/// given), a direct solve from zero, and the gmin ladder followed by a
/// gmin = 0 polish. Deterministic: the attempt schedule is fixed.
pub fn dc_operating_point(
    circ: &CompiledCircuit,
    params: &[EffectiveParams],
    opts: &SimOptions,
    warm_start: Option<&DVector<f64>>,
) -> Result<DcSolution, SimError> {
    assert_eq!(params.len(), circ.mosfets.len(), "one param set per MOSFET");
    let n = circ.size();
    let mut total_iters = 0usize;

    if let Some(start) = warm_start {
        match newton(circ, params, start.clone(), 0.0, opts) {
            NewtonOutcome::Converged { x, iters } => {
                return Ok(finish(circ, params, x, total_iters + iters));
            }
            NewtonOutcome::Stalled { iters, .. } | NewtonOutcome::Singular { iters } => {
                total_iters += iters;
            }
        }
    }

    // Cold direct attempt.
    let cold = DVector::zeros(n);
    match newton(circ, params, cold.clone(), 0.0, opts) {
        NewtonOutcome::Converged { x, iters } => {
            return Ok(finish(circ, params, x, total_iters + iters));
        }
        NewtonOutcome::Stalled { iters, .. } | NewtonOutcome::Singular { iters } => {
            total_iters += iters;
        }
    }

    // Gmin ladder, geometric ramp-down, each level seeding the next.
    let mut x = cold;
    let mut gmin = opts.gmin_start;
    while gmin >= opts.gmin_floor {
        match newton(circ, params, x.clone(), gmin, opts) {
            NewtonOutcome::Converged { x: xg, iters } => {
                x = xg;
                total_iters += iters;
            }
            NewtonOutcome::Stalled { x: xg, iters, .. } => {
                // Keep the partial iterate; deeper levels may still recover.
                x = xg;
                total_iters += iters;
            }
            NewtonOutcome::Singular { iters } => {
                total_iters += iters;
            }
        }
        gmin *= 0.1;
    }

    // Polish without gmin so the true KCL bound holds.
    match newton(circ, params, x, 0.0, opts) {
        NewtonOutcome::Converged { x, iters } => Ok(finish(circ, params, x, total_iters + iters)),
        NewtonOutcome::Stalled { x, iters, residual } => Ok(DcSolution {
            node_voltages: named_voltages(circ, &x),
            device_currents: device_currents(circ, params, &x),
            x,
            converged: false,
            iterations: total_iters + iters,
            residual,
        }),
        NewtonOutcome::Singular { iters } => Err(SimError::SingularSystem {
            context: format!(
                "Jacobian became singular during polish after {} iterations",
                total_iters + iters
            ),
        }),
    }
}

fn finish(
    circ: &CompiledCircuit,
    params: &[EffectiveParams],
    x: DVector<f64>,
    iterations: usize,
) -> DcSolution {
    let n = circ.size();
    let mut jac = DMatrix::zeros(n, n);
    let mut res = DVector::zeros(n);
    circ.stamp(params, &x, 0.0, &mut jac, &mut res);
    let residual = res.rows(0, circ.n_nodes).amax();
    DcSolution {
        node_voltages: named_voltages(circ, &x),
        device_currents: device_currents(circ, params, &x),
        x,
        converged: true,
        iterations,
        residual,
    }
}

fn named_voltages(circ: &CompiledCircuit, x: &DVector<f64>) -> BTreeMap<String, f64> {
    circ.node_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.clone(), x[i]))
        .collect()
}

fn device_currents(
    circ: &CompiledCircuit,
    params: &[EffectiveParams],
    x: &DVector<f64>,
) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for r in &circ.resistors {
        out.insert(
            r.name.clone(),
            (r.a.voltage(x) - r.b.voltage(x)) * r.conductance,
        );
    }
    for v in &circ.vsources {
        out.insert(v.name.clone(), x[v.branch]);
    }
    for s in &circ.isources {
        out.insert(s.name.clone(), s.dc);
    }
    for (m, p) in circ.mosfets.iter().zip(params) {
        let vgs = m.g.voltage(x) - m.s.voltage(x);
        let vds = m.d.voltage(x) - m.s.voltage(x);
        let (id, _, _) = mosfet_eval(p, vgs, vds, m.kind);
        out.insert(m.name.clone(), id);
    }
    out
}

/// Sum of |V * I| over the independent DC sources.
pub(crate) fn source_power(circ: &CompiledCircuit, x: &DVector<f64>) -> f64 {
    let mut p = 0.0;
    for v in &circ.vsources {
        p += (v.dc * x[v.branch]).abs();
    }
    for s in &circ.isources {
        p += ((s.pos.voltage(x) - s.neg.voltage(x)) * s.dc).abs();
    }
    p
}
