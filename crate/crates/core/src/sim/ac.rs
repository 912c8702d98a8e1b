//! AC small-signal sweep.
//!
//! Every MOSFET is linearized at the DC operating point (gm/gds stamps plus
//! fixed gate-source and gate-drain capacitances scaled by effective width),
//! and the complex nodal system is solved directly per frequency. The
//! transfer is the designated output node phasor over the AC source phasor.

use super::dc::{CompiledCircuit, DcSolution, Term};
use super::{SimError, SimOptions};
use crate::lde::EffectiveParams;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Small-signal response over a log-spaced grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AcResponse {
    pub frequencies: Vec<f64>,
    /// Output node phasor divided by the stimulus phasor, per frequency.
    pub transfer: Vec<Complex64>,
}

/// Log-spaced frequency grid: `points_per_decade` samples per decade from
/// `fstart` up to `fstop` (inclusive when it falls on the grid).
pub fn log_grid(points_per_decade: u32, fstart: f64, fstop: f64) -> Vec<f64> {
    let decades = (fstop / fstart).log10();
    let n = (decades * points_per_decade as f64).round() as usize + 1;
    (0..n)
        .map(|i| fstart * 10f64.powf(i as f64 / points_per_decade as f64))
        .collect()
}

/// Run the sweep. Requires a converged DC solution, exactly one source with
/// a nonzero AC stimulus, and an output node name.
pub fn ac_sweep(
    circ: &CompiledCircuit,
    params: &[EffectiveParams],
    dc: &DcSolution,
    opts: &SimOptions,
    frequencies: &[f64],
    out_node: &str,
) -> Result<AcResponse, SimError> {
    assert!(dc.converged, "ac_sweep requires a converged DC solution");
    let n = circ.size();

    let out = if out_node == crate::netlist::GROUND {
        Term::Gnd
    } else {
        let idx = circ
            .node_names
            .iter()
            .position(|name| name == out_node)
            .ok_or_else(|| SimError::UnknownProbe {
                name: out_node.to_string(),
            })?;
        Term::Node(idx)
    };

    // Stimulus: the single source carrying an AC specification.
    let stimulus = find_stimulus(circ)?;

    // Small-signal conductance matrix = DC Jacobian at the operating point.
    let mut g = DMatrix::zeros(n, n);
    let mut scratch = DVector::zeros(n);
    circ.stamp(params, &dc.x, 0.0, &mut g, &mut scratch);
    let g: DMatrix<Complex64> = g.map(|v| Complex64::new(v, 0.0));

    // Capacitance stamp list: netlist capacitors plus device Cgs/Cgd.
    let mut caps: Vec<(Term, Term, f64)> = circ
        .capacitors
        .iter()
        .map(|c| (c.a, c.b, c.farads))
        .collect();
    for m in &circ.mosfets {
        caps.push((m.g, m.s, m.cgs));
        caps.push((m.g, m.d, m.cgd));
    }
    let _ = opts;

    // Right-hand side: AC injections.
    let mut rhs = DVector::from_element(n, Complex64::new(0.0, 0.0));
    let phasor = stimulus.phasor;
    match stimulus.kind {
        StimulusKind::Voltage { branch } => rhs[branch] = phasor,
        StimulusKind::Current { pos, neg } => {
            if let Term::Node(i) = pos {
                rhs[i] -= phasor;
            }
            if let Term::Node(i) = neg {
                rhs[i] += phasor;
            }
        }
    }

    let mut transfer = Vec::with_capacity(frequencies.len());
    for &f in frequencies {
        let omega = 2.0 * std::f64::consts::PI * f;
        let mut y = g.clone();
        for &(a, b, c) in &caps {
            let jwc = Complex64::new(0.0, omega * c);
            if let Term::Node(i) = a {
                y[(i, i)] += jwc;
            }
            if let Term::Node(i) = b {
                y[(i, i)] += jwc;
            }
            if let (Term::Node(i), Term::Node(j)) = (a, b) {
                y[(i, j)] -= jwc;
                y[(j, i)] -= jwc;
            }
        }
        let lu = y.lu();
        let v = lu
            .solve(&rhs)
            .ok_or(SimError::SingularAtFrequency { hz: f })?;
        let vout = match out {
            Term::Gnd => Complex64::new(0.0, 0.0),
            Term::Node(i) => v[i],
        };
        transfer.push(vout / phasor);
    }

    Ok(AcResponse {
        frequencies: frequencies.to_vec(),
        transfer,
    })
}

enum StimulusKind {
    Voltage { branch: usize },
    Current { pos: Term, neg: Term },
}

struct Stimulus {
    phasor: Complex64,
    kind: StimulusKind,
}

fn find_stimulus(circ: &CompiledCircuit) -> Result<Stimulus, SimError> {
    let to_phasor = |mag: f64, phase_deg: f64| {
        Complex64::from_polar(mag, phase_deg.to_radians())
    };
    for v in &circ.vsources {
        if let Some(ac) = v.ac {
            if ac.magnitude != 0.0 {
                return Ok(Stimulus {
                    phasor: to_phasor(ac.magnitude, ac.phase_deg),
                    kind: StimulusKind::Voltage { branch: v.branch },
                });
            }
        }
    }
    for i in &circ.isources {
        if let Some(ac) = i.ac {
            if ac.magnitude != 0.0 {
                return Ok(Stimulus {
                    phasor: to_phasor(ac.magnitude, ac.phase_deg),
                    kind: StimulusKind::Current {
                        pos: i.pos,
                        neg: i.neg,
                    },
                });
            }
        }
    }
    Err(SimError::NoAcSource)
}
