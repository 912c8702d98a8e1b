//! Square-law MOSFET evaluation with channel-length modulation.
//!
//! The `(1 + lambda*vds)` factor is applied in both triode and saturation,
//! which makes the drain current and both small-signal conductances
//! continuous across the region boundary; Newton iteration stays stable
//! through region changes.

use crate::lde::EffectiveParams;
use crate::netlist::DeviceKind;

/// Evaluate drain current and small-signal conductances at a bias point.
///
/// Returns `(id, gm, gds)` where `id` is the current into the drain
/// terminal (negative for a conducting PMOS), `gm = d id / d vgs` and
/// `gds = d id / d vds`. Total over all inputs: cutoff returns zeros,
/// reversed drain/source and PMOS polarity are handled by reflection.
pub fn mosfet_eval(p: &EffectiveParams, vgs: f64, vds: f64, kind: DeviceKind) -> (f64, f64, f64) {
    match kind {
        DeviceKind::Nmos => nmos_eval(p, vgs, vds),
        DeviceKind::Pmos => {
            // Source/drain roles and voltages mirror an NMOS.
            let (i, gm, gds) = nmos_eval(p, -vgs, -vds);
            (-i, gm, gds)
        }
    }
}

fn nmos_eval(p: &EffectiveParams, vgs: f64, vds: f64) -> (f64, f64, f64) {
    if vds < 0.0 {
        // Conduction with drain and source swapped.
        let (i, gm_f, gds_f) = nmos_forward(p, vgs - vds, -vds);
        return (-i, -gm_f, gm_f + gds_f);
    }
    nmos_forward(p, vgs, vds)
}

fn nmos_forward(p: &EffectiveParams, vgs: f64, vds: f64) -> (f64, f64, f64) {
    let vov = vgs - p.vth_eff;
    if vov <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let k = p.kfactor_eff;
    let clm = 1.0 + p.lambda * vds;
    if vds < vov {
        // Triode.
        let shape = vov * vds - 0.5 * vds * vds;
        let id = k * shape * clm;
        let gm = k * vds * clm;
        let gds = k * (vov - vds) * clm + k * shape * p.lambda;
        (id, gm, gds)
    } else {
        // Saturation.
        let id = 0.5 * k * vov * vov * clm;
        let gm = k * vov * clm;
        let gds = 0.5 * k * vov * vov * p.lambda;
        (id, gm, gds)
    }
}
