//! Performance-metric extraction from a swept response.

use super::ac::AcResponse;
use super::dc::{source_power, CompiledCircuit, DcSolution};
use super::device::mosfet_eval;
use super::PerfMetrics;
use crate::lde::EffectiveParams;
use crate::netlist::ProbeDirective;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

/// Polarity of the low-frequency gain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Plus => "+",
            Sign::Minus => "-",
        })
    }
}

/// Extract the swept performance figures.
///
/// Gain is read at the lowest grid frequency; the 3 dB corner and the
/// unity-gain crossing are log-interpolated between grid points. Phase
/// margin is `180 deg` minus the accumulated phase lag at the crossing and
/// is reported absent when the magnitude never crosses unity. A response
/// that never drops 3 dB saturates the bandwidth at the top frequency and
/// sets the flag.
pub fn extract_metrics(
    resp: &AcResponse,
    dc: &DcSolution,
    circ: &CompiledCircuit,
    params: &[EffectiveParams],
    probe: &ProbeDirective,
) -> PerfMetrics {
    let mags: Vec<f64> = resp.transfer.iter().map(|h| h.norm()).collect();
    let h0 = resp.transfer[0];
    let gain_db = 20.0 * mags[0].max(f64::MIN_POSITIVE).log10();
    let gain_sign = if h0.re >= 0.0 { Sign::Plus } else { Sign::Minus };

    let logf: Vec<f64> = resp.frequencies.iter().map(|f| f.log10()).collect();

    // 3 dB corner: first crossing of |H0| / sqrt(2), log-log interpolated.
    let target = mags[0] / std::f64::consts::SQRT_2;
    let mut bw = *resp.frequencies.last().unwrap();
    let mut bw_saturated = true;
    for i in 1..mags.len() {
        if mags[i] <= target && mags[i - 1] > target {
            let l0 = mags[i - 1].max(f64::MIN_POSITIVE).log10();
            let l1 = mags[i].max(f64::MIN_POSITIVE).log10();
            let t = (target.log10() - l0) / (l1 - l0);
            bw = 10f64.powf(logf[i - 1] + t * (logf[i] - logf[i - 1]));
            bw_saturated = false;
            break;
        }
    }

    // Unwrapped phase in degrees.
    let mut phase = Vec::with_capacity(resp.transfer.len());
    let mut prev = resp.transfer[0].arg();
    let mut offset = 0.0f64;
    for h in &resp.transfer {
        let mut a = h.arg();
        while a + offset - prev > std::f64::consts::PI {
            offset -= 2.0 * std::f64::consts::PI;
        }
        while a + offset - prev < -std::f64::consts::PI {
            offset += 2.0 * std::f64::consts::PI;
        }
        a += offset;
        prev = a;
        phase.push(a.to_degrees());
    }

    // Unity-gain crossing from above; phase margin from the phase lag
    // accumulated since the lowest frequency.
    let mut phase_margin_deg = None;
    if mags[0] > 1.0 {
        for i in 1..mags.len() {
            if mags[i] <= 1.0 && mags[i - 1] > 1.0 {
                let l0 = mags[i - 1].log10();
                let l1 = mags[i].max(f64::MIN_POSITIVE).log10();
                let t = -l0 / (l1 - l0);
                let phase_u = phase[i - 1] + t * (phase[i] - phase[i - 1]);
                let lag = phase[0] - phase_u;
                phase_margin_deg = Some(180.0 - lag);
                break;
            }
        }
    }

    let gm_s = probe
        .gm_device
        .as_deref()
        .and_then(|name| circ.mosfet_position(name))
        .map(|i| {
            let m = &circ.mosfets[i];
            let vgs = m.g.voltage(&dc.x) - m.s.voltage(&dc.x);
            let vds = m.d.voltage(&dc.x) - m.s.voltage(&dc.x);
            mosfet_eval(&params[i], vgs, vds, m.kind).1
        })
        .unwrap_or(0.0);

    let branch_currents: BTreeMap<String, f64> = probe
        .branches
        .iter()
        .filter_map(|b| dc.device_currents.get(b).map(|&i| (b.clone(), i)))
        .collect();

    PerfMetrics {
        gain_db,
        gain_sign,
        phase_margin_deg,
        bw_3db_hz: bw,
        bw_saturated,
        power_w: source_power(circ, &dc.x),
        gm_s,
        branch_currents,
        dc_iterations: dc.iterations,
    }
}
