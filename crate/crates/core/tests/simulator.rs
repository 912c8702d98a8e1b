//! Solver correctness against independent oracles: closed-form circuits,
//! finite differences, and energy balance.

use ldelock_core::netlist::parse;
use ldelock_core::sim::{
    ac_sweep, dc_operating_point, extract_metrics, log_grid, AcResponse, CompiledCircuit,
    SimError, Sign, SimOptions,
};
use ldelock_core::{Evaluator, LdeTable};
use num_complex::Complex64;

fn compile(src: &str) -> (ldelock_core::Netlist, CompiledCircuit) {
    let net = parse(src).expect("test netlist parses");
    let opts = SimOptions::default();
    let circ = CompiledCircuit::compile(&net, &opts).expect("compiles");
    (net, circ)
}

fn bl_params(net: &ldelock_core::Netlist) -> Vec<ldelock_core::lde::EffectiveParams> {
    let table = LdeTable::builtin();
    net.mosfets()
        .map(|m| table.apply(m, ldelock_core::Arrangement::Bl))
        .collect()
}

#[test]
fn resistive_divider_midpoint() {
    let (_, circ) = compile("V1 1 0 DC 1\nR1 1 2 1k\nR2 2 0 1k\n");
    let dc = dc_operating_point(&circ, &[], &SimOptions::default(), None).unwrap();
    assert!(dc.converged);
    assert!((dc.voltage("2") - 0.5).abs() < 1e-12);
    assert!((dc.voltage("1") - 1.0).abs() < 1e-12);
    // Source branch current: 1 V across 2 kOhm.
    assert!((dc.device_currents["V1"] + 0.5e-3).abs() < 1e-12);
}

/// Diode-connected NMOS pulled to 1 V through 10 kOhm. The gate-drain node
/// solves (k/2)(v - vth)^2 = (1 - v)/R, a quadratic with root
/// v = (3 + sqrt(13)) / 10 for k = 1 mA/V^2, vth = 0.4, lambda = 0.
#[test]
fn diode_connected_nmos_matches_quadratic_root() {
    let src = "\
V1 1 0 DC 1
R1 1 2 10k
M1 2 2 0 0 NMOS SVT W=1u L=1u
.model NMOS SVT kfactor=1m vth0=0.4 lambda=0
";
    let (net, circ) = compile(src);
    let params = bl_params(&net);
    let dc = dc_operating_point(&circ, &params, &SimOptions::default(), None).unwrap();
    assert!(dc.converged);
    // Independent oracle: 5v^2 - 3v - 0.2 = 0, positive root.
    let v_oracle = (3.0 + 13.0f64.sqrt()) / 10.0;
    assert!(
        (dc.voltage("2") - v_oracle).abs() < 1e-6,
        "simulated {} vs oracle {v_oracle}",
        dc.voltage("2")
    );
}

#[test]
fn kcl_residual_bound_holds_at_solution() {
    let src = "\
VDD vdd 0 DC 1.8
VB g 0 DC 0.65
R1 vdd d 10k
M1 d g 0 0 NMOS SVT W=1u L=100n
";
    let (net, circ) = compile(src);
    let params = bl_params(&net);
    let opts = SimOptions::default();
    let dc = dc_operating_point(&circ, &params, &opts, None).unwrap();
    assert!(dc.converged);
    assert!(
        dc.residual < opts.dc_tol,
        "KCL residual {} exceeds {}",
        dc.residual,
        opts.dc_tol
    );
}

#[test]
fn floating_capacitor_node_is_singular() {
    let src = "\
V1 1 0 DC 1
R1 1 2 1k
R2 2 0 1k
C1 2 3 1u
C2 3 0 1u
";
    let net = parse(src).unwrap();
    let err = match CompiledCircuit::compile(&net, &SimOptions::default()) {
        Ok(_) => panic!("expected a singular system"),
        Err(e) => e,
    };
    match err {
        SimError::SingularSystem { context } => assert!(context.contains("3"), "{context}"),
        other => panic!("expected singular system, got {other:?}"),
    }
}

/// Energy balance: power delivered by the sources equals the power
/// dissipated in resistors and transistor channels.
#[test]
fn dc_energy_balance() {
    let src = "\
VDD vdd 0 DC 1.8
VB g 0 DC 0.7
IB vdd b1 DC 20u
R0 b1 0 40k
R1 vdd d 10k
R2 d 0 90k
M1 d g 0 0 NMOS SVT W=2u L=100n
";
    let (net, circ) = compile(src);
    let params = bl_params(&net);
    let dc = dc_operating_point(&circ, &params, &SimOptions::default(), None).unwrap();
    assert!(dc.converged);

    let mut delivered = 0.0;
    let mut dissipated = 0.0;
    for dev in &net.devices {
        match dev {
            ldelock_core::netlist::Device::Resistor(r) => {
                let dv = dc.voltage(&r.a) - dc.voltage(&r.b);
                dissipated += dv * dv / r.ohms;
            }
            ldelock_core::netlist::Device::VSource(v) => {
                // Branch current flows pos -> neg through the source.
                delivered += v.dc * -dc.device_currents[&v.name];
            }
            ldelock_core::netlist::Device::ISource(i) => {
                let dv = dc.voltage(&i.pos) - dc.voltage(&i.neg);
                delivered += -dv * i.dc;
            }
            ldelock_core::netlist::Device::Mosfet(m) => {
                let vds = dc.voltage(&m.drain) - dc.voltage(&m.source);
                dissipated += dc.device_currents[&m.name] * vds;
            }
            _ => {}
        }
    }
    assert!(
        (delivered - dissipated).abs() < 1e-9,
        "delivered {delivered} vs dissipated {dissipated}"
    );
}

#[test]
fn rc_low_pass_corner() {
    let src = "\
V1 in 0 DC 0 AC 1
R1 in out 1k
C1 out 0 1u
.ac dec 10 1 1meg
.probe out=out
";
    let net = parse(src).unwrap();
    let ev = Evaluator::new(net, LdeTable::builtin(), SimOptions::default()).unwrap();
    let m = ev.eval_baseline().unwrap();
    let f_oracle = 1.0 / (2.0 * std::f64::consts::PI * 1e3 * 1e-6);
    assert!(
        (m.bw_3db_hz - f_oracle).abs() / f_oracle < 0.01,
        "3 dB point {} vs 1/(2 pi R C) = {f_oracle}",
        m.bw_3db_hz
    );
    assert!(m.gain_db.abs() < 0.01, "passband gain {}", m.gain_db);
    assert!(!m.bw_saturated);
    assert_eq!(m.gain_sign, Sign::Plus);
}

#[test]
fn resistive_divider_flat_response() {
    let src = "\
V1 in 0 DC 0 AC 1
R1 in out 1k
R2 out 0 1k
.ac dec 10 1 1meg
.probe out=out
";
    let net = parse(src).unwrap();
    let (net2, circ) = compile(&net.print());
    let dc = dc_operating_point(&circ, &[], &SimOptions::default(), None).unwrap();
    let freqs = log_grid(10, 1.0, 1e6);
    let resp = ac_sweep(&circ, &[], &dc, &SimOptions::default(), &freqs, "OUT").unwrap();
    for h in &resp.transfer {
        assert!((h.norm() - 0.5).abs() < 1e-12);
        assert!(h.arg().abs() < 1e-12, "phase {} not 0", h.arg());
    }
    let m = extract_metrics(&resp, &dc, &circ, &[], &net2.probe);
    assert!(m.bw_saturated);
    assert_eq!(m.bw_3db_hz, *resp.frequencies.last().unwrap());
}

/// Textbook single-pole response H = 1000 / (1 + j f/1kHz) fed straight
/// into the extractor: 60 dB gain, 1 kHz corner, 90 degree phase margin.
#[test]
fn single_pole_metrics() {
    let (net, circ) = compile("V1 1 0 DC 1\nR1 1 2 1k\nR2 2 0 1k\n.probe out=2\n");
    let dc = dc_operating_point(&circ, &[], &SimOptions::default(), None).unwrap();
    let freqs = log_grid(10, 1.0, 1e9);
    let transfer: Vec<Complex64> = freqs
        .iter()
        .map(|&f| Complex64::new(1000.0, 0.0) / Complex64::new(1.0, f / 1e3))
        .collect();
    let resp = AcResponse {
        frequencies: freqs,
        transfer,
    };
    let m = extract_metrics(&resp, &dc, &circ, &[], &net.probe);
    assert!((m.gain_db - 60.0).abs() < 1e-4);
    assert!((m.bw_3db_hz - 1e3).abs() / 1e3 < 0.02);
    let pm = m.phase_margin_deg.expect("unity crossing exists");
    assert!((pm - 90.0).abs() < 1.0, "phase margin {pm}");
}

#[test]
fn attenuator_has_no_unity_crossing() {
    let (net, circ) = compile("V1 1 0 DC 1\nR1 1 2 1k\nR2 2 0 1k\n.probe out=2\n");
    let dc = dc_operating_point(&circ, &[], &SimOptions::default(), None).unwrap();
    let freqs = log_grid(10, 1.0, 1e9);
    let transfer: Vec<Complex64> = freqs
        .iter()
        .map(|&f| Complex64::new(0.5, 0.0) / Complex64::new(1.0, f / 1e3))
        .collect();
    let resp = AcResponse {
        frequencies: freqs,
        transfer,
    };
    let m = extract_metrics(&resp, &dc, &circ, &[], &net.probe);
    assert_eq!(m.phase_margin_deg, None);
}

/// Common-source amplifier: phase approaches -90 degrees one decade above
/// the output pole, and the AC gain at the lowest frequency matches a DC
/// finite-difference gain.
#[test]
fn common_source_amplifier_checks() {
    let src = "\
VDD vdd 0 DC 1.8
VIN g 0 DC 0.65 AC 1
R1 vdd d 10k
C1 d 0 10p
M1 d g 0 0 NMOS SVT W=1u L=100n
.ac dec 10 1 1g
.probe out=d
";
    let net = parse(src).unwrap();
    let ev = Evaluator::new(net.clone(), LdeTable::builtin(), SimOptions::default()).unwrap();
    let m = ev.eval_baseline().unwrap();
    assert_eq!(m.gain_sign, Sign::Minus, "common source inverts");
    assert!(m.gain_db > 10.0, "gain {} dB", m.gain_db);

    // Phase one decade above the 3 dB corner: within 6 degrees of -90
    // relative to the passband phase (the response is single-pole there).
    let (_, circ) = compile(src);
    let params = bl_params(&net);
    let dc = dc_operating_point(&circ, &params, &SimOptions::default(), None).unwrap();
    let freqs = vec![1.0, m.bw_3db_hz * 10.0];
    let resp = ac_sweep(&circ, &params, &dc, &SimOptions::default(), &freqs, "D").unwrap();
    let lag = (resp.transfer[0].arg() - resp.transfer[1].arg()).to_degrees();
    assert!((lag - 90.0).abs() < 6.0, "phase lag {lag}");

    // DC finite-difference gain oracle: perturb the input +-1 uV.
    let h = 1e-6;
    let gain_fd = {
        let mut vals = Vec::new();
        for delta in [h, -h] {
            let mut pert = net.clone();
            for dev in &mut pert.devices {
                if let ldelock_core::netlist::Device::VSource(v) = dev {
                    if v.name == "VIN" {
                        v.dc += delta;
                    }
                }
            }
            let circ_p = CompiledCircuit::compile(&pert, &SimOptions::default()).unwrap();
            let dc_p =
                dc_operating_point(&circ_p, &params, &SimOptions::default(), None).unwrap();
            assert!(dc_p.converged);
            vals.push(dc_p.voltage("D"));
        }
        (vals[0] - vals[1]).abs() / (2.0 * h)
    };
    let gain_ac = 10f64.powf(m.gain_db / 20.0);
    assert!(
        (gain_ac - gain_fd).abs() / gain_fd < 0.01,
        "AC gain {gain_ac} vs DC finite-difference {gain_fd}"
    );
}

/// Metric extraction is stable under grid refinement.
#[test]
fn grid_refinement_invariance() {
    let base = "\
V1 in 0 DC 0 AC 1
R1 in out 1k
C1 out 0 1u
.probe out=out
";
    let run = |ppd: u32| {
        let src = format!("{base}.ac dec {ppd} 1 1meg\n");
        let net = parse(&src).unwrap();
        let ev = Evaluator::new(net, LdeTable::builtin(), SimOptions::default()).unwrap();
        ev.eval_baseline().unwrap()
    };
    let coarse = run(10);
    let fine = run(20);
    assert!((coarse.gain_db - fine.gain_db).abs() < 0.01);
    assert!((coarse.bw_3db_hz - fine.bw_3db_hz).abs() / fine.bw_3db_hz < 0.02);
}
