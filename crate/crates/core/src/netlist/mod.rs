//! SPICE-subset netlist representation.
//!
//! The file format is a line language, one device per line:
//!
//! ```text
//! * comment
//! Rname n+ n- value
//! Cname n+ n- value
//! Vname n+ n- [DC] volts [AC mag [phase_deg]]
//! Iname n+ n- [DC] amps  [AC mag [phase_deg]]
//! Mname d g s b KIND FLAVOR W=2u L=60n [NF=4] [M=2]
//! .model KIND FLAVOR [kfactor=...] [vth0=...] [lambda=...]
//! .ac dec points fstart fstop
//! .spec gain_db_min=70 pm_deg_min=45 power_w_min=... power_w_max=...
//! .probe out=node [in=node] [gm=device] [branch=device]...
//! ```
//!
//! Values accept the unit suffixes f/p/n/u/m/k/meg/g (case-insensitive).
//! Keywords and identifiers are case-insensitive; everything is normalized
//! to upper case on parse. Node `0` is ground.
//!
//! Netlists are immutable after validation and safe to share across
//! concurrent evaluators.

mod parse;

pub use parse::parse;

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use thiserror::Error;

/// The ground node name.
pub const GROUND: &str = "0";

/// MOSFET polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DeviceKind {
    Nmos,
    Pmos,
}

impl DeviceKind {
    pub const ALL: [DeviceKind; 2] = [DeviceKind::Nmos, DeviceKind::Pmos];

    pub fn as_str(self) -> &'static str {
        match self {
            DeviceKind::Nmos => "NMOS",
            DeviceKind::Pmos => "PMOS",
        }
    }
}

/// Threshold-voltage flavor of a device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VtFlavor {
    Hvt,
    Svt,
    Lvt,
}

impl VtFlavor {
    pub const ALL: [VtFlavor; 3] = [VtFlavor::Hvt, VtFlavor::Svt, VtFlavor::Lvt];

    pub fn as_str(self) -> &'static str {
        match self {
            VtFlavor::Hvt => "HVT",
            VtFlavor::Svt => "SVT",
            VtFlavor::Lvt => "LVT",
        }
    }
}

/// Layout arrangement of a transistor. `Bl` is the identity arrangement;
/// `Sp` and `Sod` shift the device's threshold voltage and transconductance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arrangement {
    Bl,
    Sp,
    Sod,
}

impl Arrangement {
    pub const ALL: [Arrangement; 3] = [Arrangement::Bl, Arrangement::Sp, Arrangement::Sod];

    pub fn as_str(self) -> &'static str {
        match self {
            Arrangement::Bl => "BL",
            Arrangement::Sp => "SP",
            Arrangement::Sod => "SOD",
        }
    }

    pub fn from_str_ci(s: &str) -> Option<Arrangement> {
        match s.to_ascii_uppercase().as_str() {
            "BL" => Some(Arrangement::Bl),
            "SP" => Some(Arrangement::Sp),
            "SOD" => Some(Arrangement::Sod),
            _ => None,
        }
    }
}

impl fmt::Display for Arrangement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Square-law device model parameters.
///
/// `kfactor` is the transconductance parameter per unit W/L; the effective
/// device K is `kfactor * W/L * fingers * mult`. `vth0` is stored as a
/// positive magnitude; the kind applies the sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub kfactor: f64,
    pub vth0: f64,
    pub lambda: f64,
}

impl ModelCard {
    /// Built-in model card for a (kind, flavor) pair.
    pub fn default_for(kind: DeviceKind, flavor: VtFlavor) -> ModelCard {
        let kfactor = match kind {
            DeviceKind::Nmos => 300e-6,
            DeviceKind::Pmos => 120e-6,
        };
        let vth0 = match flavor {
            VtFlavor::Hvt => 0.55,
            VtFlavor::Svt => 0.45,
            VtFlavor::Lvt => 0.35,
        };
        ModelCard {
            kfactor,
            vth0,
            lambda: 0.08,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mosfet {
    pub name: String,
    pub kind: DeviceKind,
    pub flavor: VtFlavor,
    pub drain: String,
    pub gate: String,
    pub source: String,
    pub bulk: String,
    /// Per-finger channel width in meters.
    pub width: f64,
    /// Channel length in meters.
    pub length: f64,
    pub fingers: u32,
    /// Device multiplicity; `flatten_fingers` folds fingers into this.
    pub mult: u32,
    pub model: ModelCard,
}

impl Mosfet {
    /// Effective width multiplier on the drive strength and capacitances.
    pub fn drive_mult(&self) -> f64 {
        self.fingers as f64 * self.mult as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resistor {
    pub name: String,
    pub a: String,
    pub b: String,
    pub ohms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Capacitor {
    pub name: String,
    pub a: String,
    pub b: String,
    pub farads: f64,
}

/// Small-signal stimulus of an independent source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcStimulus {
    pub magnitude: f64,
    pub phase_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VSource {
    pub name: String,
    pub pos: String,
    pub neg: String,
    pub dc: f64,
    pub ac: Option<AcStimulus>,
}

/// Independent current source; positive current flows from `pos` through
/// the source into `neg`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ISource {
    pub name: String,
    pub pos: String,
    pub neg: String,
    pub dc: f64,
    pub ac: Option<AcStimulus>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Device {
    Mosfet(Mosfet),
    Resistor(Resistor),
    Capacitor(Capacitor),
    VSource(VSource),
    ISource(ISource),
}

impl Device {
    pub fn name(&self) -> &str {
        match self {
            Device::Mosfet(d) => &d.name,
            Device::Resistor(d) => &d.name,
            Device::Capacitor(d) => &d.name,
            Device::VSource(d) => &d.name,
            Device::ISource(d) => &d.name,
        }
    }

    /// Terminal node names, in device order.
    pub fn terminals(&self) -> Vec<&str> {
        match self {
            Device::Mosfet(d) => vec![&d.drain, &d.gate, &d.source, &d.bulk],
            Device::Resistor(d) => vec![&d.a, &d.b],
            Device::Capacitor(d) => vec![&d.a, &d.b],
            Device::VSource(d) => vec![&d.pos, &d.neg],
            Device::ISource(d) => vec![&d.pos, &d.neg],
        }
    }
}

/// Log-spaced AC sweep request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcDirective {
    pub points_per_decade: u32,
    pub fstart: f64,
    pub fstop: f64,
}

/// Performance-spec thresholds carried in the netlist (`.spec`) and
/// overridable by lock/sweep configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpecThresholds {
    pub gain_db_min: Option<f64>,
    pub pm_deg_min: Option<f64>,
    pub power_w_min: Option<f64>,
    pub power_w_max: Option<f64>,
    pub bw_hz_min: Option<f64>,
    pub bw_hz_max: Option<f64>,
}

/// Measurement designations: transfer output node, optional explicit input
/// node, the input-pair device whose gm is reported, and labeled branches.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProbeDirective {
    pub out: Option<String>,
    pub input: Option<String>,
    pub gm_device: Option<String>,
    pub branches: Vec<String>,
}

/// A parsed, validated netlist. Node and device names are upper-cased;
/// `nodes` lists nodes in first-appearance order (including ground).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Netlist {
    pub title: String,
    pub devices: Vec<Device>,
    pub nodes: Vec<String>,
    pub ac: Option<AcDirective>,
    pub spec: SpecThresholds,
    pub probe: ProbeDirective,
    /// Model cards that differ from the built-in defaults, keyed by
    /// (kind, flavor). Kept for canonical printing.
    pub model_overrides: Vec<(DeviceKind, VtFlavor, ModelCard)>,
    /// Source line of each device, parallel to `devices`. Diagnostic only;
    /// excluded from structural equality.
    pub device_lines: Vec<usize>,
}

impl PartialEq for Netlist {
    fn eq(&self, other: &Self) -> bool {
        self.title == other.title
            && self.devices == other.devices
            && self.nodes == other.nodes
            && self.ac == other.ac
            && self.spec == other.spec
            && self.probe == other.probe
            && self.model_overrides == other.model_overrides
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetlistError {
    #[error("line {line}, col {col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("line {line}: node {node} is referenced only once (dangling)")]
    DanglingNode { node: String, line: usize },
    #[error("line {line}: duplicate device name {name}")]
    DuplicateDevice { name: String, line: usize },
    #[error("netlist has no ground node (node 0)")]
    MissingGround,
}

/// Dense index over non-ground nodes; ground maps to a sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRef {
    Ground,
    Index(usize),
}

/// Node-name-to-index mapping for the MNA unknown vector. Ground is
/// excluded from the unknowns; all other nodes get contiguous indices in
/// first-appearance order.
#[derive(Debug, Clone)]
pub struct NodeIndex {
    map: HashMap<String, usize>,
    names: Vec<String>,
}

impl NodeIndex {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, node: &str) -> NodeRef {
        if node == GROUND {
            NodeRef::Ground
        } else {
            NodeRef::Index(self.map[node])
        }
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

impl Netlist {
    /// Build the dense node index. Deterministic: indices follow the
    /// netlist's first-appearance node order.
    pub fn node_index(&self) -> NodeIndex {
        let mut map = HashMap::new();
        let mut names = Vec::new();
        for n in &self.nodes {
            if n != GROUND {
                map.insert(n.clone(), names.len());
                names.push(n.clone());
            }
        }
        NodeIndex { map, names }
    }

    pub fn mosfets(&self) -> impl Iterator<Item = &Mosfet> {
        self.devices.iter().filter_map(|d| match d {
            Device::Mosfet(m) => Some(m),
            _ => None,
        })
    }

    pub fn find_device(&self, name: &str) -> Option<&Device> {
        let upper = name.to_ascii_uppercase();
        self.devices.iter().find(|d| d.name() == upper)
    }

    /// Source line for diagnostics; 0 when unknown (e.g. synthesized nets).
    pub fn device_line(&self, idx: usize) -> usize {
        self.device_lines.get(idx).copied().unwrap_or(0)
    }

    /// Replace every multi-finger MOSFET by a single-finger device with the
    /// finger count folded into the multiplicity, preserving total drive.
    /// Idempotent; devices without fingers are untouched.
    pub fn flatten_fingers(&self) -> Netlist {
        let mut out = self.clone();
        for dev in &mut out.devices {
            if let Device::Mosfet(m) = dev {
                if m.fingers > 1 {
                    m.mult *= m.fingers;
                    m.fingers = 1;
                }
            }
        }
        out
    }

    /// Canonical serializer. `parse(print(net))` round-trips to a
    /// structurally equal netlist.
    pub fn print(&self) -> String {
        let mut s = String::new();
        if !self.title.is_empty() {
            s.push_str(&format!("* {}\n", self.title));
        }
        for dev in &self.devices {
            match dev {
                Device::Resistor(r) => {
                    s.push_str(&format!("{} {} {} {}\n", r.name, r.a, r.b, r.ohms));
                }
                Device::Capacitor(c) => {
                    s.push_str(&format!("{} {} {} {}\n", c.name, c.a, c.b, c.farads));
                }
                Device::VSource(v) => {
                    s.push_str(&format!("{} {} {} DC {}", v.name, v.pos, v.neg, v.dc));
                    if let Some(ac) = &v.ac {
                        s.push_str(&format!(" AC {} {}", ac.magnitude, ac.phase_deg));
                    }
                    s.push('\n');
                }
                Device::ISource(i) => {
                    s.push_str(&format!("{} {} {} DC {}", i.name, i.pos, i.neg, i.dc));
                    if let Some(ac) = &i.ac {
                        s.push_str(&format!(" AC {} {}", ac.magnitude, ac.phase_deg));
                    }
                    s.push('\n');
                }
                Device::Mosfet(m) => {
                    s.push_str(&format!(
                        "{} {} {} {} {} {} {} W={} L={}",
                        m.name,
                        m.drain,
                        m.gate,
                        m.source,
                        m.bulk,
                        m.kind.as_str(),
                        m.flavor.as_str(),
                        m.width,
                        m.length
                    ));
                    if m.fingers != 1 {
                        s.push_str(&format!(" NF={}", m.fingers));
                    }
                    if m.mult != 1 {
                        s.push_str(&format!(" M={}", m.mult));
                    }
                    s.push('\n');
                }
            }
        }
        for (kind, flavor, card) in &self.model_overrides {
            s.push_str(&format!(
                ".model {} {} kfactor={} vth0={} lambda={}\n",
                kind.as_str(),
                flavor.as_str(),
                card.kfactor,
                card.vth0,
                card.lambda
            ));
        }
        if let Some(ac) = &self.ac {
            s.push_str(&format!(
                ".ac dec {} {} {}\n",
                ac.points_per_decade, ac.fstart, ac.fstop
            ));
        }
        let sp = &self.spec;
        if *sp != SpecThresholds::default() {
            s.push_str(".spec");
            if let Some(v) = sp.gain_db_min {
                s.push_str(&format!(" gain_db_min={v}"));
            }
            if let Some(v) = sp.pm_deg_min {
                s.push_str(&format!(" pm_deg_min={v}"));
            }
            if let Some(v) = sp.power_w_min {
                s.push_str(&format!(" power_w_min={v}"));
            }
            if let Some(v) = sp.power_w_max {
                s.push_str(&format!(" power_w_max={v}"));
            }
            if let Some(v) = sp.bw_hz_min {
                s.push_str(&format!(" bw_hz_min={v}"));
            }
            if let Some(v) = sp.bw_hz_max {
                s.push_str(&format!(" bw_hz_max={v}"));
            }
            s.push('\n');
        }
        let pr = &self.probe;
        if *pr != ProbeDirective::default() {
            s.push_str(".probe");
            if let Some(v) = &pr.out {
                s.push_str(&format!(" out={v}"));
            }
            if let Some(v) = &pr.input {
                s.push_str(&format!(" in={v}"));
            }
            if let Some(v) = &pr.gm_device {
                s.push_str(&format!(" gm={v}"));
            }
            for b in &pr.branches {
                s.push_str(&format!(" branch={b}"));
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_ok(src: &str) -> Netlist {
        parse(src).expect("netlist should parse")
    }

    #[test]
    fn resistor_line_with_suffix() {
        let net = parse_ok("R1 1 0 1k\nR2 1 0 2k\n");
        match &net.devices[0] {
            Device::Resistor(r) => {
                assert_eq!(r.name, "R1");
                assert_eq!(r.a, "1");
                assert_eq!(r.b, "0");
                assert_eq!(r.ohms, 1000.0);
            }
            other => panic!("expected resistor, got {other:?}"),
        }
    }

    #[test]
    fn mosfet_line_field_mapping() {
        let net = parse_ok("M1 d g s b NMOS svt W=2u L=60n\nR1 d 0 1k\nR2 g 0 1k\nR3 s 0 1k\nR4 b 0 1k\n");
        match &net.devices[0] {
            Device::Mosfet(m) => {
                assert_eq!(m.kind, DeviceKind::Nmos);
                assert_eq!(m.flavor, VtFlavor::Svt);
                assert!((m.width - 2e-6).abs() < 1e-18);
                assert!((m.length - 6e-8).abs() < 1e-20);
                assert_eq!(m.fingers, 1);
            }
            other => panic!("expected mosfet, got {other:?}"),
        }
    }

    #[test]
    fn dangling_node_rejected() {
        let err = parse("R1 1 0 1k\nR2 1 x 1k\n").unwrap_err();
        match err {
            NetlistError::DanglingNode { node, .. } => assert_eq!(node, "X"),
            other => panic!("expected dangling node, got {other:?}"),
        }
    }

    #[test]
    fn missing_ground_rejected() {
        let err = parse("R1 1 2 1k\nR2 2 1 1k\n").unwrap_err();
        assert_eq!(err, NetlistError::MissingGround);
    }

    #[test]
    fn duplicate_device_rejected() {
        let err = parse("R1 1 0 1k\nr1 1 0 2k\n").unwrap_err();
        match err {
            NetlistError::DuplicateDevice { name, line } => {
                assert_eq!(name, "R1");
                assert_eq!(line, 2);
            }
            other => panic!("expected duplicate device, got {other:?}"),
        }
    }

    #[test]
    fn flatten_preserves_drive_and_name() {
        let net = parse_ok("M1 d g 0 0 NMOS SVT W=1u L=100n NF=4\nR1 d 0 1k\nR2 g 0 1k\n");
        let flat = net.flatten_fingers();
        match &flat.devices[0] {
            Device::Mosfet(m) => {
                assert_eq!(m.name, "M1");
                assert_eq!(m.fingers, 1);
                assert_eq!(m.mult, 4);
                assert!((m.width - 1e-6).abs() < 1e-18);
                assert_eq!(m.drive_mult(), 4.0);
            }
            other => panic!("expected mosfet, got {other:?}"),
        }
        // Idempotent.
        assert_eq!(flat.flatten_fingers(), flat);
    }

    #[test]
    fn flatten_identity_without_fingers() {
        let net = parse_ok("R1 1 0 1k\nM1 1 1 0 0 NMOS SVT W=1u L=100n\n");
        assert_eq!(net.flatten_fingers(), net);
    }

    #[test]
    fn flatten_two_devices_count_unchanged() {
        let net = parse_ok(
            "M1 a a 0 0 NMOS SVT W=1u L=100n NF=2\nM2 a a 0 0 PMOS SVT W=1u L=100n NF=3\nR1 a 0 1k\n",
        );
        let flat = net.flatten_fingers();
        assert_eq!(flat.devices.len(), net.devices.len());
        for m in flat.mosfets() {
            assert_eq!(m.fingers, 1);
            assert!(m.mult > 1);
        }
    }

    #[test]
    fn node_index_skips_ground_and_is_deterministic() {
        let net = parse_ok("R1 a b 1k\nR2 b 0 1k\nR3 a 0 1k\n");
        let idx = net.node_index();
        assert_eq!(idx.len(), 2);
        assert_eq!(idx.get("A"), NodeRef::Index(0));
        assert_eq!(idx.get("B"), NodeRef::Index(1));
        assert_eq!(idx.get(GROUND), NodeRef::Ground);
        let again = net.node_index();
        assert_eq!(idx.names(), again.names());
    }

    #[test]
    fn node_index_degenerate_single_node() {
        // Ground-only circuit: both resistor terminals on ground.
        let net = parse_ok("R1 0 0 1k\n");
        let idx = net.node_index();
        assert!(idx.is_empty());
    }

    #[test]
    fn print_parse_round_trip() {
        let src = "* two stage test\n\
                   V1 vdd 0 DC 1.8\n\
                   VIN in 0 DC 0.9 AC 1 0\n\
                   R1 vdd out 10k\n\
                   C1 out 0 1p\n\
                   M1 out in 0 0 NMOS SVT W=2u L=100n NF=2\n\
                   .model NMOS SVT kfactor=0.0005 vth0=0.4 lambda=0\n\
                   .ac dec 10 1 1e9\n\
                   .spec gain_db_min=20 pm_deg_min=45\n\
                   .probe out=OUT gm=M1 branch=R1\n";
        let net = parse_ok(src);
        let printed = net.print();
        let reparsed = parse_ok(&printed);
        assert_eq!(net, reparsed);
        // And printing is a fixpoint.
        assert_eq!(printed, reparsed.print());
    }

    #[test]
    fn syntax_error_carries_position() {
        let err = parse("R1 1 0 notanumber\n").unwrap_err();
        match err {
            NetlistError::Syntax { line, col, .. } => {
                assert_eq!(line, 1);
                assert!(col > 1);
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
    }
}
