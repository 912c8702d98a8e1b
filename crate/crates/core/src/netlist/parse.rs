//! Line-based parser for the netlist format.

use super::{
    AcDirective, AcStimulus, Capacitor, Device, DeviceKind, ISource, ModelCard, Mosfet, Netlist,
    NetlistError, ProbeDirective, Resistor, SpecThresholds, VSource, VtFlavor, GROUND,
};
use std::collections::{HashMap, HashSet};

/// A token with its 1-based source column.
struct Tok<'a> {
    text: &'a str,
    col: usize,
}

fn tokenize(line: &str) -> Vec<Tok<'_>> {
    let mut toks = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                toks.push(Tok {
                    text: &line[s..i],
                    col: s + 1,
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        toks.push(Tok {
            text: &line[s..],
            col: s + 1,
        });
    }
    toks
}

fn syntax(line: usize, col: usize, message: impl Into<String>) -> NetlistError {
    NetlistError::Syntax {
        line,
        col,
        message: message.into(),
    }
}

/// Expand a value with an optional engineering suffix (f/p/n/u/m/k/meg/g).
fn parse_value(tok: &Tok<'_>, line: usize) -> Result<f64, NetlistError> {
    let s = tok.text;
    let split = s
        .char_indices()
        .find(|(i, c)| {
            c.is_ascii_alphabetic() && !matches!(&s[..*i], "" | "-" | "+")
                // allow the exponent marker of a plain float
                && !(matches!(c, 'e' | 'E')
                    && s[*i + c.len_utf8()..]
                        .chars()
                        .next()
                        .is_some_and(|n| n.is_ascii_digit() || n == '-' || n == '+'))
        })
        .map(|(i, _)| i)
        .unwrap_or(s.len());
    let (num, suffix) = s.split_at(split);
    let base: f64 = num
        .parse()
        .map_err(|_| syntax(line, tok.col, format!("invalid number `{s}`")))?;
    let mult = match suffix.to_ascii_lowercase().as_str() {
        "" => 1.0,
        "f" => 1e-15,
        "p" => 1e-12,
        "n" => 1e-9,
        "u" => 1e-6,
        "m" => 1e-3,
        "k" => 1e3,
        "meg" => 1e6,
        "g" => 1e9,
        other => {
            return Err(syntax(
                line,
                tok.col,
                format!("unknown unit suffix `{other}` in `{s}`"),
            ))
        }
    };
    Ok(base * mult)
}

fn parse_kind(tok: &Tok<'_>, line: usize) -> Result<DeviceKind, NetlistError> {
    match tok.text.to_ascii_uppercase().as_str() {
        "NMOS" => Ok(DeviceKind::Nmos),
        "PMOS" => Ok(DeviceKind::Pmos),
        other => Err(syntax(
            line,
            tok.col,
            format!("expected NMOS or PMOS, got `{other}`"),
        )),
    }
}

fn parse_flavor(tok: &Tok<'_>, line: usize) -> Result<VtFlavor, NetlistError> {
    match tok.text.to_ascii_uppercase().as_str() {
        "HVT" => Ok(VtFlavor::Hvt),
        "SVT" => Ok(VtFlavor::Svt),
        "LVT" => Ok(VtFlavor::Lvt),
        other => Err(syntax(
            line,
            tok.col,
            format!("expected HVT, SVT or LVT, got `{other}`"),
        )),
    }
}

/// Split a `KEY=value` token.
fn split_kv<'a>(tok: &Tok<'a>, line: usize) -> Result<(String, Tok<'a>), NetlistError> {
    let eq = tok
        .text
        .find('=')
        .ok_or_else(|| syntax(line, tok.col, format!("expected KEY=value, got `{}`", tok.text)))?;
    let key = tok.text[..eq].to_ascii_uppercase();
    let val = Tok {
        text: &tok.text[eq + 1..],
        col: tok.col + eq + 1,
    };
    if val.text.is_empty() {
        return Err(syntax(line, val.col, format!("missing value for `{key}`")));
    }
    Ok((key, val))
}

struct LineCtx<'a> {
    toks: Vec<Tok<'a>>,
    line: usize,
}

impl<'a> LineCtx<'a> {
    fn need(&self, i: usize, what: &str) -> Result<&Tok<'a>, NetlistError> {
        self.toks.get(i).ok_or_else(|| {
            let col = self.toks.last().map(|t| t.col + t.text.len()).unwrap_or(1);
            syntax(self.line, col, format!("expected {what}"))
        })
    }

    fn node(&self, i: usize, what: &str) -> Result<String, NetlistError> {
        Ok(self.need(i, what)?.text.to_ascii_uppercase())
    }
}

/// Parse two-terminal source tail: `[DC] value [AC mag [phase_deg]]`.
fn parse_source_tail(
    ctx: &LineCtx<'_>,
    mut i: usize,
) -> Result<(f64, Option<AcStimulus>), NetlistError> {
    let mut tok = ctx.need(i, "source value")?;
    if tok.text.eq_ignore_ascii_case("DC") {
        i += 1;
        tok = ctx.need(i, "DC value")?;
    }
    let dc = parse_value(tok, ctx.line)?;
    i += 1;
    let mut ac = None;
    if let Some(t) = ctx.toks.get(i) {
        if t.text.eq_ignore_ascii_case("AC") {
            let mag = parse_value(ctx.need(i + 1, "AC magnitude")?, ctx.line)?;
            let phase_deg = match ctx.toks.get(i + 2) {
                Some(p) => {
                    i += 1;
                    parse_value(p, ctx.line)?
                }
                None => 0.0,
            };
            ac = Some(AcStimulus {
                magnitude: mag,
                phase_deg,
            });
            i += 2;
        }
    }
    if let Some(extra) = ctx.toks.get(i) {
        return Err(syntax(
            ctx.line,
            extra.col,
            format!("unexpected trailing token `{}`", extra.text),
        ));
    }
    Ok((dc, ac))
}

/// Parse and validate a netlist from source text.
pub fn parse(text: &str) -> Result<Netlist, NetlistError> {
    let mut title = String::new();
    let mut devices: Vec<Device> = Vec::new();
    let mut device_lines: Vec<usize> = Vec::new();
    let mut ac: Option<AcDirective> = None;
    let mut spec = SpecThresholds::default();
    let mut probe = ProbeDirective::default();
    let mut model_overrides: Vec<(DeviceKind, VtFlavor, ModelCard)> = Vec::new();
    let mut seen_comment = false;

    for (lineno0, raw) in text.lines().enumerate() {
        let line = lineno0 + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('*') {
            if !seen_comment {
                title = rest.trim().to_string();
                seen_comment = true;
            }
            continue;
        }
        seen_comment = true;

        let ctx = LineCtx {
            toks: tokenize(raw),
            line,
        };
        let head = &ctx.toks[0];
        let name = head.text.to_ascii_uppercase();
        let first = name.chars().next().unwrap();

        match first {
            'R' | 'C' => {
                let a = ctx.node(1, "node")?;
                let b = ctx.node(2, "node")?;
                let value = parse_value(ctx.need(3, "value")?, line)?;
                if value <= 0.0 {
                    return Err(syntax(
                        line,
                        ctx.toks[3].col,
                        format!("{name}: value must be positive"),
                    ));
                }
                if let Some(extra) = ctx.toks.get(4) {
                    return Err(syntax(
                        line,
                        extra.col,
                        format!("unexpected trailing token `{}`", extra.text),
                    ));
                }
                let dev = if first == 'R' {
                    Device::Resistor(Resistor {
                        name,
                        a,
                        b,
                        ohms: value,
                    })
                } else {
                    Device::Capacitor(Capacitor {
                        name,
                        a,
                        b,
                        farads: value,
                    })
                };
                devices.push(dev);
                device_lines.push(line);
            }
            'V' | 'I' => {
                let pos = ctx.node(1, "node")?;
                let neg = ctx.node(2, "node")?;
                let (dc, ac_stim) = parse_source_tail(&ctx, 3)?;
                let dev = if first == 'V' {
                    Device::VSource(VSource {
                        name,
                        pos,
                        neg,
                        dc,
                        ac: ac_stim,
                    })
                } else {
                    Device::ISource(ISource {
                        name,
                        pos,
                        neg,
                        dc,
                        ac: ac_stim,
                    })
                };
                devices.push(dev);
                device_lines.push(line);
            }
            'M' => {
                let drain = ctx.node(1, "drain node")?;
                let gate = ctx.node(2, "gate node")?;
                let source = ctx.node(3, "source node")?;
                let bulk = ctx.node(4, "bulk node")?;
                let kind = parse_kind(ctx.need(5, "device kind")?, line)?;
                let flavor = parse_flavor(ctx.need(6, "vt flavor")?, line)?;
                let mut width = None;
                let mut length = None;
                let mut fingers = 1u32;
                let mut mult = 1u32;
                for tok in &ctx.toks[7..] {
                    let (key, val) = split_kv(tok, line)?;
                    match key.as_str() {
                        "W" => width = Some(parse_value(&val, line)?),
                        "L" => length = Some(parse_value(&val, line)?),
                        "NF" | "M" => {
                            let v = parse_value(&val, line)?;
                            if v < 1.0 || v.fract() != 0.0 {
                                return Err(syntax(
                                    line,
                                    val.col,
                                    format!("{key} must be an integer >= 1"),
                                ));
                            }
                            if key == "NF" {
                                fingers = v as u32;
                            } else {
                                mult = v as u32;
                            }
                        }
                        other => {
                            return Err(syntax(
                                line,
                                tok.col,
                                format!("unknown MOSFET parameter `{other}`"),
                            ))
                        }
                    }
                }
                let width =
                    width.ok_or_else(|| syntax(line, head.col, "MOSFET missing W= parameter"))?;
                let length =
                    length.ok_or_else(|| syntax(line, head.col, "MOSFET missing L= parameter"))?;
                if width <= 0.0 || length <= 0.0 {
                    return Err(syntax(line, head.col, "W and L must be positive"));
                }
                devices.push(Device::Mosfet(Mosfet {
                    name,
                    kind,
                    flavor,
                    drain,
                    gate,
                    source,
                    bulk,
                    width,
                    length,
                    fingers,
                    mult,
                    model: ModelCard::default_for(kind, flavor),
                }));
                device_lines.push(line);
            }
            '.' => match name.as_str() {
                ".AC" => {
                    let mode = ctx.need(1, "sweep type")?;
                    if !mode.text.eq_ignore_ascii_case("dec") {
                        return Err(syntax(line, mode.col, "only `dec` sweeps are supported"));
                    }
                    let points = parse_value(ctx.need(2, "points per decade")?, line)?;
                    let fstart = parse_value(ctx.need(3, "start frequency")?, line)?;
                    let fstop = parse_value(ctx.need(4, "stop frequency")?, line)?;
                    if points < 2.0 || points.fract() != 0.0 {
                        return Err(syntax(
                            line,
                            ctx.toks[2].col,
                            "points per decade must be an integer >= 2",
                        ));
                    }
                    if fstart <= 0.0 || fstop <= fstart {
                        return Err(syntax(line, ctx.toks[3].col, "need 0 < fstart < fstop"));
                    }
                    ac = Some(AcDirective {
                        points_per_decade: points as u32,
                        fstart,
                        fstop,
                    });
                }
                ".SPEC" => {
                    for tok in &ctx.toks[1..] {
                        let (key, val) = split_kv(tok, line)?;
                        let v = parse_value(&val, line)?;
                        match key.as_str() {
                            "GAIN_DB_MIN" => spec.gain_db_min = Some(v),
                            "PM_DEG_MIN" => spec.pm_deg_min = Some(v),
                            "POWER_W_MIN" => spec.power_w_min = Some(v),
                            "POWER_W_MAX" => spec.power_w_max = Some(v),
                            "BW_HZ_MIN" => spec.bw_hz_min = Some(v),
                            "BW_HZ_MAX" => spec.bw_hz_max = Some(v),
                            other => {
                                return Err(syntax(
                                    line,
                                    tok.col,
                                    format!("unknown spec field `{other}`"),
                                ))
                            }
                        }
                    }
                }
                ".PROBE" => {
                    for tok in &ctx.toks[1..] {
                        let (key, val) = split_kv(tok, line)?;
                        let v = val.text.to_ascii_uppercase();
                        match key.as_str() {
                            "OUT" => probe.out = Some(v),
                            "IN" => probe.input = Some(v),
                            "GM" => probe.gm_device = Some(v),
                            "BRANCH" => probe.branches.push(v),
                            other => {
                                return Err(syntax(
                                    line,
                                    tok.col,
                                    format!("unknown probe field `{other}`"),
                                ))
                            }
                        }
                    }
                }
                ".MODEL" => {
                    let kind = parse_kind(ctx.need(1, "device kind")?, line)?;
                    let flavor = parse_flavor(ctx.need(2, "vt flavor")?, line)?;
                    let mut card = ModelCard::default_for(kind, flavor);
                    for tok in &ctx.toks[3..] {
                        let (key, val) = split_kv(tok, line)?;
                        let v = parse_value(&val, line)?;
                        match key.as_str() {
                            "KFACTOR" | "K" => card.kfactor = v,
                            "VTH0" => card.vth0 = v,
                            "LAMBDA" => card.lambda = v,
                            other => {
                                return Err(syntax(
                                    line,
                                    tok.col,
                                    format!("unknown model parameter `{other}`"),
                                ))
                            }
                        }
                    }
                    if card.kfactor <= 0.0 {
                        return Err(syntax(line, head.col, "kfactor must be positive"));
                    }
                    if card.vth0 < 0.0 {
                        return Err(syntax(
                            line,
                            head.col,
                            "vth0 is a magnitude and must be non-negative",
                        ));
                    }
                    if card.lambda < 0.0 {
                        return Err(syntax(line, head.col, "lambda must be non-negative"));
                    }
                    model_overrides.retain(|(k, f, _)| !(*k == kind && *f == flavor));
                    model_overrides.push((kind, flavor, card));
                }
                ".END" => break,
                other => {
                    return Err(syntax(line, head.col, format!("unknown directive `{other}`")))
                }
            },
            other => {
                return Err(syntax(
                    line,
                    head.col,
                    format!("unknown element type `{other}`"),
                ))
            }
        }
    }

    // Resolve model cards onto MOSFETs.
    for dev in &mut devices {
        if let Device::Mosfet(m) = dev {
            if let Some((_, _, card)) = model_overrides
                .iter()
                .find(|(k, f, _)| *k == m.kind && *f == m.flavor)
            {
                m.model = *card;
            }
        }
    }

    // Node table in first-appearance order, plus reference counts.
    let mut nodes: Vec<String> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut refcount: HashMap<String, (usize, usize)> = HashMap::new();
    for (dev, &line) in devices.iter().zip(&device_lines) {
        for t in dev.terminals() {
            if seen.insert(t.to_string()) {
                nodes.push(t.to_string());
            }
            let e = refcount.entry(t.to_string()).or_insert((0, line));
            e.0 += 1;
        }
    }

    // Validation: unique device names.
    let mut names: HashSet<String> = HashSet::new();
    for (dev, &line) in devices.iter().zip(&device_lines) {
        if !names.insert(dev.name().to_string()) {
            return Err(NetlistError::DuplicateDevice {
                name: dev.name().to_string(),
                line,
            });
        }
    }

    // Validation: ground present (only for non-empty netlists).
    if !devices.is_empty() && !seen.contains(GROUND) {
        return Err(NetlistError::MissingGround);
    }

    // Validation: no dangling nodes.
    for n in &nodes {
        if n == GROUND {
            continue;
        }
        let (count, line) = refcount[n];
        if count == 1 {
            return Err(NetlistError::DanglingNode {
                node: n.clone(),
                line,
            });
        }
    }

    Ok(Netlist {
        title,
        devices,
        nodes,
        ac,
        spec,
        probe,
        model_overrides,
        device_lines,
    })
}
