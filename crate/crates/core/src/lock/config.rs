//! Lock-configuration file parser.
//!
//! Line format, `#` comments allowed:
//!
//! ```text
//! seed=42
//! flatten_fingers=true
//! lde=path/to/table.tbl
//! arrange P1 SOD
//! group P7 P8 add=6
//! single N17 add=1
//! guard_band=67,70
//! spec gain_db_min=70 pm_deg_min=45 power_w_min=1.1m power_w_max=1.2m
//! alarm negative_gain
//! ```
//!
//! `arrange` states the designer's (correct) arrangement of a grouped
//! transistor; ungrouped transistors are baseline by construction. Values
//! accept the same unit suffixes as the netlist format.

use super::{AlarmPredicate, LockPolicy};
use crate::lde::LdeTable;
use crate::netlist::{Arrangement, SpecThresholds};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        message: message.into(),
    }
}

/// One group request: member transistors plus the number of decoy couples
/// to add around the designer's couple.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSpec {
    pub members: Vec<String>,
    pub added: usize,
}

/// Parsed lock configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct LockSpec {
    pub groups: Vec<GroupSpec>,
    pub arrangements: BTreeMap<String, Arrangement>,
    pub policy: LockPolicy,
    pub flatten_fingers: bool,
    pub seed: Option<u64>,
    /// Shift-table file referenced by the config; empty = built-in table.
    pub lde_path: Option<String>,
    pub lde: LdeTable,
}

impl Default for LockSpec {
    fn default() -> Self {
        LockSpec {
            groups: Vec::new(),
            arrangements: BTreeMap::new(),
            policy: LockPolicy::default(),
            flatten_fingers: true,
            seed: None,
            lde_path: None,
            lde: LdeTable::builtin(),
        }
    }
}

/// Engineering-notation number (`1.1m`, `45k`, `7e8`).
pub fn parse_number(s: &str) -> Option<f64> {
    let split = s
        .char_indices()
        .find(|(i, c)| {
            c.is_ascii_alphabetic()
                && !matches!(&s[..*i], "" | "-" | "+")
                && !(matches!(c, 'e' | 'E')
                    && s[*i + c.len_utf8()..]
                        .chars()
                        .next()
                        .is_some_and(|n| n.is_ascii_digit() || n == '-' || n == '+'))
        })
        .map(|(i, _)| i)
        .unwrap_or(s.len());
    let (num, suffix) = s.split_at(split);
    let base: f64 = num.parse().ok()?;
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
        _ => return None,
    };
    Some(base * mult)
}

fn parse_spec_fields(
    toks: &[&str],
    spec: &mut SpecThresholds,
    line: usize,
) -> Result<(), ConfigError> {
    for tok in toks {
        let (key, val) = tok
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected key=value, got `{tok}`")))?;
        let v = parse_number(val).ok_or_else(|| err(line, format!("invalid number `{val}`")))?;
        match key.to_ascii_lowercase().as_str() {
            "gain_db_min" => spec.gain_db_min = Some(v),
            "pm_deg_min" => spec.pm_deg_min = Some(v),
            "power_w_min" => spec.power_w_min = Some(v),
            "power_w_max" => spec.power_w_max = Some(v),
            "bw_hz_min" => spec.bw_hz_min = Some(v),
            "bw_hz_max" => spec.bw_hz_max = Some(v),
            other => return Err(err(line, format!("unknown spec field `{other}`"))),
        }
    }
    Ok(())
}

pub fn parse_lock_config(text: &str) -> Result<LockSpec, ConfigError> {
    let mut spec = LockSpec::default();
    for (lineno0, raw) in text.lines().enumerate() {
        let line = lineno0 + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        let head = toks[0].to_ascii_lowercase();
        match head.as_str() {
            "group" => {
                if toks.len() != 4 {
                    return Err(err(line, "expected `group A B add=N`"));
                }
                let added = parse_add(toks[3], line)?;
                spec.groups.push(GroupSpec {
                    members: vec![toks[1].to_ascii_uppercase(), toks[2].to_ascii_uppercase()],
                    added,
                });
            }
            "single" => {
                if toks.len() != 3 {
                    return Err(err(line, "expected `single A add=N`"));
                }
                let added = parse_add(toks[2], line)?;
                spec.groups.push(GroupSpec {
                    members: vec![toks[1].to_ascii_uppercase()],
                    added,
                });
            }
            "arrange" => {
                if toks.len() != 3 {
                    return Err(err(line, "expected `arrange NAME ARRANGEMENT`"));
                }
                let arr = Arrangement::from_str_ci(toks[2])
                    .ok_or_else(|| err(line, format!("unknown arrangement `{}`", toks[2])))?;
                spec.arrangements.insert(toks[1].to_ascii_uppercase(), arr);
            }
            "spec" => parse_spec_fields(&toks[1..], &mut spec.policy.spec, line)?,
            "alarm" => {
                if toks.len() != 2 {
                    return Err(err(line, "expected `alarm PREDICATE`"));
                }
                match toks[1].to_ascii_lowercase().as_str() {
                    "negative_gain" => spec.policy.alarms.push(AlarmPredicate::NegativeGain),
                    other => return Err(err(line, format!("unknown alarm `{other}`"))),
                }
            }
            _ => {
                let (key, val) = trimmed
                    .split_once('=')
                    .ok_or_else(|| err(line, format!("unknown directive `{}`", toks[0])))?;
                match key.trim().to_ascii_lowercase().as_str() {
                    "seed" => {
                        spec.seed = Some(val.trim().parse().map_err(|_| {
                            err(line, format!("invalid seed `{}`", val.trim()))
                        })?)
                    }
                    "flatten_fingers" => {
                        spec.flatten_fingers = match val.trim() {
                            "true" | "1" => true,
                            "false" | "0" => false,
                            other => {
                                return Err(err(line, format!("invalid boolean `{other}`")))
                            }
                        }
                    }
                    "lde" => spec.lde_path = Some(val.trim().to_string()),
                    "guard_band" => {
                        let (a, b) = val
                            .split_once(',')
                            .ok_or_else(|| err(line, "expected `guard_band=a,b`"))?;
                        let a = parse_number(a.trim())
                            .ok_or_else(|| err(line, format!("invalid number `{a}`")))?;
                        let b = parse_number(b.trim())
                            .ok_or_else(|| err(line, format!("invalid number `{b}`")))?;
                        if a >= b {
                            return Err(err(line, "guard band needs a < b"));
                        }
                        spec.policy.guard_band = Some((a, b));
                    }
                    other => return Err(err(line, format!("unknown directive `{other}`"))),
                }
            }
        }
    }
    Ok(spec)
}

fn parse_add(tok: &str, line: usize) -> Result<usize, ConfigError> {
    let val = tok
        .strip_prefix("add=")
        .or_else(|| tok.strip_prefix("ADD="))
        .ok_or_else(|| err(line, format!("expected add=N, got `{tok}`")))?;
    val.parse()
        .map_err(|_| err(line, format!("invalid count `{val}`")))
}
