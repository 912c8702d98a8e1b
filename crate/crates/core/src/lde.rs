//! Arrangement-to-parameter-shift tables and the mapping from an
//! (arrangement, device) pair to effective simulator model parameters.
//!
//! Each (kind, flavor, arrangement) triple carries a deterministic shift of
//! the threshold voltage and the transconductance factor relative to the
//! baseline arrangement, plus standard deviations of the combined
//! process/mismatch variation. The table is total over all
//! 2 kinds x 3 flavors x 3 arrangements, and the BL rows are exact
//! identities.
//!
//! Shift magnitudes are stored as signed fractions (+0.037 = +3.7 %).
//! Default signs are vth_shift >= 0 (|Vth| grows) and gm_shift <= 0 (drive
//! weakens) for SP and SOD; the table file can override either sign per
//! entry.

use crate::netlist::{Arrangement, DeviceKind, Mosfet, VtFlavor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Deterministic parameter shift of one (kind, flavor, arrangement) triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdeEntry {
    /// Signed fractional shift of the threshold-voltage magnitude.
    pub vth_shift: f64,
    /// Signed fractional shift of the transconductance factor.
    pub gm_shift: f64,
}

impl LdeEntry {
    pub const IDENTITY: LdeEntry = LdeEntry {
        vth_shift: 0.0,
        gm_shift: 0.0,
    };
}

/// Combined process + mismatch standard deviations, as fractions of the
/// mean parameter value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariationEntry {
    pub vth_sd: f64,
    pub gm_sd: f64,
}

/// Effective model parameters handed to the simulator after arrangement
/// (and optional Monte Carlo) scaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveParams {
    /// Threshold-voltage magnitude in volts.
    pub vth_eff: f64,
    /// Device transconductance factor in A/V^2, W/L and multiplicity folded in.
    pub kfactor_eff: f64,
    /// Channel-length modulation in 1/V.
    pub lambda: f64,
}

pub type LdeKey = (DeviceKind, VtFlavor, Arrangement);

/// Total map over all 18 (kind, flavor, arrangement) triples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdeTable {
    entries: BTreeMap<LdeKey, LdeEntry>,
    variations: BTreeMap<LdeKey, VariationEntry>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TableError {
    #[error("line {line}: malformed table entry: {message}")]
    MalformedTable { line: usize, message: String },
    #[error("line {line}: BL rows must be identity (vth_shift=0, gm_shift=0)")]
    NonIdentityBaseline { line: usize },
}

/// Deterministic shifts in percent: (kind, flavor, arrangement) ->
/// (|vth| %, |gm| %). BL rows are zero and omitted.
const SHIFT_PCT: [(DeviceKind, VtFlavor, Arrangement, f64, f64); 12] = [
    (DeviceKind::Pmos, VtFlavor::Hvt, Arrangement::Sp, 2.85, 4.76),
    (DeviceKind::Pmos, VtFlavor::Svt, Arrangement::Sp, 3.7, 4.72),
    (DeviceKind::Pmos, VtFlavor::Lvt, Arrangement::Sp, 4.59, 4.68),
    (DeviceKind::Nmos, VtFlavor::Hvt, Arrangement::Sp, 4.05, 1.72),
    (DeviceKind::Nmos, VtFlavor::Svt, Arrangement::Sp, 4.38, 2.54),
    (DeviceKind::Nmos, VtFlavor::Lvt, Arrangement::Sp, 5.0, 2.42),
    (DeviceKind::Pmos, VtFlavor::Hvt, Arrangement::Sod, 6.08, 10.4),
    (DeviceKind::Pmos, VtFlavor::Svt, Arrangement::Sod, 7.9, 10.19),
    (DeviceKind::Pmos, VtFlavor::Lvt, Arrangement::Sod, 9.79, 10.16),
    (DeviceKind::Nmos, VtFlavor::Hvt, Arrangement::Sod, 8.53, 3.7),
    (DeviceKind::Nmos, VtFlavor::Svt, Arrangement::Sod, 9.28, 5.41),
    (DeviceKind::Nmos, VtFlavor::Lvt, Arrangement::Sod, 10.61, 5.09),
];

/// Statistical variation in percent: (kind, flavor, arrangement) ->
/// (vth SD %, gm SD %).
const VARIATION_PCT: [(DeviceKind, VtFlavor, Arrangement, f64, f64); 18] = [
    (DeviceKind::Pmos, VtFlavor::Hvt, Arrangement::Bl, 9.78, 3.55),
    (DeviceKind::Pmos, VtFlavor::Svt, Arrangement::Bl, 10.64, 3.98),
    (DeviceKind::Pmos, VtFlavor::Lvt, Arrangement::Bl, 12.95, 2.90),
    (DeviceKind::Nmos, VtFlavor::Hvt, Arrangement::Bl, 15.34, 3.78),
    (DeviceKind::Nmos, VtFlavor::Svt, Arrangement::Bl, 12.29, 2.85),
    (DeviceKind::Nmos, VtFlavor::Lvt, Arrangement::Bl, 9.73, 5.93),
    (DeviceKind::Pmos, VtFlavor::Hvt, Arrangement::Sp, 9.38, 3.35),
    (DeviceKind::Pmos, VtFlavor::Svt, Arrangement::Sp, 10.12, 3.94),
    (DeviceKind::Pmos, VtFlavor::Lvt, Arrangement::Sp, 12.17, 2.83),
    (DeviceKind::Nmos, VtFlavor::Hvt, Arrangement::Sp, 14.07, 3.63),
    (DeviceKind::Nmos, VtFlavor::Svt, Arrangement::Sp, 11.28, 2.84),
    (DeviceKind::Nmos, VtFlavor::Lvt, Arrangement::Sp, 9.16, 5.98),
    (DeviceKind::Pmos, VtFlavor::Hvt, Arrangement::Sod, 8.97, 3.17),
    (DeviceKind::Pmos, VtFlavor::Svt, Arrangement::Sod, 9.58, 3.91),
    (DeviceKind::Pmos, VtFlavor::Lvt, Arrangement::Sod, 11.37, 2.75),
    (DeviceKind::Nmos, VtFlavor::Hvt, Arrangement::Sod, 12.88, 3.45),
    (DeviceKind::Nmos, VtFlavor::Svt, Arrangement::Sod, 10.34, 2.85),
    (DeviceKind::Nmos, VtFlavor::Lvt, Arrangement::Sod, 8.61, 6.05),
];

impl Default for LdeTable {
    fn default() -> Self {
        Self::builtin()
    }
}

impl LdeTable {
    /// The built-in default table. Vth shifts are positive, gm shifts
    /// negative, BL rows identity.
    pub fn builtin() -> LdeTable {
        let mut entries = BTreeMap::new();
        let mut variations = BTreeMap::new();
        for kind in DeviceKind::ALL {
            for flavor in VtFlavor::ALL {
                entries.insert((kind, flavor, Arrangement::Bl), LdeEntry::IDENTITY);
            }
        }
        for (kind, flavor, arr, vth_pct, gm_pct) in SHIFT_PCT {
            entries.insert(
                (kind, flavor, arr),
                LdeEntry {
                    vth_shift: vth_pct / 100.0,
                    gm_shift: -gm_pct / 100.0,
                },
            );
        }
        for (kind, flavor, arr, vth_pct, gm_pct) in VARIATION_PCT {
            variations.insert(
                (kind, flavor, arr),
                VariationEntry {
                    vth_sd: vth_pct / 100.0,
                    gm_sd: gm_pct / 100.0,
                },
            );
        }
        LdeTable {
            entries,
            variations,
        }
    }

    /// Look up the deterministic shift of a triple. Pure; the table is
    /// total, so lookups never fail.
    pub fn lookup(&self, kind: DeviceKind, flavor: VtFlavor, arr: Arrangement) -> LdeEntry {
        self.entries[&(kind, flavor, arr)]
    }

    pub fn variation(&self, kind: DeviceKind, flavor: VtFlavor, arr: Arrangement) -> VariationEntry {
        self.variations[&(kind, flavor, arr)]
    }

    /// Map a device with an arrangement to effective simulator parameters:
    /// `vth_eff = vth0 * (1 + vth_shift)` and
    /// `kfactor_eff = kfactor * (W/L) * fingers * mult * (1 + gm_shift)`.
    /// Pure and deterministic; BL reproduces the nominal parameters exactly.
    pub fn apply(&self, m: &Mosfet, arr: Arrangement) -> EffectiveParams {
        let entry = self.lookup(m.kind, m.flavor, arr);
        EffectiveParams {
            vth_eff: m.model.vth0 * (1.0 + entry.vth_shift),
            kfactor_eff: m.model.kfactor * (m.width / m.length)
                * m.drive_mult()
                * (1.0 + entry.gm_shift),
            lambda: m.model.lambda,
        }
    }

    /// Draw one (vth, gm) multiplier pair from `Normal(1, sd)` for the
    /// triple. Deterministic for a given seed; meant to multiply onto
    /// [`EffectiveParams`] in Monte Carlo mode.
    pub fn sample_variation(
        &self,
        kind: DeviceKind,
        flavor: VtFlavor,
        arr: Arrangement,
        rng_seed: u64,
    ) -> (f64, f64) {
        let var = self.variation(kind, flavor, arr);
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let draw = |rng: &mut ChaCha8Rng, sd: f64| {
            if sd == 0.0 {
                1.0
            } else {
                Normal::new(1.0, sd).expect("sd >= 0").sample(rng)
            }
        };
        let vth_mult = draw(&mut rng, var.vth_sd);
        let gm_mult = draw(&mut rng, var.gm_sd);
        (vth_mult, gm_mult)
    }

    /// Load a table from file text. Missing triples fall back to the
    /// built-in defaults; explicit entries override them. Format per line:
    ///
    /// ```text
    /// # comment
    /// kind flavor arrangement vth_shift gm_shift vth_sd gm_sd
    /// ```
    ///
    /// with shifts and SDs as fractions. BL rows must keep zero shifts.
    pub fn load(text: &str) -> Result<LdeTable, TableError> {
        let mut table = LdeTable::builtin();
        for (lineno0, raw) in text.lines().enumerate() {
            let line = lineno0 + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let toks: Vec<&str> = trimmed.split_whitespace().collect();
            if toks.len() != 7 {
                return Err(TableError::MalformedTable {
                    line,
                    message: format!("expected 7 fields, got {}", toks.len()),
                });
            }
            let kind = match toks[0].to_ascii_uppercase().as_str() {
                "NMOS" => DeviceKind::Nmos,
                "PMOS" => DeviceKind::Pmos,
                other => {
                    return Err(TableError::MalformedTable {
                        line,
                        message: format!("unknown device kind `{other}`"),
                    })
                }
            };
            let flavor = match toks[1].to_ascii_uppercase().as_str() {
                "HVT" => VtFlavor::Hvt,
                "SVT" => VtFlavor::Svt,
                "LVT" => VtFlavor::Lvt,
                other => {
                    return Err(TableError::MalformedTable {
                        line,
                        message: format!("unknown vt flavor `{other}`"),
                    })
                }
            };
            let arr = Arrangement::from_str_ci(toks[2]).ok_or_else(|| {
                TableError::MalformedTable {
                    line,
                    message: format!("unknown arrangement `{}`", toks[2]),
                }
            })?;
            let mut nums = [0.0f64; 4];
            for (i, t) in toks[3..].iter().enumerate() {
                nums[i] = t.parse().map_err(|_| TableError::MalformedTable {
                    line,
                    message: format!("invalid number `{t}`"),
                })?;
            }
            let [vth_shift, gm_shift, vth_sd, gm_sd] = nums;
            if arr == Arrangement::Bl && (vth_shift != 0.0 || gm_shift != 0.0) {
                return Err(TableError::NonIdentityBaseline { line });
            }
            if vth_shift.abs() > 0.25 || gm_shift.abs() > 0.25 {
                return Err(TableError::MalformedTable {
                    line,
                    message: "shift magnitude exceeds 0.25".into(),
                });
            }
            if vth_sd < 0.0 || gm_sd < 0.0 {
                return Err(TableError::MalformedTable {
                    line,
                    message: "standard deviations must be non-negative".into(),
                });
            }
            table.entries.insert(
                (kind, flavor, arr),
                LdeEntry {
                    vth_shift,
                    gm_shift,
                },
            );
            table
                .variations
                .insert((kind, flavor, arr), VariationEntry { vth_sd, gm_sd });
        }
        Ok(table)
    }

    /// All triples in deterministic order.
    pub fn keys() -> impl Iterator<Item = LdeKey> {
        DeviceKind::ALL.into_iter().flat_map(|k| {
            VtFlavor::ALL
                .into_iter()
                .flat_map(move |f| Arrangement::ALL.into_iter().map(move |a| (k, f, a)))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::ModelCard;

    fn mosfet(kind: DeviceKind, flavor: VtFlavor, model: ModelCard) -> Mosfet {
        Mosfet {
            name: "M1".into(),
            kind,
            flavor,
            drain: "D".into(),
            gate: "G".into(),
            source: "S".into(),
            bulk: "B".into(),
            width: 1e-6,
            length: 1e-7,
            fingers: 1,
            mult: 1,
            model,
        }
    }

    #[test]
    fn lookup_matches_transcribed_values() {
        let t = LdeTable::builtin();
        let e = t.lookup(DeviceKind::Pmos, VtFlavor::Svt, Arrangement::Sp);
        assert!((e.vth_shift.abs() - 0.037).abs() < 1e-12);
        let e = t.lookup(DeviceKind::Nmos, VtFlavor::Lvt, Arrangement::Sod);
        assert!((e.vth_shift.abs() - 0.1061).abs() < 1e-12);
        let e = t.lookup(DeviceKind::Pmos, VtFlavor::Hvt, Arrangement::Bl);
        assert_eq!(e, LdeEntry::IDENTITY);
    }

    #[test]
    fn sod_shift_dominates_sp_for_every_pair() {
        let t = LdeTable::builtin();
        for kind in DeviceKind::ALL {
            for flavor in VtFlavor::ALL {
                let sp = t.lookup(kind, flavor, Arrangement::Sp);
                let sod = t.lookup(kind, flavor, Arrangement::Sod);
                assert!(
                    sod.vth_shift.abs() > sp.vth_shift.abs() && sp.vth_shift.abs() > 0.0,
                    "{kind:?}/{flavor:?}"
                );
            }
        }
    }

    #[test]
    fn apply_example_values() {
        let t = LdeTable::builtin();
        // vth0 = 0.4 V, PMOS SVT SOD, default sign +: 0.4 * 1.079 = 0.4316.
        let m = mosfet(
            DeviceKind::Pmos,
            VtFlavor::Svt,
            ModelCard {
                kfactor: 100e-6,
                vth0: 0.4,
                lambda: 0.1,
            },
        );
        let mut m10 = m.clone();
        m10.width = 1e-6;
        m10.length = 1e-7; // W/L = 10
        let p = t.apply(&m10, Arrangement::Sod);
        assert!((p.vth_eff - 0.4316).abs() < 1e-12);
        // kfactor 100u * 10 * (1 - 0.1019) = 898.1u.
        assert!((p.kfactor_eff - 898.1e-6).abs() < 1e-12);
        assert_eq!(p.lambda, 0.1);
    }

    #[test]
    fn apply_bl_is_nominal_bit_exact() {
        let t = LdeTable::builtin();
        for kind in DeviceKind::ALL {
            for flavor in VtFlavor::ALL {
                let m = mosfet(kind, flavor, ModelCard::default_for(kind, flavor));
                let p = t.apply(&m, Arrangement::Bl);
                assert_eq!(p.vth_eff, m.model.vth0);
                assert_eq!(
                    p.kfactor_eff,
                    m.model.kfactor * (m.width / m.length)
                );
                assert_eq!(p.lambda, m.model.lambda);
            }
        }
    }

    #[test]
    fn apply_monotone_in_gm_shift() {
        let base = LdeTable::builtin();
        let weaker = LdeTable::load("pmos svt sod 0.079 -0.15 0.0958 0.0391").unwrap();
        let m = mosfet(
            DeviceKind::Pmos,
            VtFlavor::Svt,
            ModelCard::default_for(DeviceKind::Pmos, VtFlavor::Svt),
        );
        let p0 = base.apply(&m, Arrangement::Sod);
        let p1 = weaker.apply(&m, Arrangement::Sod);
        assert!(p1.kfactor_eff < p0.kfactor_eff);
    }

    #[test]
    fn sample_degenerate_and_deterministic() {
        let zero = LdeTable::load("nmos svt bl 0 0 0 0").unwrap();
        let (v, g) = zero.sample_variation(DeviceKind::Nmos, VtFlavor::Svt, Arrangement::Bl, 7);
        assert_eq!((v, g), (1.0, 1.0));

        let t = LdeTable::builtin();
        let a = t.sample_variation(DeviceKind::Pmos, VtFlavor::Svt, Arrangement::Bl, 42);
        let b = t.sample_variation(DeviceKind::Pmos, VtFlavor::Svt, Arrangement::Bl, 42);
        assert_eq!(a, b);
        let c = t.sample_variation(DeviceKind::Pmos, VtFlavor::Svt, Arrangement::Bl, 43);
        assert_ne!(a, c);
    }

    #[test]
    fn sample_sd_tracks_table() {
        // BL/pmos/svt vth SD is 10.64 %; at N=10000 the sample SD should be
        // within 5 % relative and the mean within 3 standard errors.
        let t = LdeTable::builtin();
        let n = 10_000;
        let draws: Vec<f64> = (0..n)
            .map(|i| {
                t.sample_variation(DeviceKind::Pmos, VtFlavor::Svt, Arrangement::Bl, i as u64)
                    .0
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let sd = var.sqrt();
        assert!((sd - 0.1064).abs() / 0.1064 < 0.05, "sample sd {sd}");
        let se = 0.1064 / (n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "sample mean {mean}");
    }

    #[test]
    fn load_empty_is_builtin() {
        let t = LdeTable::load("").unwrap();
        assert_eq!(t, LdeTable::builtin());
    }

    #[test]
    fn load_single_override() {
        let t = LdeTable::load("# comment\n\npmos svt sp 0.02 -0.01 0.1 0.03\n").unwrap();
        let mut expect = LdeTable::builtin();
        expect.entries.insert(
            (DeviceKind::Pmos, VtFlavor::Svt, Arrangement::Sp),
            LdeEntry {
                vth_shift: 0.02,
                gm_shift: -0.01,
            },
        );
        expect.variations.insert(
            (DeviceKind::Pmos, VtFlavor::Svt, Arrangement::Sp),
            VariationEntry {
                vth_sd: 0.1,
                gm_sd: 0.03,
            },
        );
        assert_eq!(t, expect);
    }

    #[test]
    fn load_rejects_non_identity_baseline() {
        let err = LdeTable::load("pmos svt bl 0.01 0 0.1 0.03").unwrap_err();
        assert_eq!(err, TableError::NonIdentityBaseline { line: 1 });
    }

    #[test]
    fn load_rejects_malformed_line() {
        let err = LdeTable::load("pmos svt sp 0.01\n").unwrap_err();
        match err {
            TableError::MalformedTable { line: 1, .. } => {}
            other => panic!("expected malformed table, got {other:?}"),
        }
    }
}
