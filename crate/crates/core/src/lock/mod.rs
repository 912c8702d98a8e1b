//! Locked-design construction: arrangement groups over transistor pairs and
//! singles, one-hot key encoding, keyspace accounting, key application,
//! bit-order permutation, and decoy pruning.
//!
//! A group covers one or two transistors and carries an ordered list of
//! couples (joint arrangement assignments), exactly one of which is the
//! designer's. One key bit per couple; a key is valid when, after undoing
//! the bit permutation, exactly one bit is set inside every group's slice.

mod config;

pub use config::{parse_lock_config, ConfigError, GroupSpec, LockSpec};

use crate::eval::ArrangementMap;
use crate::lde::LdeTable;
use crate::netlist::{Arrangement, Netlist, SpecThresholds};
use crate::sim::{PerfMetrics, Sign, SimError};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

/// Joint arrangement assignment for the transistors a group covers
/// (length 2 for a pair, 1 for a single).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Couple(pub Vec<Arrangement>);

impl Couple {
    /// All couples of a given coverage in canonical order (9 for a pair,
    /// 3 for a single).
    pub fn universe(coverage: usize) -> Vec<Couple> {
        match coverage {
            1 => Arrangement::ALL.iter().map(|&a| Couple(vec![a])).collect(),
            2 => {
                let mut v = Vec::with_capacity(9);
                for &a in &Arrangement::ALL {
                    for &b in &Arrangement::ALL {
                        v.push(Couple(vec![a, b]));
                    }
                }
                v
            }
            n => panic!("groups cover 1 or 2 transistors, not {n}"),
        }
    }

    pub fn label(&self) -> String {
        self.0
            .iter()
            .map(|a| a.as_str())
            .collect::<Vec<_>>()
            .join("-")
    }
}

/// One locking unit: its member transistors, candidate couples, and the
/// secret index of the designer's couple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrangementGroup {
    pub members: Vec<String>,
    pub couples: Vec<Couple>,
    pub correct_index: usize,
}

impl ArrangementGroup {
    pub fn size(&self) -> usize {
        self.couples.len()
    }
}

/// Alarm predicates evaluated during pruning: decoys matching one are
/// removed regardless of the spec window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlarmPredicate {
    /// The decoy flips the low-frequency gain sign.
    NegativeGain,
}

/// Spec thresholds, guard band, and alarms used for pruning and key
/// classification.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LockPolicy {
    pub spec: SpecThresholds,
    /// Half-open gain interval `[a, b)` in dB to be emptied of keys.
    pub guard_band: Option<(f64, f64)>,
    pub alarms: Vec<AlarmPredicate>,
}

impl LockPolicy {
    /// True when the metrics satisfy every configured spec threshold.
    pub fn meets_specs(&self, m: &PerfMetrics) -> bool {
        let s = &self.spec;
        if let Some(v) = s.gain_db_min {
            if m.gain_db < v {
                return false;
            }
        }
        if let Some(v) = s.pm_deg_min {
            match m.phase_margin_deg {
                Some(pm) if pm >= v => {}
                _ => return false,
            }
        }
        if let Some(v) = s.power_w_min {
            if m.power_w < v {
                return false;
            }
        }
        if let Some(v) = s.power_w_max {
            if m.power_w > v {
                return false;
            }
        }
        if let Some(v) = s.bw_hz_min {
            if m.bw_3db_hz < v {
                return false;
            }
        }
        if let Some(v) = s.bw_hz_max {
            if m.bw_3db_hz > v {
                return false;
            }
        }
        true
    }

    pub fn in_guard_band(&self, m: &PerfMetrics) -> bool {
        match self.guard_band {
            Some((a, b)) => m.gain_db >= a && m.gain_db < b,
            None => false,
        }
    }

    pub fn alarm(&self, m: &PerfMetrics) -> Option<AlarmPredicate> {
        self.alarms.iter().copied().find(|a| match a {
            AlarmPredicate::NegativeGain => m.gain_sign == Sign::Minus,
        })
    }
}

/// The locked design: base netlist, groups with their secret correct
/// couples, the key-bit permutation, and the shift table the design was
/// characterized against. Immutable after build/prune.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LockedNetlist {
    pub base: Netlist,
    pub groups: Vec<ArrangementGroup>,
    /// Maps logical bit position (group-slice order) to physical position.
    pub bit_perm: Vec<usize>,
    pub lde: LdeTable,
    pub policy: LockPolicy,
}

/// One-hot key over all couples, in physical bit order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Key {
    pub bits: Vec<bool>,
}

impl Key {
    pub fn bitstring(&self) -> String {
        self.bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn from_bitstring(s: &str) -> Option<Key> {
        let mut bits = Vec::with_capacity(s.len());
        for c in s.chars() {
            match c {
                '0' => bits.push(false),
                '1' => bits.push(true),
                _ => return None,
            }
        }
        Some(Key { bits })
    }
}

/// Group-local couple indices, one per group: the logical form of a key.
pub type Selection = Vec<usize>;

/// Serialize a selection as dash-joined indices (`2-0-4-1`).
pub fn selection_label(sel: &[usize]) -> String {
    sel.iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join("-")
}

pub fn selection_from_label(s: &str) -> Option<Selection> {
    s.split('-').map(|t| t.parse().ok()).collect()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LockError {
    #[error("group member `{name}` is not a MOSFET in the base netlist")]
    UnknownTransistor { name: String },
    #[error("transistor `{name}` appears in more than one group")]
    DuplicateMember { name: String },
    #[error("group {group} requests {requested} couples but only {max} exist")]
    TooManyCouples {
        group: usize,
        requested: usize,
        max: usize,
    },
    #[error("group {group} has fewer than 2 couples and cannot be locked")]
    GroupTooSmall { group: usize },
    #[error("pruning group {group} would leave fewer than 2 couples; it needs different decoys")]
    GroupCollapsed { group: usize },
    #[error("key has no single set bit in group {group}")]
    InvalidKey { group: usize },
    #[error("key has {got} bits, expected {expected}")]
    BadKeyLength { expected: usize, got: usize },
    #[error("`arrange` names `{name}`, which is not covered by any group")]
    ArrangedNotGrouped { name: String },
}

impl LockedNetlist {
    /// Total key bits: the sum of group sizes.
    pub fn keylength(&self) -> usize {
        self.groups.iter().map(|g| g.size()).sum()
    }

    /// Number of valid one-hot keys: the product of group sizes.
    pub fn keyspace_size(&self) -> u128 {
        self.groups.iter().map(|g| g.size() as u128).product()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.size()).collect()
    }

    /// The designer's selection (secret material).
    pub fn correct_selection(&self) -> Selection {
        self.groups.iter().map(|g| g.correct_index).collect()
    }

    /// Encode a logical selection as a one-hot key in physical bit order.
    pub fn key_from_selection(&self, sel: &[usize]) -> Key {
        assert_eq!(sel.len(), self.groups.len());
        let n = self.keylength();
        let mut bits = vec![false; n];
        let mut offset = 0;
        for (g, &choice) in self.groups.iter().zip(sel) {
            assert!(choice < g.size(), "selection index out of range");
            bits[self.bit_perm[offset + choice]] = true;
            offset += g.size();
        }
        Key { bits }
    }

    /// Decode a key back to a selection; rejects keys that do not set
    /// exactly one bit per group slice.
    pub fn selection_from_key(&self, key: &Key) -> Result<Selection, LockError> {
        let n = self.keylength();
        if key.bits.len() != n {
            return Err(LockError::BadKeyLength {
                expected: n,
                got: key.bits.len(),
            });
        }
        let mut logical = vec![false; n];
        for (j, &phys) in self.bit_perm.iter().enumerate() {
            logical[j] = key.bits[phys];
        }
        let mut sel = Vec::with_capacity(self.groups.len());
        let mut offset = 0;
        for (gi, g) in self.groups.iter().enumerate() {
            let slice = &logical[offset..offset + g.size()];
            let set: Vec<usize> = slice
                .iter()
                .enumerate()
                .filter_map(|(i, &b)| b.then_some(i))
                .collect();
            if set.len() != 1 {
                return Err(LockError::InvalidKey { group: gi });
            }
            sel.push(set[0]);
            offset += g.size();
        }
        Ok(sel)
    }

    /// Arrangement map selected by a valid key. Ungrouped transistors are
    /// baseline.
    pub fn apply_key(&self, key: &Key) -> Result<ArrangementMap, LockError> {
        let sel = self.selection_from_key(key)?;
        Ok(self.apply_selection(&sel))
    }

    /// Arrangement map of a logical selection.
    pub fn apply_selection(&self, sel: &[usize]) -> ArrangementMap {
        assert_eq!(sel.len(), self.groups.len());
        let mut map = ArrangementMap::new();
        for (g, &choice) in self.groups.iter().zip(sel) {
            let couple = &g.couples[choice];
            for (member, &arr) in g.members.iter().zip(&couple.0) {
                map.insert(member.clone(), arr);
            }
        }
        map
    }

    /// The designer's arrangement map.
    pub fn correct_arrangements(&self) -> ArrangementMap {
        self.apply_selection(&self.correct_selection())
    }
}

/// Construct a locked design from a group specification.
///
/// For each group the designer's couple (taken from the `arrange` map,
/// baseline by default) is hidden among `added` distinct decoy couples
/// sampled without replacement from the couple universe; its position in
/// the list and the global bit permutation are drawn from the seed.
/// Deterministic per seed.
pub fn build_lock(net: &Netlist, spec: &LockSpec, seed: u64) -> Result<LockedNetlist, LockError> {
    let base = if spec.flatten_fingers {
        net.flatten_fingers()
    } else {
        net.clone()
    };

    let mosfet_names: BTreeSet<String> = base.mosfets().map(|m| m.name.clone()).collect();
    let mut grouped: BTreeSet<String> = BTreeSet::new();
    for gs in &spec.groups {
        for name in &gs.members {
            if !mosfet_names.contains(name) {
                return Err(LockError::UnknownTransistor { name: name.clone() });
            }
            if !grouped.insert(name.clone()) {
                return Err(LockError::DuplicateMember { name: name.clone() });
            }
        }
    }
    for name in spec.arrangements.keys() {
        if !grouped.contains(name) {
            return Err(LockError::ArrangedNotGrouped { name: name.clone() });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = Vec::with_capacity(spec.groups.len());
    for (gi, gs) in spec.groups.iter().enumerate() {
        let universe = Couple::universe(gs.members.len());
        let correct = Couple(
            gs.members
                .iter()
                .map(|m| spec.arrangements.get(m).copied().unwrap_or(Arrangement::Bl))
                .collect(),
        );
        let k = gs.added + 1;
        if k < 2 {
            return Err(LockError::GroupTooSmall { group: gi });
        }
        if k > universe.len() {
            return Err(LockError::TooManyCouples {
                group: gi,
                requested: k,
                max: universe.len(),
            });
        }
        let mut decoy_pool: Vec<Couple> =
            universe.into_iter().filter(|c| *c != correct).collect();
        decoy_pool.shuffle(&mut rng);
        let mut couples: Vec<Couple> = decoy_pool.into_iter().take(gs.added).collect();
        let correct_index = rng.gen_range(0..=couples.len());
        couples.insert(correct_index, correct);
        groups.push(ArrangementGroup {
            members: gs.members.clone(),
            couples,
            correct_index,
        });
    }

    let keylength: usize = groups.iter().map(|g| g.size()).sum();
    let mut bit_perm: Vec<usize> = (0..keylength).collect();
    bit_perm.shuffle(&mut rng);

    Ok(LockedNetlist {
        base,
        groups,
        bit_perm,
        lde: spec.lde.clone(),
        policy: spec.policy.clone(),
    })
}

/// Construct a locked design, replacing decoys that pruning would condemn.
///
/// Same contract as [`build_lock`], but every candidate decoy is evaluated
/// (all other groups held at their correct couples) against the policy
/// before it is accepted: candidates that satisfy the full spec set, land
/// in the guard band, or trip an alarm are rejected and redrawn from the
/// remaining couple universe. The result always sustains the requested
/// group sizes and passes [`prune`] unchanged. Deterministic per seed.
pub fn build_lock_refined<E>(
    net: &Netlist,
    spec: &LockSpec,
    seed: u64,
    evaluator: E,
) -> Result<(LockedNetlist, PruneReport), LockError>
where
    E: Fn(&ArrangementMap) -> Result<PerfMetrics, SimError>,
{
    // Validate membership exactly as a plain build would.
    let draft = build_lock(net, spec, seed)?;
    let policy = &spec.policy;
    let correct_map: ArrangementMap = draft.correct_arrangements();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = PruneReport::default();
    let mut groups = Vec::with_capacity(spec.groups.len());

    for (gi, gs) in spec.groups.iter().enumerate() {
        let correct = Couple(
            gs.members
                .iter()
                .map(|m| spec.arrangements.get(m).copied().unwrap_or(Arrangement::Bl))
                .collect(),
        );
        let mut pool: Vec<Couple> = Couple::universe(gs.members.len())
            .into_iter()
            .filter(|c| *c != correct)
            .collect();
        pool.shuffle(&mut rng);

        let mut chosen: Vec<Couple> = Vec::with_capacity(gs.added);
        for candidate in pool {
            if chosen.len() == gs.added {
                break;
            }
            let mut map = correct_map.clone();
            for (member, &arr) in gs.members.iter().zip(&candidate.0) {
                map.insert(member.clone(), arr);
            }
            report.evaluated += 1;
            let metrics = match evaluator(&map) {
                Ok(m) => m,
                Err(e) => {
                    // Non-convergent decoys are decisively wrong keys.
                    report
                        .sim_failures
                        .push((gi, format!("{}: {e}", candidate.label())));
                    chosen.push(candidate);
                    continue;
                }
            };
            let reason = if policy.alarm(&metrics).is_some() {
                Some(DropReason::Alarm)
            } else if policy.meets_specs(&metrics) {
                Some(DropReason::SpecWindow)
            } else if policy.in_guard_band(&metrics) {
                Some(DropReason::GuardBand)
            } else {
                None
            };
            match reason {
                Some(reason) => report.drops.push(PruneDrop {
                    group: gi,
                    members: gs.members.clone(),
                    couple: candidate.label(),
                    couple_index: chosen.len(),
                    reason,
                    gain_db: metrics.gain_db,
                    gain_sign: metrics.gain_sign,
                    power_w: metrics.power_w,
                }),
                None => chosen.push(candidate),
            }
        }
        if chosen.len() < gs.added {
            return Err(LockError::GroupCollapsed { group: gi });
        }
        let correct_index = rng.gen_range(0..=chosen.len());
        chosen.insert(correct_index, correct);
        groups.push(ArrangementGroup {
            members: gs.members.clone(),
            couples: chosen,
            correct_index,
        });
    }

    let keylength: usize = groups.iter().map(|g| g.size()).sum();
    let mut bit_perm: Vec<usize> = (0..keylength).collect();
    bit_perm.shuffle(&mut rng);

    report.drops.sort_by_key(|d| (d.group, d.couple_index));
    report.sim_failures.sort();

    Ok((
        LockedNetlist {
            base: draft.base,
            groups,
            bit_perm,
            lde: spec.lde.clone(),
            policy: spec.policy.clone(),
        },
        report,
    ))
}

/// Why a decoy couple was removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// The decoy meets every spec threshold: a wrong key would look correct.
    SpecWindow,
    /// The decoy's gain falls inside the guard band.
    GuardBand,
    /// The decoy trips an alarm predicate.
    Alarm,
}

/// One pruned decoy with the metrics that condemned it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneDrop {
    pub group: usize,
    pub members: Vec<String>,
    pub couple: String,
    pub couple_index: usize,
    pub reason: DropReason,
    pub gain_db: f64,
    pub gain_sign: Sign,
    pub power_w: f64,
}

/// Outcome of a prune pass, order-normalized by (group, couple index).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PruneReport {
    pub drops: Vec<PruneDrop>,
    /// Decoys whose evaluation failed to converge; kept (a key that breaks
    /// the circuit is decisively incorrect).
    pub sim_failures: Vec<(usize, String)>,
    pub evaluated: usize,
}

/// Remove decoys that would weaken the lock.
///
/// Groups are visited in a seed-determined random order; each decoy couple
/// is evaluated with every other group held at its correct couple. Decoys
/// whose metrics satisfy the full spec set, land in the guard band, or trip
/// an alarm are dropped. The correct couple always survives. Results do not
/// depend on the visit order; the report is sorted.
pub fn prune<E>(
    locked: &LockedNetlist,
    evaluator: E,
    policy: &LockPolicy,
    seed: u64,
) -> Result<(LockedNetlist, PruneReport), LockError>
where
    E: Fn(&ArrangementMap) -> Result<PerfMetrics, SimError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..locked.groups.len()).collect();
    order.shuffle(&mut rng);

    let correct_sel = locked.correct_selection();
    let mut report = PruneReport::default();
    let mut keep: Vec<Vec<bool>> = locked
        .groups
        .iter()
        .map(|g| vec![true; g.size()])
        .collect();

    for &gi in &order {
        let group = &locked.groups[gi];
        for ci in 0..group.size() {
            if ci == group.correct_index {
                continue;
            }
            let mut sel = correct_sel.clone();
            sel[gi] = ci;
            let map = locked.apply_selection(&sel);
            report.evaluated += 1;
            let metrics = match evaluator(&map) {
                Ok(m) => m,
                Err(e) => {
                    report.sim_failures.push((gi, format!(
                        "{}: {e}",
                        group.couples[ci].label()
                    )));
                    continue;
                }
            };
            let reason = if let Some(_alarm) = policy.alarm(&metrics) {
                Some(DropReason::Alarm)
            } else if policy.meets_specs(&metrics) {
                Some(DropReason::SpecWindow)
            } else if policy.in_guard_band(&metrics) {
                Some(DropReason::GuardBand)
            } else {
                None
            };
            if let Some(reason) = reason {
                keep[gi][ci] = false;
                report.drops.push(PruneDrop {
                    group: gi,
                    members: group.members.clone(),
                    couple: group.couples[ci].label(),
                    couple_index: ci,
                    reason,
                    gain_db: metrics.gain_db,
                    gain_sign: metrics.gain_sign,
                    power_w: metrics.power_w,
                });
            }
        }
    }

    report.drops.sort_by_key(|d| (d.group, d.couple_index));
    report.sim_failures.sort();

    // Fixpoint: nothing dropped, the lock passes through untouched.
    if report.drops.is_empty() {
        return Ok((locked.clone(), report));
    }

    let mut groups = Vec::with_capacity(locked.groups.len());
    for (gi, g) in locked.groups.iter().enumerate() {
        let couples: Vec<Couple> = g
            .couples
            .iter()
            .enumerate()
            .filter_map(|(ci, c)| keep[gi][ci].then(|| c.clone()))
            .collect();
        if couples.len() < 2 {
            return Err(LockError::GroupCollapsed { group: gi });
        }
        let correct_index = couples
            .iter()
            .position(|c| *c == g.couples[g.correct_index])
            .expect("correct couple is never dropped");
        groups.push(ArrangementGroup {
            members: g.members.clone(),
            couples,
            correct_index,
        });
    }

    let keylength: usize = groups.iter().map(|g| g.size()).sum();
    // The bit count changed; re-draw the permutation for the pruned lock.
    let mut bit_perm: Vec<usize> = (0..keylength).collect();
    bit_perm.shuffle(&mut rng);

    Ok((
        LockedNetlist {
            base: locked.base.clone(),
            groups,
            bit_perm,
            lde: locked.lde.clone(),
            policy: locked.policy.clone(),
        },
        report,
    ))
}
