//! Attack models against a locked design.
//!
//! Attacks operate on a [`RedactedLock`]: the netlist-level view an
//! adversary obtains (groups of identically sized transistors and their
//! candidate couples are visible, the correct indices are stripped).
//! Performance questions go through an [`Oracle`], which meters every
//! query.

use crate::eval::Evaluator;
use crate::lock::{
    selection_label, Couple, Key, LockPolicy, LockedNetlist, Selection,
};
use crate::netlist::{Arrangement, Netlist};
use crate::sim::{PerfMetrics, SimError, SimOptions};
use crate::sweep::MixedRadix;
use crate::lde::LdeTable;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;
use thiserror::Error;

/// Group structure without the secret correct index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedactedGroup {
    pub members: Vec<String>,
    pub couples: Vec<Couple>,
}

/// The attacker's view of a locked design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedactedLock {
    pub base: Netlist,
    pub groups: Vec<RedactedGroup>,
    pub bit_perm: Vec<usize>,
    pub lde: LdeTable,
    pub policy: LockPolicy,
}

impl From<&LockedNetlist> for RedactedLock {
    fn from(lock: &LockedNetlist) -> RedactedLock {
        RedactedLock {
            base: lock.base.clone(),
            groups: lock
                .groups
                .iter()
                .map(|g| RedactedGroup {
                    members: g.members.clone(),
                    couples: g.couples.clone(),
                })
                .collect(),
            bit_perm: lock.bit_perm.clone(),
            lde: lock.lde.clone(),
            policy: lock.policy.clone(),
        }
    }
}

impl RedactedLock {
    pub fn keylength(&self) -> usize {
        self.groups.iter().map(|g| g.couples.len()).sum()
    }

    pub fn keyspace_size(&self) -> u128 {
        self.groups.iter().map(|g| g.couples.len() as u128).product()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.couples.len()).collect()
    }

    /// Reassemble a full lock with a claimed correct selection; used to
    /// evaluate candidate keys on the attacker's own simulator.
    fn with_selection_applied(&self, sel: &[usize]) -> crate::eval::ArrangementMap {
        let mut map = crate::eval::ArrangementMap::new();
        for (g, &choice) in self.groups.iter().zip(sel) {
            for (member, &arr) in g.members.iter().zip(&g.couples[choice].0) {
                map.insert(member.clone(), arr);
            }
        }
        map
    }

    pub fn is_identity_perm(&self) -> bool {
        self.bit_perm.iter().enumerate().all(|(i, &p)| i == p)
    }
}

/// A functional unlocked instance: answers performance queries for any
/// key, never reveals the key, counts every query.
pub struct Oracle<'a> {
    lock: &'a LockedNetlist,
    evaluator: &'a Evaluator,
    queries: AtomicU64,
}

impl<'a> Oracle<'a> {
    pub fn new(lock: &'a LockedNetlist, evaluator: &'a Evaluator) -> Oracle<'a> {
        Oracle {
            lock,
            evaluator,
            queries: AtomicU64::new(0),
        }
    }

    pub fn queries(&self) -> u64 {
        self.queries.load(Ordering::SeqCst)
    }

    /// Measure the device under a key.
    pub fn measure(&self, key: &Key) -> Result<PerfMetrics, OracleError> {
        self.queries.fetch_add(1, Ordering::SeqCst);
        let map = self.lock.apply_key(key).map_err(|_| OracleError::InvalidKey)?;
        self.evaluator.eval(&map).map_err(OracleError::Sim)
    }

    pub fn measure_selection(&self, sel: &[usize]) -> Result<PerfMetrics, OracleError> {
        let key = self.lock.key_from_selection(sel);
        self.measure(&key)
    }

    /// True when the device meets every spec threshold under the key.
    pub fn spec_check(&self, key: &Key) -> bool {
        match self.measure(key) {
            Ok(m) => self.lock.policy.meets_specs(&m),
            Err(_) => false,
        }
    }

    pub fn spec_check_selection(&self, sel: &[usize]) -> bool {
        let key = self.lock.key_from_selection(sel);
        self.spec_check(&key)
    }
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid key")]
    InvalidKey,
    #[error(transparent)]
    Sim(SimError),
}

/// Result of one attack run; serialized as the attack-report JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub attack: String,
    pub queries: u64,
    pub success: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recovered_key: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidates_phase1: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub successes_phase2: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fraction_removed: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub elapsed_s: f64,
    pub notes: String,
}

/// Key enumeration order for brute force.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyOrder {
    Canonical,
    Seeded(u64),
}

/// Enumerate valid keys and query the oracle until a key passes the spec
/// check or the budget runs out.
pub fn brute_force(
    view: &RedactedLock,
    oracle: &Oracle<'_>,
    budget: u64,
    order: KeyOrder,
) -> AttackReport {
    assert!(budget >= 1, "budget must be at least 1");
    let start = Instant::now();
    let sizes = view.group_sizes();
    let before = oracle.queries();

    let selections: Box<dyn Iterator<Item = Selection>> = match order {
        KeyOrder::Canonical => Box::new(MixedRadix::new(sizes)),
        KeyOrder::Seeded(seed) => {
            let mut all: Vec<Selection> = MixedRadix::new(sizes).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            all.shuffle(&mut rng);
            Box::new(all.into_iter())
        }
    };

    let mut used = 0u64;
    let mut recovered = None;
    for sel in selections {
        if used >= budget {
            break;
        }
        used += 1;
        if oracle.spec_check_selection(&sel) {
            recovered = Some(sel);
            break;
        }
    }

    let success = recovered.is_some();
    AttackReport {
        attack: "brute_force".into(),
        queries: oracle.queries() - before,
        success,
        recovered_key: recovered.as_deref().map(selection_label),
        candidates_phase1: None,
        successes_phase2: None,
        fraction_removed: None,
        seed: match order {
            KeyOrder::Seeded(s) => Some(s),
            KeyOrder::Canonical => None,
        },
        elapsed_s: start.elapsed().as_secs_f64(),
        notes: format!("budget={budget}, used={used}"),
    }
}

/// A subcircuit the attacker tries to match locally.
#[derive(Debug, Clone, PartialEq)]
pub struct SubcircuitTarget {
    /// Transistors of interest; groups touching any of them are enumerated.
    pub transistors: Vec<String>,
    /// The public spec value the local metric must match.
    pub gm_target_s: f64,
    /// Relative tolerance on the match.
    pub tolerance: f64,
}

/// Two-phase divide-and-conquer: enumerate couple choices for the groups
/// touching the target subcircuit (other groups pinned to an arbitrary
/// fixed choice), keep combinations whose simulated gm lands within
/// tolerance of the target, then check each survivor against the full spec
/// via the oracle.
///
/// Phase-1 simulations run on the attacker's own evaluator and are not
/// oracle queries; phase 2 spends one query per survivor.
pub fn divide_and_conquer(
    view: &RedactedLock,
    attacker_eval: &Evaluator,
    oracle: &Oracle<'_>,
    target: &SubcircuitTarget,
) -> AttackReport {
    assert!(!target.transistors.is_empty(), "target subset is empty");
    let start = Instant::now();
    let before = oracle.queries();

    let touched: Vec<usize> = view
        .groups
        .iter()
        .enumerate()
        .filter(|(_, g)| g.members.iter().any(|m| target.transistors.contains(m)))
        .map(|(i, _)| i)
        .collect();
    let local_sizes: Vec<usize> = touched.iter().map(|&i| view.groups[i].couples.len()).collect();

    // Phase 1: local enumeration against the attacker's simulator.
    let mut survivors: Vec<Selection> = Vec::new();
    for local in MixedRadix::new(local_sizes) {
        let mut sel: Selection = vec![0; view.groups.len()];
        for (&gi, &choice) in touched.iter().zip(&local) {
            sel[gi] = choice;
        }
        let map = view.with_selection_applied(&sel);
        let Ok(metrics) = attacker_eval.eval(&map) else {
            continue;
        };
        let err = (metrics.gm_s - target.gm_target_s).abs();
        if err <= target.tolerance * target.gm_target_s.abs() {
            survivors.push(sel);
        }
    }

    // Phase 2: full spec check of each survivor through the oracle.
    let mut successes = 0u64;
    let mut recovered = None;
    for sel in &survivors {
        if oracle.spec_check_selection(sel) {
            successes += 1;
            if recovered.is_none() {
                recovered = Some(sel.clone());
            }
        }
    }

    AttackReport {
        attack: "divide_and_conquer".into(),
        queries: oracle.queries() - before,
        success: successes > 0,
        recovered_key: recovered.as_deref().map(selection_label),
        candidates_phase1: Some(survivors.len() as u64),
        successes_phase2: Some(successes),
        fraction_removed: None,
        seed: None,
        elapsed_s: start.elapsed().as_secs_f64(),
        notes: format!(
            "target gm={:.4e} S tol={} over groups {touched:?}",
            target.gm_target_s, target.tolerance
        ),
    }
}

/// Fraction of the base design's transistors that are members of some
/// group: what a removal attack would have to excise and redesign.
pub fn removal_fraction(view: &RedactedLock) -> f64 {
    let total = view.base.mosfets().count();
    if total == 0 {
        return 0.0;
    }
    let grouped: usize = view.groups.iter().map(|g| g.members.len()).sum();
    grouped as f64 / total as f64
}

/// Build a removal report around [`removal_fraction`].
pub fn removal_report(view: &RedactedLock) -> AttackReport {
    let start = Instant::now();
    let fraction = removal_fraction(view);
    AttackReport {
        attack: "removal".into(),
        queries: 0,
        success: false,
        recovered_key: None,
        candidates_phase1: None,
        successes_phase2: None,
        fraction_removed: Some(fraction),
        seed: None,
        elapsed_s: start.elapsed().as_secs_f64(),
        notes: format!(
            "removing grouped transistors strips {:.1}% of the base design",
            fraction * 100.0
        ),
    }
}

/// A structural guess pattern over all groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuessPattern {
    /// Every covered transistor set to the same arrangement.
    Uniform(Arrangement),
}

/// Try simple structural guesses ("all arrangements are baseline").
///
/// With an identity bit permutation the couple order is trustworthy and a
/// pattern resolves directly to a key. A shuffled permutation hides which
/// bit selects which couple, so the guess degenerates to a seeded random
/// valid key.
pub fn naive_guess(
    view: &RedactedLock,
    oracle: &Oracle<'_>,
    guesses: &[GuessPattern],
    seed: u64,
) -> AttackReport {
    let start = Instant::now();
    let before = oracle.queries();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut recovered = None;
    let mut notes = Vec::new();

    for guess in guesses {
        let resolved: Option<Selection> = if view.is_identity_perm() {
            let GuessPattern::Uniform(arr) = guess;
            view.groups
                .iter()
                .map(|g| {
                    g.couples
                        .iter()
                        .position(|c| c.0.iter().all(|&a| a == *arr))
                })
                .collect()
        } else {
            None
        };
        let (sel, how) = match resolved {
            Some(sel) => (sel, "structural"),
            None => (
                view.group_sizes()
                    .iter()
                    .map(|&s| rng.gen_range(0..s))
                    .collect(),
                "random",
            ),
        };
        let hit = oracle.spec_check_selection(&sel);
        notes.push(format!("{guess:?} via {how}: {}", if hit { "pass" } else { "fail" }));
        if hit && recovered.is_none() {
            recovered = Some(sel);
        }
    }

    AttackReport {
        attack: "naive_guess".into(),
        queries: oracle.queries() - before,
        success: recovered.is_some(),
        recovered_key: recovered.as_deref().map(selection_label),
        candidates_phase1: None,
        successes_phase2: None,
        fraction_removed: None,
        seed: Some(seed),
        elapsed_s: start.elapsed().as_secs_f64(),
        notes: notes.join("; "),
    }
}

/// Layout-blind reverse-engineering check: evaluate keys with every device
/// forced to baseline (the adversary's models carry no layout information)
/// and report the largest pairwise gain difference observed. The locked
/// design is indistinguishable under such a model, so the spread is zero.
pub fn lde_blind_gain_spread(
    view: &RedactedLock,
    opts: &SimOptions,
    max_keys: u128,
) -> Result<(f64, u64), SimError> {
    let evaluator =
        Evaluator::new(view.base.clone(), view.lde.clone(), *opts)?.with_blind(true);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut evaluated = 0u64;
    for sel in MixedRadix::new(view.group_sizes()) {
        if evaluated as u128 >= max_keys {
            break;
        }
        let map = view.with_selection_applied(&sel);
        let m = evaluator.eval(&map)?;
        lo = lo.min(m.gain_db);
        hi = hi.max(m.gain_db);
        evaluated += 1;
    }
    Ok((hi - lo, evaluated))
}
