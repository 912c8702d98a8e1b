//! Keyspace exploration: enumerate or sample keys, evaluate metrics per
//! key, classify, detect the pruning gap, and emit distribution reports.
//!
//! Keys are processed in fixed-size chunks; each chunk is evaluated in
//! parallel and folded into the report in canonical order, so the CSV and
//! summary are bit-identical for any parallelism degree.

use crate::eval::Evaluator;
use crate::lock::{selection_label, LockPolicy, LockedNetlist, Selection};
use crate::sim::{PerfMetrics, SimError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    Exhaustive,
    /// Uniform i.i.d. over valid keys, with replacement; duplicates are
    /// allowed and flagged in the summary.
    Sample { n: u64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub mode: SweepMode,
    pub policy: LockPolicy,
    /// Exhaustive sweeps larger than this are refused.
    pub cap: u128,
    /// Keep per-key records in memory (tests); the CSV stream is unaffected.
    pub keep_records: bool,
    /// Whether the lock's correct selection is trustworthy; sweeps run from
    /// a redacted archive without the secret key set this to false and the
    /// correct key, if hit, classifies like any other spec-passing key.
    pub correct_known: bool,
}

impl SweepConfig {
    pub fn exhaustive(policy: LockPolicy) -> SweepConfig {
        SweepConfig {
            mode: SweepMode::Exhaustive,
            policy,
            cap: 1_000_000,
            keep_records: false,
            correct_known: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KeyClass {
    #[serde(rename = "CORRECT_BY_CONSTRUCTION")]
    CorrectByConstruction,
    #[serde(rename = "DESIRED")]
    Desired,
    #[serde(rename = "NEAR_CORRECT")]
    NearCorrect,
    #[serde(rename = "INCORRECT")]
    Incorrect,
    #[serde(rename = "SIM_FAILED")]
    SimFailed,
}

impl KeyClass {
    pub fn as_str(self) -> &'static str {
        match self {
            KeyClass::CorrectByConstruction => "CORRECT_BY_CONSTRUCTION",
            KeyClass::Desired => "DESIRED",
            KeyClass::NearCorrect => "NEAR_CORRECT",
            KeyClass::Incorrect => "INCORRECT",
            KeyClass::SimFailed => "SIM_FAILED",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyRecord {
    pub selection: Selection,
    pub class: KeyClass,
    pub metrics: Option<PerfMetrics>,
    /// Solver error text for SIM_FAILED keys.
    pub error: Option<String>,
}

/// Sparse fixed-width histogram: bin index = floor(value / width) (after
/// the configured transform for log-scaled metrics).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub bins: BTreeMap<i64, u64>,
}

impl Histogram {
    fn new(bin_width: f64) -> Histogram {
        Histogram {
            bin_width,
            bins: BTreeMap::new(),
        }
    }

    fn add(&mut self, value: f64) {
        let bin = (value / self.bin_width).floor() as i64;
        *self.bins.entry(bin).or_insert(0) += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricRange {
    pub min: f64,
    pub max: f64,
}

impl MetricRange {
    fn update(&mut self, v: f64, first: bool) {
        if first {
            self.min = v;
            self.max = v;
        } else {
            self.min = self.min.min(v);
            self.max = self.max.max(v);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub keys_evaluated: u64,
    pub counts: BTreeMap<String, u64>,
    pub desired_fraction: f64,
    /// Correct-by-construction plus desired keys, as in the paper's
    /// correct-key rate.
    pub spec_passing_fraction: f64,
    pub duplicate_keys: u64,
    pub gain_db: MetricRange,
    pub power_w: MetricRange,
    pub bw_3db_hz: MetricRange,
    pub guard_band: Option<(f64, f64)>,
    /// True when no evaluated key's gain fell inside the guard band.
    pub gap_verdict: Option<bool>,
    pub guard_band_offenders: u64,
    /// Keys whose power lies inside the configured power window, and how
    /// many of those also meet every spec.
    pub power_window_keys: u64,
    pub power_window_desired: u64,
    /// Gain histogram in 1 dB bins.
    pub hist_gain_db: Histogram,
    /// Phase-margin histogram in 1 degree bins (keys with a crossing).
    pub hist_phase_deg: Histogram,
    /// Bandwidth histogram in tenth-of-a-decade bins of log10(Hz).
    pub hist_bw_logdecade: Histogram,
    /// Power histogram in 10 uW bins.
    pub hist_power_w: Histogram,
}

impl SweepSummary {
    fn new(policy: &LockPolicy) -> SweepSummary {
        SweepSummary {
            keys_evaluated: 0,
            counts: BTreeMap::new(),
            desired_fraction: 0.0,
            spec_passing_fraction: 0.0,
            duplicate_keys: 0,
            gain_db: MetricRange::default(),
            power_w: MetricRange::default(),
            bw_3db_hz: MetricRange::default(),
            guard_band: policy.guard_band,
            gap_verdict: None,
            guard_band_offenders: 0,
            power_window_keys: 0,
            power_window_desired: 0,
            hist_gain_db: Histogram::new(1.0),
            hist_phase_deg: Histogram::new(1.0),
            hist_bw_logdecade: Histogram::new(0.1),
            hist_power_w: Histogram::new(10e-6),
        }
    }

    pub fn count(&self, class: KeyClass) -> u64 {
        self.counts.get(class.as_str()).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub summary: SweepSummary,
    pub records: Option<Vec<KeyRecord>>,
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("keyspace has {size} keys, above the cap of {cap}; use sample mode")]
    KeyspaceTooLarge { size: u128, cap: u128 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Deterministic key stream for a locked design.
pub enum KeyStream {
    Exhaustive(MixedRadix),
    Sample {
        sizes: Vec<usize>,
        remaining: u64,
        rng: ChaCha8Rng,
    },
}

/// Mixed-radix counter over group sizes, last group fastest.
pub struct MixedRadix {
    sizes: Vec<usize>,
    state: Vec<usize>,
    done: bool,
}

impl MixedRadix {
    pub fn new(sizes: Vec<usize>) -> MixedRadix {
        let done = sizes.iter().any(|&s| s == 0);
        MixedRadix {
            state: vec![0; sizes.len()],
            sizes,
            done,
        }
    }
}

impl Iterator for MixedRadix {
    type Item = Selection;

    fn next(&mut self) -> Option<Selection> {
        if self.done {
            return None;
        }
        let out = self.state.clone();
        let mut i = self.sizes.len();
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            self.state[i] += 1;
            if self.state[i] < self.sizes[i] {
                break;
            }
            self.state[i] = 0;
        }
        Some(out)
    }
}

impl Iterator for KeyStream {
    type Item = Selection;

    fn next(&mut self) -> Option<Selection> {
        match self {
            KeyStream::Exhaustive(mr) => mr.next(),
            KeyStream::Sample {
                sizes,
                remaining,
                rng,
            } => {
                if *remaining == 0 {
                    return None;
                }
                *remaining -= 1;
                Some(sizes.iter().map(|&s| rng.gen_range(0..s)).collect())
            }
        }
    }
}

/// Build the deterministic key stream for a mode. Exhaustive mode is
/// refused above the cap.
pub fn enumerate_keys(
    locked: &LockedNetlist,
    mode: SweepMode,
    cap: u128,
) -> Result<KeyStream, SweepError> {
    match mode {
        SweepMode::Exhaustive => {
            let size = locked.keyspace_size();
            if size > cap {
                return Err(SweepError::KeyspaceTooLarge { size, cap });
            }
            Ok(KeyStream::Exhaustive(MixedRadix::new(locked.group_sizes())))
        }
        SweepMode::Sample { n, seed } => Ok(KeyStream::Sample {
            sizes: locked.group_sizes(),
            remaining: n,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }),
    }
}

/// Classify one evaluated key.
fn classify(
    selection: &Selection,
    correct: Option<&Selection>,
    outcome: &Result<PerfMetrics, SimError>,
    policy: &LockPolicy,
) -> KeyClass {
    match outcome {
        Err(_) => KeyClass::SimFailed,
        Ok(m) => {
            if correct.is_some_and(|c| selection == c) {
                KeyClass::CorrectByConstruction
            } else if policy.meets_specs(m) {
                KeyClass::Desired
            } else if policy.in_guard_band(m) {
                KeyClass::NearCorrect
            } else {
                KeyClass::Incorrect
            }
        }
    }
}

pub const CSV_HEADER: &str =
    "key,gain_db,gain_sign,phase_margin_deg,bw_3db_hz,power_w,gm_s,class,dc_iters";

fn csv_row(rec: &KeyRecord) -> String {
    let key = selection_label(&rec.selection);
    match &rec.metrics {
        Some(m) => {
            let pm = m
                .phase_margin_deg
                .map(|v| v.to_string())
                .unwrap_or_default();
            format!(
                "{key},{},{},{pm},{},{},{},{},{}",
                m.gain_db,
                m.gain_sign,
                m.bw_3db_hz,
                m.power_w,
                m.gm_s,
                rec.class.as_str(),
                m.dc_iterations
            )
        }
        None => format!("{key},,,,,,,{},", rec.class.as_str()),
    }
}

/// Sweep the keyspace.
///
/// Per key: one-hot encode, apply, evaluate, classify. Failed solves are
/// recorded as SIM_FAILED data, never dropped. When `csv` is given, one row
/// per key is streamed in canonical order.
pub fn run_sweep(
    locked: &LockedNetlist,
    evaluator: &Evaluator,
    cfg: &SweepConfig,
    mut csv: Option<&mut dyn Write>,
) -> Result<SweepReport, SweepError> {
    let stream = enumerate_keys(locked, cfg.mode, cfg.cap)?;
    let correct = cfg.correct_known.then(|| locked.correct_selection());
    let mut summary = SweepSummary::new(&cfg.policy);
    let mut records = cfg.keep_records.then(Vec::new);
    let mut seen: HashSet<Selection> = HashSet::new();
    let sample_mode = matches!(cfg.mode, SweepMode::Sample { .. });

    if let Some(w) = csv.as_deref_mut() {
        writeln!(w, "{CSV_HEADER}")?;
    }

    const CHUNK: usize = 1024;
    let mut stream = stream.peekable();
    while stream.peek().is_some() {
        let chunk: Vec<Selection> = stream.by_ref().take(CHUNK).collect();
        let evaluated: Vec<KeyRecord> = chunk
            .into_par_iter()
            .map(|sel| {
                let key = locked.key_from_selection(&sel);
                let map = locked
                    .apply_key(&key)
                    .expect("keys from valid selections decode");
                let outcome = evaluator.eval(&map);
                let class = classify(&sel, correct.as_ref(), &outcome, &cfg.policy);
                match outcome {
                    Ok(m) => KeyRecord {
                        selection: sel,
                        class,
                        metrics: Some(m),
                        error: None,
                    },
                    Err(e) => KeyRecord {
                        selection: sel,
                        class,
                        metrics: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect();

        for rec in evaluated {
            if sample_mode && !seen.insert(rec.selection.clone()) {
                summary.duplicate_keys += 1;
            }
            fold(&mut summary, &rec, &cfg.policy);
            if let Some(w) = csv.as_deref_mut() {
                writeln!(w, "{}", csv_row(&rec))?;
            }
            if let Some(recs) = records.as_mut() {
                recs.push(rec);
            }
        }
    }

    let evaluated = summary.keys_evaluated.max(1) as f64;
    summary.desired_fraction = summary.count(KeyClass::Desired) as f64 / evaluated;
    summary.spec_passing_fraction = (summary.count(KeyClass::Desired)
        + summary.count(KeyClass::CorrectByConstruction)) as f64
        / evaluated;
    if summary.guard_band.is_some() {
        summary.gap_verdict = Some(summary.guard_band_offenders == 0);
    }

    Ok(SweepReport { summary, records })
}

fn fold(summary: &mut SweepSummary, rec: &KeyRecord, policy: &LockPolicy) {
    let first = summary.keys_evaluated == 0;
    summary.keys_evaluated += 1;
    *summary
        .counts
        .entry(rec.class.as_str().to_string())
        .or_insert(0) += 1;
    let Some(m) = &rec.metrics else {
        return;
    };
    summary.gain_db.update(m.gain_db, first);
    summary.power_w.update(m.power_w, first);
    summary.bw_3db_hz.update(m.bw_3db_hz, first);
    summary.hist_gain_db.add(m.gain_db);
    if let Some(pm) = m.phase_margin_deg {
        summary.hist_phase_deg.add(pm);
    }
    summary.hist_bw_logdecade.add(m.bw_3db_hz.max(1e-3).log10());
    summary.hist_power_w.add(m.power_w);
    if policy.in_guard_band(m) {
        summary.guard_band_offenders += 1;
    }
    let in_window = policy.spec.power_w_min.is_none_or(|lo| m.power_w >= lo)
        && policy.spec.power_w_max.is_none_or(|hi| m.power_w <= hi);
    if in_window {
        summary.power_window_keys += 1;
        if policy.meets_specs(m) {
            summary.power_window_desired += 1;
        }
    }
}

/// True iff no record's gain lies in `[a, b)`; offenders otherwise.
pub fn gap_check(records: &[KeyRecord], band: (f64, f64)) -> (bool, Vec<Selection>) {
    let (a, b) = band;
    let offenders: Vec<Selection> = records
        .iter()
        .filter(|r| {
            r.metrics
                .as_ref()
                .is_some_and(|m| m.gain_db >= a && m.gain_db < b)
        })
        .map(|r| r.selection.clone())
        .collect();
    (offenders.is_empty(), offenders)
}

/// Count keys whose power falls inside the window versus those that also
/// meet every spec threshold. The first count always bounds the second.
pub fn power_ambiguity(
    records: &[KeyRecord],
    window: (f64, f64),
    policy: &LockPolicy,
) -> (u64, u64) {
    let (lo, hi) = window;
    let mut in_window = 0;
    let mut desired = 0;
    for r in records {
        if let Some(m) = &r.metrics {
            if m.power_w >= lo && m.power_w <= hi {
                in_window += 1;
                if policy.meets_specs(m) {
                    desired += 1;
                }
            }
        }
    }
    debug_assert!(in_window >= desired);
    (in_window, desired)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_radix_order() {
        let keys: Vec<Selection> = MixedRadix::new(vec![2, 3]).collect();
        assert_eq!(
            keys,
            vec![
                vec![0, 0],
                vec![0, 1],
                vec![0, 2],
                vec![1, 0],
                vec![1, 1],
                vec![1, 2]
            ]
        );
    }

    #[test]
    fn mixed_radix_counts_products() {
        let sizes = vec![4, 5, 7, 5, 9, 4, 2];
        let n = MixedRadix::new(sizes.clone()).count() as u128;
        assert_eq!(n, sizes.iter().map(|&s| s as u128).product());
        assert_eq!(n, 50_400);
    }

    #[test]
    fn sample_stream_is_deterministic() {
        let draw = |seed| -> Vec<Selection> {
            KeyStream::Sample {
                sizes: vec![3, 4, 5],
                remaining: 10,
                rng: ChaCha8Rng::seed_from_u64(seed),
            }
            .collect()
        };
        assert_eq!(draw(7), draw(7));
        assert_ne!(draw(7), draw(8));
        assert_eq!(draw(7).len(), 10);
    }
}
