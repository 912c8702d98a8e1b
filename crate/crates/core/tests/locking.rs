//! Lock construction, key encoding, keyspace accounting, and pruning.

use ldelock_core::lock::{
    build_lock, parse_lock_config, prune, AlarmPredicate, Couple, DropReason, GroupSpec, Key,
    LockError, LockPolicy, LockSpec, LockedNetlist,
};
use ldelock_core::netlist::{parse, Arrangement, SpecThresholds};
use ldelock_core::sim::{PerfMetrics, Sign};
use ldelock_core::sweep::MixedRadix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// A minimal netlist with `n` parallel MOSFETs named M1..Mn.
fn synthetic_net(n: usize) -> ldelock_core::Netlist {
    let mut src = String::from("VDD vdd 0 DC 1\nVB g 0 DC 0.6\nR1 vdd d 1k\n");
    for i in 1..=n {
        src.push_str(&format!("M{i} d g 0 0 NMOS SVT W=1u L=100n\n"));
    }
    parse(&src).unwrap()
}

fn pair_groups(counts: &[usize], singles: &[usize]) -> Vec<GroupSpec> {
    let mut groups = Vec::new();
    let mut next = 1;
    for &added in counts {
        groups.push(GroupSpec {
            members: vec![format!("M{next}"), format!("M{}", next + 1)],
            added,
        });
        next += 2;
    }
    for &added in singles {
        groups.push(GroupSpec {
            members: vec![format!("M{next}")],
            added,
        });
        next += 1;
    }
    groups
}

fn build(counts: &[usize], singles: &[usize], seed: u64) -> LockedNetlist {
    let n = counts.len() * 2 + singles.len();
    let spec = LockSpec {
        groups: pair_groups(counts, singles),
        flatten_fingers: false,
        ..Default::default()
    };
    build_lock(&synthetic_net(n), &spec, seed).unwrap()
}

fn metrics(gain_db: f64, sign: Sign, power_w: f64) -> PerfMetrics {
    PerfMetrics {
        gain_db,
        gain_sign: sign,
        phase_margin_deg: Some(60.0),
        bw_3db_hz: 1e3,
        bw_saturated: false,
        power_w,
        gm_s: 1e-3,
        branch_currents: BTreeMap::new(),
        dc_iterations: 1,
    }
}

/// The case-study accounting: six pairs hidden behind 3+4+6+4+8+3 added
/// couples plus one single with one added arrangement give a 36-bit key
/// and a keyspace of 50400.
#[test]
fn keylength_and_keyspace_case_study() {
    let lock = build(&[3, 4, 6, 4, 8, 3], &[1], 7);
    assert_eq!(lock.group_sizes(), vec![4, 5, 7, 5, 9, 4, 2]);
    assert_eq!(lock.keylength(), 36);
    assert_eq!(lock.keyspace_size(), 50_400);
    // Brute-force oracle: exhaustive enumeration counts the same.
    let count = MixedRadix::new(lock.group_sizes()).count() as u128;
    assert_eq!(count, lock.keyspace_size());
}

/// The expanded configuration: eight pairs totaling 39 couples plus the
/// single of two give a 41-bit key; the size multiset is reconstructed so
/// the keyspace is 340200.
#[test]
fn keylength_and_keyspace_expanded() {
    let lock = build(&[6, 4, 4, 8, 3, 2, 2, 2], &[1], 7);
    assert_eq!(lock.keylength(), 41);
    assert_eq!(
        lock.groups.iter().take(8).map(|g| g.size()).sum::<usize>(),
        39
    );
    assert_eq!(lock.keyspace_size(), 340_200);
}

/// One transistor with all three arrangements: 3 valid keys out of 2^3 raw
/// bit patterns.
#[test]
fn single_transistor_raw_combinations() {
    let lock = build(&[], &[2], 7);
    assert_eq!(lock.keylength(), 3);
    assert_eq!(lock.keyspace_size(), 3);
    let raw = 1u32 << lock.keylength();
    assert_eq!(raw, 8);
    let valid = (0..raw)
        .filter(|bits| {
            let key = Key {
                bits: (0..3).map(|i| bits >> i & 1 == 1).collect(),
            };
            lock.selection_from_key(&key).is_ok()
        })
        .count();
    assert_eq!(valid, 3);
}

#[test]
fn correct_key_reproduces_designer_map() {
    let net = synthetic_net(2);
    let spec = LockSpec {
        groups: pair_groups(&[4], &[]),
        arrangements: [
            ("M1".to_string(), Arrangement::Sod),
            ("M2".to_string(), Arrangement::Sp),
        ]
        .into(),
        flatten_fingers: false,
        ..Default::default()
    };
    let lock = build_lock(&net, &spec, 3).unwrap();
    let key = lock.key_from_selection(&lock.correct_selection());
    let map = lock.apply_key(&key).unwrap();
    assert_eq!(map["M1"], Arrangement::Sod);
    assert_eq!(map["M2"], Arrangement::Sp);
}

#[test]
fn two_bits_in_one_group_rejected() {
    let lock = build(&[3, 3], &[], 9);
    let mut key = lock.key_from_selection(&[0, 0]);
    // Set a second bit inside some group's slice.
    let extra = lock.bit_perm[1];
    key.bits[extra] = true;
    match lock.apply_key(&key) {
        Err(LockError::InvalidKey { .. }) => {}
        other => panic!("expected invalid key, got {other:?}"),
    }
}

#[test]
fn wrong_key_length_rejected() {
    let lock = build(&[3], &[], 9);
    let key = Key { bits: vec![true] };
    match lock.apply_key(&key) {
        Err(LockError::BadKeyLength { expected: 4, got: 1 }) => {}
        other => panic!("expected bad key length, got {other:?}"),
    }
}

/// A permuted lock with correspondingly permuted key bits selects the same
/// arrangements as the identity-permutation lock.
#[test]
fn permutation_consistency() {
    let mut lock = build(&[5, 3, 2], &[1], 21);
    let n = lock.keylength();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..100 {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        lock.bit_perm = perm;
        for sel in MixedRadix::new(lock.group_sizes()) {
            let key = lock.key_from_selection(&sel);
            assert_eq!(lock.selection_from_key(&key).unwrap(), sel);
        }
    }
}

/// Distinct valid keys always select distinct arrangement maps.
#[test]
fn distinct_keys_distinct_maps() {
    let lock = build(&[2, 3], &[1], 5);
    let mut seen = std::collections::HashSet::new();
    for sel in MixedRadix::new(lock.group_sizes()) {
        let map = lock.apply_selection(&sel);
        assert!(seen.insert(format!("{map:?}")), "duplicate map for {sel:?}");
    }
    assert_eq!(seen.len() as u128, lock.keyspace_size());
}

#[test]
fn pair_with_eight_added_uses_whole_universe() {
    let lock = build(&[8], &[], 11);
    assert_eq!(lock.groups[0].size(), 9);
    let mut couples = lock.groups[0].couples.clone();
    couples.sort();
    couples.dedup();
    assert_eq!(couples.len(), 9);
}

#[test]
fn zero_added_is_unlockable() {
    let net = synthetic_net(2);
    let spec = LockSpec {
        groups: pair_groups(&[0], &[]),
        flatten_fingers: false,
        ..Default::default()
    };
    match build_lock(&net, &spec, 1) {
        Err(LockError::GroupTooSmall { group: 0 }) => {}
        other => panic!("expected group too small, got {other:?}"),
    }
}

#[test]
fn too_many_couples_rejected() {
    let net = synthetic_net(2);
    let spec = LockSpec {
        groups: pair_groups(&[9], &[]),
        flatten_fingers: false,
        ..Default::default()
    };
    match build_lock(&net, &spec, 1) {
        Err(LockError::TooManyCouples { group: 0, .. }) => {}
        other => panic!("expected too many couples, got {other:?}"),
    }
}

#[test]
fn unknown_and_duplicate_members_rejected() {
    let net = synthetic_net(2);
    let spec = LockSpec {
        groups: vec![GroupSpec {
            members: vec!["M1".into(), "MX".into()],
            added: 2,
        }],
        flatten_fingers: false,
        ..Default::default()
    };
    match build_lock(&net, &spec, 1) {
        Err(LockError::UnknownTransistor { name }) => assert_eq!(name, "MX"),
        other => panic!("expected unknown transistor, got {other:?}"),
    }

    let spec = LockSpec {
        groups: vec![
            GroupSpec {
                members: vec!["M1".into(), "M2".into()],
                added: 2,
            },
            GroupSpec {
                members: vec!["M1".into()],
                added: 1,
            },
        ],
        flatten_fingers: false,
        ..Default::default()
    };
    match build_lock(&net, &spec, 1) {
        Err(LockError::DuplicateMember { name }) => assert_eq!(name, "M1"),
        other => panic!("expected duplicate member, got {other:?}"),
    }
}

#[test]
fn build_is_deterministic_per_seed() {
    let a = build(&[3, 4], &[1], 17);
    let b = build(&[3, 4], &[1], 17);
    let c = build(&[3, 4], &[1], 18);
    assert_eq!(a, b);
    assert_ne!(a, c);
}

fn test_policy() -> LockPolicy {
    LockPolicy {
        spec: SpecThresholds {
            gain_db_min: Some(70.0),
            power_w_max: Some(1.2e-3),
            ..Default::default()
        },
        guard_band: Some((67.0, 70.0)),
        alarms: vec![AlarmPredicate::NegativeGain],
    }
}

/// Scripted evaluator: metrics keyed on M1's arrangement.
fn scripted(
    table: BTreeMap<Arrangement, PerfMetrics>,
) -> impl Fn(&BTreeMap<String, Arrangement>) -> Result<PerfMetrics, ldelock_core::sim::SimError> {
    move |map| {
        let arr = map.get("M1").copied().unwrap_or(Arrangement::Bl);
        Ok(table[&arr].clone())
    }
}

#[test]
fn prune_drops_guard_band_decoy() {
    let net = synthetic_net(1);
    let spec = LockSpec {
        groups: pair_groups(&[], &[2]),
        flatten_fingers: false,
        policy: test_policy(),
        ..Default::default()
    };
    let lock = build_lock(&net, &spec, 2).unwrap();
    // Correct arrangement is BL; SP lands in the guard band, SOD is far off.
    let table: BTreeMap<Arrangement, PerfMetrics> = [
        (Arrangement::Bl, metrics(73.0, Sign::Plus, 1.1e-3)),
        (Arrangement::Sp, metrics(68.0, Sign::Plus, 1.5e-3)),
        (Arrangement::Sod, metrics(40.0, Sign::Plus, 1.5e-3)),
    ]
    .into();
    let (pruned, report) = prune(&lock, scripted(table), &test_policy(), 5).unwrap();
    assert_eq!(report.drops.len(), 1);
    assert_eq!(report.drops[0].reason, DropReason::GuardBand);
    assert_eq!(report.drops[0].couple, "SP");
    assert_eq!(pruned.groups[0].size(), 2);
    // The correct couple survives.
    let correct = &pruned.groups[0].couples[pruned.groups[0].correct_index];
    assert_eq!(correct.0, vec![Arrangement::Bl]);
}

#[test]
fn prune_drops_alarm_and_spec_window_decoys() {
    let net = synthetic_net(1);
    let spec = LockSpec {
        groups: pair_groups(&[], &[2]),
        flatten_fingers: false,
        policy: test_policy(),
        ..Default::default()
    };
    let lock = build_lock(&net, &spec, 2).unwrap();
    // SP flips the gain sign (alarm); SOD looks fully in-spec.
    let table: BTreeMap<Arrangement, PerfMetrics> = [
        (Arrangement::Bl, metrics(73.0, Sign::Plus, 1.1e-3)),
        (Arrangement::Sp, metrics(40.0, Sign::Minus, 1.5e-3)),
        (Arrangement::Sod, metrics(73.0, Sign::Plus, 1.1e-3)),
    ]
    .into();
    match prune(&lock, scripted(table), &test_policy(), 5) {
        Err(LockError::GroupCollapsed { group: 0 }) => {}
        other => panic!("expected a collapsed group, got {other:?}"),
    }
}

#[test]
fn prune_is_identity_when_all_decoys_are_bad() {
    let lock = build(&[3, 2], &[1], 4);
    // Any deviation from the all-baseline design breaks the circuit hard.
    let eval = |map: &BTreeMap<String, Arrangement>| {
        if map.values().any(|&a| a != Arrangement::Bl) {
            Ok(metrics(40.0, Sign::Plus, 1.6e-3))
        } else {
            Ok(metrics(73.0, Sign::Plus, 1.1e-3))
        }
    };
    let (pruned, report) = prune(&lock, eval, &test_policy(), 5).unwrap();
    assert!(report.drops.is_empty());
    assert_eq!(pruned, lock);
}

#[test]
fn lock_config_round_trip() {
    let cfg = "\
# case study lock
seed=42
flatten_fingers=true
arrange MP1 SOD
group MP1 MP2 add=6
single MN17 add=1
guard_band=67,70
spec gain_db_min=70 pm_deg_min=45 power_w_min=1.1m power_w_max=1.2m
alarm negative_gain
";
    let spec = parse_lock_config(cfg).unwrap();
    assert_eq!(spec.seed, Some(42));
    assert!(spec.flatten_fingers);
    assert_eq!(spec.arrangements["MP1"], Arrangement::Sod);
    assert_eq!(spec.groups.len(), 2);
    assert_eq!(spec.groups[0].members, vec!["MP1", "MP2"]);
    assert_eq!(spec.groups[0].added, 6);
    assert_eq!(spec.groups[1].members, vec!["MN17"]);
    assert_eq!(spec.policy.guard_band, Some((67.0, 70.0)));
    assert_eq!(spec.policy.spec.gain_db_min, Some(70.0));
    assert_eq!(spec.policy.spec.power_w_min, Some(1.1e-3));
    assert_eq!(spec.policy.alarms, vec![AlarmPredicate::NegativeGain]);
}

#[test]
fn lock_config_rejects_unknown_directive() {
    let err = parse_lock_config("group A B add=2\nbogus line here\n").unwrap_err();
    assert_eq!(err.line, 2);
}

#[test]
fn couple_universe_sizes() {
    assert_eq!(Couple::universe(1).len(), 3);
    assert_eq!(Couple::universe(2).len(), 9);
    let mut u = Couple::universe(2);
    u.sort();
    u.dedup();
    assert_eq!(u.len(), 9);
}
