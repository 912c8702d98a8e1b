//! Command implementations.

use crate::archive::{assemble_lock, read_archive, read_secret, write_archive, write_secret};
use crate::manifest::RunManifest;
use crate::{CliError, CommonOpts};
use ldelock_core::attack::{
    brute_force, divide_and_conquer, lde_blind_gain_spread, naive_guess, removal_report,
    AttackReport, GuessPattern, KeyOrder, Oracle, RedactedLock, SubcircuitTarget,
};
use ldelock_core::lde::LdeTable;
use ldelock_core::lock::{
    build_lock, build_lock_refined, parse_lock_config, parse_number, prune, selection_from_label,
    LockPolicy, LockedNetlist,
};
use ldelock_core::netlist::{parse, Arrangement, Netlist};
use ldelock_core::sweep::{run_sweep, SweepConfig, SweepError, SweepMode};
use ldelock_core::{Evaluator, SimOptions};
use std::io::Write;
use std::path::Path;

fn ensure_out(common: &CommonOpts) -> Result<(), CliError> {
    std::fs::create_dir_all(&common.out)?;
    Ok(())
}

fn read_netlist(path: &Path) -> Result<Netlist, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

fn load_table(path: Option<&str>, relative_to: &Path) -> Result<LdeTable, CliError> {
    match path {
        None => Ok(LdeTable::builtin()),
        Some(p) => {
            let resolved = relative_to.parent().unwrap_or(Path::new(".")).join(p);
            let text = std::fs::read_to_string(&resolved).map_err(|e| {
                CliError::table(format!("cannot read table {}: {e}", resolved.display()))
            })?;
            LdeTable::load(&text).map_err(|e| CliError::table(format!("{}: {e}", resolved.display())))
        }
    }
}

fn evaluator(net: Netlist, lde: LdeTable) -> Result<Evaluator, CliError> {
    Evaluator::new(net, lde, SimOptions::default())
        .map_err(|e| CliError::config(format!("simulation setup: {e}")))
}

fn thread_pool(common: &CommonOpts) -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = common.jobs {
        builder = builder.num_threads(jobs);
    }
    builder
        .build()
        .map_err(|e| CliError::internal(format!("thread pool: {e}")))
}

pub fn cmd_lock(
    netlist_path: &Path,
    config_path: &Path,
    refine: bool,
    common: &CommonOpts,
) -> Result<(), CliError> {
    ensure_out(common)?;
    let net = read_netlist(netlist_path)?;
    let cfg_text = std::fs::read_to_string(config_path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", config_path.display())))?;
    let mut spec = parse_lock_config(&cfg_text)
        .map_err(|e| CliError::config(format!("{}: {e}", config_path.display())))?;
    spec.lde = load_table(spec.lde_path.as_deref(), config_path)?;

    let seed = common
        .seed
        .or(spec.seed)
        .ok_or_else(|| CliError::config("no seed: pass --seed or set seed= in the config"))?;

    let base = if spec.flatten_fingers {
        net.flatten_fingers()
    } else {
        net.clone()
    };
    let ev = evaluator(base, spec.lde.clone())?;

    let policy = spec.policy.clone();
    let build_result = if refine {
        build_lock_refined(&net, &spec, seed, |m| ev.eval(m))
    } else {
        build_lock(&net, &spec, seed).and_then(|lock| prune(&lock, |m| ev.eval(m), &policy, seed))
    };
    let (locked, report) =
        build_result.map_err(|e| CliError::config(format!("lock construction: {e}")))?;

    let mut manifest = RunManifest::new(vec![seed]);
    manifest.input_file(netlist_path)?;
    manifest.input_file(config_path)?;

    let archive_path = common.out.join("archive.json");
    let bytes = write_archive(&archive_path, &locked)?;
    manifest.output("archive.json", &bytes);

    let secret_path = common.out.join("secret_key.txt");
    let bytes = write_secret(&secret_path, &locked)?;
    manifest.output("secret_key.txt", &bytes);

    let report_path = common.out.join("prune_report.json");
    let mut bytes = serde_json::to_vec_pretty(&report)
        .map_err(|e| CliError::internal(format!("report serialization: {e}")))?;
    bytes.push(b'\n');
    std::fs::write(&report_path, &bytes)?;
    manifest.output("prune_report.json", &bytes);

    manifest.write(&common.out.join("manifest.json"))?;
    println!(
        "locked: {} groups, keylength {}, keyspace {}, {} decoys rejected",
        locked.groups.len(),
        locked.keylength(),
        locked.keyspace_size(),
        report.drops.len()
    );
    Ok(())
}

/// Line-based sweep configuration.
struct SweepFileConfig {
    mode: SweepMode,
    cap: u128,
    policy_override: Option<LockPolicy>,
}

fn parse_sweep_config(text: &str, cli_seed: Option<u64>) -> Result<SweepFileConfig, CliError> {
    let mut mode_name = "exhaustive".to_string();
    let mut n: u64 = 1000;
    let mut seed: Option<u64> = None;
    let mut cap: u128 = 1_000_000;
    let mut policy = LockPolicy::default();
    let mut policy_touched = false;

    for (lineno0, raw) in text.lines().enumerate() {
        let line = lineno0 + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        match toks[0].to_ascii_lowercase().as_str() {
            "spec" => {
                for tok in &toks[1..] {
                    let (key, val) = tok
                        .split_once('=')
                        .ok_or_else(|| CliError::config(format!("sweep config line {line}: expected key=value")))?;
                    let v = parse_number(val).ok_or_else(|| {
                        CliError::config(format!("sweep config line {line}: invalid number `{val}`"))
                    })?;
                    let s = &mut policy.spec;
                    match key.to_ascii_lowercase().as_str() {
                        "gain_db_min" => s.gain_db_min = Some(v),
                        "pm_deg_min" => s.pm_deg_min = Some(v),
                        "power_w_min" => s.power_w_min = Some(v),
                        "power_w_max" => s.power_w_max = Some(v),
                        "bw_hz_min" => s.bw_hz_min = Some(v),
                        "bw_hz_max" => s.bw_hz_max = Some(v),
                        other => {
                            return Err(CliError::config(format!(
                                "sweep config line {line}: unknown spec field `{other}`"
                            )))
                        }
                    }
                    policy_touched = true;
                }
            }
            _ => {
                let (key, val) = trimmed.split_once('=').ok_or_else(|| {
                    CliError::config(format!("sweep config line {line}: unknown directive"))
                })?;
                let val = val.trim();
                match key.trim().to_ascii_lowercase().as_str() {
                    "mode" => mode_name = val.to_ascii_lowercase(),
                    "n" => {
                        n = val.parse().map_err(|_| {
                            CliError::config(format!("sweep config line {line}: invalid n"))
                        })?
                    }
                    "seed" => {
                        seed = Some(val.parse().map_err(|_| {
                            CliError::config(format!("sweep config line {line}: invalid seed"))
                        })?)
                    }
                    "cap" => {
                        cap = val.parse().map_err(|_| {
                            CliError::config(format!("sweep config line {line}: invalid cap"))
                        })?
                    }
                    "guard_band" => {
                        let (a, b) = val.split_once(',').ok_or_else(|| {
                            CliError::config(format!("sweep config line {line}: guard_band=a,b"))
                        })?;
                        let a = parse_number(a.trim())
                            .ok_or_else(|| CliError::config("invalid guard band"))?;
                        let b = parse_number(b.trim())
                            .ok_or_else(|| CliError::config("invalid guard band"))?;
                        policy.guard_band = Some((a, b));
                        policy_touched = true;
                    }
                    other => {
                        return Err(CliError::config(format!(
                            "sweep config line {line}: unknown directive `{other}`"
                        )))
                    }
                }
            }
        }
    }

    let mode = match mode_name.as_str() {
        "exhaustive" => SweepMode::Exhaustive,
        "sample" => {
            let seed = cli_seed
                .or(seed)
                .ok_or_else(|| CliError::config("sample mode needs a seed"))?;
            SweepMode::Sample { n, seed }
        }
        other => return Err(CliError::config(format!("unknown sweep mode `{other}`"))),
    };
    Ok(SweepFileConfig {
        mode,
        cap,
        policy_override: policy_touched.then_some(policy),
    })
}

pub fn cmd_sweep(
    archive_path: &Path,
    sweep_config_path: &Path,
    secret: Option<&Path>,
    common: &CommonOpts,
) -> Result<(), CliError> {
    ensure_out(common)?;
    let view = read_archive(archive_path)?;
    let cfg_text = std::fs::read_to_string(sweep_config_path).map_err(|e| {
        CliError::config(format!("cannot read {}: {e}", sweep_config_path.display()))
    })?;
    let file_cfg = parse_sweep_config(&cfg_text, common.seed)?;

    // With the secret key the correct key is labeled; without it the sweep
    // still runs, classifying it as any other spec-passing key.
    let (locked, correct_known) = match secret {
        Some(path) => (assemble_lock(&view, &read_secret(path)?)?, true),
        None => (assemble_lock(&view, &vec![0; view.groups.len()])?, false),
    };

    let ev = evaluator(locked.base.clone(), locked.lde.clone())?;
    let policy = file_cfg.policy_override.unwrap_or_else(|| view.policy.clone());
    let cfg = SweepConfig {
        mode: file_cfg.mode,
        policy,
        cap: file_cfg.cap,
        keep_records: false,
        correct_known,
    };

    let csv_path = common.out.join("sweep.csv");
    let mut csv = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);

    let pool = thread_pool(common)?;
    let report = pool
        .install(|| run_sweep(&locked, &ev, &cfg, Some(&mut csv)))
        .map_err(|e| match e {
            SweepError::KeyspaceTooLarge { size, cap } => CliError::scale(format!(
                "keyspace has {size} keys (cap {cap}); use mode=sample in the sweep config"
            )),
            SweepError::Io(e) => CliError::internal(format!("i/o during sweep: {e}")),
        })?;
    csv.flush()?;

    let mut manifest = RunManifest::new(common.seed.into_iter().collect());
    manifest.input_file(archive_path)?;
    manifest.input_file(sweep_config_path)?;
    let csv_bytes = std::fs::read(&csv_path)?;
    manifest.output("sweep.csv", &csv_bytes);

    let summary_path = common.out.join("summary.json");
    let mut bytes = serde_json::to_vec_pretty(&report.summary)
        .map_err(|e| CliError::internal(format!("summary serialization: {e}")))?;
    bytes.push(b'\n');
    std::fs::write(&summary_path, &bytes)?;
    manifest.output("summary.json", &bytes);
    manifest.write(&common.out.join("manifest.json"))?;

    let s = &report.summary;
    println!(
        "swept {} keys: {:?}; desired fraction {:.4}{}",
        s.keys_evaluated,
        s.counts,
        s.desired_fraction,
        s.gap_verdict
            .map(|v| format!("; guard band empty: {v}"))
            .unwrap_or_default()
    );
    Ok(())
}

pub struct AttackArgs<'a> {
    pub archive: &'a Path,
    pub secret: &'a Path,
    pub attack: &'a str,
    pub budget: Option<u64>,
    pub order: &'a str,
    pub target: Option<&'a str>,
    pub gm_target: Option<f64>,
    pub tolerance: f64,
    pub guess: Option<&'a str>,
    pub max_keys: Option<u128>,
    pub common: &'a CommonOpts,
}

pub fn cmd_attack(args: AttackArgs<'_>) -> Result<(), CliError> {
    ensure_out(args.common)?;
    let view = read_archive(args.archive)?;
    let secret = read_secret(args.secret)?;
    let locked = assemble_lock(&view, &secret)?;
    let oracle_eval = evaluator(locked.base.clone(), locked.lde.clone())?;
    let oracle = Oracle::new(&locked, &oracle_eval);

    let report: AttackReport = match args.attack {
        "brute_force" => {
            let budget = args.budget.unwrap_or(u64::MAX);
            let order = match args.order {
                "canonical" => KeyOrder::Canonical,
                "random" => KeyOrder::Seeded(
                    args.common
                        .seed
                        .ok_or_else(|| CliError::attack("random order needs --seed"))?,
                ),
                other => return Err(CliError::attack(format!("unknown order `{other}`"))),
            };
            brute_force(&view, &oracle, budget, order)
        }
        "divide_and_conquer" => {
            let target_list = args
                .target
                .ok_or_else(|| CliError::attack("divide_and_conquer needs --target"))?;
            let transistors: Vec<String> = target_list
                .split(',')
                .map(|s| s.trim().to_ascii_uppercase())
                .collect();
            let gm_target = args
                .gm_target
                .ok_or_else(|| CliError::attack("divide_and_conquer needs --gm-target"))?;
            let attacker_eval = evaluator(view.base.clone(), view.lde.clone())?;
            divide_and_conquer(
                &view,
                &attacker_eval,
                &oracle,
                &SubcircuitTarget {
                    transistors,
                    gm_target_s: gm_target,
                    tolerance: args.tolerance,
                },
            )
        }
        "removal" => removal_report(&view),
        "naive_guess" => {
            let guesses: Vec<GuessPattern> = args
                .guess
                .unwrap_or("all-bl")
                .split(',')
                .map(|g| match g.trim().to_ascii_lowercase().as_str() {
                    "all-bl" => Ok(GuessPattern::Uniform(Arrangement::Bl)),
                    "all-sp" => Ok(GuessPattern::Uniform(Arrangement::Sp)),
                    "all-sod" => Ok(GuessPattern::Uniform(Arrangement::Sod)),
                    other => Err(CliError::attack(format!("unknown guess `{other}`"))),
                })
                .collect::<Result<_, _>>()?;
            let seed = args
                .common
                .seed
                .ok_or_else(|| CliError::attack("naive_guess needs --seed"))?;
            naive_guess(&view, &oracle, &guesses, seed)
        }
        "lde_blind" => {
            let max_keys = args.max_keys.unwrap_or(u128::MAX);
            let (spread, evaluated) =
                lde_blind_gain_spread(&view, &SimOptions::default(), max_keys)
                    .map_err(|e| CliError::attack(format!("blind evaluation: {e}")))?;
            AttackReport {
                attack: "lde_blind".into(),
                queries: 0,
                success: false,
                recovered_key: None,
                candidates_phase1: None,
                successes_phase2: None,
                fraction_removed: None,
                seed: None,
                elapsed_s: 0.0,
                notes: format!(
                    "max pairwise gain difference {spread:.3e} dB over {evaluated} keys \
                     under a layout-blind device model"
                ),
            }
        }
        other => return Err(CliError::attack(format!("unknown attack `{other}`"))),
    };

    let mut manifest = RunManifest::new(args.common.seed.into_iter().collect());
    manifest.input_file(args.archive)?;
    manifest.input_file(args.secret)?;
    let report_path = args.common.out.join("attack_report.json");
    let mut bytes = serde_json::to_vec_pretty(&report)
        .map_err(|e| CliError::internal(format!("report serialization: {e}")))?;
    bytes.push(b'\n');
    std::fs::write(&report_path, &bytes)?;
    manifest.output("attack_report.json", &bytes);
    manifest.write(&args.common.out.join("manifest.json"))?;

    println!(
        "{}: success={} queries={} {}",
        report.attack, report.success, report.queries, report.notes
    );
    Ok(())
}

pub fn cmd_characterize(table_path: &Path, mc: u64, common: &CommonOpts) -> Result<(), CliError> {
    let text = std::fs::read_to_string(table_path)
        .map_err(|e| CliError::table(format!("cannot read {}: {e}", table_path.display())))?;
    let table = LdeTable::load(&text)
        .map_err(|e| CliError::table(format!("{}: {e}", table_path.display())))?;

    println!("kind  flavor arr  vth_shift  gm_shift   vth_sd    gm_sd");
    for (kind, flavor, arr) in LdeTable::keys() {
        let e = table.lookup(kind, flavor, arr);
        let v = table.variation(kind, flavor, arr);
        println!(
            "{:<5} {:<6} {:<4} {:>+9.4} {:>+9.4} {:>8.4} {:>8.4}",
            kind.as_str(),
            flavor.as_str(),
            arr.as_str(),
            e.vth_shift,
            e.gm_shift,
            v.vth_sd,
            v.gm_sd
        );
    }

    if mc > 0 {
        let seed = common
            .seed
            .ok_or_else(|| CliError::config("Monte Carlo needs --seed"))?;
        println!("\nMonte Carlo ({mc} draws per entry, seed {seed}):");
        println!("kind  flavor arr  vth_sd_est  gm_sd_est");
        for (kind, flavor, arr) in LdeTable::keys() {
            let mut vth = Vec::with_capacity(mc as usize);
            let mut gm = Vec::with_capacity(mc as usize);
            for i in 0..mc {
                let (v, g) = table.sample_variation(
                    kind,
                    flavor,
                    arr,
                    seed.wrapping_add(i.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
                );
                vth.push(v);
                gm.push(g);
            }
            let sd = |xs: &[f64]| {
                let mean = xs.iter().sum::<f64>() / xs.len() as f64;
                (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0))
                    .sqrt()
            };
            println!(
                "{:<5} {:<6} {:<4} {:>10.4} {:>10.4}",
                kind.as_str(),
                flavor.as_str(),
                arr.as_str(),
                sd(&vth),
                sd(&gm)
            );
        }
    }
    Ok(())
}

pub fn cmd_simulate(
    netlist: Option<&Path>,
    lock_config: Option<&Path>,
    archive: Option<&Path>,
    key: Option<&str>,
    _common: &CommonOpts,
) -> Result<(), CliError> {
    let (metrics, label) = match (netlist, archive) {
        (Some(net_path), None) => {
            let net = read_netlist(net_path)?;
            let mut arrangements = ldelock_core::eval::ArrangementMap::new();
            let mut table = LdeTable::builtin();
            let mut flatten = true;
            if let Some(cfg_path) = lock_config {
                let cfg_text = std::fs::read_to_string(cfg_path).map_err(|e| {
                    CliError::config(format!("cannot read {}: {e}", cfg_path.display()))
                })?;
                let spec = parse_lock_config(&cfg_text)
                    .map_err(|e| CliError::config(format!("{}: {e}", cfg_path.display())))?;
                table = load_table(spec.lde_path.as_deref(), cfg_path)?;
                arrangements = spec.arrangements.into_iter().collect();
                flatten = spec.flatten_fingers;
            }
            let net = if flatten { net.flatten_fingers() } else { net };
            let ev = evaluator(net, table)?;
            let m = ev
                .eval(&arrangements)
                .map_err(|e| CliError::internal(format!("simulation: {e}")))?;
            (m, "netlist".to_string())
        }
        (None, Some(archive_path)) => {
            let view = read_archive(archive_path)?;
            let key_label =
                key.ok_or_else(|| CliError::config("simulating an archive needs --key"))?;
            let sel = selection_from_label(key_label)
                .ok_or_else(|| CliError::config(format!("malformed key `{key_label}`")))?;
            let locked = assemble_lock(&view, &vec![0; view.groups.len()])?;
            if sel.len() != locked.groups.len()
                || sel
                    .iter()
                    .zip(&locked.groups)
                    .any(|(&i, g)| i >= g.size())
            {
                return Err(CliError::config(format!("key `{key_label}` out of range")));
            }
            let map = locked.apply_selection(&sel);
            let ev = evaluator(locked.base.clone(), locked.lde.clone())?;
            let m = ev
                .eval(&map)
                .map_err(|e| CliError::internal(format!("simulation: {e}")))?;
            (m, format!("key {key_label}"))
        }
        _ => {
            return Err(CliError::config(
                "simulate needs either a netlist or --archive with --key",
            ))
        }
    };

    let json = serde_json::to_string_pretty(&metrics)
        .map_err(|e| CliError::internal(format!("metric serialization: {e}")))?;
    println!("{json}");
    eprintln!("simulated {label}");
    Ok(())
}
