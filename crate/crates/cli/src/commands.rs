use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use madpo_core::experiment::{run_on, select_weight_config, CellOutcome, Method, Selection, Settings, TierData};
use madpo_core::policy::{PolicyFile, ReferencePolicy};
use madpo_core::provenance::bytes_hash;
use madpo_core::reward::RewardModelFile;
use madpo_core::verify::run_suite;
use madpo_core::world::{read_ndjson, write_ndjson, DatasetHeader};
use madpo_core::{Tier, WeightConfig, World};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::table::{read_sweep_csv, write_sweep_csv, ResultRow, ResultsTable, SweepRow};
use crate::CliError;

fn data_path(out: &Path, seed: u64, tier: Tier) -> PathBuf {
    out.join("data").join(format!("seed-{seed}")).join(format!("{tier}.ndjson"))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

#[derive(Debug, Serialize)]
struct ManifestEntry {
    tier: Tier,
    path: String,
    records: usize,
    sha256_16: String,
}

#[derive(Debug, Serialize)]
struct Manifest {
    seed: u64,
    config_hash: String,
    n_pairs: usize,
    negative_center: f64,
    files: Vec<ManifestEntry>,
}

pub fn generate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let settings = &cfg.settings;
    let config_hash = settings.hash()?;
    for &seed in &cfg.seeds {
        let world = World::new(settings.world, seed)?;
        let mut files = Vec::new();
        for &tier in &cfg.tiers {
            let records = world.build_dataset(tier, settings.n_pairs)?;
            let header = DatasetHeader { seed, tier, config_hash: config_hash.clone() };
            let mut buf = Vec::new();
            write_ndjson(&mut buf, &header, &records)?;
            let path = data_path(&cfg.out, seed, tier);
            write_file(&path, &buf)?;
            files.push(ManifestEntry { tier, path: format!("{tier}.ndjson"), records: records.len(), sha256_16: bytes_hash(&buf) });
        }
        let manifest = Manifest { seed, config_hash: config_hash.clone(), n_pairs: settings.n_pairs, negative_center: world.negative_center(), files };
        let dir = cfg.out.join("data").join(format!("seed-{seed}"));
        write_json(&dir.join("manifest.json"), &manifest)?;
        println!("seed {seed}: wrote {} dataset(s) to {}", manifest.files.len(), dir.display());
    }
    Ok(())
}

/// Load a generated dataset and check it against the current settings.
fn load_tier(cfg: &ExperimentConfig, seed: u64, tier: Tier) -> Result<TierData, CliError> {
    let path = data_path(&cfg.out, seed, tier);
    let bytes = fs::read(&path).map_err(|_| {
        CliError::Config(format!("missing dataset {}; run `madpo generate` with the same config first", path.display()))
    })?;
    let (header, records) = read_ndjson(BufReader::new(bytes.as_slice())).map_err(|e| CliError::io(&path, e))?;
    let expected = cfg.settings.hash()?;
    if header.config_hash != expected || header.seed != seed || header.tier != tier {
        return Err(CliError::Config(format!(
            "{} was generated with seed={} tier={} config_hash={}, expected seed={seed} tier={tier} config_hash={expected}; regenerate it",
            path.display(),
            header.seed,
            header.tier,
            header.config_hash
        )));
    }
    let data = TierData::from_records(tier, records, &cfg.settings, seed)?;
    if data.dataset_hash != bytes_hash(&bytes) {
        return Err(CliError::Config(format!("{} does not round-trip exactly; regenerate it", path.display())));
    }
    Ok(data)
}

struct Inputs {
    worlds: BTreeMap<u64, World>,
    data: BTreeMap<(u64, Tier), TierData>,
}

fn load_inputs(cfg: &ExperimentConfig) -> Result<Inputs, CliError> {
    let mut worlds = BTreeMap::new();
    let mut data = BTreeMap::new();
    for &seed in &cfg.seeds {
        worlds.insert(seed, World::new(cfg.settings.world, seed)?);
        for &tier in &cfg.tiers {
            data.insert((seed, tier), load_tier(cfg, seed, tier)?);
        }
    }
    Ok(Inputs { worlds, data })
}

fn pool(n: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

fn write_cell(dir: &Path, stem: &str, settings: &Settings, out: &CellOutcome) -> Result<(), CliError> {
    write_json(&dir.join(format!("{stem}.json")), &out.report)?;

    let loss_path = dir.join(format!("{stem}.loss.csv"));
    let mut w = csv::Writer::from_path(&loss_path).map_err(|e| CliError::io(&loss_path, e))?;
    for s in &out.report.steps {
        w.serialize(s).map_err(|e| CliError::io(&loss_path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&loss_path, e))?;

    let config_hash = out.report.config_hash.clone();
    let policy = PolicyFile {
        theta: out.policy.theta.clone(),
        ref_hash: ReferencePolicy::uniform(settings.world.psi_dim()).hash(),
        config_hash: config_hash.clone(),
    };
    write_json(&dir.join(format!("{stem}.policy.json")), &policy)?;
    if let Some(fit) = &out.reward {
        let rm = RewardModelFile {
            phi: fit.final_params.phi.clone(),
            config_hash,
            stopped_epoch: fit.stopped_epoch,
            val_loss: fit.best_val_loss(),
        };
        write_json(&dir.join(format!("{stem}.reward.json")), &rm)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ResultsJson<'a> {
    config_hash: &'a str,
    rows: &'a [ResultRow],
    aggregate: Vec<crate::table::AggregateRow>,
}

fn write_results(out: &Path, table: &ResultsTable, config_hash: &str) -> Result<(), CliError> {
    create_dir(out)?;
    table.write_csv(&out.join("results.csv"))?;
    let aggregate = table.aggregate();
    let summary_path = out.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary_path).map_err(|e| CliError::io(&summary_path, e))?;
    w.write_record(["method", "tier", "n_seeds", "mean_reward", "std_error", "config_hash"]).map_err(|e| CliError::io(&summary_path, e))?;
    for a in &aggregate {
        w.write_record([
            a.method.clone(),
            a.tier.clone(),
            a.n_seeds.to_string(),
            a.mean_reward.to_string(),
            a.std_error.to_string(),
            config_hash.to_string(),
        ])
        .map_err(|e| CliError::io(&summary_path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&summary_path, e))?;
    write_json(&out.join("results.json"), &ResultsJson { config_hash, rows: &table.rows, aggregate })
}

pub fn run(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let inputs = load_inputs(cfg)?;
    let settings = &cfg.settings;
    let mut cells = Vec::new();
    for &seed in &cfg.seeds {
        for &tier in &cfg.tiers {
            for &method in &cfg.methods {
                cells.push((method, tier, seed));
            }
        }
    }
    let outcomes: Vec<_> = pool(cfg.parallel)?.install(|| {
        cells
            .par_iter()
            .map(|&(method, tier, seed)| run_on(settings, &inputs.worlds[&seed], &inputs.data[&(seed, tier)], method, seed))
            .collect()
    });

    let runs = cfg.out.join("runs");
    create_dir(&runs)?;
    let mut table = ResultsTable::default();
    let mut failed = Vec::new();
    for ((method, tier, seed), outcome) in cells.iter().zip(outcomes) {
        let stem = format!("{method}-{tier}-seed{seed}");
        match outcome {
            Ok(o) => {
                write_cell(&runs, &stem, settings, &o)?;
                table.rows.push(ResultRow {
                    method: method.to_string(),
                    tier: tier.to_string(),
                    seed: *seed,
                    mean_reward: o.eval.mean_reward,
                    std_error: o.eval.std_error,
                    config_hash: o.report.config_hash.clone(),
                });
            }
            Err(e) => {
                eprintln!("cell {stem} failed: {e}");
                failed.push(stem);
            }
        }
    }
    write_results(&cfg.out, &table, &settings.hash()?)?;
    print!("{}", table.render());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(format!("{} cell(s) failed: {}", failed.len(), failed.join(", "))))
    }
}

struct SweepJob {
    param: String,
    value: f64,
    method: Method,
    settings: Settings,
    tier: Tier,
    seed: u64,
}

fn sweep_settings(cfg: &ExperimentConfig, param: &str, value: f64) -> Result<(Method, Settings), CliError> {
    let s = &cfg.sweep;
    let mut settings = cfg.settings;
    let method = match param {
        "tau" => {
            settings.madpo = WeightConfig::with_intensity(s.fixed_c, value)?;
            Method::Madpo
        }
        "c" => {
            settings.madpo = WeightConfig::with_intensity(value, s.fixed_tau)?;
            Method::Madpo
        }
        "m" => {
            settings.beta_dpo.m = value;
            settings.beta_dpo.filter_fraction = s.fixed_p;
            Method::BetaDpo
        }
        "p" => {
            settings.beta_dpo.m = s.fixed_m;
            settings.beta_dpo.filter_fraction = value;
            Method::BetaDpo
        }
        other => return Err(CliError::Config(format!("unknown sweep parameter '{other}'"))),
    };
    settings.validate().map_err(|e| CliError::Config(format!("sweep {param}={value}: {e}")))?;
    Ok((method, settings))
}

pub fn sweep(cfg: &ExperimentConfig, select: bool) -> Result<(), CliError> {
    cfg.validate_sweep()?;
    let inputs = load_inputs(cfg)?;
    let mut jobs = Vec::new();
    for param in &cfg.sweep.params {
        let grid = match param.as_str() {
            "tau" => &cfg.sweep.tau,
            "c" => &cfg.sweep.c,
            "m" => &cfg.sweep.m,
            _ => &cfg.sweep.p,
        };
        for &value in grid {
            let (method, settings) = sweep_settings(cfg, param, value)?;
            for &tier in &cfg.tiers {
                for &seed in &cfg.seeds {
                    jobs.push(SweepJob { param: param.clone(), value, method, settings, tier, seed });
                }
            }
        }
    }
    let pool = pool(cfg.parallel)?;
    let outcomes: Vec<_> = pool.install(|| {
        jobs.par_iter()
            .map(|j| run_on(&j.settings, &inputs.worlds[&j.seed], &inputs.data[&(j.seed, j.tier)], j.method, j.seed))
            .collect()
    });

    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for (j, outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Ok(o) => rows.push(SweepRow {
                param: j.param.clone(),
                value: j.value,
                method: j.method.to_string(),
                tier: j.tier.to_string(),
                seed: j.seed,
                mean_reward: o.eval.mean_reward,
                std_error: o.eval.std_error,
                config_hash: o.report.config_hash,
            }),
            Err(e) => {
                eprintln!("sweep cell {}={} {} seed {} failed: {e}", j.param, j.value, j.tier, j.seed);
                failed.push(format!("{}={}/{}/{}", j.param, j.value, j.tier, j.seed));
            }
        }
    }

    if select {
        let mut candidates = Vec::new();
        for &tau in &cfg.sweep.tau {
            for &c in &cfg.sweep.c {
                candidates.push(WeightConfig::with_intensity(c, tau)?);
            }
        }
        let keys: Vec<(u64, Tier)> = inputs.data.keys().copied().collect();
        let selections: Vec<Result<(Selection, CellOutcome), madpo_core::Error>> = pool.install(|| {
            keys.par_iter()
                .map(|&(seed, tier)| {
                    let world = &inputs.worlds[&seed];
                    let data = &inputs.data[&(seed, tier)];
                    let sel = select_weight_config(&cfg.settings, world, data, &candidates, seed)?;
                    let settings = Settings { madpo: sel.best, ..cfg.settings };
                    let out = run_on(&settings, world, data, Method::Madpo, seed)?;
                    Ok((sel, out))
                })
                .collect()
        });
        let mut chosen = Vec::new();
        for ((seed, tier), r) in keys.iter().zip(selections) {
            match r {
                Ok((sel, o)) => {
                    rows.push(SweepRow {
                        param: "selected-tau".into(),
                        value: sel.best.tau,
                        method: format!("madpo[c={}]", sel.best.c_max),
                        tier: tier.to_string(),
                        seed: *seed,
                        mean_reward: o.eval.mean_reward,
                        std_error: o.eval.std_error,
                        config_hash: o.report.config_hash,
                    });
                    chosen.push(sel);
                }
                Err(e) => {
                    eprintln!("selection for {tier} seed {seed} failed: {e}");
                    failed.push(format!("select/{tier}/{seed}"));
                }
            }
        }
        write_json(&cfg.out.join("selection.json"), &chosen)?;
    }

    create_dir(&cfg.out)?;
    write_sweep_csv(&rows, &cfg.out.join("sweep.csv"))?;
    let table = ResultsTable { rows: rows.iter().map(SweepRow::to_result).collect() };
    print!("{}", table.render());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(format!("{} sweep cell(s) failed: {}", failed.len(), failed.join(", "))))
    }
}

pub fn verify(json: bool, seed: u64) -> Result<(), CliError> {
    let report = run_suite(seed);
    if json {
        println!("{}", serde_json::to_string_pretty(&report).map_err(|e| CliError::Check(e.to_string()))?);
    } else {
        print!("{}", report.table());
    }
    if report.passed() {
        Ok(())
    } else {
        let names: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        Err(CliError::Check(format!("verification failed: {}", names.join(", "))))
    }
}

pub fn report(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let path = cfg.out.join("results.csv");
    let sweep_path = cfg.out.join("sweep.csv");
    if !path.exists() && !sweep_path.exists() {
        return Err(CliError::Config(format!("no results under {}; run `madpo run` or `madpo sweep` first", cfg.out.display())));
    }
    if path.exists() {
        print!("{}", ResultsTable::read_csv(&path)?.render());
    }
    if sweep_path.exists() {
        let rows = read_sweep_csv(&sweep_path)?;
        println!("\nsweep ({} rows)", rows.len());
        print!("{}", ResultsTable { rows: rows.iter().map(SweepRow::to_result).collect() }.render());
    }
    Ok(())
}
