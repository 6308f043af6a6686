//! Stage-cached experiment pipeline.
//!
//! Every stage has a key: the hash of its name, the config values it reads
//! and the content hashes of its input artifacts. A stage whose key matches a
//! record in an existing manifest, and whose outputs are all present with
//! their recorded hashes, is skipped and its outputs are read back from disk.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::ExperimentConfig;
use super::plots::{ablation_plot, emit_plots};
use crate::error::{Error, Result};
use crate::evaluation::{
    aggregate_runs, calibration_report, curve_to_csv, overopt_stats, read_curve_csv,
    smoothed_gold_range, CurvePoint, OveroptStats,
};
use crate::models::{
    fingerprint, from_bytes, to_bytes, train_reference_policy, GoldRewardModel, ModelKind,
    PolicyModel, RewardModel,
};
use crate::policy_opt::{run_ppo, PpoEnv};
use crate::prefdata::{build_dataset, parse_dataset, write_dataset, PreferenceDataset, World};
use crate::reward_training::{init_reward_model, train_reward_model, AggregationObjective, Method};
use crate::rng::derive_seed;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub key: String,
    pub outputs: Vec<Artifact>,
    pub wall_clock_secs: f64,
}

/// One method × seed run of the comparison (or of an ablation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub id: String,
    pub method: Method,
    pub seed: u64,
    pub objective: AggregationObjective,
    pub rm_epochs: usize,
    pub rm_param_count: usize,
    pub rm_train_secs: f64,
    pub ppo_secs: f64,
    pub curve: String,
    pub stats: OveroptStats,
    pub smoothed_gold_range: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub tool_version: String,
    pub config_hash: String,
    pub stages: Vec<StageRecord>,
    pub runs: Vec<RunRecord>,
    /// Stages that actually ran this time (the rest were cache hits).
    pub executed_stages: Vec<String>,
    pub artifacts: Vec<Artifact>,
}

impl RunManifest {
    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn artifact(&self, path: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.path == path)
    }
}

fn sha(bytes: &[u8]) -> String {
    fingerprint(bytes)
}

fn stage_key(name: &str, inputs: serde_json::Value) -> String {
    sha(json!({ "stage": name, "inputs": inputs })
        .to_string()
        .as_bytes())
}

fn stage_err(stage: &str, e: Error) -> Error {
    match e {
        Error::Stage { .. } => e,
        other => Error::Stage {
            stage: stage.to_string(),
            source: Box::new(other),
        },
    }
}

/// Files produced by a stage, relative to the output directory.
type Outputs = Vec<(String, Vec<u8>)>;

struct Cache {
    root: PathBuf,
    previous: HashMap<String, StageRecord>,
    records: Mutex<Vec<StageRecord>>,
    executed: Mutex<Vec<String>>,
}

impl Cache {
    fn open(root: &Path, manifests: &[&str]) -> Result<Self> {
        fs::create_dir_all(root)?;
        let mut previous = HashMap::new();
        for name in manifests {
            if let Ok(bytes) = fs::read(root.join(name)) {
                if let Ok(m) = serde_json::from_slice::<RunManifest>(&bytes) {
                    for s in m.stages {
                        previous.insert(s.name.clone(), s);
                    }
                }
            }
        }
        Ok(Self {
            root: root.to_path_buf(),
            previous,
            records: Mutex::new(Vec::new()),
            executed: Mutex::new(Vec::new()),
        })
    }

    fn is_fresh(&self, rec: &StageRecord) -> bool {
        rec.outputs
            .iter()
            .all(|a| fs::read(self.root.join(&a.path)).is_ok_and(|b| sha(&b) == a.sha256))
    }

    /// Returns the stage record, running `produce` only on a cache miss.
    fn stage(
        &self,
        name: &str,
        key: String,
        produce: impl FnOnce() -> Result<Outputs>,
    ) -> Result<StageRecord> {
        if let Some(prev) = self.previous.get(name) {
            if prev.key == key && self.is_fresh(prev) {
                self.records.lock().expect("poisoned").push(prev.clone());
                return Ok(prev.clone());
            }
        }
        let start = Instant::now();
        let files = produce().map_err(|e| stage_err(name, e))?;
        let wall_clock_secs = start.elapsed().as_secs_f64();
        let mut outputs = Vec::with_capacity(files.len());
        for (rel, bytes) in files {
            let path = self.root.join(&rel);
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(|e| stage_err(name, e.into()))?;
            }
            fs::write(&path, &bytes).map_err(|e| stage_err(name, e.into()))?;
            outputs.push(Artifact {
                path: rel,
                sha256: sha(&bytes),
            });
        }
        let rec = StageRecord {
            name: name.to_string(),
            key,
            outputs,
            wall_clock_secs,
        };
        self.records.lock().expect("poisoned").push(rec.clone());
        self.executed
            .lock()
            .expect("poisoned")
            .push(name.to_string());
        Ok(rec)
    }

    fn read(&self, rel: &str) -> Result<Vec<u8>> {
        Ok(fs::read(self.root.join(rel))?)
    }

    fn hash_of<'a>(rec: &'a StageRecord, rel: &str) -> &'a str {
        &rec.outputs
            .iter()
            .find(|a| a.path == rel)
            .expect("declared output")
            .sha256
    }
}

/// The frozen objects every run shares.
pub struct SharedWorld {
    pub world: World,
    pub gold: GoldRewardModel,
    pub reference: PolicyModel,
    pub dataset: PreferenceDataset,
    pub gold_hash: String,
    pub reference_hash: String,
    pub world_hash: String,
    pub dataset_hash: String,
}

pub const WORLD_FILE: &str = "world/world.json";
pub const GOLD_FILE: &str = "world/gold.json";
pub const REFERENCE_FILE: &str = "world/reference.json";
pub const DATASET_FILE: &str = "world/dataset.jsonl";

/// Builds (or reloads) the natural distribution, gold model, reference
/// policy and labeled dataset.
fn world_stages(cfg: &ExperimentConfig, cache: &Cache) -> Result<SharedWorld> {
    let w = &cfg.world;
    let ws = w.seed;
    let world_rec = cache.stage("world", stage_key("world", json!(w)), || {
        let world = World::new(
            w.vocab_size,
            w.prompt_len,
            w.completion_len,
            w.dirichlet_alpha,
            ws,
        )?;
        Ok(vec![(WORLD_FILE.into(), serde_json::to_vec(&world)?)])
    })?;
    let world: World = serde_json::from_slice(&cache.read(WORLD_FILE)?)?;
    let world_hash = Cache::hash_of(&world_rec, WORLD_FILE).to_string();

    let gold_rec = cache.stage(
        "gold",
        stage_key(
            "gold",
            json!({ "dims": cfg.gold_dims(), "gain": cfg.model.gold_init_gain, "seed": ws }),
        ),
        || {
            let gold = GoldRewardModel::seeded(
                cfg.gold_dims(),
                derive_seed(ws, "gold", 0),
                cfg.model.gold_init_gain,
            );
            Ok(vec![(GOLD_FILE.into(), to_bytes(ModelKind::Gold, &gold)?)])
        },
    )?;
    let gold_bytes = cache.read(GOLD_FILE)?;
    let gold: GoldRewardModel = from_bytes(ModelKind::Gold, &gold_bytes)?;
    let gold_hash = Cache::hash_of(&gold_rec, GOLD_FILE).to_string();

    let ref_rec = cache.stage(
        "reference",
        stage_key(
            "reference",
            json!({ "dims": cfg.policy_dims(), "training": cfg.reference, "world": world_hash }),
        ),
        || {
            let p = train_reference_policy(
                cfg.policy_dims(),
                &world.natural,
                &cfg.reference,
                derive_seed(ws, "reference", 0),
            )?;
            Ok(vec![(
                REFERENCE_FILE.into(),
                to_bytes(ModelKind::Policy, &p)?,
            )])
        },
    )?;
    let reference: PolicyModel = from_bytes(ModelKind::Policy, &cache.read(REFERENCE_FILE)?)?;
    let reference_hash = Cache::hash_of(&ref_rec, REFERENCE_FILE).to_string();

    let data_rec = cache.stage(
        "dataset",
        stage_key(
            "dataset",
            json!({ "data": cfg.data, "world": world_hash, "gold": gold_hash, "reference": reference_hash }),
        ),
        || {
            let ds = build_dataset(&world, &reference, &gold, &gold_hash, &cfg.data, derive_seed(ws, "data", 0))?;
            let mut buf = Vec::new();
            write_dataset(&ds, &mut buf)?;
            Ok(vec![(DATASET_FILE.into(), buf)])
        },
    )?;
    let dataset = parse_dataset(&String::from_utf8_lossy(&cache.read(DATASET_FILE)?))?;
    let dataset_hash = Cache::hash_of(&data_rec, DATASET_FILE).to_string();
    Ok(SharedWorld {
        world,
        gold,
        reference,
        dataset,
        gold_hash,
        reference_hash,
        world_hash,
        dataset_hash,
    })
}

/// A run to execute: which reward-model regime, how long to train it, and
/// which seed and PPO objective to use.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub method: Method,
    pub rm_epochs: usize,
    pub seed: u64,
    pub objective: AggregationObjective,
}

impl RunSpec {
    pub fn id(&self) -> String {
        format!("{}-e{}-s{}", self.method, self.rm_epochs, self.seed)
    }
}

fn calibration_objectives(method: Method) -> Vec<AggregationObjective> {
    match method {
        Method::Single => vec![AggregationObjective::Single(0)],
        _ => vec![
            AggregationObjective::Min,
            AggregationObjective::Mean,
            AggregationObjective::Max,
        ],
    }
}

fn objective_slug(o: AggregationObjective) -> String {
    o.to_string().replace(':', "")
}

/// RM training, PPO and calibration for one run.
fn execute_run(
    cfg: &ExperimentConfig,
    cache: &Cache,
    shared: &SharedWorld,
    spec: &RunSpec,
) -> Result<RunRecord> {
    let id = spec.id();
    let dir = format!("runs/{id}");
    let k = if spec.method == Method::Single {
        1
    } else {
        cfg.experiment.k
    };
    let rm_file = format!("{dir}/rm.json");
    let metrics_file = format!("{dir}/rm_metrics.csv");
    let rm_cfg = cfg
        .rm
        .train_config(spec.rm_epochs, derive_seed(spec.seed, "rm-train", 0));
    let rm_name = format!("rm:{id}");
    let rm_rec = cache.stage(
        &rm_name,
        stage_key(
            &rm_name,
            json!({
                "method": spec.method, "k": k, "train": rm_cfg, "dims": cfg.proxy_dims(),
                "from_reference": cfg.model.init_encoder_from_reference,
                "dataset": shared.dataset_hash, "reference": shared.reference_hash,
            }),
        ),
        || {
            let reference = cfg
                .model
                .init_encoder_from_reference
                .then_some(&shared.reference);
            let mut rm = init_reward_model(
                spec.method,
                k,
                cfg.proxy_dims(),
                reference,
                derive_seed(spec.seed, "rm-init", 0),
            )?;
            let log = train_reward_model(&shared.dataset, &mut rm, &rm_cfg)?;
            Ok(vec![
                (rm_file.clone(), to_bytes(ModelKind::Reward, &rm)?),
                (metrics_file.clone(), log.to_csv().into_bytes()),
            ])
        },
    )?;
    let rm: RewardModel = from_bytes(ModelKind::Reward, &cache.read(&rm_file)?)?;
    let rm_hash = Cache::hash_of(&rm_rec, &rm_file).to_string();

    let curve_file = format!("{dir}/curve.csv");
    let policy_file = format!("{dir}/policy.json");
    let ppo_stats_file = format!("{dir}/ppo_updates.csv");
    let mut ppo_cfg = cfg.ppo.clone();
    ppo_cfg.seed = spec.seed;
    let ppo_name = format!("ppo:{id}");
    let ppo_rec = cache.stage(
        &ppo_name,
        stage_key(
            &ppo_name,
            json!({
                "ppo": ppo_cfg, "seed": spec.seed, "objective": spec.objective, "method": spec.method,
                "rm": rm_hash, "reference": shared.reference_hash, "gold": shared.gold_hash, "world": shared.world_hash,
            }),
        ),
        || {
            let env = PpoEnv {
                world: &shared.world,
                reference: &shared.reference,
                reward_model: &rm,
                objective: spec.objective,
                gold: &shared.gold,
                method: spec.method,
            };
            let run = run_ppo(&env, &shared.reference, &ppo_cfg, |_| Ok(()))?;
            let mut stats = String::from("update,mean_ratio,clip_fraction,approx_kl\n");
            for (i, u) in run.updates.iter().enumerate() {
                stats.push_str(&format!("{},{},{},{}\n", i + 1, u.mean_ratio(), u.clip_fraction(), u.approx_kl()));
            }
            Ok(vec![
                (curve_file.clone(), curve_to_csv(&run.curve)?.into_bytes()),
                (policy_file.clone(), to_bytes(ModelKind::Policy, &run.policy)?),
                (ppo_stats_file.clone(), stats.into_bytes()),
            ])
        },
    )?;
    let curve = read_curve_csv(cache.read(&curve_file)?.as_slice())?;

    let bins = cfg.experiment.calibration_bins;
    let calib_name = format!("calib:{id}");
    let objectives = calibration_objectives(spec.method);
    cache.stage(
        &calib_name,
        stage_key(
            &calib_name,
            json!({ "rm": rm_hash, "dataset": shared.dataset_hash, "bins": bins }),
        ),
        || {
            objectives
                .iter()
                .map(|&o| {
                    let report =
                        calibration_report(&rm, o, shared.dataset.validation_pairs(), bins)?;
                    Ok((
                        format!("{dir}/calibration_{}.csv", objective_slug(o)),
                        report.to_table().into_bytes(),
                    ))
                })
                .collect()
        },
    )?;

    let stats = overopt_stats(&curve)?;
    Ok(RunRecord {
        id,
        method: spec.method,
        seed: spec.seed,
        objective: spec.objective,
        rm_epochs: spec.rm_epochs,
        rm_param_count: rm.param_count(),
        rm_train_secs: rm_rec.wall_clock_secs,
        ppo_secs: ppo_rec.wall_clock_secs,
        curve: curve_file,
        smoothed_gold_range: smoothed_gold_range(&curve),
        stats,
    })
}

fn run_all(
    cfg: &ExperimentConfig,
    cache: &Cache,
    shared: &SharedWorld,
    specs: &[RunSpec],
) -> Result<Vec<RunRecord>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.experiment.workers)
        .build()
        .map_err(|e| Error::input(format!("cannot build worker pool: {e}")))?;
    pool.install(|| {
        specs
            .par_iter()
            .map(|s| execute_run(cfg, cache, shared, s))
            .collect()
    })
}

fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    Ok(sha(&serde_json::to_vec(cfg)?))
}

fn finish(
    cache: Cache,
    cfg: &ExperimentConfig,
    runs: Vec<RunRecord>,
    manifest_name: &str,
) -> Result<RunManifest> {
    let mut stages = cache.records.into_inner().expect("poisoned");
    stages.sort_by(|a, b| a.name.cmp(&b.name));
    let mut executed = cache.executed.into_inner().expect("poisoned");
    executed.sort();
    let mut artifacts: Vec<Artifact> = stages.iter().flat_map(|s| s.outputs.clone()).collect();
    artifacts.sort_by(|a, b| a.path.cmp(&b.path));
    artifacts.dedup();
    let manifest = RunManifest {
        format: "rmlab-manifest".into(),
        version: MANIFEST_FORMAT_VERSION,
        tool_version: TOOL_VERSION.into(),
        config_hash: config_hash(cfg)?,
        stages,
        runs,
        executed_stages: executed,
        artifacts,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    fs::write(cache.root.join(manifest_name), bytes)?;
    Ok(manifest)
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ABLATION_MANIFEST_FILE: &str = "ablation_manifest.json";

fn open_cache(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Cache> {
    cfg.validate().map_err(|(key, msg)| Error::Config {
        key,
        line: None,
        msg,
    })?;
    Cache::open(out_dir, &[MANIFEST_FILE, ABLATION_MANIFEST_FILE])
}

/// Mean, sample std and per-method tables of the runs' over-optimization
/// statistics.
fn run_tables(runs: &[RunRecord]) -> (String, String) {
    let mut per_run = String::from(
        "method,seed,rm_epochs,objective,peak_gold,peak_step,final_gold,decline,kl_at_peak,smoothed_gold_range,rm_param_count,rm_train_secs\n",
    );
    for r in runs {
        per_run.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.method,
            r.seed,
            r.rm_epochs,
            r.objective,
            r.stats.peak_gold,
            r.stats.peak_step,
            r.stats.final_gold,
            r.stats.decline,
            r.stats.kl_at_peak,
            r.smoothed_gold_range,
            r.rm_param_count,
            r.rm_train_secs
        ));
    }
    let mut summary = String::from(
        "method,rm_epochs,n_seeds,mean_final_gold,std_final_gold,mean_decline,std_decline\n",
    );
    let mut groups: Vec<(Method, usize)> = runs.iter().map(|r| (r.method, r.rm_epochs)).collect();
    groups.dedup();
    groups.sort();
    groups.dedup();
    for (m, e) in groups {
        let rs: Vec<&RunRecord> = runs
            .iter()
            .filter(|r| r.method == m && r.rm_epochs == e)
            .collect();
        let (fm, fs) = mean_std(&rs.iter().map(|r| r.stats.final_gold).collect::<Vec<_>>());
        let (dm, ds) = mean_std(&rs.iter().map(|r| r.stats.decline).collect::<Vec<_>>());
        summary.push_str(&format!("{m},{e},{},{fm},{fs},{dm},{ds}\n", rs.len()));
    }
    (per_run, summary)
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    (
        mean,
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt(),
    )
}

/// The three-method comparison: shared world, then every method × seed run,
/// then cross-seed aggregation, tables and plots.
pub fn run_full_experiment(cfg: &ExperimentConfig) -> Result<RunManifest> {
    run_full_experiment_in(cfg, &cfg.experiment.output_dir)
}

pub fn run_full_experiment_in(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunManifest> {
    let cache = open_cache(cfg, out_dir)?;
    let shared = world_stages(cfg, &cache)?;
    let specs: Vec<RunSpec> = cfg
        .experiment
        .methods
        .iter()
        .flat_map(|&m| {
            cfg.experiment.seeds.iter().map(move |&seed| RunSpec {
                method: m,
                rm_epochs: cfg.rm.epochs_for(m),
                seed,
                objective: m.default_objective(),
            })
        })
        .collect();
    let runs = run_all(cfg, &cache, &shared, &specs)?;

    let curve_hashes: Vec<String> = runs
        .iter()
        .map(|r| Ok(sha(&cache.read(&r.curve)?)))
        .collect::<Result<_>>()?;
    let (per_run, summary) = run_tables(&runs);
    cache.stage(
        "aggregate",
        stage_key("aggregate", json!({ "curves": curve_hashes })),
        || {
            let mut curves: Vec<Vec<CurvePoint>> = Vec::new();
            for r in &runs {
                curves.push(read_curve_csv(cache.read(&r.curve)?.as_slice())?);
            }
            let all: Vec<CurvePoint> = curves.iter().flatten().cloned().collect();
            let aggregated = aggregate_runs(&curves)?;
            let mut files = vec![("curves.csv".to_string(), curve_to_csv(&all)?.into_bytes())];
            files.extend(emit_plots(&aggregated)?);
            Ok(files)
        },
    )?;
    // Wall-clock columns vary between executions, so these tables are
    // written outside the cached stages.
    let mut extra = Vec::new();
    for (name, body) in [("run_stats.csv", per_run), ("summary.csv", summary)] {
        fs::write(out_dir.join(name), &body)?;
        extra.push(Artifact {
            path: name.into(),
            sha256: sha(body.as_bytes()),
        });
    }
    let mut m = finish(cache, cfg, runs, MANIFEST_FILE)?;
    m.artifacts.extend(extra);
    m.artifacts.sort_by(|a, b| a.path.cmp(&b.path));
    let mut bytes = serde_json::to_vec_pretty(&m)?;
    bytes.push(b'\n');
    fs::write(out_dir.join(MANIFEST_FILE), bytes)?;
    Ok(m)
}

/// Full-ensemble runs for each epoch count in `grid`, with a per-epoch
/// over-optimization table. Runs already present from the main comparison
/// are reused.
pub fn run_epoch_ablation(cfg: &ExperimentConfig, grid: &[usize]) -> Result<RunManifest> {
    run_epoch_ablation_in(cfg, grid, &cfg.experiment.output_dir)
}

pub fn run_epoch_ablation_in(
    cfg: &ExperimentConfig,
    grid: &[usize],
    out_dir: &Path,
) -> Result<RunManifest> {
    if grid.is_empty() || grid.contains(&0) {
        return Err(Error::input(
            "epoch grid must be nonempty with entries >= 1",
        ));
    }
    let cache = open_cache(cfg, out_dir)?;
    let shared = world_stages(cfg, &cache)?;
    let mut unique = grid.to_vec();
    unique.sort();
    unique.dedup();
    let specs: Vec<RunSpec> = unique
        .iter()
        .flat_map(|&e| {
            cfg.experiment.seeds.iter().map(move |&seed| RunSpec {
                method: Method::Ensemble,
                rm_epochs: e,
                seed,
                objective: Method::Ensemble.default_objective(),
            })
        })
        .collect();
    let runs = run_all(cfg, &cache, &shared, &specs)?;
    let mut table = String::from("epochs,seed,peak_gold,peak_step,final_gold,decline,kl_at_peak\n");
    let mut summary =
        String::from("epochs,n_seeds,mean_decline,std_decline,mean_final_gold,std_final_gold\n");
    let mut plot_rows = Vec::new();
    for &e in grid {
        let rs: Vec<&RunRecord> = runs.iter().filter(|r| r.rm_epochs == e).collect();
        for r in &rs {
            let s = &r.stats;
            table.push_str(&format!(
                "{e},{},{},{},{},{},{}\n",
                r.seed, s.peak_gold, s.peak_step, s.final_gold, s.decline, s.kl_at_peak
            ));
        }
        let (dm, ds) = mean_std(&rs.iter().map(|r| r.stats.decline).collect::<Vec<_>>());
        let (fm, fs) = mean_std(&rs.iter().map(|r| r.stats.final_gold).collect::<Vec<_>>());
        summary.push_str(&format!("{e},{},{dm},{ds},{fm},{fs}\n", rs.len()));
        if !plot_rows.iter().any(|r: &(usize, f64, f64)| r.0 == e) {
            plot_rows.push((e, dm, ds));
        }
    }
    plot_rows.sort_by_key(|r| r.0);
    let key = stage_key(
        "ablation",
        json!({ "table": sha(table.as_bytes()), "grid": grid }),
    );
    cache.stage("ablation", key, || {
        Ok(vec![
            ("epoch_ablation.csv".into(), table.clone().into_bytes()),
            (
                "epoch_ablation_summary.csv".into(),
                summary.clone().into_bytes(),
            ),
            (
                "plots/epoch_ablation.svg".into(),
                ablation_plot(&plot_rows).into_bytes(),
            ),
        ])
    })?;
    finish(cache, cfg, runs, ABLATION_MANIFEST_FILE)
}

/// Checks that every artifact listed in a manifest exists with its hash.
pub fn verify_manifest(out_dir: &Path, manifest: &RunManifest) -> Result<()> {
    for a in &manifest.artifacts {
        let bytes = fs::read(out_dir.join(&a.path))
            .map_err(|e| Error::input(format!("manifest artifact {} unreadable: {e}", a.path)))?;
        if sha(&bytes) != a.sha256 {
            return Err(Error::input(format!(
                "manifest artifact {} has changed",
                a.path
            )));
        }
    }
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<RunManifest> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

/// Loads the shared world artifacts written by an earlier run or `gen-data`.
pub fn load_world(out_dir: &Path) -> Result<(World, GoldRewardModel, PolicyModel)> {
    let world: World = serde_json::from_slice(&fs::read(out_dir.join(WORLD_FILE))?)?;
    let gold = from_bytes(ModelKind::Gold, &fs::read(out_dir.join(GOLD_FILE))?)?;
    let reference = from_bytes(ModelKind::Policy, &fs::read(out_dir.join(REFERENCE_FILE))?)?;
    Ok((world, gold, reference))
}

/// Runs only the shared-world stages (gold model, reference policy, dataset).
pub fn prepare_world(cfg: &ExperimentConfig, out_dir: &Path) -> Result<SharedWorld> {
    let cache = open_cache(cfg, out_dir)?;
    let shared = world_stages(cfg, &cache)?;
    finish(cache, cfg, Vec::new(), "world_manifest.json")?;
    Ok(shared)
}
