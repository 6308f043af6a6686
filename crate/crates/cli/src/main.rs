use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rmlab_core::evaluation::{
    aggregate_runs, calibration_report, overopt_stats, read_curve_csv, smoothed_gold_range,
    split_runs, CurveWriter,
};
use rmlab_core::harness::{
    emit_plots, load_world, parse_config, prepare_world, run_epoch_ablation_in,
    run_full_experiment_in, ExperimentConfig, DATASET_FILE, REFERENCE_FILE,
};
use rmlab_core::models::{load_model, save_model, ModelKind, PolicyModel, RewardModel};
use rmlab_core::policy_opt::{run_ppo, PpoEnv};
use rmlab_core::prefdata::load_dataset;
use rmlab_core::reward_training::{
    init_reward_model, train_reward_model, AggregationObjective, Method,
};
use rmlab_core::rng::derive_seed;
use rmlab_core::{Error, Result};

/// Reward over-optimization experiments: preference data, reward-model
/// ensembles, PPO against a proxy reward, and evaluation against a gold model.
#[derive(Parser, Debug)]
#[command(name = "rmlab", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML experiment config; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the run seed (or the seed list for experiment commands).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `experiment.output_dir`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Overrides `experiment.workers`.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the natural distribution, gold model, reference policy and labeled dataset.
    GenData(GenDataArgs),
    /// Train a proxy reward model on a dataset.
    TrainRm(TrainRmArgs),
    /// Run PPO against a trained reward model, streaming the curve to CSV.
    Ppo(PpoArgs),
    /// Over-optimization statistics and cross-seed aggregation for curve files.
    Eval(EvalArgs),
    /// Calibration table for a reward model on the validation split.
    Calib(CalibArgs),
    /// Every method × seed run of the comparison, with tables, plots and a manifest.
    RunExperiment,
    /// Full-ensemble runs for each reward-model epoch count in a grid.
    AblateEpochs(AblateArgs),
    /// Regenerate the aggregated table and SVG plots from a curve table.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    train_pairs: Option<usize>,
    #[arg(long)]
    validation_pairs: Option<usize>,
    #[arg(long)]
    noise_rate: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainRmArgs {
    #[arg(long, default_value = "multihead")]
    regime: Method,
    /// Number of heads or members; defaults to `experiment.k` (1 for single).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Defaults to `<out-dir>/world/dataset.jsonl`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Reference policy used to initialize the encoder; defaults to
    /// `<out-dir>/world/reference.json` when encoder init is enabled.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, default_value = "rm.json")]
    output: PathBuf,
    /// Per-epoch metrics table; defaults to the model path with `.csv`.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PpoArgs {
    #[arg(long)]
    reward_model: PathBuf,
    /// Defaults to the regime's natural objective (MIN for ensembles).
    #[arg(long)]
    objective: Option<AggregationObjective>,
    #[arg(long)]
    updates: Option<usize>,
    #[arg(long)]
    kl_coefficient: Option<f64>,
    #[arg(long, default_value = "curve.csv")]
    curve: PathBuf,
    #[arg(long)]
    policy_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Curve tables; a table holding several runs is split by method and seed.
    #[arg(required = true)]
    curves: Vec<PathBuf>,
    /// Write the cross-seed aggregated table here.
    #[arg(long)]
    aggregate: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CalibArgs {
    #[arg(long)]
    reward_model: PathBuf,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value = "min")]
    objective: AggregationObjective,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    /// Comma-separated epoch counts; defaults to `experiment.epoch_grid`.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// Defaults to `<out-dir>/curves.csv`.
    #[arg(long)]
    curves: Option<PathBuf>,
}

fn load_config(g: &Global) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => parse_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(d) = &g.out_dir {
        cfg.experiment.output_dir = d.clone();
    }
    if let Some(w) = g.workers {
        cfg.experiment.workers = w;
    }
    cfg.validate().map_err(|(key, msg)| Error::Config {
        key,
        line: None,
        msg,
    })?;
    Ok(cfg)
}

fn run_seed(g: &Global, cfg: &ExperimentConfig) -> u64 {
    g.seed.unwrap_or(cfg.experiment.seeds[0])
}

fn write_file(path: &Path, body: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, body)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let mut cfg = load_config(g)?;
    let out = cfg.experiment.output_dir.clone();
    match cli.command {
        Command::GenData(a) => {
            if let Some(s) = g.seed {
                cfg.world.seed = s;
            }
            if let Some(n) = a.train_pairs {
                cfg.data.train_pairs = n;
            }
            if let Some(n) = a.validation_pairs {
                cfg.data.validation_pairs = n;
            }
            if let Some(r) = a.noise_rate {
                cfg.data.noise_rate = r;
            }
            let shared = prepare_world(&cfg, &out)?;
            println!(
                "wrote {} ({} pairs, flipped fraction {:.4})",
                out.join(DATASET_FILE).display(),
                shared.dataset.pairs.len(),
                shared.dataset.flipped_fraction()
            );
        }
        Command::TrainRm(a) => {
            let seed = run_seed(g, &cfg);
            let ds = load_dataset(a.dataset.unwrap_or_else(|| out.join(DATASET_FILE)))?;
            let k = match a.regime {
                Method::Single => 1,
                _ => a.k.unwrap_or(cfg.experiment.k),
            };
            let reference: Option<PolicyModel> =
                match (a.reference, cfg.model.init_encoder_from_reference) {
                    (Some(p), _) => Some(load_model(&p, ModelKind::Policy)?),
                    (None, true) => Some(load_model(&out.join(REFERENCE_FILE), ModelKind::Policy)?),
                    (None, false) => None,
                };
            let mut rm_cfg = cfg.rm.train_config(
                a.epochs.unwrap_or(cfg.rm.epochs_for(a.regime)),
                derive_seed(seed, "rm-train", 0),
            );
            if let Some(lr) = a.lr {
                rm_cfg.learning_rate = lr;
            }
            let mut rm = init_reward_model(
                a.regime,
                k,
                cfg.proxy_dims(),
                reference.as_ref(),
                derive_seed(seed, "rm-init", 0),
            )?;
            let log = train_reward_model(&ds, &mut rm, &rm_cfg)?;
            save_model(&a.output, ModelKind::Reward, &rm)?;
            let metrics = a.metrics.unwrap_or_else(|| a.output.with_extension("csv"));
            write_file(&metrics, log.to_csv().as_bytes())?;
            print!("{}", log.to_csv());
        }
        Command::Ppo(a) => {
            let (world, gold, reference) = load_world(&out)?;
            let rm: RewardModel = load_model(&a.reward_model, ModelKind::Reward)?;
            let method = match &rm {
                RewardModel::MultiHead(m) if m.k() == 1 => Method::Single,
                RewardModel::MultiHead(_) => Method::Multihead,
                RewardModel::Ensemble(_) => Method::Ensemble,
            };
            let objective = a.objective.unwrap_or(method.default_objective());
            let mut ppo = cfg.ppo.clone();
            ppo.seed = run_seed(g, &cfg);
            if let Some(n) = a.updates {
                ppo.total_policy_updates = n;
            }
            if let Some(b) = a.kl_coefficient {
                ppo.kl_coefficient = b;
            }
            let env = PpoEnv {
                world: &world,
                reference: &reference,
                reward_model: &rm,
                objective,
                gold: &gold,
                method,
            };
            if let Some(dir) = a.curve.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            let mut writer = CurveWriter::new(fs::File::create(&a.curve)?);
            let run = run_ppo(&env, &reference, &ppo, |p| {
                eprintln!(
                    "step {:>5}  kl {:>8.4}  proxy {:>8.4}  gold {:>8.4}",
                    p.step, p.kl, p.proxy_reward, p.gold_reward
                );
                writer.write(p)
            })?;
            writer.into_inner()?;
            if let Some(p) = a.policy_out {
                save_model(&p, ModelKind::Policy, &run.policy)?;
            }
        }
        Command::Eval(a) => {
            let mut runs = Vec::new();
            for p in &a.curves {
                runs.extend(split_runs(&read_curve_csv(fs::File::open(p)?)?));
            }
            let mut stdout = std::io::stdout().lock();
            writeln!(
                stdout,
                "method,seed,peak_gold,peak_step,final_gold,decline,kl_at_peak,smoothed_gold_range"
            )?;
            for r in &runs {
                let s = overopt_stats(r)?;
                writeln!(
                    stdout,
                    "{},{},{},{},{},{},{},{}",
                    r[0].method,
                    r[0].seed,
                    s.peak_gold,
                    s.peak_step,
                    s.final_gold,
                    s.decline,
                    s.kl_at_peak,
                    smoothed_gold_range(r)
                )?;
            }
            if let Some(path) = a.aggregate {
                let body: String = aggregate_runs(&runs)?
                    .iter()
                    .enumerate()
                    .flat_map(|(i, c)| {
                        c.to_csv()
                            .lines()
                            .skip(usize::from(i > 0))
                            .map(|l| format!("{l}\n"))
                            .collect::<Vec<_>>()
                    })
                    .collect();
                write_file(&path, body.as_bytes())?;
            }
        }
        Command::Calib(a) => {
            let rm: RewardModel = load_model(&a.reward_model, ModelKind::Reward)?;
            let ds = load_dataset(a.dataset.unwrap_or_else(|| out.join(DATASET_FILE)))?;
            let report = calibration_report(
                &rm,
                a.objective,
                ds.validation_pairs(),
                a.bins.unwrap_or(cfg.experiment.calibration_bins),
            )?;
            match a.output {
                Some(p) => write_file(&p, report.to_table().as_bytes())?,
                None => print!("{}", report.to_table()),
            }
        }
        Command::RunExperiment => {
            if let Some(s) = g.seed {
                cfg.experiment.seeds = vec![s];
            }
            let m = run_full_experiment_in(&cfg, &out)?;
            print!("{}", fs::read_to_string(out.join("summary.csv"))?);
            eprintln!(
                "{} stages executed, {} cached; manifest at {}",
                m.executed_stages.len(),
                m.stages.len() - m.executed_stages.len(),
                out.join("manifest.json").display()
            );
        }
        Command::AblateEpochs(a) => {
            if let Some(s) = g.seed {
                cfg.experiment.seeds = vec![s];
            }
            let grid = a.grid.unwrap_or_else(|| cfg.experiment.epoch_grid.clone());
            run_epoch_ablation_in(&cfg, &grid, &out)?;
            print!(
                "{}",
                fs::read_to_string(out.join("epoch_ablation_summary.csv"))?
            );
        }
        Command::Plot(a) => {
            let path = a.curves.unwrap_or_else(|| out.join("curves.csv"));
            let runs = split_runs(&read_curve_csv(fs::File::open(&path)?)?);
            for (rel, body) in emit_plots(&aggregate_runs(&runs)?)? {
                write_file(&out.join(&rel), &body)?;
                println!("wrote {}", out.join(rel).display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let validation = e.is_validation()
                || matches!(&e, Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound);
            ExitCode::from(if validation { 1 } else { 2 })
        }
    }
}
