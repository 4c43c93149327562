//! `evrec` — reproducible runs of the charging-recommendation stack:
//! scenario generation, policy training, held-out evaluation and report
//! comparison. Exit codes: 0 ok, 1 usage, 2 configuration, 3 runtime.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use evrec_core::baselines::{baseline_by_name, iddpg_train, BASELINE_NAMES};
use evrec_core::domain::TrainConfig;
use evrec_core::eval::{compare, compute_metrics, emit, EmitFormat, MetricsReport};
use evrec_core::master::{
    config_hash, feature_norm, history_to_csv, train, Checkpoint, CheckpointManifest,
    FrozenOptima, MasterModel, MasterPolicy, Objective, TrainMode,
};
use evrec_core::nn::{mlp_from_params, Activation};
use evrec_core::scenario::{generate, load, save, Scenario};
use evrec_core::simulator::{rollout, Policy};

use config::RunConfig;

#[derive(Parser)]
#[command(name = "evrec", version, about = "EV charging recommendation workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (auto-generated and recorded when omitted).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario directory.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Number of charging stations.
        #[arg(long)]
        stations: Option<usize>,
        /// Number of days.
        #[arg(long)]
        days: Option<usize>,
        /// Expected requests per day.
        #[arg(long)]
        requests_per_day: Option<f64>,
    },
    /// Train a policy on a scenario's training days.
    Train {
        #[command(flatten)]
        common: Common,
        /// Scenario directory produced by `gen`.
        #[arg(long)]
        scenario: PathBuf,
        /// Objective: cwt-only, cp-only or multi.
        #[arg(long, default_value = "multi")]
        mode: String,
        /// Learner: master or iddpg.
        #[arg(long, default_value = "master")]
        algo: String,
        /// Training iterations (overrides the config).
        #[arg(long)]
        iterations: Option<usize>,
        /// cwt-only checkpoint required by multi mode.
        #[arg(long)]
        pretrained_cwt: Option<PathBuf>,
        /// cp-only checkpoint required by multi mode.
        #[arg(long)]
        pretrained_cp: Option<PathBuf>,
    },
    /// Evaluate a policy on a scenario's held-out test days.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scenario: PathBuf,
        /// Policy name: a baseline, or master/iddpg with --checkpoint.
        #[arg(long)]
        policy: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also write one events_day_<d>.jsonl per test day.
        #[arg(long)]
        dump_events: bool,
    },
    /// Compare metric reports produced by `eval`.
    Compare {
        /// Two or more report.json paths.
        reports: Vec<PathBuf>,
        /// Name (file stem) of the reference report; defaults to the first.
        #[arg(long)]
        reference: Option<String>,
        /// Optional CSV output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum CliError {
    Usage(String),
    Config(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful exits, everything else is usage.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn load_run_config(common: &Common) -> Result<RunConfig, CliError> {
    match &common.config {
        Some(path) => RunConfig::load(path).map_err(|e| CliError::Config(format!("{e:#}"))),
        None => Ok(RunConfig::default()),
    }
}

fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    load(path).map_err(|e| CliError::Config(format!("scenario {}: {e}", path.display())))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen { common, stations, days, requests_per_day } => {
            let mut run = load_run_config(&common)?;
            run.resolve_seed(common.seed);
            if let Some(n) = stations {
                run.generator.n_stations = n;
            }
            if let Some(n) = days {
                run.generator.n_days = n;
            }
            if let Some(r) = requests_per_day {
                run.generator.requests_per_day = r;
            }
            let scenario = generate(&run.generator).map_err(CliError::Config)?;
            save(&scenario, &common.out).context("write scenario")?;
            run.write_resolved(&common.out)?;
            println!(
                "wrote scenario to {}: {} stations, {} days, {} requests",
                common.out.display(),
                scenario.stations.len(),
                scenario.n_days(),
                scenario.total_requests()
            );
            Ok(())
        }
        Command::Train { common, scenario, mode, algo, iterations, pretrained_cwt, pretrained_cp } => {
            let mut run = load_run_config(&common)?;
            run.resolve_seed(common.seed);
            if let Some(n) = iterations {
                run.train.iterations = n;
            }
            run.train.validate().map_err(CliError::Config)?;
            let scenario = load_scenario(&scenario)?;
            let split = run.split.resolve(scenario.n_days()).map_err(CliError::Config)?;
            run.write_resolved(&common.out)?;
            cmd_train(&common.out, &scenario, &run.train, &split, &mode, &algo, pretrained_cwt, pretrained_cp)
        }
        Command::Eval { common, scenario, policy, checkpoint, dump_events } => {
            let mut run = load_run_config(&common)?;
            let seed = run.resolve_seed(common.seed);
            let scenario = load_scenario(&scenario)?;
            let split = run.split.resolve(scenario.n_days()).map_err(CliError::Config)?;
            run.write_resolved(&common.out)?;
            cmd_eval(
                &common.out,
                &scenario,
                &run.train,
                &split.test,
                &policy,
                checkpoint.as_deref(),
                seed,
                dump_events,
            )
        }
        Command::Compare { reports, reference, out } => cmd_compare(&reports, reference.as_deref(), out.as_deref()),
    }
}

fn load_frozen(
    base: &MasterModel,
    cwt_path: Option<&Path>,
    cp_path: Option<&Path>,
) -> Result<FrozenOptima, CliError> {
    let missing = || {
        CliError::Config(
            "multi mode requires --pretrained-cwt and --pretrained-cp checkpoints: the \
             objective-specific optimal networks must be initialized with well-trained weights"
                .into(),
        )
    };
    let cwt_path = cwt_path.ok_or_else(missing)?;
    let cp_path = cp_path.ok_or_else(missing)?;
    let load_pair = |path: &Path, objective: Objective, want_mode: &str| -> Result<_, CliError> {
        let ckpt = Checkpoint::load(path)
            .map_err(|e| CliError::Config(format!("checkpoint {}: {e}", path.display())))?;
        if ckpt.manifest.mode != want_mode {
            return Err(CliError::Config(format!(
                "checkpoint {} was trained in mode {:?}, expected {want_mode:?}",
                path.display(),
                ckpt.manifest.mode
            )));
        }
        base.frozen_pair(&ckpt.params, objective).map_err(CliError::Config)
    };
    Ok(FrozenOptima {
        cwt: load_pair(cwt_path, Objective::Cwt, "cwt-only")?,
        cp: load_pair(cp_path, Objective::Cp, "cp-only")?,
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    out: &Path,
    scenario: &Scenario,
    cfg: &TrainConfig,
    split: &evrec_core::master::DaySplit,
    mode: &str,
    algo: &str,
    pretrained_cwt: Option<PathBuf>,
    pretrained_cp: Option<PathBuf>,
) -> Result<(), CliError> {
    let norm = feature_norm(scenario, cfg);
    println!(
        "training {algo} ({mode}) on {} days, validating on {}, seed {}",
        split.train.len(),
        split.valid.len(),
        cfg.seed
    );
    let (params, manifest, history) = match algo {
        "master" => {
            let mode = match mode {
                "multi" => {
                    use rand::SeedableRng;
                    // Shape donor for the frozen pairs; its random values are
                    // fully overwritten by the checkpoints.
                    let mut shape_rng = rand::rngs::StdRng::seed_from_u64(0);
                    let base = MasterModel::new(norm.clone(), cfg, &mut shape_rng);
                    TrainMode::Multi(Box::new(load_frozen(
                        &base,
                        pretrained_cwt.as_deref(),
                        pretrained_cp.as_deref(),
                    )?))
                }
                other => TrainMode::from_name(other, None)
                    .map_err(|e| CliError::Config(format!("{e}")))?,
            };
            let mode_name = mode.name();
            let result = train(scenario, split, cfg, mode)
                .map_err(|e| CliError::Runtime(anyhow::anyhow!("{e}")))?;
            let val = result.best_val.clone().unwrap_or_else(|| compute_metrics(&[], 1));
            let manifest = CheckpointManifest {
                algo: "master".into(),
                mode: mode_name.into(),
                cfg_hash: config_hash(cfg),
                iteration: result.best_iteration,
                val_mcwt: val.mcwt,
                val_mcp: val.mcp,
                val_tsf: val.tsf,
                val_cfr: val.cfr,
                norm: norm.clone(),
            };
            (result.best_params, manifest, result.history)
        }
        "iddpg" => {
            let result = iddpg_train(scenario, split, cfg)
                .map_err(|e| CliError::Runtime(anyhow::anyhow!("{e}")))?;
            let val = result.best_val.clone().unwrap_or_else(|| compute_metrics(&[], 1));
            let manifest = CheckpointManifest {
                algo: "iddpg".into(),
                mode: "avg".into(),
                cfg_hash: config_hash(cfg),
                iteration: result.best_iteration,
                val_mcwt: val.mcwt,
                val_mcp: val.mcp,
                val_tsf: val.tsf,
                val_cfr: val.cfr,
                norm: norm.clone(),
            };
            (result.best_params, manifest, result.history)
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown algo {other:?}; expected master or iddpg"
            )))
        }
    };
    std::fs::create_dir_all(out).context("create output dir")?;
    let ckpt = Checkpoint { manifest, params };
    ckpt.save(&out.join("checkpoint.json")).context("write checkpoint")?;
    std::fs::write(out.join("history.csv"), history_to_csv(&history)).context("write history")?;
    println!(
        "wrote {} and history.csv (best iteration {}, val MCWT {:.2})",
        out.join("checkpoint.json").display(),
        ckpt.manifest.iteration,
        ckpt.manifest.val_mcwt
    );
    Ok(())
}

fn policy_from_checkpoint(path: &Path, algo: &str) -> Result<MasterPolicy, CliError> {
    let ckpt = Checkpoint::load(path)
        .map_err(|e| CliError::Config(format!("checkpoint {}: {e}", path.display())))?;
    if ckpt.manifest.algo != algo {
        return Err(CliError::Config(format!(
            "checkpoint {} holds algo {:?}, expected {algo:?}",
            path.display(),
            ckpt.manifest.algo
        )));
    }
    let actor = mlp_from_params(&ckpt.params, "actor", Activation::Relu, Activation::Tanh)
        .map_err(CliError::Config)?;
    Ok(MasterPolicy::greedy(actor, ckpt.manifest.norm))
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    out: &Path,
    scenario: &Scenario,
    cfg: &TrainConfig,
    test_days: &[usize],
    policy_name: &str,
    checkpoint: Option<&Path>,
    seed: u64,
    dump_events: bool,
) -> Result<(), CliError> {
    if test_days.is_empty() {
        return Err(CliError::Config("the split leaves no test days".into()));
    }
    let mut policy: Box<dyn Policy> = match policy_name {
        "master" | "iddpg" => {
            let path = checkpoint.ok_or_else(|| {
                CliError::Config(format!("policy {policy_name:?} needs --checkpoint"))
            })?;
            Box::new(policy_from_checkpoint(path, policy_name)?)
        }
        name => baseline_by_name(name, evrec_core::domain::mix_seed(seed, "baseline", 0))
            .ok_or_else(|| {
                CliError::Config(format!(
                    "unknown policy {name:?}; expected one of {:?}, master or iddpg",
                    BASELINE_NAMES
                ))
            })?,
    };
    std::fs::create_dir_all(out).context("create output dir")?;
    let outcomes = if dump_events {
        // Per-day episodes with the same derived seeds as `rollout`, keeping
        // the listed logs alongside the metrics.
        let mut all = Vec::new();
        for &day in test_days {
            let episode = evrec_core::simulator::run_episode(
                scenario,
                day,
                policy.as_mut(),
                cfg,
                evrec_core::domain::mix_seed(seed, "episode", day as u64),
            )
            .map_err(|e| CliError::Runtime(anyhow::anyhow!("{e}")))?;
            let mut file = std::fs::File::create(out.join(format!("events_day_{day}.jsonl")))
                .context("create events file")?;
            episode.log.dump_jsonl(&mut file).context("write events")?;
            all.extend(episode.outcomes);
        }
        all
    } else {
        rollout(scenario, test_days, policy.as_mut(), cfg, seed)
            .map_err(|e| CliError::Runtime(anyhow::anyhow!("{e}")))?
    };
    let report = compute_metrics(&outcomes, test_days.len());
    emit(&report, &out.join("report.json"), EmitFormat::Json).context("write report.json")?;
    emit(&report, &out.join("report.csv"), EmitFormat::Csv).context("write report.csv")?;
    println!(
        "{policy_name}: MCWT {:.2}  MCP {:.3}  TSF {:.1}  CFR {:.4}  ({} accepted over {} days)",
        report.mcwt,
        report.mcp,
        report.tsf,
        report.cfr,
        report.n_accepted,
        test_days.len()
    );
    Ok(())
}

fn cmd_compare(paths: &[PathBuf], reference: Option<&str>, out: Option<&Path>) -> Result<(), CliError> {
    if paths.len() < 2 {
        return Err(CliError::Usage(format!(
            "compare needs at least two reports, got {}",
            paths.len()
        )));
    }
    let mut named = Vec::with_capacity(paths.len());
    for path in paths {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read report {}", path.display()))?;
        let report: MetricsReport = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("report {}: {e}", path.display())))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        named.push((name, report));
    }
    let reference_idx = match reference {
        Some(name) => named
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| CliError::Config(format!("no report named {name:?} among the inputs")))?,
        None => 0,
    };
    let table = compare(&named, reference_idx);
    print!("{}", table.render_text());
    if let Some(path) = out {
        std::fs::write(path, table.to_csv()).context("write comparison csv")?;
    }
    Ok(())
}
