//! `catmouse`: command-line front end for the patch-vs-detector game.
//!
//! Exit status is 0 on success, 1 on a usage error (usage text goes to
//! stderr) and 2 when a command fails at run time. Progress is logged to
//! stderr; set `RUST_LOG=warn` to silence it.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use catmouse_core::config::{load_config, GameConfig, Preset};
use catmouse_core::detector::{load_checkpoint, save_checkpoint, ArchSpec};
use catmouse_core::eval::{evaluate, PatchSource};
use catmouse_core::game::{
    dataset_spec, datasets, eval_seed, harden, model_seed, optimize_patch, patch_seed, run_game, run_id, thread_pool,
    transfer_for_run, zoo_member, GameOutcome, RunOptions,
};
use catmouse_core::manifest::write_manifest;
use catmouse_core::patch::{load_patch, save_patch, save_patch_png, PatchMeta, PatchRole};
use catmouse_core::report::report_run;
use catmouse_core::scene::{export_dataset, generate_dataset, Family};
use catmouse_core::training::train_detector;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "catmouse", version, about = "Adversarial patches against an adversarially trained toy detector")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Config file (`key = value` lines in sections) applied over the preset.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Base preset: desk or full.
    #[arg(long, global = true, value_name = "PRESET")]
    preset: Option<Preset>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render synthetic datasets as PNG files plus annotations.json.
    GenData {
        /// detector-train, patch-train or eval; repeatable (default: all).
        #[arg(long, value_parser = parse_family)]
        family: Vec<Family>,
        /// Images per family (default: the configured size).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train a standard detector (the order-0 model or a zoo variant).
    TrainDetector {
        /// Train zoo variant `i` (1-based) instead of the base architecture.
        #[arg(long, value_name = "I")]
        zoo_variant: Option<usize>,
    },
    /// Optimise one patch against a frozen detector checkpoint.
    OptimizePatch {
        #[arg(long, value_name = "CMLD")]
        model: PathBuf,
        /// train or validation.
        #[arg(long, default_value = "train", value_parser = parse_role)]
        role: PatchRole,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Adversarially train a detector from scratch against a patch pool.
    Harden {
        #[arg(long, value_name = "CMPT", required = true, num_args = 1..)]
        pool: Vec<PathBuf>,
        /// Order of the new model (default: highest patch order in the pool).
        #[arg(long)]
        order: Option<usize>,
    },
    /// Run (or resume) the full game into the output directory.
    Game {
        /// Stop once the model of this order is saved; rerun to resume.
        #[arg(long, value_name = "N")]
        stop_after: Option<usize>,
    },
    /// Evaluate a finished run's validation patches on the model zoo.
    Transfer {
        /// Run directory (default: --out).
        run: Option<PathBuf>,
    },
    /// AP@[.5:.95] of one checkpoint on the eval family.
    Evaluate {
        #[arg(long, value_name = "CMLD")]
        model: PathBuf,
        /// Paste this patch (default: clean scenes).
        #[arg(long, value_name = "CMPT", conflicts_with = "grayscale")]
        patch: Option<PathBuf>,
        /// Paste a constant grey patch at level / 10.
        #[arg(long, value_name = "LEVEL")]
        grayscale: Option<usize>,
    },
    /// Write ledger.csv, heatmap.svg and transfer.svg for a run.
    Report {
        /// Run directory (default: --out).
        run: Option<PathBuf>,
    },
}

fn parse_family(s: &str) -> std::result::Result<Family, String> {
    Family::parse(s).ok_or_else(|| format!("unknown family `{s}`, expected detector-train, patch-train or eval"))
}

fn parse_role(s: &str) -> std::result::Result<PatchRole, String> {
    match s {
        "train" => Ok(PatchRole::Train),
        "validation" | "val" => Ok(PatchRole::Validation),
        _ => Err(format!("unknown role `{s}`, expected train or validation")),
    }
}

impl Global {
    /// Preset, then `--config` (or `fallback` when it exists), then `--seed`.
    fn config(&self, fallback: Option<&Path>) -> Result<GameConfig> {
        let base = self.preset.unwrap_or(Preset::Desk);
        let file = self.config.as_deref().or(fallback.filter(|p| p.exists()));
        let mut config = match file {
            Some(path) => load_config(path, base).with_context(|| format!("loading config {}", path.display()))?,
            None => GameConfig::preset(base),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        config.validate()?;
        Ok(config)
    }

    fn out_or(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(value: &impl serde::Serialize, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn finish(dir: &Path, config: &GameConfig) -> Result<()> {
    write_manifest(dir, &run_id(config), &config.hash())?;
    log::info!("wrote {}", dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::GenData { family, count } => {
            let config = g.config(None)?;
            let out = g.out_or("data");
            let families = if family.is_empty() {
                vec![Family::DetectorTrain, Family::PatchTrain, Family::Eval]
            } else {
                family.clone()
            };
            for f in families {
                let n = count.unwrap_or(match f {
                    Family::DetectorTrain => config.data.detector_train,
                    Family::PatchTrain => config.data.patch_train,
                    Family::Eval => config.data.eval,
                });
                let data = generate_dataset(&dataset_spec(&config, f), n)?;
                export_dataset(&data, &out.join(f.tag()))?;
                log::info!("{}: {n} images", f.tag());
            }
            finish(&out, &config)
        }
        Command::TrainDetector { zoo_variant } => {
            let config = g.config(None)?;
            let out = g.out_or("run");
            create_dir(&out)?;
            let data = datasets(&config)?;
            let (model, name) = match zoo_variant {
                Some(0) => bail!("zoo variants are numbered from 1"),
                Some(i) => {
                    let m = zoo_member(&config, &data, *i)?;
                    let name = format!("{}.cmld", m.arch.name);
                    (m, name)
                }
                None => {
                    let arch = ArchSpec::base(config.data.image_size);
                    let (m, curve) = train_detector(arch, &data.detector_train, &[], 0.0, &config.detector, model_seed(&config, 0))?;
                    write_json(&curve, &out.join("model-loss.json"))?;
                    (m, "model.cmld".to_string())
                }
            };
            save_checkpoint(&model, &out.join(name))?;
            finish(&out, &config)
        }
        Command::OptimizePatch { model, role, index } => {
            let config = g.config(None)?;
            let out = g.out_or("run");
            create_dir(&out)?;
            let model = load_checkpoint(model)?;
            let order = model.order + 1;
            let meta = PatchMeta {
                order,
                index: *index,
                role: *role,
                regime: Some(config.regime),
                seed: patch_seed(&config, order, *index, *role),
            };
            let data = generate_dataset(&dataset_spec(&config, Family::PatchTrain), config.data.patch_train)?;
            let (patch, curve) = optimize_patch(&model, &data, &config.patch, meta)?;
            let stem = match role {
                PatchRole::Train => "train",
                PatchRole::Validation => "val",
            };
            let path = out.join(format!("{stem}-{index}.cmpt"));
            save_patch(&patch, &path)?;
            save_patch_png(&patch, &path.with_extension("png"))?;
            write_json(&curve, &out.join(format!("{stem}-{index}-loss.json")))?;
            log::info!("final patch loss {:.4}", curve.last().copied().unwrap_or(f64::NAN));
            finish(&out, &config)
        }
        Command::Harden { pool, order } => {
            let config = g.config(None)?;
            let out = g.out_or("run");
            create_dir(&out)?;
            let pool = pool.iter().map(|p| load_patch(p)).collect::<catmouse_core::Result<Vec<_>>>()?;
            let order = order.unwrap_or_else(|| pool.iter().map(|p| p.meta.order).max().unwrap_or(1));
            if order == 0 {
                bail!("a hardened model has order at least 1");
            }
            let model = harden(&config, &datasets(&config)?, &pool, order)?;
            save_checkpoint(&model, &out.join("model.cmld"))?;
            finish(&out, &config)
        }
        Command::Game { stop_after } => {
            let config = g.config(None)?;
            let out = g.out_or("run");
            match run_game(&config, &out, RunOptions { stop_after: *stop_after })? {
                GameOutcome::Stopped(n) => log::info!("stopped after order {n}; rerun to resume"),
                GameOutcome::Finished(_, result) => {
                    log::info!("finished {}: mean dAP {:.4}", out.display(), result.heatmap.mu);
                }
            }
            Ok(())
        }
        Command::Transfer { run } => {
            let dir = run.clone().unwrap_or_else(|| g.out_or("run"));
            let config = g.config(Some(&dir.join("config.txt")))?;
            let t = transfer_for_run(&dir, &config)?;
            for bar in &t.bars {
                log::info!("order {}: zoo AP {:.4} ± {:.4}", bar.order, bar.mean_ap, bar.std_ap);
            }
            Ok(())
        }
        Command::Evaluate { model, patch, grayscale } => {
            let config = g.config(None)?;
            let model = load_checkpoint(model)?;
            let patch = patch.as_deref().map(load_patch).transpose()?;
            let source = match (&patch, grayscale) {
                (Some(p), _) => PatchSource::Patch(&p.pixels),
                (None, Some(level)) => PatchSource::Grayscale(*level),
                (None, None) => PatchSource::Clean,
            };
            let data = generate_dataset(&dataset_spec(&config, Family::Eval), config.data.eval)?;
            let result = evaluate(&model, &data, source, &config.eval.protocol(), eval_seed(&config), &config.eval.settings)?;
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{}", serde_json::to_string_pretty(&result)?) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
                _ => {}
            }
            if let Some(out) = &g.out {
                create_dir(out)?;
                write_json(&result, &out.join("evaluation.json"))?;
                finish(out, &config)?;
            }
            Ok(())
        }
        Command::Report { run } => {
            let dir = run.clone().unwrap_or_else(|| g.out_or("run"));
            let report = report_run(&dir)?;
            for w in &report.warnings {
                log::warn!("{w}");
            }
            for p in &report.written {
                log::info!("wrote {}", p.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    let result = thread_pool()
        .map_err(anyhow::Error::from)
        .and_then(|pool| pool.install(|| run(cli)));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
