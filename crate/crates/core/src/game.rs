//! The cat-and-mouse loop: patch optimisation against a frozen detector,
//! hardening by adversarial training, and the final evaluation ledger.
//!
//! A run directory looks like
//!
//! ```text
//! config.txt            canonical config snapshot
//! state.json            config hash, completed orders, hardening pools
//! events.log            one line per step
//! order-0/model.cmld
//! order-n/train-i.cmpt  (+ .png viewing copies), val-j.cmpt, model.cmld
//! ledger.json, ledger.csv, heatmap.json
//! manifest.json
//! ```
//!
//! Every artifact is a pure function of the config, so a run stopped after
//! any order and resumed finishes byte-identical to an uninterrupted one.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use catmouse_tensor::{AdamW, AdamWConfig, Tape};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, save_config, GameConfig, PatchTrainConfig};
use crate::detector::{load_checkpoint, save_checkpoint, ArchSpec, DetectorModel};
use crate::error::{io_err, CoreError, Result};
use crate::eval::{build_heatmap, evaluate, ledger_csv, mean_std, HeatmapMatrix, LedgerRow, PatchSource};
use crate::manifest::write_manifest;
use crate::patch::{
    encode_patch, init_patch, load_patch, patch_loss, save_patch, save_patch_png, Patch, PatchMeta, PatchRole,
};
use crate::regime::Regime;
use crate::scene::{generate_dataset, Dataset, DatasetSpec, Family, Scene};
use crate::seed;
use crate::training::train_detector;

/// Worker pool sized by `CATMOUSE_THREADS` (default: all cores).
///
/// Results never depend on the thread count.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var("CATMOUSE_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| CoreError::Invalid(format!("CATMOUSE_THREADS must be a positive integer, got `{v}`")))?,
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CoreError::Invalid(format!("cannot start worker pool: {e}")))
}

/// The three dataset families of a run.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub detector_train: Dataset,
    pub patch_train: Dataset,
    pub eval: Dataset,
}

pub fn dataset_spec(config: &GameConfig, family: Family) -> DatasetSpec {
    let seed = seed::derive(config.seed, &["data", family.tag()], &[]);
    DatasetSpec::for_family_sized(family, config.data.image_size, seed)
}

pub fn datasets(config: &GameConfig) -> Result<Datasets> {
    let make = |family, n| generate_dataset(&dataset_spec(config, family), n);
    Ok(Datasets {
        detector_train: make(Family::DetectorTrain, config.data.detector_train)?,
        patch_train: make(Family::PatchTrain, config.data.patch_train)?,
        eval: make(Family::Eval, config.data.eval)?,
    })
}

pub fn eval_seed(config: &GameConfig) -> u64 {
    seed::derive(config.seed, &["eval"], &[])
}

pub fn model_seed(config: &GameConfig, order: usize) -> u64 {
    seed::derive(config.seed, &["model"], &[order as u64])
}

/// Seed of a patch from `(master, order, index, role)`: train and validation
/// patches share everything but this seed.
pub fn patch_seed(config: &GameConfig, order: usize, index: usize, role: PatchRole) -> u64 {
    seed::derive(config.seed, &["patch", role.tag()], &[order as u64, index as u64])
}

/// Standard (order-0) detector of a run.
pub fn train_base(config: &GameConfig, data: &Datasets) -> Result<DetectorModel> {
    let arch = ArchSpec::base(config.data.image_size);
    Ok(train_detector(arch, &data.detector_train, &[], 0.0, &config.detector, model_seed(config, 0))?.0)
}

/// Optimises one patch against a frozen model with AdamW on the pixels.
///
/// Returns the unclamped patch and the mean loss of every epoch. A
/// non-finite loss aborts with its epoch and batch.
pub fn optimize_patch(
    model: &DetectorModel,
    dataset: &Dataset,
    config: &PatchTrainConfig,
    meta: PatchMeta,
) -> Result<(Patch, Vec<f64>)> {
    if meta.order != model.order + 1 {
        return Err(CoreError::Invalid(format!(
            "an order-{} patch must be optimised against an order-{} model, got order {}",
            meta.order,
            meta.order - 1,
            model.order
        )));
    }
    if dataset.is_empty() {
        return Err(CoreError::Invalid("empty patch-train dataset".into()));
    }
    let protocol = config.protocol();
    protocol.validate()?;
    config.weights.validate()?;
    let mut patch = init_patch(config.size, meta.seed, meta)?;
    let mut rng = seed::derived_rng(meta.seed, &["patch-opt"], &[]);
    let mut opt = AdamW::<f32>::new(AdamWConfig {
        lr: config.lr,
        ..AdamWConfig::default()
    });
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        opt.set_lr(config.lr_at(epoch));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let scenes: Vec<&Scene> = chunk.iter().map(|&i| &dataset.scenes[i]).collect();
            let mut tape = Tape::<f32>::new();
            let frozen = model.bind(&mut tape, false);
            let p = tape.param(patch.pixels.clone());
            let terms = patch_loss(
                &mut tape,
                model,
                &frozen,
                &scenes,
                p,
                &config.weights,
                &protocol,
                &config.augment,
                &mut rng,
            )?;
            let loss = tape.value(terms.total).item();
            if !loss.is_finite() {
                return Err(CoreError::NonFiniteLoss { epoch, batch });
            }
            total += loss as f64 * chunk.len() as f64;
            tape.backward(terms.total)?;
            let grad = tape.grad(p).cloned().expect("patch is trainable");
            opt.step(&mut [&mut patch.pixels], &[&grad])?;
        }
        curve.push(total / dataset.len() as f64);
    }
    Ok((patch, curve))
}

/// Adversarially trains the order-`order` model from scratch with patches
/// from `pool` at per-box probability `config.pi`.
pub fn harden(config: &GameConfig, data: &Datasets, pool: &[Patch], order: usize) -> Result<DetectorModel> {
    if pool.is_empty() {
        return Err(CoreError::Invalid("hardening needs a non-empty patch pool".into()));
    }
    if pool.iter().any(|p| p.meta.role == PatchRole::Validation) {
        return Err(CoreError::Invalid("validation patches never enter a training pool".into()));
    }
    let clamped: Vec<Patch> = pool.iter().map(Patch::clamped).collect();
    let arch = ArchSpec::base(config.data.image_size);
    let (mut model, _) = train_detector(
        arch,
        &data.detector_train,
        &clamped,
        config.pi,
        &config.detector,
        model_seed(config, order),
    )?;
    model.order = order;
    model.regime = Some(config.regime);
    Ok(model)
}

/// Train patches that harden the order-`order` model.
pub fn pool_for(regime: Regime, train_patches: &[Vec<Patch>], order: usize) -> Vec<Patch> {
    let orders = if regime.successive { 1..=order } else { order..=order };
    orders.flat_map(|o| train_patches[o - 1].iter().cloned()).collect()
}

pub fn patch_hash(patch: &Patch) -> String {
    hex(&Sha256::digest(encode_patch(patch)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolRecord {
    /// Order of the model hardened with this pool.
    pub order: usize,
    /// `(patch order, index)` of every member.
    pub members: Vec<(usize, usize)>,
    pub hashes: Vec<String>,
}

/// Persisted progress of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub config_hash: String,
    /// Highest model order on disk.
    pub completed_order: usize,
    pub pools: Vec<PoolRecord>,
    pub validation_hashes: Vec<String>,
    pub ledger_complete: bool,
}

#[derive(Debug, Clone)]
pub struct GameState {
    pub models: Vec<DetectorModel>,
    /// `train_patches[n - 1]`: train patches of order `n`.
    pub train_patches: Vec<Vec<Patch>>,
    pub validation_patches: Vec<Vec<Patch>>,
    pub pools: Vec<PoolRecord>,
    pub ledger: Vec<LedgerRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GameResult {
    pub heatmap: HeatmapMatrix,
    /// Clean AP per model order.
    pub clean: Vec<f64>,
    /// Grayscale mean and std per model order.
    pub grayscale: Vec<(f64, f64)>,
}

#[derive(Debug)]
pub enum GameOutcome {
    Finished(Box<GameState>, GameResult),
    /// Stopped on request after persisting the model of this order.
    Stopped(usize),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Stop right after the model of this order is on disk.
    pub stop_after: Option<usize>,
}

pub fn run_id(config: &GameConfig) -> String {
    format!("run-{}", &config.hash()[..12])
}

fn order_dir(dir: &Path, order: usize) -> PathBuf {
    dir.join(format!("order-{order}"))
}

fn patch_path(dir: &Path, order: usize, role: PatchRole, index: usize) -> PathBuf {
    let stem = match role {
        PatchRole::Train => "train",
        PatchRole::Validation => "val",
    };
    order_dir(dir, order).join(format!("{stem}-{index}.cmpt"))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CoreError::Invalid(e.to_string()))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CoreError::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

struct EventLog(PathBuf);

impl EventLog {
    fn note(&self, line: &str) -> Result<()> {
        log::info!("{line}");
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.0)
            .map_err(io_err(&self.0))?;
        writeln!(f, "{line}").map_err(io_err(&self.0))
    }
}

/// Runs (or resumes) a full game in `dir`.
pub fn run_game(config: &GameConfig, dir: &Path, options: RunOptions) -> Result<GameOutcome> {
    config.validate()?;
    thread_pool()?.install(|| run_game_inner(config, dir, options))
}

fn run_game_inner(config: &GameConfig, dir: &Path, options: RunOptions) -> Result<GameOutcome> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let state_path = dir.join("state.json");
    let hash = config.hash();
    let events = EventLog(dir.join("events.log"));
    let mut state = if state_path.exists() {
        let s: RunState = read_json(&state_path)?;
        if s.config_hash != hash {
            return Err(CoreError::ResumeMismatch {
                dir: dir.to_path_buf(),
                found: s.config_hash,
                expected: hash,
            });
        }
        events.note(&format!("resume after order {}", s.completed_order))?;
        Some(s)
    } else {
        save_config(config, &dir.join("config.txt"))?;
        events.note(&format!("start {} ({})", run_id(config), config.regime))?;
        None
    };

    let data = datasets(config)?;
    let mut game = GameState {
        models: Vec::new(),
        train_patches: Vec::new(),
        validation_patches: Vec::new(),
        pools: Vec::new(),
        ledger: Vec::new(),
    };

    // reload what a previous invocation already finished
    if let Some(s) = &state {
        for n in 0..=s.completed_order {
            game.models.push(load_checkpoint(&order_dir(dir, n).join("model.cmld"))?);
            if n >= 1 {
                let load = |role, count| {
                    (0..count)
                        .map(|i| load_patch(&patch_path(dir, n, role, i)))
                        .collect::<Result<Vec<_>>>()
                };
                game.train_patches.push(load(PatchRole::Train, config.regime.k)?);
                game.validation_patches.push(load(PatchRole::Validation, config.validation)?);
            }
        }
        game.pools = s.pools.clone();
    } else {
        let base = train_base(config, &data)?;
        let d = order_dir(dir, 0);
        fs::create_dir_all(&d).map_err(io_err(&d))?;
        save_checkpoint(&base, &d.join("model.cmld"))?;
        game.models.push(base);
        let s = RunState {
            config_hash: hash.clone(),
            completed_order: 0,
            pools: Vec::new(),
            validation_hashes: Vec::new(),
            ledger_complete: false,
        };
        write_json(&s, &state_path)?;
        state = Some(s);
        events.note("order 0 model trained")?;
        if options.stop_after == Some(0) {
            return Ok(GameOutcome::Stopped(0));
        }
    }
    let mut state = state.expect("state initialised above");

    for n in state.completed_order..config.max_order {
        let order = n + 1;
        let model = &game.models[n];
        let jobs: Vec<(PatchRole, usize)> = (0..config.regime.k)
            .map(|i| (PatchRole::Train, i))
            .chain((0..config.validation).map(|v| (PatchRole::Validation, v)))
            .collect();
        let patches = jobs
            .par_iter()
            .map(|&(role, index)| {
                let meta = PatchMeta {
                    order,
                    index,
                    role,
                    regime: Some(config.regime),
                    seed: patch_seed(config, order, index, role),
                };
                optimize_patch(model, &data.patch_train, &config.patch, meta).map(|r| r.0)
            })
            .collect::<Result<Vec<_>>>()?;
        let d = order_dir(dir, order);
        fs::create_dir_all(&d).map_err(io_err(&d))?;
        for p in &patches {
            let path = patch_path(dir, order, p.meta.role, p.meta.index);
            save_patch(p, &path)?;
            save_patch_png(p, &path.with_extension("png"))?;
        }
        let (train, val): (Vec<Patch>, Vec<Patch>) = patches.into_iter().partition(|p| p.meta.role == PatchRole::Train);
        events.note(&format!("order {order}: {} train and {} validation patches", train.len(), val.len()))?;
        state.validation_hashes.extend(val.iter().map(patch_hash));
        game.train_patches.push(train);
        game.validation_patches.push(val);

        let pool = pool_for(config.regime, &game.train_patches, order);
        let record = PoolRecord {
            order,
            members: pool.iter().map(|p| (p.meta.order, p.meta.index)).collect(),
            hashes: pool.iter().map(patch_hash).collect(),
        };
        let hardened = harden(config, &data, &pool, order)?;
        save_checkpoint(&hardened, &d.join("model.cmld"))?;
        events.note(&format!("order {order}: model hardened with a pool of {}", pool.len()))?;
        game.models.push(hardened);
        game.pools.push(record.clone());
        state.pools.push(record);
        state.completed_order = order;
        write_json(&state, &state_path)?;
        if options.stop_after == Some(order) {
            return Ok(GameOutcome::Stopped(order));
        }
    }

    let (ledger, result) = evaluate_game(config, &data.eval, &game.models, &game.validation_patches)?;
    write_json(&ledger, &dir.join("ledger.json"))?;
    fs::write(dir.join("ledger.csv"), ledger_csv(&ledger)).map_err(io_err(dir.join("ledger.csv")))?;
    write_json(&result, &dir.join("heatmap.json"))?;
    state.ledger_complete = true;
    write_json(&state, &state_path)?;
    events.note(&format!("ledger complete: {} rows, mean dAP {:.4}", ledger.len(), result.heatmap.mu))?;
    write_manifest(dir, &run_id(config), &hash)?;
    game.ledger = ledger;
    Ok(GameOutcome::Finished(Box::new(game), result))
}

/// Evaluates every model order against clean scenes, the 11 grey levels
/// and every validation patch.
pub fn evaluate_game(
    config: &GameConfig,
    eval: &Dataset,
    models: &[DetectorModel],
    validation: &[Vec<Patch>],
) -> Result<(Vec<LedgerRow>, GameResult)> {
    let protocol = config.eval.protocol();
    let eval_seed = eval_seed(config);
    let run = run_id(config);
    #[derive(Clone, Copy)]
    enum Job {
        Clean,
        Gray(usize),
        Patch(usize, usize),
    }
    let mut jobs = Vec::new();
    for m in 0..models.len() {
        jobs.push((m, Job::Clean));
        jobs.extend((0..=10).map(|l| (m, Job::Gray(l))));
        for (p, patches) in validation.iter().enumerate() {
            jobs.extend((0..patches.len()).map(|v| (m, Job::Patch(p + 1, v))));
        }
    }
    let rows = jobs
        .par_iter()
        .map(|&(m, job)| {
            let (source, patch_order, patch_index, tag) = match job {
                Job::Clean => (PatchSource::Clean, 0, 0, "clean"),
                Job::Gray(l) => (PatchSource::Grayscale(l), 0, l, "grayscale"),
                Job::Patch(p, v) => (PatchSource::Patch(&validation[p - 1][v].pixels), p, v, "patch"),
            };
            let r = evaluate(&models[m], eval, source, &protocol, eval_seed, &config.eval.settings)?;
            Ok(LedgerRow {
                run_id: run.clone(),
                model_order: m,
                patch_order,
                patch_index,
                source: tag.into(),
                resize_factor: if matches!(job, Job::Clean) { 0.0 } else { config.eval.resize },
                ap: r.ap,
                per_threshold: r.per_threshold,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let heatmap = build_heatmap(&rows, models.len() - 1, validation.first().map_or(0, Vec::len))?;
    let aps = |m: usize, src: &str| -> Vec<f64> {
        rows.iter()
            .filter(|r| r.model_order == m && r.source == src)
            .map(|r| r.ap)
            .collect()
    };
    let clean = (0..models.len()).map(|m| aps(m, "clean").iter().sum()).collect();
    let grayscale = (0..models.len()).map(|m| mean_std(&aps(m, "grayscale"))).collect();
    Ok((
        rows,
        GameResult {
            heatmap,
            clean,
            grayscale,
        },
    ))
}

/// Loads the validation patches of a finished run, grouped by order.
pub fn load_validation_patches(dir: &Path, config: &GameConfig) -> Result<Vec<Vec<Patch>>> {
    (1..=config.max_order)
        .map(|n| {
            (0..config.validation)
                .map(|v| load_patch(&patch_path(dir, n, PatchRole::Validation, v)))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZooMember {
    pub name: String,
    pub clean_ap: f64,
    pub gray_mean: f64,
    pub gray_std: f64,
    /// Mean AP over the validation patches of each order.
    pub order_ap: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferBar {
    pub order: usize,
    pub mean_ap: f64,
    pub std_ap: f64,
    /// Mean over members of `gray_mean − order_ap`.
    pub mean_delta: f64,
    pub std_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferResult {
    pub members: Vec<ZooMember>,
    pub bars: Vec<TransferBar>,
    pub clean_mean: f64,
    pub clean_std: f64,
    pub gray_mean: f64,
    pub gray_std: f64,
}

/// Standard-trained architecture variants, none of which any game patch
/// was optimised against.
pub fn train_zoo(config: &GameConfig, data: &Datasets, size: usize) -> Result<Vec<DetectorModel>> {
    (1..=size).into_par_iter().map(|i| zoo_member(config, data, i)).collect()
}

/// Zoo model `index` (1-based), standard-trained from its own seed.
pub fn zoo_member(config: &GameConfig, data: &Datasets, index: usize) -> Result<DetectorModel> {
    let arch = ArchSpec::zoo_variant(config.data.image_size, index);
    let seed = seed::derive(config.seed, &["zoo"], &[index as u64]);
    Ok(train_detector(arch, &data.detector_train, &[], 0.0, &config.detector, seed)?.0)
}

/// Mean ± std of AP over the zoo for the validation patches of each order,
/// next to the zoo's clean and grayscale references.
pub fn run_transfer(
    config: &GameConfig,
    validation: &[Vec<Patch>],
    zoo: &[DetectorModel],
    eval: &Dataset,
) -> Result<TransferResult> {
    if zoo.is_empty() {
        return Err(CoreError::Invalid("transfer needs at least one zoo model".into()));
    }
    let protocol = config.eval.protocol();
    let seed = eval_seed(config);
    let settings = &config.eval.settings;
    let members = zoo
        .par_iter()
        .map(|model| {
            let clean = evaluate(model, eval, PatchSource::Clean, &protocol, seed, settings)?.ap;
            let gray = (0..=10)
                .map(|l| Ok(evaluate(model, eval, PatchSource::Grayscale(l), &protocol, seed, settings)?.ap))
                .collect::<Result<Vec<_>>>()?;
            let (gray_mean, gray_std) = mean_std(&gray);
            let order_ap = validation
                .iter()
                .map(|patches| {
                    let aps = patches
                        .iter()
                        .map(|p| Ok(evaluate(model, eval, PatchSource::Patch(&p.pixels), &protocol, seed, settings)?.ap))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(mean_std(&aps).0)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ZooMember {
                name: model.arch.name.clone(),
                clean_ap: clean,
                gray_mean,
                gray_std,
                order_ap,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let bars = (0..validation.len())
        .map(|o| {
            let aps: Vec<f64> = members.iter().map(|m| m.order_ap[o]).collect();
            let deltas: Vec<f64> = members.iter().map(|m| m.gray_mean - m.order_ap[o]).collect();
            let (mean_ap, std_ap) = mean_std(&aps);
            let (mean_delta, std_delta) = mean_std(&deltas);
            TransferBar {
                order: o + 1,
                mean_ap,
                std_ap,
                mean_delta,
                std_delta,
            }
        })
        .collect();
    let (clean_mean, clean_std) = mean_std(&members.iter().map(|m| m.clean_ap).collect::<Vec<_>>());
    let (gray_mean, gray_std) = mean_std(&members.iter().map(|m| m.gray_mean).collect::<Vec<_>>());
    Ok(TransferResult {
        members,
        bars,
        clean_mean,
        clean_std,
        gray_mean,
        gray_std,
    })
}

/// Trains (or reloads) the zoo of a finished run, writes `transfer.json`
/// and refreshes the manifest.
pub fn transfer_for_run(dir: &Path, config: &GameConfig) -> Result<TransferResult> {
    config.validate()?;
    thread_pool()?.install(|| {
        let state: RunState = read_json(&dir.join("state.json"))?;
        if state.config_hash != config.hash() {
            return Err(CoreError::ResumeMismatch {
                dir: dir.to_path_buf(),
                found: state.config_hash,
                expected: config.hash(),
            });
        }
        let validation = load_validation_patches(dir, config)?;
        let data = datasets(config)?;
        let zoo_dir = dir.join("zoo");
        fs::create_dir_all(&zoo_dir).map_err(io_err(&zoo_dir))?;
        let paths: Vec<PathBuf> = (1..=config.zoo_size)
            .map(|i| zoo_dir.join(format!("{}.cmld", ArchSpec::zoo_variant(config.data.image_size, i).name)))
            .collect();
        let zoo = if paths.iter().all(|p| p.exists()) {
            paths.iter().map(|p| load_checkpoint(p)).collect::<Result<Vec<_>>>()?
        } else {
            let zoo = train_zoo(config, &data, config.zoo_size)?;
            for (m, p) in zoo.iter().zip(&paths) {
                save_checkpoint(m, p)?;
            }
            zoo
        };
        let result = run_transfer(config, &validation, &zoo, &data.eval)?;
        write_json(&result, &dir.join("transfer.json"))?;
        EventLog(dir.join("events.log")).note(&format!("transfer over a zoo of {}", zoo.len()))?;
        write_manifest(dir, &run_id(config), &config.hash())?;
        Ok(result)
    })
}
