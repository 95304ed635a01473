//! Single-class COCO-style AP@[.5:.95], baselines and ΔAP heatmaps.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use catmouse_tensor::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{DetectorModel, Detection};
use crate::error::{CoreError, Result};
use crate::patch::{apply_protocol, grayscale_patch, ApplicationProtocol, AugmentConfig, Decision, Mode};
use crate::scene::{BBox, Dataset};
use crate::seed;

/// IoU thresholds 0.50, 0.55, …, 0.95.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| 0.5 + 0.05 * i as f64)
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = w * h;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Greedy per-image matching: detections in descending score (ties by
/// index) each take the unmatched GT of highest IoU ≥ `threshold` (ties by
/// GT index). Returns `(score, is_tp)` in processing order.
pub fn match_image(dets: &[Detection], gts: &[BBox], threshold: f64) -> Vec<(f64, bool)> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut taken = vec![false; gts.len()];
    order
        .into_iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let v = iou(&dets[d].bbox, gt);
                if v >= threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
            }
            (dets[d].score, best.is_some())
        })
        .collect()
}

/// 101-point interpolated AP over a global precision–recall curve.
///
/// Zero when there are no ground-truth boxes.
pub fn average_precision(dets: &[Vec<Detection>], gts: &[Vec<BBox>], threshold: f64) -> f64 {
    let n_gt: usize = gts.iter().map(Vec::len).sum();
    if n_gt == 0 {
        return 0.0;
    }
    let mut all: Vec<(f64, bool)> = dets
        .iter()
        .zip(gts)
        .flat_map(|(d, g)| match_image(d, g, threshold))
        .collect();
    // stable: equal scores keep image order, then per-image rank
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(all.len());
    let mut precision = Vec::with_capacity(all.len());
    for (i, &(_, hit)) in all.iter().enumerate() {
        tp += hit as usize;
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut sum = 0.0;
    for r in 0..=100 {
        let r = r as f64 / 100.0;
        let at = recall.partition_point(|&x| x < r - 1e-12);
        if at < precision.len() {
            sum += precision[at];
        }
    }
    sum / 101.0
}

/// What is pasted onto the evaluation scenes.
#[derive(Debug, Clone, Copy)]
pub enum PatchSource<'a> {
    Clean,
    /// Constant grey at `level / 10`.
    Grayscale(usize),
    Patch(&'a Tensor<f32>),
}

impl PatchSource<'_> {
    pub fn tag(&self) -> String {
        match self {
            PatchSource::Clean => "clean".into(),
            PatchSource::Grayscale(l) => format!("grayscale-{l}"),
            PatchSource::Patch(_) => "patch".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub conf_threshold: f64,
    pub max_det: usize,
    pub batch_size: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            conf_threshold: 0.001,
            max_det: 30,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct APResult {
    pub ap: f64,
    pub per_threshold: Vec<f64>,
    pub n_detections: usize,
    pub n_gts: usize,
    pub source: String,
    pub protocol: ApplicationProtocol,
    pub eval_seed: u64,
}

/// Evaluation result plus the placement log of every scene.
#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub result: APResult,
    pub decisions: Vec<Vec<Decision>>,
}

pub fn evaluate(
    model: &DetectorModel,
    dataset: &Dataset,
    source: PatchSource<'_>,
    protocol: &ApplicationProtocol,
    eval_seed: u64,
    settings: &EvalSettings,
) -> Result<APResult> {
    Ok(evaluate_detailed(model, dataset, source, protocol, eval_seed, settings)?.result)
}

/// Applies `source` under `protocol` to every scene, runs the one-to-one
/// head and scores AP@[.5:.95].
///
/// Scene `i` draws its placement decisions from a generator seeded by
/// `(eval_seed, i)`, so runs that differ only in patch content share every
/// placement. The clean source pastes nothing.
pub fn evaluate_detailed(
    model: &DetectorModel,
    dataset: &Dataset,
    source: PatchSource<'_>,
    protocol: &ApplicationProtocol,
    eval_seed: u64,
    settings: &EvalSettings,
) -> Result<EvalOutput> {
    if protocol.mode != Mode::Eval {
        return Err(CoreError::Invalid("evaluation requires an eval-mode protocol".into()));
    }
    protocol.validate()?;
    let patch = match source {
        PatchSource::Clean => None,
        PatchSource::Grayscale(level) => Some(grayscale_patch(level, 8)?),
        PatchSource::Patch(p) => Some(p.map(|v| v.clamp(0.0, 1.0))),
    };
    let aug = AugmentConfig::default();
    let prepared: Vec<(Tensor<f32>, Vec<BBox>, Vec<Decision>)> = dataset
        .scenes
        .par_iter()
        .enumerate()
        .map(|(i, scene)| match &patch {
            None => Ok((scene.image.clone(), scene.targets.clone(), Vec::new())),
            Some(p) => {
                let mut rng = seed::derived_rng(eval_seed, &["eval"], &[i as u64]);
                let (patched, log) = apply_protocol(scene, p, protocol, &aug, &mut rng)?;
                Ok((patched.image, patched.targets, log))
            }
        })
        .collect::<Result<_>>()?;
    let batch = settings.batch_size.max(1);
    let dets: Vec<Vec<Detection>> = prepared
        .par_chunks(batch)
        .map(|chunk| {
            let imgs: Vec<&Tensor<f32>> = chunk.iter().map(|c| &c.0).collect();
            model.detect(&Tensor::stack(&imgs)?, settings.conf_threshold, settings.max_det)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let gts: Vec<Vec<BBox>> = prepared.iter().map(|p| p.1.clone()).collect();
    let per_threshold: Vec<f64> = iou_thresholds()
        .iter()
        .map(|&t| average_precision(&dets, &gts, t))
        .collect();
    let ap = per_threshold.iter().sum::<f64>() / per_threshold.len() as f64;
    Ok(EvalOutput {
        result: APResult {
            ap,
            per_threshold,
            n_detections: dets.iter().map(Vec::len).sum(),
            n_gts: gts.iter().map(Vec::len).sum(),
            source: source.tag(),
            protocol: *protocol,
            eval_seed,
        },
        decisions: prepared.into_iter().map(|p| p.2).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrayscaleBaseline {
    /// One result per level `0..=10`.
    pub levels: Vec<APResult>,
    pub mean: f64,
    /// Population standard deviation over the 11 levels.
    pub std: f64,
}

pub fn grayscale_baseline(
    model: &DetectorModel,
    dataset: &Dataset,
    protocol: &ApplicationProtocol,
    eval_seed: u64,
    settings: &EvalSettings,
) -> Result<GrayscaleBaseline> {
    let levels = (0..=10)
        .map(|l| evaluate(model, dataset, PatchSource::Grayscale(l), protocol, eval_seed, settings))
        .collect::<Result<Vec<_>>>()?;
    let aps: Vec<f64> = levels.iter().map(|r| r.ap).collect();
    let (mean, std) = mean_std(&aps);
    Ok(GrayscaleBaseline { levels, mean, std })
}

/// Arithmetic mean and population standard deviation; `(0, 0)` when empty.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One evaluation in the game ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub run_id: String,
    pub model_order: usize,
    /// 0 for clean and grayscale rows.
    pub patch_order: usize,
    /// Validation-patch index, or the grey level for grayscale rows.
    pub patch_index: usize,
    /// `clean`, `grayscale` or `patch`.
    pub source: String,
    pub resize_factor: f64,
    pub ap: f64,
    pub per_threshold: Vec<f64>,
}

pub const LEDGER_HEADER: &str =
    "run_id,model_order,patch_order,patch_index,source,resize_factor,ap,ap50,ap55,ap60,ap65,ap70,ap75,ap80,ap85,ap90,ap95";

/// CSV with a header row, `.` decimals and `\n` line endings.
pub fn ledger_csv(rows: &[LedgerRow]) -> String {
    let mut out = String::from(LEDGER_HEADER);
    out.push('\n');
    for r in rows {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{}",
            r.run_id, r.model_order, r.patch_order, r.patch_index, r.source, r.resize_factor, r.ap
        );
        for t in &r.per_threshold {
            let _ = write!(out, ",{t}");
        }
        out.push('\n');
    }
    out
}

/// ΔAP matrix over model orders `0..=N` × patch orders `1..=N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapMatrix {
    /// `cells[m][p - 1]`: mean ΔAP of model order `m` against validation
    /// patches of order `p`.
    pub cells: Vec<Vec<f64>>,
    /// Standard deviation of ΔAP over the validation patches of each cell.
    pub stds: Vec<Vec<f64>>,
    /// Mean of each row (model order).
    pub row_mu: Vec<f64>,
    /// Mean of each column (patch order).
    pub col_mu: Vec<f64>,
    /// Mean of all cells.
    pub mu: f64,
}

impl HeatmapMatrix {
    pub fn model_orders(&self) -> usize {
        self.cells.len()
    }

    pub fn patch_orders(&self) -> usize {
        self.cells.first().map_or(0, Vec::len)
    }

    pub fn from_cells(cells: Vec<Vec<f64>>, stds: Vec<Vec<f64>>) -> Self {
        let row_mu: Vec<f64> = cells.iter().map(|r| mean_std(r).0).collect();
        let cols = cells.first().map_or(0, Vec::len);
        let col_mu = (0..cols)
            .map(|p| mean_std(&cells.iter().map(|r| r[p]).collect::<Vec<_>>()).0)
            .collect();
        let mu = mean_std(&cells.iter().flatten().copied().collect::<Vec<_>>()).0;
        Self {
            cells,
            stds,
            row_mu,
            col_mu,
            mu,
        }
    }
}

/// Aggregates ledger rows into ΔAP = grayscale mean AP − patched AP.
///
/// Every model order `0..=max_order` needs its 11 grayscale rows and one
/// row per validation patch `0..validation` of each patch order.
pub fn build_heatmap(rows: &[LedgerRow], max_order: usize, validation: usize) -> Result<HeatmapMatrix> {
    let mut gray: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut patched: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
    for r in rows {
        match r.source.as_str() {
            "grayscale" => gray.entry(r.model_order).or_default().push(r.ap),
            "patch" => {
                patched.insert((r.model_order, r.patch_order, r.patch_index), r.ap);
            }
            _ => {}
        }
    }
    let mut missing = Vec::new();
    for m in 0..=max_order {
        if gray.get(&m).map_or(0, Vec::len) != 11 {
            missing.push(format!("grayscale(model {m})"));
        }
        for p in 1..=max_order {
            for v in 0..validation {
                if !patched.contains_key(&(m, p, v)) {
                    missing.push(format!("(model {m}, patch {p}, validation {v})"));
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(CoreError::MissingCells(missing.join(", ")));
    }
    let mut cells = Vec::with_capacity(max_order + 1);
    let mut stds = Vec::with_capacity(max_order + 1);
    for m in 0..=max_order {
        let g = mean_std(&gray[&m]).0;
        let (row, row_std): (Vec<f64>, Vec<f64>) = (1..=max_order)
            .map(|p| {
                let deltas: Vec<f64> = (0..validation).map(|v| g - patched[&(m, p, v)]).collect();
                mean_std(&deltas)
            })
            .unzip();
        cells.push(row);
        stds.push(row_std);
    }
    Ok(HeatmapMatrix::from_cells(cells, stds))
}
