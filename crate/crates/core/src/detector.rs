//! Single-class anchor-free grid detector with a one-to-one and a
//! one-to-many head over a shared convolutional backbone.
//!
//! Each head emits, per grid cell, a confidence logit and four box offsets
//! `(dx, dy, dw, dh)`. A box decodes as
//!
//! ```text
//! centre = cell centre + (dx, dy) · cell
//! size   = prior · (exp(dw), exp(dh))
//! ```
//!
//! Inference reads only the one-to-one head and applies no NMS.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use catmouse_tensor::kernels::sigmoid;
use catmouse_tensor::{Scalar, Tape, Tensor, Var};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CoreError, Result};
use crate::regime::Regime;
use crate::scene::BBox;
use crate::seed;

/// Channels and stride of one 3×3 conv stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub channels: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    /// Variant id, e.g. `base` or a transfer-zoo member name.
    pub name: String,
    pub image_size: usize,
    pub stages: Vec<Stage>,
    /// Side length in pixels of a box decoded from zero size offsets.
    pub prior: f64,
    pub leaky_slope: f64,
}

impl ArchSpec {
    /// Five stages with three stride-2 downsamplings: 64 px → 8×8 grid, with
    /// a 24 px prior box (scaled for other image sizes).
    pub fn base(image_size: usize) -> Self {
        Self {
            name: "base".into(),
            image_size,
            stages: vec![
                Stage { channels: 16, stride: 2 },
                Stage { channels: 32, stride: 2 },
                Stage { channels: 32, stride: 1 },
                Stage { channels: 64, stride: 2 },
                Stage { channels: 64, stride: 1 },
            ],
            prior: 0.375 * image_size as f64,
            leaky_slope: 0.1,
        }
    }

    /// Width/depth variants used as the transfer zoo; `index` wraps.
    pub fn zoo_variant(image_size: usize, index: usize) -> Self {
        let s = |channels, stride| Stage { channels, stride };
        let (name, stages) = match index % 6 {
            0 => ("zoo-base", Self::base(image_size).stages),
            1 => ("zoo-narrow", vec![s(12, 2), s(24, 2), s(24, 1), s(48, 2), s(48, 1)]),
            2 => ("zoo-wide", vec![s(20, 2), s(40, 2), s(40, 1), s(80, 2), s(80, 1)]),
            3 => ("zoo-shallow", vec![s(16, 2), s(32, 2), s(64, 2), s(64, 1)]),
            4 => ("zoo-deep", vec![s(16, 2), s(32, 2), s(32, 1), s(64, 2), s(64, 1), s(64, 1)]),
            _ => ("zoo-tapered", vec![s(24, 2), s(32, 2), s(32, 1), s(48, 2), s(64, 1)]),
        };
        Self {
            name: format!("{name}-{index}"),
            stages,
            ..Self::base(image_size)
        }
    }

    pub fn downsample(&self) -> usize {
        self.stages.iter().map(|s| s.stride).product()
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.downsample()
    }

    pub fn cell(&self) -> f64 {
        self.image_size as f64 / self.grid() as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Invalid(format!("architecture {}: {m}", self.name)));
        if !(4..=6).contains(&self.stages.len()) {
            return bad(format!("{} conv stages, expected 4 to 6", self.stages.len()));
        }
        if self.stages.iter().any(|s| s.channels == 0 || !(1..=2).contains(&s.stride)) {
            return bad("stage channels must be positive and strides 1 or 2".into());
        }
        if !self.image_size.is_multiple_of(self.downsample()) || self.grid() == 0 {
            return bad(format!("image size {} not divisible by {}", self.image_size, self.downsample()));
        }
        if self.prior <= 0.0 {
            return bad("prior must be positive".into());
        }
        Ok(())
    }

    /// Shapes of all weight tensors in checkpoint order: per stage kernel and
    /// bias, then one-to-one head kernel and bias, then one-to-many head.
    pub fn weight_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        let mut cin = 3;
        for s in &self.stages {
            shapes.push(vec![s.channels, cin, 3, 3]);
            shapes.push(vec![s.channels]);
            cin = s.channels;
        }
        for _ in 0..2 {
            shapes.push(vec![5, cin, 1, 1]);
            shapes.push(vec![5]);
        }
        shapes
    }
}

/// Initial confidence bias; sigmoid(−4) ≈ 0.018.
pub const PRIOR_LOGIT: f32 = -4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub arch: ArchSpec,
    /// Completed cat-and-mouse cycles; 0 = standard training.
    pub order: usize,
    /// Adversarial-training regime; `None` for standard training.
    pub regime: Option<Regime>,
    pub weights: Vec<Tensor<f32>>,
}

impl DetectorModel {
    /// He-initialised backbone, small head weights, confidence bias at
    /// [`PRIOR_LOGIT`].
    pub fn init(arch: ArchSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = seed::derived_rng(seed, &["detector-init", &arch.name], &[]);
        let shapes = arch.weight_shapes();
        let n_backbone = 2 * arch.stages.len();
        let weights = shapes
            .iter()
            .enumerate()
            .map(|(i, shape)| {
                if shape.len() == 1 {
                    let mut b = Tensor::zeros(shape.clone());
                    if i > n_backbone {
                        b.data_mut()[0] = PRIOR_LOGIT;
                    }
                    return b;
                }
                let fan_in: usize = shape[1..].iter().product();
                let std = if i >= n_backbone {
                    0.01
                } else {
                    (2.0 / fan_in as f64).sqrt()
                };
                let normal = Normal::new(0.0, std).expect("valid std");
                Tensor::from_fn(shape.clone(), |_| normal.sample(&mut rng) as f32)
            })
            .collect();
        Ok(Self {
            arch,
            order: 0,
            regime: None,
            weights,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(Tensor::len).sum()
    }

    /// Puts the weights on `tape`, trainable or frozen.
    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.weights
            .iter()
            .map(|w| {
                let w = w.cast::<T>();
                if trainable {
                    tape.param(w)
                } else {
                    tape.constant(w)
                }
            })
            .collect()
    }

    /// Forward pass over `[B, 3, H, W]` images with weights from [`bind`](Self::bind).
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, weights: &[Var], images: Var) -> Result<RawPrediction> {
        let s = tape.shape(images).to_vec();
        let size = self.arch.image_size;
        if s.len() != 4 || s[1] != 3 || s[2] != size || s[3] != size {
            return Err(CoreError::Invalid(format!(
                "detector expects [B, 3, {size}, {size}] images, got {s:?}"
            )));
        }
        if weights.len() != self.weights.len() {
            return Err(CoreError::Invalid("weights were bound for a different model".into()));
        }
        let slope = T::of(self.arch.leaky_slope);
        let mut x = images;
        for (i, stage) in self.arch.stages.iter().enumerate() {
            x = tape.conv2d(x, weights[2 * i], stage.stride, 1)?;
            x = tape.channel_bias(x, weights[2 * i + 1])?;
            x = tape.leaky_relu(x, slope);
        }
        let n = 2 * self.arch.stages.len();
        let grid = self.arch.grid();
        let mut heads = Vec::with_capacity(2);
        for h in 0..2 {
            let y = tape.conv2d(x, weights[n + 2 * h], 1, 0)?;
            let y = tape.channel_bias(y, weights[n + 2 * h + 1])?;
            let logits = tape.slice_channels(y, 0, 1)?;
            let logits = tape.reshape(logits, vec![s[0], grid, grid])?;
            let offsets = tape.slice_channels(y, 1, 4)?;
            heads.push(HeadOutput { logits, offsets });
        }
        Ok(RawPrediction {
            one_to_one: heads[0],
            one_to_many: heads[1],
            geometry: GridGeometry::of(&self.arch),
            batch: s[0],
        })
    }

    /// Forward + decode for plain `[B, 3, H, W]` images without gradients.
    pub fn detect(&self, images: &Tensor<f32>, conf_threshold: f64, max_det: usize) -> Result<Vec<Vec<Detection>>> {
        let mut tape = Tape::<f32>::new();
        let w = self.bind(&mut tape, false);
        let x = tape.constant(images.clone());
        let raw = self.forward(&mut tape, &w, x)?;
        Ok((0..raw.batch)
            .map(|b| decode(&raw.head_values(&tape, b, Head::OneToOne), conf_threshold, max_det))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    pub grid: usize,
    pub cell: f64,
    pub prior: f64,
    pub image_size: f64,
}

impl GridGeometry {
    pub fn of(arch: &ArchSpec) -> Self {
        Self {
            grid: arch.grid(),
            cell: arch.cell(),
            prior: arch.prior,
            image_size: arch.image_size as f64,
        }
    }

    pub fn cell_center(&self, cell: usize) -> (f64, f64) {
        let (gy, gx) = (cell / self.grid, cell % self.grid);
        ((gx as f64 + 0.5) * self.cell, (gy as f64 + 0.5) * self.cell)
    }

    /// Cell whose centre is nearest to `(x, y)`.
    pub fn nearest_cell(&self, x: f64, y: f64) -> usize {
        let idx = |v: f64| ((v / self.cell).floor().max(0.0) as usize).min(self.grid - 1);
        idx(y) * self.grid + idx(x)
    }

    /// Cells whose centres fall inside `b`, or the nearest cell to its centre
    /// when it covers none.
    pub fn covered_cells(&self, b: &BBox) -> Vec<usize> {
        let cells: Vec<usize> = (0..self.grid * self.grid)
            .filter(|&c| {
                let (x, y) = self.cell_center(c);
                b.contains_point(x, y)
            })
            .collect();
        if cells.is_empty() {
            let (cx, cy) = b.center();
            vec![self.nearest_cell(cx, cy)]
        } else {
            cells
        }
    }

    /// Regression target of `b` relative to `cell`.
    pub fn encode(&self, cell: usize, b: &BBox) -> [f64; 4] {
        let (ccx, ccy) = self.cell_center(cell);
        let (bx, by) = b.center();
        [
            (bx - ccx) / self.cell,
            (by - ccy) / self.cell,
            (b.width() / self.prior).ln(),
            (b.height() / self.prior).ln(),
        ]
    }

    /// Inverse of [`encode`](Self::encode), clipped to the image.
    pub fn decode_box(&self, cell: usize, off: [f64; 4]) -> BBox {
        let (ccx, ccy) = self.cell_center(cell);
        let cx = ccx + off[0] * self.cell;
        let cy = ccy + off[1] * self.cell;
        let w = self.prior * off[2].clamp(-8.0, 4.0).exp();
        let h = self.prior * off[3].clamp(-8.0, 4.0).exp();
        BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0).clip(self.image_size, self.image_size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadOutput {
    /// `[B, G, G]` pre-sigmoid confidences.
    pub logits: Var,
    /// `[B, 4, G, G]` box offsets.
    pub offsets: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    OneToOne,
    OneToMany,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawPrediction {
    pub one_to_one: HeadOutput,
    pub one_to_many: HeadOutput,
    pub geometry: GridGeometry,
    pub batch: usize,
}

impl RawPrediction {
    pub fn head(&self, head: Head) -> HeadOutput {
        match head {
            Head::OneToOne => self.one_to_one,
            Head::OneToMany => self.one_to_many,
        }
    }

    /// Plain values of one head for image `b`.
    pub fn head_values<T: Scalar>(&self, tape: &Tape<T>, b: usize, head: Head) -> HeadValues {
        let h = self.head(head);
        let cells = self.geometry.grid * self.geometry.grid;
        let logits = tape.value(h.logits).slice_outer(b).iter().map(|v| v.as_f64()).collect();
        let off = tape.value(h.offsets).slice_outer(b);
        let offsets = (0..cells)
            .map(|c| [0, 1, 2, 3].map(|k| off[k * cells + c].as_f64()))
            .collect();
        HeadValues {
            logits,
            offsets,
            geometry: self.geometry,
        }
    }
}

/// Per-cell outputs of one head for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadValues {
    pub logits: Vec<f64>,
    pub offsets: Vec<[f64; 4]>,
    pub geometry: GridGeometry,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
}

/// Cells with `sigmoid(logit) >= conf_threshold`, best first, at most
/// `max_det`. Score ties keep cell order.
pub fn decode(values: &HeadValues, conf_threshold: f64, max_det: usize) -> Vec<Detection> {
    let mut dets: Vec<(usize, Detection)> = values
        .logits
        .iter()
        .enumerate()
        .filter_map(|(cell, &logit)| {
            let score = sigmoid(logit);
            (score >= conf_threshold).then(|| {
                (
                    cell,
                    Detection {
                        bbox: values.geometry.decode_box(cell, values.offsets[cell]),
                        score,
                    },
                )
            })
        })
        .collect();
    dets.sort_by(|a, b| b.1.score.total_cmp(&a.1.score).then(a.0.cmp(&b.0)));
    dets.truncate(max_det);
    dets.into_iter().map(|(_, d)| d).collect()
}

/// Positive cells of both heads for one image.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment {
    /// `(cell, gt index)`; one cell per GT, the one nearest its centre.
    pub one_to_one: Vec<(usize, usize)>,
    /// `(cell, gt index)`; every covered cell, each cell assigned once.
    pub one_to_many: Vec<(usize, usize)>,
}

pub fn assign(geometry: &GridGeometry, gts: &[BBox]) -> Assignment {
    let mut a = Assignment::default();
    let mut o2o_taken = vec![false; geometry.grid * geometry.grid];
    for (g, b) in gts.iter().enumerate() {
        let (cx, cy) = b.center();
        let cell = geometry.nearest_cell(cx, cy);
        if !o2o_taken[cell] {
            o2o_taken[cell] = true;
            a.one_to_one.push((cell, g));
        }
    }
    // A cell covered by several boxes goes to the box whose centre is closest.
    let mut best: Vec<Option<(f64, usize)>> = vec![None; geometry.grid * geometry.grid];
    for (g, b) in gts.iter().enumerate() {
        let (bx, by) = b.center();
        for cell in geometry.covered_cells(b) {
            let (x, y) = geometry.cell_center(cell);
            let d = (x - bx).powi(2) + (y - by).powi(2);
            if best[cell].is_none_or(|(bd, _)| d < bd) {
                best[cell] = Some((d, g));
            }
        }
    }
    a.one_to_many = best
        .iter()
        .enumerate()
        .filter_map(|(c, b)| b.map(|(_, g)| (c, g)))
        .collect();
    a
}

/// Weight of the box regression term relative to confidence BCE.
pub const BOX_LOSS_WEIGHT: f64 = 2.0;
const SMOOTH_L1_BETA: f64 = 0.1;

/// Sum over both heads of mean confidence BCE plus box smooth-L1 averaged
/// over positive cells.
pub fn detector_loss<T: Scalar>(tape: &mut Tape<T>, raw: &RawPrediction, gts: &[Vec<BBox>]) -> Result<Var> {
    if gts.len() != raw.batch {
        return Err(CoreError::Invalid(format!(
            "{} ground-truth lists for a batch of {}",
            gts.len(),
            raw.batch
        )));
    }
    let g = &raw.geometry;
    let cells = g.grid * g.grid;
    let n_conf = (raw.batch * cells) as f64;
    let assignments: Vec<Assignment> = gts.iter().map(|b| assign(g, b)).collect();
    let mut total: Option<Var> = None;
    for head in [Head::OneToOne, Head::OneToMany] {
        let out = raw.head(head);
        let mut conf_t = vec![T::zero(); raw.batch * cells];
        let mut box_t = vec![T::zero(); raw.batch * 4 * cells];
        let mut box_w = vec![T::zero(); raw.batch * 4 * cells];
        let mut n_pos = 0usize;
        for (b, a) in assignments.iter().enumerate() {
            let pos = match head {
                Head::OneToOne => &a.one_to_one,
                Head::OneToMany => &a.one_to_many,
            };
            for &(cell, gi) in pos {
                conf_t[b * cells + cell] = T::one();
                let enc = g.encode(cell, &gts[b][gi]);
                for (k, e) in enc.iter().enumerate() {
                    let i = (b * 4 + k) * cells + cell;
                    box_t[i] = T::of(*e);
                    box_w[i] = T::one();
                }
                n_pos += 1;
            }
        }
        let conf_w = vec![T::of(1.0 / n_conf); raw.batch * cells];
        let bce = tape.bce_with_logits(out.logits, conf_t, conf_w)?;
        let box_scale = T::of(BOX_LOSS_WEIGHT / n_pos.max(1) as f64);
        box_w.iter_mut().for_each(|w| *w *= box_scale);
        let reg = tape.smooth_l1(out.offsets, box_t, box_w, T::of(SMOOTH_L1_BETA))?;
        let head_loss = tape.add(bce, reg)?;
        total = Some(match total {
            None => head_loss,
            Some(t) => tape.add(t, head_loss)?,
        });
    }
    Ok(total.expect("two heads"))
}

/// Where each objectness term was read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfidenceSource {
    pub image: usize,
    pub gt: usize,
    pub head: Head,
    pub cell: usize,
}

/// Per GT box and per head, the maximum confidence logit over the cells the
/// box covers (nearest cell as fallback). Returns a `[n]` vector ordered
/// image, box, then head (one-to-one before one-to-many). Ties go to the
/// lowest cell index.
pub fn target_confidence_logits<T: Scalar>(
    tape: &mut Tape<T>,
    raw: &RawPrediction,
    gts: &[Vec<BBox>],
) -> Result<(Var, Vec<ConfidenceSource>)> {
    if gts.len() != raw.batch {
        return Err(CoreError::Invalid(format!(
            "{} ground-truth lists for a batch of {}",
            gts.len(),
            raw.batch
        )));
    }
    let g = &raw.geometry;
    let cells = g.grid * g.grid;
    let per_head = raw.batch * cells;
    let stacked = tape.stack(&[raw.one_to_one.logits, raw.one_to_many.logits])?;
    let values = tape.value(stacked).data().to_vec();
    let mut idx = Vec::new();
    let mut sources = Vec::new();
    for (b, boxes) in gts.iter().enumerate() {
        for (gi, bx) in boxes.iter().enumerate() {
            let covered = g.covered_cells(bx);
            for (h, head) in [Head::OneToOne, Head::OneToMany].into_iter().enumerate() {
                let base = h * per_head + b * cells;
                let mut best = covered[0];
                for &c in &covered[1..] {
                    if values[base + c] > values[base + best] {
                        best = c;
                    }
                }
                idx.push(base + best);
                sources.push(ConfidenceSource {
                    image: b,
                    gt: gi,
                    head,
                    cell: best,
                });
            }
        }
    }
    Ok((tape.gather(stacked, idx)?, sources))
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"CMLD";
const CHECKPOINT_VERSION: u32 = 1;

/// Serialises a model.
///
/// Layout (all integers `u32` little-endian unless noted):
///
/// ```text
/// "CMLD" | version | image_size | prior: f64 | leaky_slope: f64
/// | n_stages | (channels, stride) × n_stages | name_len | name: utf-8
/// | order | has_regime: u8 | successive: u8 | k
/// | n_tensors | (rank | dims × rank | f32 × Π dims) × n_tensors
/// ```
///
/// Tensors appear in [`ArchSpec::weight_shapes`] order.
pub fn encode_checkpoint(model: &DetectorModel) -> Vec<u8> {
    let mut out = Vec::new();
    let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let a = &model.arch;
    u32le(&mut out, a.image_size);
    out.extend_from_slice(&a.prior.to_le_bytes());
    out.extend_from_slice(&a.leaky_slope.to_le_bytes());
    u32le(&mut out, a.stages.len());
    for s in &a.stages {
        u32le(&mut out, s.channels);
        u32le(&mut out, s.stride);
    }
    u32le(&mut out, a.name.len());
    out.extend_from_slice(a.name.as_bytes());
    u32le(&mut out, model.order);
    match model.regime {
        Some(r) => {
            out.push(1);
            out.push(r.successive as u8);
            u32le(&mut out, r.k);
        }
        None => {
            out.extend_from_slice(&[0, 0]);
            u32le(&mut out, 0);
        }
    }
    u32le(&mut out, model.weights.len());
    for w in &model.weights {
        u32le(&mut out, w.shape().len());
        for &d in w.shape() {
            u32le(&mut out, d);
        }
        for v in w.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
    path: &'a Path,
}

impl Reader<'_> {
    fn fail(&self, detail: impl Into<String>) -> CoreError {
        CoreError::Format {
            path: self.path.to_path_buf(),
            detail: detail.into(),
        }
    }

    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.cur
            .read_exact(&mut b)
            .map_err(|_| self.fail("unexpected end of file"))?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn finished(&self) -> bool {
        self.cur.position() as usize == self.cur.get_ref().len()
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<DetectorModel> {
    let mut r = Reader {
        cur: Cursor::new(bytes),
        path,
    };
    if &r.bytes::<4>()? != CHECKPOINT_MAGIC {
        return Err(r.fail("bad magic, expected CMLD"));
    }
    let version = r.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(r.fail(format!("unsupported checkpoint version {version}")));
    }
    let image_size = r.u32()?;
    let prior = r.f64()?;
    let leaky_slope = r.f64()?;
    let n_stages = r.u32()?;
    if n_stages > 64 {
        return Err(r.fail("implausible stage count"));
    }
    let mut stages = Vec::with_capacity(n_stages);
    for _ in 0..n_stages {
        stages.push(Stage {
            channels: r.u32()?,
            stride: r.u32()?,
        });
    }
    let name_len = r.u32()?;
    if name_len > 4096 {
        return Err(r.fail("implausible name length"));
    }
    let mut name = vec![0u8; name_len];
    r.cur.read_exact(&mut name).map_err(|_| r.fail("truncated name"))?;
    let name = String::from_utf8(name).map_err(|_| r.fail("name is not utf-8"))?;
    let order = r.u32()?;
    let has_regime = r.u8()?;
    let successive = r.u8()? != 0;
    let k = r.u32()?;
    let regime = (has_regime != 0).then_some(Regime { successive, k });
    let arch = ArchSpec {
        name,
        image_size,
        stages,
        prior,
        leaky_slope,
    };
    arch.validate()?;
    let expected = arch.weight_shapes();
    let n = r.u32()?;
    if n != expected.len() {
        return Err(r.fail(format!("{n} tensors, architecture needs {}", expected.len())));
    }
    let mut weights = Vec::with_capacity(n);
    for shape in expected {
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if dims != shape {
            return Err(r.fail(format!("tensor shape {dims:?}, expected {shape:?}")));
        }
        let len: usize = dims.iter().product();
        let data = (0..len).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        weights.push(Tensor::new(dims, data)?);
    }
    if !r.finished() {
        return Err(r.fail("trailing bytes"));
    }
    Ok(DetectorModel {
        arch,
        order,
        regime,
        weights,
    })
}

pub fn save_checkpoint(model: &DetectorModel, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model)).map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<DetectorModel> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_checkpoint(&bytes, path)
}

/// Random horizontal flip of an image and its boxes.
pub(crate) fn hflip(image: &Tensor<f32>, boxes: &[BBox]) -> (Tensor<f32>, Vec<BBox>) {
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let src = image.data();
    let data = (0..c * h * w)
        .map(|i| {
            let x = i % w;
            src[i - x + (w - 1 - x)]
        })
        .collect();
    let wf = w as f64;
    let boxes = boxes
        .iter()
        .map(|b| BBox::new(wf - b.x_max, b.y_min, wf - b.x_min, b.y_max))
        .collect();
    (Tensor::new(vec![c, h, w], data).expect("same shape"), boxes)
}

pub(crate) fn coin(rng: &mut seed::Rng, p: f64) -> bool {
    rng.random::<f64>() < p
}
