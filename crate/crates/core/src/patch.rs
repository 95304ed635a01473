//! Patch augmentation, placement, compositing and the patch objective.
//!
//! Every random decision of a protocol is drawn from the caller's generator
//! in a fixed order that never looks at patch pixels, so two patches applied
//! with equally seeded generators land in exactly the same places.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use catmouse_tensor::kernels::{compose3, WarpPlan};
use catmouse_tensor::{Homography, Scalar, Tape, Tensor, Var};
use nalgebra::{SMatrix, SVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::detector::{coin, target_confidence_logits, DetectorModel};
use crate::error::{io_err, CoreError, Result};
use crate::regime::Regime;
use crate::scene::{save_png, BBox, Scene};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatchRole {
    Train,
    Validation,
}

impl PatchRole {
    pub fn tag(self) -> &'static str {
        match self {
            PatchRole::Train => "train",
            PatchRole::Validation => "validation",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchMeta {
    /// `n ≥ 1`: optimised against a model of order `n − 1`.
    pub order: usize,
    pub index: usize,
    pub role: PatchRole,
    pub regime: Option<Regime>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    /// `[3, S, S]`, nominally in `[0, 1]`.
    pub pixels: Tensor<f32>,
    pub meta: PatchMeta,
}

impl Patch {
    pub fn size(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn source_order(&self) -> usize {
        self.meta.order - 1
    }

    /// Copy with pixels clamped to `[0, 1]`.
    pub fn clamped(&self) -> Patch {
        Patch {
            pixels: self.pixels.map(|v| v.clamp(0.0, 1.0)),
            meta: self.meta,
        }
    }
}

/// i.i.d. uniform `[0, 1]` pixels.
pub fn init_patch(size: usize, seed: u64, meta: PatchMeta) -> Result<Patch> {
    if size < 4 {
        return Err(CoreError::Invalid(format!("patch size {size} is below 4")));
    }
    if meta.order == 0 {
        return Err(CoreError::Invalid("patch order must be at least 1".into()));
    }
    let mut rng = seed::derived_rng(seed, &["patch-init"], &[]);
    Ok(Patch {
        pixels: Tensor::from_fn(vec![3, size, size], |_| rng.random::<f32>()),
        meta,
    })
}

/// Constant patch at grey level `level / 10`.
pub fn grayscale_patch(level: usize, size: usize) -> Result<Tensor<f32>> {
    if level > 10 {
        return Err(CoreError::Invalid(format!("grayscale level {level} outside 0..=10")));
    }
    Ok(Tensor::full(vec![3, size, size], level as f32 / 10.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub obj: f64,
    pub smt: f64,
    pub val: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            obj: 1.0,
            smt: 0.5,
            val: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.obj > 0.0) || self.smt < 0.0 || self.val < 0.0 {
            return Err(CoreError::Invalid(
                "loss weights: lambda_obj must be positive, others non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    PatchTrain,
    AdvTrain,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Resize {
    Range(f64, f64),
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    RandomInBox,
    BoxCenter,
}

/// Magnitudes of the patch-training augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Additive brightness shift bound.
    pub brightness: f64,
    /// Multiplicative contrast range around mid-grey.
    pub contrast: (f64, f64),
    pub max_rotation_deg: f64,
    /// Bound on each corner displacement, as a fraction of the patch side.
    pub perspective: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            brightness: 0.2,
            contrast: (0.8, 1.25),
            max_rotation_deg: 30.0,
            perspective: 0.15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApplicationProtocol {
    pub mode: Mode,
    /// Per-target-box placement probability (π in adversarial training).
    pub p_box: f64,
    /// Probability of one extra placement at a random image position.
    pub p_hal: f64,
    pub resize: Resize,
    pub augment: bool,
    pub placement: Placement,
}

impl ApplicationProtocol {
    pub fn patch_train(resize: (f64, f64)) -> Self {
        Self {
            mode: Mode::PatchTrain,
            p_box: 1.0,
            p_hal: 0.0,
            resize: Resize::Range(resize.0, resize.1),
            augment: true,
            placement: Placement::RandomInBox,
        }
    }

    pub fn adv_train(pi: f64, resize: (f64, f64)) -> Self {
        Self {
            mode: Mode::AdvTrain,
            p_box: pi,
            p_hal: 0.0,
            resize: Resize::Range(resize.0, resize.1),
            augment: false,
            placement: Placement::RandomInBox,
        }
    }

    pub fn eval(p_box: f64, p_hal: f64, factor: f64) -> Self {
        Self {
            mode: Mode::Eval,
            p_box,
            p_hal,
            resize: Resize::Fixed(factor),
            augment: false,
            placement: Placement::BoxCenter,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        let factors_ok = match self.resize {
            Resize::Range(a, b) => a > 0.0 && a <= b && b <= 1.0,
            Resize::Fixed(f) => f > 0.0 && f <= 1.0,
        };
        if !unit(self.p_box) || !unit(self.p_hal) || !factors_ok {
            return Err(CoreError::Invalid(format!("application protocol out of range: {self:?}")));
        }
        if self.mode != Mode::PatchTrain && self.augment {
            return Err(CoreError::Invalid(
                "patches are only augmented during patch training".into(),
            ));
        }
        Ok(())
    }

    fn draw_factor(&self, rng: &mut Rng) -> f64 {
        match self.resize {
            Resize::Range(a, b) if a < b => rng.random_range(a..=b),
            Resize::Range(a, _) => a,
            Resize::Fixed(f) => f,
        }
    }
}

/// Sampled augmentation of one placement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub brightness: f64,
    pub contrast: f64,
    pub angle_deg: f64,
    /// Displacement of corners (tl, tr, br, bl) in pixels.
    pub corners: [(f64, f64); 4],
}

impl AugmentParams {
    pub fn sample(cfg: &AugmentConfig, size: usize, rng: &mut Rng) -> Self {
        let brightness = rng.random_range(-cfg.brightness..=cfg.brightness);
        let contrast = rng.random_range(cfg.contrast.0..=cfg.contrast.1);
        let angle_deg = rng.random_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg);
        let bound = cfg.perspective * size as f64;
        let corners = [0; 4].map(|_| (rng.random_range(-bound..=bound), rng.random_range(-bound..=bound)));
        Self {
            brightness,
            contrast,
            angle_deg,
            corners,
        }
    }

    /// Rotation about the patch centre followed by the perspective map.
    pub fn homography(&self, size: usize) -> Result<Homography> {
        let c = (size as f64 - 1.0) / 2.0;
        let (s, co) = self.angle_deg.to_radians().sin_cos();
        let rotation = compose3(
            &[[1.0, 0.0, c], [0.0, 1.0, c], [0.0, 0.0, 1.0]],
            &compose3(&[[co, -s, 0.0], [s, co, 0.0], [0.0, 0.0, 1.0]], &[[1.0, 0.0, -c], [0.0, 1.0, -c], [0.0, 0.0, 1.0]]),
        );
        let e = size as f64 - 1.0;
        let src = [(0.0, 0.0), (e, 0.0), (e, e), (0.0, e)];
        let mut dst = src;
        for (d, (dx, dy)) in dst.iter_mut().zip(self.corners) {
            d.0 += dx;
            d.1 += dy;
        }
        Ok(compose3(&homography_from_points(&src, &dst)?, &rotation))
    }
}

/// Projective map sending four source points onto four destination points.
pub fn homography_from_points(src: &[(f64, f64); 4], dst: &[(f64, f64); 4]) -> Result<Homography> {
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for (i, (&(x, y), &(u, v))) in src.iter().zip(dst).enumerate() {
        let r = 2 * i;
        a.row_mut(r).copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
        a.row_mut(r + 1).copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
        b[r] = u;
        b[r + 1] = v;
    }
    let h = a
        .lu()
        .solve(&b)
        .ok_or_else(|| CoreError::Invalid("degenerate perspective correspondences".into()))?;
    Ok([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]])
}

/// Colour jitter then one projective warp (rotation ∘ perspective) in
/// patch-training mode; identity with a full mask otherwise.
pub fn augment_patch<T: Scalar>(
    tape: &mut Tape<T>,
    patch: Var,
    protocol: &ApplicationProtocol,
    cfg: &AugmentConfig,
    rng: &mut Rng,
) -> Result<(Var, Tensor<T>)> {
    let s = tape.shape(patch).to_vec();
    if !protocol.augment || protocol.mode != Mode::PatchTrain {
        return Ok((patch, Tensor::ones(vec![s[1], s[2]])));
    }
    let params = AugmentParams::sample(cfg, s[1], rng);
    let jittered = tape.affine(
        patch,
        T::of(params.contrast),
        T::of(0.5 - 0.5 * params.contrast + params.brightness),
    );
    let h = params.homography(s[1])?;
    Ok(tape.bilinear_warp(jittered, &h, s[1], s[2])?)
}

/// Pasted side length for a box: `round(factor · short side)`, at least 1.
pub fn pasted_side(bbox: &BBox, factor: f64) -> usize {
    ((factor * bbox.short_side()).round() as usize).max(1)
}

/// Scales a square `[C, S, S]` patch and its mask to `side × side`.
fn resize_patch<T: Scalar>(tape: &mut Tape<T>, patch: Var, mask: &Tensor<T>, side: usize) -> Result<(Var, Tensor<T>)> {
    let s = tape.shape(patch).to_vec();
    if side == s[1] && side == s[2] {
        return Ok((patch, mask.clone()));
    }
    let r = side as f64 / s[1] as f64;
    let h = [[r, 0.0, 0.5 * r - 0.5], [0.0, r, 0.5 * r - 0.5], [0.0, 0.0, 1.0]];
    let (resized, _) = tape.bilinear_warp(patch, &h, side, side)?;
    let plan = WarpPlan::new(&h, s[1], s[2], side, side)?;
    let mask = Tensor::new(vec![side, side], plan.apply(mask.data(), 1))?;
    Ok((resized, mask))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pasted {
    pub y0: isize,
    pub x0: isize,
    pub side: usize,
}

/// Scales the patch to `resize_factor · short side` of `bbox` and composites
/// it by `mask`: centred in `BoxCenter` mode, uniformly inside the box in
/// `RandomInBox` mode. Boxes with a side below 2 px are skipped (`None`).
#[allow(clippy::too_many_arguments)]
pub fn place_patch<T: Scalar>(
    tape: &mut Tape<T>,
    image: Var,
    patch: Var,
    mask: &Tensor<T>,
    bbox: &BBox,
    placement: Placement,
    resize_factor: f64,
    rng: &mut Rng,
) -> Result<Option<(Var, Pasted)>> {
    if bbox.short_side() < 2.0 {
        return Ok(None);
    }
    let side = pasted_side(bbox, resize_factor);
    let (x0, y0) = match placement {
        Placement::BoxCenter => {
            let (cx, cy) = bbox.center();
            ((cx - side as f64 / 2.0).round() as isize, (cy - side as f64 / 2.0).round() as isize)
        }
        Placement::RandomInBox => (
            random_origin(rng, bbox.x_min, bbox.x_max, side),
            random_origin(rng, bbox.y_min, bbox.y_max, side),
        ),
    };
    let (resized, mask) = resize_patch(tape, patch, mask, side)?;
    let out = tape.paste(image, resized, &mask, y0, x0)?;
    Ok(Some((out, Pasted { y0, x0, side })))
}

fn random_origin(rng: &mut Rng, lo: f64, hi: f64, side: usize) -> isize {
    let first = lo.ceil() as isize;
    let last = (hi - side as f64).floor() as isize;
    if last <= first {
        // the patch is as wide as the box; keep the draw so streams stay aligned
        let _ = rng.random::<u32>();
        ((lo + hi - side as f64) / 2.0).round() as isize
    } else {
        rng.random_range(first as i64..=last as i64) as isize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionTarget {
    Box(usize),
    Hallucination,
}

/// One placement decision of a protocol application.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub target: DecisionTarget,
    pub placed: bool,
    pub at: Option<Pasted>,
}

/// Applies a protocol to one image on a tape.
///
/// Per target box: a Bernoulli(`p_box`) draw, then (if placed) resize factor,
/// augmentation and position draws. Afterwards one Bernoulli(`p_hal`) draw
/// for a hallucinated copy at `factor × median target short side`, placed
/// uniformly inside the image.
#[allow(clippy::too_many_arguments)]
pub fn apply_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    image: Var,
    targets: &[BBox],
    patch: Var,
    protocol: &ApplicationProtocol,
    augment: &AugmentConfig,
    rng: &mut Rng,
) -> Result<(Var, Vec<Decision>)> {
    let mut img = image;
    let mut log = Vec::with_capacity(targets.len() + 1);
    for (i, b) in targets.iter().enumerate() {
        let placed = coin(rng, protocol.p_box);
        let mut at = None;
        if placed {
            let factor = protocol.draw_factor(rng);
            let (aug, mask) = augment_patch(tape, patch, protocol, augment, rng)?;
            if let Some((out, p)) = place_patch(tape, img, aug, &mask, b, protocol.placement, factor, rng)? {
                img = out;
                at = Some(p);
            }
        }
        log.push(Decision {
            target: DecisionTarget::Box(i),
            placed: at.is_some(),
            at,
        });
    }
    if protocol.p_hal > 0.0 {
        let hallucinate = coin(rng, protocol.p_hal);
        let mut at = None;
        if hallucinate && !targets.is_empty() {
            let factor = protocol.draw_factor(rng);
            let mut shorts: Vec<f64> = targets.iter().map(BBox::short_side).collect();
            shorts.sort_by(f64::total_cmp);
            let n = shorts.len();
            let median = if n % 2 == 1 {
                shorts[n / 2]
            } else {
                (shorts[n / 2 - 1] + shorts[n / 2]) / 2.0
            };
            let (aug, mask) = augment_patch(tape, patch, protocol, augment, rng)?;
            let s = tape.shape(image).to_vec();
            let side = ((factor * median).round() as usize).clamp(1, s[1].min(s[2]));
            let y0 = rng.random_range(0..=(s[1] - side)) as isize;
            let x0 = rng.random_range(0..=(s[2] - side)) as isize;
            let (resized, mask) = resize_patch(tape, aug, &mask, side)?;
            img = tape.paste(img, resized, &mask, y0, x0)?;
            at = Some(Pasted { y0, x0, side });
        }
        log.push(Decision {
            target: DecisionTarget::Hallucination,
            placed: at.is_some(),
            at,
        });
    }
    Ok((img, log))
}

/// Applies a protocol to a scene without tracking gradients.
pub fn apply_protocol(
    scene: &Scene,
    patch: &Tensor<f32>,
    protocol: &ApplicationProtocol,
    augment: &AugmentConfig,
    rng: &mut Rng,
) -> Result<(Scene, Vec<Decision>)> {
    let mut tape = Tape::<f32>::new();
    let image = tape.constant(scene.image.clone());
    let p = tape.constant(patch.clone());
    let (out, log) = apply_on_tape(&mut tape, image, &scene.targets, p, protocol, augment, rng)?;
    let mut patched = scene.clone();
    patched.image = tape.value(out).clone();
    Ok((patched, log))
}

/// The three patch-objective terms and their weighted sum.
#[derive(Debug, Clone, Copy)]
pub struct PatchLossTerms {
    pub total: Var,
    pub objectness: Var,
    pub smoothness: Var,
    pub validity: Var,
}

/// `λ_obj · mean σ(max target logit) + λ_smt · TV(patch) + λ_val · range
/// violation(patch)` over a batch of scenes, with the detector frozen.
///
/// The objectness mean over an empty set of targets is 0.
#[allow(clippy::too_many_arguments)]
pub fn patch_loss<T: Scalar>(
    tape: &mut Tape<T>,
    model: &DetectorModel,
    frozen: &[Var],
    scenes: &[&Scene],
    patch: Var,
    weights: &LossWeights,
    protocol: &ApplicationProtocol,
    augment: &AugmentConfig,
    rng: &mut Rng,
) -> Result<PatchLossTerms> {
    if frozen.iter().any(|&w| tape.requires_grad(w)) {
        return Err(CoreError::Invalid("detector weights must be frozen during patch optimisation".into()));
    }
    let mut images = Vec::with_capacity(scenes.len());
    for scene in scenes {
        let img = tape.constant(scene.image.cast());
        let (img, _) = apply_on_tape(tape, img, &scene.targets, patch, protocol, augment, rng)?;
        images.push(img);
    }
    let objectness = if images.is_empty() {
        let z = tape.constant(Tensor::zeros(vec![0]));
        tape.mean(z)
    } else {
        let batch = tape.stack(&images)?;
        let raw = model.forward(tape, frozen, batch)?;
        let gts: Vec<Vec<BBox>> = scenes.iter().map(|s| s.targets.clone()).collect();
        let (logits, _) = target_confidence_logits(tape, &raw, &gts)?;
        let conf = tape.sigmoid(logits);
        tape.mean(conf)
    };
    let smoothness = tape.total_variation(patch)?;
    let validity = tape.range_violation(patch, T::zero(), T::one());
    let a = tape.scale(objectness, T::of(weights.obj));
    let b = tape.scale(smoothness, T::of(weights.smt));
    let c = tape.scale(validity, T::of(weights.val));
    let ab = tape.add(a, b)?;
    let total = tape.add(ab, c)?;
    Ok(PatchLossTerms {
        total,
        objectness,
        smoothness,
        validity,
    })
}

const PATCH_MAGIC: &[u8; 4] = b"CMPT";
const PATCH_VERSION: u32 = 1;

/// Exact patch file.
///
/// ```text
/// "CMPT" | version: u32 | S: u32 | order: u32 | index: u32 | role: u8
/// (0 train, 1 validation) | has_regime: u8 | successive: u8 | k: u32
/// | seed: u64 | 3·S·S × f32
/// ```
///
/// All multi-byte fields little-endian.
pub fn encode_patch(patch: &Patch) -> Vec<u8> {
    let m = &patch.meta;
    let mut out = Vec::with_capacity(35 + 4 * patch.pixels.len());
    out.extend_from_slice(PATCH_MAGIC);
    out.extend_from_slice(&PATCH_VERSION.to_le_bytes());
    for v in [patch.size(), m.order, m.index] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(match m.role {
        PatchRole::Train => 0,
        PatchRole::Validation => 1,
    });
    match m.regime {
        Some(r) => {
            out.push(1);
            out.push(r.successive as u8);
            out.extend_from_slice(&(r.k as u32).to_le_bytes());
        }
        None => {
            out.extend_from_slice(&[0, 0]);
            out.extend_from_slice(&0u32.to_le_bytes());
        }
    }
    out.extend_from_slice(&m.seed.to_le_bytes());
    for v in patch.pixels.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_patch(bytes: &[u8], path: &Path) -> Result<Patch> {
    let fail = |d: &str| CoreError::Format {
        path: path.to_path_buf(),
        detail: d.into(),
    };
    let mut cur = Cursor::new(bytes);
    let mut take = |n: usize| -> Result<Vec<u8>> {
        let mut b = vec![0u8; n];
        cur.read_exact(&mut b).map_err(|_| fail("unexpected end of file"))?;
        Ok(b)
    };
    let u32at = |b: Vec<u8>| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize;
    if take(4)? != PATCH_MAGIC {
        return Err(fail("bad magic, expected CMPT"));
    }
    if u32at(take(4)?) != PATCH_VERSION as usize {
        return Err(fail("unsupported patch version"));
    }
    let size = u32at(take(4)?);
    let order = u32at(take(4)?);
    let index = u32at(take(4)?);
    let role = match take(1)?[0] {
        0 => PatchRole::Train,
        1 => PatchRole::Validation,
        _ => return Err(fail("unknown role")),
    };
    let flags = take(2)?;
    let k = u32at(take(4)?);
    let regime = (flags[0] != 0).then_some(Regime {
        successive: flags[1] != 0,
        k,
    });
    let seed = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
    if !(4..=4096).contains(&size) {
        return Err(fail("implausible patch size"));
    }
    let n = 3 * size * size;
    let raw = take(4 * n)?;
    if bytes.len() != 35 + 4 * n {
        return Err(fail("trailing bytes"));
    }
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(Patch {
        pixels: Tensor::new(vec![3, size, size], data)?,
        meta: PatchMeta {
            order,
            index,
            role,
            regime,
            seed,
        },
    })
}

pub fn save_patch(patch: &Patch, path: &Path) -> Result<()> {
    fs::write(path, encode_patch(patch)).map_err(io_err(path))
}

/// Clamped 8-bit viewing copy.
pub fn save_patch_png(patch: &Patch, path: &Path) -> Result<()> {
    save_png(&patch.pixels, path)
}

pub fn load_patch(path: &Path) -> Result<Patch> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_patch(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pasted_side_follows_short_side() {
        assert_eq!(pasted_side(&BBox::new(0.0, 0.0, 20.0, 40.0), 0.5), 10);
        assert_eq!(pasted_side(&BBox::new(0.0, 0.0, 1.0, 1.0), 0.1), 1);
    }

    #[test]
    fn grayscale_levels() {
        assert!(grayscale_patch(0, 4).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(grayscale_patch(10, 4).unwrap().data().iter().all(|&v| v == 1.0));
        assert!(grayscale_patch(5, 4).unwrap().data().iter().all(|&v| v == 0.5));
        assert!(grayscale_patch(11, 4).is_err());
    }

    #[test]
    fn homography_hits_corners() {
        let src = [(0.0, 0.0), (7.0, 0.0), (7.0, 7.0), (0.0, 7.0)];
        let dst = [(0.5, -0.3), (7.2, 0.4), (6.6, 7.1), (-0.2, 6.8)];
        let h = homography_from_points(&src, &dst).unwrap();
        for (s, d) in src.iter().zip(dst) {
            let (x, y) = catmouse_tensor::kernels::apply3(&h, s.0, s.1).unwrap();
            assert!((x - d.0).abs() < 1e-9 && (y - d.1).abs() < 1e-9);
        }
    }

    #[test]
    fn protocol_validation() {
        assert!(ApplicationProtocol::eval(0.5, 0.5, 0.5).validate().is_ok());
        assert!(ApplicationProtocol::eval(1.5, 0.5, 0.5).validate().is_err());
        let mut p = ApplicationProtocol::adv_train(0.25, (0.75, 0.9));
        assert!(p.validate().is_ok());
        p.augment = true;
        assert!(p.validate().is_err());
    }
}
