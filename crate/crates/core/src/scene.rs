//! Deterministic synthetic scenes.
//!
//! Targets ("actors") are upright two-tone figure glyphs: a round head in one
//! colour over a torso with arms and two legs in another. Distractors are
//! single-colour rectangles, discs and triangles. Every scene is a pure
//! function of `(spec, index)`.

use std::fs;
use std::path::Path;

use catmouse_tensor::Tensor;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CoreError, Result};
use crate::seed;

/// Axis-aligned box in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn short_side(&self) -> f64 {
        self.width().min(self.height())
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }

    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max
    }

    pub fn clip(&self, w: f64, h: f64) -> Self {
        Self {
            x_min: self.x_min.clamp(0.0, w),
            y_min: self.y_min.clamp(0.0, h),
            x_max: self.x_max.clamp(0.0, w),
            y_max: self.y_max.clamp(0.0, h),
        }
    }

    fn expanded(&self, margin: f64) -> Self {
        Self::new(
            self.x_min - margin,
            self.y_min - margin,
            self.x_max + margin,
            self.y_max + margin,
        )
    }

    fn intersects(&self, other: &BBox) -> bool {
        self.x_min < other.x_max && other.x_min < self.x_max && self.y_min < other.y_max && other.y_min < self.y_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// Training scenes for detectors.
    DetectorTrain,
    /// Actor-centred scenes with larger figures, used to optimise patches.
    PatchTrain,
    /// Held-out scenes drawn like `DetectorTrain`.
    Eval,
}

impl Family {
    pub fn tag(self) -> &'static str {
        match self {
            Family::DetectorTrain => "detector-train",
            Family::PatchTrain => "patch-train",
            Family::Eval => "eval",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "detector-train" => Some(Family::DetectorTrain),
            "patch-train" => Some(Family::PatchTrain),
            "eval" => Some(Family::Eval),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub family: Family,
    pub image_size: usize,
    /// Inclusive range of actors per scene.
    pub actors: (usize, usize),
    pub distractors: (usize, usize),
    /// Inclusive range of actor glyph heights in pixels.
    pub actor_height: (f64, f64),
    /// Width/height ratio range of actor glyphs.
    pub actor_aspect: (f64, f64),
    /// Lower bound on both sides of every target box.
    pub min_side: f64,
    /// Peak amplitude of the low-frequency background texture.
    pub texture_amplitude: f64,
    /// Number of sinusoidal texture components.
    pub texture_waves: usize,
    pub seed: u64,
}

impl DatasetSpec {
    /// Family defaults at 64 px.
    pub fn for_family(family: Family, seed: u64) -> Self {
        Self::for_family_sized(family, 64, seed)
    }

    /// Family defaults with all lengths scaled to `image_size / 64`.
    pub fn for_family_sized(family: Family, image_size: usize, seed: u64) -> Self {
        let spec = Self::family_64(family, seed);
        let r = image_size as f64 / 64.0;
        Self {
            image_size,
            actor_height: (spec.actor_height.0 * r, spec.actor_height.1 * r),
            min_side: spec.min_side * r,
            ..spec
        }
    }

    fn family_64(family: Family, seed: u64) -> Self {
        let base = Self {
            family,
            image_size: 64,
            actors: (1, 3),
            distractors: (0, 3),
            actor_height: (22.0, 40.0),
            actor_aspect: (0.55, 0.8),
            min_side: 16.0,
            texture_amplitude: 0.12,
            texture_waves: 3,
            seed,
        };
        match family {
            Family::DetectorTrain | Family::Eval => base,
            Family::PatchTrain => Self {
                actors: (1, 2),
                distractors: (0, 2),
                actor_height: (32.0, 56.0),
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::Invalid(format!("dataset spec: {m}")));
        if self.image_size < 16 {
            return bad("image size must be at least 16");
        }
        if self.actors.0 > self.actors.1 || self.distractors.0 > self.distractors.1 {
            return bad("empty count range");
        }
        if !(self.actor_height.0 <= self.actor_height.1 && self.actor_aspect.0 <= self.actor_aspect.1) {
            return bad("empty size range");
        }
        if self.min_side < 1.0 || self.min_side > self.actor_height.0 || self.actor_height.1 > self.image_size as f64 - 2.0 {
            return bad("actor sizes do not fit the image");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: usize,
    /// `[3, H, W]` in `[0, 1]`.
    pub image: Tensor<f32>,
    pub targets: Vec<BBox>,
    pub distractors: Vec<BBox>,
}

impl Scene {
    pub fn size(&self) -> usize {
        self.image.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub scenes: Vec<Scene>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }
}

type Rgb = [f32; 3];

struct Canvas {
    size: usize,
    data: Vec<f32>,
}

impl Canvas {
    fn set(&mut self, x: usize, y: usize, c: Rgb) {
        let plane = self.size * self.size;
        for (ch, v) in c.iter().enumerate() {
            self.data[ch * plane + y * self.size + x] = *v;
        }
    }

    /// Fills every pixel whose centre satisfies `inside`; returns the tight
    /// pixel extent of what was drawn.
    fn fill(&mut self, bounds: &BBox, c: Rgb, inside: impl Fn(f64, f64) -> bool) -> Option<BBox> {
        let s = self.size as f64;
        let b = bounds.clip(s, s);
        let (x0, x1) = (b.x_min.floor() as usize, (b.x_max.ceil() as usize).min(self.size));
        let (y0, y1) = (b.y_min.floor() as usize, (b.y_max.ceil() as usize).min(self.size));
        let mut ext: Option<BBox> = None;
        for y in y0..y1 {
            for x in x0..x1 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                if inside(px, py) {
                    self.set(x, y, c);
                    let pix = BBox::new(x as f64, y as f64, x as f64 + 1.0, y as f64 + 1.0);
                    ext = Some(match ext {
                        None => pix,
                        Some(e) => BBox::new(
                            e.x_min.min(pix.x_min),
                            e.y_min.min(pix.y_min),
                            e.x_max.max(pix.x_max),
                            e.y_max.max(pix.y_max),
                        ),
                    });
                }
            }
        }
        ext
    }
}

fn union(a: Option<BBox>, b: Option<BBox>) -> Option<BBox> {
    match (a, b) {
        (Some(a), Some(b)) => Some(BBox::new(
            a.x_min.min(b.x_min),
            a.y_min.min(b.y_min),
            a.x_max.max(b.x_max),
            a.y_max.max(b.y_max),
        )),
        (a, None) => a,
        (None, b) => b,
    }
}

fn random_color(rng: &mut seed::Rng, lo: f32, hi: f32) -> Rgb {
    [
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
    ]
}

/// Colour at least `min_dist` (L∞) away from `other`.
fn contrasting(rng: &mut seed::Rng, other: Rgb, min_dist: f32) -> Rgb {
    for _ in 0..64 {
        let c = random_color(rng, 0.0, 1.0);
        if c.iter().zip(other).any(|(a, b)| (a - b).abs() >= min_dist) {
            return c;
        }
    }
    other.map(|v| if v > 0.5 { 0.05 } else { 0.95 })
}

fn paint_background(canvas: &mut Canvas, spec: &DatasetSpec, rng: &mut seed::Rng) -> Rgb {
    let base = random_color(rng, 0.25, 0.75);
    let tilt = [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)];
    let waves: Vec<(f64, f64, f64, f64, usize)> = (0..spec.texture_waves)
        .map(|_| {
            (
                rng.random_range(0.5..3.0),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.3..1.0) * spec.texture_amplitude,
                rng.random_range(0..3usize),
            )
        })
        .collect();
    let s = canvas.size;
    let sf = s as f64;
    for y in 0..s {
        for x in 0..s {
            let (u, v) = (x as f64 / sf, y as f64 / sf);
            let mut c = base.map(|b| b as f64 + tilt[0] * (u - 0.5) + tilt[1] * (v - 0.5));
            for &(freq, angle, phase, amp, ch) in &waves {
                let t = (u * angle.cos() + v * angle.sin()) * freq * std::f64::consts::TAU + phase;
                c[ch] += amp * t.sin();
            }
            canvas.set(x, y, c.map(|v| v.clamp(0.0, 1.0) as f32));
        }
    }
    base
}

/// Draws a figure glyph in `frame`; returns its tight pixel extent.
fn draw_actor(canvas: &mut Canvas, frame: &BBox, background: Rgb, rng: &mut seed::Rng) -> Option<BBox> {
    let (w, h) = (frame.width(), frame.height());
    let (cx, top) = (frame.center().0, frame.y_min);
    let head_r = h * rng.random_range(0.11..0.14);
    let head_cy = top + head_r;
    let neck = head_cy + head_r;
    let shoulder = neck + h * 0.02;
    let hip = top + h * rng.random_range(0.58..0.64);
    let torso_half = w * rng.random_range(0.2..0.26);
    let arm_y = shoulder + h * rng.random_range(0.0..0.08);
    let arm_thick = h * 0.08;
    let leg_w = w * rng.random_range(0.14..0.2);
    let leg_spread = rng.random_range(0.0..1.0);

    let head_color = contrasting(rng, background, 0.35);
    let body_color = {
        let mut c = contrasting(rng, background, 0.35);
        for _ in 0..32 {
            if c.iter().zip(head_color).any(|(a, b)| (a - b).abs() >= 0.35) {
                break;
            }
            c = contrasting(rng, background, 0.35);
        }
        c
    };

    let body = canvas.fill(frame, body_color, |x, y| {
        let torso = y >= shoulder && y < hip && (x - cx).abs() < torso_half;
        let arms = y >= arm_y && y < arm_y + arm_thick && x >= frame.x_min && x < frame.x_max;
        // legs splay outward from the hips towards the feet
        let t = ((y - hip) / (frame.y_max - hip)).clamp(0.0, 1.0);
        let inner = torso_half - leg_w + leg_spread * t * (w / 2.0 - torso_half);
        let leg_x = (x - cx).abs();
        let legs = y >= hip && y < frame.y_max && leg_x >= inner.max(0.5) && leg_x < inner.max(0.5) + leg_w;
        torso || arms || legs
    });
    let head = canvas.fill(frame, head_color, |x, y| {
        (x - cx).powi(2) + (y - head_cy).powi(2) <= head_r * head_r
    });
    union(body, head)
}

fn draw_distractor(canvas: &mut Canvas, frame: &BBox, rng: &mut seed::Rng) -> Option<BBox> {
    let color = random_color(rng, 0.0, 1.0);
    let (cx, cy) = frame.center();
    let (hw, hh) = (frame.width() / 2.0, frame.height() / 2.0);
    match rng.random_range(0..3) {
        0 => canvas.fill(frame, color, |_, _| true),
        1 => canvas.fill(frame, color, |x, y| ((x - cx) / hw).powi(2) + ((y - cy) / hh).powi(2) <= 1.0),
        _ => canvas.fill(frame, color, |x, y| {
            let t = (y - frame.y_min) / frame.height();
            (x - cx).abs() <= hw * t
        }),
    }
}

fn place(rng: &mut seed::Rng, size: f64, w: f64, h: f64, taken: &[BBox], gap: f64) -> Option<BBox> {
    if w > size - 2.0 || h > size - 2.0 {
        return None;
    }
    let x = rng.random_range(1.0..=size - 1.0 - w).round();
    let y = rng.random_range(1.0..=size - 1.0 - h).round();
    let b = BBox::new(x, y, x + w, y + h);
    let grown = b.expanded(gap);
    (!taken.iter().any(|t| t.intersects(&grown))).then_some(b)
}

/// Renders scene `index` of a dataset.
pub fn generate_scene(spec: &DatasetSpec, index: usize) -> Scene {
    let mut rng = seed::derived_rng(spec.seed, &["scene", spec.family.tag()], &[index as u64]);
    let size = spec.image_size;
    let sf = size as f64;
    let mut canvas = Canvas {
        size,
        data: vec![0.0; 3 * size * size],
    };
    let background = paint_background(&mut canvas, spec, &mut rng);

    let n_actors = rng.random_range(spec.actors.0..=spec.actors.1);
    let n_distractors = rng.random_range(spec.distractors.0..=spec.distractors.1);

    // Lay out actor frames first so mandatory actors always find room.
    let mut frames: Vec<BBox> = Vec::new();
    for k in 0..n_actors {
        let mut h = rng.random_range(spec.actor_height.0..=spec.actor_height.1).round();
        let aspect = rng.random_range(spec.actor_aspect.0..=spec.actor_aspect.1);
        let mut placed = None;
        for attempt in 0..400 {
            if attempt > 0 && attempt % 20 == 0 {
                h = (h * 0.9).max(spec.actor_height.0.min(spec.min_side * 1.4)).round();
            }
            let w = (h * aspect).max(spec.min_side + 2.0).round();
            if let Some(b) = place(&mut rng, sf, w, h, &frames, 2.0) {
                placed = Some(b);
                break;
            }
        }
        match placed {
            Some(b) => frames.push(b),
            None if k < spec.actors.0 => {
                // fall back to a deterministic column layout of minimal glyphs
                let h = spec.actor_height.0.max(spec.min_side + 2.0);
                let w = spec.min_side + 2.0;
                let x = 1.0 + k as f64 * (w + 3.0);
                frames.push(BBox::new(x, 1.0, x + w, 1.0 + h));
            }
            None => {}
        }
    }

    let mut distractors = Vec::new();
    for _ in 0..n_distractors {
        let w = rng.random_range(6.0..=20.0f64).round();
        let h = rng.random_range(6.0..=20.0f64).round();
        let mut blocked = frames.clone();
        blocked.extend_from_slice(&distractors);
        for _ in 0..50 {
            if let Some(b) = place(&mut rng, sf, w, h, &blocked, 1.0) {
                if let Some(ext) = draw_distractor(&mut canvas, &b, &mut rng) {
                    distractors.push(ext);
                }
                break;
            }
        }
    }

    let mut targets = Vec::with_capacity(frames.len());
    for f in &frames {
        if let Some(ext) = draw_actor(&mut canvas, f, background, &mut rng) {
            targets.push(ext);
        }
    }

    Scene {
        id: index,
        image: Tensor::new(vec![3, size, size], canvas.data).expect("canvas matches shape"),
        targets,
        distractors,
    }
}

pub fn generate_dataset(spec: &DatasetSpec, count: usize) -> Result<Dataset> {
    spec.validate()?;
    if count == 0 {
        return Err(CoreError::Invalid("dataset count must be at least 1".into()));
    }
    Ok(Dataset {
        spec: spec.clone(),
        scenes: (0..count).map(|i| generate_scene(spec, i)).collect(),
    })
}

/// 8-bit RGB copy of a `[3, H, W]` image, clamped to `[0, 1]`.
pub fn to_rgb8(image: &Tensor<f32>) -> image::RgbImage {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let plane = h * w;
    let d = image.data();
    image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let q = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([q(d[i]), q(d[plane + i]), q(d[2 * plane + i])])
    })
}

pub fn save_png(image: &Tensor<f32>, path: &Path) -> Result<()> {
    to_rgb8(image).save(path).map_err(|e| CoreError::Image {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationFile {
    family: Family,
    image_size: usize,
    seed: u64,
    images: Vec<AnnotatedImage>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotatedImage {
    id: usize,
    file: String,
    boxes: Vec<[f64; 4]>,
}

/// Writes `NNNNNN.png` images plus `annotations.json` into `dir`.
pub fn export_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut images = Vec::with_capacity(dataset.len());
    for scene in &dataset.scenes {
        let file = format!("{:06}.png", scene.id);
        save_png(&scene.image, &dir.join(&file))?;
        images.push(AnnotatedImage {
            id: scene.id,
            file,
            boxes: scene.targets.iter().map(|b| [b.x_min, b.y_min, b.x_max, b.y_max]).collect(),
        });
    }
    let ann = AnnotationFile {
        family: dataset.spec.family,
        image_size: dataset.spec.image_size,
        seed: dataset.spec.seed,
        images,
    };
    let path = dir.join("annotations.json");
    let text = serde_json::to_string_pretty(&ann).expect("annotations serialize");
    fs::write(&path, text).map_err(io_err(&path))
}
