//! Detector training, standard and adversarial.

use catmouse_tensor::{AdamW, AdamWConfig, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::detector::{coin, detector_loss, hflip, ArchSpec, DetectorModel};
use crate::error::{CoreError, Result};
use crate::patch::{apply_protocol, ApplicationProtocol, AugmentConfig, Patch};
use crate::scene::{BBox, Dataset};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Peak learning rate; decays along a half cosine to 5% of the peak.
    pub lr: f64,
    pub weight_decay: f64,
    /// Probability of a horizontal flip, applied after patch application.
    pub flip: f64,
    /// Adversarial-training resize range.
    pub adv_resize: (f64, f64),
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            lr: 2e-3,
            weight_decay: 5e-4,
            flip: 0.5,
            adv_resize: (0.75, 0.9),
        }
    }
}

impl DetectorTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(CoreError::Invalid("detector training needs epochs ≥ 1 and batch size ≥ 1".into()));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 || !(0.0..=1.0).contains(&self.flip) {
            return Err(CoreError::Invalid("detector training: bad lr, weight decay or flip probability".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        let t = step as f64 / total.max(1) as f64;
        let floor = 0.05;
        self.lr * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
    }
}

/// Mean loss of every epoch, in order.
pub type LossCurve = Vec<f64>;

/// Trains a fresh detector of architecture `arch` on `dataset`.
///
/// With a non-empty `pool` every image first draws one patch uniformly from
/// the pool and passes the adversarial-training applier with placement
/// probability `pi`; flips come after that. `pi = 0` (pool ignored) is
/// standard training.
pub fn train_detector(
    arch: ArchSpec,
    dataset: &Dataset,
    pool: &[Patch],
    pi: f64,
    config: &DetectorTrainConfig,
    seed: u64,
) -> Result<(DetectorModel, LossCurve)> {
    config.validate()?;
    if !(0.0..=1.0).contains(&pi) {
        return Err(CoreError::Invalid(format!("pi = {pi} outside [0, 1]")));
    }
    if pi > 0.0 && pool.is_empty() {
        return Err(CoreError::Invalid("pi > 0 requires a non-empty patch pool".into()));
    }
    if dataset.is_empty() {
        return Err(CoreError::Invalid("empty training dataset".into()));
    }
    if dataset.spec.image_size != arch.image_size {
        return Err(CoreError::Invalid(format!(
            "dataset images are {} px, architecture expects {}",
            dataset.spec.image_size, arch.image_size
        )));
    }
    let mut model = DetectorModel::init(arch, seed)?;
    let mut rng = seed::derived_rng(seed, &["detector-train", &model.arch.name], &[]);
    let protocol = ApplicationProtocol::adv_train(pi, config.adv_resize);
    protocol.validate()?;
    let no_aug = AugmentConfig::default();
    let mut opt = AdamW::<f32>::new(AdamWConfig {
        lr: config.lr,
        weight_decay: config.weight_decay,
        ..AdamWConfig::default()
    });

    let n = dataset.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let total = steps_per_epoch * config.epochs;
    let mut order: Vec<usize> = (0..n).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut images = Vec::with_capacity(chunk.len());
            let mut gts: Vec<Vec<BBox>> = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let scene = &dataset.scenes[i];
                let (image, boxes) = if pi > 0.0 {
                    let p = &pool[rng.random_range(0..pool.len())];
                    let (patched, _) = apply_protocol(scene, &p.pixels, &protocol, &no_aug, &mut rng)?;
                    (patched.image, patched.targets)
                } else {
                    (scene.image.clone(), scene.targets.clone())
                };
                let (image, boxes) = if coin(&mut rng, config.flip) {
                    hflip(&image, &boxes)
                } else {
                    (image, boxes)
                };
                images.push(image);
                gts.push(boxes);
            }
            let mut tape = Tape::<f32>::new();
            let weights = model.bind(&mut tape, true);
            let batch = tape.constant(Tensor::stack(&images.iter().collect::<Vec<_>>())?);
            let raw = model.forward(&mut tape, &weights, batch)?;
            let loss = detector_loss(&mut tape, &raw, &gts)?;
            let value = tape.value(loss).item() as f64;
            if !value.is_finite() {
                return Err(CoreError::Invalid(format!(
                    "non-finite detector loss at epoch {epoch}, step {step}"
                )));
            }
            epoch_loss += value * chunk.len() as f64;
            tape.backward(loss)?;
            let grads: Vec<Tensor<f32>> = weights
                .iter()
                .map(|&w| tape.grad(w).cloned().expect("trainable weights receive gradients"))
                .collect();
            opt.set_lr(config.lr_at(step, total));
            let mut params: Vec<&mut Tensor<f32>> = model.weights.iter_mut().collect();
            let grad_refs: Vec<&Tensor<f32>> = grads.iter().collect();
            opt.step(&mut params, &grad_refs)?;
            step += 1;
        }
        let mean = epoch_loss / n as f64;
        log::debug!("{} epoch {epoch}: loss {mean:.5}", model.arch.name);
        curve.push(mean);
    }
    Ok((model, curve))
}
