//! Game configuration and its line-oriented text format.
//!
//! ```text
//! # comment
//! preset = desk          # optional; must precede every other key
//!
//! [game]
//! regime = successive    # or non-successive
//! k = 3
//! max_order = 3
//! ```
//!
//! Sections: `game`, `data`, `detector`, `patch`, `eval`. Every key is
//! optional and falls back to the preset value; unknown sections or keys,
//! malformed lines and out-of-range values are errors carrying the 1-based
//! line number.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, CoreError, Result};
use crate::eval::EvalSettings;
use crate::patch::{ApplicationProtocol, AugmentConfig, LossWeights};
use crate::regime::Regime;
use crate::training::DetectorTrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Desk,
    Full,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            _ => Err(format!("unknown preset `{s}`, expected desk or full")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub image_size: usize,
    pub detector_train: usize,
    pub patch_train: usize,
    pub eval: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchTrainConfig {
    pub size: usize,
    pub epochs: usize,
    /// The learning rate drops tenfold every `decay_every` epochs.
    pub decay_every: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub resize: (f64, f64),
    pub weights: LossWeights,
    pub augment: AugmentConfig,
}

impl PatchTrainConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * 0.1f64.powi((epoch / self.decay_every.max(1)) as i32)
    }

    pub fn protocol(&self) -> ApplicationProtocol {
        ApplicationProtocol::patch_train(self.resize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub p_box: f64,
    pub p_hal: f64,
    pub resize: f64,
    pub settings: EvalSettings,
}

impl EvalConfig {
    pub fn protocol(&self) -> ApplicationProtocol {
        ApplicationProtocol::eval(self.p_box, self.p_hal, self.resize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub preset: Preset,
    pub regime: Regime,
    /// Highest order `N` of the game.
    pub max_order: usize,
    /// Validation patches per order.
    pub validation: usize,
    /// Per-box patch probability during adversarial training.
    pub pi: f64,
    pub seed: u64,
    pub zoo_size: usize,
    pub data: DataConfig,
    pub detector: DetectorTrainConfig,
    pub patch: PatchTrainConfig,
    pub eval: EvalConfig,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

impl GameConfig {
    pub fn preset(preset: Preset) -> Self {
        let desk = Self {
            preset,
            regime: Regime::new(true, 3),
            max_order: 3,
            validation: 4,
            pi: 0.25,
            seed: 0,
            zoo_size: 5,
            data: DataConfig {
                image_size: 64,
                detector_train: 2048,
                patch_train: 128,
                eval: 200,
            },
            detector: DetectorTrainConfig::default(),
            patch: PatchTrainConfig {
                size: 24,
                epochs: 60,
                decay_every: 20,
                lr: 0.01,
                batch_size: 8,
                resize: (0.3, 0.6),
                weights: LossWeights::default(),
                augment: AugmentConfig::default(),
            },
            eval: EvalConfig {
                p_box: 0.5,
                p_hal: 0.5,
                resize: 0.5,
                settings: EvalSettings::default(),
            },
        };
        match preset {
            Preset::Desk => desk,
            Preset::Full => Self {
                zoo_size: 21,
                data: DataConfig {
                    image_size: 128,
                    detector_train: 8192,
                    patch_train: 1024,
                    eval: 1000,
                },
                detector: DetectorTrainConfig {
                    epochs: 100,
                    ..desk.detector
                },
                patch: PatchTrainConfig {
                    size: 256,
                    epochs: 150,
                    decay_every: 50,
                    ..desk.patch
                },
                ..desk
            },
        }
    }

    /// Range checks; `k` outside `{1, 3}` is accepted as an extension.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Invalid(m));
        if self.max_order == 0 {
            return bad("max_order must be at least 1".into());
        }
        if self.regime.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.validation == 0 {
            return bad("validation_patches must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.pi) {
            return bad(format!("pi = {} outside [0, 1]", self.pi));
        }
        if self.zoo_size == 0 {
            return bad("zoo_size must be at least 1".into());
        }
        let d = &self.data;
        if d.image_size < 32 || !d.image_size.is_multiple_of(8) {
            return bad(format!("image_size {} must be a multiple of 8, at least 32", d.image_size));
        }
        if d.detector_train == 0 || d.patch_train == 0 || d.eval == 0 {
            return bad("dataset sizes must be positive".into());
        }
        self.detector.validate()?;
        let p = &self.patch;
        if p.size < 4 || p.epochs == 0 || p.decay_every == 0 || p.batch_size == 0 || !(p.lr > 0.0) {
            return bad("patch: size ≥ 4, positive epochs, decay_every, batch_size and lr required".into());
        }
        p.weights.validate()?;
        let a = &p.augment;
        if a.brightness < 0.0 || !(0.0 < a.contrast.0 && a.contrast.0 <= a.contrast.1) || a.max_rotation_deg < 0.0 || !(0.0..0.5).contains(&a.perspective) {
            return bad("patch augmentation magnitudes out of range".into());
        }
        p.protocol().validate()?;
        ApplicationProtocol::adv_train(self.pi, self.detector.adv_resize).validate()?;
        self.eval.protocol().validate()?;
        if self.eval.settings.max_det == 0 || !(0.0..=1.0).contains(&self.eval.settings.conf_threshold) {
            return bad("eval: max_det ≥ 1 and conf_threshold in [0, 1] required".into());
        }
        Ok(())
    }

    /// Canonical text form; `parse_config(&c.to_text())` yields `c`.
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let preset = match self.preset {
            Preset::Desk => "desk",
            Preset::Full => "full",
        };
        let _ = writeln!(o, "preset = {preset}");
        let section = |o: &mut String, name: &str, kv: Vec<(&str, String)>| {
            let _ = writeln!(o, "\n[{name}]");
            for (k, v) in kv {
                let _ = writeln!(o, "{k} = {v}");
            }
        };
        let f = |x: f64| format!("{x:?}");
        section(
            &mut o,
            "game",
            vec![
                ("regime", if self.regime.successive { "successive" } else { "non-successive" }.into()),
                ("k", self.regime.k.to_string()),
                ("max_order", self.max_order.to_string()),
                ("validation_patches", self.validation.to_string()),
                ("pi", f(self.pi)),
                ("seed", self.seed.to_string()),
                ("zoo_size", self.zoo_size.to_string()),
            ],
        );
        let d = &self.data;
        section(
            &mut o,
            "data",
            vec![
                ("image_size", d.image_size.to_string()),
                ("detector_train", d.detector_train.to_string()),
                ("patch_train", d.patch_train.to_string()),
                ("eval", d.eval.to_string()),
            ],
        );
        let t = &self.detector;
        section(
            &mut o,
            "detector",
            vec![
                ("epochs", t.epochs.to_string()),
                ("batch_size", t.batch_size.to_string()),
                ("lr", f(t.lr)),
                ("weight_decay", f(t.weight_decay)),
                ("flip", f(t.flip)),
                ("adv_resize_min", f(t.adv_resize.0)),
                ("adv_resize_max", f(t.adv_resize.1)),
            ],
        );
        let p = &self.patch;
        section(
            &mut o,
            "patch",
            vec![
                ("size", p.size.to_string()),
                ("epochs", p.epochs.to_string()),
                ("decay_every", p.decay_every.to_string()),
                ("lr", f(p.lr)),
                ("batch_size", p.batch_size.to_string()),
                ("resize_min", f(p.resize.0)),
                ("resize_max", f(p.resize.1)),
                ("lambda_obj", f(p.weights.obj)),
                ("lambda_smt", f(p.weights.smt)),
                ("lambda_val", f(p.weights.val)),
                ("brightness", f(p.augment.brightness)),
                ("contrast_min", f(p.augment.contrast.0)),
                ("contrast_max", f(p.augment.contrast.1)),
                ("max_rotation_deg", f(p.augment.max_rotation_deg)),
                ("perspective", f(p.augment.perspective)),
            ],
        );
        let e = &self.eval;
        section(
            &mut o,
            "eval",
            vec![
                ("p_box", f(e.p_box)),
                ("p_hal", f(e.p_hal)),
                ("resize", f(e.resize)),
                ("conf_threshold", f(e.settings.conf_threshold)),
                ("max_det", e.settings.max_det.to_string()),
                ("batch_size", e.settings.batch_size.to_string()),
            ],
        );
        o
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_text().as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| CoreError::Config {
        line,
        detail: format!("cannot parse `{raw}` for {key}"),
    })
}

/// Parses config text on top of the `base` preset.
pub fn parse_config(text: &str, base: Preset) -> Result<GameConfig> {
    let mut c = GameConfig::preset(base);
    let mut section: Option<String> = None;
    let mut seen_key = false;
    let mut last_line = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |detail: String| CoreError::Config { line, detail };
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| err(format!("malformed section header `{content}`")))?
                .trim();
            if !["game", "data", "detector", "patch", "eval"].contains(&name) {
                return Err(err(format!("unknown section [{name}]")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, raw_value) = content
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, got `{content}`")))?;
        let (key, v) = (key.trim(), raw_value.trim());
        if v.is_empty() {
            return Err(err(format!("missing value for {key}")));
        }
        let range = |name: &str, ok: bool| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(CoreError::Config {
                    line,
                    detail: format!("{name} = {v} is out of range"),
                })
            }
        };
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        match (section.as_deref(), key) {
            (None, "preset") => {
                if seen_key {
                    return Err(err("preset must come before every other key".into()));
                }
                c = GameConfig::preset(v.parse().map_err(err)?);
            }
            (None, _) => return Err(err(format!("key {key} outside of a section"))),
            (Some("game"), "regime") => {
                c.regime.successive = match v {
                    "successive" => true,
                    "non-successive" => false,
                    _ => return Err(err(format!("regime must be successive or non-successive, got `{v}`"))),
                }
            }
            (Some("game"), "k") => {
                c.regime.k = value(line, key, v)?;
                range("k", c.regime.k >= 1)?;
            }
            (Some("game"), "max_order") => {
                c.max_order = value(line, key, v)?;
                range("max_order", c.max_order >= 1)?;
            }
            (Some("game"), "validation_patches") => {
                c.validation = value(line, key, v)?;
                range("validation_patches", c.validation >= 1)?;
            }
            (Some("game"), "pi") => {
                c.pi = value(line, key, v)?;
                range("pi (π)", unit(c.pi))?;
            }
            (Some("game"), "seed") => c.seed = value(line, key, v)?,
            (Some("game"), "zoo_size") => {
                c.zoo_size = value(line, key, v)?;
                range("zoo_size", c.zoo_size >= 1)?;
            }
            (Some("data"), "image_size") => {
                c.data.image_size = value(line, key, v)?;
                range("image_size", c.data.image_size >= 32 && c.data.image_size.is_multiple_of(8))?;
            }
            (Some("data"), "detector_train") => {
                c.data.detector_train = value(line, key, v)?;
                range(key, c.data.detector_train >= 1)?;
            }
            (Some("data"), "patch_train") => {
                c.data.patch_train = value(line, key, v)?;
                range(key, c.data.patch_train >= 1)?;
            }
            (Some("data"), "eval") => {
                c.data.eval = value(line, key, v)?;
                range(key, c.data.eval >= 1)?;
            }
            (Some("detector"), "epochs") => {
                c.detector.epochs = value(line, key, v)?;
                range(key, c.detector.epochs >= 1)?;
            }
            (Some("detector"), "batch_size") => {
                c.detector.batch_size = value(line, key, v)?;
                range(key, c.detector.batch_size >= 1)?;
            }
            (Some("detector"), "lr") => {
                c.detector.lr = value(line, key, v)?;
                range(key, c.detector.lr > 0.0)?;
            }
            (Some("detector"), "weight_decay") => {
                c.detector.weight_decay = value(line, key, v)?;
                range(key, c.detector.weight_decay >= 0.0)?;
            }
            (Some("detector"), "flip") => {
                c.detector.flip = value(line, key, v)?;
                range(key, unit(c.detector.flip))?;
            }
            (Some("detector"), "adv_resize_min") => {
                c.detector.adv_resize.0 = value(line, key, v)?;
                range(key, c.detector.adv_resize.0 > 0.0 && c.detector.adv_resize.0 <= 1.0)?;
            }
            (Some("detector"), "adv_resize_max") => {
                c.detector.adv_resize.1 = value(line, key, v)?;
                range(key, c.detector.adv_resize.1 > 0.0 && c.detector.adv_resize.1 <= 1.0)?;
            }
            (Some("patch"), "size") => {
                c.patch.size = value(line, key, v)?;
                range(key, c.patch.size >= 4)?;
            }
            (Some("patch"), "epochs") => {
                c.patch.epochs = value(line, key, v)?;
                range(key, c.patch.epochs >= 1)?;
            }
            (Some("patch"), "decay_every") => {
                c.patch.decay_every = value(line, key, v)?;
                range(key, c.patch.decay_every >= 1)?;
            }
            (Some("patch"), "lr") => {
                c.patch.lr = value(line, key, v)?;
                range(key, c.patch.lr > 0.0)?;
            }
            (Some("patch"), "batch_size") => {
                c.patch.batch_size = value(line, key, v)?;
                range(key, c.patch.batch_size >= 1)?;
            }
            (Some("patch"), "resize_min") => {
                c.patch.resize.0 = value(line, key, v)?;
                range(key, c.patch.resize.0 > 0.0 && c.patch.resize.0 <= 1.0)?;
            }
            (Some("patch"), "resize_max") => {
                c.patch.resize.1 = value(line, key, v)?;
                range(key, c.patch.resize.1 > 0.0 && c.patch.resize.1 <= 1.0)?;
            }
            (Some("patch"), "lambda_obj") => {
                c.patch.weights.obj = value(line, key, v)?;
                range("lambda_obj (λ_obj)", c.patch.weights.obj > 0.0)?;
            }
            (Some("patch"), "lambda_smt") => {
                c.patch.weights.smt = value(line, key, v)?;
                range("lambda_smt (λ_smt)", c.patch.weights.smt >= 0.0)?;
            }
            (Some("patch"), "lambda_val") => {
                c.patch.weights.val = value(line, key, v)?;
                range("lambda_val (λ_val)", c.patch.weights.val >= 0.0)?;
            }
            (Some("patch"), "brightness") => {
                c.patch.augment.brightness = value(line, key, v)?;
                range(key, c.patch.augment.brightness >= 0.0)?;
            }
            (Some("patch"), "contrast_min") => {
                c.patch.augment.contrast.0 = value(line, key, v)?;
                range(key, c.patch.augment.contrast.0 > 0.0)?;
            }
            (Some("patch"), "contrast_max") => {
                c.patch.augment.contrast.1 = value(line, key, v)?;
                range(key, c.patch.augment.contrast.1 > 0.0)?;
            }
            (Some("patch"), "max_rotation_deg") => {
                c.patch.augment.max_rotation_deg = value(line, key, v)?;
                range(key, (0.0..=180.0).contains(&c.patch.augment.max_rotation_deg))?;
            }
            (Some("patch"), "perspective") => {
                c.patch.augment.perspective = value(line, key, v)?;
                range(key, (0.0..0.5).contains(&c.patch.augment.perspective))?;
            }
            (Some("eval"), "p_box") => {
                c.eval.p_box = value(line, key, v)?;
                range(key, unit(c.eval.p_box))?;
            }
            (Some("eval"), "p_hal") => {
                c.eval.p_hal = value(line, key, v)?;
                range(key, unit(c.eval.p_hal))?;
            }
            (Some("eval"), "resize") => {
                c.eval.resize = value(line, key, v)?;
                range(key, c.eval.resize > 0.0 && c.eval.resize <= 1.0)?;
            }
            (Some("eval"), "conf_threshold") => {
                c.eval.settings.conf_threshold = value(line, key, v)?;
                range(key, unit(c.eval.settings.conf_threshold))?;
            }
            (Some("eval"), "max_det") => {
                c.eval.settings.max_det = value(line, key, v)?;
                range(key, c.eval.settings.max_det >= 1)?;
            }
            (Some("eval"), "batch_size") => {
                c.eval.settings.batch_size = value(line, key, v)?;
                range(key, c.eval.settings.batch_size >= 1)?;
            }
            (Some(s), _) => return Err(err(format!("unknown key `{key}` in [{s}]"))),
        }
        if key != "preset" {
            seen_key = true;
        }
        last_line = line;
    }
    c.validate().map_err(|e| CoreError::Config {
        line: last_line,
        detail: e.to_string(),
    })?;
    Ok(c)
}

pub fn load_config(path: &Path, base: Preset) -> Result<GameConfig> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_config(&text, base)
}

pub fn save_config(config: &GameConfig, path: &Path) -> Result<()> {
    fs::write(path, config.to_text()).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_desk_default() {
        assert_eq!(parse_config("", Preset::Desk).unwrap(), GameConfig::default());
        assert_eq!(parse_config("# nothing\n\n", Preset::Desk).unwrap(), GameConfig::default());
    }

    #[test]
    fn pi_out_of_range_names_pi() {
        let e = parse_config("[game]\npi = 1.5\n", Preset::Desk).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("line 2") && msg.contains("pi"), "{msg}");
    }

    #[test]
    fn unknown_key_and_malformed_lines() {
        assert!(parse_config("[game]\nbogus = 1\n", Preset::Desk).unwrap_err().to_string().contains("line 2"));
        assert!(parse_config("[nope]\n", Preset::Desk).is_err());
        assert!(parse_config("[game]\njust words\n", Preset::Desk).is_err());
        assert!(parse_config("[game]\nk = three\n", Preset::Desk).is_err());
        assert!(parse_config("[game]\nk = 1\npreset = full\n", Preset::Desk).is_err());
    }

    #[test]
    fn text_roundtrip_and_presets() {
        for p in [Preset::Desk, Preset::Full] {
            let c = GameConfig::preset(p);
            assert_eq!(parse_config(&c.to_text(), Preset::Desk).unwrap(), c);
        }
        let full = parse_config("preset = full\n", Preset::Desk).unwrap();
        assert_eq!(full.patch.size, 256);
        assert_eq!(full.patch.lr_at(0), 0.01);
        assert!((full.patch.lr_at(50) - 0.001).abs() < 1e-15);
        assert!((full.patch.lr_at(100) - 0.0001).abs() < 1e-15);
    }

    #[test]
    fn hash_tracks_content() {
        let a = GameConfig::default();
        let mut b = a.clone();
        b.seed = 1;
        assert_eq!(a.hash(), GameConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
    }
}
