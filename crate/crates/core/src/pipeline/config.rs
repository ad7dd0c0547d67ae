//! Flat `key = value` settings with a fixed, documented key set.

use std::collections::BTreeMap;
use std::path::Path;

use crate::edge::{CannyParams, EdgeMethod};
use crate::error::{Error, Result};
use crate::gan::GanConfig;
use crate::label::ClassWeights;
use crate::rng::mix;
use crate::seg::SegConfig;

use super::toy::ToySpec;

/// `(key, default, description)` for every accepted setting.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "7", "top-level seed; every stochastic stage derives from it"),
    ("toygen.count", "12", "number of toy images"),
    ("toygen.width", "128", "toy image width"),
    ("toygen.height", "64", "toy image height"),
    ("toygen.nuclei_min", "10", "fewest nuclei per toy image"),
    ("toygen.nuclei_max", "16", "most nuclei per toy image"),
    ("toygen.radius_min", "4", "smallest nucleus semi-axis (px)"),
    ("toygen.radius_max", "8", "largest nucleus semi-axis (px)"),
    ("toygen.noise", "12", "per-channel pixel noise amplitude"),
    ("prepare.block", "250", "tile edge length"),
    ("split.test_fraction", "0.05", "fraction of real tiles held out for testing"),
    ("edge.method", "canny", "canny | sobel | prewitt | roberts | log"),
    ("canny.sigma", "1.0", "Gaussian smoothing std-dev (px)"),
    ("canny.high_quantile", "0.9", "high threshold as a quantile of nonzero NMS magnitudes"),
    ("canny.low_ratio", "0.4", "low threshold as a fraction of the high threshold"),
    ("gan.image_size", "64", "generator input/output size (64, 128 or 256)"),
    ("gan.epochs", "200", "passes over the GAN training pairs"),
    ("gan.batch_size", "1", "GAN batch size"),
    ("gan.lambda_l1", "100", "weight of the L1 reconstruction term"),
    ("gan.lr", "0.0002", "Adam learning rate for both networks"),
    ("gan.beta1", "0.5", "Adam beta1 for both networks"),
    ("gan.gen_width", "16", "generator base channel width"),
    ("gan.disc_width", "16", "discriminator base channel width"),
    ("gan.smoothing_window", "50", "moving-average window for the smoothed loss CSV"),
    ("augment.edge_to_roi", "false", "treat structure edges as ROI when deriving synthetic masks"),
    ("seg.architecture", "toy-unet", "architecture name in comparison tables"),
    ("seg.input_size", "64", "segmenter input size"),
    ("seg.epochs", "50", "segmenter training epochs"),
    ("seg.batch_size", "4", "segmenter batch size"),
    ("seg.lr", "0.001", "segmenter Adam learning rate"),
    ("seg.depth", "2", "segmenter pooling levels"),
    ("seg.width", "8", "segmenter base channel width"),
    ("seg.class_weights", "auto", "auto (median frequency over the training masks) or w_background,w_roi"),
    ("seg.origins", "real,g0,g1", "sample origins used for segmenter training"),
    ("eval.bf_tolerance", "auto", "BF distance tolerance in px, or auto (0.75% of the diagonal)"),
];

/// Stage indices mixed into the top-level seed.
pub mod stage {
    pub const TOYGEN: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const GAN: u64 = 3;
    pub const SHAPE: u64 = 4;
    pub const SEG: u64 = 5;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PipelineConfig {
    values: BTreeMap<String, String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| e.context(format!("config {}", path.display())))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown config key {key:?}"))),
        }
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("known key")
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key);
        v.parse()
            .map_err(|_| Error::Config(format!("{key} = {v:?} is not a valid {}", std::any::type_name::<T>())))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.parsed(key)
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parsed(key)
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        self.parsed(key)
    }

    pub fn seed(&self) -> Result<u64> {
        self.parsed("seed")
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.values.insert("seed".into(), seed.to_string());
    }

    pub fn stage_seed(&self, stage: u64) -> Result<u64> {
        Ok(mix(self.seed()?, stage))
    }

    /// Text form of every setting, sorted by key.
    pub fn render(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn toy_spec(&self) -> Result<ToySpec> {
        let spec = ToySpec {
            count: self.usize("toygen.count")?,
            width: self.usize("toygen.width")?,
            height: self.usize("toygen.height")?,
            nuclei: (self.usize("toygen.nuclei_min")?, self.usize("toygen.nuclei_max")?),
            radius: (self.f64("toygen.radius_min")?, self.f64("toygen.radius_max")?),
            noise: self.f64("toygen.noise")?,
            seed: self.stage_seed(stage::TOYGEN)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn canny_params(&self) -> Result<CannyParams> {
        let p = CannyParams {
            sigma: self.f64("canny.sigma")?,
            high_quantile: self.f64("canny.high_quantile")?,
            low_ratio: self.f64("canny.low_ratio")?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn edge_method(&self) -> Result<EdgeMethod> {
        self.get("edge.method").parse()
    }

    pub fn gan_config(&self) -> Result<GanConfig> {
        let cfg = GanConfig {
            lambda_l1: self.f64("gan.lambda_l1")?,
            epochs: self.usize("gan.epochs")?,
            batch_size: self.usize("gan.batch_size")?,
            image_size: self.usize("gan.image_size")?,
            lr: self.f64("gan.lr")?,
            beta1: self.f64("gan.beta1")?,
            seed: self.stage_seed(stage::GAN)?,
            gen_width: self.usize("gan.gen_width")?,
            disc_width: self.usize("gan.disc_width")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Explicit class weights, or `None` for `auto`.
    pub fn seg_class_weights(&self) -> Result<Option<ClassWeights>> {
        let v = self.get("seg.class_weights");
        if v == "auto" {
            return Ok(None);
        }
        let w = v
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("seg.class_weights entry {s:?} is not a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        ClassWeights::new(w).map(Some)
    }

    /// Segmenter settings with the given class weights.
    pub fn seg_config(&self, class_weights: ClassWeights) -> Result<SegConfig> {
        let cfg = SegConfig {
            input_size: self.usize("seg.input_size")?,
            epochs: self.usize("seg.epochs")?,
            batch_size: self.usize("seg.batch_size")?,
            lr: self.f64("seg.lr")?,
            class_weights,
            seed: self.stage_seed(stage::SEG)?,
            depth: self.usize("seg.depth")?,
            width: self.usize("seg.width")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn bf_tolerance(&self) -> Result<Option<f64>> {
        match self.get("eval.bf_tolerance") {
            "auto" => Ok(None),
            _ => {
                let t = self.f64("eval.bf_tolerance")?;
                if !(t >= 0.0) {
                    return Err(Error::Config("eval.bf_tolerance must be >= 0".into()));
                }
                Ok(Some(t))
            }
        }
    }
}
