//! WebAssembly bindings for a single-page demo. A [`Demo`] holds one toy
//! tissue sample and offers three interactive operations on it: edge fusion
//! with adjustable Canny thresholds, a random shape transform of the fused
//! label, and scoring of a threshold segmentation against the mask.
//!
//! Every exported method has a plain Rust counterpart (the `*_native`
//! methods) so the logic is testable off the browser.

use edgesynth::augment::{apply_transform, sample_transform, ShapeTransform};
use edgesynth::codec::{to_grayscale, ImageBuffer};
use edgesynth::edge::{canny, CannyParams};
use edgesynth::eval::{bf_score, confusion, default_bf_tolerance, metrics, overlay};
use edgesynth::label::{encode_classes, fuse, FusedLabel, LabelMask, BACKGROUND, ROI};
use edgesynth::pipeline::toy::{render, ToySpec};
use edgesynth::rng::seeded;
use edgesynth::{Error, Result};
use wasm_bindgen::prelude::*;

/// Expands 1- or 3-channel pixels to opaque RGBA for a canvas `ImageData`.
pub fn to_rgba(image: &ImageBuffer) -> Vec<u8> {
    let c = image.channels();
    image
        .pixels()
        .chunks(c)
        .flat_map(|px| match c {
            1 => [px[0], px[0], px[0], 255],
            _ => [px[0], px[1], px[2], 255],
        })
        .collect()
}

/// Scores of a predicted mask against the ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Scores {
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub bf: f64,
}

#[wasm_bindgen]
pub struct Demo {
    image: ImageBuffer,
    mask: LabelMask,
    fused: FusedLabel,
    edge_count: usize,
    transform: ShapeTransform,
    scores: Scores,
}

impl Demo {
    pub fn new_native(seed: u64, size: usize) -> Result<Demo> {
        let n = (size * size / 1600).clamp(3, 40);
        let spec = ToySpec {
            count: 1,
            width: size,
            height: size,
            nuclei: (n, n + n / 2),
            seed,
            ..ToySpec::default()
        };
        let sample = render(&spec, 0)?;
        let edges = canny(&to_grayscale(&sample.image), &CannyParams::default())?;
        let fused = fuse(&sample.mask, &edges)?;
        Ok(Demo {
            image: sample.image,
            mask: sample.mask,
            fused,
            edge_count: edges.count(),
            transform: ShapeTransform::identity(),
            scores: Scores::default(),
        })
    }

    pub fn image(&self) -> &ImageBuffer {
        &self.image
    }

    pub fn mask(&self) -> &LabelMask {
        &self.mask
    }

    pub fn fused(&self) -> &FusedLabel {
        &self.fused
    }

    pub fn scores(&self) -> Scores {
        self.scores
    }

    pub fn fuse_native(&mut self, params: CannyParams) -> Result<&FusedLabel> {
        let edges = canny(&to_grayscale(&self.image), &params)?;
        self.edge_count = edges.count();
        self.fused = fuse(&self.mask, &edges)?;
        Ok(&self.fused)
    }

    pub fn shape_transform_native(&mut self, seed: u64) -> Result<FusedLabel> {
        let block = self.fused.width();
        self.transform = sample_transform(&mut seeded(seed), block);
        apply_transform(&self.fused, &self.transform, block)
    }

    /// Pixels darker than `threshold` (grayscale) are predicted as ROI.
    pub fn threshold_mask(&self, threshold: u8) -> Result<LabelMask> {
        let gray = to_grayscale(&self.image);
        let px = gray
            .pixels()
            .iter()
            .map(|&v| if v < threshold { ROI } else { BACKGROUND })
            .collect();
        LabelMask::new(ImageBuffer::gray(gray.width(), gray.height(), px)?)
    }

    pub fn score_native(&mut self, threshold: u8) -> Result<ImageBuffer> {
        let pred = self.threshold_mask(threshold)?;
        let (g, p) = (encode_classes(&self.mask)?, encode_classes(&pred)?);
        let m = metrics(&confusion(&g, &p, 2)?);
        let theta = default_bf_tolerance(g.width, g.height);
        self.scores = Scores {
            iou: m.iou[1],
            precision: m.precision[1],
            recall: m.recall[1],
            f1: m.f1[1],
            bf: bf_score(&g, &p, 1, theta)?,
        };
        overlay(&self.mask, &pred)
    }
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
impl Demo {
    /// A `size`×`size` toy sample for `seed`, fused with default Canny settings.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, size: u32) -> std::result::Result<Demo, JsError> {
        Demo::new_native(seed as u64, size as usize).map_err(js)
    }

    pub fn size(&self) -> u32 {
        self.image.width() as u32
    }

    pub fn image_rgba(&self) -> Vec<u8> {
        to_rgba(&self.image)
    }

    pub fn mask_rgba(&self) -> Vec<u8> {
        to_rgba(self.mask.image())
    }

    /// Re-runs Canny and fusion; returns the fused label as RGBA.
    pub fn fuse(&mut self, sigma: f64, high_quantile: f64, low_ratio: f64) -> std::result::Result<Vec<u8>, JsError> {
        let params = CannyParams {
            sigma,
            high_quantile,
            low_ratio,
        };
        self.fuse_native(params).map(|f| to_rgba(f.image())).map_err(js)
    }

    pub fn edge_count(&self) -> u32 {
        self.edge_count as u32
    }

    /// Rotation, reflection, upscale and crop drawn from `seed`, applied to
    /// the current fused label.
    pub fn shape_transform(&mut self, seed: u32) -> std::result::Result<Vec<u8>, JsError> {
        self.shape_transform_native(seed as u64)
            .map(|f| to_rgba(f.image()))
            .map_err(js)
    }

    pub fn transform_summary(&self) -> String {
        let t = &self.transform;
        format!(
            "rotate {}°, {}, upscale {:.3}, crop at row {} col {}",
            t.rotation.degrees(),
            if t.reflect_x { "rows mirrored" } else { "no mirror" },
            t.upscale,
            t.crop_origin.0,
            t.crop_origin.1
        )
    }

    /// Overlay of a darkness-threshold prediction against the mask.
    pub fn score(&mut self, threshold: u8) -> std::result::Result<Vec<u8>, JsError> {
        self.score_native(threshold).map(|o| to_rgba(&o)).map_err(js)
    }

    pub fn scores_summary(&self) -> String {
        let s = self.scores;
        format!(
            "IoU {:.3}  precision {:.3}  recall {:.3}  F1 {:.3}  BF {:.3}",
            s.iou, s.precision, s.recall, s.f1, s.bf
        )
    }
}
