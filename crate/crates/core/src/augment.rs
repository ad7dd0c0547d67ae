//! Replica (G0) and shape (G1) augmentation of fused labels.
//!
//! Images are never warped here: G1 transforms the label and the generator
//! paints a new image for it.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::codec::{resize, ImageBuffer, ResizeMethod};
use crate::error::{Error, Result};
use crate::label::{FusedLabel, LabelMask, FUSED_EDGE, FUSED_ROI, ROI};
use crate::rng::{self, Rng};

/// Where a training sample came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Real,
    G0,
    G1,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Real => "real",
            Origin::G0 => "g0",
            Origin::G1 => "g1",
        }
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Origin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(Origin::Real),
            "g0" => Ok(Origin::G0),
            "g1" => Ok(Origin::G1),
            other => Err(Error::Config(format!("unknown origin {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270];

    pub fn degrees(self) -> u16 {
        match self {
            Rotation::R0 => 0,
            Rotation::R90 => 90,
            Rotation::R180 => 180,
            Rotation::R270 => 270,
        }
    }

    fn quarter_turns(self) -> usize {
        self.degrees() as usize / 90
    }
}

pub const MIN_UPSCALE: f64 = 1.0;
pub const MAX_UPSCALE: f64 = 1.25;

/// Rotation (clockwise) → reflection → nearest upscale → crop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeTransform {
    pub rotation: Rotation,
    /// Mirror across the horizontal axis (rows reversed).
    pub reflect_x: bool,
    pub upscale: f64,
    /// `(row, col)` of the crop window in the upscaled label.
    pub crop_origin: (usize, usize),
}

impl ShapeTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation::R0,
            reflect_x: false,
            upscale: 1.0,
            crop_origin: (0, 0),
        }
    }
}

/// Side length after upscaling by `factor`.
pub fn upscaled_extent(side: usize, factor: f64) -> usize {
    (side as f64 * factor).floor() as usize
}

pub fn replica_g0(fused_labels: &[FusedLabel]) -> Result<Vec<FusedLabel>> {
    if fused_labels.is_empty() {
        return Err(Error::EmptyDataset("no labels to replicate".into()));
    }
    Ok(fused_labels.to_vec())
}

pub fn sample_transform(rng: &mut Rng, block: usize) -> ShapeTransform {
    let rotation = Rotation::ALL[rng.random_range(0..4)];
    let reflect_x = rng.random_bool(0.5);
    let upscale = rng.random_range(MIN_UPSCALE..=MAX_UPSCALE);
    let slack = upscaled_extent(block, upscale) - block;
    let row = rng.random_range(0..=slack);
    let col = rng.random_range(0..=slack);
    ShapeTransform {
        rotation,
        reflect_x,
        upscale,
        crop_origin: (row, col),
    }
}

fn rotate_cw(image: &ImageBuffer) -> ImageBuffer {
    let (w, h, c) = (image.width(), image.height(), image.channels());
    let mut out = ImageBuffer::filled(h, w, c, 0).expect("positive extents");
    for y in 0..w {
        for x in 0..h {
            out.pixel_mut(x, y).copy_from_slice(image.pixel(y, h - 1 - x));
        }
    }
    out
}

pub fn rotate(image: &ImageBuffer, rotation: Rotation) -> ImageBuffer {
    let mut out = image.clone();
    for _ in 0..rotation.quarter_turns() {
        out = rotate_cw(&out);
    }
    out
}

/// Reverses row order.
pub fn reflect_rows(image: &ImageBuffer) -> ImageBuffer {
    let row = image.width() * image.channels();
    let px: Vec<u8> = image.pixels().chunks(row).rev().flatten().copied().collect();
    ImageBuffer::new(image.width(), image.height(), image.channels(), px).expect("same extents")
}

/// Reverses column order.
pub fn reflect_cols(image: &ImageBuffer) -> ImageBuffer {
    let c = image.channels();
    let px: Vec<u8> = image
        .pixels()
        .chunks(image.width() * c)
        .flat_map(|row| row.chunks(c).rev().flatten().copied().collect::<Vec<_>>())
        .collect();
    ImageBuffer::new(image.width(), image.height(), c, px).expect("same extents")
}

pub fn apply_transform(label: &FusedLabel, t: &ShapeTransform, block: usize) -> Result<FusedLabel> {
    if !(MIN_UPSCALE..=MAX_UPSCALE).contains(&t.upscale) {
        return Err(Error::Config(format!("upscale {} outside [1, 1.25]", t.upscale)));
    }
    let mut img = rotate(label.image(), t.rotation);
    if t.reflect_x {
        img = reflect_rows(&img);
    }
    let (w, h) = (upscaled_extent(img.width(), t.upscale), upscaled_extent(img.height(), t.upscale));
    if (w, h) != (img.width(), img.height()) {
        img = resize(&img, w, h, ResizeMethod::Nearest)?;
    }
    let (row, col) = t.crop_origin;
    if row + block > h || col + block > w {
        return Err(Error::Shape(format!(
            "crop {block}x{block} at ({row},{col}) exceeds {w}x{h} upscaled label"
        )));
    }
    Ok(FusedLabel::from_trusted(img.crop(col, row, block, block)?))
}

/// Label stream for G1: one transform per label from stream `i` of `seed`.
pub fn shape_g1(fused_labels: &[FusedLabel], block: usize, seed: u64) -> Result<Vec<FusedLabel>> {
    if fused_labels.is_empty() {
        return Err(Error::EmptyDataset("no labels to transform".into()));
    }
    fused_labels
        .iter()
        .enumerate()
        .map(|(i, label)| {
            let t = sample_transform(&mut rng::stream(seed, i as u64), block);
            apply_transform(label, &t, block)
        })
        .collect()
}

/// ROI becomes foreground; edges join the ROI only when `edge_to_roi` is set.
pub fn derive_mask(fused: &FusedLabel, edge_to_roi: bool) -> LabelMask {
    let px = fused
        .pixels()
        .iter()
        .map(|&v| match v {
            FUSED_ROI => ROI,
            FUSED_EDGE if edge_to_roi => ROI,
            _ => 0,
        })
        .collect();
    LabelMask::new(ImageBuffer::gray(fused.width(), fused.height(), px).expect("same extents"))
        .expect("values are 0 or 255")
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedPair {
    pub label: FusedLabel,
    pub image: ImageBuffer,
    pub mask: LabelMask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedSet {
    pub origin: Origin,
    pub pairs: Vec<AugmentedPair>,
}

impl AugmentedSet {
    pub fn new(origin: Origin, labels: Vec<FusedLabel>, images: Vec<ImageBuffer>, edge_to_roi: bool) -> Result<Self> {
        if origin == Origin::Real {
            return Err(Error::Config("augmented sets are synthetic".into()));
        }
        if labels.len() != images.len() {
            return Err(Error::Shape(format!("{} labels but {} images", labels.len(), images.len())));
        }
        let pairs = labels
            .into_iter()
            .zip(images)
            .map(|(label, image)| {
                if (label.width(), label.height()) != (image.width(), image.height()) {
                    return Err(Error::Shape("synthetic image extents differ from its label".into()));
                }
                let mask = derive_mask(&label, edge_to_roi);
                Ok(AugmentedPair { label, image, mask })
            })
            .collect::<Result<_>>()?;
        Ok(Self { origin, pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}
