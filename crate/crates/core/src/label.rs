//! Two-class nuclei masks, three-class edge-fused labels and class weighting.

use crate::codec::ImageBuffer;
use crate::edge::EdgeMap;
use crate::error::{Error, Result};

pub const BACKGROUND: u8 = 0;
pub const ROI: u8 = 255;
pub const FUSED_ROI: u8 = 128;
pub const FUSED_EDGE: u8 = 255;

fn check_values(image: &ImageBuffer, allowed: &[u8], what: &str) -> Result<()> {
    if image.channels() != 1 {
        return Err(Error::Shape(format!("{what} must be single-channel, got {}", image.channels())));
    }
    match image.pixels().iter().find(|v| !allowed.contains(v)) {
        Some(v) => Err(Error::LabelRange(format!("{what} value {v}, expected one of {allowed:?}"))),
        None => Ok(()),
    }
}

/// Background (0) / nuclei ROI (255) mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMask(ImageBuffer);

impl LabelMask {
    pub fn new(image: ImageBuffer) -> Result<Self> {
        check_values(&image, &[BACKGROUND, ROI], "label mask")?;
        Ok(Self(image))
    }

    /// Thresholds an arbitrary gray map at 128 (`>= 128` is ROI).
    pub fn binarize(image: &ImageBuffer) -> Result<Self> {
        let gray = crate::codec::to_grayscale(image);
        let px = gray.pixels().iter().map(|&v| if v >= 128 { ROI } else { BACKGROUND }).collect();
        Ok(Self(ImageBuffer::gray(gray.width(), gray.height(), px)?))
    }

    pub fn image(&self) -> &ImageBuffer {
        &self.0
    }

    pub fn into_image(self) -> ImageBuffer {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn pixels(&self) -> &[u8] {
        self.0.pixels()
    }
}

/// Background (0) / ROI (128) / structure edge (255) label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FusedLabel(ImageBuffer);

impl FusedLabel {
    pub fn new(image: ImageBuffer) -> Result<Self> {
        check_values(&image, &[BACKGROUND, FUSED_ROI, FUSED_EDGE], "fused label")?;
        Ok(Self(image))
    }

    pub(crate) fn from_trusted(image: ImageBuffer) -> Self {
        debug_assert!(check_values(&image, &[0, 128, 255], "fused label").is_ok());
        Self(image)
    }

    pub fn image(&self) -> &ImageBuffer {
        &self.0
    }

    pub fn into_image(self) -> ImageBuffer {
        self.0
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn pixels(&self) -> &[u8] {
        self.0.pixels()
    }
}

/// Edge pixels win; otherwise ROI maps to 128 and background stays 0.
pub fn fuse(mask: &LabelMask, edges: &EdgeMap) -> Result<FusedLabel> {
    if mask.width() != edges.width() || mask.height() != edges.height() {
        return Err(Error::Shape(format!(
            "mask is {}x{} but edge map is {}x{}",
            mask.width(),
            mask.height(),
            edges.width(),
            edges.height()
        )));
    }
    let px = mask
        .pixels()
        .iter()
        .zip(edges.image().pixels())
        .map(|(&m, &e)| match (m, e) {
            (_, 255) => FUSED_EDGE,
            (ROI, _) => FUSED_ROI,
            _ => BACKGROUND,
        })
        .collect();
    Ok(FusedLabel(ImageBuffer::gray(mask.width(), mask.height(), px)?))
}

/// Median-frequency weights indexed by class id.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Config("class weights cannot be empty".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::Config(format!("class weights must be positive and finite, got {w}")));
        }
        Ok(Self(weights))
    }

    pub fn uniform(classes: usize) -> Self {
        Self(vec![1.0; classes.max(1)])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `median(counts) / count_k`; an even-length median is the mean of the two
/// middle counts.
pub fn class_weights(pixel_counts: &[u64]) -> Result<ClassWeights> {
    if pixel_counts.is_empty() {
        return Err(Error::Config("no classes to weight".into()));
    }
    if let Some(k) = pixel_counts.iter().position(|&c| c == 0) {
        return Err(Error::ZeroClass(k));
    }
    let mut sorted: Vec<f64> = pixel_counts.iter().map(|&c| c as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    ClassWeights::new(pixel_counts.iter().map(|&c| median / c as f64).collect())
}

/// Dense integer class ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassMap {
    pub width: usize,
    pub height: usize,
    pub classes: Vec<usize>,
}

impl ClassMap {
    pub fn new(width: usize, height: usize, classes: Vec<usize>) -> Result<Self> {
        if classes.len() != width * height {
            return Err(Error::Shape(format!(
                "class map {}x{} needs {} entries, got {}",
                width,
                height,
                width * height,
                classes.len()
            )));
        }
        Ok(Self { width, height, classes })
    }
}

/// Label encodings that map to class ids.
pub trait ClassEncoding: Sized {
    const LEVELS: &'static [u8];
    fn image(&self) -> &ImageBuffer;
    fn from_image(image: ImageBuffer) -> Result<Self>;

    fn num_classes() -> usize {
        Self::LEVELS.len()
    }
}

impl ClassEncoding for LabelMask {
    const LEVELS: &'static [u8] = &[BACKGROUND, ROI];

    fn image(&self) -> &ImageBuffer {
        &self.0
    }

    fn from_image(image: ImageBuffer) -> Result<Self> {
        Self::new(image)
    }
}

impl ClassEncoding for FusedLabel {
    const LEVELS: &'static [u8] = &[BACKGROUND, FUSED_ROI, FUSED_EDGE];

    fn image(&self) -> &ImageBuffer {
        &self.0
    }

    fn from_image(image: ImageBuffer) -> Result<Self> {
        Self::new(image)
    }
}

pub fn encode_classes<L: ClassEncoding>(label: &L) -> Result<ClassMap> {
    let img = label.image();
    let classes = img
        .pixels()
        .iter()
        .map(|v| {
            L::LEVELS
                .iter()
                .position(|l| l == v)
                .ok_or_else(|| Error::LabelRange(format!("pixel value {v} has no class")))
        })
        .collect::<Result<Vec<_>>>()?;
    ClassMap::new(img.width(), img.height(), classes)
}

pub fn decode_classes<L: ClassEncoding>(map: &ClassMap) -> Result<L> {
    let px = map
        .classes
        .iter()
        .map(|&c| {
            L::LEVELS
                .get(c)
                .copied()
                .ok_or_else(|| Error::LabelRange(format!("class id {c} out of range")))
        })
        .collect::<Result<Vec<_>>>()?;
    L::from_image(ImageBuffer::gray(map.width, map.height, px)?)
}

/// Exact per-class pixel counts over a list of maps.
pub fn count_pixels(maps: &[ClassMap], num_classes: usize) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; num_classes];
    for map in maps {
        for &c in &map.classes {
            *counts
                .get_mut(c)
                .ok_or_else(|| Error::LabelRange(format!("class id {c} >= {num_classes}")))? += 1;
        }
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(w: usize, h: usize, px: Vec<u8>) -> LabelMask {
        LabelMask::new(ImageBuffer::gray(w, h, px).unwrap()).unwrap()
    }

    fn edges(w: usize, h: usize, px: Vec<u8>) -> EdgeMap {
        EdgeMap::from_image(ImageBuffer::gray(w, h, px).unwrap()).unwrap()
    }

    #[test]
    fn fusion_truth_table() {
        let m = mask(4, 1, vec![255, 0, 255, 0]);
        let e = edges(4, 1, vec![0, 0, 255, 255]);
        assert_eq!(fuse(&m, &e).unwrap().pixels(), &[128, 0, 255, 255]);
    }

    #[test]
    fn fusion_rejects_extent_mismatch() {
        let m = mask(2, 1, vec![0, 0]);
        assert!(matches!(fuse(&m, &EdgeMap::empty(1, 2)), Err(Error::Shape(_))));
    }

    #[test]
    fn weights_from_reported_counts() {
        let w = class_weights(&[45_564_000, 15_892_000]).unwrap();
        assert!((w.as_slice()[0] - 0.674).abs() < 1e-3);
        assert!((w.as_slice()[1] - 1.933).abs() < 1e-3);
    }

    #[test]
    fn weights_small_cases() {
        assert_eq!(class_weights(&[7, 7, 7]).unwrap().as_slice(), &[1.0, 1.0, 1.0]);
        assert_eq!(class_weights(&[10, 20, 40]).unwrap().as_slice(), &[2.0, 1.0, 0.5]);
        assert!(matches!(class_weights(&[3, 0]), Err(Error::ZeroClass(1))));
    }

    #[test]
    fn encoding_tables() {
        let f = FusedLabel::new(ImageBuffer::gray(3, 1, vec![0, 128, 255]).unwrap()).unwrap();
        assert_eq!(encode_classes(&f).unwrap().classes, vec![0, 1, 2]);
        let m = mask(2, 1, vec![255, 0]);
        assert_eq!(encode_classes(&m).unwrap().classes, vec![1, 0]);
        assert!(matches!(
            FusedLabel::new(ImageBuffer::gray(1, 1, vec![7]).unwrap()),
            Err(Error::LabelRange(_))
        ));
        let bad = ClassMap::new(1, 1, vec![3]).unwrap();
        assert!(matches!(decode_classes::<FusedLabel>(&bad), Err(Error::LabelRange(_))));
    }

    #[test]
    fn counting() {
        let m = ClassMap::new(2, 2, vec![0, 0, 1, 1]).unwrap();
        assert_eq!(count_pixels(&[m], 2).unwrap(), vec![2, 2]);
        assert_eq!(count_pixels(&[], 3).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn binarize_thresholds_at_midpoint() {
        let img = ImageBuffer::gray(4, 1, vec![0, 127, 128, 250]).unwrap();
        assert_eq!(LabelMask::binarize(&img).unwrap().pixels(), &[0, 0, 255, 255]);
    }

    proptest! {
        #[test]
        fn fused_values_closed_and_roi_subset(
            m in proptest::collection::vec(prop::bool::ANY, 36),
            e in proptest::collection::vec(prop::bool::ANY, 36),
        ) {
            let mk = mask(6, 6, m.iter().map(|&b| if b { 255 } else { 0 }).collect());
            let ed = edges(6, 6, e.iter().map(|&b| if b { 255 } else { 0 }).collect());
            let f = fuse(&mk, &ed).unwrap();
            for (i, &v) in f.pixels().iter().enumerate() {
                prop_assert!([0u8, 128, 255].contains(&v));
                if v == 128 {
                    prop_assert_eq!(mk.pixels()[i], 255);
                }
            }
        }

        #[test]
        fn fused_round_trip(classes in proptest::collection::vec(0usize..3, 1..64)) {
            let n = classes.len();
            let map = ClassMap::new(n, 1, classes).unwrap();
            let f: FusedLabel = decode_classes(&map).unwrap();
            prop_assert_eq!(encode_classes(&f).unwrap(), map);
        }

        #[test]
        fn weights_are_scale_invariant(
            counts in proptest::collection::vec(1u64..1_000_000, 1..6),
            k in 1u64..1000,
        ) {
            let a = class_weights(&counts).unwrap();
            let scaled: Vec<u64> = counts.iter().map(|c| c * k).collect();
            let b = class_weights(&scaled).unwrap();
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
            if counts.len() % 2 == 1 {
                let mut s = counts.clone();
                s.sort();
                let med = s[s.len() / 2];
                let idx = counts.iter().position(|&c| c == med).unwrap();
                prop_assert!((a.as_slice()[idx] - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn counts_conserve_pixels(classes in proptest::collection::vec(0usize..2, 1..100)) {
            let n = classes.len();
            let map = ClassMap::new(n, 1, classes).unwrap();
            let c = count_pixels(&[map.clone(), map], 2).unwrap();
            prop_assert_eq!(c.iter().sum::<u64>(), 2 * n as u64);
        }
    }
}
