//! Procedural stand-in for stained tissue tiles: a noisy pink background with
//! dark elliptical nuclei and the matching ROI mask.

use rand::Rng as _;

use crate::codec::ImageBuffer;
use crate::error::{Error, Result};
use crate::label::LabelMask;
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct ToySpec {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    /// Inclusive range of nuclei per image.
    pub nuclei: (usize, usize),
    /// Inclusive range of ellipse semi-axes in pixels.
    pub radius: (f64, f64),
    /// Per-channel uniform noise amplitude.
    pub noise: f64,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            count: 12,
            width: 128,
            height: 64,
            nuclei: (10, 16),
            radius: (4.0, 8.0),
            noise: 12.0,
            seed: 7,
        }
    }
}

impl ToySpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::Config("toygen count and extents must be positive".into()));
        }
        if self.nuclei.0 > self.nuclei.1 || !(0.5 <= self.radius.0 && self.radius.0 <= self.radius.1) {
            return Err(Error::Config(format!(
                "toygen ranges must be ordered with radius >= 0.5, got nuclei {:?} radius {:?}",
                self.nuclei, self.radius
            )));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config("toygen noise must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
    pub angle: f64,
}

impl Ellipse {
    /// Whether the pixel centre `(x + ½, y + ½)` lies inside.
    pub fn contains(&self, x: usize, y: usize) -> bool {
        let (dx, dy) = (x as f64 + 0.5 - self.cx, y as f64 + 0.5 - self.cy);
        let (s, c) = self.angle.sin_cos();
        let u = (dx * c + dy * s) / self.rx;
        let v = (-dx * s + dy * c) / self.ry;
        u * u + v * v <= 1.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToySample {
    pub id: String,
    pub image: ImageBuffer,
    pub mask: LabelMask,
    pub nuclei: Vec<Ellipse>,
}

const BACKGROUND_RGB: [f64; 3] = [232.0, 178.0, 208.0];
const NUCLEUS_RGB: [f64; 3] = [92.0, 48.0, 138.0];

pub fn toy_id(index: usize) -> String {
    format!("toy{index:03}")
}

/// Sample `index` of the set described by `spec`; independent of the others.
pub fn render(spec: &ToySpec, index: usize) -> Result<ToySample> {
    spec.validate()?;
    let mut r = rng::stream(spec.seed, index as u64);
    let (w, h) = (spec.width, spec.height);
    let n = r.random_range(spec.nuclei.0..=spec.nuclei.1);
    let nuclei: Vec<Ellipse> = (0..n)
        .map(|_| Ellipse {
            cx: r.random_range(0.0..w as f64),
            cy: r.random_range(0.0..h as f64),
            rx: r.random_range(spec.radius.0..=spec.radius.1),
            ry: r.random_range(spec.radius.0..=spec.radius.1),
            angle: r.random_range(0.0..std::f64::consts::PI),
        })
        .collect();
    // slow stain variation across the tile
    let (fx, fy, phase) = (
        r.random_range(0.02..0.08),
        r.random_range(0.02..0.08),
        r.random_range(0.0..std::f64::consts::TAU),
    );
    let mut px = Vec::with_capacity(w * h * 3);
    let mut mask = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let inside = nuclei.iter().any(|e| e.contains(x, y));
            let base = if inside { NUCLEUS_RGB } else { BACKGROUND_RGB };
            let shade = 10.0 * (fx * x as f64 + fy * y as f64 + phase).sin();
            for b in base {
                let noise = if spec.noise > 0.0 { r.random_range(-spec.noise..=spec.noise) } else { 0.0 };
                px.push((b + shade + noise).round().clamp(0.0, 255.0) as u8);
            }
            mask.push(if inside { 255 } else { 0 });
        }
    }
    Ok(ToySample {
        id: toy_id(index),
        image: ImageBuffer::rgb(w, h, px)?,
        mask: LabelMask::new(ImageBuffer::gray(w, h, mask)?)?,
        nuclei,
    })
}

pub fn generate(spec: &ToySpec) -> Result<Vec<ToySample>> {
    (0..spec.count).map(|i| render(spec, i)).collect()
}
