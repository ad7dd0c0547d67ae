//! Canny edge detection and the simpler operators it is compared against.
//!
//! Every stage uses reflect-101 borders (`dcb|abcd|cba`), so a uniform image
//! produces no gradient at the frame and therefore no edges.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::str::FromStr;

use crate::codec::ImageBuffer;
use crate::error::{Error, Result};

/// Single-channel float raster, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl FloatMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "float map size mismatch");
        Self { width, height, data }
    }

    pub fn from_gray(image: &ImageBuffer) -> Result<Self> {
        if image.channels() != 1 {
            return Err(Error::Shape(format!(
                "edge detection needs a 1-channel image, got {} channels",
                image.channels()
            )));
        }
        Ok(Self::new(
            image.width(),
            image.height(),
            image.pixels().iter().map(|&p| p as f64).collect(),
        ))
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Value at a possibly out-of-range coordinate, reflected (101) inward.
    #[inline]
    fn reflected(&self, x: isize, y: isize) -> f64 {
        self.at(reflect101(x, self.width), reflect101(y, self.height))
    }
}

pub(crate) fn reflect101(mut i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let last = n as isize - 1;
    while i < 0 || i > last {
        if i < 0 {
            i = -i;
        }
        if i > last {
            i = 2 * last - i;
        }
    }
    i as usize
}

/// Binary edge raster with values 0 or 255.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeMap(ImageBuffer);

impl EdgeMap {
    pub fn empty(width: usize, height: usize) -> Self {
        Self(ImageBuffer::filled(width, height, 1, 0).expect("positive extents"))
    }

    pub fn from_image(image: ImageBuffer) -> Result<Self> {
        if image.channels() != 1 {
            return Err(Error::Shape("edge maps are single-channel".into()));
        }
        if let Some(v) = image.pixels().iter().find(|&&v| v != 0 && v != 255) {
            return Err(Error::LabelRange(format!("edge map value {v}, expected 0 or 255")));
        }
        Ok(Self(image))
    }

    fn from_flags(width: usize, height: usize, flags: &[bool]) -> Self {
        let pixels = flags.iter().map(|&f| if f { 255 } else { 0 }).collect();
        Self(ImageBuffer::gray(width, height, pixels).expect("consistent extents"))
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

    pub fn is_edge(&self, x: usize, y: usize) -> bool {
        self.0.pixels()[y * self.0.width() + x] == 255
    }

    pub fn count(&self) -> usize {
        self.0.pixels().iter().filter(|&&v| v == 255).count()
    }

    /// `(x, y)` of every edge pixel in row-major order.
    pub fn points(&self) -> Vec<(usize, usize)> {
        let w = self.0.width();
        self.0
            .pixels()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 255)
            .map(|(i, _)| (i % w, i / w))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CannyParams {
    pub sigma: f64,
    /// Quantile of the nonzero suppressed magnitudes used as the high threshold.
    pub high_quantile: f64,
    /// Low threshold as a fraction of the high one.
    pub low_ratio: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            high_quantile: 0.90,
            low_ratio: 0.4,
        }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::Config(format!("canny.sigma must be positive, got {}", self.sigma)));
        }
        if !(self.high_quantile > 0.0 && self.high_quantile < 1.0) {
            return Err(Error::Config(format!(
                "canny.high_quantile must be in (0,1), got {}",
                self.high_quantile
            )));
        }
        if !(self.low_ratio > 0.0 && self.low_ratio < 1.0) {
            return Err(Error::Config(format!(
                "canny.low_ratio must be in (0,1), got {}",
                self.low_ratio
            )));
        }
        Ok(())
    }
}

/// Normalized 1-D Gaussian taps over `[-r, r]`, `r = ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

pub fn gaussian_blur(gray: &ImageBuffer, sigma: f64) -> Result<FloatMap> {
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("blur sigma must be positive, got {sigma}")));
    }
    Ok(blur_map(&FloatMap::from_gray(gray)?, sigma))
}

fn blur_map(src: &FloatMap, sigma: f64) -> FloatMap {
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let (w, h) = (src.width, src.height);
    let mut horiz = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            horiz[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * src.reflected(x as isize + i as isize - r, y as isize))
                .sum();
        }
    }
    let horiz = FloatMap::new(w, h, horiz);
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(i, k)| k * horiz.reflected(x as isize, y as isize + i as isize - r))
                .sum();
        }
    }
    FloatMap::new(w, h, out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientOperator {
    Sobel,
    Prewitt,
    Roberts,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub magnitude: Vec<f64>,
    /// Radians in (−π, π].
    pub direction: Vec<f64>,
}

pub fn gradient(map: &FloatMap, operator: GradientOperator) -> GradientField {
    let (w, h) = (map.width, map.height);
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let p = |dx: isize, dy: isize| map.reflected(x as isize + dx, y as isize + dy);
            let (a, b) = match operator {
                GradientOperator::Sobel => (
                    (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1)),
                    (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1)),
                ),
                GradientOperator::Prewitt => (
                    (p(1, -1) + p(1, 0) + p(1, 1)) - (p(-1, -1) + p(-1, 0) + p(-1, 1)),
                    (p(-1, 1) + p(0, 1) + p(1, 1)) - (p(-1, -1) + p(0, -1) + p(1, -1)),
                ),
                GradientOperator::Roberts => (p(0, 0) - p(1, 1), p(1, 0) - p(0, 1)),
            };
            gx[y * w + x] = a;
            gy[y * w + x] = b;
        }
    }
    let magnitude = gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).collect();
    let direction = gx
        .iter()
        .zip(&gy)
        .map(|(&a, &b)| {
            let d = b.atan2(a);
            if d <= -PI {
                PI
            } else {
                d
            }
        })
        .collect();
    GradientField {
        width: w,
        height: h,
        gx,
        gy,
        magnitude,
        direction,
    }
}

/// Neighbor offsets across the ridge for a gradient direction quantized to
/// 0°, 45°, 90° or 135° (image rows grow downward).
fn nms_offsets(direction: f64) -> (isize, isize) {
    let mut deg = direction.to_degrees() % 180.0;
    if deg < 0.0 {
        deg += 180.0;
    }
    if !(22.5..157.5).contains(&deg) {
        (1, 0)
    } else if deg < 67.5 {
        (1, 1)
    } else if deg < 112.5 {
        (0, 1)
    } else {
        (-1, 1)
    }
}

/// Thins gradient ridges. A pixel survives when its magnitude is at least
/// that of the neighbor behind it and strictly greater than the one ahead of
/// it along the quantized direction; the asymmetric tie-break keeps exactly
/// one pixel of a two-pixel plateau.
pub fn non_max_suppression(field: &GradientField) -> FloatMap {
    let (w, h) = (field.width, field.height);
    let mag = |x: isize, y: isize| {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            field.magnitude[y as usize * w + x as usize]
        }
    };
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = field.magnitude[i];
            if m == 0.0 {
                continue;
            }
            let (dx, dy) = nms_offsets(field.direction[i]);
            let (xi, yi) = (x as isize, y as isize);
            let behind = mag(xi - dx, yi - dy);
            let ahead = mag(xi + dx, yi + dy);
            if m >= behind && m > ahead {
                out[i] = m;
            }
        }
    }
    FloatMap::new(w, h, out)
}

/// Double thresholding with 8-connected edge tracking. Pixels `>= high` seed
/// the edge set; nonzero pixels `>= low` join when transitively connected.
pub fn hysteresis(nms: &FloatMap, high: f64, low: f64) -> Result<EdgeMap> {
    if !(0.0 <= low && low < high) {
        return Err(Error::Config(format!("hysteresis needs 0 <= low < high, got {low}, {high}")));
    }
    let (w, h) = (nms.width, nms.height);
    let weak = |v: f64| v > 0.0 && v >= low;
    let mut keep = vec![false; w * h];
    let mut queue = VecDeque::new();
    for (i, &v) in nms.data.iter().enumerate() {
        if v >= high {
            keep[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !keep[j] && weak(nms.data[j]) {
                    keep[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    Ok(EdgeMap::from_flags(w, h, &keep))
}

/// Nearest-rank quantile of the strictly positive values; `None` if there are none.
pub fn positive_quantile(values: &[f64], q: f64) -> Option<f64> {
    let mut pos: Vec<f64> = values.iter().copied().filter(|&v| v > 0.0).collect();
    if pos.is_empty() {
        return None;
    }
    pos.sort_by(f64::total_cmp);
    let rank = ((q * pos.len() as f64).ceil() as usize).clamp(1, pos.len());
    Some(pos[rank - 1])
}

/// Thresholds derived from the NMS map: `(high, low)`.
pub fn canny_thresholds(nms: &FloatMap, params: &CannyParams) -> Option<(f64, f64)> {
    positive_quantile(&nms.data, params.high_quantile).map(|high| (high, params.low_ratio * high))
}

pub fn canny(gray: &ImageBuffer, params: &CannyParams) -> Result<EdgeMap> {
    params.validate()?;
    let smoothed = gaussian_blur(gray, params.sigma)?;
    let nms = non_max_suppression(&gradient(&smoothed, GradientOperator::Sobel));
    match canny_thresholds(&nms, params) {
        Some((high, low)) => hysteresis(&nms, high, low),
        None => Ok(EdgeMap::empty(gray.width(), gray.height())),
    }
}

/// Edge detectors selectable from configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EdgeMethod {
    #[default]
    Canny,
    Sobel,
    Prewitt,
    Roberts,
    LogZeroCrossing,
}

impl FromStr for EdgeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "canny" => Self::Canny,
            "sobel" => Self::Sobel,
            "prewitt" => Self::Prewitt,
            "roberts" => Self::Roberts,
            "log" => Self::LogZeroCrossing,
            other => return Err(Error::Config(format!("unknown edge method {other:?}"))),
        })
    }
}

impl EdgeMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Canny => "canny",
            Self::Sobel => "sobel",
            Self::Prewitt => "prewitt",
            Self::Roberts => "roberts",
            Self::LogZeroCrossing => "log",
        }
    }
}

/// Runs the chosen detector. The plain gradient operators keep pixels whose
/// smoothed magnitude reaches the `high_quantile` of nonzero magnitudes; the
/// Laplacian-of-Gaussian variant marks the negative side of sign changes
/// whose jump reaches `low_ratio` times that quantile of jumps.
pub fn detect_edges(gray: &ImageBuffer, method: EdgeMethod, params: &CannyParams) -> Result<EdgeMap> {
    params.validate()?;
    let op = match method {
        EdgeMethod::Canny => return canny(gray, params),
        EdgeMethod::LogZeroCrossing => return log_zero_crossing(gray, params),
        EdgeMethod::Sobel => GradientOperator::Sobel,
        EdgeMethod::Prewitt => GradientOperator::Prewitt,
        EdgeMethod::Roberts => GradientOperator::Roberts,
    };
    let field = gradient(&gaussian_blur(gray, params.sigma)?, op);
    let Some(t) = positive_quantile(&field.magnitude, params.high_quantile) else {
        return Ok(EdgeMap::empty(gray.width(), gray.height()));
    };
    let flags: Vec<bool> = field.magnitude.iter().map(|&m| m > 0.0 && m >= t).collect();
    Ok(EdgeMap::from_flags(gray.width(), gray.height(), &flags))
}

fn log_zero_crossing(gray: &ImageBuffer, params: &CannyParams) -> Result<EdgeMap> {
    let s = gaussian_blur(gray, params.sigma)?;
    let (w, h) = (s.width, s.height);
    let mut lap = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let p = |dx: isize, dy: isize| s.reflected(x as isize + dx, y as isize + dy);
            lap[y * w + x] = p(1, 0) + p(-1, 0) + p(0, 1) + p(0, -1) - 4.0 * p(0, 0);
        }
    }
    let mut strength = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let v = lap[y * w + x];
            if v >= 0.0 {
                continue;
            }
            let mut best: f64 = 0.0;
            for (dx, dy) in [(1isize, 0isize), (-1, 0), (0, 1), (0, -1)] {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let u = lap[ny as usize * w + nx as usize];
                if u > 0.0 {
                    best = best.max(u - v);
                }
            }
            strength[y * w + x] = best;
        }
    }
    let Some(q) = positive_quantile(&strength, params.high_quantile) else {
        return Ok(EdgeMap::empty(w, h));
    };
    let t = params.low_ratio * q;
    let flags: Vec<bool> = strength.iter().map(|&v| v > 0.0 && v >= t).collect();
    Ok(EdgeMap::from_flags(w, h, &flags))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray_from_fn(w: usize, h: usize, f: impl Fn(usize, usize) -> u8) -> ImageBuffer {
        let mut px = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                px.push(f(x, y));
            }
        }
        ImageBuffer::gray(w, h, px).unwrap()
    }

    #[test]
    fn reflect101_indices() {
        assert_eq!(reflect101(-1, 5), 1);
        assert_eq!(reflect101(-2, 5), 2);
        assert_eq!(reflect101(5, 5), 3);
        assert_eq!(reflect101(6, 5), 2);
        assert_eq!(reflect101(-7, 3), 1);
        assert_eq!(reflect101(4, 1), 0);
    }

    #[test]
    fn kernel_sums_to_one() {
        for sigma in [0.3, 1.0, 1.7, 4.0] {
            let k = gaussian_kernel(sigma);
            assert_eq!(k.len(), 2 * (3.0 * sigma).ceil() as usize + 1);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_preserves_constant_image() {
        let img = ImageBuffer::filled(9, 7, 1, 93).unwrap();
        let out = gaussian_blur(&img, 1.3).unwrap();
        assert!(out.data.iter().all(|&v| (v - 93.0).abs() < 1e-12));
    }

    #[test]
    fn blur_impulse_is_sampled_gaussian() {
        let sigma = 1.2;
        let n = 15;
        let c = 7;
        let img = gray_from_fn(n, n, |x, y| if (x, y) == (c, c) { 255 } else { 0 });
        let out = gaussian_blur(&img, sigma).unwrap();
        // direct 2-D evaluation, normalized over the same support
        let r = (3.0 * sigma).ceil() as isize;
        let g = |dx: isize, dy: isize| (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
        let mut total = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                total += g(dx, dy);
            }
        }
        for y in 0..n {
            for x in 0..n {
                let (dx, dy) = (x as isize - c as isize, y as isize - c as isize);
                let expected = if dx.abs() <= r && dy.abs() <= r { 255.0 * g(dx, dy) / total } else { 0.0 };
                assert!((out.at(x, y) - expected).abs() < 1e-9, "({x},{y})");
            }
        }
    }

    #[test]
    fn sobel_on_horizontal_ramp() {
        let img = gray_from_fn(8, 8, |x, _| x as u8);
        let f = gradient(&FloatMap::from_gray(&img).unwrap(), GradientOperator::Sobel);
        for y in 1..7 {
            for x in 1..7 {
                assert_eq!(f.gx[y * 8 + x], 8.0);
                assert_eq!(f.gy[y * 8 + x], 0.0);
            }
        }
    }

    #[test]
    fn constant_image_has_zero_gradient() {
        let img = ImageBuffer::filled(6, 6, 1, 200).unwrap();
        for op in [GradientOperator::Sobel, GradientOperator::Prewitt, GradientOperator::Roberts] {
            let f = gradient(&FloatMap::from_gray(&img).unwrap(), op);
            assert!(f.magnitude.iter().all(|&m| m == 0.0));
        }
    }

    #[test]
    fn rotation_swaps_gradient_axes() {
        // rotate 90° clockwise: new(x, y) = old(y, n-1-x)
        let n = 9;
        let img = gray_from_fn(n, n, |x, y| ((x * 7 + y * 13 + x * y) % 251) as u8);
        let rot = gray_from_fn(n, n, |x, y| img.pixel(y, n - 1 - x)[0]);
        let f = gradient(&FloatMap::from_gray(&img).unwrap(), GradientOperator::Sobel);
        let g = gradient(&FloatMap::from_gray(&rot).unwrap(), GradientOperator::Sobel);
        for y in 1..n - 1 {
            for x in 1..n - 1 {
                let (ox, oy) = (y, n - 1 - x);
                assert_eq!(g.gx[y * n + x], -f.gy[oy * n + ox]);
                assert_eq!(g.gy[y * n + x], f.gx[oy * n + ox]);
            }
        }
    }

    #[test]
    fn nms_on_ideal_step_is_one_pixel_wide() {
        let img = gray_from_fn(8, 8, |x, _| if x < 4 { 0 } else { 255 });
        let field = gradient(&FloatMap::from_gray(&img).unwrap(), GradientOperator::Sobel);
        let nms = non_max_suppression(&field);
        for y in 0..8 {
            let alive: Vec<usize> = (0..8).filter(|&x| nms.at(x, y) > 0.0).collect();
            assert_eq!(alive.len(), 1, "row {y}: {alive:?}");
        }
        for (a, b) in nms.data.iter().zip(&field.magnitude) {
            assert!(a <= b);
        }
    }

    #[test]
    fn nms_constant_is_zero() {
        let img = ImageBuffer::filled(5, 5, 1, 40).unwrap();
        let nms = non_max_suppression(&gradient(&FloatMap::from_gray(&img).unwrap(), GradientOperator::Sobel));
        assert!(nms.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hysteresis_tracks_connected_weak_pixels() {
        // 5x5: strong at (0,0); weak chain (1,1),(2,2); isolated weak blob at (4,0),(4,1)
        let mut d = vec![0.0; 25];
        d[0] = 10.0;
        d[6] = 5.0;
        d[12] = 5.0;
        d[4] = 5.0;
        d[9] = 5.0;
        d[24] = 1.0; // below low
        let nms = FloatMap::new(5, 5, d);
        let e = hysteresis(&nms, 8.0, 3.0).unwrap();
        assert_eq!(e.points(), vec![(0, 0), (1, 1), (2, 2)]);

        let single = FloatMap::new(3, 1, vec![0.0, 9.0, 0.0]);
        assert_eq!(hysteresis(&single, 8.0, 3.0).unwrap().points(), vec![(1, 0)]);

        let faint = FloatMap::new(3, 1, vec![1.0, 2.0, 0.5]);
        assert_eq!(hysteresis(&faint, 8.0, 3.0).unwrap().count(), 0);
        assert!(matches!(hysteresis(&faint, 3.0, 3.0), Err(Error::Config(_))));
    }

    #[test]
    fn canny_constant_image_is_empty() {
        let img = ImageBuffer::filled(16, 16, 1, 128).unwrap();
        assert_eq!(canny(&img, &CannyParams::default()).unwrap().count(), 0);
    }

    #[test]
    fn params_are_validated() {
        let bad = CannyParams {
            sigma: 0.0,
            ..CannyParams::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = CannyParams {
            high_quantile: 1.0,
            ..CannyParams::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn alternate_operators_find_a_step() {
        let img = gray_from_fn(16, 16, |x, _| if x < 8 { 20 } else { 220 });
        for m in [EdgeMethod::Sobel, EdgeMethod::Prewitt, EdgeMethod::Roberts, EdgeMethod::LogZeroCrossing] {
            let e = detect_edges(&img, m, &CannyParams::default()).unwrap();
            assert!(e.count() > 0, "{m:?}");
            assert!(e.points().iter().all(|&(x, _)| (5..=10).contains(&x)), "{m:?}");
        }
        let flat = ImageBuffer::filled(8, 8, 1, 3).unwrap();
        for m in [EdgeMethod::Sobel, EdgeMethod::LogZeroCrossing] {
            assert_eq!(detect_edges(&flat, m, &CannyParams::default()).unwrap().count(), 0);
        }
        assert_eq!("log".parse::<EdgeMethod>().unwrap(), EdgeMethod::LogZeroCrossing);
        assert!("scharr".parse::<EdgeMethod>().is_err());
    }
}
