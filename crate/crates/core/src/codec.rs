//! 8-bit image buffers, binary PGM/PPM I/O and the spatial preparation
//! steps (tiling, resizing, grayscale conversion).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major, channel-interleaved 8-bit image with 1 or 3 channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!("image extents must be positive, got {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Shape(format!("images have 1 or 3 channels, got {channels}")));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "{width}x{height}x{channels} image needs {} bytes, got {}",
                width * height * channels,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn gray(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 1, pixels)
    }

    pub fn rgb(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 3, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn same_extents(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Channel values of the pixel at column `x`, row `y`.
    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.pixels[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let i = (y * self.width + x) * self.channels;
        &mut self.pixels[i..i + self.channels]
    }

    /// Copies the `w`×`h` window whose top-left corner is (`x0`, `y0`).
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<ImageBuffer> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Shape(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds {}x{} image",
                self.width, self.height
            )));
        }
        let c = self.channels;
        let mut pixels = Vec::with_capacity(w * h * c);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * c;
            pixels.extend_from_slice(&self.pixels[start..start + w * c]);
        }
        ImageBuffer::new(w, h, c, pixels)
    }
}

/// Serializes as binary PGM (1 channel) or PPM (3 channels), maxval 255.
pub fn encode_pnm(image: &ImageBuffer) -> Vec<u8> {
    let magic = if image.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.pixels);
    out
}

struct HeaderParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderParser<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Codec(format!("expected {what} in PNM header")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| Error::Codec(format!("{what} out of range in PNM header")))
    }
}

pub fn decode_pnm(bytes: &[u8]) -> Result<ImageBuffer> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        Some([b'P', b'1'..=b'7']) => {
            return Err(Error::UnsupportedFormat(format!(
                "netpbm variant {} (only binary P5/P6)",
                String::from_utf8_lossy(&bytes[..2])
            )))
        }
        _ => return Err(Error::Codec("not a PGM/PPM file".into())),
    };
    let mut p = HeaderParser { bytes, pos: 2 };
    if !bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(Error::Codec("missing whitespace after PNM magic".into()));
    }
    let width = p.number("width")?;
    let height = p.number("height")?;
    let maxval = p.number("maxval")?;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!("maxval {maxval} (only 255)")));
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(p.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Codec("missing whitespace after maxval".into()));
    }
    let start = p.pos + 1;
    let needed = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::Codec("image extents overflow".into()))?;
    let payload = bytes.get(start..start + needed).ok_or_else(|| {
        Error::Codec(format!(
            "pixel payload truncated: need {needed} bytes, have {}",
            bytes.len().saturating_sub(start)
        ))
    })?;
    ImageBuffer::new(width, height, channels, payload.to_vec()).map_err(|e| Error::Codec(e.to_string()))
}

pub fn read_pnm(path: &Path) -> Result<ImageBuffer> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes).map_err(|e| e.context(path.display().to_string()))
}

pub fn write_pnm(image: &ImageBuffer, path: &Path) -> Result<()> {
    fs::write(path, encode_pnm(image)).map_err(|e| Error::io(path, e))
}

/// Extension used for an image with this many channels.
pub fn pnm_extension(channels: usize) -> &'static str {
    if channels == 1 {
        "pgm"
    } else {
        "ppm"
    }
}

/// `<source_id>_r<r>c<c>.pgm|ppm`
pub fn tile_file_name(source_id: &str, row: usize, col: usize, channels: usize) -> String {
    format!("{source_id}_r{row}c{col}.{}", pnm_extension(channels))
}

/// Square blocks cut from one source image, in row-major order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileGrid {
    pub source_id: String,
    pub block: usize,
    pub rows: usize,
    pub cols: usize,
    pub tiles: Vec<ImageBuffer>,
}

impl TileGrid {
    pub fn tile(&self, row: usize, col: usize) -> &ImageBuffer {
        &self.tiles[row * self.cols + col]
    }

    /// Reassembles the source image.
    pub fn untile(&self) -> Result<ImageBuffer> {
        let first = self
            .tiles
            .first()
            .ok_or_else(|| Error::Shape("empty tile grid".into()))?;
        let c = first.channels;
        let (w, h) = (self.cols * self.block, self.rows * self.block);
        let mut pixels = vec![0u8; w * h * c];
        for r in 0..self.rows {
            for col in 0..self.cols {
                let t = self.tile(r, col);
                for y in 0..self.block {
                    let dst = ((r * self.block + y) * w + col * self.block) * c;
                    let src = y * self.block * c;
                    pixels[dst..dst + self.block * c].copy_from_slice(&t.pixels[src..src + self.block * c]);
                }
            }
        }
        ImageBuffer::new(w, h, c, pixels)
    }
}

/// Cuts the image into `block`×`block` tiles. Extents must divide exactly.
pub fn tile(image: &ImageBuffer, block: usize, source_id: &str) -> Result<TileGrid> {
    if block == 0 || image.width % block != 0 || image.height % block != 0 {
        return Err(Error::NonDivisible {
            width: image.width,
            height: image.height,
            block,
        });
    }
    let (rows, cols) = (image.height / block, image.width / block);
    let mut tiles = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            tiles.push(image.crop(c * block, r * block, block, block)?);
        }
    }
    Ok(TileGrid {
        source_id: source_id.to_owned(),
        block,
        rows,
        cols,
        tiles,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResizeMethod {
    Nearest,
    Bilinear,
}

/// Nearest maps destination index `d` to `floor(d·src/dst)`. Bilinear aligns
/// the corner pixels of both grids and rounds half up to 8 bits.
pub fn resize(image: &ImageBuffer, new_w: usize, new_h: usize, method: ResizeMethod) -> Result<ImageBuffer> {
    if new_w == 0 || new_h == 0 {
        return Err(Error::Shape(format!("resize target must be positive, got {new_w}x{new_h}")));
    }
    let c = image.channels;
    let (sw, sh) = (image.width, image.height);
    let mut out = Vec::with_capacity(new_w * new_h * c);
    match method {
        ResizeMethod::Nearest => {
            for y in 0..new_h {
                let sy = y * sh / new_h;
                for x in 0..new_w {
                    let sx = x * sw / new_w;
                    out.extend_from_slice(image.pixel(sx, sy));
                }
            }
        }
        ResizeMethod::Bilinear => {
            let scale = |src: usize, dst: usize| {
                if dst > 1 {
                    (src - 1) as f64 / (dst - 1) as f64
                } else {
                    0.0
                }
            };
            let (fx, fy) = (scale(sw, new_w), scale(sh, new_h));
            for y in 0..new_h {
                let syf = y as f64 * fy;
                let y0 = (syf.floor() as usize).min(sh - 1);
                let y1 = (y0 + 1).min(sh - 1);
                let ty = syf - y0 as f64;
                for x in 0..new_w {
                    let sxf = x as f64 * fx;
                    let x0 = (sxf.floor() as usize).min(sw - 1);
                    let x1 = (x0 + 1).min(sw - 1);
                    let tx = sxf - x0 as f64;
                    for ch in 0..c {
                        let p = |xx: usize, yy: usize| image.pixels[(yy * sw + xx) * c + ch] as f64;
                        let top = p(x0, y0) * (1.0 - tx) + p(x1, y0) * tx;
                        let bottom = p(x0, y1) * (1.0 - tx) + p(x1, y1) * tx;
                        let v = top * (1.0 - ty) + bottom * ty;
                        out.push(quantize(v));
                    }
                }
            }
        }
    }
    ImageBuffer::new(new_w, new_h, c, out)
}

/// Round half up and clamp to `[0, 255]`.
pub fn quantize(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// BT.601 luma. Single-channel input is returned unchanged.
pub fn to_grayscale(image: &ImageBuffer) -> ImageBuffer {
    if image.channels == 1 {
        return image.clone();
    }
    let pixels = image
        .pixels
        .chunks_exact(3)
        .map(|p| quantize(0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64))
        .collect();
    ImageBuffer::gray(image.width, image.height, pixels).expect("same extents")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_image(w: usize, h: usize, c: usize, seed: u64) -> ImageBuffer {
        let mut rng = seeded(seed);
        let pixels = (0..w * h * c).map(|_| rng.random()).collect();
        ImageBuffer::new(w, h, c, pixels).unwrap()
    }

    #[test]
    fn one_pixel_pgm_bytes() {
        let img = ImageBuffer::gray(1, 1, vec![128]).unwrap();
        assert_eq!(encode_pnm(&img), b"P5\n1 1\n255\n\x80".to_vec());
    }

    #[test]
    fn rgb_round_trip_is_byte_identical() {
        let img = random_image(16, 16, 3, 1);
        let bytes = encode_pnm(&img);
        assert!(bytes.starts_with(b"P6\n16 16\n255\n"));
        assert_eq!(decode_pnm(&bytes).unwrap(), img);
    }

    #[test]
    fn decode_errors() {
        let img = random_image(4, 3, 1, 2);
        let bytes = encode_pnm(&img);
        assert!(matches!(decode_pnm(&bytes[..bytes.len() - 1]), Err(Error::Codec(_))));
        assert!(matches!(decode_pnm(b"P5\n2 2\n65535\n"), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(decode_pnm(b"P2\n1 1\n255\n0"), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(decode_pnm(b"GIF89a"), Err(Error::Codec(_))));
        assert!(matches!(decode_pnm(b"P5\nx 1\n255\n0"), Err(Error::Codec(_))));
    }

    #[test]
    fn header_comments_are_skipped() {
        let img = decode_pnm(b"P5 # made by hand\n2 1\n# max\n255\n\x01\x02").unwrap();
        assert_eq!(img.pixels(), &[1, 2]);
    }

    #[test]
    fn tiling_counts_and_errors() {
        let img = ImageBuffer::filled(1000, 1000, 3, 9).unwrap();
        let grid = tile(&img, 250, "s").unwrap();
        assert_eq!((grid.rows, grid.cols, grid.tiles.len()), (4, 4, 16));
        assert!(grid.tiles.iter().all(|t| t.width() == 250 && t.height() == 250));
        assert!(matches!(tile(&img, 300, "s"), Err(Error::NonDivisible { .. })));

        let small = random_image(250, 250, 1, 3);
        let one = tile(&small, 250, "s").unwrap();
        assert_eq!(one.tiles, vec![small]);
    }

    #[test]
    fn tile_covers_expected_window() {
        let img = random_image(8, 6, 1, 4);
        let grid = tile(&img, 2, "s").unwrap();
        let t = grid.tile(1, 2);
        assert_eq!(t.pixel(1, 0), img.pixel(2 * 2 + 1, 2));
        assert_eq!(tile_file_name("slide3", 1, 2, 3), "slide3_r1c2.ppm");
    }

    #[test]
    fn resize_identity_and_nearest_duplication() {
        let img = random_image(7, 5, 3, 5);
        assert_eq!(resize(&img, 7, 5, ResizeMethod::Nearest).unwrap(), img);
        assert_eq!(resize(&img, 7, 5, ResizeMethod::Bilinear).unwrap(), img);

        let checker = ImageBuffer::gray(2, 2, vec![0, 255, 255, 0]).unwrap();
        let up = resize(&checker, 4, 4, ResizeMethod::Nearest).unwrap();
        assert_eq!(
            up.pixels(),
            &[0, 0, 255, 255, 0, 0, 255, 255, 255, 255, 0, 0, 255, 255, 0, 0]
        );
    }

    #[test]
    fn bilinear_midpoint_rounds_half_up() {
        // corner-aligned 2 -> 3: middle sample sits at source x = 0.5
        let img = ImageBuffer::gray(2, 1, vec![0, 255]).unwrap();
        let out = resize(&img, 3, 1, ResizeMethod::Bilinear).unwrap();
        assert_eq!(out.pixels(), &[0, 128, 255]);
    }

    #[test]
    fn grayscale_luma() {
        let img = ImageBuffer::rgb(3, 1, vec![255, 255, 255, 0, 0, 0, 255, 0, 0]).unwrap();
        assert_eq!(to_grayscale(&img).pixels(), &[255, 0, 76]);
        let g = random_image(3, 3, 1, 6);
        assert_eq!(to_grayscale(&g), g);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn untile_reproduces_source(seed in 0u64..1000, rows in 1usize..4, cols in 1usize..4, block in 1usize..6, c in prop::sample::select(vec![1usize, 3])) {
            let img = random_image(cols * block, rows * block, c, seed);
            let grid = tile(&img, block, "x").unwrap();
            prop_assert_eq!(grid.untile().unwrap(), img);
        }

        #[test]
        fn tile_and_nearest_resize_commute(seed in 0u64..1000, rows in 1usize..3, cols in 1usize..3, block in 1usize..5, factor in 1usize..4, up in any::<bool>()) {
            // integer scale: either block*factor (up) or block/factor (down, exact)
            let (src_block, dst_block) = if up { (block, block * factor) } else { (block * factor, block) };
            let img = random_image(cols * src_block, rows * src_block, 3, seed);
            let resized = resize(&img, cols * dst_block, rows * dst_block, ResizeMethod::Nearest).unwrap();
            let a = tile(&resized, dst_block, "x").unwrap().tiles;
            let b: Vec<_> = tile(&img, src_block, "x").unwrap().tiles.iter()
                .map(|t| resize(t, dst_block, dst_block, ResizeMethod::Nearest).unwrap())
                .collect();
            prop_assert_eq!(a, b);
        }
    }
}
