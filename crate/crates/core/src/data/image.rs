use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit single-channel image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    /// Intensities scaled to `[0, 1]`, row-major. This is the model input
    /// encoding of images.
    pub fn to_unit_features(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64 / 255.0).collect()
    }

    /// Places `right` next to `self`; heights must agree.
    pub fn hconcat(&self, right: &GrayImage) -> Result<GrayImage> {
        if self.height != right.height {
            return Err(Error::Shape("images differ in height".into()));
        }
        let width = self.width + right.width;
        let mut pixels = Vec::with_capacity(width * self.height);
        for y in 0..self.height {
            pixels.extend_from_slice(&self.pixels[y * self.width..(y + 1) * self.width]);
            pixels.extend_from_slice(&right.pixels[y * right.width..(y + 1) * right.width]);
        }
        GrayImage::new(width, self.height, pixels)
    }
}

/// Global histogram equalization with the `cdf_min` normalization:
/// `v -> round((cdf(v) - cdf_min) / (M - cdf_min) * 255)` where `M` is the
/// pixel count. An image with a single occupied level is returned unchanged.
pub fn hist_equalize(image: &GrayImage) -> Result<GrayImage> {
    let m = image.pixels.len();
    if m == 0 {
        return Err(Error::Shape("cannot equalize a zero-area image".into()));
    }
    let mut hist = [0usize; 256];
    for &p in &image.pixels {
        hist[p as usize] += 1;
    }
    let mut cdf = [0usize; 256];
    let mut acc = 0;
    for (c, h) in cdf.iter_mut().zip(hist.iter()) {
        acc += h;
        *c = acc;
    }
    let cdf_min = cdf[image.pixels.iter().copied().min().expect("non-empty") as usize];
    if cdf_min == m {
        return Ok(image.clone());
    }
    let denom = (m - cdf_min) as f64;
    let mut lut = [0u8; 256];
    for (v, l) in lut.iter_mut().enumerate() {
        let num = cdf[v].saturating_sub(cdf_min) as f64;
        *l = (num / denom * 255.0).round().clamp(0.0, 255.0) as u8;
    }
    Ok(GrayImage {
        width: image.width,
        height: image.height,
        pixels: image.pixels.iter().map(|&p| lut[p as usize]).collect(),
    })
}

/// Encodes as binary PGM (`P5`, maxval 255).
pub fn encode_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.pixels);
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 0;
    let next_token = |pos: &mut usize| -> Result<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::Ingestion("truncated PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    let magic = next_token(&mut pos)?;
    if magic != "P5" {
        return Err(Error::Ingestion(format!("expected binary PGM (P5), found {magic}")));
    }
    let mut dims = [0usize; 3];
    for d in dims.iter_mut() {
        let tok = next_token(&mut pos)?;
        *d = tok
            .parse()
            .map_err(|_| Error::Ingestion(format!("bad PGM header field '{tok}'")))?;
    }
    let [width, height, maxval] = dims;
    if maxval != 255 {
        return Err(Error::Ingestion(format!("only 8-bit PGM is supported, maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let end = pos + width * height;
    if bytes.len() < end {
        return Err(Error::Ingestion(format!(
            "PGM raster has {} bytes, expected {}",
            bytes.len().saturating_sub(pos),
            width * height
        )));
    }
    GrayImage::new(width, height, bytes[pos..end].to_vec())
}

pub fn write_pgm(path: &Path, image: &GrayImage) -> Result<()> {
    fs::write(path, encode_pgm(image)).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_image_is_unchanged() {
        let img = GrayImage::filled(3, 2, 77);
        assert_eq!(hist_equalize(&img).unwrap(), img);
    }

    #[test]
    fn uniform_histogram_is_fixed_point() {
        let img = GrayImage::new(16, 16, (0..=255).collect()).unwrap();
        let eq = hist_equalize(&img).unwrap();
        for (a, b) in img.pixels().iter().zip(eq.pixels()) {
            assert!((*a as i32 - *b as i32).abs() <= 1);
        }
    }

    #[test]
    fn four_level_example() {
        // cdf = 1,2,3,4; cdf_min = 1; (cdf - 1) / 3 * 255
        let img = GrayImage::new(2, 2, vec![0, 85, 170, 255]).unwrap();
        assert_eq!(hist_equalize(&img).unwrap().pixels(), &[0, 85, 170, 255]);
        let img = GrayImage::new(2, 2, vec![10, 10, 20, 200]).unwrap();
        // cdf = 2,3,4; cdf_min = 2; (1/2) * 255 = 127.5 -> 128
        assert_eq!(hist_equalize(&img).unwrap().pixels(), &[0, 0, 128, 255]);
    }

    #[test]
    fn zero_area_is_rejected() {
        let img = GrayImage::new(0, 5, vec![]).unwrap();
        assert!(matches!(hist_equalize(&img), Err(Error::Shape(_))));
    }

    #[test]
    fn pgm_round_trip_with_comment() {
        let img = GrayImage::new(3, 2, vec![0, 1, 2, 250, 251, 255]).unwrap();
        assert_eq!(decode_pgm(&encode_pgm(&img)).unwrap(), img);
        let mut commented = b"P5\n# made by hand\n3 2\n255\n".to_vec();
        commented.extend_from_slice(img.pixels());
        assert_eq!(decode_pgm(&commented).unwrap(), img);
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm(b"P5\n4 4\n255\n\x00").is_err());
    }

    proptest! {
        #[test]
        fn equalization_is_monotone_and_near_idempotent(px in proptest::collection::vec(any::<u8>(), 1..200)) {
            let img = GrayImage::new(px.len(), 1, px.clone()).unwrap();
            let once = hist_equalize(&img).unwrap();
            for i in 0..px.len() {
                for j in 0..px.len() {
                    if px[i] < px[j] {
                        prop_assert!(once.pixels()[i] <= once.pixels()[j]);
                    }
                }
            }
            let twice = hist_equalize(&once).unwrap();
            for (a, b) in once.pixels().iter().zip(twice.pixels()) {
                prop_assert!((*a as i32 - *b as i32).abs() <= 1);
            }
        }
    }
}
