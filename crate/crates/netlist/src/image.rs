//! 8-bit grayscale rasters and portable graymap (PGM) encoding.
//!
//! Both the binary (`P5`) and plain (`P2`) variants are decoded. Samples with a
//! `maxval` other than 255 are rescaled to the 0..=255 range.

use std::path::Path;

use crate::error::{NetlistError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    /// Creates an image filled with `value`.
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_raw(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(NetlistError::InvalidPgm(format!(
                "expected {} samples, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.pixels[y * self.width + x] = value;
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    /// Fills the half-open rectangle `[x0, x1) × [y0, y1)`, clipped to the image.
    pub fn fill_rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, value: u8) {
        let x0 = x0.clamp(0, self.width as i64) as usize;
        let x1 = x1.clamp(0, self.width as i64) as usize;
        let y0 = y0.clamp(0, self.height as i64) as usize;
        let y1 = y1.clamp(0, self.height as i64) as usize;
        for y in y0..y1 {
            self.pixels[y * self.width + x0..y * self.width + x1].fill(value);
        }
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| NetlistError::io(path, e))?;
        Self::decode_pgm(&bytes)
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode_pgm()).map_err(|e| NetlistError::io(path, e))
    }

    /// Binary `P5` encoding with maxval 255.
    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode_pgm(bytes: &[u8]) -> Result<Self> {
        let mut cursor = HeaderCursor { bytes, pos: 0 };
        let magic = cursor.token()?;
        let plain = match magic.as_str() {
            "P5" => false,
            "P2" => true,
            other => return Err(NetlistError::InvalidPgm(format!("unsupported magic `{other}`"))),
        };
        let width = cursor.number()?;
        let height = cursor.number()?;
        let maxval = cursor.number()?;
        if maxval == 0 || maxval > 255 {
            return Err(NetlistError::InvalidPgm(format!("maxval {maxval} outside 1..=255")));
        }
        let count = width * height;
        let raw: Vec<u8> = if plain {
            let mut samples = Vec::with_capacity(count);
            for _ in 0..count {
                let v = cursor.number()?;
                if v > maxval {
                    return Err(NetlistError::InvalidPgm(format!("sample {v} exceeds maxval {maxval}")));
                }
                samples.push(v as u8);
            }
            samples
        } else {
            // exactly one whitespace byte separates the header from the raster
            let start = cursor.pos + 1;
            let end = start + count;
            if bytes.len() < end {
                return Err(NetlistError::InvalidPgm(format!(
                    "raster truncated: need {count} bytes, have {}",
                    bytes.len().saturating_sub(start)
                )));
            }
            bytes[start..end].to_vec()
        };
        let pixels = if maxval == 255 {
            raw
        } else {
            raw.into_iter()
                .map(|v| ((v as usize * 255 + maxval / 2) / maxval) as u8)
                .collect()
        };
        Self::from_raw(width, height, pixels)
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn token(&mut self) -> Result<String> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b'#') => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        if b == b'\n' {
                            break;
                        }
                        self.pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(_) => break,
                None => return Err(NetlistError::InvalidPgm("unexpected end of header".into())),
            }
        }
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                break;
            }
            self.pos += 1;
        }
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn number(&mut self) -> Result<usize> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| NetlistError::InvalidPgm(format!("expected a number, found `{tok}`")))
    }
}
