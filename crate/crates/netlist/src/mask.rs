//! Binary wire masks: thresholding and component removal.

use crate::detect::ComponentDetection;
use crate::error::{NetlistError, Result};
use crate::image::GrayImage;

/// Binary raster; `true` marks an ink (wire) pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl WireMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height, "mask size mismatch");
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.bits[y * self.width + x] = on;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_set(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Dark-on-light thresholding: a pixel is ink iff its value is below `threshold`.
pub fn binarize(image: &GrayImage, threshold: u8) -> Result<WireMask> {
    if image.is_empty() {
        return Err(NetlistError::EmptyImage);
    }
    let bits = image.pixels().iter().map(|&v| v < threshold).collect();
    Ok(WireMask::from_bits(image.width(), image.height(), bits))
}

/// Clears every pixel inside each detection box grown by `dilation_px`.
pub fn mask_components(mask: &WireMask, detections: &[ComponentDetection], dilation_px: usize) -> WireMask {
    let mut out = mask.clone();
    for det in detections {
        let b = det.bbox.expanded(dilation_px, mask.width, mask.height);
        for y in b.y0..b.y1 {
            out.bits[y * out.width + b.x0..y * out.width + b.x1].fill(false);
        }
    }
    out
}
