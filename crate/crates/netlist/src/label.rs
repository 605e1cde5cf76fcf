//! Connected-component labeling with per-region statistics.
//!
//! Classic two-pass algorithm: the first raster scan assigns provisional labels
//! and records equivalences in a union-find forest, the second pass resolves
//! each pixel to its root. Final region ids are handed out in order of each
//! region's first pixel in row-major order, so the numbering is deterministic.

use serde::{Deserialize, Serialize};

use crate::detect::BBox;
use crate::mask::WireMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    Eight,
}

/// Side of a component box that a wire approaches from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Top,
    Left,
    Right,
    Bottom,
}

/// A wire region touching a component's edge band on one side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub det_id: String,
    pub side: Side,
    /// Region pixels that fall in the band on this side.
    pub pixels: usize,
    /// Mean position of those pixels, used to order contacts along a side.
    pub centroid: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    /// 1-based; 0 is reserved for background in the label raster.
    pub region_id: u32,
    pub pixel_count: usize,
    pub bbox: BBox,
    /// Row-major first pixel, `(x, y)`.
    pub first_pixel: (usize, usize),
    pub touched_components: Vec<Contact>,
}

/// Label raster plus the region table it indexes.
#[derive(Debug, Clone, PartialEq)]
pub struct Labeling {
    pub width: usize,
    pub height: usize,
    /// `labels[y * width + x]` is the region id, or 0 for background.
    pub labels: Vec<u32>,
    pub regions: Vec<Region>,
}

impl Labeling {
    pub fn label_at(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new() -> Self {
        // slot 0 is the background label and never unioned
        Self { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let ra = self.find(a);
        let rb = self.find(b);
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

pub fn connected_components(mask: &WireMask, connectivity: Connectivity) -> Labeling {
    let (w, h) = (mask.width(), mask.height());
    let mut provisional = vec![0u32; w * h];
    let mut uf = UnionFind::new();

    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            // previously scanned neighbours: W, NW, N, NE (diagonals only for 8-connectivity)
            let mut neighbours = [0u32; 4];
            let mut n = 0;
            if x > 0 {
                neighbours[n] = provisional[y * w + x - 1];
                n += 1;
            }
            if y > 0 {
                neighbours[n] = provisional[(y - 1) * w + x];
                n += 1;
                if connectivity == Connectivity::Eight {
                    if x > 0 {
                        neighbours[n] = provisional[(y - 1) * w + x - 1];
                        n += 1;
                    }
                    if x + 1 < w {
                        neighbours[n] = provisional[(y - 1) * w + x + 1];
                        n += 1;
                    }
                }
            }
            let mut label = 0;
            for &l in neighbours[..n].iter().filter(|&&l| l != 0) {
                if label == 0 {
                    label = l;
                } else {
                    uf.union(label, l);
                }
            }
            if label == 0 {
                label = uf.make();
            }
            provisional[y * w + x] = label;
        }
    }

    let mut final_of_root = vec![0u32; uf.parent.len()];
    let mut labels = vec![0u32; w * h];
    let mut regions: Vec<Region> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let p = provisional[y * w + x];
            if p == 0 {
                continue;
            }
            let root = uf.find(p) as usize;
            if final_of_root[root] == 0 {
                regions.push(Region {
                    region_id: regions.len() as u32 + 1,
                    pixel_count: 0,
                    bbox: BBox::new(x, y, x + 1, y + 1),
                    first_pixel: (x, y),
                    touched_components: Vec::new(),
                });
                final_of_root[root] = regions.len() as u32;
            }
            let id = final_of_root[root];
            labels[y * w + x] = id;
            let r = &mut regions[id as usize - 1];
            r.pixel_count += 1;
            r.bbox.x0 = r.bbox.x0.min(x);
            r.bbox.x1 = r.bbox.x1.max(x + 1);
            r.bbox.y1 = r.bbox.y1.max(y + 1);
        }
    }

    Labeling {
        width: w,
        height: h,
        labels,
        regions,
    }
}
