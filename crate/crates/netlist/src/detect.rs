//! Component detections: the structured output of a schematic symbol detector.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NetlistError, Result};
use crate::image::GrayImage;

/// Terminal count assumed for op-amps unless a detection overrides it
/// (inverting input, non-inverting input, output).
pub const DEFAULT_OPAMP_TERMINALS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum ComponentLabel {
    Resistor,
    Capacitor,
    Inductor,
    Nmos,
    Pmos,
    Npn,
    Pnp,
    Diode,
    Vsource,
    Isource,
    Ground,
    Opamp,
    Other(String),
}

impl ComponentLabel {
    pub fn as_str(&self) -> &str {
        match self {
            Self::Resistor => "resistor",
            Self::Capacitor => "capacitor",
            Self::Inductor => "inductor",
            Self::Nmos => "nmos",
            Self::Pmos => "pmos",
            Self::Npn => "npn",
            Self::Pnp => "pnp",
            Self::Diode => "diode",
            Self::Vsource => "vsource",
            Self::Isource => "isource",
            Self::Ground => "ground",
            Self::Opamp => "opamp",
            Self::Other(s) => s,
        }
    }

    /// Default number of electrical terminals for the part.
    pub fn default_terminal_count(&self) -> usize {
        match self {
            Self::Ground => 1,
            Self::Nmos | Self::Pmos | Self::Npn | Self::Pnp => 3,
            Self::Opamp => DEFAULT_OPAMP_TERMINALS,
            _ => 2,
        }
    }

    /// SPICE designator prefix.
    pub fn spice_prefix(&self) -> char {
        match self {
            Self::Resistor => 'R',
            Self::Capacitor => 'C',
            Self::Inductor => 'L',
            Self::Nmos | Self::Pmos => 'M',
            Self::Npn | Self::Pnp => 'Q',
            Self::Diode => 'D',
            Self::Vsource => 'V',
            Self::Isource => 'I',
            Self::Ground | Self::Opamp | Self::Other(_) => 'X',
        }
    }

    pub fn is_ground(&self) -> bool {
        matches!(self, Self::Ground)
    }

    pub fn is_transistor(&self) -> bool {
        matches!(self, Self::Nmos | Self::Pmos | Self::Npn | Self::Pnp)
    }
}

impl From<String> for ComponentLabel {
    fn from(s: String) -> Self {
        match s.to_ascii_lowercase().as_str() {
            "resistor" => Self::Resistor,
            "capacitor" => Self::Capacitor,
            "inductor" => Self::Inductor,
            "nmos" => Self::Nmos,
            "pmos" => Self::Pmos,
            "npn" => Self::Npn,
            "pnp" => Self::Pnp,
            "diode" => Self::Diode,
            "vsource" => Self::Vsource,
            "isource" => Self::Isource,
            "ground" | "gnd" => Self::Ground,
            "opamp" => Self::Opamp,
            _ => Self::Other(s),
        }
    }
}

impl From<&str> for ComponentLabel {
    fn from(s: &str) -> Self {
        Self::from(s.to_string())
    }
}

impl From<ComponentLabel> for String {
    fn from(l: ComponentLabel) -> Self {
        l.as_str().to_string()
    }
}

impl fmt::Display for ComponentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Axis-aligned pixel box, half-open: columns `x0..x1`, rows `y0..y1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 4]", into = "[usize; 4]")]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> usize {
        self.x1.saturating_sub(self.x0)
    }

    pub fn height(&self) -> usize {
        self.y1.saturating_sub(self.y0)
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    /// Grows the box by `by` pixels on every side, clipped to `width × height`.
    pub fn expanded(&self, by: usize, width: usize, height: usize) -> BBox {
        BBox {
            x0: self.x0.saturating_sub(by),
            y0: self.y0.saturating_sub(by),
            x1: (self.x1 + by).min(width),
            y1: (self.y1 + by).min(height),
        }
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let ix0 = self.x0.max(other.x0);
        let iy0 = self.y0.max(other.y0);
        let ix1 = self.x1.min(other.x1);
        let iy1 = self.y1.min(other.y1);
        if ix0 >= ix1 || iy0 >= iy1 {
            return 0.0;
        }
        let inter = ((ix1 - ix0) * (iy1 - iy0)) as f64;
        inter / ((self.area() + other.area()) as f64 - inter)
    }
}

impl From<[usize; 4]> for BBox {
    fn from(v: [usize; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [usize; 4] {
    fn from(b: BBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentDetection {
    pub det_id: String,
    pub label: ComponentLabel,
    pub bbox: BBox,
    #[serde(default = "full_confidence")]
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_count: Option<usize>,
}

fn full_confidence() -> f64 {
    1.0
}

impl ComponentDetection {
    pub fn new(det_id: impl Into<String>, label: ComponentLabel, bbox: BBox) -> Self {
        Self {
            det_id: det_id.into(),
            label,
            bbox,
            confidence: 1.0,
            terminal_count: None,
        }
    }

    /// Terminal count: ground is always 1, otherwise the override or the label default.
    pub fn terminal_count(&self) -> usize {
        if self.label.is_ground() {
            1
        } else {
            self.terminal_count
                .filter(|&n| n >= 1)
                .unwrap_or_else(|| self.label.default_terminal_count())
        }
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        let bad = |reason: String| NetlistError::InvalidDetection {
            det_id: self.det_id.clone(),
            reason,
        };
        if self.det_id.is_empty() {
            return Err(bad("empty det_id".into()));
        }
        let b = self.bbox;
        if b.x0 >= b.x1 || b.y0 >= b.y1 {
            return Err(bad(format!("degenerate bbox {:?}", <[usize; 4]>::from(b))));
        }
        if b.x1 > width || b.y1 > height {
            return Err(bad(format!(
                "bbox {:?} exceeds image {width}x{height}",
                <[usize; 4]>::from(b)
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(bad(format!("confidence {} outside [0, 1]", self.confidence)));
        }
        Ok(())
    }
}

/// On-disk detections document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionsFile {
    #[serde(default)]
    pub image: String,
    pub detections: Vec<ComponentDetection>,
}

impl DetectionsFile {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| NetlistError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: DetectionsFile =
            serde_json::from_str(text).map_err(|e| NetlistError::InvalidDetectionsFile(e.to_string()))?;
        let mut seen = std::collections::HashSet::new();
        for d in &file.detections {
            if !seen.insert(d.det_id.as_str()) {
                return Err(NetlistError::InvalidDetection {
                    det_id: d.det_id.clone(),
                    reason: "duplicate det_id".into(),
                });
            }
        }
        Ok(file)
    }
}

/// Source of component detections for a schematic raster.
pub trait DetectorProvider: Send + Sync {
    fn detect(&self, image: &GrayImage) -> Result<Vec<ComponentDetection>>;
}

/// Serves a fixed detection list, e.g. one loaded from a detections file.
#[derive(Debug, Clone)]
pub struct StaticDetector {
    detections: Vec<ComponentDetection>,
}

impl StaticDetector {
    pub fn new(detections: Vec<ComponentDetection>) -> Self {
        Self { detections }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(DetectionsFile::read(path)?.detections))
    }
}

impl DetectorProvider for StaticDetector {
    fn detect(&self, _image: &GrayImage) -> Result<Vec<ComponentDetection>> {
        Ok(self.detections.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_parse_and_roundtrip() {
        let json = r#"{"image":"a.pgm","detections":[
            {"det_id":"d1","label":"resistor","bbox":[1,2,10,20],"confidence":0.9},
            {"det_id":"d2","label":"transformer","bbox":[0,0,5,5]}
        ]}"#;
        let file = DetectionsFile::parse(json).unwrap();
        assert_eq!(file.detections[0].label, ComponentLabel::Resistor);
        assert_eq!(file.detections[1].label, ComponentLabel::Other("transformer".into()));
        assert_eq!(file.detections[1].confidence, 1.0);
        let back = serde_json::to_string(&file).unwrap();
        assert_eq!(DetectionsFile::parse(&back).unwrap(), file);
    }

    #[test]
    fn terminal_counts() {
        let b = BBox::new(0, 0, 2, 2);
        assert_eq!(
            ComponentDetection::new("g", ComponentLabel::Ground, b).terminal_count(),
            1
        );
        assert_eq!(
            ComponentDetection::new("m", ComponentLabel::Nmos, b).terminal_count(),
            3
        );
        assert_eq!(
            ComponentDetection::new("r", ComponentLabel::Resistor, b).terminal_count(),
            2
        );
        let mut op = ComponentDetection::new("u", ComponentLabel::Opamp, b);
        op.terminal_count = Some(5);
        assert_eq!(op.terminal_count(), 5);
        let mut g = ComponentDetection::new("g", ComponentLabel::Ground, b);
        g.terminal_count = Some(3);
        assert_eq!(g.terminal_count(), 1);
    }

    #[test]
    fn validation_rejects_out_of_bounds_and_degenerate() {
        let d = ComponentDetection::new("r", ComponentLabel::Resistor, BBox::new(5, 5, 5, 9));
        assert!(d.validate(10, 10).is_err());
        let d = ComponentDetection::new("r", ComponentLabel::Resistor, BBox::new(5, 5, 11, 9));
        assert!(d.validate(10, 10).is_err());
        let d = ComponentDetection::new("r", ComponentLabel::Resistor, BBox::new(5, 5, 10, 10));
        assert!(d.validate(10, 10).is_ok());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let json = r#"{"detections":[
            {"det_id":"d1","label":"resistor","bbox":[1,2,10,20]},
            {"det_id":"d1","label":"resistor","bbox":[1,2,10,20]}]}"#;
        assert!(DetectionsFile::parse(json).is_err());
    }

    #[test]
    fn iou_of_identical_and_disjoint_boxes() {
        let a = BBox::new(0, 0, 10, 10);
        assert!((a.iou(&a) - 1.0).abs() < 1e-12);
        assert_eq!(a.iou(&BBox::new(20, 20, 30, 30)), 0.0);
        let half = BBox::new(5, 0, 15, 10);
        assert!((a.iou(&half) - 50.0 / 150.0).abs() < 1e-12);
    }
}
