//! End-to-end schematic → netlist composition.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detect::{ComponentDetection, DetectionsFile, DetectorProvider};
use crate::error::{NetlistError, Result};
use crate::image::GrayImage;
use crate::label::{connected_components, Connectivity, Labeling, Region};
use crate::mask::{binarize, mask_components, WireMask};
use crate::nodes::{assign_node_ids, map_terminals, validate_nodes, Node, TerminalConvention, TerminalMap};
use crate::spice::{emit_netlist, Netlist};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetlistConfig {
    pub threshold: u8,
    pub dilation_px: usize,
    pub band_px: usize,
    pub connectivity: Connectivity,
    pub convention: TerminalConvention,
}

impl Default for NetlistConfig {
    fn default() -> Self {
        Self {
            threshold: 128,
            dilation_px: 2,
            band_px: 3,
            connectivity: Connectivity::Eight,
            convention: TerminalConvention::default(),
        }
    }
}

/// Every intermediate stage of one run, for inspection and debugging.
#[derive(Debug, Clone)]
pub struct PipelineTrace {
    pub wires: WireMask,
    pub labeling: Labeling,
    pub valid_regions: Vec<Region>,
    pub nodes: Vec<Node>,
    pub terminals: TerminalMap,
    pub netlist: Netlist,
}

pub fn run_pipeline(
    image: &GrayImage,
    detections: &[ComponentDetection],
    source_image: &str,
    cfg: &NetlistConfig,
) -> Result<PipelineTrace> {
    if detections.is_empty() {
        return Err(NetlistError::NoComponents);
    }
    for d in detections {
        d.validate(image.width(), image.height())?;
    }
    let ink = binarize(image, cfg.threshold)?;
    let wires = mask_components(&ink, detections, cfg.dilation_px);
    let labeling = connected_components(&wires, cfg.connectivity);
    let valid_regions = validate_nodes(&labeling, detections, cfg.band_px);
    let nodes = assign_node_ids(&valid_regions, detections);
    let terminals = map_terminals(detections, &nodes, &valid_regions, &cfg.convention);
    let netlist = emit_netlist(detections, &terminals, source_image);
    Ok(PipelineTrace {
        wires,
        labeling,
        valid_regions,
        nodes,
        terminals,
        netlist,
    })
}

pub fn generate_from(
    image: &GrayImage,
    detections: &[ComponentDetection],
    source_image: &str,
    cfg: &NetlistConfig,
) -> Result<Netlist> {
    run_pipeline(image, detections, source_image, cfg).map(|t| t.netlist)
}

/// Reads a PGM schematic and its detections file and emits the netlist.
pub fn generate(
    image_path: impl AsRef<Path>,
    detections_path: impl AsRef<Path>,
    cfg: &NetlistConfig,
) -> Result<Netlist> {
    let image_path = image_path.as_ref();
    let image = GrayImage::read_pgm(image_path)?;
    let file = DetectionsFile::read(detections_path)?;
    let source = if file.image.is_empty() {
        image_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    } else {
        file.image.clone()
    };
    generate_from(&image, &file.detections, &source, cfg)
}

/// Same as [`generate`] but asks a detector for the components.
pub fn generate_with_detector(
    image_path: impl AsRef<Path>,
    detector: &dyn DetectorProvider,
    cfg: &NetlistConfig,
) -> Result<Netlist> {
    let image_path = image_path.as_ref();
    let image = GrayImage::read_pgm(image_path)?;
    let detections = detector.detect(&image)?;
    let source = image_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    generate_from(&image, &detections, &source, cfg)
}
