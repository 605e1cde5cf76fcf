//! Schematic image to SPICE netlist extraction.
//!
//! The pipeline takes a grayscale schematic plus component detections,
//! removes the components from the ink mask, labels the remaining wire
//! segments, keeps the segments that join at least two detections, merges
//! everything attached to ground symbols into node 0, assigns each
//! component's terminals from the side its wires enter and prints SPICE
//! cards.

pub mod detect;
pub mod error;
pub mod image;
pub mod label;
pub mod mask;
pub mod metrics;
pub mod nodes;
pub mod pipeline;
pub mod spice;
pub mod synth;

pub use detect::{BBox, ComponentDetection, ComponentLabel, DetectionsFile, DetectorProvider, StaticDetector};
pub use error::{NetlistError, Result};
pub use image::GrayImage;
pub use label::{connected_components, Connectivity, Labeling, Region, Side};
pub use mask::{binarize, mask_components, WireMask};
pub use metrics::{evaluate_detections, DetectionMetrics, LabeledImage};
pub use nodes::{assign_node_ids, map_terminals, validate_nodes, Node, TerminalConvention, TerminalMap};
pub use pipeline::{generate, generate_from, generate_with_detector, run_pipeline, NetlistConfig, PipelineTrace};
pub use spice::{emit_netlist, parse_spice, Netlist, NetlistLine, SpiceCard};
