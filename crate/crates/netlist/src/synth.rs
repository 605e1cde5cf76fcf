//! Synthetic schematics with known ground truth.
//!
//! Each topology is laid out on an integer grid: two-terminal parts span two
//! grid units, transistors sit on a grid point with drain above, source below
//! and gate to one side, and wires run along grid lines between terminal
//! points. The layout is randomized (cell size, stroke width, ink/paper
//! levels, mirroring, transposition of transistor-free layouts, ground
//! wiring, annotation blobs) and rasterized together with exact component
//! boxes. [`check_isomorphic`] compares an emitted netlist against the
//! layout's ground truth up to node renaming.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detect::{BBox, ComponentDetection, ComponentLabel};
use crate::image::GrayImage;
use crate::spice::Netlist;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    VoltageDivider,
    RcLowPass,
    RlcSeries,
    CurrentMirror,
    CmosInverter,
}

impl Topology {
    pub const ALL: [Topology; 5] = [
        Topology::VoltageDivider,
        Topology::RcLowPass,
        Topology::RlcSeries,
        Topology::CurrentMirror,
        Topology::CmosInverter,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Topology::VoltageDivider => "voltage_divider",
            Topology::RcLowPass => "rc_low_pass",
            Topology::RlcSeries => "rlc_series",
            Topology::CurrentMirror => "current_mirror",
            Topology::CmosInverter => "cmos_inverter",
        }
    }
}

/// Ground-truth connectivity of one non-ground part. Terminal order follows
/// the extraction convention; net `"0"` is ground.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthComponent {
    pub det_id: String,
    pub label: ComponentLabel,
    pub nets: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SyntheticCircuit {
    pub name: String,
    pub topology: Topology,
    pub image: GrayImage,
    pub detections: Vec<ComponentDetection>,
    pub truth: Vec<TruthComponent>,
    pub ground_symbols: usize,
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    /// Two grid points on one axis, two units apart.
    TwoTerminal { a: (i32, i32), b: (i32, i32) },
    /// Drain above, source below, gate left or right of `center`.
    Transistor { center: (i32, i32), gate_dx: i32 },
    /// Terminal point plus the unit direction the symbol hangs off in.
    Ground { at: (i32, i32), dir: (i32, i32) },
}

#[derive(Debug, Clone)]
struct Part {
    id: &'static str,
    label: ComponentLabel,
    shape: Shape,
    nets: Vec<&'static str>,
}

#[derive(Debug, Clone, Default)]
struct Layout {
    parts: Vec<Part>,
    wires: Vec<((i32, i32), (i32, i32))>,
}

impl Layout {
    fn two(&mut self, id: &'static str, label: ComponentLabel, a: (i32, i32), b: (i32, i32), nets: [&'static str; 2]) {
        self.parts.push(Part {
            id,
            label,
            shape: Shape::TwoTerminal { a, b },
            nets: nets.to_vec(),
        });
    }

    fn mos(
        &mut self,
        id: &'static str,
        label: ComponentLabel,
        center: (i32, i32),
        gate_dx: i32,
        nets: [&'static str; 3],
    ) {
        self.parts.push(Part {
            id,
            label,
            shape: Shape::Transistor { center, gate_dx },
            nets: nets.to_vec(),
        });
    }

    fn gnd(&mut self, id: &'static str, at: (i32, i32)) {
        self.parts.push(Part {
            id,
            label: ComponentLabel::Ground,
            shape: Shape::Ground { at, dir: (0, 1) },
            nets: vec!["0"],
        });
    }

    fn wire(&mut self, a: (i32, i32), b: (i32, i32)) {
        self.wires.push((a, b));
    }

    fn has_transistors(&self) -> bool {
        self.parts.iter().any(|p| matches!(p.shape, Shape::Transistor { .. }))
    }

    fn map_points(&mut self, f: impl Fn((i32, i32)) -> (i32, i32)) {
        for p in &mut self.parts {
            p.shape = match p.shape {
                Shape::TwoTerminal { a, b } => {
                    let (a, b) = (f(a), f(b));
                    // keep `a` as the top/left end
                    if (a.1, a.0) <= (b.1, b.0) {
                        Shape::TwoTerminal { a, b }
                    } else {
                        Shape::TwoTerminal { a: b, b: a }
                    }
                }
                Shape::Transistor { center, gate_dx } => {
                    let c = f(center);
                    let g = f((center.0 + gate_dx, center.1));
                    Shape::Transistor {
                        center: c,
                        gate_dx: g.0 - c.0,
                    }
                }
                Shape::Ground { at, dir } => {
                    let o = f((0, 0));
                    let d = f(dir);
                    Shape::Ground {
                        at: f(at),
                        dir: (d.0 - o.0, d.1 - o.1),
                    }
                }
            };
        }
        for w in &mut self.wires {
            *w = (f(w.0), f(w.1));
        }
    }
}

fn layout_for(topology: Topology, shared_ground: bool, output_stub: bool) -> Layout {
    use ComponentLabel::*;
    let mut l = Layout::default();
    match topology {
        Topology::VoltageDivider => {
            l.two("v1", Vsource, (0, 0), (0, 2), ["in", "0"]);
            l.two("r1", Resistor, (2, 0), (2, 2), ["in", "mid"]);
            l.two("r2", Resistor, (2, 2), (2, 4), ["mid", "0"]);
            l.wire((0, 0), (2, 0));
            if shared_ground {
                l.wire((0, 2), (0, 4));
                l.wire((0, 4), (2, 4));
                l.gnd("g1", (2, 4));
            } else {
                l.gnd("g1", (0, 2));
                l.gnd("g2", (2, 4));
            }
            if output_stub {
                l.wire((2, 2), (3, 2));
            }
        }
        Topology::RcLowPass => {
            l.two("v1", Vsource, (0, 0), (0, 2), ["in", "0"]);
            l.two("r1", Resistor, (1, 0), (3, 0), ["in", "out"]);
            l.two("c1", Capacitor, (3, 0), (3, 2), ["out", "0"]);
            l.wire((0, 0), (1, 0));
            if shared_ground {
                l.wire((0, 2), (3, 2));
                l.gnd("g1", (3, 2));
            } else {
                l.gnd("g1", (0, 2));
                l.gnd("g2", (3, 2));
            }
            if output_stub {
                l.wire((3, 0), (4, 0));
            }
        }
        Topology::RlcSeries => {
            l.two("v1", Vsource, (0, 0), (0, 2), ["in", "0"]);
            l.two("r1", Resistor, (1, 0), (3, 0), ["in", "a"]);
            l.two("l1", Inductor, (3, 0), (5, 0), ["a", "b"]);
            l.two("c1", Capacitor, (5, 0), (5, 2), ["b", "0"]);
            l.wire((0, 0), (1, 0));
            if shared_ground {
                l.wire((0, 2), (5, 2));
                l.gnd("g1", (5, 2));
            } else {
                l.gnd("g1", (0, 2));
                l.gnd("g2", (5, 2));
            }
            if output_stub {
                l.wire((5, 0), (6, 0));
            }
        }
        Topology::CurrentMirror => {
            l.two("i1", Isource, (1, 0), (1, 2), ["vdd", "d1"]);
            l.two("r1", Resistor, (4, 0), (4, 2), ["vdd", "out"]);
            l.two("v1", Vsource, (6, 0), (6, 2), ["vdd", "0"]);
            l.mos("m1", Nmos, (1, 3), 1, ["d1", "d1", "0"]);
            l.mos("m2", Nmos, (4, 3), -1, ["out", "d1", "0"]);
            l.wire((1, 0), (4, 0));
            l.wire((4, 0), (6, 0));
            l.wire((1, 2), (2, 2));
            l.wire((2, 2), (2, 3));
            l.wire((2, 3), (3, 3));
            l.gnd("g1", (6, 2));
            if shared_ground {
                l.wire((1, 4), (4, 4));
                l.gnd("g2", (4, 4));
            } else {
                l.gnd("g2", (1, 4));
                l.gnd("g3", (4, 4));
            }
            if output_stub {
                l.wire((4, 2), (5, 2));
            }
        }
        Topology::CmosInverter => {
            l.two("v1", Vsource, (-2, 2), (-2, 4), ["in", "0"]);
            l.two("v2", Vsource, (4, 0), (4, 2), ["vdd", "0"]);
            l.mos("mp", Pmos, (1, 1), -1, ["vdd", "in", "out"]);
            l.mos("mn", Nmos, (1, 3), -1, ["out", "in", "0"]);
            l.two("c1", Capacitor, (3, 2), (3, 4), ["out", "0"]);
            l.wire((-2, 2), (0, 2));
            l.wire((0, 1), (0, 3));
            l.wire((1, 0), (4, 0));
            l.wire((1, 2), (3, 2));
            l.gnd("g1", (-2, 4));
            l.gnd("g2", (1, 4));
            l.gnd("g3", (3, 4));
            l.gnd("g4", (4, 2));
        }
    }
    l
}

struct Raster {
    image: GrayImage,
    ink: u8,
}

impl Raster {
    fn rect(&mut self, x0: i64, y0: i64, x1: i64, y1: i64) {
        self.image.fill_rect(x0, y0, x1, y1, self.ink);
    }

    /// Axis-aligned stroke between two pixel points (inclusive), `t` pixels thick.
    fn stroke(&mut self, a: (i64, i64), b: (i64, i64), t: i64) {
        let lo = t / 2;
        let hi = t - lo;
        let (x0, x1) = (a.0.min(b.0), a.0.max(b.0));
        let (y0, y1) = (a.1.min(b.1), a.1.max(b.1));
        self.rect(x0 - lo, y0 - lo, x1 + hi, y1 + hi);
    }

    fn outline(&mut self, b: BBox, inset: i64) {
        let (x0, y0, x1, y1) = (
            b.x0 as i64 + inset,
            b.y0 as i64 + inset,
            b.x1 as i64 - inset,
            b.y1 as i64 - inset,
        );
        self.rect(x0, y0, x1, y0 + 1);
        self.rect(x0, y1 - 1, x1, y1);
        self.rect(x0, y0, x0 + 1, y1);
        self.rect(x1 - 1, y0, x1, y1);
    }
}

fn to_bbox(x0: i64, y0: i64, x1: i64, y1: i64) -> BBox {
    BBox::new(x0 as usize, y0 as usize, x1 as usize, y1 as usize)
}

/// Generates one randomized circuit of the given topology.
pub fn generate_circuit(topology: Topology, seed: u64) -> SyntheticCircuit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (topology as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let shared_ground = topology != Topology::CmosInverter && rng.random_bool(0.5);
    let output_stub = rng.random_bool(0.5);
    let mut layout = layout_for(topology, shared_ground, output_stub);

    if rng.random_bool(0.5) {
        layout.map_points(|(x, y)| (-x, y));
    }
    if !layout.has_transistors() && rng.random_bool(0.5) {
        layout.map_points(|(x, y)| (y, x));
    }

    let cell: i64 = 2 * rng.random_range(18..=28);
    let stroke: i64 = if rng.random_bool(0.5) { 1 } else { 3 };
    let ink: u8 = rng.random_range(0..=90);
    let paper: u8 = rng.random_range(200..=255);

    // grid extent; one spare cell on each side covers leads and ground symbols
    let mut points: Vec<(i32, i32)> = Vec::new();
    for p in &layout.parts {
        match p.shape {
            Shape::TwoTerminal { a, b } => points.extend([a, b]),
            Shape::Transistor { center, gate_dx } => points.extend([
                (center.0, center.1 - 1),
                (center.0, center.1 + 1),
                (center.0 + gate_dx, center.1),
            ]),
            Shape::Ground { at, dir } => points.extend([at, (at.0 + dir.0, at.1 + dir.1)]),
        }
    }
    for w in &layout.wires {
        points.extend([w.0, w.1]);
    }
    let min_x = points.iter().map(|p| p.0).min().unwrap() as i64 - 1;
    let max_x = points.iter().map(|p| p.0).max().unwrap() as i64 + 1;
    let min_y = points.iter().map(|p| p.1).min().unwrap() as i64 - 1;
    let max_y = points.iter().map(|p| p.1).max().unwrap() as i64 + 1;
    let margin_x: i64 = rng.random_range(4..=20);
    let margin_y: i64 = rng.random_range(4..=20);
    let width = ((max_x - min_x) * cell + 2 * margin_x) as usize;
    let height = ((max_y - min_y) * cell + 2 * margin_y) as usize;
    let px = |g: (i32, i32)| -> (i64, i64) {
        (
            margin_x + (g.0 as i64 - min_x) * cell,
            margin_y + (g.1 as i64 - min_y) * cell,
        )
    };

    let mut r = Raster {
        image: GrayImage::filled(width, height, paper),
        ink,
    };
    let half = cell / 2;
    let mut detections = Vec::new();
    let mut truth = Vec::new();
    let mut ground_symbols = 0;

    for part in &layout.parts {
        let bbox = match part.shape {
            Shape::TwoTerminal { a, b } => {
                let (pa, pb) = (px(a), px(b));
                let hw = cell / 4;
                let bbox = if pa.0 == pb.0 {
                    let (x, y) = pa;
                    r.stroke((x, y), (x, y + half - 1), stroke);
                    r.stroke((x, y + 3 * half), pb, stroke);
                    to_bbox(x - hw, y + half, x + hw, y + 3 * half)
                } else {
                    let (x, y) = pa;
                    r.stroke((x, y), (x + half - 1, y), stroke);
                    r.stroke((x + 3 * half, y), pb, stroke);
                    to_bbox(x + half, y - hw, x + 3 * half, y + hw)
                };
                r.outline(bbox, 1);
                r.outline(bbox, 4);
                bbox
            }
            Shape::Transistor { center, gate_dx } => {
                let (cx, cy) = px(center);
                let hw = cell * 3 / 10;
                let bbox = to_bbox(cx - hw, cy - half, cx + hw, cy + half);
                r.stroke((cx, cy - cell), (cx, cy - half - 1), stroke);
                r.stroke((cx, cy + half), (cx, cy + cell), stroke);
                if gate_dx < 0 {
                    r.stroke((cx - cell, cy), (cx - hw - 1, cy), stroke);
                } else {
                    r.stroke((cx + hw, cy), (cx + cell, cy), stroke);
                }
                r.outline(bbox, 1);
                r.rect(cx - 1, cy - half + 3, cx + 1, cy + half - 3);
                bbox
            }
            Shape::Ground { at, dir } => {
                ground_symbols += 1;
                let (x, y) = px(at);
                let near = cell * 2 / 5;
                let far = cell * 4 / 5;
                let hw = cell * 3 / 10;
                let (dx, dy) = (dir.0 as i64, dir.1 as i64);
                r.stroke((x, y), (x + dx * (near - 1), y + dy * (near - 1)), stroke);
                let bbox = match (dx, dy) {
                    (0, 1) => to_bbox(x - hw, y + near, x + hw, y + far),
                    (0, -1) => to_bbox(x - hw, y - far + 1, x + hw, y - near + 1),
                    (1, 0) => to_bbox(x + near, y - hw, x + far, y + hw),
                    _ => to_bbox(x - far + 1, y - hw, x - near + 1, y + hw),
                };
                r.outline(bbox, 2);
                bbox
            }
        };
        detections.push(ComponentDetection::new(part.id, part.label.clone(), bbox));
        if !part.label.is_ground() {
            truth.push(TruthComponent {
                det_id: part.id.to_string(),
                label: part.label.clone(),
                nets: part.nets.iter().map(|s| s.to_string()).collect(),
            });
        }
    }
    for &(a, b) in &layout.wires {
        r.stroke(px(a), px(b), stroke);
    }

    add_annotation_noise(&mut r, &detections, &mut rng);
    detections.shuffle(&mut rng);

    SyntheticCircuit {
        name: format!("{}-{seed}", topology.name()),
        topology,
        image: r.image,
        detections,
        truth,
        ground_symbols,
    }
}

/// Small ink blobs (stand-ins for designators and values) near components.
/// A blob is only kept if it stays clear of wires and of every other
/// component's band, so it can touch at most its host component.
fn add_annotation_noise(r: &mut Raster, detections: &[ComponentDetection], rng: &mut ChaCha8Rng) {
    let count = rng.random_range(0..=4);
    let (w, h) = (r.image.width() as i64, r.image.height() as i64);
    for _ in 0..count {
        let host = &detections[rng.random_range(0..detections.len())];
        let b = host.bbox;
        let gap: i64 = rng.random_range(3..=9);
        let bw: i64 = rng.random_range(3..=8);
        let bh: i64 = rng.random_range(4..=7);
        let (x0, y0) = match rng.random_range(0..4) {
            0 => (b.x1 as i64 + gap, b.y0 as i64),
            1 => (b.x0 as i64 - gap - bw, b.y0 as i64),
            2 => (b.x0 as i64, b.y0 as i64 - gap - bh),
            _ => (b.x0 as i64, b.y1 as i64 + gap),
        };
        let (x1, y1) = (x0 + bw, y0 + bh);
        if x0 < 1 || y0 < 1 || x1 >= w - 1 || y1 >= h - 1 {
            continue;
        }
        let host_zone = b.expanded(2, w as usize, h as usize);
        let guard = 4;
        let mut clear = true;
        'scan: for y in (y0 - guard).max(0)..(y1 + guard).min(h) {
            for x in (x0 - guard).max(0)..(x1 + guard).min(w) {
                if host_zone.contains(x as usize, y as usize) {
                    continue;
                }
                if r.image.get(x as usize, y as usize) < 128 {
                    clear = false;
                    break 'scan;
                }
            }
        }
        let reach = to_bbox((x0 - 5).max(0), (y0 - 5).max(0), (x1 + 5).min(w), (y1 + 5).min(h));
        for other in detections.iter().filter(|d| d.det_id != host.det_id) {
            if reach.iou(&other.bbox) > 0.0 {
                clear = false;
            }
        }
        if clear {
            r.rect(x0, y0, x1, y1);
        }
    }
}

/// `count` circuits cycling through all topologies, reproducible from `seed`.
pub fn generate_corpus(count: usize, seed: u64) -> Vec<SyntheticCircuit> {
    (0..count)
        .map(|i| generate_circuit(Topology::ALL[i % Topology::ALL.len()], seed.wrapping_add(i as u64)))
        .collect()
}

/// Checks that `netlist` and `truth` describe the same circuit up to a
/// renaming of non-ground nodes: equal part multisets by label, a bijection
/// between truth nets and node ids with ground fixed to 0, two-terminal parts
/// compared as unordered pairs and all other parts in terminal order.
pub fn check_isomorphic(netlist: &Netlist, truth: &[TruthComponent]) -> Result<(), String> {
    if netlist.lines.len() != truth.len() {
        return Err(format!(
            "{} cards emitted, {} expected",
            netlist.lines.len(),
            truth.len()
        ));
    }
    let mut used = vec![false; netlist.lines.len()];
    let mut net_to_node: HashMap<String, u32> = HashMap::new();
    let mut node_to_net: HashMap<u32, String> = HashMap::new();
    net_to_node.insert("0".into(), 0);
    node_to_net.insert(0, "0".into());
    if search(netlist, truth, 0, &mut used, &mut net_to_node, &mut node_to_net) {
        Ok(())
    } else {
        Err(format!(
            "no node bijection maps truth {:?} onto emitted {:?}",
            truth
                .iter()
                .map(|t| (t.label.as_str().to_string(), t.nets.clone()))
                .collect::<Vec<_>>(),
            netlist
                .lines
                .iter()
                .map(|l| (l.label.as_str().to_string(), l.nodes.clone()))
                .collect::<Vec<_>>()
        ))
    }
}

fn search(
    netlist: &Netlist,
    truth: &[TruthComponent],
    i: usize,
    used: &mut [bool],
    net_to_node: &mut HashMap<String, u32>,
    node_to_net: &mut HashMap<u32, String>,
) -> bool {
    let Some(t) = truth.get(i) else {
        return true;
    };
    for (j, line) in netlist.lines.iter().enumerate() {
        if used[j] || line.label != t.label || line.nodes.len() != t.nets.len() {
            continue;
        }
        let mut orders = vec![line.nodes.clone()];
        if line.nodes.len() == 2 {
            orders.push(vec![line.nodes[1], line.nodes[0]]);
        }
        for nodes in orders {
            let mut added: Vec<(String, u32)> = Vec::new();
            let mut ok = true;
            for (net, &node) in t.nets.iter().zip(&nodes) {
                match (net_to_node.get(net), node_to_net.get(&node)) {
                    (Some(&n), _) if n != node => ok = false,
                    (_, Some(existing)) if existing != net => ok = false,
                    (None, None) => {
                        net_to_node.insert(net.clone(), node);
                        node_to_net.insert(node, net.clone());
                        added.push((net.clone(), node));
                    }
                    _ => {}
                }
                if !ok {
                    break;
                }
            }
            if ok {
                used[j] = true;
                if search(netlist, truth, i + 1, used, net_to_node, node_to_net) {
                    return true;
                }
                used[j] = false;
            }
            for (net, node) in added {
                net_to_node.remove(&net);
                node_to_net.remove(&node);
            }
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spice::NetlistLine;

    fn line(label: ComponentLabel, nodes: &[u32]) -> NetlistLine {
        NetlistLine {
            ref_designator: String::new(),
            label,
            det_id: String::new(),
            nodes: nodes.to_vec(),
            value: None,
        }
    }

    fn truth(label: ComponentLabel, nets: &[&str]) -> TruthComponent {
        TruthComponent {
            det_id: String::new(),
            label,
            nets: nets.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn netlist(lines: Vec<NetlistLine>) -> Netlist {
        Netlist {
            source_image: "t".into(),
            lines,
            flags: vec![],
        }
    }

    #[test]
    fn isomorphism_accepts_renaming_and_swapped_passives() {
        use ComponentLabel::*;
        let t = vec![
            truth(Vsource, &["in", "0"]),
            truth(Resistor, &["in", "out"]),
            truth(Capacitor, &["out", "0"]),
        ];
        let n = netlist(vec![
            line(Capacitor, &[0, 7]),
            line(Resistor, &[7, 3]),
            line(Vsource, &[3, 0]),
        ]);
        assert!(check_isomorphic(&n, &t).is_ok());
    }

    #[test]
    fn isomorphism_rejects_wrong_ground_and_merged_nodes() {
        use ComponentLabel::*;
        let t = vec![truth(Resistor, &["a", "0"]), truth(Resistor, &["a", "b"])];
        // ground moved
        let n = netlist(vec![line(Resistor, &[1, 2]), line(Resistor, &[1, 0])]);
        assert!(check_isomorphic(&n, &t).is_ok());
        let n = netlist(vec![line(Resistor, &[1, 2]), line(Resistor, &[1, 3])]);
        assert!(check_isomorphic(&n, &t).is_err());
        // two truth nets collapsed into one node
        let n = netlist(vec![line(Resistor, &[1, 0]), line(Resistor, &[1, 1])]);
        assert!(check_isomorphic(&n, &t).is_err());
    }

    #[test]
    fn transistor_terminals_are_ordered() {
        use ComponentLabel::*;
        let t = vec![truth(Nmos, &["d", "g", "0"]), truth(Resistor, &["d", "g"])];
        assert!(check_isomorphic(&netlist(vec![line(Nmos, &[1, 2, 0]), line(Resistor, &[2, 1])]), &t).is_ok());
        assert!(check_isomorphic(&netlist(vec![line(Nmos, &[0, 2, 1]), line(Resistor, &[2, 1])]), &t).is_err());
    }

    #[test]
    fn generator_is_deterministic() {
        for topo in Topology::ALL {
            let a = generate_circuit(topo, 11);
            let b = generate_circuit(topo, 11);
            assert_eq!(a.image, b.image);
            assert_eq!(a.detections, b.detections);
            for d in &a.detections {
                d.validate(a.image.width(), a.image.height()).unwrap();
            }
        }
    }
}
