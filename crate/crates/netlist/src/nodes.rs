//! From labeled wire regions to electrical nodes and per-component terminals.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::detect::ComponentDetection;
use crate::label::{Contact, Labeling, Region, Side};

/// Which side of the component box a pixel belongs to. `ox`/`oy` are the
/// distances outside the box along each axis; pixels on the box border
/// (both zero) go to the nearest edge.
fn classify_side(det: &ComponentDetection, x: usize, y: usize) -> Side {
    let b = det.bbox;
    let ox = if x < b.x0 {
        b.x0 - x
    } else if x >= b.x1 {
        x + 1 - b.x1
    } else {
        0
    };
    let oy = if y < b.y0 {
        b.y0 - y
    } else if y >= b.y1 {
        y + 1 - b.y1
    } else {
        0
    };
    if ox == 0 && oy == 0 {
        let candidates = [
            (y - b.y0, Side::Top),
            (x - b.x0, Side::Left),
            (b.x1 - 1 - x, Side::Right),
            (b.y1 - 1 - y, Side::Bottom),
        ];
        return candidates.iter().min_by_key(|(d, _)| *d).unwrap().1;
    }
    if ox > oy {
        if x < b.x0 {
            Side::Left
        } else {
            Side::Right
        }
    } else if y < b.y0 {
        Side::Top
    } else {
        Side::Bottom
    }
}

/// Keeps the regions that reach the edge band of at least two distinct
/// detections, recording every `(detection, side)` contact.
///
/// The band of a detection is its box border thickened by `band_px` outward.
pub fn validate_nodes(labeling: &Labeling, detections: &[ComponentDetection], band_px: usize) -> Vec<Region> {
    // (region_id, det index, side) -> (pixels, sum_x, sum_y)
    let mut hits: BTreeMap<(u32, usize, Side), (usize, f64, f64)> = BTreeMap::new();
    for (di, det) in detections.iter().enumerate() {
        let b = det.bbox;
        let outer = b.expanded(band_px, labeling.width, labeling.height);
        for y in outer.y0..outer.y1 {
            for x in outer.x0..outer.x1 {
                let interior = x > b.x0 && x + 1 < b.x1 && y > b.y0 && y + 1 < b.y1;
                if interior {
                    continue;
                }
                let label = labeling.label_at(x, y);
                if label == 0 {
                    continue;
                }
                let side = classify_side(det, x, y);
                let e = hits.entry((label, di, side)).or_insert((0, 0.0, 0.0));
                e.0 += 1;
                e.1 += x as f64;
                e.2 += y as f64;
            }
        }
    }

    let mut contacts: BTreeMap<u32, Vec<(usize, Contact)>> = BTreeMap::new();
    for ((label, di, side), (n, sx, sy)) in hits {
        contacts.entry(label).or_default().push((
            di,
            Contact {
                det_id: detections[di].det_id.clone(),
                side,
                pixels: n,
                centroid: (sx / n as f64, sy / n as f64),
            },
        ));
    }

    labeling
        .regions
        .iter()
        .filter_map(|r| {
            let touched = contacts.remove(&r.region_id)?;
            let distinct: BTreeSet<usize> = touched.iter().map(|(di, _)| *di).collect();
            if distinct.len() < 2 {
                return None;
            }
            let mut region = r.clone();
            region.touched_components = touched.into_iter().map(|(_, c)| c).collect();
            Some(region)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub node_id: u32,
    pub regions: Vec<u32>,
    pub is_ground: bool,
}

/// Merges every region touching a ground symbol into node 0 and numbers the
/// rest `1..=n` in region order (row-major first pixel).
pub fn assign_node_ids(valid_regions: &[Region], detections: &[ComponentDetection]) -> Vec<Node> {
    let ground_ids: BTreeSet<&str> = detections
        .iter()
        .filter(|d| d.label.is_ground())
        .map(|d| d.det_id.as_str())
        .collect();

    let mut ground = Node {
        node_id: 0,
        regions: Vec::new(),
        is_ground: true,
    };
    let mut others = Vec::new();
    for r in valid_regions {
        let grounded = r
            .touched_components
            .iter()
            .any(|c| ground_ids.contains(c.det_id.as_str()));
        if grounded {
            ground.regions.push(r.region_id);
        } else {
            others.push(Node {
                node_id: others.len() as u32 + 1,
                regions: vec![r.region_id],
                is_ground: false,
            });
        }
    }
    let mut nodes = Vec::with_capacity(others.len() + 1);
    if !ground.regions.is_empty() {
        nodes.push(ground);
    }
    nodes.extend(others);
    nodes
}

/// Ranks used to order a component's contacts; lower ranks come first and
/// ties are broken by position along the side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideRanks {
    pub top: u8,
    pub left: u8,
    pub right: u8,
    pub bottom: u8,
}

impl SideRanks {
    fn rank(&self, side: Side) -> u8 {
        match side {
            Side::Top => self.top,
            Side::Left => self.left,
            Side::Right => self.right,
            Side::Bottom => self.bottom,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminalConvention {
    /// Two-terminal parts: left/top terminal first.
    pub two_terminal: SideRanks,
    /// MOS and BJT: drain/collector on top, gate/base on either side,
    /// source/emitter at the bottom.
    pub transistor: SideRanks,
    /// Everything else (op-amps, unknown parts).
    pub multi_terminal: SideRanks,
}

impl Default for TerminalConvention {
    fn default() -> Self {
        Self {
            two_terminal: SideRanks {
                top: 0,
                left: 0,
                right: 1,
                bottom: 1,
            },
            transistor: SideRanks {
                top: 0,
                left: 1,
                right: 1,
                bottom: 2,
            },
            multi_terminal: SideRanks {
                left: 0,
                top: 1,
                bottom: 2,
                right: 3,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Terminal {
    pub node_id: u32,
    /// `None` for padded terminals that touch no wire.
    pub side: Option<Side>,
    pub dangling: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentTerminals {
    pub det_id: String,
    pub terminals: Vec<Terminal>,
    pub flags: Vec<String>,
}

/// Terminal assignment for every non-ground detection, in detection order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TerminalMap {
    pub components: Vec<ComponentTerminals>,
}

impl TerminalMap {
    pub fn get(&self, det_id: &str) -> Option<&ComponentTerminals> {
        self.components.iter().find(|c| c.det_id == det_id)
    }

    pub fn is_fully_connected(&self) -> bool {
        self.components.iter().all(|c| c.flags.is_empty())
    }
}

pub fn map_terminals(
    detections: &[ComponentDetection],
    nodes: &[Node],
    valid_regions: &[Region],
    convention: &TerminalConvention,
) -> TerminalMap {
    let node_of_region: HashMap<u32, u32> = nodes
        .iter()
        .flat_map(|n| n.regions.iter().map(move |&r| (r, n.node_id)))
        .collect();
    let mut next_dangling = nodes.iter().map(|n| n.node_id + 1).max().unwrap_or(1);

    let mut components = Vec::new();
    for det in detections.iter().filter(|d| !d.label.is_ground()) {
        let ranks = if det.label.is_transistor() {
            convention.transistor
        } else if det.terminal_count() == 2 {
            convention.two_terminal
        } else {
            convention.multi_terminal
        };

        let mut contacts: Vec<(&Contact, u32)> = valid_regions
            .iter()
            .flat_map(|r| {
                let node = node_of_region.get(&r.region_id).copied();
                r.touched_components
                    .iter()
                    .filter(|c| c.det_id == det.det_id)
                    .filter_map(move |c| node.map(|n| (c, n)))
            })
            .collect();
        contacts.sort_by(|(a, na), (b, nb)| {
            let along = |c: &Contact| match c.side {
                Side::Left | Side::Right => (c.centroid.1, c.centroid.0),
                Side::Top | Side::Bottom => (c.centroid.0, c.centroid.1),
            };
            ranks
                .rank(a.side)
                .cmp(&ranks.rank(b.side))
                .then(a.side.cmp(&b.side))
                .then(along(a).partial_cmp(&along(b)).unwrap())
                .then(na.cmp(nb))
        });

        let wanted = det.terminal_count();
        let mut flags = Vec::new();
        if contacts.len() > wanted {
            flags.push(format!(
                "{} wire contacts for {} terminals; extra contacts ignored",
                contacts.len(),
                wanted
            ));
            contacts.truncate(wanted);
        }
        let mut terminals: Vec<Terminal> = contacts
            .iter()
            .map(|(c, n)| Terminal {
                node_id: *n,
                side: Some(c.side),
                dangling: false,
            })
            .collect();
        // a lone contact on the second side of a two-terminal part leaves the first open
        let missing_first = wanted == 2 && terminals.len() == 1 && terminals[0].side.map(|s| ranks.rank(s)) == Some(1);
        while terminals.len() < wanted {
            let at = if missing_first { 0 } else { terminals.len() };
            flags.push(format!(
                "terminal {} unconnected; dangling node {}",
                at + 1,
                next_dangling
            ));
            terminals.insert(
                at,
                Terminal {
                    node_id: next_dangling,
                    side: None,
                    dangling: true,
                },
            );
            next_dangling += 1;
        }
        components.push(ComponentTerminals {
            det_id: det.det_id.clone(),
            terminals,
            flags,
        });
    }
    TerminalMap { components }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{BBox, ComponentLabel};
    use crate::label::{connected_components, Connectivity};
    use crate::mask::WireMask;

    fn hline(m: &mut WireMask, x0: usize, x1: usize, y: usize) {
        for x in x0..x1 {
            m.set(x, y, true);
        }
    }

    fn vline(m: &mut WireMask, x: usize, y0: usize, y1: usize) {
        for y in y0..y1 {
            m.set(x, y, true);
        }
    }

    fn det(id: &str, label: ComponentLabel, b: [usize; 4]) -> ComponentDetection {
        ComponentDetection::new(id, label, BBox::from(b))
    }

    #[test]
    fn region_touching_one_component_is_dropped() {
        let mut m = WireMask::new(60, 30);
        hline(&mut m, 0, 18, 10); // ends at the left band of r1
        let dets = vec![det("r1", ComponentLabel::Resistor, [20, 5, 30, 15])];
        let l = connected_components(&m, Connectivity::Eight);
        assert!(validate_nodes(&l, &dets, 3).is_empty());
    }

    #[test]
    fn bridge_between_two_resistors_is_kept() {
        let mut m = WireMask::new(80, 30);
        hline(&mut m, 32, 48, 10);
        let dets = vec![
            det("r1", ComponentLabel::Resistor, [20, 5, 30, 15]),
            det("r2", ComponentLabel::Resistor, [50, 5, 60, 15]),
        ];
        let l = connected_components(&m, Connectivity::Eight);
        let valid = validate_nodes(&l, &dets, 3);
        assert_eq!(valid.len(), 1);
        let touched: Vec<_> = valid[0]
            .touched_components
            .iter()
            .map(|c| (c.det_id.as_str(), c.side))
            .collect();
        assert_eq!(touched, vec![("r1", Side::Right), ("r2", Side::Left)]);
    }

    #[test]
    fn free_floating_blob_is_dropped() {
        let mut m = WireMask::new(80, 40);
        for y in 30..34 {
            hline(&mut m, 5, 9, y);
        }
        let dets = vec![
            det("r1", ComponentLabel::Resistor, [20, 5, 30, 15]),
            det("r2", ComponentLabel::Resistor, [50, 5, 60, 15]),
        ];
        let l = connected_components(&m, Connectivity::Eight);
        assert_eq!(l.regions.len(), 1);
        assert!(validate_nodes(&l, &dets, 3).is_empty());
    }

    #[test]
    fn separate_ground_regions_share_node_zero() {
        // r1 -- gnd1 on the left, r2 -- gnd2 on the right, r1 -- r2 in the middle
        let mut m = WireMask::new(120, 40);
        hline(&mut m, 12, 18, 10);
        hline(&mut m, 32, 48, 10);
        hline(&mut m, 62, 68, 10);
        let dets = vec![
            det("g1", ComponentLabel::Ground, [2, 5, 10, 15]),
            det("r1", ComponentLabel::Resistor, [20, 5, 30, 15]),
            det("r2", ComponentLabel::Resistor, [50, 5, 60, 15]),
            det("g2", ComponentLabel::Ground, [70, 5, 78, 15]),
        ];
        let l = connected_components(&m, Connectivity::Eight);
        let valid = validate_nodes(&l, &dets, 3);
        assert_eq!(valid.len(), 3);
        let nodes = assign_node_ids(&valid, &dets);
        assert_eq!(nodes.len(), 2);
        assert_eq!(nodes[0].node_id, 0);
        assert!(nodes[0].is_ground);
        assert_eq!(nodes[0].regions.len(), 2);
        assert_eq!(nodes[1].node_id, 1);
    }

    #[test]
    fn without_ground_ids_start_at_one_in_region_order() {
        // three bridges stacked vertically between two tall parts
        let mut m = WireMask::new(80, 90);
        for y in [10, 40, 70] {
            hline(&mut m, 22, 48, y);
        }
        let dets = vec![
            det("a", ComponentLabel::Other("block".into()), [5, 0, 20, 90]),
            det("b", ComponentLabel::Other("block".into()), [50, 0, 65, 90]),
        ];
        let l = connected_components(&m, Connectivity::Eight);
        let valid = validate_nodes(&l, &dets, 3);
        let nodes = assign_node_ids(&valid, &dets);
        let ids: Vec<u32> = nodes.iter().map(|n| n.node_id).collect();
        assert_eq!(ids, vec![1, 2, 3]);
        let rows: Vec<usize> = nodes
            .iter()
            .map(|n| l.regions[n.regions[0] as usize - 1].first_pixel.1)
            .collect();
        assert_eq!(rows, vec![10, 40, 70]);
        // stable across runs
        assert_eq!(assign_node_ids(&valid, &dets), nodes);
    }

    #[test]
    fn resistor_terminals_left_then_right() {
        // n1 on the left of r (also touching a source), n2 on the right (touching c)
        let mut m = WireMask::new(120, 30);
        hline(&mut m, 12, 48, 10);
        hline(&mut m, 62, 98, 10);
        let dets = vec![
            det("v", ComponentLabel::Vsource, [2, 5, 10, 15]),
            det("r", ComponentLabel::Resistor, [50, 5, 60, 15]),
            det("c", ComponentLabel::Capacitor, [100, 5, 110, 15]),
        ];
        let l = connected_components(&m, Connectivity::Eight);
        let valid = validate_nodes(&l, &dets, 3);
        let nodes = assign_node_ids(&valid, &dets);
        let tm = map_terminals(&dets, &nodes, &valid, &TerminalConvention::default());
        let r = tm.get("r").unwrap();
        let ids: Vec<u32> = r.terminals.iter().map(|t| t.node_id).collect();
        assert_eq!(ids, vec![1, 2]);
        assert!(r.flags.is_empty());
    }

    #[test]
    fn nmos_three_contacts_in_drain_gate_source_order() {
        let mut m = WireMask::new(100, 100);
        // mos box [40,40)-(60,60); drain wire from the top to r_top, gate from the left
        // to v_gate, source from the bottom to r_bot
        vline(&mut m, 50, 12, 38);
        hline(&mut m, 12, 38, 50);
        vline(&mut m, 50, 62, 88);
        let dets = vec![
            det("rt", ComponentLabel::Resistor, [45, 0, 55, 10]),
            det("vg", ComponentLabel::Vsource, [0, 45, 10, 55]),
            det("rb", ComponentLabel::Resistor, [45, 90, 55, 100]),
            det("m", ComponentLabel::Nmos, [40, 40, 60, 60]),
        ];
        let l = connected_components(&m, Connectivity::Eight);
        let valid = validate_nodes(&l, &dets, 3);
        let nodes = assign_node_ids(&valid, &dets);
        // region order: drain wire (row 12), gate wire (row 50, x 12), source wire (row 62)
        let tm = map_terminals(&dets, &nodes, &valid, &TerminalConvention::default());
        let mos = tm.get("m").unwrap();
        let sides: Vec<_> = mos.terminals.iter().map(|t| t.side.unwrap()).collect();
        assert_eq!(sides, vec![Side::Top, Side::Left, Side::Bottom]);
        let ids: Vec<u32> = mos.terminals.iter().map(|t| t.node_id).collect();
        assert_eq!(ids, vec![1, 2, 3]);
    }

    #[test]
    fn capacitor_with_one_contact_gets_dangling_terminal() {
        let mut m = WireMask::new(80, 30);
        hline(&mut m, 12, 48, 10);
        let dets = vec![
            det("r", ComponentLabel::Resistor, [2, 5, 10, 15]),
            det("c", ComponentLabel::Capacitor, [50, 5, 60, 15]),
        ];
        let l = connected_components(&m, Connectivity::Eight);
        let valid = validate_nodes(&l, &dets, 3);
        let nodes = assign_node_ids(&valid, &dets);
        let tm = map_terminals(&dets, &nodes, &valid, &TerminalConvention::default());
        let c = tm.get("c").unwrap();
        assert_eq!(c.terminals.len(), 2);
        assert_eq!(c.terminals[0].node_id, 1);
        assert!(c.terminals[1].dangling);
        assert_eq!(c.flags.len(), 1);
        // the resistor only touches on its right, so its left terminal dangles
        let r = tm.get("r").unwrap();
        assert!(r.terminals[0].dangling);
        assert_eq!(r.terminals[1].node_id, 1);
        assert_ne!(r.terminals[0].node_id, c.terminals[1].node_id);
    }
}
