//! SPICE card emission and a small reader for the same subset.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::detect::{ComponentDetection, ComponentLabel};
use crate::error::{NetlistError, Result};
use crate::nodes::TerminalMap;

/// Printed in place of component values, which are not read from the image.
pub const UNKNOWN_VALUE: &str = "?";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetlistLine {
    pub ref_designator: String,
    pub label: ComponentLabel,
    pub det_id: String,
    pub nodes: Vec<u32>,
    pub value: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Netlist {
    pub source_image: String,
    pub lines: Vec<NetlistLine>,
    /// Per-component warnings (dangling or surplus contacts, lone nodes).
    pub flags: Vec<String>,
}

impl Netlist {
    pub fn node_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.lines.iter().flat_map(|l| l.nodes.iter().copied()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn has_flags(&self) -> bool {
        !self.flags.is_empty()
    }

    pub fn to_spice(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "* netlist generated from {}", self.source_image);
        if self.lines.iter().any(|l| l.label.is_transistor()) {
            out.push_str("* transistor terminal order: drain/collector gate/base source/emitter\n");
        }
        for flag in &self.flags {
            let _ = writeln!(out, "* flag: {flag}");
        }
        for line in &self.lines {
            out.push_str(&line.ref_designator);
            for n in &line.nodes {
                let _ = write!(out, " {n}");
            }
            let _ = writeln!(out, " {}", line.value.as_deref().unwrap_or(UNKNOWN_VALUE));
        }
        out.push_str(".END\n");
        out
    }
}

/// One card per non-ground detection, designators numbered per prefix in
/// detection order.
pub fn emit_netlist(detections: &[ComponentDetection], terminals: &TerminalMap, source_image: &str) -> Netlist {
    let mut counters: HashMap<char, usize> = HashMap::new();
    let mut lines = Vec::new();
    let mut flags = Vec::new();
    for det in detections.iter().filter(|d| !d.label.is_ground()) {
        let prefix = det.label.spice_prefix();
        let n = counters.entry(prefix).or_insert(0);
        *n += 1;
        let ref_designator = format!("{prefix}{n}");
        let (nodes, comp_flags) = match terminals.get(&det.det_id) {
            Some(ct) => (
                ct.terminals.iter().map(|t| t.node_id).collect::<Vec<_>>(),
                ct.flags.clone(),
            ),
            None => (Vec::new(), vec!["no terminal assignment".to_string()]),
        };
        flags.extend(comp_flags.into_iter().map(|f| format!("{ref_designator}: {f}")));
        lines.push(NetlistLine {
            ref_designator,
            label: det.label.clone(),
            det_id: det.det_id.clone(),
            nodes,
            value: None,
        });
    }

    // a non-ground node used by a single terminal is suspicious unless already explained
    let mut uses: BTreeMap<u32, Vec<&str>> = BTreeMap::new();
    for line in &lines {
        for &n in &line.nodes {
            uses.entry(n).or_default().push(&line.ref_designator);
        }
    }
    for (node, refs) in uses {
        if node == 0 || refs.len() >= 2 {
            continue;
        }
        let already = flags.iter().any(|f| f.ends_with(&format!("dangling node {node}")));
        if !already {
            flags.push(format!("{}: node {node} has a single connection", refs[0]));
        }
    }

    Netlist {
        source_image: source_image.to_string(),
        lines,
        flags,
    }
}

/// A parsed element card: designator, node names, trailing value token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpiceCard {
    pub designator: String,
    pub nodes: Vec<String>,
    pub value: String,
}

/// Reads element cards. The first line is the title, `*` starts a comment,
/// `+` continues the previous card, dot-commands are skipped and `.END`
/// stops the scan. The last token of a card is its value; everything between
/// the designator and the value is a node.
pub fn parse_spice(text: &str) -> Result<Vec<SpiceCard>> {
    let mut logical: Vec<(usize, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate().skip(1) {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('*') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('+') {
            match logical.last_mut() {
                Some((_, prev)) => {
                    prev.push(' ');
                    prev.push_str(rest.trim());
                }
                None => {
                    return Err(NetlistError::SpiceParse {
                        line: i + 1,
                        reason: "continuation without a card".into(),
                    })
                }
            }
            continue;
        }
        logical.push((i + 1, line.to_string()));
    }

    let mut cards = Vec::new();
    for (lineno, line) in logical {
        if line.starts_with('.') {
            if line.eq_ignore_ascii_case(".end") {
                break;
            }
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 3 {
            return Err(NetlistError::SpiceParse {
                line: lineno,
                reason: format!("card `{line}` needs a designator, nodes and a value"),
            });
        }
        cards.push(SpiceCard {
            designator: tokens[0].to_string(),
            nodes: tokens[1..tokens.len() - 1].iter().map(|s| s.to_string()).collect(),
            value: tokens[tokens.len() - 1].to_string(),
        });
    }
    Ok(cards)
}
