use std::path::PathBuf;

use muallm_netlist::spice::parse_spice;
use muallm_netlist::synth::generate_corpus;
use muallm_netlist::{
    generate, run_pipeline, BBox, ComponentDetection, ComponentLabel, DetectionsFile, GrayImage, NetlistConfig,
    NetlistError, StaticDetector,
};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures/netlist")
        .join(name)
}

#[test]
fn rc_fixture_yields_expected_cards() {
    let nl = generate(
        fixture("rc_lowpass.pgm"),
        fixture("rc_lowpass.json"),
        &NetlistConfig::default(),
    )
    .unwrap();
    let expected = std::fs::read_to_string(fixture("rc_lowpass.cir")).unwrap();
    assert_eq!(nl.to_spice(), expected);
    assert!(!nl.has_flags());
}

#[test]
fn rc_fixture_through_detector_provider() {
    let det = StaticDetector::from_file(fixture("rc_lowpass.json")).unwrap();
    let nl =
        muallm_netlist::generate_with_detector(fixture("rc_lowpass.pgm"), &det, &NetlistConfig::default()).unwrap();
    assert!(nl.to_spice().contains("\nR1 1 2 ?\n"));
}

#[test]
fn emitted_text_round_trips_through_reader() {
    for c in generate_corpus(15, 77) {
        let nl = run_pipeline(&c.image, &c.detections, &c.name, &NetlistConfig::default())
            .unwrap()
            .netlist;
        let cards = parse_spice(&nl.to_spice()).unwrap();
        assert_eq!(cards.len(), nl.lines.len());
        for (card, line) in cards.iter().zip(&nl.lines) {
            assert_eq!(card.designator, line.ref_designator);
            let nodes: Vec<u32> = card.nodes.iter().map(|n| n.parse().unwrap()).collect();
            assert_eq!(nodes, line.nodes);
            assert_eq!(card.value, "?");
        }
    }
}

#[test]
fn empty_detections_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.json");
    std::fs::write(&p, r#"{"image":"x","detections":[]}"#).unwrap();
    let err = generate(fixture("rc_lowpass.pgm"), &p, &NetlistConfig::default()).unwrap_err();
    assert!(matches!(err, NetlistError::NoComponents));
}

#[test]
fn noise_only_schematic_has_no_nodes_and_dangling_terminals() {
    let mut img = GrayImage::filled(120, 60, 255);
    // text-like blobs, no wires
    img.fill_rect(60, 5, 66, 12, 0);
    img.fill_rect(5, 45, 12, 52, 0);
    let dets = vec![
        ComponentDetection::new("r", ComponentLabel::Resistor, BBox::new(20, 20, 50, 32)),
        ComponentDetection::new("c", ComponentLabel::Capacitor, BBox::new(70, 20, 100, 32)),
    ];
    let trace = run_pipeline(&img, &dets, "noise", &NetlistConfig::default()).unwrap();
    assert!(trace.valid_regions.is_empty());
    assert!(trace.nodes.is_empty());
    for ct in &trace.terminals.components {
        assert_eq!(ct.terminals.len(), 2);
        assert!(ct.terminals.iter().all(|t| t.dangling));
    }
    assert!(trace.netlist.has_flags());
}

#[test]
fn generation_is_deterministic() {
    let cfg = NetlistConfig::default();
    let a = generate(fixture("rc_lowpass.pgm"), fixture("rc_lowpass.json"), &cfg).unwrap();
    let b = generate(fixture("rc_lowpass.pgm"), fixture("rc_lowpass.json"), &cfg).unwrap();
    assert_eq!(a, b);
    let img = GrayImage::read_pgm(fixture("rc_lowpass.pgm")).unwrap();
    let dets = DetectionsFile::read(fixture("rc_lowpass.json")).unwrap().detections;
    let c = muallm_netlist::generate_from(&img, &dets, "rc_lowpass.pgm", &cfg).unwrap();
    assert_eq!(a, c);
}

#[test]
fn validated_regions_touch_two_detections_and_ground_is_merged() {
    for c in generate_corpus(25, 5) {
        let t = run_pipeline(&c.image, &c.detections, &c.name, &NetlistConfig::default()).unwrap();
        for r in &t.valid_regions {
            let mut ids: Vec<&str> = r.touched_components.iter().map(|x| x.det_id.as_str()).collect();
            ids.sort();
            ids.dedup();
            assert!(ids.len() >= 2, "{}: region {} touches {:?}", c.name, r.region_id, ids);
        }
        let ground_ids: Vec<&str> = c
            .detections
            .iter()
            .filter(|d| d.label.is_ground())
            .map(|d| d.det_id.as_str())
            .collect();
        let grounded: Vec<u32> = t
            .valid_regions
            .iter()
            .filter(|r| {
                r.touched_components
                    .iter()
                    .any(|x| ground_ids.contains(&x.det_id.as_str()))
            })
            .map(|r| r.region_id)
            .collect();
        assert!(!grounded.is_empty());
        let node0 = t.nodes.iter().find(|n| n.node_id == 0).unwrap();
        for id in grounded {
            assert!(node0.regions.contains(&id));
        }
        // node ids contiguous
        let ids: Vec<u32> = t.nodes.iter().map(|n| n.node_id).collect();
        assert_eq!(ids, (0..t.nodes.len() as u32).collect::<Vec<_>>());
    }
}

#[test]
fn components_are_cleared_from_wire_mask() {
    let img = GrayImage::read_pgm(fixture("rc_lowpass.pgm")).unwrap();
    let dets = DetectionsFile::read(fixture("rc_lowpass.json")).unwrap().detections;
    let t = run_pipeline(&img, &dets, "rc", &NetlistConfig::default()).unwrap();
    for d in &dets {
        for y in d.bbox.y0..d.bbox.y1 {
            for x in d.bbox.x0..d.bbox.x1 {
                assert!(!t.wires.get(x, y));
            }
        }
    }
}
