//! Detector evaluation: precision, recall, F1 and instance-weighted mAP.
//!
//! Predictions are matched greedily per image and class in descending
//! confidence order to the unmatched ground-truth box with the highest IoU,
//! provided the IoU reaches the threshold. Average precision uses all-point
//! interpolation of the precision/recall curve.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::detect::{ComponentDetection, ComponentLabel};

#[derive(Debug, Clone, Default)]
pub struct LabeledImage {
    pub ground_truth: Vec<ComponentDetection>,
    pub predictions: Vec<ComponentDetection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub ground_truth: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub average_precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub weighted_map: f64,
    pub per_class: BTreeMap<String, ClassMetrics>,
}

pub fn evaluate_detections(images: &[LabeledImage], iou_threshold: f64) -> DetectionMetrics {
    let mut classes: BTreeMap<ComponentLabel, ()> = BTreeMap::new();
    for img in images {
        for d in img.ground_truth.iter().chain(&img.predictions) {
            classes.insert(d.label.clone(), ());
        }
    }

    let mut per_class = BTreeMap::new();
    let (mut tp_all, mut fp_all, mut gt_all) = (0usize, 0usize, 0usize);
    for label in classes.keys() {
        // (confidence, det_id, is_tp) for every prediction of this class
        let mut scored: Vec<(f64, String, bool)> = Vec::new();
        let mut gt_count = 0;
        for img in images {
            let gts: Vec<&ComponentDetection> = img.ground_truth.iter().filter(|d| &d.label == label).collect();
            gt_count += gts.len();
            let mut preds: Vec<&ComponentDetection> = img.predictions.iter().filter(|d| &d.label == label).collect();
            preds.sort_by(|a, b| {
                b.confidence
                    .partial_cmp(&a.confidence)
                    .unwrap()
                    .then_with(|| a.det_id.cmp(&b.det_id))
            });
            let mut taken = vec![false; gts.len()];
            for p in preds {
                let best = gts
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !taken[*i])
                    .map(|(i, g)| (i, p.bbox.iou(&g.bbox)))
                    .filter(|(_, iou)| *iou >= iou_threshold)
                    .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0)));
                let hit = match best {
                    Some((i, _)) => {
                        taken[i] = true;
                        true
                    }
                    None => false,
                };
                scored.push((p.confidence, p.det_id.clone(), hit));
            }
        }
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then_with(|| a.1.cmp(&b.1)));
        let tp = scored.iter().filter(|s| s.2).count();
        let fp = scored.len() - tp;
        let ap = average_precision(&scored.iter().map(|s| s.2).collect::<Vec<_>>(), gt_count);
        tp_all += tp;
        fp_all += fp;
        gt_all += gt_count;
        per_class.insert(
            label.as_str().to_string(),
            ClassMetrics {
                ground_truth: gt_count,
                true_positives: tp,
                false_positives: fp,
                average_precision: ap,
            },
        );
    }

    let precision = ratio(tp_all, tp_all + fp_all);
    let recall = ratio(tp_all, gt_all);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    let weighted_map = if gt_all == 0 {
        0.0
    } else {
        per_class
            .values()
            .map(|c| c.ground_truth as f64 * c.average_precision)
            .sum::<f64>()
            / gt_all as f64
    };
    DetectionMetrics {
        precision,
        recall,
        f1,
        weighted_map,
        per_class,
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// All-point interpolated AP over predictions already sorted by confidence.
fn average_precision(hits: &[bool], gt_count: usize) -> f64 {
    if gt_count == 0 {
        return 0.0;
    }
    let mut recalls = Vec::with_capacity(hits.len());
    let mut precisions = Vec::with_capacity(hits.len());
    let mut tp = 0;
    for (i, &hit) in hits.iter().enumerate() {
        if hit {
            tp += 1;
        }
        recalls.push(tp as f64 / gt_count as f64);
        precisions.push(tp as f64 / (i + 1) as f64);
    }
    // precision envelope, right to left
    for i in (0..precisions.len().saturating_sub(1)).rev() {
        precisions[i] = precisions[i].max(precisions[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in recalls.iter().zip(&precisions) {
        if *r > prev_recall {
            ap += (r - prev_recall) * p;
            prev_recall = *r;
        }
    }
    ap
}
