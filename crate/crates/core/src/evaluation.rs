//! VOC-style detection evaluation: greedy matching, all-points-interpolated
//! average precision, mAP over one or many IoU thresholds, and the NMS
//! threshold sweep.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{iou_or_zero, nms, BBox, ScoredBox};

/// One predicted box.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: String,
    pub class_id: usize,
    pub bbox: BBox,
    pub score: f64,
}

/// One ground-truth instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtInstance {
    pub class_id: usize,
    pub bbox: BBox,
}

/// Ground truth grouped by image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    by_image: BTreeMap<String, Vec<GtInstance>>,
}

impl GroundTruth {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, image_id: &str, class_id: usize, bbox: BBox) {
        self.by_image
            .entry(image_id.to_string())
            .or_default()
            .push(GtInstance { class_id, bbox });
    }

    pub fn instances(&self, image_id: &str) -> &[GtInstance] {
        self.by_image
            .get(image_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn total_instances(&self) -> usize {
        self.by_image.values().map(Vec::len).sum()
    }

    /// Instance count per class, over all images.
    pub fn class_counts(&self) -> BTreeMap<usize, usize> {
        let mut counts = BTreeMap::new();
        for instances in self.by_image.values() {
            for gt in instances {
                *counts.entry(gt.class_id).or_insert(0) += 1;
            }
        }
        counts
    }
}

/// Whether a match at exactly the IoU threshold counts as correct.
/// `GreaterEqual` is the conventional reading of "mAP at IoU=0.5";
/// `Strict` follows the strict-inequality wording some definitions use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatchCriterion {
    #[default]
    GreaterEqual,
    Strict,
}

impl MatchCriterion {
    fn accepts(&self, iou: f64, threshold: f64) -> bool {
        match self {
            MatchCriterion::GreaterEqual => iou >= threshold,
            MatchCriterion::Strict => iou > threshold,
        }
    }
}

/// Canonical evaluation order: score descending, ties broken by image id and
/// then by the detection's position within its image. Independent of how the
/// caller interleaved images.
fn canonical_order(dets: &[Detection]) -> Vec<usize> {
    let mut within_image: BTreeMap<&str, usize> = BTreeMap::new();
    let keys: Vec<(f64, &str, usize)> = dets
        .iter()
        .map(|d| {
            let slot = within_image.entry(d.image_id.as_str()).or_insert(0);
            let key = (d.score, d.image_id.as_str(), *slot);
            *slot += 1;
            key
        })
        .collect();
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        keys[b]
            .0
            .total_cmp(&keys[a].0)
            .then_with(|| keys[a].1.cmp(keys[b].1))
            .then_with(|| keys[a].2.cmp(&keys[b].2))
    });
    order
}

/// Greedy TP/FP matching for an already score-sorted detection list.
///
/// Each detection grabs the unmatched same-class ground truth of highest IoU
/// in its image; a ground truth matches at most one detection, duplicates
/// become false positives. Returns one flag per detection, aligned with the
/// input order.
pub fn match_detections(
    dets: &[&Detection],
    truth: &GroundTruth,
    iou_thresh: f64,
    criterion: MatchCriterion,
) -> Vec<bool> {
    let mut used: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
    dets.iter()
        .map(|det| {
            let instances = truth.instances(&det.image_id);
            let used_flags = used
                .entry(det.image_id.as_str())
                .or_insert_with(|| vec![false; instances.len()]);
            let mut best: Option<(usize, f64)> = None;
            for (idx, gt) in instances.iter().enumerate() {
                if gt.class_id != det.class_id || used_flags[idx] {
                    continue;
                }
                let overlap = iou_or_zero(&det.bbox, &gt.bbox);
                if best.is_none_or(|(_, b)| overlap > b) {
                    best = Some((idx, overlap));
                }
            }
            match best {
                Some((idx, overlap)) if criterion.accepts(overlap, iou_thresh) => {
                    used_flags[idx] = true;
                    true
                }
                _ => false,
            }
        })
        .collect()
}

/// Area under the precision-envelope PR curve (all-points interpolation).
///
/// `flags` must be in descending score order; `n_gt` must be at least 1
/// (classes without ground truth are excluded from mAP upstream instead).
pub fn average_precision(flags: &[bool], n_gt: usize) -> Result<f64> {
    if n_gt == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let mut precisions = Vec::with_capacity(flags.len());
    let mut recalls = Vec::with_capacity(flags.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &flag in flags {
        if flag {
            tp += 1;
        } else {
            fp += 1;
        }
        precisions.push(tp as f64 / (tp + fp) as f64);
        recalls.push(tp as f64 / n_gt as f64);
    }
    // monotone non-increasing upper hull, built from the right
    for i in (0..precisions.len().saturating_sub(1)).rev() {
        precisions[i] = precisions[i].max(precisions[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (p, r) in precisions.iter().zip(&recalls) {
        if *r > prev_recall {
            ap += (r - prev_recall) * p;
            prev_recall = *r;
        }
    }
    Ok(ap)
}

/// Evaluation of one class at one threshold.
#[derive(Debug, Clone, Serialize)]
pub struct ClassEval {
    pub ap: f64,
    pub n_gt: usize,
    pub tp: usize,
    pub fp: usize,
    /// Cumulative (recall, precision) points in score order, pre-envelope.
    pub pr_points: Vec<(f64, f64)>,
}

/// Per-class APs and their mean at a single IoU threshold.
#[derive(Debug, Clone, Serialize)]
pub struct EvalResult {
    pub iou_threshold: f64,
    pub per_class: BTreeMap<usize, ClassEval>,
    pub map: f64,
}

/// [`EvalResult`]s per threshold plus the mean over thresholds.
#[derive(Debug, Clone, Serialize)]
pub struct MeanApResult {
    pub results: Vec<EvalResult>,
    pub mean_over_thresholds: f64,
}

impl MeanApResult {
    /// The result at a given threshold, if it was evaluated.
    pub fn at_threshold(&self, iou: f64) -> Option<&EvalResult> {
        self.results.iter().find(|r| r.iou_threshold == iou)
    }
}

/// Scores detections against ground truth at one IoU threshold.
///
/// AP is computed per class from a single globally score-sorted detection
/// list across all images; classes with no ground-truth instances are
/// excluded from the mean rather than scored zero.
pub fn evaluate(
    dets: &[Detection],
    truth: &GroundTruth,
    iou_threshold: f64,
    criterion: MatchCriterion,
) -> Result<EvalResult> {
    let class_counts = truth.class_counts();
    if class_counts.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let order = canonical_order(dets);
    let mut per_class = BTreeMap::new();
    let mut ap_sum = 0.0;
    for (&class_id, &n_gt) in &class_counts {
        let class_dets: Vec<&Detection> = order
            .iter()
            .map(|&i| &dets[i])
            .filter(|d| d.class_id == class_id)
            .collect();
        let flags = match_detections(&class_dets, truth, iou_threshold, criterion);
        let ap = average_precision(&flags, n_gt)?;
        let tp = flags.iter().filter(|&&f| f).count();
        let fp = flags.len() - tp;
        let mut pr_points = Vec::with_capacity(flags.len());
        let (mut ctp, mut cfp) = (0usize, 0usize);
        for &flag in &flags {
            if flag {
                ctp += 1;
            } else {
                cfp += 1;
            }
            pr_points.push((ctp as f64 / n_gt as f64, ctp as f64 / (ctp + cfp) as f64));
        }
        ap_sum += ap;
        per_class.insert(
            class_id,
            ClassEval {
                ap,
                n_gt,
                tp,
                fp,
                pr_points,
            },
        );
    }
    let map = ap_sum / per_class.len() as f64;
    Ok(EvalResult {
        iou_threshold,
        per_class,
        map,
    })
}

/// Evaluates at each IoU threshold and averages the per-threshold mAPs.
pub fn mean_ap(
    dets: &[Detection],
    truth: &GroundTruth,
    iou_thresholds: &[f64],
    criterion: MatchCriterion,
) -> Result<MeanApResult> {
    if iou_thresholds.is_empty() {
        return Err(Error::Config("no IoU thresholds given".into()));
    }
    let results: Vec<EvalResult> = iou_thresholds
        .iter()
        .map(|&t| evaluate(dets, truth, t, criterion))
        .collect::<Result<_>>()?;
    let mean_over_thresholds =
        results.iter().map(|r| r.map).sum::<f64>() / results.len() as f64;
    Ok(MeanApResult {
        results,
        mean_over_thresholds,
    })
}

/// One row of the NMS sweep table.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub nms_threshold: f64,
    pub map: f64,
}

/// mAP as a function of the NMS threshold applied to raw detections.
#[derive(Debug, Clone, Serialize)]
pub struct SweepTable {
    pub iou_threshold: f64,
    pub rows: Vec<SweepRow>,
}

/// Applies per-class NMS to raw (pre-suppression) detections at each
/// threshold, evaluating the survivors each time.
pub fn nms_sweep(
    raw_dets: &[Detection],
    truth: &GroundTruth,
    nms_thresholds: &[f64],
    iou_eval: f64,
    criterion: MatchCriterion,
) -> Result<SweepTable> {
    let mut by_image: BTreeMap<&str, Vec<&Detection>> = BTreeMap::new();
    for det in raw_dets {
        by_image.entry(det.image_id.as_str()).or_default().push(det);
    }
    let mut rows = Vec::with_capacity(nms_thresholds.len());
    for &threshold in nms_thresholds {
        let mut kept = Vec::new();
        for (image_id, dets) in &by_image {
            let boxes: Vec<ScoredBox> = dets
                .iter()
                .map(|d| ScoredBox {
                    bbox: d.bbox,
                    class_id: d.class_id,
                    score: d.score,
                })
                .collect();
            for sb in nms(&boxes, threshold) {
                kept.push(Detection {
                    image_id: image_id.to_string(),
                    class_id: sb.class_id,
                    bbox: sb.bbox,
                    score: sb.score,
                });
            }
        }
        let result = evaluate(&kept, truth, iou_eval, criterion)?;
        rows.push(SweepRow {
            nms_threshold: threshold,
            map: result.map,
        });
    }
    Ok(SweepTable {
        iou_threshold: iou_eval,
        rows,
    })
}

/// The sweep grid used for part-detection reports.
pub const DEFAULT_NMS_SWEEP: [f64; 6] = [0.1, 0.3, 0.4, 0.45, 0.5, 0.55];

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn bb(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn det(image: &str, class: usize, bbox: BBox, score: f64) -> Detection {
        Detection {
            image_id: image.into(),
            class_id: class,
            bbox,
            score,
        }
    }

    #[test]
    fn perfect_single_detection_is_tp() {
        let mut truth = GroundTruth::new();
        truth.insert("img", 1, bb(0.0, 0.0, 10.0, 10.0));
        let d = det("img", 1, bb(0.0, 0.0, 10.0, 10.0), 0.9);
        let flags = match_detections(&[&d], &truth, 0.5, MatchCriterion::GreaterEqual);
        assert_eq!(flags, vec![true]);
    }

    #[test]
    fn duplicate_detection_is_fp() {
        let mut truth = GroundTruth::new();
        truth.insert("img", 1, bb(0.0, 0.0, 10.0, 10.0));
        let d1 = det("img", 1, bb(0.0, 0.0, 10.0, 10.0), 0.9);
        let d2 = det("img", 1, bb(1.0, 0.0, 10.0, 10.0), 0.8);
        let flags = match_detections(&[&d1, &d2], &truth, 0.5, MatchCriterion::GreaterEqual);
        assert_eq!(flags, vec![true, false]);
    }

    #[test]
    fn matching_agrees_with_reimplemented_greedy_oracle() {
        let mut rng = crate::rng::substream(80, "match-oracle");
        for _ in 0..100 {
            let mut truth = GroundTruth::new();
            let mut gts = Vec::new();
            for _ in 0..5 {
                let x0 = rng.gen_range(0.0..40.0);
                let y0 = rng.gen_range(0.0..40.0);
                let class = rng.gen_range(1..3usize);
                let b = bb(x0, y0, x0 + rng.gen_range(5.0..15.0), y0 + rng.gen_range(5.0..15.0));
                truth.insert("img", class, b);
                gts.push((class, b));
            }
            let dets: Vec<Detection> = (0..8)
                .map(|_| {
                    let (class, gt) = gts[rng.gen_range(0..gts.len())];
                    let dx = rng.gen_range(-4.0..4.0);
                    let dy = rng.gen_range(-4.0..4.0);
                    det(
                        "img",
                        class,
                        bb(gt.x_min + dx, gt.y_min + dy, gt.x_max + dx, gt.y_max + dy),
                        rng.gen_range(0.0..1.0),
                    )
                })
                .collect();
            let mut sorted: Vec<&Detection> = dets.iter().collect();
            sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
            let flags = match_detections(&sorted, &truth, 0.5, MatchCriterion::GreaterEqual);

            // independent greedy walk with its own bookkeeping
            let mut taken = vec![false; gts.len()];
            let expected: Vec<bool> = sorted
                .iter()
                .map(|d| {
                    let mut best_iou = -1.0;
                    let mut best_idx = None;
                    for (idx, (class, gt)) in gts.iter().enumerate() {
                        if *class != d.class_id || taken[idx] {
                            continue;
                        }
                        let inter_w =
                            (d.bbox.x_max.min(gt.x_max) - d.bbox.x_min.max(gt.x_min)).max(0.0);
                        let inter_h =
                            (d.bbox.y_max.min(gt.y_max) - d.bbox.y_min.max(gt.y_min)).max(0.0);
                        let inter = inter_w * inter_h;
                        let ov = inter / (d.bbox.area() + gt.area() - inter);
                        if ov > best_iou {
                            best_iou = ov;
                            best_idx = Some(idx);
                        }
                    }
                    if best_iou >= 0.5 {
                        taken[best_idx.unwrap()] = true;
                        true
                    } else {
                        false
                    }
                })
                .collect();
            assert_eq!(flags, expected);
        }
    }

    #[test]
    fn perfect_recall_first_gives_ap_one() {
        assert_eq!(average_precision(&[true, true, true], 3).unwrap(), 1.0);
    }

    #[test]
    fn zero_tp_gives_ap_zero() {
        assert_eq!(average_precision(&[false, false], 4).unwrap(), 0.0);
    }

    #[test]
    fn hand_walked_envelope_example() {
        // flags [TP, FP, TP] with two ground truths:
        // precision (1, 1/2, 2/3), recall (0.5, 0.5, 1.0)
        // envelope gives 0.5 * 1.0 + 0.5 * 2/3
        let ap = average_precision(&[true, false, true], 2).unwrap();
        assert_abs_diff_eq!(ap, 0.5 + 0.5 * (2.0 / 3.0), epsilon = 1e-9);
    }

    #[test]
    fn zero_gt_is_rejected() {
        assert!(average_precision(&[true], 0).is_err());
    }

    fn two_class_setup() -> (Vec<Detection>, GroundTruth) {
        let mut truth = GroundTruth::new();
        truth.insert("a", 1, bb(0.0, 0.0, 10.0, 10.0));
        truth.insert("b", 2, bb(5.0, 5.0, 20.0, 20.0));
        let dets = vec![
            det("a", 1, bb(0.0, 0.0, 10.0, 10.0), 0.9),
            det("b", 2, bb(5.0, 5.0, 20.0, 20.0), 0.8),
        ];
        (dets, truth)
    }

    #[test]
    fn perfect_detections_score_one_at_every_threshold() {
        let (dets, truth) = two_class_setup();
        let thresholds = [0.5, 0.75, 0.95];
        let result = mean_ap(&dets, &truth, &thresholds, MatchCriterion::GreaterEqual).unwrap();
        for r in &result.results {
            assert_eq!(r.map, 1.0);
        }
        assert_eq!(result.mean_over_thresholds, 1.0);
    }

    #[test]
    fn one_perfect_one_undetected_class_halves_map() {
        let (mut dets, truth) = two_class_setup();
        dets.retain(|d| d.class_id == 1);
        let result = evaluate(&dets, &truth, 0.5, MatchCriterion::GreaterEqual).unwrap();
        assert_eq!(result.per_class[&1].ap, 1.0);
        assert_eq!(result.per_class[&2].ap, 0.0);
        assert_abs_diff_eq!(result.map, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn empty_truth_is_an_error() {
        let truth = GroundTruth::new();
        assert!(matches!(
            evaluate(&[], &truth, 0.5, MatchCriterion::GreaterEqual),
            Err(Error::EmptyEvaluation)
        ));
    }

    #[test]
    fn zero_gt_class_excluded_from_mean() {
        let mut truth = GroundTruth::new();
        truth.insert("a", 1, bb(0.0, 0.0, 10.0, 10.0));
        // detections for class 9 which has no ground truth anywhere
        let dets = vec![
            det("a", 1, bb(0.0, 0.0, 10.0, 10.0), 0.9),
            det("a", 9, bb(50.0, 50.0, 60.0, 60.0), 0.99),
        ];
        let result = evaluate(&dets, &truth, 0.5, MatchCriterion::GreaterEqual).unwrap();
        assert_eq!(result.per_class.len(), 1);
        assert_eq!(result.map, 1.0);
    }

    #[test]
    fn single_class_map_equals_ap() {
        let mut truth = GroundTruth::new();
        truth.insert("a", 3, bb(0.0, 0.0, 10.0, 10.0));
        truth.insert("b", 3, bb(0.0, 0.0, 10.0, 10.0));
        let dets = vec![
            det("a", 3, bb(0.0, 0.0, 10.0, 10.0), 0.9),
            det("b", 3, bb(40.0, 40.0, 50.0, 50.0), 0.8),
        ];
        let result = evaluate(&dets, &truth, 0.5, MatchCriterion::GreaterEqual).unwrap();
        assert_eq!(result.map, result.per_class[&3].ap);
    }

    #[test]
    fn strict_criterion_rejects_exact_threshold() {
        let mut truth = GroundTruth::new();
        truth.insert("a", 1, bb(0.0, 0.0, 10.0, 10.0));
        // IoU with gt is exactly 0.5: half-overlapping box
        let d = det("a", 1, bb(0.0, 0.0, 10.0, 5.0), 0.9);
        let iou = iou_or_zero(&d.bbox, &bb(0.0, 0.0, 10.0, 10.0));
        assert_abs_diff_eq!(iou, 0.5, epsilon = 1e-12);
        let relaxed = match_detections(&[&d], &truth, 0.5, MatchCriterion::GreaterEqual);
        let strict = match_detections(&[&d], &truth, 0.5, MatchCriterion::Strict);
        assert_eq!(relaxed, vec![true]);
        assert_eq!(strict, vec![false]);
    }

    #[test]
    fn ap_invariant_under_monotone_score_transform() {
        let mut rng = crate::rng::substream(81, "monotone");
        for _ in 0..50 {
            let mut truth = GroundTruth::new();
            let mut dets = Vec::new();
            for i in 0..6 {
                let x0 = 12.0 * i as f64;
                truth.insert("img", 1, bb(x0, 0.0, x0 + 10.0, 10.0));
                if rng.gen_bool(0.8) {
                    let jitter = rng.gen_range(-3.0..3.0);
                    dets.push(det(
                        "img",
                        1,
                        bb(x0 + jitter, 0.0, x0 + 10.0 + jitter, 10.0),
                        rng.gen_range(0.01..0.99),
                    ));
                }
            }
            let base = evaluate(&dets, &truth, 0.5, MatchCriterion::GreaterEqual).unwrap();
            let transformed: Vec<Detection> = dets
                .iter()
                .map(|d| {
                    let mut t = d.clone();
                    t.score = 0.1 + 0.9 * d.score * d.score; // strictly monotone on (0,1)
                    t
                })
                .collect();
            let after = evaluate(&transformed, &truth, 0.5, MatchCriterion::GreaterEqual).unwrap();
            assert_abs_diff_eq!(base.map, after.map, epsilon = 1e-12);
        }
    }

    #[test]
    fn appending_detections_moves_ap_the_right_way() {
        let mut truth = GroundTruth::new();
        for i in 0..3 {
            let x0 = 20.0 * i as f64;
            truth.insert("img", 1, bb(x0, 0.0, x0 + 10.0, 10.0));
        }
        let dets = vec![
            det("img", 1, bb(0.0, 0.0, 10.0, 10.0), 0.9),
            det("img", 1, bb(20.0, 0.0, 30.0, 10.0), 0.7),
        ];
        let base = evaluate(&dets, &truth, 0.5, MatchCriterion::GreaterEqual)
            .unwrap()
            .map;

        // a zero-score false positive after all others never increases AP
        let mut with_fp = dets.clone();
        with_fp.push(det("img", 1, bb(70.0, 70.0, 80.0, 80.0), 0.0));
        let fp_map = evaluate(&with_fp, &truth, 0.5, MatchCriterion::GreaterEqual)
            .unwrap()
            .map;
        assert!(fp_map <= base + 1e-12);

        // a true positive for the unmatched ground truth never decreases AP
        let mut with_tp = dets.clone();
        with_tp.push(det("img", 1, bb(40.0, 0.0, 50.0, 10.0), 0.05));
        let tp_map = evaluate(&with_tp, &truth, 0.5, MatchCriterion::GreaterEqual)
            .unwrap()
            .map;
        assert!(tp_map >= base - 1e-12);
    }

    #[test]
    fn evaluation_is_independent_of_image_order() {
        let mut rng = crate::rng::substream(82, "image-order");
        let mut truth = GroundTruth::new();
        let mut dets = Vec::new();
        for img in ["x", "y", "z"] {
            for i in 0..3 {
                let x0 = 15.0 * i as f64;
                truth.insert(img, 1 + i % 2, bb(x0, 0.0, x0 + 10.0, 10.0));
                dets.push(det(
                    img,
                    1 + i % 2,
                    bb(x0 + 1.0, 0.0, x0 + 11.0, 10.0),
                    // duplicated scores across images exercise the tie-break
                    if i == 0 { 0.5 } else { rng.gen_range(0.1..0.9) },
                ));
            }
        }
        let forward = evaluate(&dets, &truth, 0.5, MatchCriterion::GreaterEqual).unwrap();
        let mut reversed_dets = dets.clone();
        reversed_dets.reverse();
        // reversing the list reverses image interleaving; per-image order is
        // restored before comparison because canonical order ignores it
        let mut by_image: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
        for d in reversed_dets {
            by_image.entry(d.image_id.clone()).or_default().push(d);
        }
        let mut regrouped = Vec::new();
        for (_, mut group) in by_image.into_iter().rev() {
            group.reverse();
            regrouped.extend(group);
        }
        let backward = evaluate(&regrouped, &truth, 0.5, MatchCriterion::GreaterEqual).unwrap();
        assert_eq!(forward.map, backward.map);
        for (class, eval) in &forward.per_class {
            assert_eq!(eval.ap, backward.per_class[class].ap);
        }
    }

    #[test]
    fn sweep_constant_for_single_detection_per_image() {
        let mut truth = GroundTruth::new();
        let mut dets = Vec::new();
        for i in 0..4 {
            let img = format!("img{i}");
            truth.insert(&img, 1, bb(0.0, 0.0, 10.0, 10.0));
            dets.push(det(&img, 1, bb(0.5, 0.0, 10.5, 10.0), 0.9));
        }
        let table = nms_sweep(
            &dets,
            &truth,
            &DEFAULT_NMS_SWEEP,
            0.5,
            MatchCriterion::GreaterEqual,
        )
        .unwrap();
        assert_eq!(table.rows.len(), 6);
        let first = table.rows[0].map;
        assert!(table.rows.iter().all(|r| r.map == first));
        let grid: Vec<f64> = table.rows.iter().map(|r| r.nms_threshold).collect();
        assert_eq!(grid, DEFAULT_NMS_SWEEP.to_vec());
    }

    #[test]
    fn suppression_beats_keeping_duplicates() {
        let mut truth = GroundTruth::new();
        let mut dets = Vec::new();
        for i in 0..5 {
            let x0 = 20.0 * i as f64;
            let gt = bb(x0, 0.0, x0 + 10.0, 10.0);
            truth.insert("img", 1, gt);
            // duplicate at every gt, scored so duplicates outrank later
            // true detections and poison the precision curve
            dets.push(det("img", 1, gt, 1.0 - 0.1 * i as f64));
            dets.push(det("img", 1, gt, 0.95 - 0.1 * i as f64));
        }
        let table = nms_sweep(&dets, &truth, &[0.5], 0.5, MatchCriterion::GreaterEqual).unwrap();
        let suppressed_map = table.rows[0].map;
        // identical boxes have IoU 1 which is not > 1.0, so threshold 1.0
        // keeps the duplicates
        let table = nms_sweep(&dets, &truth, &[1.0], 0.5, MatchCriterion::GreaterEqual).unwrap();
        let unsuppressed_map = table.rows[0].map;
        assert!(suppressed_map > unsuppressed_map);
        assert_eq!(suppressed_map, 1.0);
    }
}
