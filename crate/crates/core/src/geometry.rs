//! Axis-aligned box geometry: areas, IoU, the object/part relatedness
//! predicate, horizontal flips, and greedy per-class NMS.
//!
//! All coordinates are continuous pixels; a box covers the half-open-ish
//! rectangle `[x_min, x_max] x [y_min, y_max]` and its area is plain
//! `width * height` with no inclusive-pixel "+1" correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle in continuous image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    /// Builds a box, rejecting coordinates with `min > max` or non-finite values.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let all_finite =
            x_min.is_finite() && y_min.is_finite() && x_max.is_finite() && y_max.is_finite();
        if !all_finite || x_min > x_max || y_min > y_max {
            return Err(Error::InvalidBox {
                x_min,
                y_min,
                x_max,
                y_max,
            });
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    /// Clamps the box into `[0, width] x [0, height]`.
    pub fn clamp_to(&self, width: f64, height: f64) -> BBox {
        BBox {
            x_min: self.x_min.clamp(0.0, width),
            y_min: self.y_min.clamp(0.0, height),
            x_max: self.x_max.clamp(0.0, width),
            y_max: self.y_max.clamp(0.0, height),
        }
    }

    /// Shifts the box by `(dx, dy)`.
    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }
}

/// A detection candidate entering NMS or evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub class_id: usize,
    pub score: f64,
}

/// Overlap area of two boxes; zero when they are disjoint or degenerate.
/// Symmetric in its arguments.
pub fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    w * h
}

/// Intersection over union.
///
/// Errors when both boxes have zero area (the ratio is undefined).
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return Err(Error::DegenerateIou);
    }
    Ok(inter / union)
}

/// IoU that treats the degenerate zero-union case as zero overlap.
///
/// Matching and NMS use this form so degenerate boxes drop out silently
/// instead of aborting a whole evaluation.
pub fn iou_or_zero(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn validate_fusion_thresh(f: f64) -> Result<()> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::Config(format!(
            "fusion threshold must lie in (0, 1], got {f}"
        )));
    }
    Ok(())
}

/// Relatedness predicate: an object/part pair is related when the
/// intersection covers at least fraction `f` of the part's area.
///
/// A zero-area part is never related. `f` outside `(0, 1]` is a
/// configuration error.
pub fn is_related(object_box: &BBox, part_box: &BBox, f: f64) -> Result<bool> {
    validate_fusion_thresh(f)?;
    Ok(relates(object_box, part_box, f))
}

/// `is_related` without the threshold check, for callers that validated `f`
/// once up front.
pub(crate) fn relates(object_box: &BBox, part_box: &BBox, f: f64) -> bool {
    let part_area = part_box.area();
    if part_area <= 0.0 {
        return false;
    }
    intersection_area(object_box, part_box) >= f * part_area
}

/// Mirrors a box across the vertical centerline of an image of the given width.
///
/// Involutive and area-preserving. Errors when the box extends outside
/// `[0, image_width]`.
pub fn hflip(b: &BBox, image_width: f64) -> Result<BBox> {
    if b.x_min < 0.0 || b.x_max > image_width {
        return Err(Error::Config(format!(
            "box x-range [{}, {}] exceeds image width {image_width}",
            b.x_min, b.x_max
        )));
    }
    BBox::new(image_width - b.x_max, b.y_min, image_width - b.x_min, b.y_max)
}

/// Greedy per-class non-maximum suppression.
///
/// Detections are visited in descending score order (ties broken by lower
/// input index); a kept box suppresses any remaining box of the same class
/// with IoU strictly above `threshold`. The output is the kept subset in
/// keep order.
pub fn nms(dets: &[ScoredBox], threshold: f64) -> Vec<ScoredBox> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .total_cmp(&dets[a].score)
            .then_with(|| a.cmp(&b))
    });

    let mut suppressed = vec![false; dets.len()];
    let mut kept = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        kept.push(dets[i]);
        for &j in &order[pos + 1..] {
            if suppressed[j] || dets[j].class_id != dets[i].class_id {
                continue;
            }
            if iou_or_zero(&dets[i].bbox, &dets[j].bbox) > threshold {
                suppressed[j] = true;
            }
        }
    }
    kept
}
