//! Independent oracles used by the acceptance suite. Everything here is
//! written from the definitions directly, without touching the library's
//! evaluation or geometry internals.

/// Integer-coordinate box on the rasterization grid.
#[derive(Debug, Clone, Copy)]
pub struct GridBox {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl GridBox {
    pub fn cells(&self) -> i64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

/// Number of unit cells covered by both boxes, by explicit enumeration.
pub fn raster_intersection(a: &GridBox, b: &GridBox, extent: i64) -> i64 {
    let mut shared = 0;
    for i in 0..extent {
        for j in 0..extent {
            let in_a = i >= a.x0 && i < a.x1 && j >= a.y0 && j < a.y1;
            let in_b = i >= b.x0 && i < b.x1 && j >= b.y0 && j < b.y1;
            if in_a && in_b {
                shared += 1;
            }
        }
    }
    shared
}

/// IoU from rasterized cell counts.
pub fn raster_iou(a: &GridBox, b: &GridBox, extent: i64) -> f64 {
    let shared = raster_intersection(a, b, extent);
    let union = a.cells() + b.cells() - shared;
    shared as f64 / union as f64
}

/// A detection as plain data: (image, class, box corners, score).
pub type OracleDet = (String, usize, [f64; 4], f64);
/// A ground-truth instance: (image, class, box corners).
pub type OracleGt = (String, usize, [f64; 4]);

fn oracle_box_iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let area_a = (a[2] - a[0]) * (a[3] - a[1]);
    let area_b = (b[2] - b[0]) * (b[3] - b[1]);
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Average precision straight from the definition: cumulative PR points and
/// an O(n^2) right-max for the precision envelope.
fn oracle_ap(flags: &[bool], n_gt: usize) -> f64 {
    let mut recalls = Vec::new();
    let mut precisions = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for &f in flags {
        if f {
            tp += 1;
        } else {
            fp += 1;
        }
        recalls.push(tp as f64 / n_gt as f64);
        precisions.push(tp as f64 / (tp + fp) as f64);
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for k in 0..flags.len() {
        if recalls[k] > prev {
            let envelope = precisions[k..]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            ap += (recalls[k] - prev) * envelope;
            prev = recalls[k];
        }
    }
    ap
}

/// Per-class APs and mAP, reimplemented end to end: global score sort with
/// the documented (score desc, image id, within-image index) tie rule,
/// greedy per-image matching at `iou >= threshold`, definition-level AP.
pub fn oracle_evaluate(
    dets: &[OracleDet],
    gts: &[OracleGt],
    iou_threshold: f64,
) -> (std::collections::BTreeMap<usize, f64>, f64) {
    use std::collections::BTreeMap;

    let mut classes: Vec<usize> = gts.iter().map(|g| g.1).collect();
    classes.sort_unstable();
    classes.dedup();

    // within-image positions in input order
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    let positions: Vec<usize> = dets
        .iter()
        .map(|d| {
            let slot = seen.entry(d.0.as_str()).or_insert(0);
            let p = *slot;
            *slot += 1;
            p
        })
        .collect();

    let mut per_class = BTreeMap::new();
    for &class in &classes {
        let n_gt = gts.iter().filter(|g| g.1 == class).count();
        let mut order: Vec<usize> = (0..dets.len()).filter(|&i| dets[i].1 == class).collect();
        order.sort_by(|&a, &b| {
            dets[b]
                .3
                .total_cmp(&dets[a].3)
                .then_with(|| dets[a].0.cmp(&dets[b].0))
                .then_with(|| positions[a].cmp(&positions[b]))
        });

        let mut taken = vec![false; gts.len()];
        let flags: Vec<bool> = order
            .iter()
            .map(|&i| {
                let det = &dets[i];
                let mut best: Option<(usize, f64)> = None;
                for (g_idx, gt) in gts.iter().enumerate() {
                    if gt.0 != det.0 || gt.1 != class || taken[g_idx] {
                        continue;
                    }
                    let overlap = oracle_box_iou(&det.2, &gt.2);
                    if best.map_or(true, |(_, b)| overlap > b) {
                        best = Some((g_idx, overlap));
                    }
                }
                match best {
                    Some((g_idx, overlap)) if overlap >= iou_threshold => {
                        taken[g_idx] = true;
                        true
                    }
                    _ => false,
                }
            })
            .collect();
        per_class.insert(class, oracle_ap(&flags, n_gt));
    }
    let map = per_class.values().sum::<f64>() / per_class.len() as f64;
    (per_class, map)
}
