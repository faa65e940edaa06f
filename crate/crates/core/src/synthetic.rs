//! Seeded synthetic benchmark.
//!
//! Stands in for backbone features: every object class owns a prototype
//! direction whose class-discriminative mass is split between the object's
//! own feature (share `1 - rho`) and its parts' features (share `rho`), so
//! the benchmark directly controls how much an object-only model can see.
//! Distractor parts replay the person-leg confusion: some overlap an object
//! and carry a wrong-class prototype plus a distractor marker (so attention
//! has something to suppress), others sit in empty space with features
//! indistinguishable from real parts (so only the relatedness graph can
//! reject them).

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::annotations::{
    ImageAnnotation, ObjectClass, ObjectInstance, PartClass, PartInstance,
};
use crate::error::{Error, Result};
use crate::fusion::ProposalSet;
use crate::geometry::BBox;
use crate::rng::{gaussian, substream};

pub const IMAGE_WIDTH: f64 = 640.0;
pub const IMAGE_HEIGHT: f64 = 480.0;
/// Scale of the marker carried by in-object distractor parts.
const DISTRACTOR_MARKER_SCALE: f64 = 1.5;
/// How loudly an in-object distractor shouts its wrong object class.
/// Above 1 so uniform averaging over related parts is genuinely poisoned.
const DISTRACTOR_CONFUSION_SCALE: f64 = 2.5;

/// Knobs of the synthetic benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Training images.
    pub n_images: usize,
    /// Validation images.
    pub n_val_images: usize,
    /// Inclusive range of objects per image.
    pub objects_per_image: (usize, usize),
    /// Inclusive range of parts per object.
    pub parts_per_object: (usize, usize),
    pub feature_dim: usize,
    /// Share of each object's class signal carried by its parts (rho).
    pub class_signal_split: f64,
    /// Expected distractor parts per real part slot, for each of the two
    /// distractor kinds.
    pub distractor_rate: f64,
    /// Std dev of proposal box jitter, in pixels.
    pub jitter_std: f64,
    /// Std dev of per-component feature noise.
    pub feature_noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_images: 200,
            n_val_images: 100,
            objects_per_image: (2, 3),
            parts_per_object: (2, 5),
            feature_dim: 64,
            class_signal_split: 0.8,
            distractor_rate: 0.3,
            jitter_std: 2.0,
            feature_noise_std: 0.15,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.class_signal_split) {
            return Err(Error::Config(format!(
                "class_signal_split must lie in [0, 1], got {}",
                self.class_signal_split
            )));
        }
        if !(0.0..=1.0).contains(&self.distractor_rate) {
            return Err(Error::Config("distractor_rate must lie in [0, 1]".into()));
        }
        if self.feature_dim < 2 {
            return Err(Error::Config("feature_dim must be at least 2".into()));
        }
        if self.objects_per_image.0 > self.objects_per_image.1
            || self.parts_per_object.0 > self.parts_per_object.1
        {
            return Err(Error::Config("count ranges must satisfy min <= max".into()));
        }
        if self.objects_per_image.0 == 0 {
            return Err(Error::Config("need at least one object per image".into()));
        }
        if self.jitter_std < 0.0 || self.feature_noise_std < 0.0 {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        Ok(())
    }
}

/// Ground truth plus proposals for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetImage {
    pub annotation: ImageAnnotation,
    pub proposals: ProposalSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub train: Vec<DatasetImage>,
    pub val: Vec<DatasetImage>,
}

struct Prototypes {
    object: Vec<Array1<f64>>,
    part: Vec<Array1<f64>>,
    animal: Array1<f64>,
    distractor: Array1<f64>,
}

fn unit_vector(dim: usize, rng: &mut impl Rng) -> Array1<f64> {
    let mut v = Array1::from_shape_fn(dim, |_| gaussian(rng));
    let norm = v.dot(&v).sqrt();
    if norm > 0.0 {
        v /= norm;
    }
    v
}

impl Prototypes {
    fn draw(dim: usize, seed: u64) -> Self {
        let mut rng = substream(seed, "synth/prototypes");
        Self {
            object: (0..ObjectClass::ALL.len())
                .map(|_| unit_vector(dim, &mut rng))
                .collect(),
            part: (0..PartClass::ALL.len())
                .map(|_| unit_vector(dim, &mut rng))
                .collect(),
            animal: unit_vector(dim, &mut rng),
            distractor: unit_vector(dim, &mut rng),
        }
    }

    /// Base feature of an object of class `c` under split `rho`.
    fn object_feature(&self, c: usize, rho: f64) -> Array1<f64> {
        (1.0 - rho) * &self.object[c] + &self.animal
    }

    /// Base feature of a part of class `k` owned by an object of class `c`.
    fn part_feature(&self, k: usize, c: usize, rho: f64) -> Array1<f64> {
        &self.part[k] + &(rho * &self.object[c])
    }
}

/// Raw names used for ground-truth parts, one pool per coarse class; the
/// ingestion collation maps each back to its class.
fn raw_name_pool(class: PartClass) -> &'static [&'static str] {
    match class {
        PartClass::Face => &["head", "nose", "lear", "reye", "mouth"],
        PartClass::Leg => &["lfleg", "rfleg", "lbleg", "rbpa", "lfho"],
        PartClass::Neck => &["neck"],
        PartClass::Tail => &["tail"],
        PartClass::Torso => &["torso"],
        PartClass::Wings => &["lwing", "rwing"],
    }
}

fn clamp_box(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
    let (x0, x1) = if x0 <= x1 { (x0, x1) } else { (x1, x0) };
    let (y0, y1) = if y0 <= y1 { (y0, y1) } else { (y1, y0) };
    BBox::new(
        x0.clamp(0.0, IMAGE_WIDTH),
        y0.clamp(0.0, IMAGE_HEIGHT),
        x1.clamp(0.0, IMAGE_WIDTH),
        y1.clamp(0.0, IMAGE_HEIGHT),
    )
    .expect("sorted, clamped coordinates form a valid box")
}

fn jitter_box(b: &BBox, std: f64, rng: &mut impl Rng) -> BBox {
    if std == 0.0 {
        return *b;
    }
    let (cx, cy) = b.center();
    let cx = cx + std * gaussian(rng);
    let cy = cy + std * gaussian(rng);
    let w = (b.width() + std * gaussian(rng)).max(4.0);
    let h = (b.height() + std * gaussian(rng)).max(4.0);
    clamp_box(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
}

fn sub_box(outer: &BBox, rng: &mut impl Rng) -> BBox {
    let w = outer.width() * rng.gen_range(0.22..0.42);
    let h = outer.height() * rng.gen_range(0.22..0.42);
    let x0 = outer.x_min + rng.gen_range(0.0..(outer.width() - w));
    let y0 = outer.y_min + rng.gen_range(0.0..(outer.height() - h));
    clamp_box(x0, y0, x0 + w, y0 + h)
}

/// A box whose overlap with each `avoid` box stays below `max_cover` of its
/// own area, or `None` when the image is too crowded to place one.
fn free_box(
    avoid: &[BBox],
    size_range: (f64, f64),
    max_cover: f64,
    rng: &mut impl Rng,
) -> Option<BBox> {
    for _ in 0..40 {
        let w = rng.gen_range(size_range.0..size_range.1);
        let h = rng.gen_range(size_range.0..size_range.1);
        let x0 = rng.gen_range(0.0..(IMAGE_WIDTH - w));
        let y0 = rng.gen_range(0.0..(IMAGE_HEIGHT - h));
        let candidate = clamp_box(x0, y0, x0 + w, y0 + h);
        let clear = avoid.iter().all(|b| {
            crate::geometry::intersection_area(b, &candidate) < max_cover * candidate.area()
        });
        if clear {
            return Some(candidate);
        }
    }
    None
}

struct ProposalBuilder {
    boxes: Vec<BBox>,
    features: Vec<f64>,
    dim: usize,
}

impl ProposalBuilder {
    fn new(dim: usize) -> Self {
        Self {
            boxes: Vec::new(),
            features: Vec::new(),
            dim,
        }
    }

    fn push(&mut self, bbox: BBox, base: &Array1<f64>, noise: f64, rng: &mut impl Rng) {
        self.boxes.push(bbox);
        self.features
            .extend(base.iter().map(|v| v + noise * gaussian(rng)));
    }

    fn finish(self) -> (Array2<f64>, Vec<BBox>) {
        let n = self.boxes.len();
        (
            Array2::from_shape_vec((n, self.dim), self.features)
                .expect("row count always matches"),
            self.boxes,
        )
    }
}

fn generate_image(
    image_id: String,
    spec: &SyntheticSpec,
    protos: &Prototypes,
    rng: &mut ChaCha12Rng,
) -> DatasetImage {
    let rho = spec.class_signal_split;
    let noise = spec.feature_noise_std;
    let n_objects = rng.gen_range(spec.objects_per_image.0..=spec.objects_per_image.1);

    // ground truth
    let mut objects = Vec::with_capacity(n_objects);
    for _ in 0..n_objects {
        let class_idx = rng.gen_range(0..ObjectClass::ALL.len());
        let w = rng.gen_range(110.0..180.0);
        let h = rng.gen_range(110.0..180.0);
        let x0 = rng.gen_range(0.0..(IMAGE_WIDTH - w));
        let y0 = rng.gen_range(0.0..(IMAGE_HEIGHT - h));
        let bbox = clamp_box(x0, y0, x0 + w, y0 + h);
        let n_parts = rng.gen_range(spec.parts_per_object.0..=spec.parts_per_object.1);
        let mut parts: Vec<PartInstance> = Vec::with_capacity(n_parts);
        for _ in 0..n_parts {
            let part_idx = rng.gen_range(0..PartClass::ALL.len());
            let coarse_class = PartClass::ALL[part_idx];
            let pool = raw_name_pool(coarse_class);
            // keep same-class parts apart so per-class NMS cannot merge two
            // distinct ground-truth instances
            let mut part_box = sub_box(&bbox, rng);
            for _ in 0..30 {
                let clear = parts.iter().all(|p| {
                    p.coarse_class != coarse_class
                        || crate::geometry::iou_or_zero(&p.bbox, &part_box) < 0.45
                });
                if clear {
                    break;
                }
                part_box = sub_box(&bbox, rng);
            }
            parts.push(PartInstance {
                raw_part_name: pool[rng.gen_range(0..pool.len())].to_string(),
                coarse_class,
                bbox: part_box,
            });
        }
        objects.push(ObjectInstance {
            object_class: ObjectClass::ALL[class_idx],
            bbox,
            parts,
        });
    }

    let object_gt_boxes: Vec<BBox> = objects.iter().map(|o| o.bbox).collect();
    let part_gt_boxes: Vec<BBox> = objects
        .iter()
        .flat_map(|o| o.parts.iter().map(|p| p.bbox))
        .collect();

    // object proposals: ground truth plus one jittered copy each, then
    // background boxes clear of every object
    let mut object_rows = ProposalBuilder::new(spec.feature_dim);
    for object in &objects {
        let c = object.object_class.class_id() - 1;
        let base = protos.object_feature(c, rho);
        object_rows.push(object.bbox, &base, noise, rng);
        object_rows.push(jitter_box(&object.bbox, spec.jitter_std, rng), &base, noise, rng);
    }
    let zero = Array1::zeros(spec.feature_dim);
    for _ in 0..2 {
        if let Some(bbox) = free_box(&object_gt_boxes, (60.0, 160.0), 0.3, rng) {
            object_rows.push(bbox, &zero, noise.max(0.0), rng);
        }
    }

    // part proposals
    let mut part_rows = ProposalBuilder::new(spec.feature_dim);
    for object in &objects {
        let c = object.object_class.class_id() - 1;
        for part in &object.parts {
            let k = part.coarse_class.class_id() - 1;
            let base = protos.part_feature(k, c, rho);
            part_rows.push(part.bbox, &base, noise, rng);
            part_rows.push(jitter_box(&part.bbox, spec.jitter_std, rng), &base, noise, rng);
        }
    }
    // distractor parts, one Bernoulli draw per real part slot
    for object in &objects {
        let c = object.object_class.class_id() - 1;
        for _ in 0..object.parts.len() {
            if rng.gen_bool(spec.distractor_rate) {
                // inside the object and related to it, but carrying a wrong
                // class prototype and the distractor marker
                let other_c = (c + rng.gen_range(1..ObjectClass::ALL.len()))
                    % ObjectClass::ALL.len();
                let k = rng.gen_range(0..PartClass::ALL.len());
                let base = &protos.part[k]
                    + &(DISTRACTOR_CONFUSION_SCALE * rho * &protos.object[other_c])
                    + &(DISTRACTOR_MARKER_SCALE * &protos.distractor);
                for _ in 0..40 {
                    let candidate = sub_box(&object.bbox, rng);
                    if part_gt_boxes
                        .iter()
                        .all(|gt| crate::geometry::iou_or_zero(gt, &candidate) < 0.3)
                    {
                        part_rows.push(candidate, &base, noise, rng);
                        break;
                    }
                }
            }
            if rng.gen_bool(spec.distractor_rate) {
                // off in empty space: feature-identical to a real part, only
                // the missing related object gives it away
                let other_c = rng.gen_range(0..ObjectClass::ALL.len());
                let k = rng.gen_range(0..PartClass::ALL.len());
                let base = protos.part_feature(k, other_c, rho);
                if let Some(bbox) = free_box(&object_gt_boxes, (28.0, 70.0), 0.3, rng) {
                    if part_gt_boxes
                        .iter()
                        .all(|gt| crate::geometry::iou_or_zero(gt, &bbox) < 0.3)
                    {
                        part_rows.push(bbox, &base, noise, rng);
                    }
                }
            }
        }
    }
    // pure-noise background part boxes
    for _ in 0..2 {
        let w = rng.gen_range(25.0..60.0);
        let h = rng.gen_range(25.0..60.0);
        let x0 = rng.gen_range(0.0..(IMAGE_WIDTH - w));
        let y0 = rng.gen_range(0.0..(IMAGE_HEIGHT - h));
        let candidate = clamp_box(x0, y0, x0 + w, y0 + h);
        if part_gt_boxes
            .iter()
            .all(|gt| crate::geometry::iou_or_zero(gt, &candidate) < 0.3)
        {
            part_rows.push(candidate, &zero, noise, rng);
        }
    }

    let (object_features, object_boxes) = object_rows.finish();
    let (part_features, part_boxes) = part_rows.finish();
    DatasetImage {
        annotation: ImageAnnotation {
            image_id,
            width: IMAGE_WIDTH,
            height: IMAGE_HEIGHT,
            objects,
        },
        proposals: ProposalSet::new(object_features, object_boxes, part_features, part_boxes)
            .expect("generated proposals are valid"),
    }
}

/// Generates the train and val splits deterministically from the spec.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let protos = Prototypes::draw(spec.feature_dim, spec.seed);
    let mut train_rng = substream(spec.seed, "synth/train");
    let train = (0..spec.n_images)
        .map(|i| generate_image(format!("train_{i:06}"), spec, &protos, &mut train_rng))
        .collect();
    let mut val_rng = substream(spec.seed, "synth/val");
    let val = (0..spec.n_val_images)
        .map(|i| generate_image(format!("val_{i:06}"), spec, &protos, &mut val_rng))
        .collect();
    Ok(SyntheticDataset { train, val })
}
