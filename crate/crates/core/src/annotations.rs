//! PASCAL-Part-style annotation ingestion.
//!
//! Loads per-image object/part ground truth from a JSON schema, collates the
//! fine-grained raw part names into six coarse part classes, keeps only the
//! six animal object classes, and drops objects that end up with no parts.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// The six animal object classes used throughout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Bird,
    Cat,
    Cow,
    Dog,
    Horse,
    Sheep,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 6] = [
        ObjectClass::Bird,
        ObjectClass::Cat,
        ObjectClass::Cow,
        ObjectClass::Dog,
        ObjectClass::Horse,
        ObjectClass::Sheep,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ObjectClass::Bird => "bird",
            ObjectClass::Cat => "cat",
            ObjectClass::Cow => "cow",
            ObjectClass::Dog => "dog",
            ObjectClass::Horse => "horse",
            ObjectClass::Sheep => "sheep",
        }
    }

    /// 1-based class id; 0 is reserved for background.
    pub fn class_id(&self) -> usize {
        Self::ALL.iter().position(|c| c == self).unwrap() + 1
    }

    pub fn from_class_id(id: usize) -> Option<ObjectClass> {
        (id >= 1).then(|| Self::ALL.get(id - 1).copied()).flatten()
    }
}

impl FromStr for ObjectClass {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or(())
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Coarse part classes after collation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PartClass {
    Face,
    Leg,
    Neck,
    Tail,
    Torso,
    Wings,
}

impl PartClass {
    pub const ALL: [PartClass; 6] = [
        PartClass::Face,
        PartClass::Leg,
        PartClass::Neck,
        PartClass::Tail,
        PartClass::Torso,
        PartClass::Wings,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PartClass::Face => "FACE",
            PartClass::Leg => "LEG",
            PartClass::Neck => "NECK",
            PartClass::Tail => "TAIL",
            PartClass::Torso => "TORSO",
            PartClass::Wings => "WINGS",
        }
    }

    /// 1-based class id; 0 is reserved for background.
    pub fn class_id(&self) -> usize {
        Self::ALL.iter().position(|c| c == self).unwrap() + 1
    }

    pub fn from_class_id(id: usize) -> Option<PartClass> {
        (id >= 1).then(|| Self::ALL.get(id - 1).copied()).flatten()
    }
}

impl fmt::Display for PartClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One annotated semantic part.
#[derive(Debug, Clone, PartialEq)]
pub struct PartInstance {
    pub raw_part_name: String,
    pub coarse_class: PartClass,
    pub bbox: BBox,
}

/// One annotated object together with its parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectInstance {
    pub object_class: ObjectClass,
    pub bbox: BBox,
    pub parts: Vec<PartInstance>,
}

/// Ground truth for a single image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageAnnotation {
    pub image_id: String,
    pub width: f64,
    pub height: f64,
    pub objects: Vec<ObjectInstance>,
}

/// Mapping from raw part names to coarse classes.
///
/// Beyond the explicit table, any raw name containing one of
/// `leg_substrings` or listed in `leg_names` maps to LEG. Coarse class names
/// map to themselves, which makes collation idempotent.
#[derive(Debug, Clone)]
pub struct CollationMap {
    explicit: BTreeMap<String, PartClass>,
    leg_substrings: Vec<String>,
    leg_names: Vec<String>,
}

/// On-disk shape of a collation map: one array of raw names per coarse
/// class plus the LEG substring/whitelist rules.
#[derive(Debug, Serialize, Deserialize, Default)]
struct CollationMapFile {
    #[serde(rename = "FACE", default)]
    face: Vec<String>,
    #[serde(rename = "LEG", default)]
    leg: Vec<String>,
    #[serde(rename = "NECK", default)]
    neck: Vec<String>,
    #[serde(rename = "TAIL", default)]
    tail: Vec<String>,
    #[serde(rename = "TORSO", default)]
    torso: Vec<String>,
    #[serde(rename = "WINGS", default)]
    wings: Vec<String>,
    #[serde(default)]
    leg_substrings: Vec<String>,
    #[serde(default)]
    leg_names: Vec<String>,
}

impl Default for CollationMap {
    fn default() -> Self {
        let face = [
            "beak", "hair", "head", "nose", "lear", "lebrow", "leye", "mouth", "rear", "rebrow",
            "reye",
        ];
        let wings = ["lwing", "rwing"];
        let leg_names = [
            "lfpa", "rfpa", "lbpa", "rbpa", "lfho", "rfho", "lbho", "rbho", "lfleg", "rfleg",
            "lbleg", "rbleg", "lfoot", "rfoot",
        ];
        let mut explicit = BTreeMap::new();
        for name in face {
            explicit.insert(name.to_string(), PartClass::Face);
        }
        for name in wings {
            explicit.insert(name.to_string(), PartClass::Wings);
        }
        explicit.insert("neck".to_string(), PartClass::Neck);
        explicit.insert("tail".to_string(), PartClass::Tail);
        explicit.insert("torso".to_string(), PartClass::Torso);
        CollationMap {
            explicit,
            leg_substrings: vec!["leg".to_string()],
            leg_names: leg_names.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl CollationMap {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: CollationMapFile =
            serde_json::from_str(text).map_err(|e| json_error(text, &e))?;
        let mut explicit = BTreeMap::new();
        let groups = [
            (PartClass::Face, &file.face),
            (PartClass::Leg, &file.leg),
            (PartClass::Neck, &file.neck),
            (PartClass::Tail, &file.tail),
            (PartClass::Torso, &file.torso),
            (PartClass::Wings, &file.wings),
        ];
        for (class, names) in groups {
            for name in names {
                explicit.insert(name.clone(), class);
            }
        }
        Ok(CollationMap {
            explicit,
            leg_substrings: file.leg_substrings,
            leg_names: file.leg_names,
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Resolves a raw part name to its coarse class, or `None` if unmapped.
    pub fn collate(&self, raw: &str) -> Option<PartClass> {
        if let Some(class) = self.explicit.get(raw) {
            return Some(*class);
        }
        // coarse names map to themselves
        if let Some(class) = PartClass::ALL
            .iter()
            .find(|c| c.name().eq_ignore_ascii_case(raw))
        {
            return Some(*class);
        }
        if self.leg_names.iter().any(|n| n == raw) {
            return Some(PartClass::Leg);
        }
        if self.leg_substrings.iter().any(|s| raw.contains(s.as_str())) {
            return Some(PartClass::Leg);
        }
        None
    }
}

// --- JSON schema -----------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct FileRoot {
    images: Vec<FileImage>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FileImage {
    image_id: String,
    width: f64,
    height: f64,
    objects: Vec<FileObject>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FileObject {
    class: String,
    bbox: [f64; 4],
    parts: Vec<FilePart>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FilePart {
    name: String,
    bbox: [f64; 4],
}

fn json_error(text: &str, err: &serde_json::Error) -> Error {
    let (line, column) = (err.line(), err.column());
    // serde_json reports 1-based line and column; recover the byte offset.
    let mut offset = 0usize;
    for (idx, l) in text.split_inclusive('\n').enumerate() {
        if idx + 1 == line {
            offset += column.saturating_sub(1).min(l.len());
            break;
        }
        offset += l.len();
    }
    Error::Parse {
        offset,
        line,
        column,
        message: err.to_string(),
    }
}

/// A raw part name that no collation rule covered, keyed by image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedPart {
    pub image_id: String,
    pub raw_part_name: String,
}

/// Result of loading one annotation file.
#[derive(Debug)]
pub struct LoadOutcome {
    pub annotations: Vec<ImageAnnotation>,
    /// Unmapped part names, in file order.
    pub rejected_parts: Vec<RejectedPart>,
    /// Objects skipped because their class is not one of the six animals.
    pub skipped_object_classes: usize,
}

impl LoadOutcome {
    /// Rejection report text: one `image_id<TAB>raw_part_name` line per entry.
    pub fn rejection_report(&self) -> String {
        let mut out = String::new();
        for r in &self.rejected_parts {
            out.push_str(&r.image_id);
            out.push('\t');
            out.push_str(&r.raw_part_name);
            out.push('\n');
        }
        out
    }
}

fn bbox_from_array(raw: [f64; 4], width: f64, height: f64, context: &str) -> Result<BBox> {
    let b = BBox::new(raw[0], raw[1], raw[2], raw[3])
        .map_err(|_| Error::Schema(format!("{context}: malformed bbox {raw:?}")))?;
    Ok(b.clamp_to(width, height))
}

/// Parses, collates and filters annotations from JSON text.
pub fn parse_annotations(text: &str, collation: &CollationMap) -> Result<LoadOutcome> {
    let root: FileRoot = serde_json::from_str(text).map_err(|e| json_error(text, &e))?;
    let mut annotations = Vec::with_capacity(root.images.len());
    let mut rejected_parts = Vec::new();
    let mut skipped_object_classes = 0usize;

    for image in root.images {
        if !(image.width > 0.0 && image.height > 0.0) {
            return Err(Error::Schema(format!(
                "image {}: non-positive dimensions {}x{}",
                image.image_id, image.width, image.height
            )));
        }
        let mut objects = Vec::new();
        for object in image.objects {
            let Ok(object_class) = ObjectClass::from_str(&object.class) else {
                skipped_object_classes += 1;
                continue;
            };
            let context = format!("image {} object {}", image.image_id, object.class);
            let object_box = bbox_from_array(object.bbox, image.width, image.height, &context)?;
            let mut parts = Vec::new();
            for part in object.parts {
                match collation.collate(&part.name) {
                    Some(coarse_class) => {
                        let context = format!("{context} part {}", part.name);
                        parts.push(PartInstance {
                            raw_part_name: part.name,
                            coarse_class,
                            bbox: bbox_from_array(
                                part.bbox,
                                image.width,
                                image.height,
                                &context,
                            )?,
                        });
                    }
                    None => rejected_parts.push(RejectedPart {
                        image_id: image.image_id.clone(),
                        raw_part_name: part.name,
                    }),
                }
            }
            // objects with no usable part information drop out
            if !parts.is_empty() {
                objects.push(ObjectInstance {
                    object_class,
                    bbox: object_box,
                    parts,
                });
            }
        }
        // images are retained even when every object was filtered away
        annotations.push(ImageAnnotation {
            image_id: image.image_id,
            width: image.width,
            height: image.height,
            objects,
        });
    }

    Ok(LoadOutcome {
        annotations,
        rejected_parts,
        skipped_object_classes,
    })
}

/// Loads annotations from a file path. See [`parse_annotations`].
pub fn load_annotations(path: &Path, collation: &CollationMap) -> Result<LoadOutcome> {
    parse_annotations(&std::fs::read_to_string(path)?, collation)
}

/// Serializes annotations back to the ingestion schema (raw part names are
/// preserved, so a save/load round trip is the identity).
pub fn annotations_to_json(annotations: &[ImageAnnotation]) -> String {
    let root = FileRoot {
        images: annotations
            .iter()
            .map(|img| FileImage {
                image_id: img.image_id.clone(),
                width: img.width,
                height: img.height,
                objects: img
                    .objects
                    .iter()
                    .map(|obj| FileObject {
                        class: obj.object_class.name().to_string(),
                        bbox: [
                            obj.bbox.x_min,
                            obj.bbox.y_min,
                            obj.bbox.x_max,
                            obj.bbox.y_max,
                        ],
                        parts: obj
                            .parts
                            .iter()
                            .map(|p| FilePart {
                                name: p.raw_part_name.clone(),
                                bbox: [p.bbox.x_min, p.bbox.y_min, p.bbox.x_max, p.bbox.y_max],
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&root).expect("annotation schema serializes")
}

pub fn save_annotations(path: &Path, annotations: &[ImageAnnotation]) -> Result<()> {
    std::fs::write(path, annotations_to_json(annotations))?;
    Ok(())
}

// --- mask to box -----------------------------------------------------------

/// Run-length-encoded binary mask in row-major scanline order. `counts`
/// alternates zero-runs and one-runs, starting with a (possibly empty)
/// zero-run, and must sum to `width * height`.
#[derive(Debug, Clone)]
pub struct RleMask {
    pub width: usize,
    pub height: usize,
    pub counts: Vec<u64>,
}

/// Tightest box containing every set pixel, in pixel-edge coordinates:
/// a single set pixel at row r, column c yields `(c, r, c+1, r+1)`.
pub fn mask_bbox(mask: &RleMask) -> Result<BBox> {
    let total: u64 = mask.counts.iter().sum();
    let expected = (mask.width as u64) * (mask.height as u64);
    if total != expected {
        return Err(Error::Schema(format!(
            "mask runs sum to {total}, expected {expected} for {}x{}",
            mask.width, mask.height
        )));
    }
    if mask.width == 0 || mask.height == 0 {
        return Err(Error::EmptySegmentation);
    }

    let width = mask.width as u64;
    let (mut min_row, mut max_row) = (u64::MAX, 0u64);
    let (mut min_col, mut max_col) = (u64::MAX, 0u64);
    let mut pos = 0u64;
    let mut any = false;
    for (run_idx, &count) in mask.counts.iter().enumerate() {
        let start = pos;
        pos += count;
        if run_idx % 2 == 0 || count == 0 {
            continue; // zero-run
        }
        any = true;
        let end = pos - 1; // inclusive last set pixel of this run
        let (row_start, row_end) = (start / width, end / width);
        min_row = min_row.min(row_start);
        max_row = max_row.max(row_end);
        if row_start == row_end {
            min_col = min_col.min(start % width);
            max_col = max_col.max(end % width);
        } else {
            // a run spanning rows touches column 0 and column width-1
            min_col = 0;
            max_col = max_col.max(width - 1);
        }
    }
    if !any {
        return Err(Error::EmptySegmentation);
    }
    BBox::new(
        min_col as f64,
        min_row as f64,
        (max_col + 1) as f64,
        (max_row + 1) as f64,
    )
}

// --- statistics ------------------------------------------------------------

/// Instance histograms over one annotation list (one split).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub images: usize,
    pub objects: usize,
    pub parts: usize,
    pub per_object_class: BTreeMap<ObjectClass, usize>,
    pub per_part_class: BTreeMap<PartClass, usize>,
}

pub fn dataset_stats(annotations: &[ImageAnnotation]) -> DatasetStats {
    let mut per_object_class: BTreeMap<ObjectClass, usize> =
        ObjectClass::ALL.iter().map(|c| (*c, 0)).collect();
    let mut per_part_class: BTreeMap<PartClass, usize> =
        PartClass::ALL.iter().map(|c| (*c, 0)).collect();
    let mut objects = 0;
    let mut parts = 0;
    for image in annotations {
        for object in &image.objects {
            objects += 1;
            *per_object_class.get_mut(&object.object_class).unwrap() += 1;
            for part in &object.parts {
                parts += 1;
                *per_part_class.get_mut(&part.coarse_class).unwrap() += 1;
            }
        }
    }
    DatasetStats {
        images: annotations.len(),
        objects,
        parts,
        per_object_class,
        per_part_class,
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "images: {}  objects: {}  parts: {}",
            self.images, self.objects, self.parts
        )?;
        writeln!(f, "{:<10} {:>8}", "class", "objects")?;
        for (class, count) in &self.per_object_class {
            writeln!(f, "{:<10} {:>8}", class.name(), count)?;
        }
        writeln!(f, "{:<10} {:>8}", "class", "parts")?;
        for (class, count) in &self.per_part_class {
            writeln!(f, "{:<10} {:>8}", class.name(), count)?;
        }
        Ok(())
    }
}
