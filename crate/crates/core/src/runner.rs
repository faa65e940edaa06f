//! Pipeline wiring: dataset directories, the training loop, checkpoint
//! evaluation, NMS sweeps, and report files.
//!
//! Everything here is deterministic given (seed, config): data loading
//! sorts by image id, training is single-threaded, and reports carry no
//! timestamps, so two identical runs produce byte-identical artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Axis;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::annotations::{
    annotations_to_json, load_annotations, CollationMap, ImageAnnotation, ObjectClass, PartClass,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    mean_ap, nms_sweep, Detection, GroundTruth, MatchCriterion, MeanApResult, SweepTable,
    DEFAULT_NMS_SWEEP,
};
use crate::fusion::{build_fusion_graph, read_feature_file, write_feature_file};
use crate::geometry::{hflip, nms, BBox, ScoredBox};
use crate::learner::{
    assign_targets, backward, decode_deltas, forward, log_softmax_row, save_checkpoint, sgd_step,
    Checkpoint, JointHeadParams, LossBreakdown, Mode, TrainConfig,
};
use crate::rng::substream;
use crate::synthetic::{generate_synthetic, DatasetImage, SyntheticSpec};

/// Where a run's data comes from: generated on the fly or a directory of
/// annotation + feature files. Exactly one source, by construction.
#[derive(Debug, Clone)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Directory(PathBuf),
}

/// A full training run description.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: Mode,
    pub train: TrainConfig,
    pub data: DataSource,
    pub out_dir: PathBuf,
}

// --- dataset directories ----------------------------------------------------

/// Writes one split: `annotations.json` plus `features/<image_id>.pfus`.
pub fn save_split(dir: &Path, images: &[DatasetImage]) -> Result<()> {
    std::fs::create_dir_all(dir.join("features"))?;
    let annotations: Vec<ImageAnnotation> =
        images.iter().map(|d| d.annotation.clone()).collect();
    std::fs::write(dir.join("annotations.json"), annotations_to_json(&annotations))?;
    for image in images {
        write_feature_file(
            &dir.join("features")
                .join(format!("{}.pfus", image.annotation.image_id)),
            &image.proposals,
        )?;
    }
    Ok(())
}

/// Loads one split, sorted by image id. Every annotated image must have a
/// matching feature file.
pub fn load_split(dir: &Path) -> Result<Vec<DatasetImage>> {
    let outcome = load_annotations(&dir.join("annotations.json"), &CollationMap::default())?;
    let mut annotations = outcome.annotations;
    annotations.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    annotations
        .into_iter()
        .map(|annotation| {
            let path = dir
                .join("features")
                .join(format!("{}.pfus", annotation.image_id));
            if !path.exists() {
                return Err(Error::Schema(format!(
                    "missing feature file for image {}",
                    annotation.image_id
                )));
            }
            Ok(DatasetImage {
                proposals: read_feature_file(&path)?,
                annotation,
            })
        })
        .collect()
}

/// Writes `train/` and `val/` splits under `dir`.
pub fn save_dataset(dir: &Path, train: &[DatasetImage], val: &[DatasetImage]) -> Result<()> {
    save_split(&dir.join("train"), train)?;
    save_split(&dir.join("val"), val)
}

pub fn load_dataset(dir: &Path) -> Result<(Vec<DatasetImage>, Vec<DatasetImage>)> {
    Ok((load_split(&dir.join("train"))?, load_split(&dir.join("val"))?))
}

fn resolve_data(source: &DataSource) -> Result<(Vec<DatasetImage>, Vec<DatasetImage>)> {
    match source {
        DataSource::Synthetic(spec) => {
            let data = generate_synthetic(spec)?;
            Ok((data.train, data.val))
        }
        DataSource::Directory(dir) => load_dataset(dir),
    }
}

// --- augmentation -------------------------------------------------------------

fn flip_annotation(annotation: &ImageAnnotation) -> Result<ImageAnnotation> {
    let width = annotation.width;
    let mut flipped = annotation.clone();
    for object in &mut flipped.objects {
        object.bbox = hflip(&object.bbox, width)?;
        for part in &mut object.parts {
            part.bbox = hflip(&part.bbox, width)?;
        }
    }
    Ok(flipped)
}

/// With probability `p_flip`, mirrors every ground-truth and proposal box
/// horizontally; features are left untouched. Returns whether a flip
/// happened. Consumes exactly one RNG draw either way.
pub fn apply_augmentation(
    image: &mut DatasetImage,
    p_flip: f64,
    rng: &mut impl Rng,
) -> Result<bool> {
    if !(0.0..=1.0).contains(&p_flip) {
        return Err(Error::Config(format!(
            "flip probability must lie in [0, 1], got {p_flip}"
        )));
    }
    if !rng.gen_bool(p_flip) {
        return Ok(false);
    }
    image.annotation = flip_annotation(&image.annotation)?;
    image.proposals = image.proposals.hflip(image.annotation.width)?;
    Ok(true)
}

// --- training -----------------------------------------------------------------

/// One line of the per-epoch training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub cls_obj: f64,
    pub reg_obj: f64,
    pub cls_part: f64,
    pub reg_part: f64,
    pub val_map_object: f64,
    pub val_map_part: f64,
}

fn feature_dim_of(images: &[DatasetImage]) -> Result<usize> {
    let mut dims = images.iter().map(|d| d.proposals.feature_dim());
    let Some(first) = dims.next() else {
        return Err(Error::Config("dataset has no images".into()));
    };
    if dims.any(|d| d != first) {
        return Err(Error::Vocabulary(
            "images disagree on feature dimension".into(),
        ));
    }
    Ok(first)
}

/// Trains the head on one split, logging val mAP@0.5 after every epoch.
pub fn train_on(
    train: &[DatasetImage],
    val: &[DatasetImage],
    config: &TrainConfig,
    mode: Mode,
) -> Result<(Checkpoint, Vec<EpochLog>)> {
    config.validate()?;
    let feature_dim = feature_dim_of(train)?;
    let mut init_rng = substream(config.seed, "init");
    let mut params = JointHeadParams::init(feature_dim, config.hidden_dim, &mut init_rng);
    let mut momentum = params.zeros_like();
    let mut aug_rng = substream(config.seed, "augmentation");
    let mut logs = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut sum = LossBreakdown {
            total: 0.0,
            cls_obj: 0.0,
            reg_obj: 0.0,
            cls_part: 0.0,
            reg_part: 0.0,
        };
        for image in train {
            let mut instance = image.clone();
            apply_augmentation(&mut instance, config.flip_prob, &mut aug_rng)?;
            let graph = build_fusion_graph(&instance.proposals, config.fusion_thresh)?;
            let targets = assign_targets(&instance.proposals, &instance.annotation, config.assign_iou);
            let (breakdown, grads) =
                backward(&instance.proposals, &graph, &params, &targets, mode)?;
            if !breakdown.total.is_finite() {
                return Err(Error::NonFinite {
                    layer: format!(
                        "loss at epoch {epoch}, image {}",
                        instance.annotation.image_id
                    ),
                });
            }
            sum.total += breakdown.total;
            sum.cls_obj += breakdown.cls_obj;
            sum.reg_obj += breakdown.reg_obj;
            sum.cls_part += breakdown.cls_part;
            sum.reg_part += breakdown.reg_part;
            sgd_step(&mut params, &grads, &mut momentum, config, epoch);
        }
        let n = train.len().max(1) as f64;
        let (val_map_object, val_map_part) = if val.is_empty() {
            (0.0, 0.0)
        } else {
            let report = evaluate_model(
                &params,
                config.fusion_thresh,
                mode,
                val,
                &[0.5],
                0.5,
                MatchCriterion::GreaterEqual,
            )?;
            (report.object_map(0.5), report.part_map(0.5))
        };
        logs.push(EpochLog {
            epoch,
            learning_rate: crate::learner::learning_rate(config, epoch),
            train_loss: sum.total / n,
            cls_obj: sum.cls_obj / n,
            reg_obj: sum.reg_obj / n,
            cls_part: sum.cls_part / n,
            reg_part: sum.reg_part / n,
            val_map_object,
            val_map_part,
        });
    }

    Ok((
        Checkpoint {
            config: config.clone(),
            mode,
            feature_dim,
            epoch: config.epochs,
            params,
            momentum,
        },
        logs,
    ))
}

/// Outcome of a file-level training run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub logs: Vec<EpochLog>,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
}

/// Trains per the run config and writes `checkpoint.pfck`, `train_log.jsonl`
/// and `summary.json` into the output directory.
pub fn run_training(run: &RunConfig) -> Result<TrainOutcome> {
    let (train, val) = resolve_data(&run.data)?;
    let (checkpoint, logs) = train_on(&train, &val, &run.train, run.mode)?;
    std::fs::create_dir_all(&run.out_dir)?;
    let checkpoint_path = run.out_dir.join("checkpoint.pfck");
    save_checkpoint(&checkpoint_path, &checkpoint)?;
    let log_path = run.out_dir.join("train_log.jsonl");
    let mut log_text = String::new();
    for log in &logs {
        log_text.push_str(&serde_json::to_string(log).expect("log serializes"));
        log_text.push('\n');
    }
    std::fs::write(&log_path, log_text)?;
    let summary = serde_json::json!({
        "mode": checkpoint.mode.name(),
        "epochs": checkpoint.epoch,
        "feature_dim": checkpoint.feature_dim,
        "n_params": checkpoint.params.n_params(),
        "final_val_map_object": logs.last().map(|l| l.val_map_object),
        "final_val_map_part": logs.last().map(|l| l.val_map_part),
    });
    std::fs::write(
        run.out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    Ok(TrainOutcome {
        checkpoint,
        logs,
        checkpoint_path,
        log_path,
    })
}

// --- inference and evaluation ---------------------------------------------------

fn side_detections(
    image_id: &str,
    image_width: f64,
    image_height: f64,
    boxes: &[BBox],
    logits: &ndarray::Array2<f64>,
    deltas: &ndarray::Array2<f64>,
) -> Result<Vec<Detection>> {
    let mut dets = Vec::new();
    for (i, proposal) in boxes.iter().enumerate() {
        if proposal.area() <= 0.0 {
            continue;
        }
        let log_probs = log_softmax_row(logits.row(i));
        let (argmax, _) = log_probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("at least one class");
        if argmax == crate::learner::BACKGROUND {
            continue;
        }
        let row = deltas.index_axis(Axis(0), i);
        let decoded = decode_deltas(proposal, &[row[0], row[1], row[2], row[3]])?
            .clamp_to(image_width, image_height);
        dets.push(Detection {
            image_id: image_id.to_string(),
            class_id: argmax,
            bbox: decoded,
            score: log_probs[argmax].exp(),
        });
    }
    Ok(dets)
}

/// Raw per-side detections (before NMS) for a whole dataset.
pub fn raw_detections(
    params: &JointHeadParams,
    fusion_thresh: f64,
    mode: Mode,
    dataset: &[DatasetImage],
) -> Result<(Vec<Detection>, Vec<Detection>)> {
    let mut object_dets = Vec::new();
    let mut part_dets = Vec::new();
    for image in dataset {
        let graph = build_fusion_graph(&image.proposals, fusion_thresh)?;
        let pass = forward(&image.proposals, &graph, params, mode)?;
        let annotation = &image.annotation;
        object_dets.extend(side_detections(
            &annotation.image_id,
            annotation.width,
            annotation.height,
            image.proposals.object_boxes(),
            &pass.object.logits,
            &pass.object.deltas,
        )?);
        part_dets.extend(side_detections(
            &annotation.image_id,
            annotation.width,
            annotation.height,
            image.proposals.part_boxes(),
            &pass.part.logits,
            &pass.part.deltas,
        )?);
    }
    Ok((object_dets, part_dets))
}

fn apply_nms_per_image(dets: &[Detection], threshold: f64) -> Vec<Detection> {
    let mut by_image: BTreeMap<&str, Vec<&Detection>> = BTreeMap::new();
    for det in dets {
        by_image.entry(det.image_id.as_str()).or_default().push(det);
    }
    let mut kept = Vec::new();
    for (image_id, group) in by_image {
        let boxes: Vec<ScoredBox> = group
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
    kept
}

/// Ground truth for the object side of a dataset.
pub fn object_ground_truth(dataset: &[DatasetImage]) -> GroundTruth {
    let mut truth = GroundTruth::new();
    for image in dataset {
        for object in &image.annotation.objects {
            truth.insert(
                &image.annotation.image_id,
                object.object_class.class_id(),
                object.bbox,
            );
        }
    }
    truth
}

/// Ground truth for the part side of a dataset.
pub fn part_ground_truth(dataset: &[DatasetImage]) -> GroundTruth {
    let mut truth = GroundTruth::new();
    for image in dataset {
        for object in &image.annotation.objects {
            for part in &object.parts {
                truth.insert(
                    &image.annotation.image_id,
                    part.coarse_class.class_id(),
                    part.bbox,
                );
            }
        }
    }
    truth
}

/// Both sides of a model evaluation.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub mode: Mode,
    pub nms_threshold: f64,
    pub object: MeanApResult,
    pub part: MeanApResult,
    pub object_detections: Vec<Detection>,
    pub part_detections: Vec<Detection>,
}

impl EvalReport {
    pub fn object_map(&self, iou: f64) -> f64 {
        self.object.at_threshold(iou).map_or(0.0, |r| r.map)
    }

    pub fn part_map(&self, iou: f64) -> f64 {
        self.part.at_threshold(iou).map_or(0.0, |r| r.map)
    }

    /// Mean of the object and part mAPs at the given IoU.
    pub fn overall_map(&self, iou: f64) -> f64 {
        0.5 * (self.object_map(iou) + self.part_map(iou))
    }
}

/// Decodes detections from the head, applies per-class NMS, and scores both
/// sides against the dataset's ground truth.
pub fn evaluate_model(
    params: &JointHeadParams,
    fusion_thresh: f64,
    mode: Mode,
    dataset: &[DatasetImage],
    iou_thresholds: &[f64],
    nms_threshold: f64,
    criterion: MatchCriterion,
) -> Result<EvalReport> {
    let (raw_object, raw_part) = raw_detections(params, fusion_thresh, mode, dataset)?;
    let object_detections = apply_nms_per_image(&raw_object, nms_threshold);
    let part_detections = apply_nms_per_image(&raw_part, nms_threshold);
    let object = mean_ap(
        &object_detections,
        &object_ground_truth(dataset),
        iou_thresholds,
        criterion,
    )?;
    let part = mean_ap(
        &part_detections,
        &part_ground_truth(dataset),
        iou_thresholds,
        criterion,
    )?;
    Ok(EvalReport {
        mode,
        nms_threshold,
        object,
        part,
        object_detections,
        part_detections,
    })
}

/// Applies the checkpoint to a dataset directory's val split.
pub fn evaluate_checkpoint(
    checkpoint: &Checkpoint,
    dataset: &[DatasetImage],
    iou_thresholds: &[f64],
    nms_threshold: f64,
) -> Result<EvalReport> {
    let feature_dim = feature_dim_of(dataset)?;
    if feature_dim != checkpoint.feature_dim {
        return Err(Error::Vocabulary(format!(
            "checkpoint was trained at D={}, dataset has D={feature_dim}",
            checkpoint.feature_dim
        )));
    }
    evaluate_model(
        &checkpoint.params,
        checkpoint.config.fusion_thresh,
        checkpoint.mode,
        dataset,
        iou_thresholds,
        nms_threshold,
        MatchCriterion::GreaterEqual,
    )
}

/// Part-side NMS threshold sweep from raw (pre-suppression) detections.
pub fn sweep_part_nms(
    checkpoint: &Checkpoint,
    dataset: &[DatasetImage],
    thresholds: &[f64],
    iou_eval: f64,
) -> Result<SweepTable> {
    let (_, raw_part) = raw_detections(
        &checkpoint.params,
        checkpoint.config.fusion_thresh,
        checkpoint.mode,
        dataset,
    )?;
    nms_sweep(
        &raw_part,
        &part_ground_truth(dataset),
        thresholds,
        iou_eval,
        MatchCriterion::GreaterEqual,
    )
}

pub fn default_nms_sweep_grid() -> Vec<f64> {
    DEFAULT_NMS_SWEEP.to_vec()
}

// --- class vocabulary helpers ----------------------------------------------------

pub fn object_class_name(class_id: usize) -> String {
    ObjectClass::from_class_id(class_id)
        .map(|c| c.name().to_string())
        .unwrap_or_else(|| format!("object_{class_id}"))
}

pub fn part_class_name(class_id: usize) -> String {
    PartClass::from_class_id(class_id)
        .map(|c| c.name().to_string())
        .unwrap_or_else(|| format!("part_{class_id}"))
}

// --- report files ------------------------------------------------------------------

#[derive(Serialize)]
struct ThresholdReport {
    iou_threshold: f64,
    map: f64,
    per_class_ap: BTreeMap<String, f64>,
    per_class_counts: BTreeMap<String, (usize, usize, usize)>,
}

#[derive(Serialize)]
struct SideReport {
    mean_over_thresholds: f64,
    thresholds: Vec<ThresholdReport>,
}

fn side_report(result: &MeanApResult, name_of: fn(usize) -> String) -> SideReport {
    SideReport {
        mean_over_thresholds: result.mean_over_thresholds,
        thresholds: result
            .results
            .iter()
            .map(|r| ThresholdReport {
                iou_threshold: r.iou_threshold,
                map: r.map,
                per_class_ap: r
                    .per_class
                    .iter()
                    .map(|(id, c)| (name_of(*id), c.ap))
                    .collect(),
                per_class_counts: r
                    .per_class
                    .iter()
                    .map(|(id, c)| (name_of(*id), (c.n_gt, c.tp, c.fp)))
                    .collect(),
            })
            .collect(),
    }
}

fn render_side_table(out: &mut String, side: &str, result: &MeanApResult, name_of: fn(usize) -> String) {
    for r in &result.results {
        out.push_str(&format!(
            "{side} detection, AP at IoU={:.2}\n",
            r.iou_threshold
        ));
        for (id, c) in &r.per_class {
            out.push_str(&format!(
                "  {:<8} {:>6.1}   (gt {:>4}, tp {:>4}, fp {:>4})\n",
                name_of(*id),
                100.0 * c.ap,
                c.n_gt,
                c.tp,
                c.fp
            ));
        }
        out.push_str(&format!("  {:<8} {:>6.1}\n\n", "mAP", 100.0 * r.map));
    }
}

/// Detections JSONL: one `{"image_id", "class", "bbox", "score"}` per line.
pub fn detections_to_jsonl(dets: &[Detection], name_of: fn(usize) -> String) -> String {
    let mut out = String::new();
    for d in dets {
        let line = serde_json::json!({
            "image_id": d.image_id,
            "class": name_of(d.class_id),
            "bbox": [d.bbox.x_min, d.bbox.y_min, d.bbox.x_max, d.bbox.y_max],
            "score": d.score,
        });
        out.push_str(&serde_json::to_string(&line).expect("detection serializes"));
        out.push('\n');
    }
    out
}

/// Parses a detections JSONL file, resolving class names against both sides'
/// vocabularies via `name_to_id`.
pub fn detections_from_jsonl(
    text: &str,
    name_to_id: impl Fn(&str) -> Option<usize>,
) -> Result<Vec<Detection>> {
    #[derive(Deserialize)]
    struct Line {
        image_id: String,
        class: String,
        bbox: [f64; 4],
        score: f64,
    }
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(idx, line)| {
            let parsed: Line = serde_json::from_str(line).map_err(|e| {
                Error::Schema(format!("detections line {}: {e}", idx + 1))
            })?;
            let class_id = name_to_id(&parsed.class).ok_or_else(|| {
                Error::Vocabulary(format!(
                    "detections line {}: unknown class {:?}",
                    idx + 1,
                    parsed.class
                ))
            })?;
            Ok(Detection {
                image_id: parsed.image_id,
                class_id,
                bbox: BBox::new(parsed.bbox[0], parsed.bbox[1], parsed.bbox[2], parsed.bbox[3])?,
                score: parsed.score,
            })
        })
        .collect()
}

pub fn object_class_id(name: &str) -> Option<usize> {
    ObjectClass::ALL
        .iter()
        .find(|c| c.name() == name)
        .map(|c| c.class_id())
}

pub fn part_class_id(name: &str) -> Option<usize> {
    PartClass::ALL
        .iter()
        .find(|c| c.name() == name)
        .map(|c| c.class_id())
}

/// Writes `report.json`, `report.txt`, `pr_points.csv` and the two
/// detections JSONL files into `report_dir`.
pub fn write_eval_report(report_dir: &Path, report: &EvalReport) -> Result<()> {
    std::fs::create_dir_all(report_dir)?;
    let json = serde_json::json!({
        "mode": report.mode.name(),
        "nms_threshold": report.nms_threshold,
        "object": side_report(&report.object, object_class_name),
        "part": side_report(&report.part, part_class_name),
        "n_object_detections": report.object_detections.len(),
        "n_part_detections": report.part_detections.len(),
    });
    std::fs::write(
        report_dir.join("report.json"),
        serde_json::to_string_pretty(&json).expect("report serializes"),
    )?;

    let mut text = format!(
        "mode {}, NMS threshold {:.2}\n\n",
        report.mode.name(),
        report.nms_threshold
    );
    render_side_table(&mut text, "object", &report.object, object_class_name);
    render_side_table(&mut text, "part", &report.part, part_class_name);
    std::fs::write(report_dir.join("report.txt"), text)?;

    let mut csv = String::from("side,class,iou_threshold,recall,precision\n");
    for (side, result, name_of) in [
        ("object", &report.object, object_class_name as fn(usize) -> String),
        ("part", &report.part, part_class_name as fn(usize) -> String),
    ] {
        for r in &result.results {
            for (id, c) in &r.per_class {
                for (recall, precision) in &c.pr_points {
                    csv.push_str(&format!(
                        "{side},{},{},{recall},{precision}\n",
                        name_of(*id),
                        r.iou_threshold
                    ));
                }
            }
        }
    }
    std::fs::write(report_dir.join("pr_points.csv"), csv)?;

    std::fs::write(
        report_dir.join("detections_object.jsonl"),
        detections_to_jsonl(&report.object_detections, object_class_name),
    )?;
    std::fs::write(
        report_dir.join("detections_part.jsonl"),
        detections_to_jsonl(&report.part_detections, part_class_name),
    )?;
    Ok(())
}

/// Renders the sweep as JSON plus a two-column text table.
pub fn write_sweep_report(report_dir: &Path, table: &SweepTable) -> Result<()> {
    std::fs::create_dir_all(report_dir)?;
    std::fs::write(
        report_dir.join("sweep_nms.json"),
        serde_json::to_string_pretty(table).expect("sweep serializes"),
    )?;
    let mut text = format!(
        "part detection: NMS threshold sweep, mAP at IoU={:.2}\n\n",
        table.iou_threshold
    );
    text.push_str(&format!("{:<15} {:>10}\n", "NMS threshold", "mAP"));
    for row in &table.rows {
        text.push_str(&format!(
            "{:<15} {:>10.1}\n",
            format!("{:.2}", row.nms_threshold),
            100.0 * row.map
        ));
    }
    std::fs::write(report_dir.join("sweep_nms.txt"), text)?;
    Ok(())
}

// --- mode grid ----------------------------------------------------------------------

/// One row of the three-mode comparison.
#[derive(Debug, Clone, Serialize)]
pub struct ModeGridRow {
    pub label: String,
    pub object_map: Option<f64>,
    pub part_map: Option<f64>,
}

/// Trains and evaluates the separate-model baselines and the joint model on
/// the same data, mirroring the three-row comparison layout.
pub fn run_mode_grid(
    train: &[DatasetImage],
    val: &[DatasetImage],
    config: &TrainConfig,
    include_naive: bool,
) -> Result<Vec<ModeGridRow>> {
    let mut modes = vec![
        ("Object Detection", Mode::ObjectOnly),
        ("Part Detection", Mode::PartOnly),
        ("Joint Object and Part Detection", Mode::Joint),
    ];
    if include_naive {
        modes.push(("Naive-Average Joint Detection", Mode::NaiveAverage));
    }
    modes
        .into_iter()
        .map(|(label, mode)| {
            let (checkpoint, _) = train_on(train, val, config, mode)?;
            let report = evaluate_checkpoint(&checkpoint, val, &[0.5], 0.5)?;
            Ok(ModeGridRow {
                label: label.to_string(),
                object_map: mode.trains_object_side().then(|| report.object_map(0.5)),
                part_map: mode.trains_part_side().then(|| report.part_map(0.5)),
            })
        })
        .collect()
}

/// Text table mirroring the three-mode summary layout.
pub fn render_mode_grid(rows: &[ModeGridRow]) -> String {
    let fmt = |v: Option<f64>| match v {
        Some(m) => format!("{:.1}", 100.0 * m),
        None => "--".to_string(),
    };
    let mut out = format!(
        "{:<36} {:>18} {:>18}\n",
        "Model", "Object mAP@0.5", "Part mAP@0.5"
    );
    for row in rows {
        out.push_str(&format!(
            "{:<36} {:>18} {:>18}\n",
            row.label,
            fmt(row.object_map),
            fmt(row.part_map)
        ));
    }
    out
}
