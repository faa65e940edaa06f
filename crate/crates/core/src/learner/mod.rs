//! Trainable joint detection head.
//!
//! Both sides share one structure: the anchor's own feature is concatenated
//! with its fused neighbor feature and pushed through affine classification
//! and box-regression layers. Gradients are derived by hand (see
//! `backward.rs`) and verified against central finite differences.

mod backward;
mod checkpoint;
mod gradcheck;

pub use backward::backward;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use gradcheck::{
    finite_difference_check, grad_check_head, random_instance, GradCheckEntry, GradCheckInstance,
    GradCheckReport,
};

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::annotations::{ImageAnnotation, ObjectClass, PartClass};
use crate::error::{Error, Result};
use crate::fusion::{
    fuse_naive, AttentionScorerParams, Direction, FusionGraph, Fused, ProposalSet,
};
use crate::geometry::{iou_or_zero, BBox};

pub const NUM_OBJECT_CLASSES: usize = ObjectClass::ALL.len();
pub const NUM_PART_CLASSES: usize = PartClass::ALL.len();
/// Class id 0 on either side.
pub const BACKGROUND: usize = 0;

/// How the head is wired during a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Attention fusion on both sides; all four loss terms.
    Joint,
    /// No fusion (zero vector concatenated); object losses only.
    ObjectOnly,
    /// No fusion; part losses only.
    PartOnly,
    /// Uniform-average fusion on both sides; all four loss terms.
    NaiveAverage,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Joint => "joint",
            Mode::ObjectOnly => "object",
            Mode::PartOnly => "part",
            Mode::NaiveAverage => "naive",
        }
    }

    pub fn trains_object_side(&self) -> bool {
        !matches!(self, Mode::PartOnly)
    }

    pub fn trains_part_side(&self) -> bool {
        !matches!(self, Mode::ObjectOnly)
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Mode::Joint),
            "object" | "object-only" => Ok(Mode::ObjectOnly),
            "part" | "part-only" => Ok(Mode::PartOnly),
            "naive" | "naive-average" => Ok(Mode::NaiveAverage),
            other => Err(Error::Config(format!(
                "unknown mode {other:?} (expected joint|object|part|naive)"
            ))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Affine layer `y = w . x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Affine {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            w: Array2::zeros((out_dim, in_dim)),
            b: Array1::zeros(out_dim),
        }
    }

    fn init(out_dim: usize, in_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self {
            w: Array2::from_shape_fn((out_dim, in_dim), |_| rng.gen_range(-bound..bound)),
            b: Array1::zeros(out_dim),
        }
    }

    /// `x (N x in) -> N x out`, rows independent.
    fn apply_rows(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }
}

/// All learnable parameters of the joint head. The same structure doubles
/// as the gradient and momentum-buffer container.
#[derive(Debug, Clone, PartialEq)]
pub struct JointHeadParams {
    pub object_scorer: AttentionScorerParams,
    pub part_scorer: AttentionScorerParams,
    pub object_cls: Affine,
    pub object_reg: Affine,
    pub part_cls: Affine,
    pub part_reg: Affine,
}

/// Borrowed view of one named parameter tensor.
pub enum TensorRef<'a> {
    Matrix(&'a Array2<f64>),
    Vector(&'a Array1<f64>),
    Scalar(&'a f64),
}

impl TensorRef<'_> {
    pub fn len(&self) -> usize {
        match self {
            TensorRef::Matrix(m) => m.len(),
            TensorRef::Vector(v) => v.len(),
            TensorRef::Scalar(_) => 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl JointHeadParams {
    pub fn zeros(feature_dim: usize, hidden_dim: usize) -> Self {
        Self {
            object_scorer: AttentionScorerParams::zeros(hidden_dim, feature_dim),
            part_scorer: AttentionScorerParams::zeros(hidden_dim, feature_dim),
            object_cls: Affine::zeros(NUM_OBJECT_CLASSES + 1, 2 * feature_dim),
            object_reg: Affine::zeros(4, 2 * feature_dim),
            part_cls: Affine::zeros(NUM_PART_CLASSES + 1, 2 * feature_dim),
            part_reg: Affine::zeros(4, 2 * feature_dim),
        }
    }

    /// Seeded init: affine weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(feature_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        let scorer = |rng: &mut dyn rand::RngCore| {
            let bound = 1.0 / (2.0 * feature_dim as f64).sqrt();
            let w2_bound = 1.0 / (hidden_dim as f64).sqrt();
            AttentionScorerParams {
                w1: Array2::from_shape_fn((hidden_dim, 2 * feature_dim), |_| {
                    rng.gen_range(-bound..bound)
                }),
                b1: Array1::zeros(hidden_dim),
                w2: Array1::from_shape_fn(hidden_dim, |_| rng.gen_range(-w2_bound..w2_bound)),
                b2: 0.0,
            }
        };
        Self {
            object_scorer: scorer(rng),
            part_scorer: scorer(rng),
            object_cls: Affine::init(NUM_OBJECT_CLASSES + 1, 2 * feature_dim, rng),
            object_reg: Affine::init(4, 2 * feature_dim, rng),
            part_cls: Affine::init(NUM_PART_CLASSES + 1, 2 * feature_dim, rng),
            part_reg: Affine::init(4, 2 * feature_dim, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.feature_dim(), self.hidden_dim())
    }

    pub fn feature_dim(&self) -> usize {
        self.object_cls.w.ncols() / 2
    }

    pub fn hidden_dim(&self) -> usize {
        self.object_scorer.hidden_dim()
    }

    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        self.object_scorer.validate(feature_dim)?;
        self.part_scorer.validate(feature_dim)?;
        let pairs = [
            ("object_cls", &self.object_cls, NUM_OBJECT_CLASSES + 1),
            ("object_reg", &self.object_reg, 4),
            ("part_cls", &self.part_cls, NUM_PART_CLASSES + 1),
            ("part_reg", &self.part_reg, 4),
        ];
        for (name, affine, out_dim) in pairs {
            if affine.w.nrows() != out_dim
                || affine.w.ncols() != 2 * feature_dim
                || affine.b.len() != out_dim
            {
                return Err(Error::Shape(format!(
                    "{name} expects {out_dim}x{}, got {}x{}",
                    2 * feature_dim,
                    affine.w.nrows(),
                    affine.w.ncols()
                )));
            }
        }
        Ok(())
    }

    /// Named tensors in a fixed order shared by the flattener, the SGD
    /// update, and the checkpoint format.
    pub fn tensors(&self) -> Vec<(&'static str, TensorRef<'_>)> {
        vec![
            ("object_scorer.w1", TensorRef::Matrix(&self.object_scorer.w1)),
            ("object_scorer.b1", TensorRef::Vector(&self.object_scorer.b1)),
            ("object_scorer.w2", TensorRef::Vector(&self.object_scorer.w2)),
            ("object_scorer.b2", TensorRef::Scalar(&self.object_scorer.b2)),
            ("part_scorer.w1", TensorRef::Matrix(&self.part_scorer.w1)),
            ("part_scorer.b1", TensorRef::Vector(&self.part_scorer.b1)),
            ("part_scorer.w2", TensorRef::Vector(&self.part_scorer.w2)),
            ("part_scorer.b2", TensorRef::Scalar(&self.part_scorer.b2)),
            ("object_cls.w", TensorRef::Matrix(&self.object_cls.w)),
            ("object_cls.b", TensorRef::Vector(&self.object_cls.b)),
            ("object_reg.w", TensorRef::Matrix(&self.object_reg.w)),
            ("object_reg.b", TensorRef::Vector(&self.object_reg.b)),
            ("part_cls.w", TensorRef::Matrix(&self.part_cls.w)),
            ("part_cls.b", TensorRef::Vector(&self.part_cls.b)),
            ("part_reg.w", TensorRef::Matrix(&self.part_reg.w)),
            ("part_reg.b", TensorRef::Vector(&self.part_reg.b)),
        ]
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// All scalars in tensor order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (_, tensor) in self.tensors() {
            match tensor {
                TensorRef::Matrix(m) => out.extend(m.iter()),
                TensorRef::Vector(v) => out.extend(v.iter()),
                TensorRef::Scalar(s) => out.push(*s),
            }
        }
        out
    }

    /// Human-readable name of every scalar, aligned with [`flatten`].
    pub fn scalar_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.n_params());
        for (name, tensor) in self.tensors() {
            match tensor {
                TensorRef::Matrix(m) => {
                    for (r, c) in ndarray::indices(m.dim()) {
                        out.push(format!("{name}[{r},{c}]"));
                    }
                }
                TensorRef::Vector(v) => {
                    for i in 0..v.len() {
                        out.push(format!("{name}[{i}]"));
                    }
                }
                TensorRef::Scalar(_) => out.push(name.to_string()),
            }
        }
        out
    }

    /// Rebuilds a same-shaped parameter set from a flat scalar slice.
    pub fn from_flat(&self, values: &[f64]) -> Result<Self> {
        if values.len() != self.n_params() {
            return Err(Error::Shape(format!(
                "expected {} scalars, got {}",
                self.n_params(),
                values.len()
            )));
        }
        let mut out = self.clone();
        let mut it = values.iter().copied();
        out.for_each_scalar_mut(|p| *p = it.next().unwrap());
        Ok(out)
    }

    fn for_each_scalar_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for scorer in [&mut self.object_scorer, &mut self.part_scorer] {
            scorer.w1.iter_mut().for_each(&mut f);
            scorer.b1.iter_mut().for_each(&mut f);
            scorer.w2.iter_mut().for_each(&mut f);
            f(&mut scorer.b2);
        }
        for affine in [
            &mut self.object_cls,
            &mut self.object_reg,
            &mut self.part_cls,
            &mut self.part_reg,
        ] {
            affine.w.iter_mut().for_each(&mut f);
            affine.b.iter_mut().for_each(&mut f);
        }
    }
}

/// Hyperparameters for one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub fusion_thresh: f64,
    pub seed: u64,
    pub assign_iou: f64,
    pub flip_prob: f64,
    pub hidden_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            momentum: 0.9,
            weight_decay: 1e-6,
            epochs: 15,
            lr_decay_factor: 0.1,
            lr_decay_every: 5,
            fusion_thresh: 0.9,
            seed: 0,
            assign_iou: 0.5,
            flip_prob: 0.5,
            hidden_dim: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || self.lr_decay_factor <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::Config("lr_decay_every must be at least 1".into()));
        }
        if !(self.fusion_thresh > 0.0 && self.fusion_thresh <= 1.0) {
            return Err(Error::Config(format!(
                "fusion threshold must lie in (0, 1], got {}",
                self.fusion_thresh
            )));
        }
        if !(0.0..=1.0).contains(&self.assign_iou) {
            return Err(Error::Config("assign_iou must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config("flip_prob must lie in [0, 1]".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be at least 1".into()));
        }
        Ok(())
    }
}

/// Step schedule: the base rate decays by `lr_decay_factor` once per
/// `lr_decay_every` epochs (epochs counted from 0).
pub fn learning_rate(config: &TrainConfig, epoch: usize) -> f64 {
    config.learning_rate
        * config
            .lr_decay_factor
            .powi((epoch / config.lr_decay_every) as i32)
}

/// One SGD-with-momentum update:
/// `v <- momentum * v + grad + weight_decay * theta; theta <- theta - lr * v`.
pub fn sgd_step(
    params: &mut JointHeadParams,
    grads: &JointHeadParams,
    state: &mut JointHeadParams,
    config: &TrainConfig,
    epoch: usize,
) {
    let lr = learning_rate(config, epoch);
    let g = grads.flatten();
    let mut idx = 0usize;
    let mut velocities = state.flatten();
    params.for_each_scalar_mut(|p| {
        let v = &mut velocities[idx];
        *v = config.momentum * *v + g[idx] + config.weight_decay * *p;
        *p -= lr * *v;
        idx += 1;
    });
    idx = 0;
    state.for_each_scalar_mut(|v| {
        *v = velocities[idx];
        idx += 1;
    });
}

// --- target assignment -------------------------------------------------------

/// Class/regression target for a single proposal. Background proposals
/// (`class_id == 0`) carry no regression target.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub class_id: usize,
    pub deltas: Option<[f64; 4]>,
}

impl Target {
    pub fn background() -> Self {
        Self {
            class_id: BACKGROUND,
            deltas: None,
        }
    }
}

/// Per-proposal targets for both sides of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalTargets {
    pub object: Vec<Target>,
    pub part: Vec<Target>,
}

/// Normalized center/size offsets from a proposal box to a ground-truth box.
///
/// Requires positive width/height on both boxes; assignment only produces
/// positives whose IoU is positive, which guarantees that.
pub fn encode_deltas(gt: &BBox, proposal: &BBox) -> [f64; 4] {
    let (cx_g, cy_g) = gt.center();
    let (cx_p, cy_p) = proposal.center();
    [
        (cx_g - cx_p) / proposal.width(),
        (cy_g - cy_p) / proposal.height(),
        (gt.width() / proposal.width()).ln(),
        (gt.height() / proposal.height()).ln(),
    ]
}

/// Inverse of [`encode_deltas`].
pub fn decode_deltas(proposal: &BBox, deltas: &[f64; 4]) -> Result<BBox> {
    let (cx_p, cy_p) = proposal.center();
    let cx = cx_p + deltas[0] * proposal.width();
    let cy = cy_p + deltas[1] * proposal.height();
    let w = proposal.width() * deltas[2].exp();
    let h = proposal.height() * deltas[3].exp();
    BBox::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
}

fn assign_side(boxes: &[BBox], truth: &[(usize, BBox)], iou_thresh: f64) -> Vec<Target> {
    boxes
        .iter()
        .map(|proposal| {
            let mut best: Option<(usize, f64)> = None;
            for (idx, (_, gt_box)) in truth.iter().enumerate() {
                let overlap = iou_or_zero(proposal, gt_box);
                let better = match best {
                    Some((_, best_iou)) => overlap > best_iou,
                    None => overlap > 0.0,
                };
                if better {
                    best = Some((idx, overlap));
                }
            }
            match best {
                Some((idx, overlap)) if overlap >= iou_thresh => {
                    let (class_id, gt_box) = truth[idx];
                    Target {
                        class_id,
                        deltas: Some(encode_deltas(&gt_box, proposal)),
                    }
                }
                _ => Target::background(),
            }
        })
        .collect()
}

/// Matches every proposal to the ground-truth instance of highest IoU;
/// positive when that IoU reaches `iou_thresh`, background otherwise.
pub fn assign_targets(
    proposals: &ProposalSet,
    truth: &ImageAnnotation,
    iou_thresh: f64,
) -> ProposalTargets {
    let object_truth: Vec<(usize, BBox)> = truth
        .objects
        .iter()
        .map(|o| (o.object_class.class_id(), o.bbox))
        .collect();
    let part_truth: Vec<(usize, BBox)> = truth
        .objects
        .iter()
        .flat_map(|o| o.parts.iter())
        .map(|p| (p.coarse_class.class_id(), p.bbox))
        .collect();
    ProposalTargets {
        object: assign_side(proposals.object_boxes(), &object_truth, iou_thresh),
        part: assign_side(proposals.part_boxes(), &part_truth, iou_thresh),
    }
}

// --- forward -----------------------------------------------------------------

/// Everything computed on one side during a forward pass, kept for backward.
#[derive(Debug, Clone)]
pub struct SideOutputs {
    /// Softmax attention weights per anchor, aligned with the graph's
    /// neighbor lists (empty rows for anchors with no related proposals).
    pub attention: Vec<Vec<f64>>,
    /// Hidden-layer pre-activations per anchor and neighbor; empty in modes
    /// that do not use the learned scorer.
    pub preacts: Vec<Vec<Array1<f64>>>,
    /// N x D fused neighbor features.
    pub fused: Array2<f64>,
    /// N x 2D concatenated head inputs.
    pub inputs: Array2<f64>,
    /// N x (C+1) class logits.
    pub logits: Array2<f64>,
    /// N x 4 box-regression deltas.
    pub deltas: Array2<f64>,
}

/// Full forward pass over one image.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub mode: Mode,
    pub object: SideOutputs,
    pub part: SideOutputs,
}

fn concat_columns(own: &Array2<f64>, fused: &Array2<f64>) -> Array2<f64> {
    let (n, d) = own.dim();
    let mut out = Array2::zeros((n, 2 * d));
    out.slice_mut(ndarray::s![.., ..d]).assign(own);
    out.slice_mut(ndarray::s![.., d..]).assign(fused);
    out
}

fn check_finite(name: &str, values: &Array2<f64>) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { layer: name.into() });
    }
    Ok(())
}

fn forward_side(
    proposals: &ProposalSet,
    graph: &FusionGraph,
    params: &JointHeadParams,
    mode: Mode,
    direction: Direction,
) -> Result<SideOutputs> {
    let d = proposals.feature_dim();
    let (own, n_anchors, scorer, cls, reg, label) = match direction {
        Direction::ObjectSide => (
            proposals.object_features(),
            proposals.n_objects(),
            &params.object_scorer,
            &params.object_cls,
            &params.object_reg,
            "object",
        ),
        Direction::PartSide => (
            proposals.part_features(),
            proposals.n_parts(),
            &params.part_scorer,
            &params.part_cls,
            &params.part_reg,
            "part",
        ),
    };

    let (fused, attention, preacts) = match mode {
        Mode::Joint => {
            let mut preacts: Vec<Vec<Array1<f64>>> = Vec::with_capacity(n_anchors);
            let mut attention: Vec<Vec<f64>> = Vec::with_capacity(n_anchors);
            let mut fused = Array2::zeros((n_anchors, d));
            let neighbor_features = match direction {
                Direction::ObjectSide => proposals.part_features(),
                Direction::PartSide => proposals.object_features(),
            };
            for anchor in 0..n_anchors {
                let neighbors = match direction {
                    Direction::ObjectSide => graph.object_neighbors(anchor),
                    Direction::PartSide => graph.part_neighbors(anchor),
                };
                let mut anchor_preacts = Vec::with_capacity(neighbors.len());
                let mut scores = Vec::with_capacity(neighbors.len());
                for &other in neighbors {
                    let (o, p) = match direction {
                        Direction::ObjectSide => {
                            (proposals.object_feature(anchor), proposals.part_feature(other))
                        }
                        Direction::PartSide => {
                            (proposals.object_feature(other), proposals.part_feature(anchor))
                        }
                    };
                    let preact = crate::fusion::pair_preact(scorer, o, p);
                    scores.push(crate::fusion::score_from_preact(scorer, &preact));
                    anchor_preacts.push(preact);
                }
                let alphas = crate::fusion::attention_weights(&scores);
                let mut row = fused.index_axis_mut(Axis(0), anchor);
                for (&j, &alpha) in neighbors.iter().zip(alphas.iter()) {
                    row.scaled_add(alpha, &neighbor_features.row(j));
                }
                preacts.push(anchor_preacts);
                attention.push(alphas);
            }
            (fused, attention, preacts)
        }
        Mode::NaiveAverage => {
            let Fused { features, weights } = fuse_naive(proposals, graph, direction)?;
            (features, weights, vec![Vec::new(); n_anchors])
        }
        Mode::ObjectOnly | Mode::PartOnly => (
            Array2::zeros((n_anchors, d)),
            vec![Vec::new(); n_anchors],
            vec![Vec::new(); n_anchors],
        ),
    };

    let inputs = concat_columns(own, &fused);
    let logits = cls.apply_rows(&inputs);
    let deltas = reg.apply_rows(&inputs);
    check_finite(&format!("{label} fused features"), &fused)?;
    check_finite(&format!("{label} logits"), &logits)?;
    check_finite(&format!("{label} deltas"), &deltas)?;
    Ok(SideOutputs {
        attention,
        preacts,
        fused,
        inputs,
        logits,
        deltas,
    })
}

/// Runs the joint head over one image's proposals.
pub fn forward(
    proposals: &ProposalSet,
    graph: &FusionGraph,
    params: &JointHeadParams,
    mode: Mode,
) -> Result<ForwardPass> {
    params.validate(proposals.feature_dim())?;
    if graph.n_objects() != proposals.n_objects() || graph.n_parts() != proposals.n_parts() {
        return Err(Error::Shape(
            "fusion graph does not match proposal counts".into(),
        ));
    }
    Ok(ForwardPass {
        mode,
        object: forward_side(proposals, graph, params, mode, Direction::ObjectSide)?,
        part: forward_side(proposals, graph, params, mode, Direction::PartSide)?,
    })
}

// --- loss ----------------------------------------------------------------------

/// Loss components. `total` sums the terms of the sides the mode trains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cls_obj: f64,
    pub reg_obj: f64,
    pub cls_part: f64,
    pub reg_part: f64,
}

pub(crate) fn log_softmax_row(logits: ndarray::ArrayView1<'_, f64>) -> Array1<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max
        + logits
            .iter()
            .map(|z| (z - max).exp())
            .sum::<f64>()
            .ln();
    logits.map(|z| z - lse)
}

fn smooth_l1(e: f64) -> f64 {
    if e.abs() < 1.0 {
        0.5 * e * e
    } else {
        e.abs() - 0.5
    }
}

pub(crate) fn smooth_l1_grad(e: f64) -> f64 {
    if e.abs() < 1.0 {
        e
    } else {
        e.signum()
    }
}

fn side_loss(outputs: &SideOutputs, targets: &[Target]) -> Result<(f64, f64)> {
    if outputs.logits.nrows() != targets.len() {
        return Err(Error::Shape(format!(
            "{} outputs vs {} targets",
            outputs.logits.nrows(),
            targets.len()
        )));
    }
    let n = targets.len();
    let mut cls = 0.0;
    let mut reg = 0.0;
    let mut positives = 0usize;
    for (i, target) in targets.iter().enumerate() {
        let log_probs = log_softmax_row(outputs.logits.row(i));
        cls -= log_probs[target.class_id];
        if let Some(deltas) = &target.deltas {
            positives += 1;
            for (k, delta) in deltas.iter().enumerate() {
                reg += smooth_l1(outputs.deltas[[i, k]] - delta);
            }
        }
    }
    let cls = if n > 0 { cls / n as f64 } else { 0.0 };
    let reg = if positives > 0 {
        reg / positives as f64
    } else {
        0.0
    };
    Ok((cls, reg))
}

/// Mean cross-entropy over each side's proposals plus mean smooth-L1 over
/// its positive proposals, summed across the sides the mode trains.
pub fn loss(pass: &ForwardPass, targets: &ProposalTargets) -> Result<LossBreakdown> {
    let (cls_obj, reg_obj) = side_loss(&pass.object, &targets.object)?;
    let (cls_part, reg_part) = side_loss(&pass.part, &targets.part)?;
    let mut total = 0.0;
    if pass.mode.trains_object_side() {
        total += cls_obj + reg_obj;
    }
    if pass.mode.trains_part_side() {
        total += cls_part + reg_part;
    }
    Ok(LossBreakdown {
        total,
        cls_obj,
        reg_obj,
        cls_part,
        reg_part,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{ObjectInstance, PartInstance};
    use crate::fusion::build_fusion_graph;
    use approx::assert_abs_diff_eq;

    fn bb(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    pub(super) fn toy_proposals(rng: &mut impl Rng, n_o: usize, n_p: usize, d: usize) -> ProposalSet {
        // parts all inside the first object so graphs are non-trivial
        let of = Array2::from_shape_fn((n_o, d), |_| rng.gen_range(-1.0..1.0));
        let pf = Array2::from_shape_fn((n_p, d), |_| rng.gen_range(-1.0..1.0));
        let ob = (0..n_o)
            .map(|i| bb(0.0, 0.0, 60.0 + i as f64, 60.0))
            .collect();
        let pb = (0..n_p)
            .map(|j| bb(5.0 + 3.0 * j as f64, 5.0, 10.0 + 3.0 * j as f64, 12.0))
            .collect();
        ProposalSet::new(of, ob, pf, pb).unwrap()
    }

    fn random_params(rng: &mut impl Rng, d: usize, h: usize) -> JointHeadParams {
        let base = JointHeadParams::zeros(d, h);
        let flat: Vec<f64> = (0..base.n_params())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        base.from_flat(&flat).unwrap()
    }

    #[test]
    fn zero_params_give_zero_outputs() {
        let mut rng = crate::rng::substream(40, "fwd-zero");
        let proposals = toy_proposals(&mut rng, 2, 3, 4);
        let graph = build_fusion_graph(&proposals, 0.9).unwrap();
        let params = JointHeadParams::zeros(4, 3);
        let pass = forward(&proposals, &graph, &params, Mode::Joint).unwrap();
        assert!(pass.object.logits.iter().all(|&v| v == 0.0));
        assert!(pass.object.deltas.iter().all(|&v| v == 0.0));
        assert!(pass.part.logits.iter().all(|&v| v == 0.0));
        assert!(pass.part.deltas.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_related_set_equals_zero_concat() {
        // disjoint boxes mean no edges: joint forward must equal the
        // no-fusion modes exactly
        let mut rng = crate::rng::substream(41, "fwd-empty");
        let d = 4;
        let of = Array2::from_shape_fn((2, d), |_| rng.gen_range(-1.0..1.0));
        let pf = Array2::from_shape_fn((2, d), |_| rng.gen_range(-1.0..1.0));
        let proposals = ProposalSet::new(
            of,
            vec![bb(0.0, 0.0, 10.0, 10.0), bb(20.0, 0.0, 30.0, 10.0)],
            pf,
            vec![bb(50.0, 50.0, 60.0, 60.0), bb(70.0, 70.0, 80.0, 80.0)],
        )
        .unwrap();
        let graph = build_fusion_graph(&proposals, 0.9).unwrap();
        assert!(graph.edges().is_empty());
        let params = random_params(&mut rng, d, 3);
        let joint = forward(&proposals, &graph, &params, Mode::Joint).unwrap();
        let object_only = forward(&proposals, &graph, &params, Mode::ObjectOnly).unwrap();
        assert_eq!(joint.object.logits, object_only.object.logits);
        assert_eq!(joint.object.deltas, object_only.object.deltas);
        assert_eq!(joint.part.logits, object_only.part.logits);
    }

    #[test]
    fn high_threshold_degrades_joint_to_no_fusion_modes() {
        // every part pokes outside its object, so f = 1.0 relates nothing
        // and joint forward must coincide with the no-fusion modes exactly
        let mut rng = crate::rng::substream(52, "fwd-high-f");
        let d = 4;
        let of = Array2::from_shape_fn((2, d), |_| rng.gen_range(-1.0..1.0));
        let pf = Array2::from_shape_fn((2, d), |_| rng.gen_range(-1.0..1.0));
        let proposals = ProposalSet::new(
            of,
            vec![bb(0.0, 0.0, 20.0, 20.0), bb(30.0, 0.0, 55.0, 20.0)],
            pf,
            vec![bb(15.0, 5.0, 25.0, 10.0), bb(50.0, 5.0, 60.0, 12.0)],
        )
        .unwrap();
        let loose = build_fusion_graph(&proposals, 0.4).unwrap();
        assert!(!loose.edges().is_empty());
        let tight = build_fusion_graph(&proposals, 1.0).unwrap();
        assert!(tight.edges().is_empty());

        let params = random_params(&mut rng, d, 3);
        let joint = forward(&proposals, &tight, &params, Mode::Joint).unwrap();
        let object_only = forward(&proposals, &tight, &params, Mode::ObjectOnly).unwrap();
        let part_only = forward(&proposals, &tight, &params, Mode::PartOnly).unwrap();
        assert_eq!(joint.object.logits, object_only.object.logits);
        assert_eq!(joint.object.deltas, object_only.object.deltas);
        assert_eq!(joint.part.logits, part_only.part.logits);
        assert_eq!(joint.part.deltas, part_only.part.deltas);
    }

    #[test]
    fn forward_matches_direct_recomputation() {
        let mut rng = crate::rng::substream(42, "fwd-oracle");
        let d = 3;
        let proposals = toy_proposals(&mut rng, 2, 3, d);
        let graph = build_fusion_graph(&proposals, 0.9).unwrap();
        let params = random_params(&mut rng, d, 4);
        let pass = forward(&proposals, &graph, &params, Mode::Joint).unwrap();

        // recompute object anchor 0 by hand
        let neighbors = graph.object_neighbors(0);
        let scores: Vec<f64> = neighbors
            .iter()
            .map(|&j| {
                crate::fusion::pair_score(
                    proposals.object_feature(0),
                    proposals.part_feature(j),
                    &params.object_scorer,
                )
                .unwrap()
            })
            .collect();
        let exps: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let z: f64 = exps.iter().sum();
        let mut x = vec![0.0; 2 * d];
        for k in 0..d {
            x[k] = proposals.object_features()[[0, k]];
        }
        for (e, &j) in exps.iter().zip(neighbors) {
            for k in 0..d {
                x[d + k] += e / z * proposals.part_features()[[j, k]];
            }
        }
        for c in 0..NUM_OBJECT_CLASSES + 1 {
            let mut expected = params.object_cls.b[c];
            for (k, xv) in x.iter().enumerate() {
                expected += params.object_cls.w[[c, k]] * xv;
            }
            assert_abs_diff_eq!(pass.object.logits[[0, c]], expected, epsilon = 1e-9);
        }
        for r in 0..4 {
            let mut expected = params.object_reg.b[r];
            for (k, xv) in x.iter().enumerate() {
                expected += params.object_reg.w[[r, k]] * xv;
            }
            assert_abs_diff_eq!(pass.object.deltas[[0, r]], expected, epsilon = 1e-9);
        }
    }

    fn annotation_for(proposals: &ProposalSet) -> ImageAnnotation {
        ImageAnnotation {
            image_id: "t".into(),
            width: 100.0,
            height: 100.0,
            objects: vec![ObjectInstance {
                object_class: ObjectClass::Dog,
                bbox: proposals.object_boxes()[0],
                parts: vec![PartInstance {
                    raw_part_name: "head".into(),
                    coarse_class: PartClass::Face,
                    bbox: proposals.part_boxes()[0],
                }],
            }],
        }
    }

    #[test]
    fn exact_match_assignment() {
        let mut rng = crate::rng::substream(43, "assign");
        let proposals = toy_proposals(&mut rng, 1, 1, 2);
        let truth = annotation_for(&proposals);
        let targets = assign_targets(&proposals, &truth, 0.5);
        assert_eq!(targets.object[0].class_id, ObjectClass::Dog.class_id());
        assert_eq!(targets.object[0].deltas, Some([0.0, 0.0, 0.0, 0.0]));
        assert_eq!(targets.part[0].class_id, PartClass::Face.class_id());
        assert_eq!(targets.part[0].deltas, Some([0.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn disjoint_proposal_is_background() {
        let proposals = ProposalSet::new(
            Array2::zeros((1, 2)),
            vec![bb(90.0, 90.0, 99.0, 99.0)],
            Array2::zeros((1, 2)),
            vec![bb(80.0, 80.0, 85.0, 85.0)],
        )
        .unwrap();
        let truth = ImageAnnotation {
            image_id: "t".into(),
            width: 100.0,
            height: 100.0,
            objects: vec![ObjectInstance {
                object_class: ObjectClass::Cat,
                bbox: bb(0.0, 0.0, 20.0, 20.0),
                parts: vec![PartInstance {
                    raw_part_name: "torso".into(),
                    coarse_class: PartClass::Torso,
                    bbox: bb(2.0, 2.0, 10.0, 10.0),
                }],
            }],
        };
        let targets = assign_targets(&proposals, &truth, 0.5);
        assert_eq!(targets.object[0], Target::background());
        assert_eq!(targets.part[0], Target::background());
    }

    #[test]
    fn partial_overlap_deltas_match_hand_computation() {
        // proposal (0,0,10,10), gt (2,0,12,10): IoU = 8/12 ~ 0.667
        let proposal = bb(0.0, 0.0, 10.0, 10.0);
        let gt = bb(2.0, 0.0, 12.0, 10.0);
        assert!(iou_or_zero(&proposal, &gt) > 0.6);
        let deltas = encode_deltas(&gt, &proposal);
        // centers: proposal (5,5), gt (7,5); widths equal
        assert_abs_diff_eq!(deltas[0], 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(deltas[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(deltas[2], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(deltas[3], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn delta_round_trip_recovers_ground_truth() {
        let mut rng = crate::rng::substream(44, "deltas");
        for _ in 0..200 {
            let p = bb(
                rng.gen_range(0.0..50.0),
                rng.gen_range(0.0..50.0),
                rng.gen_range(51.0..100.0),
                rng.gen_range(51.0..100.0),
            );
            let g = bb(
                rng.gen_range(0.0..50.0),
                rng.gen_range(0.0..50.0),
                rng.gen_range(51.0..100.0),
                rng.gen_range(51.0..100.0),
            );
            let decoded = decode_deltas(&p, &encode_deltas(&g, &p)).unwrap();
            assert_abs_diff_eq!(decoded.x_min, g.x_min, epsilon = 1e-6);
            assert_abs_diff_eq!(decoded.y_min, g.y_min, epsilon = 1e-6);
            assert_abs_diff_eq!(decoded.x_max, g.x_max, epsilon = 1e-6);
            assert_abs_diff_eq!(decoded.y_max, g.y_max, epsilon = 1e-6);
        }
    }

    #[test]
    fn uniform_logits_cost_ln_k() {
        let mut rng = crate::rng::substream(45, "loss-lnk");
        let proposals = toy_proposals(&mut rng, 2, 2, 3);
        let graph = build_fusion_graph(&proposals, 0.9).unwrap();
        let params = JointHeadParams::zeros(3, 2);
        let pass = forward(&proposals, &graph, &params, Mode::Joint).unwrap();
        let targets = ProposalTargets {
            object: vec![Target::background(); 2],
            part: vec![Target::background(); 2],
        };
        let breakdown = loss(&pass, &targets).unwrap();
        let ln7 = (NUM_OBJECT_CLASSES as f64 + 1.0).ln();
        assert_abs_diff_eq!(breakdown.cls_obj, ln7, epsilon = 1e-12);
        assert_abs_diff_eq!(breakdown.cls_part, ln7, epsilon = 1e-12);
        assert_abs_diff_eq!(breakdown.reg_obj, 0.0);
        assert_abs_diff_eq!(breakdown.total, 2.0 * ln7, epsilon = 1e-12);
    }

    #[test]
    fn saturated_correct_logits_drive_loss_to_zero() {
        let mut rng = crate::rng::substream(46, "loss-sat");
        let proposals = toy_proposals(&mut rng, 1, 1, 2);
        let graph = build_fusion_graph(&proposals, 0.9).unwrap();
        let params = JointHeadParams::zeros(2, 2);
        let mut pass = forward(&proposals, &graph, &params, Mode::Joint).unwrap();
        // force near-one-hot logits for class 3 and exact deltas
        pass.object.logits[[0, 3]] = 40.0;
        pass.part.logits[[0, 2]] = 40.0;
        let targets = ProposalTargets {
            object: vec![Target {
                class_id: 3,
                deltas: Some([0.0; 4]),
            }],
            part: vec![Target {
                class_id: 2,
                deltas: Some([0.0; 4]),
            }],
        };
        let breakdown = loss(&pass, &targets).unwrap();
        assert!(breakdown.total < 1e-12);
        assert_eq!(breakdown.reg_obj, 0.0);
        assert_eq!(breakdown.reg_part, 0.0);
    }

    #[test]
    fn loss_matches_direct_recomputation() {
        let mut rng = crate::rng::substream(47, "loss-oracle");
        let proposals = toy_proposals(&mut rng, 3, 4, 3);
        let graph = build_fusion_graph(&proposals, 0.9).unwrap();
        let params = {
            let base = JointHeadParams::zeros(3, 2);
            let flat: Vec<f64> = (0..base.n_params())
                .map(|_| rng.gen_range(-0.5..0.5))
                .collect();
            base.from_flat(&flat).unwrap()
        };
        let pass = forward(&proposals, &graph, &params, Mode::Joint).unwrap();
        let targets = ProposalTargets {
            object: vec![
                Target {
                    class_id: 1,
                    deltas: Some([0.1, -0.2, 0.05, 0.0]),
                },
                Target::background(),
                Target {
                    class_id: 4,
                    deltas: Some([2.0, 0.0, 0.0, 0.0]),
                },
            ],
            part: vec![
                Target::background(),
                Target::background(),
                Target {
                    class_id: 6,
                    deltas: Some([0.0, 0.3, 0.0, -1.5]),
                },
                Target::background(),
            ],
        };
        let breakdown = loss(&pass, &targets).unwrap();

        // independent recomputation with explicit loops
        let ce = |logits: ndarray::ArrayView1<f64>, y: usize| -> f64 {
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|v| (v - max).exp()).sum();
            -(logits[y] - max - z.ln())
        };
        let sl1 = |e: f64| if e.abs() < 1.0 { 0.5 * e * e } else { e.abs() - 0.5 };
        let mut cls_obj = 0.0;
        let mut reg_obj = 0.0;
        for (i, t) in targets.object.iter().enumerate() {
            cls_obj += ce(pass.object.logits.row(i), t.class_id);
            if let Some(d) = &t.deltas {
                for k in 0..4 {
                    reg_obj += sl1(pass.object.deltas[[i, k]] - d[k]);
                }
            }
        }
        cls_obj /= 3.0;
        reg_obj /= 2.0;
        assert_abs_diff_eq!(breakdown.cls_obj, cls_obj, epsilon = 1e-12);
        assert_abs_diff_eq!(breakdown.reg_obj, reg_obj, epsilon = 1e-12);
        assert_abs_diff_eq!(
            breakdown.total,
            breakdown.cls_obj + breakdown.reg_obj + breakdown.cls_part + breakdown.reg_part,
            epsilon = 1e-12
        );
    }

    #[test]
    fn mode_total_only_counts_trained_sides() {
        let mut rng = crate::rng::substream(48, "loss-mode");
        let proposals = toy_proposals(&mut rng, 2, 2, 3);
        let graph = build_fusion_graph(&proposals, 0.9).unwrap();
        let params = JointHeadParams::zeros(3, 2);
        let targets = ProposalTargets {
            object: vec![Target::background(); 2],
            part: vec![Target::background(); 2],
        };
        let object_pass = forward(&proposals, &graph, &params, Mode::ObjectOnly).unwrap();
        let breakdown = loss(&object_pass, &targets).unwrap();
        assert_abs_diff_eq!(
            breakdown.total,
            breakdown.cls_obj + breakdown.reg_obj,
            epsilon = 1e-12
        );
        let part_pass = forward(&proposals, &graph, &params, Mode::PartOnly).unwrap();
        let breakdown = loss(&part_pass, &targets).unwrap();
        assert_abs_diff_eq!(
            breakdown.total,
            breakdown.cls_part + breakdown.reg_part,
            epsilon = 1e-12
        );
    }

    #[test]
    fn sgd_zero_gradient_keeps_params() {
        let params0 = JointHeadParams::zeros(2, 2);
        let mut params = params0.from_flat(&vec![0.5; params0.n_params()]).unwrap();
        let grads = params.zeros_like();
        let mut state = params.zeros_like();
        let config = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let before = params.flatten();
        sgd_step(&mut params, &grads, &mut state, &config, 0);
        assert_eq!(params.flatten(), before);
    }

    #[test]
    fn sgd_single_step_moves_by_lr() {
        let base = JointHeadParams::zeros(2, 2);
        let mut params = base.from_flat(&vec![1.0; base.n_params()]).unwrap();
        let grads = base.from_flat(&vec![1.0; base.n_params()]).unwrap();
        let mut state = base.zeros_like();
        let config = TrainConfig {
            learning_rate: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        sgd_step(&mut params, &grads, &mut state, &config, 0);
        for v in params.flatten() {
            assert_abs_diff_eq!(v, 0.9, epsilon = 1e-15);
        }
    }

    #[test]
    fn sgd_two_steps_match_hand_unrolled_recurrence() {
        let base = JointHeadParams::zeros(2, 2);
        let theta0 = 1.0;
        let (g1, g2) = (0.3, -0.1);
        let (lr, mu, wd) = (0.05, 0.9, 0.01);
        let mut params = base.from_flat(&vec![theta0; base.n_params()]).unwrap();
        let mut state = base.zeros_like();
        let config = TrainConfig {
            learning_rate: lr,
            momentum: mu,
            weight_decay: wd,
            ..TrainConfig::default()
        };
        let grads1 = base.from_flat(&vec![g1; base.n_params()]).unwrap();
        sgd_step(&mut params, &grads1, &mut state, &config, 0);
        let v1 = g1 + wd * theta0;
        let theta1 = theta0 - lr * v1;
        for v in params.flatten() {
            assert_abs_diff_eq!(v, theta1, epsilon = 1e-15);
        }
        let grads2 = base.from_flat(&vec![g2; base.n_params()]).unwrap();
        sgd_step(&mut params, &grads2, &mut state, &config, 0);
        let v2 = mu * v1 + g2 + wd * theta1;
        let theta2 = theta1 - lr * v2;
        for v in params.flatten() {
            assert_abs_diff_eq!(v, theta2, epsilon = 1e-15);
        }
    }

    #[test]
    fn learning_rate_schedule_decays_every_five_epochs() {
        let config = TrainConfig::default();
        assert_abs_diff_eq!(learning_rate(&config, 0), 1e-3, epsilon = 1e-18);
        assert_abs_diff_eq!(learning_rate(&config, 4), 1e-3, epsilon = 1e-18);
        assert_abs_diff_eq!(learning_rate(&config, 5), 1e-4, epsilon = 1e-18);
        assert_abs_diff_eq!(learning_rate(&config, 9), 1e-4, epsilon = 1e-18);
        assert_abs_diff_eq!(learning_rate(&config, 10), 1e-5, epsilon = 1e-18);
        assert_abs_diff_eq!(learning_rate(&config, 14), 1e-5, epsilon = 1e-18);
    }

    #[test]
    fn flatten_from_flat_round_trip() {
        let mut rng = crate::rng::substream(49, "flatten");
        let params = random_params(&mut rng, 3, 4);
        let flat = params.flatten();
        let rebuilt = params.from_flat(&flat).unwrap();
        assert_eq!(params, rebuilt);
        assert_eq!(params.scalar_names().len(), flat.len());
        // spot-check name alignment
        let names = params.scalar_names();
        assert_eq!(names[0], "object_scorer.w1[0,0]");
        assert!(names.contains(&"object_scorer.b2".to_string()));
    }

    #[test]
    fn train_config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            fusion_thresh: 1.5,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("joint".parse::<Mode>().unwrap(), Mode::Joint);
        assert_eq!("object".parse::<Mode>().unwrap(), Mode::ObjectOnly);
        assert_eq!("part".parse::<Mode>().unwrap(), Mode::PartOnly);
        assert_eq!("naive".parse::<Mode>().unwrap(), Mode::NaiveAverage);
        assert!("banana".parse::<Mode>().is_err());
    }
}
