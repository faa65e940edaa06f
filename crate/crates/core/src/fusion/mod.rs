//! Relatedness graph construction and attention-weighted feature fusion
//! between object proposals and part proposals.

mod file;

pub use file::{read_feature_file, write_feature_file};

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::geometry::{relates, BBox};

/// Per-image object and part proposals, each row carrying a D-dimensional
/// feature vector aligned with its box.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet {
    object_features: Array2<f64>,
    object_boxes: Vec<BBox>,
    part_features: Array2<f64>,
    part_boxes: Vec<BBox>,
}

impl ProposalSet {
    pub fn new(
        object_features: Array2<f64>,
        object_boxes: Vec<BBox>,
        part_features: Array2<f64>,
        part_boxes: Vec<BBox>,
    ) -> Result<Self> {
        if object_features.nrows() != object_boxes.len() {
            return Err(Error::Shape(format!(
                "{} object feature rows vs {} object boxes",
                object_features.nrows(),
                object_boxes.len()
            )));
        }
        if part_features.nrows() != part_boxes.len() {
            return Err(Error::Shape(format!(
                "{} part feature rows vs {} part boxes",
                part_features.nrows(),
                part_boxes.len()
            )));
        }
        if object_features.ncols() != part_features.ncols() {
            return Err(Error::Shape(format!(
                "feature dim mismatch: objects D={}, parts D={}",
                object_features.ncols(),
                part_features.ncols()
            )));
        }
        if object_features.iter().any(|v| !v.is_finite())
            || part_features.iter().any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite {
                layer: "proposal features".into(),
            });
        }
        Ok(Self {
            object_features,
            object_boxes,
            part_features,
            part_boxes,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.object_features.ncols()
    }

    pub fn n_objects(&self) -> usize {
        self.object_boxes.len()
    }

    pub fn n_parts(&self) -> usize {
        self.part_boxes.len()
    }

    pub fn object_features(&self) -> &Array2<f64> {
        &self.object_features
    }

    pub fn part_features(&self) -> &Array2<f64> {
        &self.part_features
    }

    pub fn object_boxes(&self) -> &[BBox] {
        &self.object_boxes
    }

    pub fn part_boxes(&self) -> &[BBox] {
        &self.part_boxes
    }

    pub fn object_feature(&self, i: usize) -> ArrayView1<'_, f64> {
        self.object_features.row(i)
    }

    pub fn part_feature(&self, j: usize) -> ArrayView1<'_, f64> {
        self.part_features.row(j)
    }

    /// Mirrors every box across the vertical centerline; features untouched.
    pub fn hflip(&self, image_width: f64) -> Result<ProposalSet> {
        let object_boxes = self
            .object_boxes
            .iter()
            .map(|b| crate::geometry::hflip(b, image_width))
            .collect::<Result<Vec<_>>>()?;
        let part_boxes = self
            .part_boxes
            .iter()
            .map(|b| crate::geometry::hflip(b, image_width))
            .collect::<Result<Vec<_>>>()?;
        Ok(ProposalSet {
            object_features: self.object_features.clone(),
            object_boxes,
            part_features: self.part_features.clone(),
            part_boxes,
        })
    }
}

/// Sparse bipartite relation between object and part proposals under a
/// fusion threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionGraph {
    threshold: f64,
    edges: Vec<(usize, usize)>,
    object_neighbors: Vec<Vec<usize>>,
    part_neighbors: Vec<Vec<usize>>,
}

impl FusionGraph {
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// All `(object_index, part_index)` pairs, ordered by object then part.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Part indices related to object `i`.
    pub fn object_neighbors(&self, i: usize) -> &[usize] {
        &self.object_neighbors[i]
    }

    /// Object indices related to part `j`.
    pub fn part_neighbors(&self, j: usize) -> &[usize] {
        &self.part_neighbors[j]
    }

    pub fn n_objects(&self) -> usize {
        self.object_neighbors.len()
    }

    pub fn n_parts(&self) -> usize {
        self.part_neighbors.len()
    }
}

/// Builds the relatedness graph with an exact pairwise sweep.
pub fn build_fusion_graph(proposals: &ProposalSet, f: f64) -> Result<FusionGraph> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::Config(format!(
            "fusion threshold must lie in (0, 1], got {f}"
        )));
    }
    let mut edges = Vec::new();
    let mut object_neighbors = vec![Vec::new(); proposals.n_objects()];
    let mut part_neighbors = vec![Vec::new(); proposals.n_parts()];
    for (i, object_box) in proposals.object_boxes.iter().enumerate() {
        for (j, part_box) in proposals.part_boxes.iter().enumerate() {
            if relates(object_box, part_box, f) {
                edges.push((i, j));
                object_neighbors[i].push(j);
                part_neighbors[j].push(i);
            }
        }
    }
    Ok(FusionGraph {
        threshold: f,
        edges,
        object_neighbors,
        part_neighbors,
    })
}

/// Learnable pair scorer: one hidden relu layer over the concatenated
/// object/part feature pair, producing a single logit.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionScorerParams {
    /// H x 2D
    pub w1: Array2<f64>,
    /// H
    pub b1: Array1<f64>,
    /// H
    pub w2: Array1<f64>,
    pub b2: f64,
}

impl AttentionScorerParams {
    pub fn zeros(hidden_dim: usize, feature_dim: usize) -> Self {
        Self {
            w1: Array2::zeros((hidden_dim, 2 * feature_dim)),
            b1: Array1::zeros(hidden_dim),
            w2: Array1::zeros(hidden_dim),
            b2: 0.0,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn pair_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        if self.w1.ncols() != 2 * feature_dim
            || self.b1.len() != self.w1.nrows()
            || self.w2.len() != self.w1.nrows()
        {
            return Err(Error::Shape(format!(
                "scorer shapes (w1 {}x{}, b1 {}, w2 {}) inconsistent with D={feature_dim}",
                self.w1.nrows(),
                self.w1.ncols(),
                self.b1.len(),
                self.w2.len()
            )));
        }
        let finite = self.w1.iter().all(|v| v.is_finite())
            && self.b1.iter().all(|v| v.is_finite())
            && self.w2.iter().all(|v| v.is_finite())
            && self.b2.is_finite();
        if !finite {
            return Err(Error::NonFinite {
                layer: "attention scorer".into(),
            });
        }
        Ok(())
    }
}

/// Hidden-layer pre-activation `w1 . [o; p] + b1` for one pair.
pub(crate) fn pair_preact(
    params: &AttentionScorerParams,
    o_feat: ArrayView1<'_, f64>,
    p_feat: ArrayView1<'_, f64>,
) -> Array1<f64> {
    let d = o_feat.len();
    let mut u = Array1::zeros(2 * d);
    u.slice_mut(ndarray::s![..d]).assign(&o_feat);
    u.slice_mut(ndarray::s![d..]).assign(&p_feat);
    params.w1.dot(&u) + &params.b1
}

pub(crate) fn score_from_preact(params: &AttentionScorerParams, preact: &Array1<f64>) -> f64 {
    let mut s = params.b2;
    for (w, a) in params.w2.iter().zip(preact.iter()) {
        s += w * a.max(0.0);
    }
    s
}

/// Scores one object/part pair. The input is always ordered
/// `[object_features; part_features]`, for both fusion directions.
pub fn pair_score(
    o_feat: ArrayView1<'_, f64>,
    p_feat: ArrayView1<'_, f64>,
    params: &AttentionScorerParams,
) -> Result<f64> {
    if o_feat.len() != p_feat.len() {
        return Err(Error::Shape(format!(
            "pair features disagree: {} vs {}",
            o_feat.len(),
            p_feat.len()
        )));
    }
    params.validate(o_feat.len())?;
    let s = score_from_preact(params, &pair_preact(params, o_feat, p_feat));
    if !s.is_finite() {
        return Err(Error::NonFinite {
            layer: "pair score".into(),
        });
    }
    Ok(s)
}

/// Softmax over one anchor's pair logits, stabilized by max subtraction.
pub fn attention_weights(scores: &[f64]) -> Vec<f64> {
    if scores.is_empty() {
        return Vec::new();
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Which side anchors the fusion: objects aggregating their related parts,
/// or parts aggregating their related objects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ObjectSide,
    PartSide,
}

/// Fused neighbor features per anchor plus the attention weight rows
/// (one row per anchor, aligned with its neighbor list; empty when the
/// anchor has no related proposals).
#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub features: Array2<f64>,
    pub weights: Vec<Vec<f64>>,
}

fn check_graph(proposals: &ProposalSet, graph: &FusionGraph) -> Result<()> {
    if graph.n_objects() != proposals.n_objects() || graph.n_parts() != proposals.n_parts() {
        return Err(Error::Shape(format!(
            "graph built for {}x{} proposals, got {}x{}",
            graph.n_objects(),
            graph.n_parts(),
            proposals.n_objects(),
            proposals.n_parts()
        )));
    }
    Ok(())
}

fn fuse_with_weights<W>(
    proposals: &ProposalSet,
    graph: &FusionGraph,
    direction: Direction,
    mut weigh: W,
) -> Fused
where
    W: FnMut(usize, &[usize]) -> Vec<f64>,
{
    let d = proposals.feature_dim();
    let (n_anchors, neighbor_features) = match direction {
        Direction::ObjectSide => (proposals.n_objects(), &proposals.part_features),
        Direction::PartSide => (proposals.n_parts(), &proposals.object_features),
    };
    let mut features = Array2::zeros((n_anchors, d));
    let mut weights = Vec::with_capacity(n_anchors);
    for anchor in 0..n_anchors {
        let neighbors = match direction {
            Direction::ObjectSide => graph.object_neighbors(anchor),
            Direction::PartSide => graph.part_neighbors(anchor),
        };
        if neighbors.is_empty() {
            weights.push(Vec::new());
            continue; // fused row stays zero
        }
        let alphas = weigh(anchor, neighbors);
        let mut row = features.index_axis_mut(Axis(0), anchor);
        for (&j, &alpha) in neighbors.iter().zip(alphas.iter()) {
            row.scaled_add(alpha, &neighbor_features.row(j));
        }
        weights.push(alphas);
    }
    Fused { features, weights }
}

/// Attention fusion: per anchor, a softmax-weighted average of its related
/// neighbors' features. Anchors with no related proposals fuse to zero.
pub fn fuse(
    proposals: &ProposalSet,
    graph: &FusionGraph,
    params: &AttentionScorerParams,
    direction: Direction,
) -> Result<Fused> {
    check_graph(proposals, graph)?;
    params.validate(proposals.feature_dim())?;
    let fused = fuse_with_weights(proposals, graph, direction, |anchor, neighbors| {
        let scores: Vec<f64> = neighbors
            .iter()
            .map(|&other| {
                let (o, p) = match direction {
                    Direction::ObjectSide => {
                        (proposals.object_feature(anchor), proposals.part_feature(other))
                    }
                    Direction::PartSide => {
                        (proposals.object_feature(other), proposals.part_feature(anchor))
                    }
                };
                score_from_preact(params, &pair_preact(params, o, p))
            })
            .collect();
        attention_weights(&scores)
    });
    if fused.features.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            layer: "fused features".into(),
        });
    }
    Ok(fused)
}

/// Uniform-weight fusion: the plain average of related neighbors' features.
pub fn fuse_naive(
    proposals: &ProposalSet,
    graph: &FusionGraph,
    direction: Direction,
) -> Result<Fused> {
    check_graph(proposals, graph)?;
    Ok(fuse_with_weights(proposals, graph, direction, |_, neighbors| {
        vec![1.0 / neighbors.len() as f64; neighbors.len()]
    }))
}
