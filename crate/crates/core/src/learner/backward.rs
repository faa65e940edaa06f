//! Analytic gradients of the joint loss.
//!
//! The chain runs: affine heads -> concatenated input -> fused feature ->
//! softmax attention weights -> pair logits -> relu hidden layer -> scorer
//! parameters. Proposal features are data, not parameters, so gradient flow
//! stops at them.

use ndarray::{Array2, Axis};

use crate::error::Result;
use crate::fusion::{Direction, FusionGraph, ProposalSet};

use super::{
    forward, log_softmax_row, loss, smooth_l1_grad, ForwardPass, JointHeadParams, LossBreakdown,
    Mode, ProposalTargets, SideOutputs, Target,
};

/// Runs a forward pass and returns the loss together with the gradient of
/// `loss.total` with respect to every parameter.
pub fn backward(
    proposals: &ProposalSet,
    graph: &FusionGraph,
    params: &JointHeadParams,
    targets: &ProposalTargets,
    mode: Mode,
) -> Result<(LossBreakdown, JointHeadParams)> {
    let pass = forward(proposals, graph, params, mode)?;
    let breakdown = loss(&pass, targets)?;
    let mut grads = params.zeros_like();
    if mode.trains_object_side() {
        backward_side(
            proposals,
            graph,
            params,
            &pass,
            &targets.object,
            Direction::ObjectSide,
            &mut grads,
        );
    }
    if mode.trains_part_side() {
        backward_side(
            proposals,
            graph,
            params,
            &pass,
            &targets.part,
            Direction::PartSide,
            &mut grads,
        );
    }
    Ok((breakdown, grads))
}

fn backward_side(
    proposals: &ProposalSet,
    graph: &FusionGraph,
    params: &JointHeadParams,
    pass: &ForwardPass,
    targets: &[Target],
    direction: Direction,
    grads: &mut JointHeadParams,
) {
    let outputs: &SideOutputs = match direction {
        Direction::ObjectSide => &pass.object,
        Direction::PartSide => &pass.part,
    };
    let n = targets.len();
    if n == 0 {
        return;
    }
    let n_classes = outputs.logits.ncols();
    let positives = targets.iter().filter(|t| t.deltas.is_some()).count();

    // d(mean cross-entropy)/d(logits): (softmax - onehot) / N
    let mut dlogits = Array2::zeros((n, n_classes));
    for (i, target) in targets.iter().enumerate() {
        let log_probs = log_softmax_row(outputs.logits.row(i));
        for c in 0..n_classes {
            dlogits[[i, c]] = log_probs[c].exp() / n as f64;
        }
        dlogits[[i, target.class_id]] -= 1.0 / n as f64;
    }

    // d(mean smooth-L1)/d(deltas), zero for background proposals
    let mut ddeltas = Array2::zeros((n, 4));
    if positives > 0 {
        for (i, target) in targets.iter().enumerate() {
            if let Some(t) = &target.deltas {
                for k in 0..4 {
                    ddeltas[[i, k]] =
                        smooth_l1_grad(outputs.deltas[[i, k]] - t[k]) / positives as f64;
                }
            }
        }
    }

    let (cls, reg) = match direction {
        Direction::ObjectSide => (&params.object_cls, &params.object_reg),
        Direction::PartSide => (&params.part_cls, &params.part_reg),
    };
    {
        let (gcls, greg) = match direction {
            Direction::ObjectSide => (&mut grads.object_cls, &mut grads.object_reg),
            Direction::PartSide => (&mut grads.part_cls, &mut grads.part_reg),
        };
        gcls.w += &dlogits.t().dot(&outputs.inputs);
        gcls.b += &dlogits.sum_axis(Axis(0));
        greg.w += &ddeltas.t().dot(&outputs.inputs);
        greg.b += &ddeltas.sum_axis(Axis(0));
    }

    // only attention fusion routes gradient into the scorer; naive weights
    // are constants and the no-fusion modes concatenate a literal zero
    if pass.mode != Mode::Joint {
        return;
    }

    let d = proposals.feature_dim();
    // gradient reaching the fused half of the concatenated input
    let dx = dlogits.dot(&cls.w) + ddeltas.dot(&reg.w);
    let dfused = dx.slice(ndarray::s![.., d..]);

    let (scorer, gscorer) = match direction {
        Direction::ObjectSide => (&params.object_scorer, &mut grads.object_scorer),
        Direction::PartSide => (&params.part_scorer, &mut grads.part_scorer),
    };

    for anchor in 0..n {
        let neighbors = match direction {
            Direction::ObjectSide => graph.object_neighbors(anchor),
            Direction::PartSide => graph.part_neighbors(anchor),
        };
        if neighbors.is_empty() {
            continue;
        }
        let alphas = &outputs.attention[anchor];
        let dg = dfused.row(anchor);

        let dalpha: Vec<f64> = neighbors
            .iter()
            .map(|&other| {
                let neighbor_feat = match direction {
                    Direction::ObjectSide => proposals.part_feature(other),
                    Direction::PartSide => proposals.object_feature(other),
                };
                dg.dot(&neighbor_feat)
            })
            .collect();
        // softmax backward: ds_k = alpha_k * (dalpha_k - sum_j alpha_j dalpha_j)
        let inner: f64 = alphas.iter().zip(&dalpha).map(|(a, da)| a * da).sum();

        for (k, &other) in neighbors.iter().enumerate() {
            let ds = alphas[k] * (dalpha[k] - inner);
            let preact = &outputs.preacts[anchor][k];

            gscorer.b2 += ds;
            for (h, &a) in preact.iter().enumerate() {
                if a > 0.0 {
                    gscorer.w2[h] += ds * a;
                }
            }

            // dh = ds * w2 masked by active units; dW1 += dh (x) u, db1 += dh
            let (o_idx, p_idx) = match direction {
                Direction::ObjectSide => (anchor, other),
                Direction::PartSide => (other, anchor),
            };
            let o_feat = proposals.object_feature(o_idx);
            let p_feat = proposals.part_feature(p_idx);
            for (h, &a) in preact.iter().enumerate() {
                if a <= 0.0 {
                    continue;
                }
                let dh = ds * scorer.w2[h];
                gscorer.b1[h] += dh;
                let mut row = gscorer.w1.row_mut(h);
                let (mut own_half, mut other_half) = row.view_mut().split_at(Axis(0), d);
                own_half.scaled_add(dh, &o_feat);
                other_half.scaled_add(dh, &p_feat);
            }
        }
    }
}
