//! Scalar evaluation of the per-frame loss and the clip loss. No gradients;
//! these are diagnostic signals for the harness.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{focal_negative, focal_positive};
use crate::geom::{encode_box, encoding_l1, Box3D, TrackingClass};
use crate::scalar::Real;
use crate::Scalar;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("heatmap shape mismatch: pred {0}x{1}, gt {2}x{3}")]
    HeatmapShape(usize, usize, usize, usize),
    #[error("trajectory horizon mismatch: pred {0}, gt {1}")]
    HorizonMismatch(usize, usize),
}

/// Scalar weights of the per-frame loss composition.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_h: Scalar,
    pub lambda_f: Scalar,
    pub lambda_reg_d: Scalar,
    pub lambda_cls_d: Scalar,
    pub lambda_reg_r: Scalar,
    pub lambda_cls_r: Scalar,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_h: 1.0,
            lambda_f: 0.5,
            lambda_reg_d: 0.25,
            lambda_cls_d: 1.0,
            lambda_reg_r: 0.25,
            lambda_cls_r: 1.0,
        }
    }
}

/// Unweighted loss components of one frame, per head where applicable.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct FrameLossComponents {
    pub heatmap: Scalar,
    pub trajectory: Scalar,
    pub reg_d: Scalar,
    pub cls_d: Scalar,
    pub reg_r: Scalar,
    pub cls_r: Scalar,
}

/// Weighted per-frame breakdown; `total` is the weighted sum of the parts.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FrameLossBreakdown {
    pub components: FrameLossComponents,
    pub weights: LossWeights,
    pub total: Scalar,
}

/// Mean L1 distance between encoded matched box pairs; 0 without matches.
pub fn l1_box_loss(
    preds: &[Box3D<Scalar>],
    gts: &[Box3D<Scalar>],
    assignment: &[Option<usize>],
) -> Scalar {
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, m) in assignment.iter().enumerate() {
        if let Some(k) = m {
            total += encoding_l1(&encode_box(&preds[i]), &encode_box(&gts[*k]));
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as Scalar
    }
}

/// Focal classification loss: matched predictions contribute the positive
/// term on their ground-truth class, unmatched predictions the background
/// term on every class. Normalized by the number of matched predictions
/// (minimum 1), the usual detector convention.
pub fn focal_cls_loss(
    class_scores: &[[Scalar; 7]],
    assignment: &[Option<usize>],
    gt_classes: &[TrackingClass],
    alpha: Scalar,
    gamma: Scalar,
) -> Scalar {
    let mut total = 0.0;
    let mut matched = 0usize;
    for (scores, m) in class_scores.iter().zip(assignment.iter()) {
        match m {
            Some(k) => {
                total += focal_positive(scores[gt_classes[*k].index()], alpha, gamma);
                matched += 1;
            }
            None => {
                for &p in scores {
                    total += focal_negative(p, alpha, gamma);
                }
            }
        }
    }
    total / matched.max(1) as Scalar
}

/// Penalty-reduced focal loss on a heatmap, normalized by the number of
/// ground-truth peaks (cells equal to 1), minimum 1.
pub fn gaussian_focal_heatmap_loss<T: Real>(
    pred: &[Vec<T>],
    gt: &[Vec<T>],
    alpha: T,
    beta: T,
) -> Result<T, LossError> {
    let (ph, pw) = (pred.len(), pred.first().map_or(0, |r| r.len()));
    let (gh, gw) = (gt.len(), gt.first().map_or(0, |r| r.len()));
    if ph != gh || pw != gw || pred.iter().any(|r| r.len() != pw) || gt.iter().any(|r| r.len() != gw)
    {
        return Err(LossError::HeatmapShape(ph, pw, gh, gw));
    }
    let eps = T::from_f64(1e-12).unwrap();
    let mut total = T::zero();
    let mut peaks = 0usize;
    for (prow, grow) in pred.iter().zip(gt.iter()) {
        for (&p, &g) in prow.iter().zip(grow.iter()) {
            let p = p.max(eps).min(T::one() - eps);
            if g == T::one() {
                peaks += 1;
                total += (T::one() - p).powf(alpha) * (-p.ln());
            } else {
                total += (T::one() - g).powf(beta) * p.powf(alpha) * (-(T::one() - p).ln());
            }
        }
    }
    Ok(total / T::from_usize(peaks.max(1)).unwrap())
}

/// Mean per-waypoint L1 distance over matched trajectory pairs.
pub fn trajectory_loss<T: Real>(
    pred_trajs: &[Vec<[T; 2]>],
    gt_trajs: &[Vec<[T; 2]>],
) -> Result<T, LossError> {
    if pred_trajs.len() != gt_trajs.len() {
        return Err(LossError::HorizonMismatch(pred_trajs.len(), gt_trajs.len()));
    }
    let mut total = T::zero();
    let mut count = 0usize;
    for (p, g) in pred_trajs.iter().zip(gt_trajs.iter()) {
        if p.len() != g.len() {
            return Err(LossError::HorizonMismatch(p.len(), g.len()));
        }
        for (a, b) in p.iter().zip(g.iter()) {
            total += (a[0] - b[0]).abs() + (a[1] - b[1]).abs();
            count += 1;
        }
    }
    if count == 0 {
        Ok(T::zero())
    } else {
        Ok(total / T::from_usize(count).unwrap())
    }
}

/// Weighted composition of one frame's loss components.
pub fn frame_loss(components: FrameLossComponents, weights: LossWeights) -> FrameLossBreakdown {
    let total = weights.lambda_h * components.heatmap
        + weights.lambda_f * components.trajectory
        + weights.lambda_reg_d * components.reg_d
        + weights.lambda_cls_d * components.cls_d
        + weights.lambda_reg_r * components.reg_r
        + weights.lambda_cls_r * components.cls_r;
    FrameLossBreakdown {
        components,
        weights,
        total,
    }
}

/// Clip loss: the sum of the per-frame totals.
pub fn clip_loss(frames: &[FrameLossBreakdown]) -> Scalar {
    frames.iter().map(|f| f.total).sum()
}
