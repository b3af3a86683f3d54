//! Tracking evaluation: per-frame greedy matching, CLEAR-MOT accumulation,
//! the AMOTA/AMOTP recall sweep, and detection mAP over the seven tracking
//! classes. Reports use the benchmark's per-class column set.
//!
//! Matching follows the nuScenes benchmark convention: BEV center distance
//! with a 2 m gate, predictions consumed in descending score order, each
//! ground truth matched at most once per frame. Identity continuity is scored
//! through IDS, not through the matcher.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::TrackingClass;
use crate::io::{Scene, TrackingResult};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no ground-truth boxes in any class; nothing to evaluate")]
    EmptyGroundTruth,
    #[error("result references unknown frame_id {0:?}")]
    UnknownFrame(String),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchingConfig {
    /// BEV center-distance gate in meters.
    pub match_distance: Scalar,
    /// Number of evenly spaced recall targets in (0, 1].
    pub recall_points: usize,
    /// Recall targets below this are excluded from the sweep averages.
    pub min_recall: Scalar,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        MatchingConfig {
            match_distance: 2.0,
            recall_points: 40,
            min_recall: 0.1,
        }
    }
}

/// One class's worth of observations for one scene.
#[derive(Debug, Clone, Default)]
pub struct SceneSequence {
    /// Nominal inter-frame period in seconds (drives TID/LGD).
    pub period_s: Scalar,
    pub frames: Vec<FrameObservations>,
}

#[derive(Debug, Clone, Default)]
pub struct FrameObservations {
    /// (gt track id, BEV center)
    pub gts: Vec<(String, [Scalar; 2])>,
    /// (tracking id, BEV center, score)
    pub preds: Vec<(String, [Scalar; 2], Scalar)>,
}

/// Output of single-frame greedy matching.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameMatch {
    /// (gt index, pred index, center distance)
    pub tp: Vec<(usize, usize, Scalar)>,
    /// unmatched prediction indices
    pub fp: Vec<usize>,
    /// unmatched ground-truth indices
    pub fn_: Vec<usize>,
}

/// Greedy per-frame matching in descending prediction score; each ground
/// truth is used at most once. Ties in score break on prediction index.
pub fn match_frame(
    gts: &[[Scalar; 2]],
    preds: &[([Scalar; 2], Scalar)],
    match_distance: Scalar,
) -> FrameMatch {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b].1.partial_cmp(&preds[a].1).unwrap().then(a.cmp(&b))
    });
    let mut gt_used = vec![false; gts.len()];
    let mut out = FrameMatch::default();
    for &pi in &order {
        let (pc, _) = preds[pi];
        let mut best: Option<(usize, Scalar)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if gt_used[gi] {
                continue;
            }
            let d = ((pc[0] - g[0]).powi(2) + (pc[1] - g[1]).powi(2)).sqrt();
            if d <= match_distance && best.map_or(true, |(_, bd)| d < bd) {
                best = Some((gi, d));
            }
        }
        match best {
            Some((gi, d)) => {
                gt_used[gi] = true;
                out.tp.push((gi, pi, d));
            }
            None => out.fp.push(pi),
        }
    }
    for (gi, used) in gt_used.iter().enumerate() {
        if !used {
            out.fn_.push(gi);
        }
    }
    out.tp.sort_unstable_by(|a, b| a.0.cmp(&b.0));
    out
}

/// CLEAR-MOT counts and derived metrics at one fixed operating point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ClearMotStats {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub ids: u64,
    pub frag: u64,
    pub gt_count: u64,
    pub frame_count: u64,
    pub dist_sum: Scalar,
    pub mota: Scalar,
    pub motp: Scalar,
    pub recall: Scalar,
    pub mt: u64,
    pub ml: u64,
    pub faf: Scalar,
    pub tid: Scalar,
    pub lgd: Scalar,
}

/// Accumulate CLEAR-MOT metrics over scene sequences at a fixed confidence
/// threshold (predictions below it are dropped before matching).
pub fn clear_mot(
    sequences: &[SceneSequence],
    threshold: Scalar,
    match_distance: Scalar,
) -> ClearMotStats {
    #[derive(Default)]
    struct TrackState {
        frames_present: u64,
        frames_matched: u64,
        first_seen: Option<usize>,
        first_matched: Option<usize>,
        // index in the track's own appearance sequence
        appearance: usize,
        last_matched_id: Option<String>,
        current_gap: u64,
        longest_gap: u64,
        period_s: Scalar,
    }

    let mut stats = ClearMotStats::default();
    let mut tid_sum = 0.0;
    let mut tid_count = 0u64;
    let mut lgd_sum = 0.0;
    let mut lgd_count = 0u64;

    for seq in sequences {
        let mut tracks: HashMap<&str, TrackState> = HashMap::new();
        for frame in &seq.frames {
            stats.frame_count += 1;
            let gts: Vec<[Scalar; 2]> = frame.gts.iter().map(|g| g.1).collect();
            let preds: Vec<([Scalar; 2], Scalar)> = frame
                .preds
                .iter()
                .filter(|p| p.2 >= threshold)
                .map(|p| (p.1, p.2))
                .collect();
            let pred_ids: Vec<&str> = frame
                .preds
                .iter()
                .filter(|p| p.2 >= threshold)
                .map(|p| p.0.as_str())
                .collect();
            let m = match_frame(&gts, &preds, match_distance);

            stats.gt_count += gts.len() as u64;
            stats.tp += m.tp.len() as u64;
            stats.fp += m.fp.len() as u64;
            stats.fn_ += m.fn_.len() as u64;
            stats.dist_sum += m.tp.iter().map(|t| t.2).sum::<Scalar>();

            let matched_by_gt: HashMap<usize, usize> =
                m.tp.iter().map(|&(gi, pi, _)| (gi, pi)).collect();
            for (gi, (gid, _)) in frame.gts.iter().enumerate() {
                let state = tracks.entry(gid.as_str()).or_insert_with(|| TrackState {
                    period_s: seq.period_s,
                    ..TrackState::default()
                });
                let seen_at = state.appearance;
                state.appearance += 1;
                state.frames_present += 1;
                if state.first_seen.is_none() {
                    state.first_seen = Some(seen_at);
                }
                match matched_by_gt.get(&gi) {
                    Some(&pi) => {
                        let pid = pred_ids[pi];
                        state.frames_matched += 1;
                        if state.first_matched.is_none() {
                            state.first_matched = Some(seen_at);
                        }
                        if let Some(prev) = &state.last_matched_id {
                            if prev != pid {
                                stats.ids += 1;
                            }
                            if state.current_gap > 0 {
                                stats.frag += 1;
                            }
                        }
                        state.last_matched_id = Some(pid.to_string());
                        state.current_gap = 0;
                    }
                    None => {
                        state.current_gap += 1;
                        state.longest_gap = state.longest_gap.max(state.current_gap);
                    }
                }
            }
        }

        for state in tracks.values() {
            let ratio = state.frames_matched as Scalar / state.frames_present as Scalar;
            if ratio > 0.8 {
                stats.mt += 1;
            }
            if ratio < 0.2 {
                stats.ml += 1;
            }
            if let (Some(first_seen), Some(first_matched)) = (state.first_seen, state.first_matched)
            {
                tid_sum += (first_matched - first_seen) as Scalar * state.period_s;
                tid_count += 1;
            }
            lgd_sum += state.longest_gap as Scalar * state.period_s;
            lgd_count += 1;
        }
    }

    let p = stats.gt_count;
    stats.mota = if p == 0 {
        0.0
    } else {
        1.0 - (stats.fp + stats.fn_ + stats.ids) as Scalar / p as Scalar
    };
    stats.motp = if stats.tp == 0 {
        0.0
    } else {
        stats.dist_sum / stats.tp as Scalar
    };
    stats.recall = if p == 0 {
        0.0
    } else {
        stats.tp as Scalar / p as Scalar
    };
    stats.faf = if stats.frame_count == 0 {
        0.0
    } else {
        100.0 * stats.fp as Scalar / stats.frame_count as Scalar
    };
    stats.tid = if tid_count == 0 { 0.0 } else { tid_sum / tid_count as Scalar };
    stats.lgd = if lgd_count == 0 { 0.0 } else { lgd_sum / lgd_count as Scalar };
    stats
}

/// One evaluated recall point of the sweep.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RecallPoint {
    pub target_recall: Scalar,
    pub threshold: Scalar,
    pub achieved_recall: Scalar,
    pub motar: Scalar,
    pub motp: Scalar,
}

/// Outcome of the AMOTA sweep for one class.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub amota: Scalar,
    pub amotp: Scalar,
    pub points: Vec<Option<RecallPoint>>,
    /// Stats at the MOTA-maximizing evaluated threshold.
    pub best: ClearMotStats,
    pub best_threshold: Scalar,
    pub best_motar: Scalar,
}

/// Recall-normalized MOTA at one operating point, clamped at 0:
/// `1 - (IDS + FP + FN - (1 - recall)·P) / (recall·P)`.
pub fn motar(stats: &ClearMotStats) -> Scalar {
    let p = stats.gt_count as Scalar;
    let rec = stats.recall;
    if rec <= 0.0 || p == 0.0 {
        return 0.0;
    }
    let raw = 1.0
        - ((stats.ids + stats.fp + stats.fn_) as Scalar - (1.0 - rec) * p) / (rec * p);
    raw.max(0.0)
}

/// Recall sweep over score thresholds drawn from the matched-prediction
/// scores: for each target recall the smallest achievable recall from above
/// picks the threshold, MOTAR and MOTP are evaluated there, and unachieved
/// targets contribute 0 to AMOTA and the match distance to AMOTP.
pub fn amota_sweep(sequences: &[SceneSequence], cfg: &MatchingConfig) -> SweepOutcome {
    let p: u64 = sequences
        .iter()
        .flat_map(|s| s.frames.iter())
        .map(|f| f.gts.len() as u64)
        .sum();

    // matched prediction scores from a sweep-free matching pass
    let mut matched_scores: Vec<Scalar> = Vec::new();
    for seq in sequences {
        for frame in &seq.frames {
            let gts: Vec<[Scalar; 2]> = frame.gts.iter().map(|g| g.1).collect();
            let preds: Vec<([Scalar; 2], Scalar)> =
                frame.preds.iter().map(|p| (p.1, p.2)).collect();
            let m = match_frame(&gts, &preds, cfg.match_distance);
            matched_scores.extend(m.tp.iter().map(|&(_, pi, _)| frame.preds[pi].2));
        }
    }
    matched_scores.sort_by(|a, b| b.partial_cmp(a).unwrap());

    let mut cache: HashMap<u64, ClearMotStats> = HashMap::new();
    let mut eval_at = |thr: Scalar| -> ClearMotStats {
        *cache
            .entry(thr.to_bits())
            .or_insert_with(|| clear_mot(sequences, thr, cfg.match_distance))
    };

    let n = cfg.recall_points;
    let mut points: Vec<Option<RecallPoint>> = Vec::with_capacity(n);
    for k in 1..=n {
        let target = k as Scalar / n as Scalar;
        let needed = (target * p as Scalar).ceil() as usize;
        let point = if needed == 0 || needed > matched_scores.len() {
            None
        } else {
            let thr = matched_scores[needed - 1];
            let stats = eval_at(thr);
            Some(RecallPoint {
                target_recall: target,
                threshold: thr,
                achieved_recall: stats.recall,
                motar: motar(&stats),
                motp: stats.motp,
            })
        };
        points.push(point);
    }

    let counted: Vec<&Option<RecallPoint>> = points
        .iter()
        .zip(1..=n)
        .filter(|(_, k)| *k as Scalar / n as Scalar >= cfg.min_recall)
        .map(|(pt, _)| pt)
        .collect();
    let denom = counted.len().max(1) as Scalar;
    let amota = counted
        .iter()
        .map(|pt| pt.map_or(0.0, |p| p.motar))
        .sum::<Scalar>()
        / denom;
    let amotp = counted
        .iter()
        .map(|pt| pt.map_or(cfg.match_distance, |p| p.motp))
        .sum::<Scalar>()
        / denom;

    // secondary metrics at the MOTA-maximizing evaluated threshold
    let mut evaluated: Vec<(Scalar, ClearMotStats)> = points
        .iter()
        .flatten()
        .map(|pt| (pt.threshold, eval_at(pt.threshold)))
        .collect();
    evaluated.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    evaluated.dedup_by(|a, b| a.0 == b.0);
    let (best_threshold, best) = evaluated
        .iter()
        .copied()
        .max_by(|a, b| {
            a.1.mota
                .partial_cmp(&b.1.mota)
                .unwrap()
                .then(a.0.partial_cmp(&b.0).unwrap())
        })
        .unwrap_or_else(|| (Scalar::INFINITY, eval_at(Scalar::INFINITY)));
    let best_motar = motar(&best);

    SweepOutcome {
        amota,
        amotp,
        points,
        best,
        best_threshold,
        best_motar,
    }
}

// ---------------------------------------------------------------------------
// report assembly

/// Per-class row mirroring the benchmark's full-results column set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetricsRow {
    pub amota: Scalar,
    pub amotp: Scalar,
    pub recall: Scalar,
    pub motar: Scalar,
    pub mota: Scalar,
    pub motp: Scalar,
    pub mt: u64,
    pub ml: u64,
    pub faf: Scalar,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub ids: u64,
    pub frag: u64,
    pub tid: Scalar,
    pub lgd: Scalar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub amota: Scalar,
    pub amotp: Scalar,
    pub mt: u64,
    pub ml: u64,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub ids: u64,
    pub frag: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Classes with no ground truth anywhere are absent from the map.
    pub per_class: BTreeMap<String, ClassMetricsRow>,
    pub aggregate: AggregateMetrics,
    /// Detection mAP over the distance thresholds, when requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detection_map: Option<Scalar>,
}

impl MetricsReport {
    /// Fixed-width table in the benchmark's full-results layout.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<12} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>5} {:>5} {:>7} {:>7} {:>7} {:>7} {:>5} {:>5} {:>6} {:>6}\n",
            "class", "AMOTA", "AMOTP", "RECALL", "MOTAR", "MOTA", "MOTP", "MT", "ML",
            "FAF", "TP", "FP", "FN", "IDS", "FRAG", "TID", "LGD"
        ));
        for (name, r) in &self.per_class {
            out.push_str(&format!(
                "{:<12} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>6.3} {:>5} {:>5} {:>7.1} {:>7} {:>7} {:>7} {:>5} {:>5} {:>6.2} {:>6.2}\n",
                name, r.amota, r.amotp, r.recall, r.motar, r.mota, r.motp, r.mt, r.ml,
                r.faf, r.tp, r.fp, r.fn_, r.ids, r.frag, r.tid, r.lgd
            ));
        }
        let a = &self.aggregate;
        out.push_str(&format!(
            "{:<12} {:>6.3} {:>6.3} {:>6} {:>6} {:>6} {:>6} {:>5} {:>5} {:>7} {:>7} {:>7} {:>7} {:>5} {:>5}\n",
            "aggregate", a.amota, a.amotp, "-", "-", "-", "-", a.mt, a.ml, "-", a.tp, a.fp,
            a.fn_, a.ids, a.frag
        ));
        if let Some(map) = self.detection_map {
            out.push_str(&format!("mAP {map:.4}\n"));
        }
        out
    }
}

/// Split scenes plus a tracking result into per-class scene sequences.
pub fn build_sequences(
    scenes: &[Scene],
    result: &TrackingResult,
) -> [Vec<SceneSequence>; 7] {
    let mut per_class: [Vec<SceneSequence>; 7] = Default::default();
    for scene in scenes {
        let period_s = scene.frame_period_us() as Scalar / 1e6;
        let mut seqs: [SceneSequence; 7] = Default::default();
        for s in &mut seqs {
            s.period_s = period_s;
        }
        for frame in &scene.frames {
            let mut obs: [FrameObservations; 7] = Default::default();
            for ann in &frame.annotations {
                let c = ann.box3d.class.index();
                obs[c]
                    .gts
                    .push((ann.track_id.clone(), [ann.box3d.center[0], ann.box3d.center[1]]));
            }
            if let Some(boxes) = result.results.get(&frame.frame_id) {
                for b in boxes {
                    let c = b.tracking_name.index();
                    obs[c].preds.push((
                        b.tracking_id.clone(),
                        [b.translation[0], b.translation[1]],
                        b.tracking_score,
                    ));
                }
            }
            for (c, o) in obs.into_iter().enumerate() {
                seqs[c].frames.push(o);
            }
        }
        for (c, s) in seqs.into_iter().enumerate() {
            per_class[c].push(s);
        }
    }
    per_class
}

/// Full evaluation: AMOTA sweep per class, secondary metrics at the best
/// operating point, and the aggregate row.
pub fn evaluate(
    scenes: &[Scene],
    result: &TrackingResult,
    cfg: &MatchingConfig,
) -> Result<MetricsReport, MetricsError> {
    use rayon::prelude::*;

    let per_class = build_sequences(scenes, result);
    let rows: Vec<Option<(TrackingClass, ClassMetricsRow)>> = per_class
        .par_iter()
        .enumerate()
        .map(|(c, seqs)| {
            let class = TrackingClass::ALL[c];
            let has_gt = seqs.iter().any(|s| s.frames.iter().any(|f| !f.gts.is_empty()));
            if !has_gt {
                return None;
            }
            let sweep = amota_sweep(seqs, cfg);
            let b = sweep.best;
            Some((
                class,
                ClassMetricsRow {
                    amota: sweep.amota,
                    amotp: sweep.amotp,
                    recall: b.recall,
                    motar: sweep.best_motar,
                    mota: b.mota.max(0.0),
                    motp: if b.tp == 0 { cfg.match_distance } else { b.motp },
                    mt: b.mt,
                    ml: b.ml,
                    faf: b.faf,
                    tp: b.tp,
                    fp: b.fp,
                    fn_: b.fn_,
                    ids: b.ids,
                    frag: b.frag,
                    tid: b.tid,
                    lgd: b.lgd,
                },
            ))
        })
        .collect();

    let rows: Vec<(TrackingClass, ClassMetricsRow)> = rows.into_iter().flatten().collect();
    if rows.is_empty() {
        return Err(MetricsError::EmptyGroundTruth);
    }

    let k = rows.len() as Scalar;
    let aggregate = AggregateMetrics {
        amota: rows.iter().map(|(_, r)| r.amota).sum::<Scalar>() / k,
        amotp: rows.iter().map(|(_, r)| r.amotp).sum::<Scalar>() / k,
        mt: rows.iter().map(|(_, r)| r.mt).sum(),
        ml: rows.iter().map(|(_, r)| r.ml).sum(),
        tp: rows.iter().map(|(_, r)| r.tp).sum(),
        fp: rows.iter().map(|(_, r)| r.fp).sum(),
        fn_: rows.iter().map(|(_, r)| r.fn_).sum(),
        ids: rows.iter().map(|(_, r)| r.ids).sum(),
        frag: rows.iter().map(|(_, r)| r.frag).sum(),
    };
    Ok(MetricsReport {
        per_class: rows
            .into_iter()
            .map(|(c, r)| (c.name().to_string(), r))
            .collect(),
        aggregate,
        detection_map: None,
    })
}

/// Detection mAP: results scored as detections (ids ignored), greedy
/// center-distance matching per threshold, 101-point interpolated AP above
/// the 0.1 precision and recall floors, averaged over thresholds then
/// classes.
pub fn detection_map(
    scenes: &[Scene],
    result: &TrackingResult,
    thresholds: &[Scalar],
    cfg: &MatchingConfig,
) -> Scalar {
    let _ = cfg;
    let per_class = build_sequences(scenes, result);
    let mut aps: Vec<Scalar> = Vec::new();
    for seqs in per_class.iter() {
        let p: usize = seqs
            .iter()
            .flat_map(|s| s.frames.iter())
            .map(|f| f.gts.len())
            .sum();
        if p == 0 {
            continue;
        }
        let mut class_ap = 0.0;
        for &dist in thresholds {
            class_ap += average_precision(seqs, p, dist);
        }
        aps.push(class_ap / thresholds.len() as Scalar);
    }
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<Scalar>() / aps.len() as Scalar
    }
}

fn average_precision(seqs: &[SceneSequence], gt_total: usize, dist: Scalar) -> Scalar {
    // score-ordered TP/FP labels via per-frame greedy matching
    let mut labels: Vec<(Scalar, bool)> = Vec::new();
    for seq in seqs {
        for frame in &seq.frames {
            let gts: Vec<[Scalar; 2]> = frame.gts.iter().map(|g| g.1).collect();
            let preds: Vec<([Scalar; 2], Scalar)> =
                frame.preds.iter().map(|p| (p.1, p.2)).collect();
            let m = match_frame(&gts, &preds, dist);
            let mut is_tp = vec![false; preds.len()];
            for &(_, pi, _) in &m.tp {
                is_tp[pi] = true;
            }
            for (pi, (_, score)) in preds.iter().enumerate() {
                labels.push((*score, is_tp[pi]));
            }
        }
    }
    labels.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut rec: Vec<Scalar> = Vec::with_capacity(labels.len());
    let mut prec: Vec<Scalar> = Vec::with_capacity(labels.len());
    let (mut tp, mut fp) = (0u64, 0u64);
    for (_, hit) in &labels {
        if *hit {
            tp += 1;
        } else {
            fp += 1;
        }
        rec.push(tp as Scalar / gt_total as Scalar);
        prec.push(tp as Scalar / (tp + fp) as Scalar);
    }

    // 101-point interpolation; precision beyond the achieved recall is 0
    let interp = |r: Scalar| -> Scalar {
        if rec.is_empty() || r > *rec.last().unwrap() {
            return 0.0;
        }
        let idx = rec.partition_point(|&x| x < r);
        if idx >= rec.len() {
            return 0.0;
        }
        if idx == 0 || rec[idx] == r {
            return prec[idx];
        }
        let (r0, r1) = (rec[idx - 1], rec[idx]);
        let (p0, p1) = (prec[idx - 1], prec[idx]);
        if r1 == r0 {
            p1
        } else {
            p0 + (p1 - p0) * (r - r0) / (r1 - r0)
        }
    };

    let min_recall = 0.1;
    let min_precision = 0.1;
    let mut acc = 0.0;
    let mut count = 0usize;
    for i in 0..=100 {
        let r = i as Scalar / 100.0;
        if r <= min_recall {
            continue;
        }
        acc += (interp(r) - min_precision).max(0.0);
        count += 1;
    }
    acc / count as Scalar / (1.0 - min_precision)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn seq_from(frames: Vec<FrameObservations>) -> SceneSequence {
        SceneSequence {
            period_s: 0.5,
            frames,
        }
    }

    fn gt(id: &str, x: Scalar) -> (String, [Scalar; 2]) {
        (id.to_string(), [x, 0.0])
    }

    fn pred(id: &str, x: Scalar, score: Scalar) -> (String, [Scalar; 2], Scalar) {
        (id.to_string(), [x, 0.0], score)
    }

    #[test]
    fn match_frame_identical_sets() {
        let gts = vec![[0.0, 0.0], [5.0, 0.0]];
        let preds = vec![([0.0, 0.0], 0.9), ([5.0, 0.0], 0.8)];
        let m = match_frame(&gts, &preds, 2.0);
        assert_eq!(m.tp.len(), 2);
        assert!(m.tp.iter().all(|t| t.2 == 0.0));
        assert!(m.fp.is_empty() && m.fn_.is_empty());
    }

    #[test]
    fn match_frame_distance_gate() {
        let gts = vec![[0.0, 0.0]];
        let preds = vec![([3.0, 0.0], 0.9)];
        let m = match_frame(&gts, &preds, 2.0);
        assert!(m.tp.is_empty());
        assert_eq!(m.fp, vec![0]);
        assert_eq!(m.fn_, vec![0]);
    }

    #[test]
    fn match_frame_greedy_score_order() {
        // the higher-scoring far prediction claims the gt first; crafted 3x3
        // case checked against hand enumeration of the greedy rule
        let gts = vec![[0.0, 0.0], [1.0, 0.0], [4.0, 0.0]];
        let preds = vec![
            ([0.9, 0.0], 0.9), // matches gt1 (nearest to 0.9 is gt at 1.0)
            ([0.1, 0.0], 0.8), // then gt0
            ([4.1, 0.0], 0.7), // then gt2
        ];
        let m = match_frame(&gts, &preds, 2.0);
        let pairs: Vec<(usize, usize)> = m.tp.iter().map(|t| (t.0, t.1)).collect();
        assert_eq!(pairs, vec![(0, 1), (1, 0), (2, 2)]);
    }

    #[test]
    fn perfect_tracking_clear_mot() {
        let frames: Vec<FrameObservations> = (0..10)
            .map(|i| FrameObservations {
                gts: vec![gt("a", i as Scalar)],
                preds: vec![pred("t1", i as Scalar, 0.9)],
            })
            .collect();
        let s = clear_mot(&[seq_from(frames)], 0.0, 2.0);
        assert_eq!(s.mota, 1.0);
        assert_eq!(s.ids, 0);
        assert_eq!(s.frag, 0);
        assert_eq!(s.tid, 0.0);
        assert_eq!(s.lgd, 0.0);
        assert_eq!(s.mt, 1);
    }

    #[test]
    fn hand_case_two_misses_one_switch() {
        // 1 GT track over 10 frames, 2 missed frames, 1 id change:
        // MOTA = 1 - (0 + 2 + 1) / 10 = 0.7
        let mut frames = Vec::new();
        for i in 0..10 {
            let preds = match i {
                3 | 4 => vec![],
                0..=2 => vec![pred("t1", i as Scalar, 0.9)],
                _ => vec![pred("t2", i as Scalar, 0.9)],
            };
            frames.push(FrameObservations {
                gts: vec![gt("a", i as Scalar)],
                preds,
            });
        }
        let s = clear_mot(&[seq_from(frames)], 0.0, 2.0);
        assert_eq!(s.fn_, 2);
        assert_eq!(s.ids, 1);
        assert_eq!(s.fp, 0);
        assert_relative_eq!(s.mota, 0.7, epsilon = 1e-12);
        assert_eq!(s.frag, 1);
    }

    #[test]
    fn tid_two_frames_at_two_hz() {
        // first matched on its 3rd frame at 2 Hz -> TID = 2 frames x 0.5 s
        let mut frames = Vec::new();
        for i in 0..5 {
            let preds = if i >= 2 {
                vec![pred("t1", i as Scalar, 0.9)]
            } else {
                vec![]
            };
            frames.push(FrameObservations {
                gts: vec![gt("a", i as Scalar)],
                preds,
            });
        }
        let s = clear_mot(&[seq_from(frames)], 0.0, 2.0);
        assert_relative_eq!(s.tid, 1.0, epsilon = 1e-12);
        // the two leading unmatched frames are also the longest gap
        assert_relative_eq!(s.lgd, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn motar_formula_case() {
        // P = 10, TP = 8, FN = 2, FP = 1, IDS = 1 at recall 0.8:
        // MOTAR = 1 - (1 + 1 + 2 - 2) / 8 = 0.75
        let stats = ClearMotStats {
            tp: 8,
            fp: 1,
            fn_: 2,
            ids: 1,
            gt_count: 10,
            recall: 0.8,
            ..ClearMotStats::default()
        };
        assert_relative_eq!(motar(&stats), 0.75, epsilon = 1e-12);
    }

    #[test]
    fn motar_is_one_without_fp_and_ids() {
        let stats = ClearMotStats {
            tp: 6,
            fp: 0,
            fn_: 4,
            ids: 0,
            gt_count: 10,
            recall: 0.6,
            ..ClearMotStats::default()
        };
        assert_relative_eq!(motar(&stats), 1.0, epsilon = 1e-12);
    }

    fn perfect_seq(n: usize) -> SceneSequence {
        seq_from(
            (0..n)
                .map(|i| FrameObservations {
                    gts: vec![gt("a", i as Scalar), gt("b", i as Scalar + 30.0)],
                    preds: vec![
                        pred("t1", i as Scalar, 0.9),
                        pred("t2", i as Scalar + 30.0, 0.8),
                    ],
                })
                .collect(),
        )
    }

    #[test]
    fn perfect_tracker_sweep_extremes() {
        let seqs = vec![perfect_seq(10)];
        let out = amota_sweep(&seqs, &MatchingConfig::default());
        assert_relative_eq!(out.amota, 1.0, epsilon = 1e-9);
        assert_relative_eq!(out.amotp, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn empty_tracker_amota_zero() {
        let frames: Vec<FrameObservations> = (0..5)
            .map(|i| FrameObservations {
                gts: vec![gt("a", i as Scalar)],
                preds: vec![],
            })
            .collect();
        let out = amota_sweep(&[seq_from(frames)], &MatchingConfig::default());
        assert_eq!(out.amota, 0.0);
    }

    #[test]
    fn single_score_sweep_collapses() {
        // all predictions share one score; brute-force sweep oracle over the
        // single distinct threshold gives achievable-fraction x MOTAR there
        let mut frames = Vec::new();
        for i in 0..10 {
            let preds = if i < 6 {
                vec![pred("t1", i as Scalar, 0.5)]
            } else {
                vec![]
            };
            frames.push(FrameObservations {
                gts: vec![gt("a", i as Scalar)],
                preds,
            });
        }
        let seqs = vec![seq_from(frames)];
        let cfg = MatchingConfig::default();
        let out = amota_sweep(&seqs, &cfg);
        // only one operating point: threshold 0.5, recall 0.6, MOTAR 1
        let stats = clear_mot(&seqs, 0.5, cfg.match_distance);
        assert_relative_eq!(stats.recall, 0.6, epsilon = 1e-12);
        // achievable targets >= 0.1: {0.125..0.6} -> 21 of 37 counted points
        let achieved = out
            .points
            .iter()
            .zip(1..=cfg.recall_points)
            .filter(|(pt, k)| {
                pt.is_some() && *k as Scalar / cfg.recall_points as Scalar >= cfg.min_recall
            })
            .count();
        let counted = (1..=cfg.recall_points)
            .filter(|&k| k as Scalar / cfg.recall_points as Scalar >= cfg.min_recall)
            .count();
        let expect = achieved as Scalar * motar(&stats) / counted as Scalar;
        assert_relative_eq!(out.amota, expect, epsilon = 1e-12);
    }

    #[test]
    fn adding_far_fp_never_increases_amota() {
        let mut seqs = vec![perfect_seq(10)];
        let base = amota_sweep(&seqs, &MatchingConfig::default()).amota;
        for f in &mut seqs[0].frames {
            f.preds.push(pred("junk", 500.0, 0.99));
        }
        let with_fp = amota_sweep(&seqs, &MatchingConfig::default()).amota;
        assert!(with_fp <= base + 1e-12, "{with_fp} > {base}");
    }

    #[test]
    fn score_scale_and_id_relabel_invariance() {
        let mut frames = Vec::new();
        for i in 0..10 {
            frames.push(FrameObservations {
                gts: vec![gt("a", i as Scalar), gt("b", i as Scalar + 20.0)],
                preds: vec![
                    pred("t1", i as Scalar + 0.3, 0.2 + 0.05 * i as Scalar),
                    pred("t2", i as Scalar + 20.5, 0.9),
                ],
            });
        }
        let seqs = vec![seq_from(frames.clone())];
        let cfg = MatchingConfig::default();
        let base = amota_sweep(&seqs, &cfg);

        // strictly increasing score remap
        let remapped: Vec<FrameObservations> = frames
            .iter()
            .map(|f| FrameObservations {
                gts: f.gts.clone(),
                preds: f
                    .preds
                    .iter()
                    .map(|(id, c, s)| (id.clone(), *c, s * s * 0.5 + 0.1))
                    .collect(),
            })
            .collect();
        let rm = amota_sweep(&[seq_from(remapped)], &cfg);
        assert_relative_eq!(base.amota, rm.amota, epsilon = 1e-12);
        assert_relative_eq!(base.amotp, rm.amotp, epsilon = 1e-12);
        assert_eq!(base.best.ids, rm.best.ids);

        // bijective id relabel
        let relabeled: Vec<FrameObservations> = frames
            .iter()
            .map(|f| FrameObservations {
                gts: f.gts.clone(),
                preds: f
                    .preds
                    .iter()
                    .map(|(id, c, s)| (format!("x-{id}"), *c, *s))
                    .collect(),
            })
            .collect();
        let rl = amota_sweep(&[seq_from(relabeled)], &cfg);
        assert_relative_eq!(base.amota, rl.amota, epsilon = 1e-12);
        assert_eq!(base.best, rl.best);
    }

    #[test]
    fn detection_ap_extremes() {
        use crate::geom::{Box3D, TrackingClass};
        use crate::io::{Annotation, Frame, ResultBox, Scene};
        use crate::Pose;

        let mk_scene = |with_anns: bool| Scene {
            scene_id: "s".into(),
            frames: (0..5)
                .map(|i| Frame {
                    frame_id: format!("f{i}"),
                    timestamp_us: i as i64 * 500_000,
                    ego_pose: Pose::identity(),
                    lidar_path: "x.bin".into(),
                    annotations: if with_anns {
                        vec![Annotation {
                            track_id: "a".into(),
                            box3d: Box3D::new(
                                [i as f64, 0.0, 0.0],
                                [2.0, 4.0, 1.5],
                                0.0,
                                [0.0, 0.0],
                                TrackingClass::Car,
                            ),
                            num_lidar_pts: 5,
                        }]
                    } else {
                        vec![]
                    },
                })
                .collect(),
        };
        let scene = mk_scene(true);

        let mut perfect = TrackingResult::default();
        for i in 0..5 {
            perfect.results.insert(
                format!("f{i}"),
                vec![ResultBox {
                    translation: [i as f64, 0.0, 0.0],
                    size_wlh: [2.0, 4.0, 1.5],
                    rotation: [1.0, 0.0, 0.0, 0.0],
                    velocity: [0.0, 0.0],
                    tracking_id: "t".into(),
                    tracking_name: TrackingClass::Car,
                    tracking_score: 0.9,
                }],
            );
        }
        let cfg = MatchingConfig::default();
        let m = detection_map(&[scene.clone()], &perfect, &[0.5, 1.0, 2.0, 4.0], &cfg);
        assert_relative_eq!(m, 1.0, epsilon = 1e-9);

        let empty = TrackingResult::default();
        let m = detection_map(&[scene], &empty, &[0.5, 1.0, 2.0, 4.0], &cfg);
        assert_eq!(m, 0.0);
    }

    #[test]
    fn single_class_ap_matches_hand_integration() {
        // 5 GT boxes in one frame, 5 predictions: 3 TPs at scores
        // 0.9, 0.7, 0.5 and 2 FPs at 0.8, 0.6. PR points (score-ordered):
        // (r 0.2, p 1), (0.2, 0.5), (0.4, 2/3), (0.4, 0.5), (0.6, 0.6)
        let frames = vec![FrameObservations {
            gts: (0..5).map(|i| gt(&format!("g{i}"), 10.0 * i as Scalar)).collect(),
            preds: vec![
                pred("p0", 0.0, 0.9),
                pred("p1", 500.0, 0.8),
                pred("p2", 10.0, 0.7),
                pred("p3", 600.0, 0.6),
                pred("p4", 20.0, 0.5),
            ],
        }];
        let seqs = vec![seq_from(frames)];
        let ap = average_precision(&seqs, 5, 2.0);
        // hand integration of the interpolated curve, 101 samples, floors 0.1
        let rec = [0.2, 0.2, 0.4, 0.4, 0.6];
        let prc = [1.0, 0.5, 2.0 / 3.0, 0.5, 0.6];
        let interp = |r: f64| -> f64 {
            if r > 0.6 {
                return 0.0;
            }
            let mut i = 0;
            while i < rec.len() && rec[i] < r {
                i += 1;
            }
            if i == 0 || rec[i] == r {
                prc[i]
            } else {
                let (r0, r1) = (rec[i - 1], rec[i]);
                let (p0, p1) = (prc[i - 1], prc[i]);
                p0 + (p1 - p0) * (r - r0) / (r1 - r0)
            }
        };
        let mut acc = 0.0;
        let mut cnt = 0;
        for i in 0..=100 {
            let r = i as f64 / 100.0;
            if r <= 0.1 {
                continue;
            }
            acc += (interp(r) - 0.1_f64).max(0.0);
            cnt += 1;
        }
        let hand = acc / cnt as f64 / 0.9;
        assert_relative_eq!(ap, hand, epsilon = 1e-9);
    }
}
