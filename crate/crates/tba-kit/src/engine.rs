//! Query-slot lifecycle: slot propagation under the confidence and
//! GT-matched criteria, a deterministic surrogate detector/decoder, and a
//! synthetic scene generator for desk-scale experiments.

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{transform_box, Box3D, PointCloud, Pose, TrackingClass};
use crate::io::{Annotation, Frame, ResultBox, Scene, TrackingResult};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("duplicate track uid {0} in input slots")]
    DuplicateTrackUid(u64),
    #[error("gt_matched propagation requires ground-truth annotations")]
    GtRequired,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotKind {
    Proposal,
    Track,
}

/// One query slot carried between frames.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySlot {
    pub slot_id: u64,
    pub kind: SlotKind,
    pub confidence: Scalar,
    /// Current box, expressed in the ego frame of the slot's frame.
    pub box3d: Box3D<Scalar>,
    pub track_uid: Option<u64>,
    pub prev_gt: Option<String>,
    pub age_frames: u32,
    /// Predicted future BEV centers.
    pub trajectory: Vec<[Scalar; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagationMode {
    Confidence,
    GtMatched,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PropagationPolicy {
    pub mode: PropagationMode,
    pub tau_pass: Scalar,
    pub max_proposals: usize,
    /// Confidence lift applied when a track slot re-detects its object.
    pub persistence_bonus: Scalar,
    /// Multiplicative confidence decay for unmatched track slots.
    pub unmatched_decay: Scalar,
    /// Association gate, BEV center distance in meters (class-constrained).
    pub gate_m: Scalar,
    /// Optional hard cap on consecutive unmatched frames; off by default
    /// (deletion is emergent from the confidence decay).
    pub max_unmatched_age: Option<u32>,
    pub trajectory_horizon: usize,
}

impl Default for PropagationPolicy {
    fn default() -> Self {
        PropagationPolicy {
            mode: PropagationMode::Confidence,
            tau_pass: 0.4,
            max_proposals: 200,
            persistence_bonus: 0.15,
            unmatched_decay: 0.5,
            gate_m: 2.0,
            max_unmatched_age: None,
            trajectory_horizon: 4,
        }
    }
}

/// Surrogate single-frame detector standing in for the neural detector.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateDetectorConfig {
    pub p_det: Scalar,
    pub sigma_xy: Scalar,
    pub sigma_z: Scalar,
    /// Dimension noise as a fraction of each dimension.
    pub sigma_dim: Scalar,
    pub sigma_yaw: Scalar,
    /// Expected clutter detections per frame.
    pub lambda_fp: Scalar,
    /// Confidence falls as exp(-k * perturbation); this is k.
    pub confidence_decay: Scalar,
    /// Clutter confidence range (low-mode: skewed toward the minimum).
    pub fp_confidence: [Scalar; 2],
    /// Half extent of the square in which clutter appears (ego frame).
    pub fp_half_extent: Scalar,
    pub rng_seed: u64,
}

impl Default for SurrogateDetectorConfig {
    fn default() -> Self {
        SurrogateDetectorConfig {
            p_det: 1.0,
            sigma_xy: 0.0,
            sigma_z: 0.0,
            sigma_dim: 0.0,
            sigma_yaw: 0.0,
            lambda_fp: 0.0,
            confidence_decay: 1.0,
            fp_confidence: [0.2, 0.9],
            fp_half_extent: 40.0,
            rng_seed: 0,
        }
    }
}

/// One surrogate detection, in the frame's ego coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub box3d: Box3D<Scalar>,
    pub class_scores: [Scalar; 7],
    pub confidence: Scalar,
}

fn fnv_mix(base: u64, tag: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for chunk in [&base.to_le_bytes()[..], tag.as_bytes(), &index.to_le_bytes()[..]] {
        for &b in chunk {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

fn one_hot_scores(class: TrackingClass, confidence: Scalar) -> [Scalar; 7] {
    let mut s = [(1.0 - confidence) / 6.0; 7];
    s[class.index()] = confidence;
    s
}

/// Detect the frame's annotated objects with probability `p_det`, perturbed
/// by Gaussian noise, plus Poisson clutter. Output boxes are in the frame's
/// ego coordinates; confidence decreases with the perturbation magnitude.
pub fn surrogate_detect(
    frame: &Frame,
    frame_index: usize,
    cfg: &SurrogateDetectorConfig,
) -> Vec<Detection> {
    let mut rng = ChaCha12Rng::seed_from_u64(fnv_mix(
        cfg.rng_seed,
        &frame.frame_id,
        frame_index as u64,
    ));
    let n_xy = Normal::new(0.0, cfg.sigma_xy).unwrap();
    let n_z = Normal::new(0.0, cfg.sigma_z).unwrap();
    let n_dim = Normal::new(0.0, cfg.sigma_dim).unwrap();
    let n_yaw = Normal::new(0.0, cfg.sigma_yaw).unwrap();

    let mut out = Vec::new();
    for ann in &frame.annotations {
        if !(rng.random::<Scalar>() < cfg.p_det) {
            continue;
        }
        let ego_box = transform_box(&ann.box3d, &Pose::identity(), &frame.ego_pose);
        let dx = n_xy.sample(&mut rng);
        let dy = n_xy.sample(&mut rng);
        let dz = n_z.sample(&mut rng);
        let fdim: Scalar = n_dim.sample(&mut rng);
        let dyaw = n_yaw.sample(&mut rng);
        let noisy = Box3D::new(
            [
                ego_box.center[0] + dx,
                ego_box.center[1] + dy,
                ego_box.center[2] + dz,
            ],
            [
                (ego_box.size_wlh[0] * (1.0 + fdim)).max(0.05),
                (ego_box.size_wlh[1] * (1.0 + fdim)).max(0.05),
                (ego_box.size_wlh[2] * (1.0 + fdim)).max(0.05),
            ],
            ego_box.yaw + dyaw,
            ego_box.velocity,
            ego_box.class,
        );
        let perturbation =
            (dx * dx + dy * dy).sqrt() + dz.abs() + fdim.abs() + dyaw.abs();
        let confidence = (-cfg.confidence_decay * perturbation).exp();
        out.push(Detection {
            box3d: noisy,
            class_scores: one_hot_scores(noisy.class, confidence),
            confidence,
        });
    }

    if cfg.lambda_fp > 0.0 {
        let n_fp = Poisson::new(cfg.lambda_fp).unwrap().sample(&mut rng) as usize;
        for _ in 0..n_fp {
            let class = TrackingClass::ALL[rng.random_range(0..7)];
            let x = rng.random_range(-cfg.fp_half_extent..cfg.fp_half_extent);
            let y = rng.random_range(-cfg.fp_half_extent..cfg.fp_half_extent);
            let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let b = Box3D::new(
                [x, y, 1.0],
                class_size(class),
                yaw,
                [0.0, 0.0],
                class,
            );
            // skew clutter confidence toward the low end of the range
            let u: Scalar = rng.random();
            let [lo, hi] = cfg.fp_confidence;
            let confidence = lo + (hi - lo) * u * u;
            out.push(Detection {
                box3d: b,
                class_scores: one_hot_scores(class, confidence),
                confidence,
            });
        }
    }
    out
}

/// Typical box dimensions (w, l, h) used for clutter and generated tracks.
pub fn class_size(class: TrackingClass) -> [Scalar; 3] {
    match class {
        TrackingClass::Bicycle => [0.6, 1.7, 1.3],
        TrackingClass::Bus => [2.9, 11.0, 3.4],
        TrackingClass::Car => [1.95, 4.6, 1.7],
        TrackingClass::Motorcycle => [0.8, 2.1, 1.4],
        TrackingClass::Pedestrian => [0.65, 0.7, 1.75],
        TrackingClass::Trailer => [2.9, 12.0, 3.8],
        TrackingClass::Truck => [2.5, 7.0, 2.8],
    }
}

/// Constant-velocity forecast: centers[k] = center + (k+1)·Δt·velocity.
pub fn predict_trajectory(slot: &QuerySlot, horizon: usize, dt_s: Scalar) -> Vec<[Scalar; 2]> {
    (1..=horizon)
        .map(|k| {
            let t = k as Scalar * dt_s;
            [
                slot.box3d.center[0] + t * slot.box3d.velocity[0],
                slot.box3d.center[1] + t * slot.box3d.velocity[1],
            ]
        })
        .collect()
}

/// One emitted tracked box (current ego frame).
#[derive(Debug, Clone, PartialEq)]
pub struct EmittedBox {
    pub track_uid: u64,
    pub box3d: Box3D<Scalar>,
    pub confidence: Scalar,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepOutput {
    pub emitted: Vec<EmittedBox>,
    pub next_slots: Vec<QuerySlot>,
    /// Next-frame track slots that were not matched to any GT this frame
    /// (only populated when GT was supplied).
    pub propagated_fp_track_slots: usize,
}

/// Allocates slot ids and track uids; uids are never reused within a scene.
#[derive(Debug, Clone, Default)]
pub struct IdAllocator {
    next_slot: u64,
    next_uid: u64,
}

impl IdAllocator {
    pub fn slot(&mut self) -> u64 {
        self.next_slot += 1;
        self.next_slot - 1
    }
    pub fn uid(&mut self) -> u64 {
        self.next_uid += 1;
        self.next_uid - 1
    }
}

/// Advance the slot set by one frame.
///
/// `gt_ego` carries this frame's ground truth in ego coordinates; it is
/// required for `gt_matched` propagation and, when present, lets the step
/// count propagated false-positive track slots in either mode.
pub fn step(
    slots: &[QuerySlot],
    detections: &[Detection],
    policy: &PropagationPolicy,
    ego_prev: &Pose<Scalar>,
    ego_curr: &Pose<Scalar>,
    dt_s: Scalar,
    gt_ego: Option<&[Box3D<Scalar>]>,
    ids: &mut IdAllocator,
) -> Result<StepOutput, EngineError> {
    let mut seen = HashSet::new();
    for s in slots {
        if let Some(uid) = s.track_uid {
            if !seen.insert(uid) {
                return Err(EngineError::DuplicateTrackUid(uid));
            }
        }
    }
    if matches!(policy.mode, PropagationMode::GtMatched) && gt_ego.is_none() {
        return Err(EngineError::GtRequired);
    }

    // (a) ego-compensate every carried slot into the current frame, then
    // project it one step along its constant-velocity trajectory
    let mut work: Vec<QuerySlot> = slots
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.box3d = transform_box(&s.box3d, ego_prev, ego_curr);
            s.box3d.center[0] += s.box3d.velocity[0] * dt_s;
            s.box3d.center[1] += s.box3d.velocity[1] * dt_s;
            s
        })
        .collect();

    // (b) track slots claim their nearest unclaimed detection within the gate
    let mut claimed = vec![false; detections.len()];
    let mut matched_det = vec![false; work.len()];
    for (wi, slot) in work.iter_mut().enumerate() {
        if slot.kind != SlotKind::Track {
            continue;
        }
        let mut best: Option<(usize, Scalar)> = None;
        for (di, det) in detections.iter().enumerate() {
            if claimed[di] || det.box3d.class != slot.box3d.class {
                continue;
            }
            let dx = det.box3d.center[0] - slot.box3d.center[0];
            let dy = det.box3d.center[1] - slot.box3d.center[1];
            let d = (dx * dx + dy * dy).sqrt();
            if d <= policy.gate_m && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((di, d));
            }
        }
        if let Some((di, _)) = best {
            claimed[di] = true;
            matched_det[wi] = true;
            slot.box3d = detections[di].box3d;
            slot.confidence = (detections[di].confidence + policy.persistence_bonus).min(1.0);
            slot.age_frames += 1;
        } else {
            slot.confidence *= policy.unmatched_decay;
            slot.age_frames += 1;
        }
    }

    // (c) unclaimed detections become proposal slots, by descending confidence
    let mut order: Vec<usize> = (0..detections.len()).filter(|&i| !claimed[i]).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .confidence
            .partial_cmp(&detections[a].confidence)
            .unwrap()
            .then(a.cmp(&b))
    });
    for di in order.into_iter().take(policy.max_proposals) {
        let det = &detections[di];
        work.push(QuerySlot {
            slot_id: ids.slot(),
            kind: SlotKind::Proposal,
            confidence: det.confidence,
            box3d: det.box3d,
            track_uid: None,
            prev_gt: None,
            age_frames: 0,
            trajectory: Vec::new(),
        });
        matched_det.push(false);
    }

    // GT matching (for gt_matched propagation and FP-slot accounting)
    let mut matched_gt = vec![false; work.len()];
    if let Some(gts) = gt_ego {
        let mut gt_claimed = vec![false; gts.len()];
        let mut slot_order: Vec<usize> = (0..work.len()).collect();
        slot_order.sort_by(|&a, &b| {
            work[b]
                .confidence
                .partial_cmp(&work[a].confidence)
                .unwrap()
                .then(work[a].slot_id.cmp(&work[b].slot_id))
        });
        for wi in slot_order {
            let slot = &work[wi];
            let mut best: Option<(usize, Scalar)> = None;
            for (gi, gt) in gts.iter().enumerate() {
                if gt_claimed[gi] || gt.class != slot.box3d.class {
                    continue;
                }
                let dx = gt.center[0] - slot.box3d.center[0];
                let dy = gt.center[1] - slot.box3d.center[1];
                let d = (dx * dx + dy * dy).sqrt();
                if d <= policy.gate_m && best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((gi, d));
                }
            }
            if let Some((gi, _)) = best {
                gt_claimed[gi] = true;
                matched_gt[wi] = true;
            }
        }
    }

    // (d) emit boxes strictly above tau_pass; first crossing births a track
    let mut emitted = Vec::new();
    for slot in work.iter_mut() {
        if slot.confidence > policy.tau_pass {
            if slot.track_uid.is_none() {
                slot.track_uid = Some(ids.uid());
                slot.kind = SlotKind::Track;
                slot.age_frames = 1;
            }
            emitted.push(EmittedBox {
                track_uid: slot.track_uid.unwrap(),
                box3d: slot.box3d,
                confidence: slot.confidence,
            });
        }
    }

    // (e) propagate per mode
    let mut next_slots = Vec::new();
    let mut propagated_fp_track_slots = 0;
    for (wi, mut slot) in work.into_iter().enumerate() {
        let keep = match policy.mode {
            PropagationMode::Confidence => slot.confidence > policy.tau_pass,
            PropagationMode::GtMatched => matched_gt[wi],
        };
        if !keep {
            continue;
        }
        if let Some(max_age) = policy.max_unmatched_age {
            if slot.kind == SlotKind::Track && !matched_det[wi] && slot.age_frames > max_age {
                continue;
            }
        }
        if slot.kind == SlotKind::Track && gt_ego.is_some() && !matched_gt[wi] {
            propagated_fp_track_slots += 1;
        }
        slot.trajectory = predict_trajectory(&slot, policy.trajectory_horizon, dt_s);
        next_slots.push(slot);
    }

    Ok(StepOutput {
        emitted,
        next_slots,
        propagated_fp_track_slots,
    })
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TrackerStats {
    pub frames: u64,
    pub births: u64,
    /// Track slots carried into the next frame without a GT match.
    pub propagated_fp_track_slots: u64,
}

/// Run the surrogate pipeline over a whole scene.
///
/// Scene annotations serve as the detector input and, when required, as the
/// ground truth for `gt_matched` propagation. Emitted boxes are re-expressed
/// in world coordinates for the results file.
pub fn run_tracker(
    scene: &Scene,
    detector: &SurrogateDetectorConfig,
    policy: &PropagationPolicy,
) -> Result<(TrackingResult, TrackerStats), EngineError> {
    let dt_s = scene.frame_period_us() as Scalar / 1e6;
    let mut ids = IdAllocator::default();
    let mut slots: Vec<QuerySlot> = Vec::new();
    let mut prev_pose = Pose::identity();
    let mut result = TrackingResult::default();
    let mut stats = TrackerStats::default();
    let mut seen_uids: HashSet<u64> = HashSet::new();
    let mut live_uids: HashSet<u64> = HashSet::new();

    for (fi, frame) in scene.frames.iter().enumerate() {
        let detections = surrogate_detect(frame, fi, detector);
        let gt_ego: Vec<Box3D<Scalar>> = frame
            .annotations
            .iter()
            .map(|a| transform_box(&a.box3d, &Pose::identity(), &frame.ego_pose))
            .collect();
        let ego_prev = if fi == 0 { frame.ego_pose } else { prev_pose };
        let out = step(
            &slots,
            &detections,
            policy,
            &ego_prev,
            &frame.ego_pose,
            dt_s,
            Some(&gt_ego),
            &mut ids,
        )?;

        let mut boxes = Vec::new();
        for e in &out.emitted {
            debug_assert!(
                live_uids.contains(&e.track_uid) || seen_uids.insert(e.track_uid),
                "track uid resurrected"
            );
            let world = transform_box(&e.box3d, &frame.ego_pose, &Pose::identity());
            boxes.push(ResultBox {
                translation: world.center,
                size_wlh: world.size_wlh,
                rotation: Pose::from_yaw_translation(world.yaw, [0.0; 3]).rotation,
                velocity: world.velocity,
                tracking_id: format!("t{}", e.track_uid),
                tracking_name: world.class,
                tracking_score: e.confidence,
            });
        }
        if !boxes.is_empty() {
            result.results.insert(frame.frame_id.clone(), boxes);
        }

        stats.frames += 1;
        stats.propagated_fp_track_slots += out.propagated_fp_track_slots as u64;
        live_uids = out
            .next_slots
            .iter()
            .filter_map(|s| s.track_uid)
            .collect();
        slots = out.next_slots;
        prev_pose = frame.ego_pose;
    }
    stats.births = ids.next_uid;
    Ok((result, stats))
}

// ---------------------------------------------------------------------------
// synthetic scene generation

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneScript {
    pub scene_id: String,
    pub frame_count: usize,
    pub frame_period_us: i64,
    /// Expected track births per frame (Poisson), split across classes.
    pub birth_rate: Scalar,
    pub class_weights: BTreeMap<TrackingClass, Scalar>,
    /// Mean track lifetime in frames (1 + Poisson(mean - 1)).
    pub mean_lifetime_frames: Scalar,
    pub speed_range: [Scalar; 2],
    /// Per-axis Gaussian jitter added to each motion step, meters.
    pub motion_noise_sigma: Scalar,
    pub ego_speed: Scalar,
    pub ego_yaw_rate: Scalar,
    /// Half extent of the square spawn region, meters (world frame).
    pub spawn_half_extent: Scalar,
    /// Surface-point budget scale: points ≈ this · footprint / distance.
    pub point_density: Scalar,
    pub background_points: usize,
    pub rng_seed: u64,
}

impl Default for SceneScript {
    fn default() -> Self {
        SceneScript {
            scene_id: "scene-0".into(),
            frame_count: 20,
            frame_period_us: 500_000,
            birth_rate: 0.7,
            class_weights: BTreeMap::new(),
            mean_lifetime_frames: 12.0,
            speed_range: [0.0, 8.0],
            motion_noise_sigma: 0.02,
            ego_speed: 2.0,
            ego_yaw_rate: 0.0,
            spawn_half_extent: 40.0,
            point_density: 60.0,
            background_points: 128,
            rng_seed: 0,
        }
    }
}

struct LiveTrack {
    track_id: String,
    class: TrackingClass,
    center: [Scalar; 3],
    velocity: [Scalar; 2],
    remaining: usize,
}

/// Generate a synthetic scene plus one point cloud per frame (ego frame).
/// Deterministic for a fixed script; track ids embed the scene id, so ids
/// are globally unique across scenes with distinct ids.
pub fn generate_scene(script: &SceneScript) -> (Scene, Vec<PointCloud>) {
    let mut rng = ChaCha12Rng::seed_from_u64(script.rng_seed);
    let dt = script.frame_period_us as Scalar / 1e6;
    let weights: Vec<(TrackingClass, Scalar)> = if script.class_weights.is_empty() {
        TrackingClass::ALL.iter().map(|&c| (c, 1.0)).collect()
    } else {
        script
            .class_weights
            .iter()
            .map(|(&c, &w)| (c, w))
            .collect()
    };
    let weight_sum: Scalar = weights.iter().map(|(_, w)| w).sum();

    let mut live: Vec<LiveTrack> = Vec::new();
    let mut next_track = 0u64;
    let mut frames = Vec::with_capacity(script.frame_count);
    let mut clouds = Vec::with_capacity(script.frame_count);
    let n_step = Normal::new(0.0, script.motion_noise_sigma).unwrap();

    for fi in 0..script.frame_count {
        let t = fi as Scalar * dt;
        let ego_yaw = script.ego_yaw_rate * t;
        let ego_pose = Pose::from_yaw_translation(
            ego_yaw,
            [script.ego_speed * t, 0.0, 0.0],
        );

        // advance existing tracks
        live.retain_mut(|trk| {
            if trk.remaining == 0 {
                return false;
            }
            if fi > 0 {
                trk.center[0] += trk.velocity[0] * dt + n_step.sample(&mut rng);
                trk.center[1] += trk.velocity[1] * dt + n_step.sample(&mut rng);
            }
            trk.remaining -= 1;
            true
        });

        // births
        let births = if script.birth_rate > 0.0 {
            Poisson::new(script.birth_rate).unwrap().sample(&mut rng) as usize
        } else {
            0
        };
        for _ in 0..births {
            let pick = rng.random_range(0.0..weight_sum);
            let mut acc = 0.0;
            let mut class = weights[0].0;
            for &(c, w) in &weights {
                acc += w;
                if pick < acc {
                    class = c;
                    break;
                }
            }
            let speed = rng.random_range(script.speed_range[0]..=script.speed_range[1]);
            let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let lifetime = 1 + if script.mean_lifetime_frames > 1.0 {
                Poisson::new(script.mean_lifetime_frames - 1.0)
                    .unwrap()
                    .sample(&mut rng) as usize
            } else {
                0
            };
            let size_h = class_size(class)[2];
            live.push(LiveTrack {
                track_id: format!("{}_g{}", script.scene_id, next_track),
                class,
                center: [
                    rng.random_range(-script.spawn_half_extent..script.spawn_half_extent),
                    rng.random_range(-script.spawn_half_extent..script.spawn_half_extent),
                    size_h / 2.0,
                ],
                velocity: [speed * heading.cos(), speed * heading.sin()],
                remaining: lifetime,
            });
            next_track += 1;
        }

        // annotations + surface points
        let mut annotations = Vec::new();
        let mut points: Vec<[f32; 4]> = Vec::new();
        for trk in &live {
            let size = class_size(trk.class);
            let yaw = if trk.velocity[0] == 0.0 && trk.velocity[1] == 0.0 {
                0.0
            } else {
                trk.velocity[1].atan2(trk.velocity[0])
            };
            let world_box = Box3D::new(trk.center, size, yaw, trk.velocity, trk.class);
            let ego_box = transform_box(&world_box, &Pose::identity(), &ego_pose);
            let dist = (ego_box.center[0].powi(2) + ego_box.center[1].powi(2))
                .sqrt()
                .max(1.0);
            let n_pts = ((script.point_density * world_box.footprint_area() / dist).ceil()
                as usize)
                .max(1);
            let (s, c) = ego_box.yaw.sin_cos();
            for _ in 0..n_pts {
                let x = rng.random_range(-0.5..0.5) * size[1];
                let y = rng.random_range(-0.5..0.5) * size[0];
                let z = rng.random_range(-0.5..0.5) * size[2];
                points.push([
                    (ego_box.center[0] + c * x - s * y) as f32,
                    (ego_box.center[1] + s * x + c * y) as f32,
                    (ego_box.center[2] + z) as f32,
                    rng.random_range(0.0..1.0f64) as f32,
                ]);
            }
            annotations.push(Annotation {
                track_id: trk.track_id.clone(),
                box3d: world_box,
                num_lidar_pts: n_pts as u64,
            });
        }
        for _ in 0..script.background_points {
            points.push([
                rng.random_range(-60.0..60.0f64) as f32,
                rng.random_range(-60.0..60.0f64) as f32,
                0.0,
                rng.random_range(0.0..1.0f64) as f32,
            ]);
        }

        // frame ids embed the scene id: results files key frames globally
        let frame_id = format!("{}_{:04}", script.scene_id, fi);
        frames.push(Frame {
            frame_id: frame_id.clone(),
            timestamp_us: fi as i64 * script.frame_period_us,
            ego_pose,
            lidar_path: format!("{}.bin", frame_id),
            annotations,
        });
        clouds.push(PointCloud::new(points));
    }

    (
        Scene {
            scene_id: script.scene_id.clone(),
            frames,
        },
        clouds,
    )
}

/// Relative paths of a scene's point files, parallel to its frames.
pub fn cloud_paths(scene: &Scene) -> Vec<PathBuf> {
    scene
        .frames
        .iter()
        .map(|f| PathBuf::from(&f.lidar_path))
        .collect()
}
