//! Ground-truth track database and temporally consistent track-sampling
//! augmentation.
//!
//! The database stores, per (class, track), the ordered world-frame boxes and
//! the object-frame LiDAR points cropped from the source scenes. Augmentation
//! samples whole tracks whose ids do not collide with the clip, injects L
//! consecutive instances in chronological order, prunes per frame on any BEV
//! overlap, and swaps the covered region of the original cloud for the stored
//! object points.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{bev_overlap_area, transform_box, Box3D, PointCloud, Pose, TrackingClass};
use crate::io::{read_points, write_points, Annotation, BoxWire, Clip, IoError, Scene};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("missing point file for frame {frame_id:?}: {source}")]
    MissingPoints {
        frame_id: String,
        #[source]
        source: IoError,
    },
    #[error("annotation {track_id:?} in frame {frame_id:?} has non-positive size")]
    BadAnnotation { frame_id: String, track_id: String },
    #[error("database io: {0}")]
    Db(#[from] IoError),
    #[error("malformed database index at line {line}: {msg}")]
    BadIndex { line: usize, msg: String },
}

/// One stored track observation: world-frame box plus object-frame points.
///
/// Object frame: origin at the box center, x along the box length (yaw
/// removed), so every point satisfies |x| <= l/2, |y| <= w/2, |z| <= h/2.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackInstanceRecord {
    pub track_id: String,
    pub class: TrackingClass,
    pub frame_index: usize,
    pub world_box: Box3D<Scalar>,
    pub object_points: PointCloud,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DbProvenance {
    pub source_scenes: Vec<String>,
    pub min_points_flagged: bool,
}

/// Index from (class, track_id) to the ordered instance records.
#[derive(Debug, Clone, Default)]
pub struct TrackDatabase {
    pub tracks: BTreeMap<(TrackingClass, String), Vec<TrackInstanceRecord>>,
    pub provenance: DbProvenance,
}

impl TrackDatabase {
    pub fn track_count(&self) -> usize {
        self.tracks.len()
    }

    pub fn tracks_of_class(
        &self,
        class: TrackingClass,
    ) -> impl Iterator<Item = (&String, &Vec<TrackInstanceRecord>)> {
        self.tracks
            .range((class, String::new())..)
            .take_while(move |((c, _), _)| *c == class)
            .map(|((_, id), recs)| (id, recs))
    }
}

/// Per-clip augmentation settings. `per_class_targets` are the full-rate
/// injection quotas; `sampling_rate` scales them (round half up).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub per_class_targets: BTreeMap<TrackingClass, u32>,
    pub sampling_rate: Scalar,
    pub rng_seed: u64,
    pub min_track_length: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        let per_class_targets = [
            (TrackingClass::Bicycle, 6),
            (TrackingClass::Bus, 4),
            (TrackingClass::Car, 2),
            (TrackingClass::Motorcycle, 6),
            (TrackingClass::Pedestrian, 2),
            (TrackingClass::Trailer, 6),
            (TrackingClass::Truck, 3),
        ]
        .into_iter()
        .collect();
        SamplingConfig {
            per_class_targets,
            sampling_rate: 1.0,
            rng_seed: 0,
            min_track_length: 1,
        }
    }
}

impl SamplingConfig {
    pub fn target_for(&self, class: TrackingClass) -> usize {
        let quota = *self.per_class_targets.get(&class).unwrap_or(&0) as Scalar;
        (self.sampling_rate * quota + 0.5).floor() as usize
    }
}

/// Build the track database from scenes: crop each annotated box's points
/// (closed membership) out of the frame cloud and store them in the object
/// frame. Records with zero points are kept but carry an empty cloud.
pub fn build_track_db(
    scenes: &[Scene],
    point_root: &Path,
    _min_track_length: usize,
) -> Result<TrackDatabase, SamplingError> {
    let mut tracks: BTreeMap<(TrackingClass, String), Vec<TrackInstanceRecord>> = BTreeMap::new();
    for scene in scenes {
        for frame in &scene.frames {
            let cloud = read_points(&point_root.join(&frame.lidar_path)).map_err(|e| {
                SamplingError::MissingPoints {
                    frame_id: frame.frame_id.clone(),
                    source: e,
                }
            })?;
            for ann in &frame.annotations {
                if ann.box3d.validate().is_err() {
                    return Err(SamplingError::BadAnnotation {
                        frame_id: frame.frame_id.clone(),
                        track_id: ann.track_id.clone(),
                    });
                }
                // annotation boxes are world frame; points are ego frame
                let box_ego = transform_box(&ann.box3d, &Pose::identity(), &frame.ego_pose);
                let object_points = crop_to_object_frame(&cloud, &box_ego);
                let key = (ann.box3d.class, ann.track_id.clone());
                let recs = tracks.entry(key).or_default();
                recs.push(TrackInstanceRecord {
                    track_id: ann.track_id.clone(),
                    class: ann.box3d.class,
                    frame_index: recs.len(),
                    world_box: ann.box3d,
                    object_points,
                });
            }
        }
    }
    Ok(TrackDatabase {
        tracks,
        provenance: DbProvenance {
            source_scenes: scenes.iter().map(|s| s.scene_id.clone()).collect(),
            min_points_flagged: true,
        },
    })
}

/// Points of `cloud` inside `box_ego` (closed boundary), re-expressed in the
/// object canonical frame.
pub fn crop_to_object_frame(cloud: &PointCloud, box_ego: &Box3D<Scalar>) -> PointCloud {
    let (s, c) = box_ego.yaw.sin_cos();
    let points = cloud
        .points
        .iter()
        .filter(|p| box_ego.contains([p[0] as Scalar, p[1] as Scalar, p[2] as Scalar], 0.0))
        .map(|p| {
            let dx = p[0] as Scalar - box_ego.center[0];
            let dy = p[1] as Scalar - box_ego.center[1];
            let dz = p[2] as Scalar - box_ego.center[2];
            [
                (c * dx + s * dy) as f32,
                (-s * dx + c * dy) as f32,
                dz as f32,
                p[3],
            ]
        })
        .collect();
    PointCloud { points }
}

/// Object-frame points placed at `box_ego`'s pose in the ego frame.
pub fn object_points_to_ego(points: &PointCloud, box_ego: &Box3D<Scalar>) -> PointCloud {
    let (s, c) = box_ego.yaw.sin_cos();
    let out = points
        .points
        .iter()
        .map(|p| {
            let (x, y, z) = (p[0] as Scalar, p[1] as Scalar, p[2] as Scalar);
            [
                (box_ego.center[0] + c * x - s * y) as f32,
                (box_ego.center[1] + s * x + c * y) as f32,
                (box_ego.center[2] + z) as f32,
                p[3],
            ]
        })
        .collect();
    PointCloud { points: out }
}

// ---------------------------------------------------------------------------
// on-disk database

#[derive(Serialize, Deserialize)]
struct DbHeaderWire {
    version: u64,
    provenance: DbProvenance,
}

#[derive(Serialize, Deserialize)]
struct DbRecordWire {
    track_id: String,
    class: TrackingClass,
    frame_index: usize,
    world_box: BoxWire,
    points_path: String,
    num_points: usize,
}

pub fn save_db(db: &TrackDatabase, dir: &Path) -> Result<(), SamplingError> {
    std::fs::create_dir_all(dir.join("points")).map_err(|e| {
        SamplingError::Db(IoError::Io {
            path: dir.display().to_string(),
            source: e,
        })
    })?;
    let index_path = dir.join("index.jsonl");
    let file = File::create(&index_path).map_err(|e| {
        SamplingError::Db(IoError::Io {
            path: index_path.display().to_string(),
            source: e,
        })
    })?;
    let mut w = BufWriter::new(file);
    let header = DbHeaderWire {
        version: 1,
        provenance: db.provenance.clone(),
    };
    writeln!(w, "{}", serde_json::to_string(&header).unwrap()).map_err(|e| {
        SamplingError::Db(IoError::Io {
            path: index_path.display().to_string(),
            source: e,
        })
    })?;
    for ((class, track_id), recs) in &db.tracks {
        for rec in recs {
            let points_path = format!("points/{}_{}_{}.bin", class, track_id, rec.frame_index);
            write_points(&rec.object_points, &dir.join(&points_path))?;
            let wire = DbRecordWire {
                track_id: track_id.clone(),
                class: *class,
                frame_index: rec.frame_index,
                world_box: BoxWire::from_box(&rec.world_box),
                points_path,
                num_points: rec.object_points.len(),
            };
            writeln!(w, "{}", serde_json::to_string(&wire).unwrap()).map_err(|e| {
                SamplingError::Db(IoError::Io {
                    path: index_path.display().to_string(),
                    source: e,
                })
            })?;
        }
    }
    Ok(())
}

pub fn load_db(dir: &Path) -> Result<TrackDatabase, SamplingError> {
    let index_path = dir.join("index.jsonl");
    let file = File::open(&index_path).map_err(|e| {
        SamplingError::Db(IoError::Io {
            path: index_path.display().to_string(),
            source: e,
        })
    })?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let header_line = lines
        .next()
        .ok_or(SamplingError::BadIndex {
            line: 1,
            msg: "missing header".into(),
        })?
        .1
        .map_err(|e| SamplingError::BadIndex {
            line: 1,
            msg: e.to_string(),
        })?;
    let header: DbHeaderWire =
        serde_json::from_str(&header_line).map_err(|e| SamplingError::BadIndex {
            line: 1,
            msg: e.to_string(),
        })?;
    if header.version != 1 {
        return Err(SamplingError::BadIndex {
            line: 1,
            msg: format!("unsupported version {}", header.version),
        });
    }
    let mut db = TrackDatabase {
        tracks: BTreeMap::new(),
        provenance: header.provenance,
    };
    for (lineno, line) in lines {
        let line = line.map_err(|e| SamplingError::BadIndex {
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let wire: DbRecordWire =
            serde_json::from_str(&line).map_err(|e| SamplingError::BadIndex {
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        let object_points = read_points(&dir.join(&wire.points_path))?;
        let rec = TrackInstanceRecord {
            track_id: wire.track_id.clone(),
            class: wire.class,
            frame_index: wire.frame_index,
            world_box: wire.world_box.into_box(wire.class),
            object_points,
        };
        db.tracks
            .entry((wire.class, wire.track_id))
            .or_default()
            .push(rec);
    }
    for recs in db.tracks.values_mut() {
        recs.sort_by_key(|r| r.frame_index);
    }
    Ok(db)
}

// ---------------------------------------------------------------------------
// sampling and injection

/// One sampled track: which stored track and which consecutive window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackSample {
    pub class: TrackingClass,
    pub track_id: String,
    pub start_offset: usize,
    pub length: usize,
}

/// Randomly sample tracks for a clip, avoiding every track id already in the
/// clip. Tracks at least as long as the clip get a random start window;
/// shorter eligible tracks contribute their full length aligned to the clip
/// start. Classes with too few candidates yield fewer samples.
pub fn sample_tracks(
    db: &TrackDatabase,
    clip: &Clip,
    cfg: &SamplingConfig,
    rng: &mut impl Rng,
) -> Vec<TrackSample> {
    let clip_len = clip.len();
    let existing: HashSet<String> = clip
        .frames
        .iter()
        .flat_map(|f| f.annotations.iter().map(|a| a.track_id.clone()))
        .collect();

    let mut samples = Vec::new();
    for class in TrackingClass::ALL {
        let target = cfg.target_for(class);
        if target == 0 {
            continue;
        }
        let mut candidates: Vec<(&String, usize)> = db
            .tracks_of_class(class)
            .filter(|(id, recs)| {
                !existing.contains(id.as_str())
                    && (recs.len() >= clip_len || recs.len() >= cfg.min_track_length)
            })
            .map(|(id, recs)| (id, recs.len()))
            .collect();
        // partial Fisher-Yates over the sorted candidate list
        let take = target.min(candidates.len());
        for k in 0..take {
            let pick = rng.random_range(k..candidates.len());
            candidates.swap(k, pick);
            let (id, len) = candidates[k];
            let (start_offset, length) = if len >= clip_len {
                (rng.random_range(0..=len - clip_len), clip_len)
            } else {
                (0, len)
            };
            samples.push(TrackSample {
                class,
                track_id: id.clone(),
                start_offset,
                length,
            });
        }
    }
    samples
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameOutcome {
    Injected,
    Pruned,
    Absent,
}

#[derive(Debug, Clone, Serialize)]
pub struct InjectionOutcome {
    pub track_id: String,
    pub class: TrackingClass,
    pub start_offset: usize,
    /// Per clip frame: injected, pruned by collision, or absent (short track).
    pub frames: Vec<FrameOutcome>,
    /// A prune between two injected frames leaves a temporal gap.
    pub has_gap: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct AugmentationReport {
    pub scene_id: String,
    pub clip_start: usize,
    pub requested: BTreeMap<String, usize>,
    pub sampled: BTreeMap<String, usize>,
    pub injections: Vec<InjectionOutcome>,
}

/// Inject sampled tracks into a clip, chronologically over its frames.
///
/// Per frame: the instance's world box is re-expressed in the frame's ego
/// frame; any BEV overlap with an original GT box or an earlier surviving
/// injected box prunes the instance from that frame only; original points
/// under surviving footprints are replaced by the stored object points.
pub fn inject_tracks(
    clip: &Clip,
    samples: &[TrackSample],
    db: &TrackDatabase,
) -> (Clip, AugmentationReport) {
    let mut out = clip.clone();
    let mut report = AugmentationReport {
        scene_id: clip.scene_id.clone(),
        clip_start: clip.start_index,
        ..AugmentationReport::default()
    };
    let mut outcomes: Vec<InjectionOutcome> = samples
        .iter()
        .map(|s| InjectionOutcome {
            track_id: s.track_id.clone(),
            class: s.class,
            start_offset: s.start_offset,
            frames: Vec::new(),
            has_gap: false,
        })
        .collect();

    for f in 0..clip.len() {
        let frame = &mut out.frames[f];
        let original_world: Vec<Box3D<Scalar>> =
            frame.annotations.iter().map(|a| a.box3d).collect();
        let mut accepted_world: Vec<Box3D<Scalar>> = Vec::new();
        let mut accepted_ego: Vec<(usize, Box3D<Scalar>)> = Vec::new();

        for (si, sample) in samples.iter().enumerate() {
            let recs = &db.tracks[&(sample.class, sample.track_id.clone())];
            if f >= sample.length {
                outcomes[si].frames.push(FrameOutcome::Absent);
                continue;
            }
            let rec = &recs[sample.start_offset + f];
            let collides = original_world
                .iter()
                .chain(accepted_world.iter())
                .any(|b| bev_overlap_area(&rec.world_box, b) > 0.0);
            if collides {
                outcomes[si].frames.push(FrameOutcome::Pruned);
                continue;
            }
            outcomes[si].frames.push(FrameOutcome::Injected);
            accepted_world.push(rec.world_box);
            let box_ego = transform_box(&rec.world_box, &Pose::identity(), &frame.ego_pose);
            accepted_ego.push((si, box_ego));
            frame.annotations.push(Annotation {
                track_id: sample.track_id.clone(),
                box3d: rec.world_box,
                num_lidar_pts: rec.object_points.len() as u64,
            });
        }

        // replace the covered regions of the original cloud
        let cloud = &mut out.clouds[f];
        cloud.points.retain(|p| {
            !accepted_ego
                .iter()
                .any(|(_, b)| b.bev_contains([p[0] as Scalar, p[1] as Scalar]))
        });
        for (si, box_ego) in &accepted_ego {
            let sample = &samples[*si];
            let rec = &db.tracks[&(sample.class, sample.track_id.clone())][sample.start_offset + f];
            cloud
                .points
                .extend(object_points_to_ego(&rec.object_points, box_ego).points);
        }
    }

    for o in &mut outcomes {
        let injected: Vec<usize> = o
            .frames
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == FrameOutcome::Injected)
            .map(|(i, _)| i)
            .collect();
        if let (Some(&first), Some(&last)) = (injected.first(), injected.last()) {
            o.has_gap = injected.len() != last - first + 1;
        }
    }

    for class in TrackingClass::ALL {
        report.sampled.insert(
            class.name().to_string(),
            samples.iter().filter(|s| s.class == class).count(),
        );
    }
    report.injections = outcomes;
    (out, report)
}

/// Derive a per-clip seed from the base seed, scene id, and clip start.
pub fn clip_seed(base: u64, scene_id: &str, clip_start: usize) -> u64 {
    // FNV-1a over the identifying tuple
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    eat(&base.to_le_bytes());
    eat(scene_id.as_bytes());
    eat(&(clip_start as u64).to_le_bytes());
    h
}

/// Augment one scene in consecutive clips of `clip_len` frames (final short
/// remainder included), rewriting point files under `out_points`.
pub fn augment_scene(
    scene: &Scene,
    db: &TrackDatabase,
    cfg: &SamplingConfig,
    clip_len: usize,
    point_root: &Path,
    out_points: &Path,
) -> Result<(Scene, Vec<AugmentationReport>, Vec<(PathBuf, PointCloud)>), SamplingError> {
    use rand::SeedableRng;

    let mut frames = Vec::with_capacity(scene.frames.len());
    let mut reports = Vec::new();
    let mut clouds = Vec::new();
    let mut start = 0;
    while start < scene.frames.len() {
        let len = clip_len.min(scene.frames.len() - start);
        let clip = Clip::from_scene(scene, start, len, point_root)?;
        let mut rng =
            rand_chacha::ChaCha12Rng::seed_from_u64(clip_seed(cfg.rng_seed, &scene.scene_id, start));
        let samples = sample_tracks(db, &clip, cfg, &mut rng);
        let (aug, mut report) = inject_tracks(&clip, &samples, db);
        for class in TrackingClass::ALL {
            report
                .requested
                .insert(class.name().to_string(), cfg.target_for(class));
        }
        for (i, mut frame) in aug.frames.into_iter().enumerate() {
            let rel = PathBuf::from(format!("{}_{}.bin", scene.scene_id, frame.frame_id));
            frame.lidar_path = rel.to_string_lossy().into_owned();
            clouds.push((out_points.join(&rel), aug.clouds[i].clone()));
            frames.push(frame);
        }
        reports.push(report);
        start += len;
    }
    Ok((
        Scene {
            scene_id: scene.scene_id.clone(),
            frames,
        },
        reports,
        clouds,
    ))
}
