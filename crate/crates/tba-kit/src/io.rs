//! Bit-exact file formats: `*.scene.jsonl` scenes, `*.bin` point clouds, and
//! tracking-result documents. Every CLI subcommand and test fixture speaks
//! these formats.
//!
//! Scene documents are line-delimited (one frame per line after a header) so
//! large scenes stream; point files are raw little-endian `f32x4` records.

use std::collections::BTreeMap;
use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Box3D, GeomError, PointCloud, Pose, TrackingClass};
use crate::Scalar;

pub const SCENE_FORMAT_VERSION: u64 = 1;
pub const POINT_RECORD_SIZE: usize = 16;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed document at line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("frame {frame_index}: {msg}")]
    BadFrame { frame_index: usize, msg: String },
    #[error("duplicate frame_id {frame_id:?} at frame index {frame_index}")]
    DuplicateFrameId { frame_index: usize, frame_id: String },
    #[error("non-increasing timestamp at frame index {frame_index}")]
    NonIncreasingTimestamps { frame_index: usize },
    #[error("unsupported format version {0} (supported major: 1)")]
    UnsupportedVersion(u64),
    #[error("truncated point file: {len} bytes is not a multiple of {record} (trailing record at byte offset {offset})")]
    TruncatedPoints { len: u64, record: usize, offset: u64 },
    #[error("tracking_score {score} outside [0, 1] for tracking_id {tracking_id:?} in frame {frame_id:?}")]
    BadScore {
        frame_id: String,
        tracking_id: String,
        score: f64,
    },
    #[error("unknown class name {0:?}")]
    UnknownClass(String),
    #[error("duplicate (frame_id, tracking_id) pair ({0:?}, {1:?})")]
    DuplicateTrackingId(String, String),
    #[error("invalid geometry: {0}")]
    Geom(#[from] GeomError),
    #[error("scene has no frames")]
    EmptyScene,
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// One annotated object in one frame; the box is in the world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub track_id: String,
    pub box3d: Box3D<Scalar>,
    pub num_lidar_pts: u64,
}

/// One timestamped LiDAR sweep with ego pose and annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub frame_id: String,
    pub timestamp_us: i64,
    pub ego_pose: Pose<Scalar>,
    pub lidar_path: String,
    pub annotations: Vec<Annotation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub scene_id: String,
    pub frames: Vec<Frame>,
}

impl Scene {
    pub fn validate(&self) -> Result<(), IoError> {
        if self.frames.is_empty() {
            return Err(IoError::EmptyScene);
        }
        let mut seen = HashSet::new();
        for (i, f) in self.frames.iter().enumerate() {
            if !seen.insert(f.frame_id.clone()) {
                return Err(IoError::DuplicateFrameId {
                    frame_index: i,
                    frame_id: f.frame_id.clone(),
                });
            }
            if i > 0 && f.timestamp_us <= self.frames[i - 1].timestamp_us {
                return Err(IoError::NonIncreasingTimestamps { frame_index: i });
            }
            f.ego_pose.validate().map_err(|e| IoError::BadFrame {
                frame_index: i,
                msg: format!("ego_pose: {e}"),
            })?;
            for a in &f.annotations {
                a.box3d.validate().map_err(|e| IoError::BadFrame {
                    frame_index: i,
                    msg: format!("annotation {}: {e}", a.track_id),
                })?;
            }
        }
        Ok(())
    }

    /// Median inter-frame gap in microseconds; 500 ms for single-frame scenes.
    pub fn frame_period_us(&self) -> i64 {
        let mut gaps: Vec<i64> = self
            .frames
            .windows(2)
            .map(|w| w[1].timestamp_us - w[0].timestamp_us)
            .collect();
        if gaps.is_empty() {
            return 500_000;
        }
        gaps.sort_unstable();
        gaps[gaps.len() / 2]
    }

    /// All track ids appearing anywhere in the scene.
    pub fn track_ids(&self) -> HashSet<String> {
        self.frames
            .iter()
            .flat_map(|f| f.annotations.iter().map(|a| a.track_id.clone()))
            .collect()
    }
}

/// A span of consecutive frames with their point clouds loaded; the training
/// sample unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub scene_id: String,
    pub start_index: usize,
    pub frames: Vec<Frame>,
    pub clouds: Vec<PointCloud>,
}

impl Clip {
    pub fn from_scene(
        scene: &Scene,
        start: usize,
        len: usize,
        point_root: &Path,
    ) -> Result<Clip, IoError> {
        assert!(len >= 1, "clip length must be >= 1");
        let frames: Vec<Frame> = scene.frames[start..start + len].to_vec();
        let clouds = frames
            .iter()
            .map(|f| read_points(&point_root.join(&f.lidar_path)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Clip {
            scene_id: scene.scene_id.clone(),
            start_index: start,
            frames,
            clouds,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

// ---------------------------------------------------------------------------
// wire structs

#[derive(Serialize, Deserialize)]
struct SceneHeaderWire {
    scene_id: String,
    version: u64,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct PoseWire {
    pub translation: [f64; 3],
    pub rotation: [f64; 4],
}

impl From<&Pose<Scalar>> for PoseWire {
    fn from(p: &Pose<Scalar>) -> Self {
        PoseWire {
            translation: p.translation,
            rotation: p.rotation,
        }
    }
}

impl PoseWire {
    pub(crate) fn into_pose(self) -> Pose<Scalar> {
        Pose {
            translation: self.translation,
            rotation: self.rotation,
        }
    }
}

#[derive(Serialize, Deserialize)]
pub(crate) struct BoxWire {
    pub center: [f64; 3],
    pub size_wlh: [f64; 3],
    pub yaw: f64,
    pub velocity: [f64; 2],
}

impl BoxWire {
    pub(crate) fn from_box(b: &Box3D<Scalar>) -> Self {
        BoxWire {
            center: b.center,
            size_wlh: b.size_wlh,
            yaw: b.yaw,
            velocity: b.velocity,
        }
    }

    pub(crate) fn into_box(self, class: TrackingClass) -> Box3D<Scalar> {
        Box3D {
            center: self.center,
            size_wlh: self.size_wlh,
            yaw: self.yaw,
            velocity: self.velocity,
            class,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct AnnWire {
    track_id: String,
    class: TrackingClass,
    center: [f64; 3],
    size_wlh: [f64; 3],
    yaw: f64,
    velocity: [f64; 2],
    num_pts: u64,
}

#[derive(Serialize, Deserialize)]
struct FrameWire {
    frame_id: String,
    timestamp_us: i64,
    ego_pose: PoseWire,
    lidar_path: String,
    anns: Vec<AnnWire>,
}

// ---------------------------------------------------------------------------
// scene files

pub fn read_scene(path: &Path) -> Result<Scene, IoError> {
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let (_, header_line) = lines
        .next()
        .ok_or_else(|| IoError::Malformed {
            line: 1,
            msg: "missing header line".into(),
        })?
        .1
        .map_err(|e| IoError::io(path, e))
        .map(|l| (0usize, l))?;
    let header: SceneHeaderWire =
        serde_json::from_str(&header_line).map_err(|e| IoError::Malformed {
            line: 1,
            msg: format!("header: {e}"),
        })?;
    if header.version != SCENE_FORMAT_VERSION {
        return Err(IoError::UnsupportedVersion(header.version));
    }

    let mut frames = Vec::new();
    for (lineno, line) in lines {
        let line = line.map_err(|e| IoError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let wire: FrameWire = serde_json::from_str(&line).map_err(|e| IoError::Malformed {
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        let annotations = wire
            .anns
            .into_iter()
            .map(|a| Annotation {
                track_id: a.track_id,
                box3d: Box3D {
                    center: a.center,
                    size_wlh: a.size_wlh,
                    yaw: a.yaw,
                    velocity: a.velocity,
                    class: a.class,
                },
                num_lidar_pts: a.num_pts,
            })
            .collect();
        frames.push(Frame {
            frame_id: wire.frame_id,
            timestamp_us: wire.timestamp_us,
            ego_pose: wire.ego_pose.into_pose(),
            lidar_path: wire.lidar_path,
            annotations,
        });
    }

    let scene = Scene {
        scene_id: header.scene_id,
        frames,
    };
    scene.validate()?;
    Ok(scene)
}

pub fn write_scene(scene: &Scene, path: &Path) -> Result<(), IoError> {
    scene.validate()?;
    let file = File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = SceneHeaderWire {
        scene_id: scene.scene_id.clone(),
        version: SCENE_FORMAT_VERSION,
    };
    let mut write_line = |v: &str| -> Result<(), IoError> {
        w.write_all(v.as_bytes()).map_err(|e| IoError::io(path, e))?;
        w.write_all(b"\n").map_err(|e| IoError::io(path, e))
    };
    write_line(&serde_json::to_string(&header).expect("serialize header"))?;
    for f in &scene.frames {
        let wire = FrameWire {
            frame_id: f.frame_id.clone(),
            timestamp_us: f.timestamp_us,
            ego_pose: PoseWire::from(&f.ego_pose),
            lidar_path: f.lidar_path.clone(),
            anns: f
                .annotations
                .iter()
                .map(|a| AnnWire {
                    track_id: a.track_id.clone(),
                    class: a.box3d.class,
                    center: a.box3d.center,
                    size_wlh: a.box3d.size_wlh,
                    yaw: a.box3d.yaw,
                    velocity: a.box3d.velocity,
                    num_pts: a.num_lidar_pts,
                })
                .collect(),
        };
        write_line(&serde_json::to_string(&wire).expect("serialize frame"))?;
    }
    Ok(())
}

/// Read every `*.scene.jsonl` under a directory, sorted by file name.
pub fn read_scene_dir(dir: &Path) -> Result<Vec<Scene>, IoError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| IoError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().ends_with(".scene.jsonl")))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_scene(p)).collect()
}

// ---------------------------------------------------------------------------
// point files

pub fn read_points(path: &Path) -> Result<PointCloud, IoError> {
    let mut file = File::open(path).map_err(|e| IoError::io(path, e))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf).map_err(|e| IoError::io(path, e))?;
    if buf.len() % POINT_RECORD_SIZE != 0 {
        let offset = (buf.len() / POINT_RECORD_SIZE * POINT_RECORD_SIZE) as u64;
        return Err(IoError::TruncatedPoints {
            len: buf.len() as u64,
            record: POINT_RECORD_SIZE,
            offset,
        });
    }
    let points = buf
        .chunks_exact(POINT_RECORD_SIZE)
        .map(|rec| {
            [
                f32::from_le_bytes(rec[0..4].try_into().unwrap()),
                f32::from_le_bytes(rec[4..8].try_into().unwrap()),
                f32::from_le_bytes(rec[8..12].try_into().unwrap()),
                f32::from_le_bytes(rec[12..16].try_into().unwrap()),
            ]
        })
        .collect();
    Ok(PointCloud { points })
}

pub fn write_points(cloud: &PointCloud, path: &Path) -> Result<(), IoError> {
    let mut buf = Vec::with_capacity(cloud.points.len() * POINT_RECORD_SIZE);
    for p in &cloud.points {
        for v in p {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| IoError::io(path, e))
}

// ---------------------------------------------------------------------------
// tracking results

/// One tracked box in the benchmark submission schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBox {
    pub translation: [f64; 3],
    pub size_wlh: [f64; 3],
    pub rotation: [f64; 4],
    pub velocity: [f64; 2],
    pub tracking_id: String,
    pub tracking_name: TrackingClass,
    pub tracking_score: f64,
}

impl ResultBox {
    pub fn yaw(&self) -> f64 {
        let p = Pose::<Scalar> {
            translation: self.translation,
            rotation: self.rotation,
        };
        p.yaw()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultMeta {
    pub use_lidar: bool,
}

/// Per-frame tracked boxes keyed by frame_id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingResult {
    pub meta: ResultMeta,
    pub results: BTreeMap<String, Vec<ResultBox>>,
}

impl Default for TrackingResult {
    fn default() -> Self {
        TrackingResult {
            meta: ResultMeta { use_lidar: true },
            results: BTreeMap::new(),
        }
    }
}

impl TrackingResult {
    pub fn validate(&self) -> Result<(), IoError> {
        for (frame_id, boxes) in &self.results {
            let mut seen = HashSet::new();
            for b in boxes {
                if !(0.0..=1.0).contains(&b.tracking_score) {
                    return Err(IoError::BadScore {
                        frame_id: frame_id.clone(),
                        tracking_id: b.tracking_id.clone(),
                        score: b.tracking_score,
                    });
                }
                if !seen.insert(&b.tracking_id) {
                    return Err(IoError::DuplicateTrackingId(
                        frame_id.clone(),
                        b.tracking_id.clone(),
                    ));
                }
            }
        }
        Ok(())
    }
}

pub fn read_result(path: &Path) -> Result<TrackingResult, IoError> {
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    let result: TrackingResult =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| IoError::Malformed {
            line: e.line(),
            msg: e.to_string(),
        })?;
    result.validate()?;
    Ok(result)
}

pub fn write_result(result: &TrackingResult, path: &Path) -> Result<(), IoError> {
    result.validate()?;
    let file = File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, result).map_err(|e| IoError::Malformed {
        line: 0,
        msg: e.to_string(),
    })?;
    w.write_all(b"\n").map_err(|e| IoError::io(path, e))?;
    Ok(())
}
