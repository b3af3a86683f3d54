//! `tba-kit` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error. All randomness is
//! controlled by explicit seeds; identical inputs and seeds produce
//! byte-identical outputs regardless of `--jobs`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use tba_kit::assignment::{assign_two_stage, CostConfig, Prediction, QueryKind};
use tba_kit::engine::{
    generate_scene, predict_trajectory, run_tracker, PropagationMode, PropagationPolicy,
    QuerySlot, SceneScript, SlotKind, SurrogateDetectorConfig, TrackerStats,
};
use tba_kit::geom::{transform_box, Box3D, Pose, TrackingClass};
use tba_kit::io::{
    read_points, read_result, read_scene, read_scene_dir, write_points, write_result,
    write_scene, TrackingResult,
};
use tba_kit::losses::{
    clip_loss, focal_cls_loss, frame_loss, gaussian_focal_heatmap_loss, l1_box_loss,
    trajectory_loss, FrameLossBreakdown, FrameLossComponents, LossWeights,
};
use tba_kit::metrics::{detection_map, evaluate, MatchingConfig};
use tba_kit::render::{render_bev, RenderBox, RenderStyle};
use tba_kit::sampling::{augment_scene, build_track_db, load_db, save_db, SamplingConfig};
use tba_kit::Scalar;

#[derive(Parser)]
#[command(name = "tba-kit", version, about = "LiDAR tracking toolkit: scene simulation, track-sampling augmentation, query propagation, assignment, losses, metrics, rendering")]
struct Cli {
    /// Base RNG seed; overrides seeds from --config
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON config file; command-line flags win over its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores for eval/build-db)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Emit errors as single-line JSON on stderr
    #[arg(long, global = true)]
    json_errors: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Confidence,
    GtMatched,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a track database from annotated scenes
    BuildDb {
        /// Directory of *.scene.jsonl files plus their point files
        #[arg(long)]
        scenes: PathBuf,
        /// Output database directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Inject sampled tracks into scenes, clip by clip
    Augment {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        scenes: PathBuf,
        /// Sampling rate scaling the per-class quotas
        #[arg(long)]
        rate: Option<Scalar>,
        /// Clip length in frames
        #[arg(long, default_value_t = 3)]
        clip_len: usize,
        #[arg(long)]
        out: PathBuf,
        /// Write the per-clip augmentation report here
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Generate synthetic scenes from a script file
    Simulate {
        /// JSON scene script (one object or an array of them)
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the surrogate tracker over scenes
    Track {
        #[arg(long)]
        scenes: PathBuf,
        /// Surrogate detector config (JSON); defaults to noiseless
        #[arg(long)]
        detector: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "confidence")]
        policy: PolicyArg,
        /// Propagation threshold tau_pass
        #[arg(long)]
        tau: Option<Scalar>,
        #[arg(long)]
        out: PathBuf,
        /// Write per-scene tracker statistics here
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Run the two-stage GT assignment on a prediction/GT pair (audit surface)
    Assign {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        gts: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the composite clip loss breakdown
    Losses {
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        gts: PathBuf,
        /// Loss weights (JSON); defaults otherwise
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Write the breakdown here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a results file against ground-truth scenes
    Eval {
        /// Directory of ground-truth *.scene.jsonl files
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also print the per-class table
        #[arg(long)]
        table: bool,
    },
    /// Render one frame's BEV view to SVG
    Render {
        /// Scene file (*.scene.jsonl)
        #[arg(long)]
        scene: PathBuf,
        /// Frame id to render (default: first frame)
        #[arg(long)]
        frame: Option<String>,
        /// Draw boxes from this results file instead of ground truth
        #[arg(long)]
        results: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Optional sections of the --config file; flags override these.
#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    sampling: Option<SamplingConfig>,
    detector: Option<SurrogateDetectorConfig>,
    policy: Option<PropagationPolicy>,
    cost: Option<CostConfig>,
    weights: Option<LossWeights>,
    matching: Option<MatchingConfig>,
    style: Option<RenderStyle>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Io(#[from] tba_kit::io::IoError),
    #[error("{0}")]
    Sampling(#[from] tba_kit::sampling::SamplingError),
    #[error("{0}")]
    Engine(#[from] tba_kit::engine::EngineError),
    #[error("{0}")]
    Assign(#[from] tba_kit::assignment::AssignError),
    #[error("{0}")]
    Loss(#[from] tba_kit::losses::LossError),
    #[error("{0}")]
    Metrics(#[from] tba_kit::metrics::MetricsError),
    #[error("cannot read {path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Data(String),
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::File {
        path: path.display().to_string(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.display().to_string(),
        source: e,
    })
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    std::fs::write(path, text + "\n").map_err(|e| CliError::File {
        path: path.display().to_string(),
        source: e,
    })
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::File {
        path: path.display().to_string(),
        source: e,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("TBA_KIT_LOG", "warn"),
    )
    .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    let json_errors = cli.json_errors;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if json_errors {
                eprintln!(
                    "{}",
                    serde_json::json!({ "error": e.to_string() })
                );
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    let config: ConfigFile = match &cli.config {
        Some(path) => read_json(path)?,
        None => ConfigFile::default(),
    };

    match cli.cmd {
        Cmd::BuildDb { scenes, out } => {
            let scene_list = read_scene_dir(&scenes)?;
            let db = build_track_db(&scene_list, &scenes, 1)?;
            save_db(&db, &out)?;
            log::info!("built database with {} tracks", db.track_count());
            Ok(())
        }
        Cmd::Augment {
            db,
            scenes,
            rate,
            clip_len,
            out,
            report,
        } => {
            use rayon::prelude::*;
            if clip_len == 0 {
                return Err(CliError::Data("clip length must be >= 1".into()));
            }
            let db = load_db(&db)?;
            let scene_list = read_scene_dir(&scenes)?;
            let mut cfg = config.sampling.unwrap_or_default();
            if let Some(rate) = rate {
                if !(0.0..=1.0).contains(&rate) {
                    return Err(CliError::Data(format!("rate {rate} not in [0, 1]")));
                }
                cfg.sampling_rate = rate;
            }
            if let Some(seed) = cli.seed {
                cfg.rng_seed = seed;
            }
            ensure_dir(&out)?;
            let outputs: Vec<_> = scene_list
                .par_iter()
                .map(|scene| augment_scene(scene, &db, &cfg, clip_len, &scenes, &out))
                .collect::<Result<_, _>>()?;
            let mut reports = BTreeMap::new();
            for (scene, scene_reports, clouds) in outputs {
                for (path, cloud) in &clouds {
                    write_points(cloud, path)?;
                }
                write_scene(&scene, &out.join(format!("{}.scene.jsonl", scene.scene_id)))?;
                reports.insert(scene.scene_id.clone(), scene_reports);
            }
            if let Some(report_path) = report {
                write_json(&reports, &report_path)?;
            }
            Ok(())
        }
        Cmd::Simulate { script, out } => {
            // the script file holds one scene script or an array of them
            let value: serde_json::Value = read_json(&script)?;
            let mut scripts: Vec<SceneScript> = if value.is_array() {
                serde_json::from_value(value).map_err(|e| CliError::Parse {
                    path: script.display().to_string(),
                    source: e,
                })?
            } else {
                vec![serde_json::from_value(value).map_err(|e| CliError::Parse {
                    path: script.display().to_string(),
                    source: e,
                })?]
            };
            if let Some(seed) = cli.seed {
                for (i, s) in scripts.iter_mut().enumerate() {
                    s.rng_seed = seed.wrapping_add(i as u64);
                }
            }
            ensure_dir(&out)?;
            for s in &scripts {
                let (scene, clouds) = generate_scene(s);
                for (frame, cloud) in scene.frames.iter().zip(clouds.iter()) {
                    write_points(cloud, &out.join(&frame.lidar_path))?;
                }
                write_scene(&scene, &out.join(format!("{}.scene.jsonl", scene.scene_id)))?;
            }
            Ok(())
        }
        Cmd::Track {
            scenes,
            detector,
            policy,
            tau,
            out,
            stats,
        } => {
            use rayon::prelude::*;
            let scene_list = read_scene_dir(&scenes)?;
            let mut det = match detector {
                Some(path) => read_json::<SurrogateDetectorConfig>(&path)?,
                None => config.detector.unwrap_or_default(),
            };
            if let Some(seed) = cli.seed {
                det.rng_seed = seed;
            }
            let mut pol = config.policy.unwrap_or_default();
            pol.mode = match policy {
                PolicyArg::Confidence => PropagationMode::Confidence,
                PolicyArg::GtMatched => PropagationMode::GtMatched,
            };
            if let Some(tau) = tau {
                if !(0.0 < tau && tau < 1.0) {
                    return Err(CliError::Data(format!("tau {tau} not in (0, 1)")));
                }
                pol.tau_pass = tau;
            }
            if matches!(pol.mode, PropagationMode::GtMatched)
                && scene_list
                    .iter()
                    .all(|s| s.frames.iter().all(|f| f.annotations.is_empty()))
            {
                return Err(CliError::Data(
                    "gt-matched propagation requires annotated scenes".into(),
                ));
            }
            let runs: Vec<(TrackingResult, TrackerStats)> = scene_list
                .par_iter()
                .map(|scene| run_tracker(scene, &det, &pol))
                .collect::<Result<_, _>>()?;
            let mut merged = TrackingResult::default();
            let mut stat_map = BTreeMap::new();
            for (scene, (result, st)) in scene_list.iter().zip(runs) {
                for (frame_id, boxes) in result.results {
                    if merged.results.insert(frame_id.clone(), boxes).is_some() {
                        return Err(CliError::Data(format!(
                            "frame id {frame_id:?} appears in more than one scene"
                        )));
                    }
                }
                stat_map.insert(scene.scene_id.clone(), st);
            }
            write_result(&merged, &out)?;
            if let Some(stats_path) = stats {
                write_json(&stat_map, &stats_path)?;
            }
            Ok(())
        }
        Cmd::Assign { preds, gts, out } => {
            let preds: Vec<PredWire> = read_json(&preds)?;
            let gts: Vec<GtWire> = read_json(&gts)?;
            let preds: Vec<Prediction> = preds.into_iter().map(PredWire::into_prediction).collect();
            let gts: Vec<(String, Box3D<Scalar>)> = gts
                .into_iter()
                .map(|g| (g.track_id.clone(), g.into_box()))
                .collect();
            let cost = config.cost.unwrap_or_default();
            let result = assign_two_stage(&preds, &gts, &cost)?;
            let doc = AssignDoc {
                matches: result
                    .matches
                    .iter()
                    .zip(result.stages.iter())
                    .enumerate()
                    .map(|(i, (m, s))| MatchDoc {
                        pred: i,
                        gt: *m,
                        gt_track_id: m.map(|k| gts[k].0.clone()),
                        stage: *s,
                    })
                    .collect(),
                cost_matrix: result.cost_matrix,
            };
            write_json(&doc, &out)
        }
        Cmd::Losses {
            preds,
            gts,
            weights,
            out,
        } => {
            let pred_doc: LossPredDoc = read_json(&preds)?;
            let gt_doc: LossGtDoc = read_json(&gts)?;
            let w = match weights {
                Some(path) => read_json::<LossWeights>(&path)?,
                None => config.weights.unwrap_or_default(),
            };
            let cost = config.cost.unwrap_or_default();
            if pred_doc.frames.len() != gt_doc.frames.len() {
                return Err(CliError::Data(format!(
                    "prediction file has {} frames, ground truth has {}",
                    pred_doc.frames.len(),
                    gt_doc.frames.len()
                )));
            }
            let mut frames = Vec::new();
            for (pf, gf) in pred_doc.frames.iter().zip(gt_doc.frames.iter()) {
                frames.push(frame_loss(
                    frame_components(pf, gf, &cost)?,
                    w,
                ));
            }
            let doc = LossOutDoc {
                clip_total: clip_loss(&frames),
                frames,
            };
            match out {
                Some(path) => write_json(&doc, &path),
                None => {
                    println!("{}", serde_json::to_string_pretty(&doc).expect("serializable"));
                    Ok(())
                }
            }
        }
        Cmd::Eval {
            gt,
            results,
            out,
            table,
        } => {
            let scene_list = read_scene_dir(&gt)?;
            let result = read_result(&results)?;
            let cfg = config.matching.unwrap_or_default();
            let mut report = evaluate(&scene_list, &result, &cfg)?;
            report.detection_map = Some(detection_map(
                &scene_list,
                &result,
                &[0.5, 1.0, 2.0, 4.0],
                &cfg,
            ));
            write_json(&report, &out)?;
            if table {
                print!("{}", report.render_table());
            }
            Ok(())
        }
        Cmd::Render {
            scene,
            frame,
            results,
            out,
        } => {
            let scene_doc = read_scene(&scene)?;
            let frame = match &frame {
                Some(id) => scene_doc
                    .frames
                    .iter()
                    .find(|f| &f.frame_id == id)
                    .ok_or_else(|| CliError::Data(format!("no frame {id:?} in scene")))?,
                None => &scene_doc.frames[0],
            };
            let scene_dir = scene.parent().unwrap_or(Path::new("."));
            let cloud = read_points(&scene_dir.join(&frame.lidar_path))?;
            let dt = scene_doc.frame_period_us() as Scalar / 1e6;
            let style = config.style.unwrap_or_default();

            // world-frame (id, box) pairs from either source, drawn in ego frame
            let world_boxes: Vec<(String, Box3D<Scalar>)> = match results {
                Some(path) => read_result(&path)?
                    .results
                    .get(&frame.frame_id)
                    .map(|boxes| {
                        boxes
                            .iter()
                            .map(|b| {
                                let box3d = Box3D::new(
                                    b.translation,
                                    b.size_wlh,
                                    b.yaw(),
                                    b.velocity,
                                    b.tracking_name,
                                );
                                (b.tracking_id.clone(), box3d)
                            })
                            .collect()
                    })
                    .unwrap_or_default(),
                None => frame
                    .annotations
                    .iter()
                    .map(|a| (a.track_id.clone(), a.box3d))
                    .collect(),
            };
            let boxes: Vec<RenderBox> = world_boxes
                .into_iter()
                .map(|(track_id, world)| {
                    let ego = transform_box(&world, &Pose::identity(), &frame.ego_pose);
                    let slot = QuerySlot {
                        slot_id: 0,
                        kind: SlotKind::Track,
                        confidence: 1.0,
                        box3d: ego,
                        track_uid: None,
                        prev_gt: None,
                        age_frames: 1,
                        trajectory: vec![],
                    };
                    RenderBox {
                        track_id,
                        box3d: ego,
                        trajectory: predict_trajectory(&slot, 4, dt),
                    }
                })
                .collect();
            let svg = render_bev(&cloud, &boxes, &style);
            std::fs::write(&out, svg).map_err(|e| CliError::File {
                path: out.display().to_string(),
                source: e,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// wire schemas of the assign/losses subcommands

#[derive(Deserialize)]
struct BoxDoc {
    center: [Scalar; 3],
    size_wlh: [Scalar; 3],
    yaw: Scalar,
    #[serde(default)]
    velocity: [Scalar; 2],
    class: TrackingClass,
}

impl BoxDoc {
    fn into_box(self) -> Box3D<Scalar> {
        Box3D::new(self.center, self.size_wlh, self.yaw, self.velocity, self.class)
    }
}

#[derive(Deserialize)]
struct PredWire {
    slot_ref: u64,
    kind: QueryKind,
    #[serde(rename = "box")]
    box3d: BoxDoc,
    class_scores: [Scalar; 7],
    #[serde(default)]
    prev_gt: Option<String>,
}

impl PredWire {
    fn into_prediction(self) -> Prediction {
        Prediction {
            slot_ref: self.slot_ref,
            kind: self.kind,
            box3d: self.box3d.into_box(),
            class_scores: self.class_scores,
            prev_gt: self.prev_gt,
        }
    }
}

#[derive(Deserialize)]
struct GtWire {
    track_id: String,
    #[serde(flatten)]
    box3d: BoxDoc,
}

impl GtWire {
    fn into_box(self) -> Box3D<Scalar> {
        self.box3d.into_box()
    }
}

#[derive(Serialize)]
struct MatchDoc {
    pred: usize,
    gt: Option<usize>,
    gt_track_id: Option<String>,
    stage: Option<u8>,
}

#[derive(Serialize)]
struct AssignDoc {
    matches: Vec<MatchDoc>,
    cost_matrix: Vec<Vec<Scalar>>,
}

/// One prediction head: boxes, class scores, and the GT index each
/// prediction is assigned to (null = unmatched).
#[derive(Deserialize)]
struct HeadDoc {
    boxes: Vec<BoxDoc>,
    class_scores: Vec<[Scalar; 7]>,
    assignment: Vec<Option<usize>>,
}

#[derive(Deserialize)]
struct LossPredFrame {
    /// Detection head (from proposal queries).
    d: HeadDoc,
    /// Re-detection head (from track queries).
    r: HeadDoc,
    #[serde(default)]
    heatmap: Vec<Vec<Scalar>>,
    /// Predicted future BEV centers, parallel to the `d` head's boxes.
    #[serde(default)]
    trajectories: Vec<Vec<[Scalar; 2]>>,
}

#[derive(Deserialize)]
struct LossPredDoc {
    frames: Vec<LossPredFrame>,
}

#[derive(Deserialize)]
struct LossGtFrame {
    boxes: Vec<BoxDoc>,
    #[serde(default)]
    heatmap: Vec<Vec<Scalar>>,
    /// Ground-truth future BEV centers, parallel to `boxes`.
    #[serde(default)]
    trajectories: Vec<Vec<[Scalar; 2]>>,
}

#[derive(Deserialize)]
struct LossGtDoc {
    frames: Vec<LossGtFrame>,
}

#[derive(Serialize)]
struct LossOutDoc {
    clip_total: Scalar,
    frames: Vec<FrameLossBreakdown>,
}

fn head_losses(
    head: &HeadDoc,
    gt_boxes: &[Box3D<Scalar>],
    gt_classes: &[TrackingClass],
    cost: &CostConfig,
) -> Result<(Scalar, Scalar), CliError> {
    if head.boxes.len() != head.class_scores.len()
        || head.boxes.len() != head.assignment.len()
    {
        return Err(CliError::Data(
            "head boxes, class_scores, and assignment must have equal length".into(),
        ));
    }
    if let Some(k) = head.assignment.iter().flatten().find(|&&k| k >= gt_boxes.len()) {
        return Err(CliError::Data(format!(
            "assignment references GT index {k} out of range"
        )));
    }
    let boxes: Vec<Box3D<Scalar>> = head
        .boxes
        .iter()
        .map(|b| {
            Box3D::new(b.center, b.size_wlh, b.yaw, b.velocity, b.class)
        })
        .collect();
    let reg = l1_box_loss(&boxes, gt_boxes, &head.assignment);
    let cls = focal_cls_loss(
        &head.class_scores,
        &head.assignment,
        gt_classes,
        cost.alpha,
        cost.gamma,
    );
    Ok((reg, cls))
}

fn frame_components(
    pf: &LossPredFrame,
    gf: &LossGtFrame,
    cost: &CostConfig,
) -> Result<FrameLossComponents, CliError> {
    let gt_boxes: Vec<Box3D<Scalar>> = gf
        .boxes
        .iter()
        .map(|b| Box3D::new(b.center, b.size_wlh, b.yaw, b.velocity, b.class))
        .collect();
    let gt_classes: Vec<TrackingClass> = gt_boxes.iter().map(|b| b.class).collect();
    let (reg_d, cls_d) = head_losses(&pf.d, &gt_boxes, &gt_classes, cost)?;
    let (reg_r, cls_r) = head_losses(&pf.r, &gt_boxes, &gt_classes, cost)?;

    let heatmap = if pf.heatmap.is_empty() && gf.heatmap.is_empty() {
        0.0
    } else {
        gaussian_focal_heatmap_loss(&pf.heatmap, &gf.heatmap, 2.0, 4.0)?
    };

    // pair predicted trajectories with their assigned GT's trajectory
    let mut pred_trajs = Vec::new();
    let mut gt_trajs = Vec::new();
    for (i, m) in pf.d.assignment.iter().enumerate() {
        if let Some(k) = m {
            if let (Some(p), Some(g)) = (pf.trajectories.get(i), gf.trajectories.get(*k)) {
                pred_trajs.push(p.clone());
                gt_trajs.push(g.clone());
            }
        }
    }
    let trajectory = trajectory_loss(&pred_trajs, &gt_trajs)?;

    Ok(FrameLossComponents {
        heatmap,
        trajectory,
        reg_d,
        cls_d,
        reg_r,
        cls_r,
    })
}
