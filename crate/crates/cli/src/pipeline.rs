//! Batch refinement and warp checks over a frame manifest.

use std::path::{Path, PathBuf};

use moda_core::geometry::{inverse_warp, photometric_loss, CameraIntrinsics, Pose};
use moda_core::losses_eval::{confusion, cross_entropy, miou, ofr_loss, ConfusionMatrix};
use moda_core::motion_masks::instance_masks;
use moda_core::object_discovery::{discover_objects, ObjectMask};
use moda_core::semantic_mining::refine_frame;
use moda_core::tensor::{
    load_flo, load_label_png, load_map, save_label_png, BinaryMask, DepthMap, FeatureMap,
    ImageMap, LabelMap, MotionMap, PredictionMap, IGNORE_LABEL,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::manifest::{FrameManifest, FrameRecord};

pub const SCHEMA_VERSION: u32 = 1;

/// Runs `f` on a pool of `jobs` threads (0 = one per core).
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {jobs} workers: {e}")))?;
    Ok(pool.install(f))
}

/// Loads a PNG label map, mapping `ignore_label` onto [`IGNORE_LABEL`].
pub fn load_labels(path: &Path, ignore_label: u8) -> Result<LabelMap> {
    let labels = load_label_png(path)?;
    if ignore_label == IGNORE_LABEL {
        return Ok(labels);
    }
    let data = labels
        .data()
        .iter()
        .map(|&l| if l == ignore_label { IGNORE_LABEL } else { l })
        .collect();
    Ok(LabelMap::new(labels.height(), labels.width(), data)?)
}

/// Motion masks, object discovery and refinement for one frame held in
/// memory.
pub struct FrameRefinement {
    pub refined: LabelMap,
    pub instances: usize,
    pub objects: Vec<ObjectMask>,
}

pub fn refine_in_memory(
    motion: &MotionMap,
    features: &FeatureMap,
    pred: &PredictionMap,
    pseudo: &LabelMap,
    config: &PipelineConfig,
) -> Result<FrameRefinement> {
    if pred.num_classes() != config.num_classes {
        return Err(moda_core::Error::Shape(format!(
            "prediction has {} classes, config expects {}",
            pred.num_classes(),
            config.num_classes
        ))
        .into());
    }
    if motion.height() != pred.height() || motion.width() != pred.width() {
        return Err(moda_core::Error::Shape(format!(
            "motion {}x{} vs prediction {}x{}",
            motion.height(),
            motion.width(),
            pred.height(),
            pred.width()
        ))
        .into());
    }
    let (_, instances) = instance_masks(motion, &config.mask_params());
    let discovery = config.discovery_params();
    let objects: Vec<ObjectMask> = instances
        .masks
        .iter()
        .flat_map(|inst| discover_objects(features, inst, &discovery))
        .collect();
    let masks: Vec<BinaryMask> = objects.iter().map(|o| o.mask.clone()).collect();
    let refined = refine_frame(pred, pseudo, &masks, &config.moving_classes, config.lambda)?;
    Ok(FrameRefinement {
        refined,
        instances: instances.count(),
        objects,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameStats {
    /// Moving instances `M`.
    pub instances: usize,
    /// Discovered objects `J`.
    pub objects: usize,
    pub fallback_objects: usize,
    /// Pixels whose label differs from the input pseudo label.
    pub changed_pixels: usize,
    /// Cross-entropy of the prediction against the refined labels.
    pub moda_loss: f32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ofr_loss: Option<f32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub miou_before: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub miou_after: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum FrameOutcome<T> {
    Ok(T),
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameReport<T> {
    pub frame_id: String,
    #[serde(flatten)]
    pub outcome: FrameOutcome<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefineTotals {
    pub frames: usize,
    pub failed: usize,
    pub instances: usize,
    pub objects: usize,
    pub changed_pixels: usize,
    /// Dataset mIoU of the input pseudo labels, over frames with ground truth.
    pub miou_before: Option<f64>,
    pub miou_after: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefineSummary {
    pub schema_version: u32,
    pub config: PipelineConfig,
    pub frames: Vec<FrameReport<FrameStats>>,
    pub totals: RefineTotals,
}

impl RefineSummary {
    pub fn failed(&self) -> usize {
        self.totals.failed
    }
}

struct FrameOutput {
    stats: FrameStats,
    confusions: Option<(ConfusionMatrix, ConfusionMatrix)>,
}

fn refine_record(record: &FrameRecord, config: &PipelineConfig, refined_dir: &Path) -> Result<FrameOutput> {
    let motion: MotionMap = load_map(&record.motion_path)?;
    let features: FeatureMap = load_map(&record.feature_path)?;
    let pred: PredictionMap = load_map(&record.pred_path)?;
    let pseudo = load_labels(&record.pseudo_path, config.ignore_label)?;
    let result = refine_in_memory(&motion, &features, &pred, &pseudo, config)?;

    let ofr = match (&record.flow_path, &record.next_pred_path) {
        (Some(flow), Some(next)) => {
            let next: PredictionMap = load_map(next)?;
            Some(ofr_loss(&pred, &next, &load_flo(flow)?)?)
        }
        _ => None,
    };
    let confusions = match &record.gt_path {
        Some(gt) => {
            let gt = load_labels(gt, config.ignore_label)?;
            Some((
                confusion(&gt, &pseudo, config.num_classes)?,
                confusion(&gt, &result.refined, config.num_classes)?,
            ))
        }
        None => None,
    };
    save_label_png(&result.refined, refined_dir.join(format!("{}.png", record.frame_id)))?;

    let changed_pixels = result
        .refined
        .data()
        .iter()
        .zip(pseudo.data())
        .filter(|(a, b)| a != b)
        .count();
    Ok(FrameOutput {
        stats: FrameStats {
            instances: result.instances,
            objects: result.objects.len(),
            fallback_objects: result.objects.iter().filter(|o| o.fallback).count(),
            changed_pixels,
            moda_loss: cross_entropy(&pred, &result.refined)?,
            ofr_loss: ofr,
            miou_before: confusions.as_ref().map(|(b, _)| miou(b).miou),
            miou_after: confusions.as_ref().map(|(_, a)| miou(a).miou),
        },
        confusions,
    })
}

/// Refines every manifest frame, writing `<out_dir>/refined/<frame_id>.png`
/// and `<out_dir>/summary.json`. Frame failures are recorded in the summary
/// and do not stop the batch.
pub fn run_refine(
    manifest: &FrameManifest,
    config: &PipelineConfig,
    out_dir: &Path,
    jobs: usize,
) -> Result<RefineSummary> {
    let refined_dir = out_dir.join("refined");
    std::fs::create_dir_all(&refined_dir).map_err(|e| CliError::io(&refined_dir, e))?;
    let outputs: Vec<Result<FrameOutput>> = with_jobs(jobs, || {
        manifest
            .records
            .par_iter()
            .map(|r| refine_record(r, config, &refined_dir))
            .collect()
    })?;

    let mut totals = RefineTotals {
        frames: outputs.len(),
        failed: 0,
        instances: 0,
        objects: 0,
        changed_pixels: 0,
        miou_before: None,
        miou_after: None,
    };
    let mut before = ConfusionMatrix::new(config.num_classes);
    let mut after = ConfusionMatrix::new(config.num_classes);
    let mut any_gt = false;
    let mut frames = Vec::with_capacity(outputs.len());
    for (record, output) in manifest.records.iter().zip(outputs) {
        let outcome = match output {
            Ok(out) => {
                totals.instances += out.stats.instances;
                totals.objects += out.stats.objects;
                totals.changed_pixels += out.stats.changed_pixels;
                if let Some((b, a)) = &out.confusions {
                    before += b;
                    after += a;
                    any_gt = true;
                }
                FrameOutcome::Ok(out.stats)
            }
            Err(e) => {
                totals.failed += 1;
                FrameOutcome::Failed { error: e.to_string() }
            }
        };
        frames.push(FrameReport {
            frame_id: record.frame_id.clone(),
            outcome,
        });
    }
    if any_gt {
        totals.miou_before = Some(miou(&before).miou);
        totals.miou_after = Some(miou(&after).miou);
    }
    let summary = RefineSummary {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        frames,
        totals,
    };
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Translation steps (units) and rotation steps (radians) of the pose
/// perturbations reported by the warp check.
pub const TRANSLATION_STEP: f64 = 0.5;
pub const ROTATION_STEP: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbedLoss {
    /// `tx`, `ty`, `tz`, `rx`, `ry` or `rz`.
    pub parameter: &'static str,
    pub delta: f64,
    pub loss: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WarpStats {
    pub photometric_loss: f32,
    pub valid_fraction: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub perturbed: Vec<PerturbedLoss>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WarpSummary {
    pub schema_version: u32,
    pub frames: Vec<FrameReport<WarpStats>>,
    pub failed: usize,
    /// Mean photometric loss over successful frames.
    pub mean_loss: Option<f64>,
}

/// The pose with one parameter moved by `±step`, for all six parameters.
pub fn perturbed_poses(pose: &Pose) -> Vec<(&'static str, f64, Pose)> {
    const NAMES: [[&str; 3]; 2] = [["tx", "ty", "tz"], ["rx", "ry", "rz"]];
    let mut out = Vec::new();
    for axis in 0..3 {
        for sign in [-1.0, 1.0] {
            let mut t = pose.translation;
            t[axis] += sign * TRANSLATION_STEP;
            out.push((NAMES[0][axis], sign * TRANSLATION_STEP, Pose { translation: t, ..*pose }));
            let mut r = pose.rotation;
            r[axis] += sign * ROTATION_STEP;
            out.push((NAMES[1][axis], sign * ROTATION_STEP, Pose { rotation: r, ..*pose }));
        }
    }
    out
}

fn required<'a, T>(value: &'a Option<T>, name: &str) -> Result<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("manifest record lacks `{name}`")))
}

fn warp_record(record: &FrameRecord, perturb: bool) -> Result<WarpStats> {
    let frame1: ImageMap = load_map(required(&record.frame1_path, "frame1_path")?)?;
    let frame2: ImageMap = load_map(required(&record.frame2_path, "frame2_path")?)?;
    let depth: DepthMap = load_map(required(&record.depth_path, "depth_path")?)?;
    let motion: MotionMap = load_map(&record.motion_path)?;
    let ego = *required(&record.ego, "ego")?;
    let k: CameraIntrinsics = *required(&record.intrinsics, "intrinsics")?;
    if !frame1.same_size(&depth) {
        return Err(moda_core::Error::Shape("frame1 and depth differ in size".into()).into());
    }
    let loss = |pose: &Pose| -> Result<(f32, usize)> {
        let (recon, valid) = inverse_warp(&frame2, &depth, pose, &motion, &k)?;
        Ok((photometric_loss(&recon, &frame1, &valid), valid.area()))
    };
    let (photometric_loss, valid) = loss(&ego)?;
    let mut perturbed = Vec::new();
    if perturb {
        for (parameter, delta, pose) in perturbed_poses(&ego) {
            perturbed.push(PerturbedLoss {
                parameter,
                delta,
                loss: loss(&pose)?.0,
            });
        }
    }
    Ok(WarpStats {
        photometric_loss,
        valid_fraction: valid as f64 / depth.pixel_count() as f64,
        perturbed,
    })
}

/// Photometric reconstruction loss of every manifest frame under its own
/// depth, ego-motion and object motion; with `perturb`, also under the
/// twelve single-parameter pose perturbations.
pub fn run_warp_check(manifest: &FrameManifest, perturb: bool, jobs: usize) -> Result<WarpSummary> {
    let outputs: Vec<Result<WarpStats>> = with_jobs(jobs, || {
        manifest
            .records
            .par_iter()
            .map(|r| warp_record(r, perturb))
            .collect()
    })?;
    let mut failed = 0;
    let mut losses = Vec::new();
    let frames = manifest
        .records
        .iter()
        .zip(outputs)
        .map(|(record, out)| FrameReport {
            frame_id: record.frame_id.clone(),
            outcome: match out {
                Ok(stats) => {
                    losses.push(stats.photometric_loss as f64);
                    FrameOutcome::Ok(stats)
                }
                Err(e) => {
                    failed += 1;
                    FrameOutcome::Failed { error: e.to_string() }
                }
            },
        })
        .collect();
    Ok(WarpSummary {
        schema_version: SCHEMA_VERSION,
        frames,
        failed,
        mean_loss: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
    })
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// `dir/<stem><index:03>.png` for each mask, as 0/1 label images.
pub fn save_masks(dir: &Path, stem: &str, masks: impl IntoIterator<Item = BinaryMask>) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    masks
        .into_iter()
        .enumerate()
        .map(|(i, m)| {
            let path = dir.join(format!("{stem}{i:03}.png"));
            let labels = LabelMap::new(m.height(), m.width(), m.into_grid().into_data())?;
            save_label_png(&labels, &path)?;
            Ok(path)
        })
        .collect()
}
