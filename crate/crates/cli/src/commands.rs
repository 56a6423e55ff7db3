//! Command-line interface.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use moda_core::motion_masks::instance_masks;
use moda_core::object_discovery::discover_objects;
use moda_core::semantic_mining::refine_frame;
use moda_core::tensor::{
    load_label_png, load_map, save_label_png, save_tensor, BinaryMask, FeatureMap, MotionMap,
    PredictionMap,
};
use serde::Serialize;

use crate::config::{ConfigOverrides, PipelineConfig};
use crate::error::{CliError, Result};
use crate::eval::run_eval;
use crate::fixture::{run_synth, FixtureSpec, DEFAULT_FIXTURE};
use crate::manifest::FrameManifest;
use crate::pipeline::{load_labels, run_refine, run_warp_check, save_masks, write_json};

#[derive(Debug, Parser)]
#[command(name = "moda", version, about = "Refine segmentation pseudo labels with object motion")]
pub struct Cli {
    /// Worker threads; 0 uses every core
    #[arg(long, env = "MODA_JOBS", default_value_t = 0, global = true)]
    pub jobs: usize,

    #[command(flatten)]
    pub overrides: ConfigOverrides,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Threshold a motion map and split it into instance masks
    Masks {
        #[arg(long)]
        motion: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Split instance masks into object masks using a feature map
    Discover {
        #[arg(long)]
        features: PathBuf,
        /// Directory of instance masks (PNG or NPY, non-zero = inside)
        #[arg(long, required_unless_present = "motion", conflicts_with = "motion")]
        instance_masks: Option<PathBuf>,
        /// Derive instance masks from this motion map instead
        #[arg(long)]
        motion: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Refine pseudo labels, for a whole manifest or a single frame
    Refine {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Single frame: prediction NPY
        #[arg(long, requires_all = ["pseudo", "objects", "out"], conflicts_with = "manifest")]
        pred: Option<PathBuf>,
        #[arg(long)]
        pseudo: Option<PathBuf>,
        /// Single frame: directory of object masks
        #[arg(long)]
        objects: Option<PathBuf>,
        /// Single frame: refined label PNG
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-class IoU and mIoU of a prediction directory
    Eval {
        #[arg(long)]
        gt_dir: PathBuf,
        #[arg(long)]
        pred_dir: PathBuf,
        /// Also write the report here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Photometric loss of each manifest frame under its own geometry
    WarpCheck {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Also score single-parameter pose perturbations
        #[arg(long)]
        perturb: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic fixture dataset
    Synth {
        /// Fixture spec (TOML or JSON); the built-in scene when omitted
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Runs the parsed command; the error decides the exit code.
pub fn run(cli: Cli) -> Result<()> {
    let config = cli.overrides.resolve()?;
    match cli.command {
        Command::Masks { motion, out_dir } => masks(&motion, &out_dir, &config),
        Command::Discover {
            features,
            instance_masks,
            motion,
            out_dir,
        } => discover(&features, instance_masks.as_deref(), motion.as_deref(), &out_dir, &config),
        Command::Refine {
            manifest,
            out_dir,
            pred: Some(pred),
            pseudo: Some(pseudo),
            objects: Some(objects),
            out: Some(out),
        } if manifest.is_none() && out_dir.is_none() => refine_single(&pred, &pseudo, &objects, &out, &config),
        Command::Refine { manifest, out_dir, .. } => {
            let manifest = manifest_path(manifest, &config)?;
            let out_dir = out_dir
                .or_else(|| config.paths.out_dir.clone())
                .ok_or_else(|| CliError::Config("refine needs --out-dir".into()))?;
            let summary = run_refine(&FrameManifest::load(&manifest)?, &config, &out_dir, cli.jobs)?;
            print_json(&summary.totals);
            partial(summary.failed(), summary.frames.len())
        }
        Command::Eval { gt_dir, pred_dir, out } => {
            let report = run_eval(&gt_dir, &pred_dir, config.num_classes, config.ignore_label)?;
            if let Some(out) = out {
                write_json(&out, &report)?;
            }
            print_json(&report);
            partial(report.failed.len(), report.frames + report.failed.len())
        }
        Command::WarpCheck { manifest, perturb, out } => {
            let manifest = manifest_path(manifest, &config)?;
            let summary = run_warp_check(&FrameManifest::load(&manifest)?, perturb, cli.jobs)?;
            if let Some(out) = out {
                write_json(&out, &summary)?;
            }
            print_json(&summary);
            partial(summary.failed, summary.frames.len())
        }
        Command::Synth { spec, out_dir } => {
            let spec = match spec {
                Some(path) => FixtureSpec::load(&path)?,
                None => FixtureSpec::parse(DEFAULT_FIXTURE, false)?,
            };
            std::fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;
            let manifest = run_synth(&spec, &out_dir)?;
            println!("{}", out_dir.join("manifest.jsonl").display());
            eprintln!("wrote {} frame(s)", manifest.records.len());
            Ok(())
        }
    }
}

fn manifest_path(flag: Option<PathBuf>, config: &PipelineConfig) -> Result<PathBuf> {
    flag.or_else(|| config.paths.manifest.clone())
        .ok_or_else(|| CliError::Config("no manifest given (--manifest or paths.manifest)".into()))
}

fn partial(failed: usize, total: usize) -> Result<()> {
    if failed == 0 {
        Ok(())
    } else {
        Err(CliError::Partial { failed, total })
    }
}

fn print_json(value: &impl Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("reports serialize"));
}

/// A PNG (any non-zero pixel is inside) or a u8 NPY mask.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    if path.extension().is_some_and(|e| e == "npy") {
        return Ok(load_map(path)?);
    }
    let labels = load_label_png(path)?;
    Ok(BinaryMask::from_fn(labels.height(), labels.width(), |r, c| labels.get(r, c) != 0))
}

/// Every `.png` and `.npy` mask in `dir`, sorted by file name.
pub fn load_mask_dir(dir: &Path) -> Result<Vec<BinaryMask>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "png" || e == "npy"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_mask(p)).collect()
}

#[derive(Serialize)]
struct InstanceEntry {
    component_id: u32,
    area: usize,
    path: PathBuf,
}

fn masks(motion: &Path, out_dir: &Path, config: &PipelineConfig) -> Result<()> {
    let motion: MotionMap = load_map(motion)?;
    let (labels, set) = instance_masks(&motion, &config.mask_params());
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    save_tensor(&labels, out_dir.join("components.npy"))?;
    let areas: Vec<usize> = set.masks.iter().map(BinaryMask::area).collect();
    let paths = save_masks(&out_dir.join("instances"), "instance_", set.masks)?;
    let entries: Vec<InstanceEntry> = set
        .component_ids
        .iter()
        .zip(areas)
        .zip(paths)
        .map(|((&component_id, area), path)| InstanceEntry {
            component_id,
            area,
            path,
        })
        .collect();
    print_json(&serde_json::json!({
        "components": labels.count(),
        "instances": entries,
    }));
    Ok(())
}

#[derive(Serialize)]
struct ObjectEntry {
    instance: usize,
    score: f32,
    fallback: bool,
    area: usize,
    path: PathBuf,
}

fn discover(
    features: &Path,
    instance_dir: Option<&Path>,
    motion: Option<&Path>,
    out_dir: &Path,
    config: &PipelineConfig,
) -> Result<()> {
    let features: FeatureMap = load_map(features)?;
    let instances = match (instance_dir, motion) {
        (Some(dir), _) => load_mask_dir(dir)?,
        (None, Some(motion)) => instance_masks(&load_map(motion)?, &config.mask_params()).1.masks,
        (None, None) => return Err(CliError::Config("discover needs --instance-masks or --motion".into())),
    };
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let params = config.discovery_params();
    let mut entries = Vec::new();
    for (instance, mask) in instances.iter().enumerate() {
        for object in discover_objects(&features, mask, &params) {
            let path = out_dir.join(format!("object_{:03}.npy", entries.len()));
            save_tensor(&object.mask, &path)?;
            entries.push(ObjectEntry {
                instance,
                score: object.score,
                fallback: object.fallback,
                area: object.mask.area(),
                path,
            });
        }
    }
    write_json(&out_dir.join("objects.json"), &entries)?;
    print_json(&entries);
    Ok(())
}

fn refine_single(pred: &Path, pseudo: &Path, objects: &Path, out: &Path, config: &PipelineConfig) -> Result<()> {
    let pred: PredictionMap = load_map(pred)?;
    let pseudo = load_labels(pseudo, config.ignore_label)?;
    let masks = load_mask_dir(objects)?;
    config.moving_classes.validate(pred.num_classes())?;
    let refined = refine_frame(&pred, &pseudo, &masks, &config.moving_classes, config.lambda)?;
    save_label_png(&refined, out)?;
    let changed = refined
        .data()
        .iter()
        .zip(pseudo.data())
        .filter(|(a, b)| a != b)
        .count();
    print_json(&serde_json::json!({ "objects": masks.len(), "changed_pixels": changed }));
    Ok(())
}
