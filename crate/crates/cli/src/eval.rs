//! Directory-level segmentation evaluation.

use std::path::{Path, PathBuf};

use moda_core::losses_eval::{confusion, miou, ConfusionMatrix};
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::pipeline::{load_labels, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    /// Evaluated ground-truth pixels per class.
    pub pixel_counts: Vec<u64>,
    pub frames: usize,
    /// Ground-truth files with no readable prediction of the same name.
    pub failed: Vec<FailedFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailedFrame {
    pub file: String,
    pub error: String,
}

/// PNG files in `dir`, sorted by name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

/// Pairs every PNG in `gt_dir` with the same-named PNG in `pred_dir` and
/// accumulates one confusion matrix over all pairs.
pub fn run_eval(gt_dir: &Path, pred_dir: &Path, num_classes: usize, ignore_label: u8) -> Result<EvalReport> {
    let mut cm = ConfusionMatrix::new(num_classes);
    let mut failed = Vec::new();
    let mut frames = 0;
    for gt_path in list_pngs(gt_dir)? {
        let name = gt_path.file_name().expect("listed files have names");
        let frame = (|| -> Result<ConfusionMatrix> {
            let gt = load_labels(&gt_path, ignore_label)?;
            let pred = load_labels(&pred_dir.join(name), ignore_label)?;
            Ok(confusion(&gt, &pred, num_classes)?)
        })();
        match frame {
            Ok(m) => {
                cm += &m;
                frames += 1;
            }
            Err(e) => failed.push(FailedFrame {
                file: name.to_string_lossy().into_owned(),
                error: e.to_string(),
            }),
        }
    }
    let iou = miou(&cm);
    Ok(EvalReport {
        schema_version: SCHEMA_VERSION,
        per_class_iou: iou.per_class_iou,
        miou: iou.miou,
        pixel_counts: (0..num_classes).map(|c| cm.row_sum(c)).collect(),
        frames,
        failed,
    })
}
