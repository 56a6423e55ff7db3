//! JSON-lines frame manifests.
//!
//! One record per line; blank lines are skipped. Relative paths resolve
//! against the manifest's directory.

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use moda_core::geometry::{CameraIntrinsics, Pose};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub frame_id: String,
    pub motion_path: PathBuf,
    pub feature_path: PathBuf,
    pub pred_path: PathBuf,
    pub pseudo_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_path: Option<PathBuf>,
    /// Flow from this frame to the next, paired with `next_pred_path`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_pred_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame1_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame2_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ego: Option<Pose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<CameraIntrinsics>,
}

impl FrameRecord {
    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.motion_path,
            &mut self.feature_path,
            &mut self.pred_path,
            &mut self.pseudo_path,
        ] {
            join(p);
        }
        for p in [
            &mut self.gt_path,
            &mut self.flow_path,
            &mut self.next_pred_path,
            &mut self.frame1_path,
            &mut self.frame2_path,
            &mut self.depth_path,
        ]
        .into_iter()
        .flatten()
        {
            join(p);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameManifest {
    pub records: Vec<FrameRecord>,
}

impl FrameManifest {
    /// Parses manifest text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut records = Vec::new();
        let mut ids = HashSet::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut record: FrameRecord = serde_json::from_str(line)
                .map_err(|e| CliError::Config(format!("manifest line {}: {e}", n + 1)))?;
            validate_frame_id(&record.frame_id)
                .map_err(|e| CliError::Config(format!("manifest line {}: {e}", n + 1)))?;
            if !ids.insert(record.frame_id.clone()) {
                return Err(CliError::Config(format!(
                    "manifest line {}: duplicate frame_id `{}`",
                    n + 1,
                    record.frame_id
                )));
            }
            record.resolve(base);
            records.push(record);
        }
        Ok(Self { records })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new("")))
    }

    /// Writes one JSON object per line, paths as stored.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for r in &self.records {
            serde_json::to_writer(&mut out, r).expect("records serialize");
            out.push(b'\n');
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&out))
            .map_err(|e| CliError::io(path, e))
    }
}

/// Frame ids name output files, so they must be plain file stems.
fn validate_frame_id(id: &str) -> std::result::Result<(), String> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'));
    if ok {
        Ok(())
    } else {
        Err(format!("frame_id `{id}` must be non-empty [A-Za-z0-9_.-]"))
    }
}
