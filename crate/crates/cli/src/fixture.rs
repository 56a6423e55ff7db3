//! Self-contained synthetic datasets for the refinement pipeline.
//!
//! A fixture document is a scene spec plus an optional `[fixture]` table.
//! Each generated frame renders the scene and derives:
//!
//! * features: one random unit signature per surface, averaged over each
//!   `feature_stride` cell, plus uniform noise;
//! * predictions: 0.7 on the true class, except on a `confusion` fraction of
//!   moving-object pixels, which get 0.4 on the true class and 0.5 on a rival
//!   class; the remaining mass is spread evenly;
//! * pseudo labels: the argmax of the predictions.

use std::path::{Path, PathBuf};

use moda_core::geometry::{synth_scene, SceneSpec, SyntheticScene};
use moda_core::tensor::{save_label_png, save_tensor, FeatureMap, Grid, PredictionMap};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::manifest::{FrameManifest, FrameRecord};

/// The scene generated when no spec is given.
pub const DEFAULT_FIXTURE: &str = include_str!("../fixtures/default_scene.toml");

pub const TRUE_CLASS_PROBABILITY: f32 = 0.7;
pub const CORRUPTED_TRUE_PROBABILITY: f32 = 0.4;
pub const CORRUPTED_RIVAL_PROBABILITY: f32 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureParams {
    pub num_classes: usize,
    /// Fraction of moving-object pixels whose pseudo label is corrupted.
    pub confusion: f64,
    /// Class that wins on corrupted pixels; defaults to the background class.
    pub rival_class: Option<u8>,
    pub feature_dim: usize,
    /// Image pixels per feature cell along each axis.
    pub feature_stride: usize,
    /// Half-width of the uniform noise added to every feature component.
    pub feature_noise: f32,
    pub seed: u64,
    pub frames: usize,
}

impl Default for FixtureParams {
    fn default() -> Self {
        Self {
            num_classes: 19,
            confusion: 0.3,
            rival_class: None,
            feature_dim: 16,
            feature_stride: 4,
            feature_noise: 0.0,
            seed: 0,
            frames: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub scene: SceneSpec,
    pub params: FixtureParams,
}

impl FixtureSpec {
    /// Parses TOML, or JSON when `json` is set.
    pub fn parse(text: &str, json: bool) -> Result<Self> {
        let spec_err = |e: String| CliError::from(moda_core::Error::Spec(e));
        let mut doc: serde_json::Value = if json {
            serde_json::from_str(text).map_err(|e| spec_err(e.to_string()))?
        } else {
            let table: toml::Table = toml::from_str(text).map_err(|e| spec_err(e.to_string()))?;
            serde_json::to_value(table).map_err(|e| spec_err(e.to_string()))?
        };
        let params = match doc.as_object_mut().and_then(|o| o.remove("fixture")) {
            Some(v) => serde_json::from_value(v).map_err(|e| spec_err(format!("[fixture]: {e}")))?,
            None => FixtureParams::default(),
        };
        let scene = serde_json::from_value(doc).map_err(|e| spec_err(e.to_string()))?;
        let spec = Self { scene, params };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, path.extension().is_some_and(|e| e == "json"))
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        let p = &self.params;
        let fail = |msg: String| Err(moda_core::Error::Spec(msg).into());
        if !(3..=255).contains(&p.num_classes) {
            return fail(format!("num_classes {} outside 3..=255", p.num_classes));
        }
        if !(0.0..=1.0).contains(&p.confusion) {
            return fail(format!("confusion {} outside [0, 1]", p.confusion));
        }
        if p.feature_dim == 0 || p.frames == 0 {
            return fail("feature_dim and frames must be positive".into());
        }
        let size = self.scene.size;
        if p.feature_stride == 0 || !size.height.is_multiple_of(p.feature_stride) || !size.width.is_multiple_of(p.feature_stride) {
            return fail(format!(
                "feature_stride {} must divide the {}x{} image",
                p.feature_stride, size.height, size.width
            ));
        }
        if !(p.feature_noise.is_finite() && p.feature_noise >= 0.0) {
            return fail("feature_noise must be finite and >= 0".into());
        }
        let rival = self.rival_class();
        let classes = std::iter::once(self.scene.background_class)
            .chain(self.scene.objects.iter().map(|o| o.class_id))
            .chain(std::iter::once(rival));
        for c in classes {
            if c as usize >= p.num_classes {
                return fail(format!("class {c} outside {} classes", p.num_classes));
            }
        }
        if self.scene.objects.iter().any(|o| o.is_moving() && o.class_id == rival) {
            return fail(format!("rival class {rival} is also a moving object's class"));
        }
        Ok(())
    }

    pub fn rival_class(&self) -> u8 {
        self.params.rival_class.unwrap_or(self.scene.background_class)
    }
}

/// Writes `frames` fixture frames plus `manifest.jsonl` into `out_dir`.
pub fn run_synth(spec: &FixtureSpec, out_dir: &Path) -> Result<FrameManifest> {
    spec.validate()?;
    let scene = synth_scene(&spec.scene)?;
    let p = &spec.params;
    let surfaces = spec.scene.objects.len() + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let signatures: Vec<Vec<f32>> = (0..surfaces).map(|_| random_unit(&mut rng, p.feature_dim)).collect();

    let mut manifest = FrameManifest::default();
    for k in 0..p.frames {
        let frame_id = format!("frame_{k:03}");
        let dir = out_dir.join(&frame_id);
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
        rng.set_stream(k as u64 + 1);

        let features = cell_features(&scene, &signatures, p, &mut rng);
        let pred = predictions(&scene, spec.rival_class(), p, &mut rng);
        save_tensor(&scene.frame1, dir.join("frame1.npy"))?;
        save_tensor(&scene.frame2, dir.join("frame2.npy"))?;
        save_tensor(&scene.depth1, dir.join("depth.npy"))?;
        save_tensor(&scene.motion, dir.join("motion.npy"))?;
        save_tensor(&features, dir.join("features.npy"))?;
        save_tensor(&pred, dir.join("pred.npy"))?;
        save_label_png(&pred.argmax(), dir.join("pseudo.png"))?;
        save_label_png(&scene.gt_labels, dir.join("gt.png"))?;

        let rel = |name: &str| PathBuf::from(&frame_id).join(name);
        manifest.records.push(FrameRecord {
            frame_id: frame_id.clone(),
            motion_path: rel("motion.npy"),
            feature_path: rel("features.npy"),
            pred_path: rel("pred.npy"),
            pseudo_path: rel("pseudo.png"),
            gt_path: Some(rel("gt.png")),
            flow_path: None,
            next_pred_path: None,
            frame1_path: Some(rel("frame1.npy")),
            frame2_path: Some(rel("frame2.npy")),
            depth_path: Some(rel("depth.npy")),
            ego: Some(scene.ego),
            intrinsics: Some(scene.intrinsics),
        });
    }
    manifest.write(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            return v.iter().map(|x| (x / norm) as f32).collect();
        }
    }
}

fn cell_features(
    scene: &SyntheticScene,
    signatures: &[Vec<f32>],
    p: &FixtureParams,
    rng: &mut impl Rng,
) -> FeatureMap {
    let s = p.feature_stride;
    let (hf, wf) = (scene.depth1.height() / s, scene.depth1.width() / s);
    let mut grid = Grid::filled(hf, wf, p.feature_dim, 0.0f32);
    for r in 0..hf {
        for c in 0..wf {
            let mut acc = vec![0.0f64; p.feature_dim];
            for y in r * s..(r + 1) * s {
                for x in c * s..(c + 1) * s {
                    let sig = &signatures[scene.surface_ids.at(y, x, 0) as usize];
                    for (a, &v) in acc.iter_mut().zip(sig) {
                        *a += v as f64;
                    }
                }
            }
            let cell = grid.pixel_mut(r, c);
            for (out, a) in cell.iter_mut().zip(acc) {
                *out = (a / (s * s) as f64) as f32;
                if p.feature_noise > 0.0 {
                    *out += rng.gen_range(-p.feature_noise..=p.feature_noise);
                }
            }
        }
    }
    FeatureMap::from_grid(grid).expect("finite features")
}

fn predictions(scene: &SyntheticScene, rival: u8, p: &FixtureParams, rng: &mut impl Rng) -> PredictionMap {
    let c = p.num_classes;
    let objects: Vec<usize> = (0..scene.gt_object_mask.pixel_count())
        .filter(|&i| scene.gt_object_mask.data()[i] == 1)
        .collect();
    let corrupt_count = (p.confusion * objects.len() as f64).round() as usize;
    let mut corrupted = vec![false; scene.gt_labels.pixel_count()];
    for j in sample(rng, objects.len(), corrupt_count) {
        corrupted[objects[j]] = true;
    }
    let mut data = Vec::with_capacity(corrupted.len() * c);
    for (i, &truth) in scene.gt_labels.data().iter().enumerate() {
        let truth = truth as usize;
        if corrupted[i] {
            let rest = (1.0 - CORRUPTED_TRUE_PROBABILITY - CORRUPTED_RIVAL_PROBABILITY) / (c - 2) as f32;
            data.extend((0..c).map(|k| match k {
                k if k == truth => CORRUPTED_TRUE_PROBABILITY,
                k if k == rival as usize => CORRUPTED_RIVAL_PROBABILITY,
                _ => rest,
            }));
        } else {
            let rest = (1.0 - TRUE_CLASS_PROBABILITY) / (c - 1) as f32;
            data.extend((0..c).map(|k| if k == truth { TRUE_CLASS_PROBABILITY } else { rest }));
        }
    }
    PredictionMap::new(scene.gt_labels.height(), scene.gt_labels.width(), c, data)
        .expect("rows sum to one")
}
