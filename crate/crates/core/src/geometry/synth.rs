//! Synthetic two-frame dynamic scenes with exact ground truth.
//!
//! A scene is a fronto-parallel background plane plus textured rectangular
//! patches, each a fronto-parallel plane in the first camera's frame. Both
//! frames are ray cast: a surface point `P` (first-frame coordinates) appears
//! in the second frame at `R * P + t + motion`, and the nearest hit along each
//! ray wins. Textures are a smooth sinusoidal checkerboard attached to each
//! surface, so the first frame's exact depth and motion reconstruct the
//! second frame up to bilinear resampling error.

use std::f64::consts::TAU;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::camera::CameraIntrinsics;
use super::pose::Pose;
use crate::error::{Error, Result};
use crate::tensor::{BinaryMask, DepthMap, Grid, ImageMap, LabelMap, MotionMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageSize {
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneObject {
    /// `[x0, y0, x1, y1]` in first-frame pixels, end-exclusive.
    pub rect: [usize; 4],
    pub depth: f64,
    #[serde(default)]
    pub motion: [f64; 3],
    pub class_id: u8,
}

impl SceneObject {
    pub fn is_moving(&self) -> bool {
        self.motion.iter().any(|&m| m != 0.0)
    }

    fn contains(&self, u: f64, v: f64) -> bool {
        let [x0, y0, x1, y1] = self.rect.map(|c| c as f64 - 0.5);
        u >= x0 && u < x1 && v >= y0 && v < y1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub size: ImageSize,
    pub background_depth: f64,
    #[serde(default)]
    pub background_class: u8,
    #[serde(default)]
    pub objects: Vec<SceneObject>,
    #[serde(default)]
    pub ego: Pose,
    pub intrinsics: CameraIntrinsics,
}

impl SceneSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Spec(e.to_string()))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Spec(e.to_string()))
    }

    /// Reads a `.json` file as JSON and anything else as TOML, falling back
    /// to JSON when TOML parsing fails.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            return Self::from_json_str(&text);
        }
        Self::from_toml_str(&text).or_else(|toml_err| {
            Self::from_json_str(&text).map_err(|_| toml_err)
        })
    }

    pub fn validate(&self) -> Result<()> {
        let ImageSize { height, width } = self.size;
        if height == 0 || width == 0 {
            return Err(Error::Spec(format!("image size {height}x{width} is empty")));
        }
        if !(self.background_depth.is_finite() && self.background_depth > 0.0) {
            return Err(Error::Spec("background_depth must be positive".into()));
        }
        self.intrinsics
            .validate()
            .map_err(|e| Error::Spec(e.to_string()))?;
        self.ego.validate().map_err(|e| Error::Spec(e.to_string()))?;
        for (i, obj) in self.objects.iter().enumerate() {
            let [x0, y0, x1, y1] = obj.rect;
            if x0 >= x1 || y0 >= y1 {
                return Err(Error::Spec(format!("object {i} has zero area: {:?}", obj.rect)));
            }
            if x1 > width || y1 > height {
                return Err(Error::Spec(format!(
                    "object {i} rect {:?} exceeds the {width}x{height} image",
                    obj.rect
                )));
            }
            if !(obj.depth.is_finite() && obj.depth > 0.0) {
                return Err(Error::Spec(format!("object {i} depth must be positive")));
            }
            if obj.depth >= self.background_depth {
                return Err(Error::Spec(format!(
                    "object {i} at depth {} is not in front of the background",
                    obj.depth
                )));
            }
            if !obj.motion.iter().all(|m| m.is_finite()) {
                return Err(Error::Spec(format!("object {i} motion must be finite")));
            }
        }
        Ok(())
    }
}

/// Ground truth for one rendered frame pair.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub frame1: ImageMap,
    pub frame2: ImageMap,
    pub depth1: DepthMap,
    pub motion: MotionMap,
    pub ego: Pose,
    pub intrinsics: CameraIntrinsics,
    pub gt_labels: LabelMap,
    /// Visible pixels of moving objects in the first frame.
    pub gt_object_mask: BinaryMask,
    /// Visible surface per first-frame pixel: 0 = background, `k` = object `k - 1`.
    pub surface_ids: Grid<u32>,
}

struct Surface {
    depth: f64,
    motion: Vector3<f64>,
    object: Option<usize>,
}

struct Hit {
    surface: usize,
    z: f64,
    u1: f64,
    v1: f64,
}

// Base colour and checker period (px) per surface; background first.
const STYLES: [([f32; 3], f64); 5] = [
    ([0.50, 0.45, 0.40], 24.0),
    ([0.35, 0.55, 0.65], 18.0),
    ([0.65, 0.35, 0.40], 20.0),
    ([0.45, 0.65, 0.35], 22.0),
    ([0.60, 0.60, 0.30], 16.0),
];
const TEXTURE_AMPLITUDE: f64 = 0.3;

fn texture(surface: usize, u: f64, v: f64) -> [f32; 3] {
    let (base, period) = STYLES[surface % STYLES.len()];
    let pattern = (TAU * u / period).sin() * (TAU * v / period).sin();
    base.map(|b| (b as f64 + TEXTURE_AMPLITUDE * pattern).clamp(0.0, 1.0) as f32)
}

struct Renderer<'a> {
    spec: &'a SceneSpec,
    surfaces: Vec<Surface>,
}

impl Renderer<'_> {
    /// Nearest surface along the ray through `(u, v)` after moving the scene
    /// by `R * P + t` (plus object motion when `with_motion`).
    fn cast(
        &self,
        u: f64,
        v: f64,
        rot_t: &Matrix3<f64>,
        translation: &Vector3<f64>,
        with_motion: bool,
    ) -> Option<Hit> {
        let k = &self.spec.intrinsics;
        let ray = rot_t * k.ray(u, v);
        if !(ray.z > 1e-12) {
            return None;
        }
        let mut best: Option<Hit> = None;
        for (index, surface) in self.surfaces.iter().enumerate() {
            let offset = if with_motion {
                rot_t * (translation + surface.motion)
            } else {
                rot_t * translation
            };
            // P = rot_t * (s * ray_cam - offset_cam), P.z = depth
            let s = (surface.depth + offset.z) / ray.z;
            if !(s > 0.0) {
                continue;
            }
            let p = ray * s - offset;
            let u1 = k.fx * p.x / p.z + k.cx;
            let v1 = k.fy * p.y / p.z + k.cy;
            if let Some(obj) = surface.object {
                if !self.spec.objects[obj].contains(u1, v1) {
                    continue;
                }
            }
            // later surfaces win ties
            if best.as_ref().is_none_or(|b| s <= b.z) {
                best = Some(Hit {
                    surface: index,
                    z: s,
                    u1,
                    v1,
                });
            }
        }
        best
    }
}

/// Renders both frames and the first frame's ground truth.
pub fn synth_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let ImageSize { height, width } = spec.size;

    let mut surfaces = vec![Surface {
        depth: spec.background_depth,
        motion: Vector3::zeros(),
        object: None,
    }];
    surfaces.extend(spec.objects.iter().enumerate().map(|(i, obj)| Surface {
        depth: obj.depth,
        motion: Vector3::from(obj.motion),
        object: Some(i),
    }));
    let renderer = Renderer { spec, surfaces };

    let identity = Matrix3::identity();
    let zero = Vector3::zeros();
    let rot_t = spec.ego.rotation_matrix().transpose();
    let translation = spec.ego.translation_vector();

    let mut frame1 = Grid::filled(height, width, 3, 0.0f32);
    let mut frame2 = Grid::filled(height, width, 3, 0.0f32);
    let mut depth = Vec::with_capacity(height * width);
    let mut motion = Grid::filled(height, width, 3, 0.0f32);
    let mut labels = Vec::with_capacity(height * width);
    let mut moving = Vec::with_capacity(height * width);
    let mut surface_ids = Vec::with_capacity(height * width);

    for row in 0..height {
        for col in 0..width {
            let (u, v) = (col as f64, row as f64);
            let hit = renderer
                .cast(u, v, &identity, &zero, false)
                .expect("the background plane covers every first-frame ray");
            frame1
                .pixel_mut(row, col)
                .copy_from_slice(&texture(hit.surface, hit.u1, hit.v1));
            depth.push(hit.z as f32);
            surface_ids.push(hit.surface as u32);
            match renderer.surfaces[hit.surface].object {
                Some(i) => {
                    let obj = &spec.objects[i];
                    labels.push(obj.class_id);
                    moving.push(obj.is_moving() as u8);
                    let m = motion.pixel_mut(row, col);
                    for (dst, src) in m.iter_mut().zip(obj.motion) {
                        *dst = src as f32;
                    }
                }
                None => {
                    labels.push(spec.background_class);
                    moving.push(0);
                }
            }

            if let Some(hit) = renderer.cast(u, v, &rot_t, &translation, true) {
                frame2
                    .pixel_mut(row, col)
                    .copy_from_slice(&texture(hit.surface, hit.u1, hit.v1));
            }
        }
    }

    Ok(SyntheticScene {
        frame1: ImageMap::from_grid(frame1)?,
        frame2: ImageMap::from_grid(frame2)?,
        depth1: DepthMap::new(height, width, depth)?,
        motion: MotionMap::from_grid(motion)?,
        ego: spec.ego,
        intrinsics: spec.intrinsics,
        gt_labels: LabelMap::new(height, width, labels)?,
        gt_object_mask: BinaryMask::new(height, width, moving)?,
        surface_ids: Grid::new(height, width, 1, surface_ids)?,
    })
}
