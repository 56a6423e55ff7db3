//! Pinhole geometry, rigid-motion warping and the synthetic scene oracle.

mod camera;
mod pose;
mod synth;
mod warp;

pub use camera::{backproject, project, CameraIntrinsics};
pub use pose::{rotation_matrix, Pose};
pub use synth::{synth_scene, ImageSize, SceneObject, SceneSpec, SyntheticScene};
pub use warp::{inverse_warp, photometric_loss, warp_coordinates};
