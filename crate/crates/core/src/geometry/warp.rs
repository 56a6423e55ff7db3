//! Backward warping of the adjacent frame onto the reference grid.
//!
//! Each reference pixel is lifted with its depth, moved by the ego-motion and
//! its own object motion, `P' = R * P + t + motion(i)`, and re-projected into
//! the adjacent frame, which is then sampled bilinearly.

use nalgebra::Vector3;

use super::camera::{backproject, project, CameraIntrinsics};
use super::pose::Pose;
use crate::error::Result;
use crate::tensor::{bilinear_sample_into, BinaryMask, DepthMap, Grid, ImageMap, MotionMap};

/// Where every reference pixel lands in the adjacent frame, in raster order.
/// `None` marks points that end up at or behind the camera.
pub fn warp_coordinates(
    depth1: &DepthMap,
    ego: &Pose,
    motion: &MotionMap,
    k: &CameraIntrinsics,
) -> Result<Vec<Option<(f64, f64)>>> {
    depth1.ensure_same_size(motion, "depth vs motion")?;
    let rotation = ego.rotation_matrix();
    let translation = ego.translation_vector();
    let mut coords = Vec::with_capacity(depth1.pixel_count());
    for row in 0..depth1.height() {
        for col in 0..depth1.width() {
            let p = backproject(col as f64, row as f64, depth1.depth(row, col) as f64, k)?;
            let m = motion.pixel(row, col);
            let moved = rotation * p
                + translation
                + Vector3::new(m[0] as f64, m[1] as f64, m[2] as f64);
            coords.push(project(&moved, k));
        }
    }
    Ok(coords)
}

/// Reconstructs the reference frame from `frame2`.
///
/// Returns the reconstruction and a validity mask; invalid pixels (sample
/// outside `frame2`, or warped point at `z <= 0`) are zero in the image.
pub fn inverse_warp(
    frame2: &ImageMap,
    depth1: &DepthMap,
    ego: &Pose,
    motion: &MotionMap,
    k: &CameraIntrinsics,
) -> Result<(ImageMap, BinaryMask)> {
    frame2.ensure_same_size(depth1, "frame2 vs depth1")?;
    let coords = warp_coordinates(depth1, ego, motion, k)?;
    let (h, w) = (depth1.height(), depth1.width());
    let mut recon = Grid::filled(h, w, 3, 0.0f32);
    let mut valid = vec![0u8; h * w];
    for (i, target) in coords.into_iter().enumerate() {
        if let Some((u, v)) = target {
            let (row, col) = (i / w, i % w);
            if bilinear_sample_into(frame2, u, v, recon.pixel_mut(row, col)) {
                valid[i] = 1;
            }
        }
    }
    Ok((ImageMap::from_grid(recon)?, BinaryMask::new(h, w, valid)?))
}

/// Mean absolute RGB difference over pixels with `validity = 1`; zero when
/// nothing is valid.
///
/// Panics if the three maps differ in size.
pub fn photometric_loss(recon: &ImageMap, target: &ImageMap, validity: &BinaryMask) -> f32 {
    assert!(
        recon.same_size(target) && recon.same_size(validity),
        "photometric_loss: size mismatch"
    );
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for ((a, b), &ok) in recon.pixels().zip(target.pixels()).zip(validity.data()) {
        if ok == 0 {
            continue;
        }
        sum += a
            .iter()
            .zip(b)
            .map(|(&x, &y)| (x as f64 - y as f64).abs())
            .sum::<f64>();
        count += 3;
    }
    if count == 0 {
        0.0
    } else {
        (sum / count as f64) as f32
    }
}
