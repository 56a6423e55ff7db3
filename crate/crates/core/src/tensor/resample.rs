//! Resampling with half-pixel centers (`align_corners = false`).
//!
//! Pixel `(row, col)` has its center at continuous coordinate `(row, col)`;
//! resizing maps destination center `d` to source coordinate
//! `(d + 0.5) * in / out - 0.5`.

use super::grid::{BinaryMask, Grid};

/// Sample coordinates this close to an integer are snapped onto it, so
/// round-off from geometric round trips neither blends neighbors nor pushes
/// edge samples out of bounds.
const SNAP: f64 = 1e-9;

/// Bilinear resize of every channel, matching `F.interpolate(mode="bilinear",
/// align_corners=False)` without antialiasing.
///
/// Panics if `new_height` or `new_width` is zero.
pub fn bilinear_resize(map: &Grid<f32>, new_height: usize, new_width: usize) -> Grid<f32> {
    assert!(new_height > 0 && new_width > 0, "target size must be positive");
    let (h, w, c) = map.shape();
    if h == 0 || w == 0 {
        return Grid::filled(new_height, new_width, c, 0.0);
    }
    let rows: Vec<_> = (0..new_height).map(|d| source_taps(d, h, new_height)).collect();
    let cols: Vec<_> = (0..new_width).map(|d| source_taps(d, w, new_width)).collect();
    let mut out = Grid::filled(new_height, new_width, c, 0.0);
    for (r, &(r0, r1, fy)) in rows.iter().enumerate() {
        for (col, &(c0, c1, fx)) in cols.iter().enumerate() {
            let dst = out.pixel_mut(r, col);
            for (ch, v) in dst.iter_mut().enumerate() {
                let top = lerp(map.at(r0, c0, ch), map.at(r0, c1, ch), fx);
                let bottom = lerp(map.at(r1, c0, ch), map.at(r1, c1, ch), fx);
                *v = lerp(top, bottom, fy) as f32;
            }
        }
    }
    out
}

#[inline]
fn lerp(a: impl Into<f64>, b: impl Into<f64>, t: f64) -> f64 {
    a.into() * (1.0 - t) + b.into() * t
}

fn source_taps(dst: usize, input: usize, output: usize) -> (usize, usize, f64) {
    let scale = input as f64 / output as f64;
    let src = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(input - 1);
    let i1 = (i0 + 1).min(input - 1);
    (i0, i1, src - i0 as f64)
}

/// Bilinear sample at continuous pixel coordinate `(x, y)` = `(col, row)`.
///
/// Returns `None` when any of the four neighbors falls outside the grid, so
/// valid samples require `0 <= x <= W - 1` and `0 <= y <= H - 1`. Integer
/// coordinates reproduce the stored pixel exactly.
pub fn bilinear_sample(map: &Grid<f32>, x: f64, y: f64) -> Option<Vec<f32>> {
    let mut out = vec![0.0; map.channels()];
    bilinear_sample_into(map, x, y, &mut out).then_some(out)
}

/// Allocation-free form of [`bilinear_sample`]; returns `false` (leaving
/// `out` untouched) for invalid samples.
pub fn bilinear_sample_into(map: &Grid<f32>, x: f64, y: f64, out: &mut [f32]) -> bool {
    let Some((c0, c1, fx)) = sample_taps(x, map.width()) else {
        return false;
    };
    let Some((r0, r1, fy)) = sample_taps(y, map.height()) else {
        return false;
    };
    let (p00, p01) = (map.pixel(r0, c0), map.pixel(r0, c1));
    let (p10, p11) = (map.pixel(r1, c0), map.pixel(r1, c1));
    for (ch, v) in out.iter_mut().enumerate() {
        let top = lerp(p00[ch], p01[ch], fx);
        let bottom = lerp(p10[ch], p11[ch], fx);
        *v = lerp(top, bottom, fy) as f32;
    }
    true
}

fn sample_taps(coord: f64, size: usize) -> Option<(usize, usize, f64)> {
    if size == 0 || !coord.is_finite() {
        return None;
    }
    let nearest = coord.round();
    let coord = if (coord - nearest).abs() < SNAP { nearest } else { coord };
    let max = (size - 1) as f64;
    if coord < 0.0 || coord > max {
        return None;
    }
    if size == 1 {
        return Some((0, 0, 0.0));
    }
    let i0 = (coord.floor() as usize).min(size - 2);
    Some((i0, i0 + 1, coord - i0 as f64))
}

/// Nearest-neighbor resize; output values are always a subset of the input's.
///
/// Panics if `new_height` or `new_width` is zero.
pub fn nearest_resize_grid<T: Copy>(map: &Grid<T>, new_height: usize, new_width: usize) -> Grid<T> {
    assert!(new_height > 0 && new_width > 0, "target size must be positive");
    let (h, w, c) = map.shape();
    assert!(h > 0 && w > 0, "cannot resize an empty grid");
    // floor((d + 0.5) * in / out) in exact integer arithmetic
    let rows: Vec<usize> = (0..new_height)
        .map(|d| ((2 * d + 1) * h / (2 * new_height)).min(h - 1))
        .collect();
    let cols: Vec<usize> = (0..new_width)
        .map(|d| ((2 * d + 1) * w / (2 * new_width)).min(w - 1))
        .collect();
    Grid::from_fn(new_height, new_width, c, |r, col, ch| map.at(rows[r], cols[col], ch))
}

pub fn nearest_resize(mask: &BinaryMask, new_height: usize, new_width: usize) -> BinaryMask {
    BinaryMask::from_grid(nearest_resize_grid(mask, new_height, new_width))
        .expect("nearest resampling keeps {0,1} values")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize, data: &[f32]) -> Grid<f32> {
        Grid::new(h, w, 1, data.to_vec()).unwrap()
    }

    #[test]
    fn upsample_columns_by_hand() {
        // src x = (d + 0.5) * 0.5 - 0.5 -> -0.25 (clamped to 0), 0.25, 0.75, 1.25 (tap clamps)
        let g = grid(2, 2, &[0.0, 1.0, 0.0, 1.0]);
        let out = bilinear_resize(&g, 2, 4);
        for r in 0..2 {
            let row: Vec<f32> = (0..4).map(|c| out.at(r, c, 0)).collect();
            assert_eq!(row, vec![0.0, 0.25, 0.75, 1.0]);
        }
    }

    #[test]
    fn downsample_two_to_one_averages_pairs() {
        let g = grid(1, 4, &[0.0, 1.0, 2.0, 6.0]);
        let out = bilinear_resize(&g, 1, 2);
        assert_eq!(out.data(), &[0.5, 4.0]);
    }

    #[test]
    fn same_size_is_identity() {
        let g = grid(2, 3, &[0.1, 0.7, 0.3, 0.9, 0.2, 0.5]);
        assert_eq!(bilinear_resize(&g, 2, 3), g);
        assert_eq!(nearest_resize_grid(&g, 2, 3), g);
    }

    #[test]
    fn sample_half_way() {
        let g = grid(1, 2, &[0.0, 1.0]);
        assert_eq!(bilinear_sample(&g, 0.5, 0.0), Some(vec![0.5]));
        assert_eq!(bilinear_sample(&g, 1.0, 0.0), Some(vec![1.0]));
        assert_eq!(bilinear_sample(&g, -1.0, 0.0), None);
        assert_eq!(bilinear_sample(&g, 1.01, 0.0), None);
        assert_eq!(bilinear_sample(&g, 0.0, 0.5), None);
        assert_eq!(bilinear_sample(&g, f64::NAN, 0.0), None);
    }

    #[test]
    fn sample_interior_bilinear() {
        let g = grid(2, 2, &[0.0, 1.0, 2.0, 3.0]);
        let v = bilinear_sample(&g, 0.25, 0.5).unwrap()[0];
        // top 0.25, bottom 2.25, halfway 1.25
        assert!((v - 1.25).abs() < 1e-7);
    }

    #[test]
    fn nearest_expands_single_pixel() {
        let m = BinaryMask::ones(1, 1);
        assert_eq!(nearest_resize(&m, 2, 2), BinaryMask::ones(2, 2));
        let all = BinaryMask::ones(3, 5);
        assert_eq!(nearest_resize(&all, 7, 2), BinaryMask::ones(7, 2));
    }

    #[test]
    fn nearest_upsample_by_two_repeats() {
        let m = BinaryMask::new(2, 2, vec![1, 0, 0, 1]).unwrap();
        let up = nearest_resize(&m, 4, 4);
        assert_eq!(
            up.data(),
            &[1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1]
        );
    }
}
