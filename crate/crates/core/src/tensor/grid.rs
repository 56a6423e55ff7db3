//! Dense row-major maps and the typed wrappers used across the pipeline.
//!
//! Every map is an `H x W x C` grid stored in row-major, channel-last order
//! (the layout NumPy calls C-order for shape `(H, W, C)`). The typed wrappers
//! check their value invariants once at construction and are immutable
//! afterwards; they deref to the underlying [`Grid`] for read access.

use std::ops::Deref;

use crate::error::{Error, Result};

/// Label value excluded from losses and metrics.
pub const IGNORE_LABEL: u8 = 255;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::shape("grid must have at least one channel"));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::shape(format!(
                "{height}x{width}x{channels} grid needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        assert!(channels > 0, "grid must have at least one channel");
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    /// Builds a grid by evaluating `f(row, col, channel)` in storage order.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        assert!(channels > 0, "grid must have at least one channel");
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[T] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [T] {
        let start = (row * self.width + col) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize, channel: usize) -> T {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    /// Iterates over pixels in raster order as channel slices.
    pub fn pixels(&self) -> std::slice::ChunksExact<'_, T> {
        self.data.chunks_exact(self.channels)
    }

    pub fn same_size<U: Copy>(&self, other: &Grid<U>) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub(crate) fn ensure_same_size<U: Copy>(&self, other: &Grid<U>, what: &str) -> Result<()> {
        if self.same_size(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )))
        }
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().copied().map(f).collect(),
        }
    }
}

macro_rules! typed_map {
    ($(#[$meta:meta])* $name:ident, $elem:ty) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name(Grid<$elem>);

        impl Deref for $name {
            type Target = Grid<$elem>;

            fn deref(&self) -> &Grid<$elem> {
                &self.0
            }
        }

        impl $name {
            pub fn as_grid(&self) -> &Grid<$elem> {
                &self.0
            }

            pub fn into_grid(self) -> Grid<$elem> {
                self.0
            }
        }
    };
}

fn check_channels<T: Copy>(grid: &Grid<T>, expected: usize, what: &str) -> Result<()> {
    if grid.channels() != expected {
        return Err(Error::shape(format!(
            "{what} needs {expected} channel(s), got {}",
            grid.channels()
        )));
    }
    Ok(())
}

fn check_all(data: &[f32], what: &str, ok: impl Fn(f32) -> bool, rule: &str) -> Result<()> {
    match data.iter().position(|&v| !ok(v)) {
        None => Ok(()),
        Some(i) => Err(Error::Domain(format!(
            "{what} value {} at flat index {i} violates {rule}",
            data[i]
        ))),
    }
}

typed_map!(
    /// RGB frame, values in `[0, 1]`.
    ImageMap,
    f32
);

impl ImageMap {
    pub fn from_grid(grid: Grid<f32>) -> Result<Self> {
        check_channels(&grid, 3, "image")?;
        check_all(grid.data(), "image", |v| (0.0..=1.0).contains(&v), "0 <= v <= 1")?;
        Ok(Self(grid))
    }

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        Self::from_grid(Grid::new(height, width, 3, data)?)
    }
}

typed_map!(
    /// Per-pixel depth in meters; strictly positive.
    DepthMap,
    f32
);

impl DepthMap {
    pub fn from_grid(grid: Grid<f32>) -> Result<Self> {
        check_channels(&grid, 1, "depth")?;
        check_all(grid.data(), "depth", |v| v.is_finite() && v > 0.0, "finite and > 0")?;
        Ok(Self(grid))
    }

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        Self::from_grid(Grid::new(height, width, 1, data)?)
    }

    #[inline]
    pub fn depth(&self, row: usize, col: usize) -> f32 {
        self.at(row, col, 0)
    }
}

typed_map!(
    /// Per-pixel 3D object motion `(x, y, z)` in scene units, independent of ego-motion.
    MotionMap,
    f32
);

impl MotionMap {
    pub fn from_grid(grid: Grid<f32>) -> Result<Self> {
        check_channels(&grid, 3, "motion")?;
        check_all(grid.data(), "motion", f32::is_finite, "finiteness")?;
        Ok(Self(grid))
    }

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        Self::from_grid(Grid::new(height, width, 3, data)?)
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self(Grid::filled(height, width, 3, 0.0))
    }
}

typed_map!(
    /// Dense backbone features on a (usually coarser) `H' x W' x V` grid.
    FeatureMap,
    f32
);

impl FeatureMap {
    pub fn from_grid(grid: Grid<f32>) -> Result<Self> {
        check_all(grid.data(), "feature", f32::is_finite, "finiteness")?;
        Ok(Self(grid))
    }

    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        Self::from_grid(Grid::new(height, width, dim, data)?)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.channels()
    }
}

/// Per-pixel tolerance on the softmax sum.
pub const PROBABILITY_SUM_TOLERANCE: f32 = 1e-4;

typed_map!(
    /// Per-pixel softmax probabilities over `C` classes.
    PredictionMap,
    f32
);

impl PredictionMap {
    pub fn from_grid(grid: Grid<f32>) -> Result<Self> {
        check_all(grid.data(), "probability", |v| (0.0..=1.0).contains(&v), "0 <= p <= 1")?;
        for (i, px) in grid.pixels().enumerate() {
            let sum: f32 = px.iter().sum();
            if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
                return Err(Error::Domain(format!(
                    "probabilities at pixel {i} sum to {sum}, expected 1"
                )));
            }
        }
        Ok(Self(grid))
    }

    pub fn new(height: usize, width: usize, classes: usize, data: Vec<f32>) -> Result<Self> {
        Self::from_grid(Grid::new(height, width, classes, data)?)
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.channels()
    }

    /// Most probable class per pixel; ties go to the smaller class index.
    pub fn argmax(&self) -> LabelMap {
        let labels = self
            .pixels()
            .map(|px| argmax_first(px.iter().copied()) as u8)
            .collect();
        LabelMap(Grid::new(self.height(), self.width(), 1, labels).expect("shape preserved"))
    }
}

/// Index of the maximum, first occurrence wins.
pub(crate) fn argmax_first(values: impl Iterator<Item = f32>) -> usize {
    let mut best = 0;
    let mut best_value = f32::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

/// Magnitudes at or above this mark unknown flow in the Middlebury convention.
pub const FLOW_UNKNOWN_THRESHOLD: f32 = 1e9;

typed_map!(
    /// Dense optical flow `(u, v)` in pixels.
    FlowField,
    f32
);

impl FlowField {
    pub fn from_grid(grid: Grid<f32>) -> Result<Self> {
        check_channels(&grid, 2, "flow")?;
        check_all(
            grid.data(),
            "flow",
            |v| v.is_finite() && v.abs() < FLOW_UNKNOWN_THRESHOLD,
            "|v| < 1e9",
        )?;
        Ok(Self(grid))
    }

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        Self::from_grid(Grid::new(height, width, 2, data)?)
    }

    pub fn constant(height: usize, width: usize, u: f32, v: f32) -> Self {
        Self(Grid::from_fn(height, width, 2, |_, _, ch| if ch == 0 { u } else { v }))
    }
}

typed_map!(
    /// `{0, 1}` mask.
    BinaryMask,
    u8
);

impl BinaryMask {
    pub fn from_grid(grid: Grid<u8>) -> Result<Self> {
        check_channels(&grid, 1, "mask")?;
        if let Some(i) = grid.data().iter().position(|&v| v > 1) {
            return Err(Error::Domain(format!(
                "mask value {} at index {i} is not 0 or 1",
                grid.data()[i]
            )));
        }
        Ok(Self(grid))
    }

    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        Self::from_grid(Grid::new(height, width, 1, data)?)
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self(Grid::filled(height, width, 1, 0))
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self(Grid::filled(height, width, 1, 1))
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        Self(Grid::from_fn(height, width, 1, |r, c, _| f(r, c) as u8))
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.at(row, col, 0) != 0
    }

    pub fn area(&self) -> usize {
        self.data().iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data().iter().all(|&v| v == 0)
    }

    pub fn intersection_area(&self, other: &BinaryMask) -> usize {
        self.data()
            .iter()
            .zip(other.data())
            .filter(|(&a, &b)| a != 0 && b != 0)
            .count()
    }

    /// Mask IoU; two empty masks have IoU 0.
    pub fn iou(&self, other: &BinaryMask) -> f32 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f32 / union as f32
        }
    }

    pub fn intersect(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.ensure_same_size(other, "mask intersection")?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a & b)
            .collect();
        BinaryMask::new(self.height(), self.width(), data)
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.same_size(other)
            && self
                .data()
                .iter()
                .zip(other.data())
                .all(|(&a, &b)| a == 0 || b != 0)
    }
}

typed_map!(
    /// Per-pixel class index, or [`IGNORE_LABEL`].
    LabelMap,
    u8
);

impl LabelMap {
    pub fn from_grid(grid: Grid<u8>) -> Result<Self> {
        check_channels(&grid, 1, "label map")?;
        Ok(Self(grid))
    }

    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        Self::from_grid(Grid::new(height, width, 1, data)?)
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Self {
        Self(Grid::filled(height, width, 1, label))
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.at(row, col, 0)
    }

    /// Fails if any non-ignore label is `>= num_classes`.
    pub fn validate_classes(&self, num_classes: usize) -> Result<()> {
        match self
            .data()
            .iter()
            .position(|&v| v != IGNORE_LABEL && v as usize >= num_classes)
        {
            None => Ok(()),
            Some(i) => Err(Error::Domain(format!(
                "label {} at index {i} is not below {num_classes}",
                self.data()[i]
            ))),
        }
    }
}

typed_map!(
    /// Connected-component ids: 0 is background, components are numbered `1..=count`.
    ComponentLabelMap,
    u32
);

impl ComponentLabelMap {
    /// Checks that ids are contiguous `1..=M` and returns the map.
    pub fn from_grid(grid: Grid<u32>) -> Result<Self> {
        check_channels(&grid, 1, "component labels")?;
        let max = grid.data().iter().copied().max().unwrap_or(0) as usize;
        let mut seen = vec![false; max + 1];
        for &v in grid.data() {
            seen[v as usize] = true;
        }
        if let Some(missing) = (1..=max).find(|&k| !seen[k]) {
            return Err(Error::Domain(format!(
                "component ids not contiguous: {missing} missing below {max}"
            )));
        }
        Ok(Self(grid))
    }

    pub(crate) fn from_raw(grid: Grid<u32>) -> Self {
        Self(grid)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.at(row, col, 0)
    }

    /// Number of components `M`.
    pub fn count(&self) -> u32 {
        self.data().iter().copied().max().unwrap_or(0)
    }
}
