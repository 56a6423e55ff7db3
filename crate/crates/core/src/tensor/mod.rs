//! Dense map types, file formats and resampling shared by every stage.

mod grid;
mod io;
mod npy;
mod resample;

pub(crate) use grid::argmax_first;

pub use grid::{
    BinaryMask, ComponentLabelMap, DepthMap, FeatureMap, FlowField, Grid, ImageMap, LabelMap,
    MotionMap, PredictionMap, FLOW_UNKNOWN_THRESHOLD, IGNORE_LABEL, PROBABILITY_SUM_TOLERANCE,
};
pub use io::{
    decode_flo, encode_flo, load_flo, load_label_png, save_label_png, write_flo, FLO_MAGIC,
};
pub use npy::{
    load_map, load_tensor, read_npy, save_tensor, write_npy, NpyData, NpyMap, NpyTensor,
};
pub use resample::{
    bilinear_resize, bilinear_sample, bilinear_sample_into, nearest_resize, nearest_resize_grid,
};
