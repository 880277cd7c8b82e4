//! Submanifold sparse convolution over ROI cells and the per-point segmenter.

mod conv;
mod grid;
mod net;
mod train;

pub use conv::{SiteLinear, SubmanifoldConv3};
pub use grid::{kernel_offsets, voxelize, voxelize_batch, KernelMap, SparseGrid, CENTER_OFFSET, FEATURES, KERNEL_VOLUME};
pub use net::{class_weights, seg_loss, softmax, SegArch, SegNet, SparseBlock};
pub use train::{evaluate_segmenter, point_accuracy, train_segmenter, SegEpochRecord, SegSample, SegTrainConfig, SegTrainOutcome};
