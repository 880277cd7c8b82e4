//! Stage one: object centers from Doppler-compressed range-angle maps.

mod decode;
mod input;
mod loss;
mod net;
mod targets;
mod train;

pub use decode::{decode_peaks, Detection, HeadMaps, DEFAULT_MAX_DETECTIONS, DEFAULT_PEAK_THRESHOLD};
pub use input::{
    append_coordinates, batch_channels, coordinate_channels, log_magnitude, log_transform, prepare_input, LogCube,
};
pub use loss::{
    doppler_loss, focal_loss, offset_loss, total_detection_loss, DetLoss, DetLossGrads, LossWeights, FOCAL_ALPHA,
    FOCAL_BETA, PROB_CLAMP,
};
pub use net::{
    Backbone, ConvBn, DetectorArch, DetectorNet, Head, HeadOutputs, Heads, HEAT_PRIOR_LOGIT, OUTPUT_STRIDE,
};
pub use targets::{build_targets, gaussian, low_res_center, DetectionTargets, SIGMA_ANGLE, SIGMA_RANGE};
pub use train::{
    detect, evaluate_detector, load_detector, prepare_frame, train_detector, DecodeConfig, DetEpochRecord,
    DetTrainConfig, DetTrainOutcome, PreparedFrame,
};
