//! Shared fixtures for the benchmarks.

use radseg_core::detector::{log_transform, LogCube};
use radseg_core::roi::{grow, label_points, label_seeds, to_point_cloud, GrowConfig, SparsePointSet};
use radseg_core::sim::{generate_world, render_frame, FrameLabels, RadarGeometry};

pub struct Fixture {
    pub geometry: RadarGeometry,
    pub log: LogCube,
    pub labels: FrameLabels,
    /// Ground-truth-seeded ROI with normalized features and labels.
    pub roi: SparsePointSet,
}

/// A default-geometry frame with four objects.
pub fn fixture(seed: u64) -> Fixture {
    let geometry = RadarGeometry::default();
    let scene = generate_world(seed, 4, &geometry).expect("scene");
    let (cube, labels) = render_frame(&scene, &geometry, seed + 1);
    let log = log_transform(&cube);
    let roi = grow(&log, &label_seeds(&labels, &geometry), &GrowConfig::default()).expect("grow");
    let roi = label_points(to_point_cloud(roi, &geometry, log.max()), &labels, &geometry);
    Fixture {
        geometry,
        log,
        labels,
        roi,
    }
}
