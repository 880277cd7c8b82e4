//! Synthetic radar worlds rendered straight into range-angle-Doppler cubes.

mod annotate;
mod geometry;
mod render;
mod scene;

pub use annotate::{
    annotate_rad, annotate_rad_with_radius, object_label, FrameLabels, ObjectLabel, ANNOTATION_RADIUS,
};
pub use geometry::{clip_round, Cell, RadarGeometry};
pub use render::{add_noise, psf_tap, render_frame, render_signal, ComplexRadCube, PSF_HALF_WIDTH};
pub use scene::{
    class_name, generate_world, generate_world_with, reference_power, Extent, ObjectClass, Scatterer,
    SceneConfig, SceneObject, BACKGROUND, NUM_CLASSES,
};
