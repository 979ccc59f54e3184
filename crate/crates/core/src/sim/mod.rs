//! Labeled stereo scene simulation: geometry, image-source reverberation,
//! calibrated noise and mixtures.

mod ism;
mod render;
mod room;
mod source;

pub use ism::{
    decay_time, image_paths, impulse_response, reflection_coefficient, relative_impulse_response,
    schroeder_decay_db,
    ImagePath, ImageSourceConfig, FRACTIONAL_TAPS,
};
pub use render::{add_noise, make_mixture, render_clean, render_scene, Scene};
pub use room::{
    angle_for_tdoa, ground_truth_tdoa, rt60_to_absorption, tdoa_at, Point, RoomConfig, RoomPreset,
    SourceSpec, SPEED_OF_SOUND,
};
pub use source::{synth_source, SourceKind};
