//! Deterministic synthetic "social video" generation.
//!
//! Scenes script actor trajectories, gaze events and expression bursts; the
//! emitters turn scripts into the detection records a detector stage would
//! produce, plus rendered frames and ground-truth fixation data from a
//! simulated observer pool. Everything is keyed by (seed, frame, observer)
//! so regeneration is bit-identical.

mod dataset;
mod emit;
mod scene;

pub use dataset::{
    generate_dataset, load_dataset, load_scene, load_scene_dir, DatasetManifest, GenPreset,
    LoadedScene, SceneEntry,
};
pub use emit::{emit_detections, emit_sp_gray, render_frame, simulate_fixations};
pub use scene::{generate_scene, ActorScript, ObserverModel, ScenePreset, SceneScript};
