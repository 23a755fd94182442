//! Social-cue saliency prediction, end to end and self-contained.
//!
//! The crate covers the whole pipeline on synthetic data:
//!
//! * a reverse-mode autodiff engine with exactly the operators the model
//!   graphs need, plus Adam and a finite-difference gradient checker,
//! * social-cue map synthesis (gaze cones, gaze-target overlays, affect
//!   maps, jet colormaps, sliding-window buffering),
//! * the gated attentive fusion network with its integration variants,
//! * the composite training loss and the five standard saliency metrics,
//!   each with a brute-force oracle,
//! * a deterministic synthetic scene generator standing in for the upstream
//!   detectors, and
//! * training / evaluation / ablation orchestration with a CLI facade.
//!
//! The numeric core is generic over [`Scalar`]; the crate-level aliases fix
//! f64, which is what the training stack and all tolerances assume.

pub mod colormap;
pub mod commands;
pub mod config;
pub mod cuemap;
pub mod error;
pub mod gradcheck;
pub mod gtf;
pub mod image;
pub mod fusion;
pub mod losses;
pub mod metrics;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod selfcheck;
pub mod synth;
pub mod tape;
pub mod trainer;
pub mod tensor;
pub mod windowing;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Working-precision tensor.
pub type Tensor = tensor::Tensor<f64>;
/// Single-precision tensor (GTF payload precision).
pub type Tensor32 = tensor::Tensor<f32>;
/// Working-precision tape.
pub type Tape = tape::Tape<f64>;
/// Working-precision parameter set.
pub type ParamSet = optim::ParamSet<f64>;
/// Working-precision Adam optimizer.
pub type Adam = optim::Adam<f64>;
