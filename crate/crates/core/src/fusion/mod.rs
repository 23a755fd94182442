//! The gated attentive fusion network.
//!
//! Stage-2 of the pipeline: standardized cue-map stacks go through an
//! optional directed-attention weighting, per-modality encoders, one of the
//! integration variants, and a 1x1 prediction head.

mod checkpoint;
mod dam;
mod encoder;
mod gates;
mod gmu;
mod lstm;
mod model;
mod se;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};

/// Test-only re-exports of internal builders (used by gradient probes).
pub mod testhooks {
    pub use super::encoder::EncoderParams;
    pub use super::gmu::{gmu_fuse, GmuBranch};
    pub use super::lstm::{alstm_static, ConvLstmParams};
    use crate::optim::ParamSet;

    pub fn build_encoder(params: &mut ParamSet<f64>, seed: u64, prefix: &str) -> EncoderParams {
        EncoderParams::build(params, seed, prefix).unwrap()
    }

    pub fn build_cell(
        params: &mut ParamSet<f64>,
        seed: u64,
        prefix: &str,
        xc: usize,
        hidden: usize,
    ) -> ConvLstmParams {
        ConvLstmParams::build(params, seed, prefix, xc, hidden).unwrap()
    }

    pub fn build_branch(
        params: &mut ParamSet<f64>,
        seed: u64,
        prefix: &str,
        xc: usize,
        gc: usize,
        hidden: usize,
    ) -> GmuBranch {
        GmuBranch::build(params, seed, prefix, xc, gc, hidden).unwrap()
    }
}
pub use dam::{invert_channels, inverted_surprisal, DamParams};
pub use gates::{GateAccumulator, GateReport};
pub use model::{ForwardOutput, GaspModel, ModelConfig, Variant, VALID_CONTEXTS};

use crate::optim::{ParamSet, ParamId};
use crate::rng::Stream;
use crate::tensor::Tensor as TensorOf;

type Tensor = TensorOf<f64>;

/// Number of fused modalities and channels per modality.
pub const MODALITIES: usize = 5;
pub const CHANNELS_PER_MODALITY: usize = 3;
/// Total input channels of the fused stack.
pub const STACK_CHANNELS: usize = MODALITIES * CHANNELS_PER_MODALITY;

/// Hidden width of the convolutional LSTM cells and of the late gating
/// branches that read them.
pub const LSTM_HIDDEN: usize = 128;
/// Hidden width of the gated-fusion branches.
pub const GMU_HIDDEN: usize = 32;
/// Squeeze-excitation reduction ratio.
pub const SE_REDUCTION: usize = 2;
/// Iterations of the static attentive pass over a single frame.
pub const STATIC_ATTENTION_ITERS: usize = 3;
/// Recurrent weights get a smaller init gain so constant inputs drive the
/// state to a fixed point.
pub const RECURRENT_GAIN: f64 = 0.5;

/// Uniform init scaled by gain / sqrt(fan_in), keyed by parameter name.
fn init_conv(
    params: &mut ParamSet<f64>,
    seed: u64,
    name: &str,
    shape: &[usize],
    fan_in: usize,
    gain: f64,
) -> crate::error::Result<ParamId> {
    let bound = gain / (fan_in as f64).sqrt();
    let mut stream = Stream::keyed_str(seed, name);
    params.add(name, Tensor::uniform(shape, bound, &mut stream))
}

fn init_zeros(
    params: &mut ParamSet<f64>,
    name: &str,
    shape: &[usize],
) -> crate::error::Result<ParamId> {
    params.add(name, Tensor::zeros(shape))
}
