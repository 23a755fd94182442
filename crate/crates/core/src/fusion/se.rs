//! Squeeze-and-excitation channel gating.

use crate::error::Result;
use crate::optim::{Bindings, ParamId, ParamSet};
use crate::tape::{Tape, ValueId};

use super::{init_conv, init_zeros, SE_REDUCTION};

#[derive(Clone, Debug)]
pub struct SeParams {
    pub fc1_w: ParamId,
    pub fc1_b: ParamId,
    pub fc2_w: ParamId,
    pub fc2_b: ParamId,
    pub channels: usize,
}

impl SeParams {
    pub fn build(
        params: &mut ParamSet<f64>,
        seed: u64,
        prefix: &str,
        channels: usize,
    ) -> Result<Self> {
        let hidden = (channels / SE_REDUCTION).max(1);
        Ok(SeParams {
            fc1_w: init_conv(
                params,
                seed,
                &format!("{prefix}.fc1.weight"),
                &[hidden, channels],
                channels,
                1.0,
            )?,
            fc1_b: init_zeros(params, &format!("{prefix}.fc1.bias"), &[hidden])?,
            fc2_w: init_conv(
                params,
                seed,
                &format!("{prefix}.fc2.weight"),
                &[channels, hidden],
                hidden,
                1.0,
            )?,
            fc2_b: init_zeros(params, &format!("{prefix}.fc2.bias"), &[channels])?,
            channels,
        })
    }

    /// Frozen copy of another SE layer's parameters (tied weights).
    pub fn build_frozen_copy(
        params: &mut ParamSet<f64>,
        prefix: &str,
        src: &SeParams,
        src_set: &ParamSet<f64>,
    ) -> Result<Self> {
        let copy = |params: &mut ParamSet<f64>, name: String, id: ParamId| {
            params.add_frozen(name, src_set.value(id).clone())
        };
        Ok(SeParams {
            fc1_w: copy(params, format!("{prefix}.fc1.weight"), src.fc1_w)?,
            fc1_b: copy(params, format!("{prefix}.fc1.bias"), src.fc1_b)?,
            fc2_w: copy(params, format!("{prefix}.fc2.weight"), src.fc2_w)?,
            fc2_b: copy(params, format!("{prefix}.fc2.bias"), src.fc2_b)?,
            channels: src.channels,
        })
    }

    pub fn param_ids(&self) -> [ParamId; 4] {
        [self.fc1_w, self.fc1_b, self.fc2_w, self.fc2_b]
    }

    /// Squeeze (global average pool), excite (two dense layers), rescale.
    /// Returns the gated map and the per-channel scale in [0, 1].
    pub fn forward(
        &self,
        tape: &mut Tape<f64>,
        bind: &mut Bindings,
        params: &ParamSet<f64>,
        x: ValueId,
    ) -> Result<(ValueId, ValueId)> {
        let w1 = bind.bind(tape, params, self.fc1_w);
        let b1 = bind.bind(tape, params, self.fc1_b);
        let w2 = bind.bind(tape, params, self.fc2_w);
        let b2 = bind.bind(tape, params, self.fc2_b);
        let pooled = tape.global_avg_pool(x)?;
        let h = tape.linear(pooled, w1, b1)?;
        let h = tape.relu(h)?;
        let s = tape.linear(h, w2, b2)?;
        let s = tape.sigmoid(s)?;
        let y = tape.scale_channels(x, s)?;
        Ok((y, s))
    }
}
