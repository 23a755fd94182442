//! Per-modality convolutional encoder/decoder.
//!
//! 3 -> 32 -> 64 channels, one 2x2 max pool, two 128-channel layers, then
//! transposed convolutions back through 128, 64 and 32 channels to the input
//! channel count. The 128-channel transposed conv is the spatial restoration
//! (kernel 2, stride 2); everything else is 3x3 with padding 1.

use crate::error::Result;
use crate::optim::{Bindings, ParamId, ParamSet};
use crate::tape::{Tape, ValueId};

use super::{init_conv, init_zeros, CHANNELS_PER_MODALITY};

#[derive(Clone, Debug)]
struct ConvP {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    conv1: ConvP,   // 3 -> 32
    conv2: ConvP,   // 32 -> 64
    conv3: ConvP,   // 64 -> 128
    conv4: ConvP,   // 128 -> 128
    deconv1: ConvP, // 128 -> 128, k2 s2 (restores pooled resolution)
    deconv2: ConvP, // 128 -> 64
    deconv3: ConvP, // 64 -> 32
    out: ConvP,     // 32 -> input channels
}

impl EncoderParams {
    pub fn build(params: &mut ParamSet<f64>, seed: u64, prefix: &str) -> Result<Self> {
        let conv = |params: &mut ParamSet<f64>, name: String, cout: usize, cin: usize, k: usize| {
            let w = init_conv(
                params,
                seed,
                &format!("{name}.weight"),
                &[cout, cin, k, k],
                cin * k * k,
                1.0,
            )?;
            let b = init_zeros(params, &format!("{name}.bias"), &[cout])?;
            Ok::<_, crate::error::Error>(ConvP { w, b })
        };
        // transposed conv weights are [cin, cout, k, k]
        let deconv = |params: &mut ParamSet<f64>, name: String, cin: usize, cout: usize, k: usize| {
            let w = init_conv(
                params,
                seed,
                &format!("{name}.weight"),
                &[cin, cout, k, k],
                cin * k * k,
                1.0,
            )?;
            let b = init_zeros(params, &format!("{name}.bias"), &[cout])?;
            Ok::<_, crate::error::Error>(ConvP { w, b })
        };
        Ok(EncoderParams {
            conv1: conv(params, format!("{prefix}.conv1"), 32, CHANNELS_PER_MODALITY, 3)?,
            conv2: conv(params, format!("{prefix}.conv2"), 64, 32, 3)?,
            conv3: conv(params, format!("{prefix}.conv3"), 128, 64, 3)?,
            conv4: conv(params, format!("{prefix}.conv4"), 128, 128, 3)?,
            deconv1: deconv(params, format!("{prefix}.deconv1"), 128, 128, 2)?,
            deconv2: deconv(params, format!("{prefix}.deconv2"), 128, 64, 3)?,
            deconv3: deconv(params, format!("{prefix}.deconv3"), 64, 32, 3)?,
            out: conv(params, format!("{prefix}.out"), CHANNELS_PER_MODALITY, 32, 3)?,
        })
    }

    /// `[B,3,H,W] -> [B,3,H,W]` with ReLU between layers (linear final layer).
    pub fn forward(
        &self,
        tape: &mut Tape<f64>,
        bind: &mut Bindings,
        params: &ParamSet<f64>,
        x: ValueId,
    ) -> Result<ValueId> {
        let conv = |tape: &mut Tape<f64>,
                        bind: &mut Bindings,
                        p: &ConvP,
                        x: ValueId,
                        pad: usize|
         -> Result<ValueId> {
            let w = bind.bind(tape, params, p.w);
            let b = bind.bind(tape, params, p.b);
            tape.conv2d(x, w, b, pad, 1)
        };
        let c1 = conv(tape, bind, &self.conv1, x, 1)?;
        let c1 = tape.relu(c1)?;
        let c2 = conv(tape, bind, &self.conv2, c1, 1)?;
        let c2 = tape.relu(c2)?;
        let (p, _) = tape.maxpool2d(c2)?;
        let c3 = conv(tape, bind, &self.conv3, p, 1)?;
        let c3 = tape.relu(c3)?;
        let c4 = conv(tape, bind, &self.conv4, c3, 1)?;
        let c4 = tape.relu(c4)?;
        let d1 = {
            let w = bind.bind(tape, params, self.deconv1.w);
            let b = bind.bind(tape, params, self.deconv1.b);
            tape.conv_transpose2d(c4, w, b, 2, 0)?
        };
        let d1 = tape.relu(d1)?;
        let d2 = {
            let w = bind.bind(tape, params, self.deconv2.w);
            let b = bind.bind(tape, params, self.deconv2.b);
            tape.conv_transpose2d(d1, w, b, 1, 1)?
        };
        let d2 = tape.relu(d2)?;
        let d3 = {
            let w = bind.bind(tape, params, self.deconv3.w);
            let b = bind.bind(tape, params, self.deconv3.b);
            tape.conv_transpose2d(d2, w, b, 1, 1)?
        };
        let d3 = tape.relu(d3)?;
        conv(tape, bind, &self.out, d3, 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use crate::tensor::Tensor;

    #[test]
    fn output_shape_matches_input() {
        let mut params = ParamSet::new();
        let enc = EncoderParams::build(&mut params, 11, "enc0").unwrap();
        let mut s = Stream::keyed(4, &[2]);
        let x = Tensor::<f64>::randn(&[2, 3, 8, 8], 1.0, &mut s);
        let mut tape = Tape::new();
        let mut bind = Bindings::new();
        let xid = tape.constant(x);
        let y = enc.forward(&mut tape, &mut bind, &params, xid).unwrap();
        assert_eq!(tape.shape(y), &[2, 3, 8, 8]);
    }

    #[test]
    fn parameter_count_is_as_designed() {
        let mut params = ParamSet::new();
        EncoderParams::build(&mut params, 11, "enc0").unwrap();
        assert_eq!(params.element_count(), 399_619);
    }
}
