//! Directed attention: a two-stream channel weighting.
//!
//! The inverted stream sees surprisal-inverted channels and is trained
//! through its own low-resolution prediction head; the direct stream is a
//! squeeze-excitation layer whose weights are frozen and tied (copied) from
//! the inverted stream, and its channel scales weight the raw feature maps
//! into priority maps.

use crate::error::Result;
use crate::optim::{Bindings, ParamId, ParamSet};
use crate::tape::{Tape, ValueId};

use super::se::SeParams;
use super::{init_conv, init_zeros, STACK_CHANNELS};

/// Channel width of the inverted stream's 3x3 convolution.
const DAM_CONV_CHANNELS: usize = 32;

/// Surprisal inversion before standardization: `-log(softmax(u))` per
/// channel over the spatial axes. Strictly positive input to the log is
/// guaranteed because softmax is.
pub fn inverted_surprisal(tape: &mut Tape<f64>, u: ValueId) -> Result<ValueId> {
    let sm = tape.softmax_spatial(u)?;
    let lg = tape.ln(sm)?;
    tape.neg(lg)
}

/// Full channel inversion: surprisal, then per-channel spatial
/// standardization to mean 0 / std 1.
pub fn invert_channels(tape: &mut Tape<f64>, u: ValueId) -> Result<ValueId> {
    let s = inverted_surprisal(tape, u)?;
    tape.standardize_spatial(s, 1e-8)
}

#[derive(Clone, Debug)]
pub struct DamParams {
    pub inverted_se: SeParams,
    pub direct_se: SeParams,
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub head_w: ParamId,
    pub head_b: ParamId,
}

impl DamParams {
    pub fn build(params: &mut ParamSet<f64>, seed: u64) -> Result<Self> {
        let inverted_se = SeParams::build(params, seed, "dam.inverted.se", STACK_CHANNELS)?;
        let snapshot = params.clone();
        let direct_se =
            SeParams::build_frozen_copy(params, "dam.direct.se", &inverted_se, &snapshot)?;
        Ok(DamParams {
            inverted_se,
            direct_se,
            conv_w: init_conv(
                params,
                seed,
                "dam.inverted.conv.weight",
                &[DAM_CONV_CHANNELS, STACK_CHANNELS, 3, 3],
                STACK_CHANNELS * 9,
                1.0,
            )?,
            conv_b: init_zeros(params, "dam.inverted.conv.bias", &[DAM_CONV_CHANNELS])?,
            head_w: init_conv(
                params,
                seed,
                "dam.inverted.head.weight",
                &[1, DAM_CONV_CHANNELS, 1, 1],
                DAM_CONV_CHANNELS,
                1.0,
            )?,
            head_b: init_zeros(params, "dam.inverted.head.bias", &[1])?,
        })
    }

    /// One frame through both streams. Returns the priority map (direct
    /// stream, same shape as the input), the inverted-stream prediction at
    /// half resolution, and the direct scale vector.
    pub fn forward(
        &self,
        tape: &mut Tape<f64>,
        bind: &mut Bindings,
        params: &ParamSet<f64>,
        frame: ValueId,
    ) -> Result<DamFrame> {
        // direct stream: frozen SE gating of the raw standardized channels
        let (pm, scale) = self.direct_se.forward(tape, bind, params, frame)?;

        // inverted stream: surprisal channels -> SE -> conv -> pool -> 1x1
        let inv = invert_channels(tape, frame)?;
        let (gated, _) = self.inverted_se.forward(tape, bind, params, inv)?;
        let w = bind.bind(tape, params, self.conv_w);
        let b = bind.bind(tape, params, self.conv_b);
        let c = tape.conv2d(gated, w, b, 1, 1)?;
        let c = tape.relu(c)?;
        let (pooled, _) = tape.maxpool2d(c)?;
        let hw = bind.bind(tape, params, self.head_w);
        let hb = bind.bind(tape, params, self.head_b);
        let pred = tape.conv2d(pooled, hw, hb, 0, 1)?;
        Ok(DamFrame {
            priority: pm,
            prediction: pred,
            scale,
        })
    }

    /// Copy the inverted-stream SE weights onto the frozen direct stream.
    pub fn tie_sync(&self, params: &mut ParamSet<f64>) -> Result<()> {
        for (src, dst) in self
            .inverted_se
            .param_ids()
            .into_iter()
            .zip(self.direct_se.param_ids())
        {
            let v = params.value(src).clone();
            params.set_value(dst, v)?;
        }
        Ok(())
    }

    /// True when direct and inverted SE weights are bit-identical.
    pub fn tied(&self, params: &ParamSet<f64>) -> bool {
        self.inverted_se
            .param_ids()
            .into_iter()
            .zip(self.direct_se.param_ids())
            .all(|(a, b)| params.value(a).as_slice() == params.value(b).as_slice())
    }
}

pub struct DamFrame {
    pub priority: ValueId,
    pub prediction: ValueId,
    pub scale: ValueId,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use crate::tensor::Tensor;

    #[test]
    fn uniform_channel_inverts_to_log_hw() {
        // uniform 2x2 channel: -log(softmax) = -log(1/4) = log 4 everywhere
        let mut tape = Tape::new();
        let u = tape.constant(Tensor::full(&[1, 1, 2, 2], 0.3));
        let s = inverted_surprisal(&mut tape, u).unwrap();
        for &v in tape.value(s).as_slice() {
            assert!((v - 4.0f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn two_cell_channel_closed_form() {
        // channel [a, a + ln 3]: softmax = [1/4, 3/4], surprisal = [ln 4, ln(4/3)]
        let a = 0.7;
        let mut tape = Tape::new();
        let u = tape.constant(Tensor::from_vec(&[1, 1, 1, 2], vec![a, a + 3.0f64.ln()]).unwrap());
        let s = inverted_surprisal(&mut tape, u).unwrap();
        let v = tape.value(s);
        assert!((v.as_slice()[0] - 4.0f64.ln()).abs() < 1e-12);
        assert!((v.as_slice()[1] - (4.0f64 / 3.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn argmax_becomes_argmin() {
        let mut stream = Stream::keyed(9, &[1]);
        for _ in 0..50 {
            let u = Tensor::<f64>::randn(&[1, 1, 4, 4], 1.0, &mut stream);
            let mut tape = Tape::new();
            let uid = tape.constant(u.clone());
            let inv = inverted_surprisal(&mut tape, uid).unwrap();
            let iv = tape.value(inv);
            let argmax = |t: &Tensor<f64>| {
                t.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0
            };
            let argmin = |t: &Tensor<f64>| {
                t.iter()
                    .enumerate()
                    .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0
            };
            assert_eq!(argmax(&u), argmin(iv));
        }
    }

    #[test]
    fn tie_sync_restores_bit_identity() {
        let mut params = ParamSet::new();
        let dam = DamParams::build(&mut params, 5).unwrap();
        assert!(dam.tied(&params));
        // perturb the inverted stream, as an optimizer step would
        let id = dam.inverted_se.fc1_w;
        let bumped = params.value(id).map(|v| v + 0.25);
        params.set_value(id, bumped).unwrap();
        assert!(!dam.tied(&params));
        dam.tie_sync(&mut params).unwrap();
        assert!(dam.tied(&params));
    }

    #[test]
    fn priority_map_is_channelwise_scaling_and_freeze_holds() {
        let mut params = ParamSet::new();
        let dam = DamParams::build(&mut params, 5).unwrap();
        let mut stream = Stream::keyed(2, &[7]);
        let frame = Tensor::<f64>::randn(&[1, STACK_CHANNELS, 4, 4], 1.0, &mut stream);

        let mut tape = Tape::new();
        let mut bind = Bindings::new();
        let fid = tape.constant(frame.clone());
        let out = dam.forward(&mut tape, &mut bind, &params, fid).unwrap();
        assert_eq!(tape.shape(out.prediction), &[1, 1, 2, 2]);

        // PM = scale_c * FM_c exactly
        let pm = tape.value(out.priority).clone();
        let sc = tape.value(out.scale).clone();
        for ci in 0..STACK_CHANNELS {
            for i in 0..16 {
                let expect = sc.at(&[0, ci]) * frame.at(&[0, ci, i / 4, i % 4]);
                assert!((pm.at(&[0, ci, i / 4, i % 4]) - expect).abs() < 1e-12);
            }
        }

        // gradient of a loss on the inverted prediction reaches the inverted
        // stream but never the frozen direct stream
        let loss = {
            let sq = tape.mul(out.prediction, out.prediction).unwrap();
            tape.sum_all(sq).unwrap()
        };
        let grads = tape.backward(loss).unwrap();
        let inv_node = bind.node(dam.inverted_se.fc1_w).unwrap();
        assert!(grads.get(inv_node).is_some());
        let dir_node = bind.node(dam.direct_se.fc1_w).unwrap();
        assert!(grads.get(dir_node).is_none());
    }
}
