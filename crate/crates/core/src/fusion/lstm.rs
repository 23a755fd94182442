//! Attentive convolutional LSTM.
//!
//! Standard 4-gate conv-LSTM cell over `[x, h]` with 3x3 kernels. The
//! attentive wrapper weights the incoming frame by a spatial softmax of the
//! previous output (channel-meaned so one attention map covers all input
//! channels); with zero initial state that is uniform 1/(H*W) attention.
//! Static use re-attends one frame for a fixed number of iterations;
//! sequential use consumes one frame per timestep.

use crate::error::Result;
use crate::optim::{Bindings, ParamId, ParamSet};
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;

use super::{init_conv, RECURRENT_GAIN, STATIC_ATTENTION_ITERS};

#[derive(Clone, Debug)]
pub struct ConvLstmParams {
    /// Gate convolution `[4*hidden, x_channels + hidden, 3, 3]`; gate order
    /// is input, forget, cell, output.
    pub w: ParamId,
    pub b: ParamId,
    pub x_channels: usize,
    pub hidden: usize,
}

impl ConvLstmParams {
    pub fn build(
        params: &mut ParamSet<f64>,
        seed: u64,
        prefix: &str,
        x_channels: usize,
        hidden: usize,
    ) -> Result<Self> {
        let cin = x_channels + hidden;
        let w = init_conv(
            params,
            seed,
            &format!("{prefix}.gates.weight"),
            &[4 * hidden, cin, 3, 3],
            cin * 9,
            RECURRENT_GAIN,
        )?;
        // forget-gate bias starts at +1
        let mut bias = Tensor::zeros(&[4 * hidden]);
        for v in &mut bias.make_mut()[hidden..2 * hidden] {
            *v = 1.0;
        }
        let b = params.add(format!("{prefix}.gates.bias"), bias)?;
        Ok(ConvLstmParams {
            w,
            b,
            x_channels,
            hidden,
        })
    }
}

/// LSTM state: hidden and cell maps `[B, hidden, H, W]`.
#[derive(Clone, Copy)]
pub struct LstmState {
    pub h: ValueId,
    pub c: ValueId,
}

pub fn zero_state(
    tape: &mut Tape<f64>,
    batch: usize,
    hidden: usize,
    height: usize,
    width: usize,
) -> LstmState {
    let z = tape.constant(Tensor::zeros(&[batch, hidden, height, width]));
    LstmState { h: z, c: z }
}

/// One plain cell step on an (already attended) input.
pub fn lstm_step(
    tape: &mut Tape<f64>,
    bind: &mut Bindings,
    params: &ParamSet<f64>,
    cell: &ConvLstmParams,
    x: ValueId,
    state: LstmState,
) -> Result<LstmState> {
    debug_assert_eq!(tape.shape(x)[1], cell.x_channels);
    let w = bind.bind(tape, params, cell.w);
    let b = bind.bind(tape, params, cell.b);
    let cat = tape.concat_channels(&[x, state.h])?;
    let acts = tape.conv2d(cat, w, b, 1, 1)?;
    let hidden = cell.hidden;
    let i = tape.slice_channels(acts, 0, hidden)?;
    let i = tape.sigmoid(i)?;
    let f = tape.slice_channels(acts, hidden, 2 * hidden)?;
    let f = tape.sigmoid(f)?;
    let g = tape.slice_channels(acts, 2 * hidden, 3 * hidden)?;
    let g = tape.tanh(g)?;
    let o = tape.slice_channels(acts, 3 * hidden, 4 * hidden)?;
    let o = tape.sigmoid(o)?;
    let fc = tape.mul(f, state.c)?;
    let ig = tape.mul(i, g)?;
    let c = tape.add(fc, ig)?;
    let ct = tape.tanh(c)?;
    let h = tape.mul(o, ct)?;
    Ok(LstmState { h, c })
}

/// Spatial attention from the previous output: softmax over H*W of the
/// channel mean, broadcast across the input's channels.
pub fn attend(tape: &mut Tape<f64>, x: ValueId, prev_out: ValueId) -> Result<ValueId> {
    let m = tape.mean_channels(prev_out)?;
    let a = tape.softmax_spatial(m)?;
    tape.mul_spatial(x, a)
}

/// One attentive step: attend to `x` with the previous output, then advance
/// the cell. Returns the new state (`state.h` is the step output).
pub fn alstm_step(
    tape: &mut Tape<f64>,
    bind: &mut Bindings,
    params: &ParamSet<f64>,
    cell: &ConvLstmParams,
    x: ValueId,
    state: LstmState,
) -> Result<LstmState> {
    let attended = attend(tape, x, state.h)?;
    lstm_step(tape, bind, params, cell, attended, state)
}

/// Static form: re-attend the same frame for a fixed number of iterations.
pub fn alstm_static(
    tape: &mut Tape<f64>,
    bind: &mut Bindings,
    params: &ParamSet<f64>,
    cell: &ConvLstmParams,
    x: ValueId,
) -> Result<ValueId> {
    let s = tape.shape(x).to_vec();
    let mut state = zero_state(tape, s[0], cell.hidden, s[2], s[3]);
    for _ in 0..STATIC_ATTENTION_ITERS {
        state = alstm_step(tape, bind, params, cell, x, state)?;
    }
    Ok(state.h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_op, CheckOpts};
    use crate::rng::Stream;

    fn cell_fixture(xc: usize, hidden: usize) -> (ParamSet<f64>, ConvLstmParams) {
        let mut params = ParamSet::new();
        let cell = ConvLstmParams::build(&mut params, 17, "cell", xc, hidden).unwrap();
        (params, cell)
    }

    #[test]
    fn uniform_attention_at_zero_state() {
        // z_prev = 0 -> softmax uniform -> attended = x / (H*W)
        let mut tape = Tape::new();
        let mut s = Stream::keyed(3, &[4]);
        let x = Tensor::<f64>::randn(&[1, 3, 4, 4], 1.0, &mut s);
        let xid = tape.constant(x.clone());
        let z = tape.constant(Tensor::zeros(&[1, 5, 4, 4]));
        let att = attend(&mut tape, xid, z).unwrap();
        let got = tape.value(att);
        for (g, v) in got.iter().zip(x.iter()) {
            assert!((g - v / 16.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_give_zero_static_output() {
        let (mut params, cell) = cell_fixture(3, 4);
        // force all gate weights and biases to zero: o = sigmoid(0) = 0.5,
        // c stays 0 because i*g = 0.5*tanh(0) = 0 -> h = 0.5*tanh(0) = 0
        for (id, p) in params.clone().iter() {
            params
                .set_value(id, Tensor::zeros(p.value.shape()))
                .unwrap();
        }
        let mut tape = Tape::new();
        let mut bind = Bindings::new();
        let x = tape.constant(Tensor::full(&[1, 3, 4, 4], 0.7));
        let out = alstm_static(&mut tape, &mut bind, &params, &cell, x).unwrap();
        assert!(tape.value(out).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_frames_drive_state_to_a_fixed_point() {
        let (params, cell) = cell_fixture(3, 6);
        let mut s = Stream::keyed(12, &[3]);
        let x = Tensor::<f64>::randn(&[1, 3, 6, 6], 1.0, &mut s);
        let mut tape = Tape::new();
        let mut bind = Bindings::new();
        let xid = tape.constant(x);
        let mut state = zero_state(&mut tape, 1, 6, 6, 6);
        let mut prev: Option<Tensor<f64>> = None;
        let mut last_diff = f64::INFINITY;
        for step in 0..80 {
            state = alstm_step(&mut tape, &mut bind, &params, &cell, xid, state).unwrap();
            let h = tape.value(state.h).clone();
            if let Some(p) = &prev {
                let d = p.max_abs_diff(&h);
                if step > 3 {
                    assert!(d <= last_diff * 1.05, "state diverging at step {step}: {d}");
                }
                last_diff = d;
            }
            prev = Some(h);
        }
        assert!(last_diff < 1e-6, "state did not settle: {last_diff}");
    }

    #[test]
    fn sequential_unroll_gradcheck_through_time() {
        let (params, cell) = cell_fixture(2, 3);
        let mut s = Stream::keyed(6, &[1]);
        let x0 = Tensor::<f64>::randn(&[1, 2, 4, 4], 1.0, &mut s);
        let x1 = Tensor::<f64>::randn(&[1, 2, 4, 4], 1.0, &mut s);
        let r = check_op(&[x0, x1], CheckOpts::default(), move |tape, xs| {
            let mut bind = Bindings::new();
            let mut state = zero_state(tape, 1, 3, 4, 4);
            state = alstm_step(tape, &mut bind, &params, &cell, xs[0], state)?;
            state = alstm_step(tape, &mut bind, &params, &cell, xs[1], state)?;
            let sq = tape.mul(state.h, state.h)?;
            tape.sum_all(sq)
        })
        .unwrap();
        assert!(r.passed(1e-4), "alstm 2 steps: {}", r.max_rel_err);
    }

    #[test]
    fn static_iterations_gradcheck() {
        let (params, cell) = cell_fixture(3, 2);
        let mut s = Stream::keyed(6, &[2]);
        let x = Tensor::<f64>::randn(&[1, 3, 4, 4], 1.0, &mut s);
        let r = check_op(&[x], CheckOpts::default(), move |tape, xs| {
            let mut bind = Bindings::new();
            let out = alstm_static(tape, &mut bind, &params, &cell, xs[0])?;
            let sq = tape.mul(out, out)?;
            tape.sum_all(sq)
        })
        .unwrap();
        assert!(r.passed(1e-4), "alstm static: {}", r.max_rel_err);
    }
}
