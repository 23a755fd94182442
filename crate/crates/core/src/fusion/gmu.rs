//! Gated multimodal fusion branches.
//!
//! Per modality m: a candidate `h^m = tanh(Wx * x^m + b_h)` and a gate
//! `z^m = sigmoid(Wz * gate_input + b_z)`; the fused map is the gate-weighted
//! sum over modalities. The recurrent form adds `Uh * h_prev` and
//! `Uz * z_prev` inside the activations.

use crate::error::Result;
use crate::optim::{Bindings, ParamId, ParamSet};
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;

use super::{init_conv, init_zeros, RECURRENT_GAIN};

#[derive(Clone, Debug)]
pub struct GmuBranch {
    pub wx: ParamId,
    pub bh: ParamId,
    pub wz: ParamId,
    pub bz: ParamId,
    pub hidden: usize,
}

impl GmuBranch {
    pub fn build(
        params: &mut ParamSet<f64>,
        seed: u64,
        prefix: &str,
        x_channels: usize,
        gate_channels: usize,
        hidden: usize,
    ) -> Result<Self> {
        Ok(GmuBranch {
            wx: init_conv(
                params,
                seed,
                &format!("{prefix}.wx.weight"),
                &[hidden, x_channels, 3, 3],
                x_channels * 9,
                1.0,
            )?,
            bh: init_zeros(params, &format!("{prefix}.wx.bias"), &[hidden])?,
            wz: init_conv(
                params,
                seed,
                &format!("{prefix}.wz.weight"),
                &[hidden, gate_channels, 3, 3],
                gate_channels * 9,
                1.0,
            )?,
            bz: init_zeros(params, &format!("{prefix}.wz.bias"), &[hidden])?,
            hidden,
        })
    }

    /// Candidate and gate for one modality: `(h^m, z^m)`.
    pub fn forward(
        &self,
        tape: &mut Tape<f64>,
        bind: &mut Bindings,
        params: &ParamSet<f64>,
        x_m: ValueId,
        gate_input: ValueId,
    ) -> Result<(ValueId, ValueId)> {
        let wx = bind.bind(tape, params, self.wx);
        let bh = bind.bind(tape, params, self.bh);
        let wz = bind.bind(tape, params, self.wz);
        let bz = bind.bind(tape, params, self.bz);
        let hx = tape.conv2d(x_m, wx, bh, 1, 1)?;
        let h = tape.tanh(hx)?;
        let zx = tape.conv2d(gate_input, wz, bz, 1, 1)?;
        let z = tape.sigmoid(zx)?;
        Ok((h, z))
    }
}

/// Gate-weighted sum over modality branches: `sum_m z^m (.) h^m`.
/// Returns the fused map and the per-modality gates.
pub fn gmu_fuse(
    tape: &mut Tape<f64>,
    bind: &mut Bindings,
    params: &ParamSet<f64>,
    branches: &[GmuBranch],
    inputs: &[ValueId],
    gate_input: ValueId,
) -> Result<(ValueId, Vec<ValueId>)> {
    debug_assert_eq!(branches.len(), inputs.len());
    let mut fused: Option<ValueId> = None;
    let mut gates = Vec::with_capacity(branches.len());
    for (br, &x_m) in branches.iter().zip(inputs) {
        let (h, z) = br.forward(tape, bind, params, x_m, gate_input)?;
        let zh = tape.mul(z, h)?;
        fused = Some(match fused {
            Some(acc) => tape.add(acc, zh)?,
            None => zh,
        });
        gates.push(z);
    }
    Ok((fused.unwrap(), gates))
}

/// Recurrent branch: adds `Uh`, `Uz` convolutions over the previous step.
#[derive(Clone, Debug)]
pub struct RgmuBranch {
    pub base: GmuBranch,
    pub uh: ParamId,
    pub uz: ParamId,
}

impl RgmuBranch {
    pub fn build(
        params: &mut ParamSet<f64>,
        seed: u64,
        prefix: &str,
        x_channels: usize,
        gate_channels: usize,
        hidden: usize,
    ) -> Result<Self> {
        let base = GmuBranch::build(params, seed, prefix, x_channels, gate_channels, hidden)?;
        Ok(RgmuBranch {
            base,
            uh: init_conv(
                params,
                seed,
                &format!("{prefix}.uh.weight"),
                &[hidden, hidden, 3, 3],
                hidden * 9,
                RECURRENT_GAIN,
            )?,
            uz: init_conv(
                params,
                seed,
                &format!("{prefix}.uz.weight"),
                &[hidden, hidden, 3, 3],
                hidden * 9,
                RECURRENT_GAIN,
            )?,
        })
    }
}

/// Per-modality recurrent state.
#[derive(Clone)]
pub struct RgmuState {
    pub h: Vec<ValueId>,
    pub z: Vec<ValueId>,
}

pub fn rgmu_zero_state(
    tape: &mut Tape<f64>,
    modalities: usize,
    batch: usize,
    hidden: usize,
    height: usize,
    width: usize,
) -> RgmuState {
    let z = tape.constant(Tensor::zeros(&[batch, hidden, height, width]));
    RgmuState {
        h: vec![z; modalities],
        z: vec![z; modalities],
    }
}

/// One recurrent gated step over all modalities. Returns the fused map, the
/// new state, and the gates of this step.
pub fn rgmu_step(
    tape: &mut Tape<f64>,
    bind: &mut Bindings,
    params: &ParamSet<f64>,
    branches: &[RgmuBranch],
    inputs: &[ValueId],
    gate_input: ValueId,
    prev: &RgmuState,
) -> Result<(ValueId, RgmuState, Vec<ValueId>)> {
    debug_assert_eq!(branches.len(), inputs.len());
    let zero_bias: Vec<ValueId> = branches
        .iter()
        .map(|br| tape.constant(Tensor::zeros(&[br.base.hidden])))
        .collect();
    let mut fused: Option<ValueId> = None;
    let mut hs = Vec::with_capacity(branches.len());
    let mut zs = Vec::with_capacity(branches.len());
    for (m, (br, &x_m)) in branches.iter().zip(inputs).enumerate() {
        let wx = bind.bind(tape, params, br.base.wx);
        let bh = bind.bind(tape, params, br.base.bh);
        let wz = bind.bind(tape, params, br.base.wz);
        let bz = bind.bind(tape, params, br.base.bz);
        let uh = bind.bind(tape, params, br.uh);
        let uz = bind.bind(tape, params, br.uz);

        let hx = tape.conv2d(x_m, wx, bh, 1, 1)?;
        let hr = tape.conv2d(prev.h[m], uh, zero_bias[m], 1, 1)?;
        let hsum = tape.add(hx, hr)?;
        let h = tape.tanh(hsum)?;

        let zx = tape.conv2d(gate_input, wz, bz, 1, 1)?;
        let zr = tape.conv2d(prev.z[m], uz, zero_bias[m], 1, 1)?;
        let zsum = tape.add(zx, zr)?;
        let z = tape.sigmoid(zsum)?;

        let zh = tape.mul(z, h)?;
        fused = Some(match fused {
            Some(acc) => tape.add(acc, zh)?,
            None => zh,
        });
        hs.push(h);
        zs.push(z);
    }
    Ok((
        fused.unwrap(),
        RgmuState {
            h: hs,
            z: zs.clone(),
        },
        zs,
    ))
}
