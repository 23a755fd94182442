//! Model assembly: integration variants, construction and the forward pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::BatchNormStats;
use crate::optim::{Bindings, ParamId, ParamSet};
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor as TensorOf;

use super::dam::DamParams;
use super::encoder::EncoderParams;
use super::gmu::{gmu_fuse, rgmu_step, rgmu_zero_state, GmuBranch, RgmuBranch};
use super::lstm::{alstm_static, alstm_step, zero_state, ConvLstmParams};
use super::se::SeParams;
use super::{
    init_conv, init_zeros, CHANNELS_PER_MODALITY, GMU_HIDDEN, LSTM_HIDDEN, MODALITIES,
    STACK_CHANNELS,
};

type Tensor = TensorOf<f64>;

/// Context sizes the trainer accepts (1 = static).
pub const VALID_CONTEXTS: [usize; 7] = [1, 2, 4, 6, 8, 10, 12];

/// The integration variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Additive,
    Concatenative,
    Alstm,
    Se,
    Gmu,
    Agmu,
    Lagmu,
    Rgmu,
    Argmu,
    Largmu,
}

impl Variant {
    pub const ALL: [Variant; 10] = [
        Variant::Additive,
        Variant::Concatenative,
        Variant::Alstm,
        Variant::Se,
        Variant::Gmu,
        Variant::Agmu,
        Variant::Lagmu,
        Variant::Rgmu,
        Variant::Argmu,
        Variant::Largmu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Additive => "additive",
            Variant::Concatenative => "concatenative",
            Variant::Alstm => "alstm",
            Variant::Se => "se",
            Variant::Gmu => "gmu",
            Variant::Agmu => "agmu",
            Variant::Lagmu => "lagmu",
            Variant::Rgmu => "rgmu",
            Variant::Argmu => "argmu",
            Variant::Largmu => "largmu",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s.to_lowercase())
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown variant {s:?}; valid variants: {}",
                    Variant::ALL.map(|v| v.name()).join(", ")
                ))
            })
    }

    /// Static variants integrate a single frame; sequential ones need context.
    /// The attentive LSTM exists in both forms.
    pub fn is_sequential_only(self) -> bool {
        matches!(self, Variant::Rgmu | Variant::Argmu | Variant::Largmu)
    }

    pub fn is_static_only(self) -> bool {
        matches!(
            self,
            Variant::Additive
                | Variant::Concatenative
                | Variant::Se
                | Variant::Gmu
                | Variant::Agmu
                | Variant::Lagmu
        )
    }

    /// Variants with an explicit per-modality gate.
    pub fn is_gated(self) -> bool {
        matches!(
            self,
            Variant::Gmu
                | Variant::Agmu
                | Variant::Lagmu
                | Variant::Rgmu
                | Variant::Argmu
                | Variant::Largmu
        )
    }

    pub fn supports_context(self, context: usize) -> bool {
        if self.is_sequential_only() {
            context > 1
        } else if self.is_static_only() {
            context == 1
        } else {
            true
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub context: usize,
    pub dam: bool,
    pub height: usize,
    pub width: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !VALID_CONTEXTS.contains(&self.context) {
            return Err(Error::config(format!(
                "context {} not in {VALID_CONTEXTS:?}",
                self.context
            )));
        }
        if !self.variant.supports_context(self.context) {
            return Err(Error::config(format!(
                "variant {} does not support context {} ({} integration)",
                self.variant.name(),
                self.context,
                if self.variant.is_static_only() {
                    "static"
                } else {
                    "sequential"
                }
            )));
        }
        if self.height % 2 != 0 || self.width % 2 != 0 {
            return Err(Error::config(format!(
                "map dims {}x{} must be even (one pooling stage)",
                self.height, self.width
            )));
        }
        Ok(())
    }

    pub fn is_sequential(&self) -> bool {
        self.context > 1
    }
}

enum Integration {
    Additive { conv_w: ParamId, conv_b: ParamId },
    Concatenative { conv_w: ParamId, conv_b: ParamId },
    Alstm { cell: ConvLstmParams },
    Gmu { branches: Vec<GmuBranch> },
    AttentiveGmu { cells: Vec<ConvLstmParams>, branches: Vec<GmuBranch> },
    LateGmu { cell: ConvLstmParams, branches: Vec<GmuBranch> },
    Rgmu { branches: Vec<RgmuBranch> },
}

/// The assembled prediction network.
pub struct GaspModel {
    pub cfg: ModelConfig,
    pub params: ParamSet<f64>,
    pub bn_stats: Option<BatchNormStats>,
    se_pre: Option<SeParams>,
    dam: Option<DamParams>,
    bn: Option<(ParamId, ParamId)>,
    encoders: Vec<EncoderParams>,
    integ: Integration,
    head_w: ParamId,
    head_b: ParamId,
}

/// Everything one forward pass exposes.
pub struct ForwardOutput {
    /// Final prediction `[B,1,H,W]`.
    pub pred: ValueId,
    /// Inverted-stream predictions per timestep `[B,1,H/2,W/2]` (with DAM).
    pub dam_preds: Vec<ValueId>,
    /// Gate values per timestep, one per modality branch (gated variants).
    pub gates: Vec<Vec<ValueId>>,
    /// Parameter-to-leaf bindings of this pass.
    pub bindings: Bindings,
}

impl GaspModel {
    pub fn build(cfg: ModelConfig, seed: u64) -> Result<GaspModel> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let sequential = cfg.is_sequential();

        let se_pre = if cfg.variant == Variant::Se {
            Some(SeParams::build(&mut params, seed, "se_pre", STACK_CHANNELS)?)
        } else {
            None
        };
        let dam = if cfg.dam {
            Some(DamParams::build(&mut params, seed)?)
        } else {
            None
        };
        let bn = if sequential {
            let gamma = params.add("bn.gamma", Tensor::ones(&[STACK_CHANNELS]))?;
            let beta = init_zeros(&mut params, "bn.beta", &[STACK_CHANNELS])?;
            Some((gamma, beta))
        } else {
            None
        };
        let bn_stats = sequential.then(|| BatchNormStats::new(STACK_CHANNELS));

        // static integration shares one encoder, sequential has one per modality
        let n_enc = if sequential { MODALITIES } else { 1 };
        let encoders = (0..n_enc)
            .map(|i| EncoderParams::build(&mut params, seed, &format!("encoder{i}")))
            .collect::<Result<Vec<_>>>()?;

        let c = CHANNELS_PER_MODALITY;
        let integ = match cfg.variant {
            Variant::Additive => {
                let conv_w = init_conv(
                    &mut params, seed, "integ.conv.weight",
                    &[32, c, 3, 3], c * 9, 1.0,
                )?;
                let conv_b = init_zeros(&mut params, "integ.conv.bias", &[32])?;
                Integration::Additive { conv_w, conv_b }
            }
            Variant::Concatenative | Variant::Se => {
                let conv_w = init_conv(
                    &mut params, seed, "integ.conv.weight",
                    &[32, STACK_CHANNELS, 3, 3], STACK_CHANNELS * 9, 1.0,
                )?;
                let conv_b = init_zeros(&mut params, "integ.conv.bias", &[32])?;
                Integration::Concatenative { conv_w, conv_b }
            }
            Variant::Alstm => Integration::Alstm {
                cell: ConvLstmParams::build(
                    &mut params, seed, "integ.alstm", STACK_CHANNELS, LSTM_HIDDEN,
                )?,
            },
            Variant::Gmu => {
                let branches = (0..MODALITIES)
                    .map(|m| {
                        GmuBranch::build(
                            &mut params, seed, &format!("integ.gmu.m{m}"),
                            c, STACK_CHANNELS, GMU_HIDDEN,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                Integration::Gmu { branches }
            }
            Variant::Agmu | Variant::Argmu => {
                let cells = (0..MODALITIES)
                    .map(|m| {
                        ConvLstmParams::build(
                            &mut params, seed, &format!("integ.alstm.m{m}"), c, LSTM_HIDDEN,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                let branches = (0..MODALITIES)
                    .map(|m| {
                        GmuBranch::build(
                            &mut params, seed, &format!("integ.gmu.m{m}"),
                            LSTM_HIDDEN, MODALITIES * LSTM_HIDDEN, GMU_HIDDEN,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                Integration::AttentiveGmu { cells, branches }
            }
            Variant::Lagmu | Variant::Largmu => {
                let cell = ConvLstmParams::build(
                    &mut params, seed, "integ.alstm", STACK_CHANNELS, LSTM_HIDDEN,
                )?;
                let branches = (0..MODALITIES)
                    .map(|m| {
                        GmuBranch::build(
                            &mut params, seed, &format!("integ.gate.g{m}"),
                            LSTM_HIDDEN, LSTM_HIDDEN, LSTM_HIDDEN,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                Integration::LateGmu { cell, branches }
            }
            Variant::Rgmu => {
                let branches = (0..MODALITIES)
                    .map(|m| {
                        RgmuBranch::build(
                            &mut params, seed, &format!("integ.rgmu.m{m}"),
                            c, STACK_CHANNELS, GMU_HIDDEN,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                Integration::Rgmu { branches }
            }
        };

        let head_in = match cfg.variant {
            Variant::Additive | Variant::Concatenative | Variant::Se => 32,
            Variant::Gmu | Variant::Agmu | Variant::Argmu | Variant::Rgmu => GMU_HIDDEN,
            Variant::Alstm | Variant::Lagmu | Variant::Largmu => LSTM_HIDDEN,
        };
        let head_w = init_conv(
            &mut params, seed, "head.weight", &[1, head_in, 1, 1], head_in, 1.0,
        )?;
        let head_b = init_zeros(&mut params, "head.bias", &[1])?;

        Ok(GaspModel {
            cfg,
            params,
            bn_stats,
            se_pre,
            dam,
            bn,
            encoders,
            integ,
            head_w,
            head_b,
        })
    }

    pub fn dam_params(&self) -> Option<&DamParams> {
        self.dam.as_ref()
    }

    /// Copy inverted-stream weights onto the frozen direct stream.
    pub fn tie_sync(&mut self) -> Result<()> {
        if let Some(dam) = &self.dam {
            dam.tie_sync(&mut self.params)?;
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.params.element_count()
    }

    /// Run the network on a `[B, T, 15, H, W]` stack.
    pub fn forward(
        &mut self,
        tape: &mut Tape<f64>,
        input: &Tensor,
        training: bool,
    ) -> Result<ForwardOutput> {
        let input_id = tape.constant(input.clone());
        self.forward_node(tape, input_id, training)
    }

    /// Like [`GaspModel::forward`], but reading an existing tape node, so
    /// gradients with respect to the input are available.
    pub fn forward_node(
        &mut self,
        tape: &mut Tape<f64>,
        input_id: ValueId,
        training: bool,
    ) -> Result<ForwardOutput> {
        let s = tape.shape(input_id).to_vec();
        if s.len() != 5
            || s[1] != self.cfg.context
            || s[2] != STACK_CHANNELS
            || s[3] != self.cfg.height
            || s[4] != self.cfg.width
        {
            return Err(Error::shape(format!(
                "forward: input {s:?}, expected [B,{},{STACK_CHANNELS},{},{}]",
                self.cfg.context, self.cfg.height, self.cfg.width
            )));
        }
        let t_len = self.cfg.context;
        let mut bind = Bindings::new();
        let mut frames: Vec<ValueId> = (0..t_len)
            .map(|t| tape.select_time(input_id, t))
            .collect::<Result<Vec<_>>>()?;

        // optional squeeze-excitation stage before the encoders
        if let Some(se) = &self.se_pre {
            for f in frames.iter_mut() {
                let (y, _) = se.forward(tape, &mut bind, &self.params, *f)?;
                *f = y;
            }
        }

        // directed attention: priority maps + per-timestep inverted predictions
        let mut dam_preds = Vec::new();
        if let Some(dam) = &self.dam {
            for f in frames.iter_mut() {
                let out = dam.forward(tape, &mut bind, &self.params, *f)?;
                *f = out.priority;
                dam_preds.push(out.prediction);
            }
        }

        // temporal batch normalization for sequential graphs
        if let Some((gamma, beta)) = self.bn {
            let g = bind.bind(tape, &self.params, gamma);
            let b = bind.bind(tape, &self.params, beta);
            let stacked = tape.stack_time(&frames)?;
            let stats = self.bn_stats.as_mut().expect("bn stats exist with bn");
            let normed = tape.batchnorm_temporal(stacked, g, b, stats, training)?;
            frames = (0..t_len)
                .map(|t| tape.select_time(normed, t))
                .collect::<Result<Vec<_>>>()?;
        }

        // per-modality encoding
        let c = CHANNELS_PER_MODALITY;
        let mut encoded: Vec<Vec<ValueId>> = Vec::with_capacity(t_len); // [t][m]
        for &f in &frames {
            let mut per_mod = Vec::with_capacity(MODALITIES);
            for m in 0..MODALITIES {
                let slice = tape.slice_channels(f, m * c, (m + 1) * c)?;
                let enc = if self.encoders.len() == 1 {
                    &self.encoders[0]
                } else {
                    &self.encoders[m]
                };
                per_mod.push(enc.forward(tape, &mut bind, &self.params, slice)?);
            }
            encoded.push(per_mod);
        }

        // integration
        let mut gates: Vec<Vec<ValueId>> = Vec::new();
        let feature = match &self.integ {
            Integration::Additive { conv_w, conv_b } => {
                let e = &encoded[0];
                let mut sum = e[0];
                for &x in &e[1..] {
                    sum = tape.add(sum, x)?;
                }
                let w = bind.bind(tape, &self.params, *conv_w);
                let b = bind.bind(tape, &self.params, *conv_b);
                let y = tape.conv2d(sum, w, b, 1, 1)?;
                tape.relu(y)?
            }
            Integration::Concatenative { conv_w, conv_b } => {
                let cat = tape.concat_channels(&encoded[0])?;
                let w = bind.bind(tape, &self.params, *conv_w);
                let b = bind.bind(tape, &self.params, *conv_b);
                let y = tape.conv2d(cat, w, b, 1, 1)?;
                tape.relu(y)?
            }
            Integration::Alstm { cell } => {
                if t_len == 1 {
                    let cat = tape.concat_channels(&encoded[0])?;
                    alstm_static(tape, &mut bind, &self.params, cell, cat)?
                } else {
                    let mut state =
                        zero_state(tape, s[0], cell.hidden, self.cfg.height, self.cfg.width);
                    for e_t in &encoded {
                        let cat = tape.concat_channels(e_t)?;
                        state = alstm_step(tape, &mut bind, &self.params, cell, cat, state)?;
                    }
                    state.h
                }
            }
            Integration::Gmu { branches } => {
                let e = &encoded[0];
                let gate_in = tape.concat_channels(e)?;
                let (fused, z) = gmu_fuse(tape, &mut bind, &self.params, branches, e, gate_in)?;
                gates.push(z);
                fused
            }
            Integration::AttentiveGmu { cells, branches } => {
                if t_len == 1 {
                    // static: each modality attends its own frame, then gate
                    let a: Vec<ValueId> = encoded[0]
                        .iter()
                        .zip(cells)
                        .map(|(&e, cell)| alstm_static(tape, &mut bind, &self.params, cell, e))
                        .collect::<Result<Vec<_>>>()?;
                    let gate_in = tape.concat_channels(&a)?;
                    let (fused, z) =
                        gmu_fuse(tape, &mut bind, &self.params, branches, &a, gate_in)?;
                    gates.push(z);
                    fused
                } else {
                    // sequential: per-modality attentive recurrence, gate each step
                    let mut states: Vec<_> = (0..MODALITIES)
                        .map(|_| {
                            zero_state(tape, s[0], LSTM_HIDDEN, self.cfg.height, self.cfg.width)
                        })
                        .collect();
                    let mut fused = None;
                    for e_t in &encoded {
                        let mut a_t = Vec::with_capacity(MODALITIES);
                        for (m, (&e, cell)) in e_t.iter().zip(cells).enumerate() {
                            states[m] =
                                alstm_step(tape, &mut bind, &self.params, cell, e, states[m])?;
                            a_t.push(states[m].h);
                        }
                        let gate_in = tape.concat_channels(&a_t)?;
                        let (f, z) =
                            gmu_fuse(tape, &mut bind, &self.params, branches, &a_t, gate_in)?;
                        gates.push(z);
                        fused = Some(f);
                    }
                    fused.unwrap()
                }
            }
            Integration::LateGmu { cell, branches } => {
                let attended = if t_len == 1 {
                    let cat = tape.concat_channels(&encoded[0])?;
                    alstm_static(tape, &mut bind, &self.params, cell, cat)?
                } else {
                    let mut state =
                        zero_state(tape, s[0], cell.hidden, self.cfg.height, self.cfg.width);
                    for e_t in &encoded {
                        let cat = tape.concat_channels(e_t)?;
                        state = alstm_step(tape, &mut bind, &self.params, cell, cat, state)?;
                    }
                    state.h
                };
                // gate the no-longer-separable representation group-wise
                let inputs = vec![attended; MODALITIES];
                let (fused, z) =
                    gmu_fuse(tape, &mut bind, &self.params, branches, &inputs, attended)?;
                gates.push(z);
                fused
            }
            Integration::Rgmu { branches } => {
                let mut state = rgmu_zero_state(
                    tape, MODALITIES, s[0], GMU_HIDDEN, self.cfg.height, self.cfg.width,
                );
                let mut fused = None;
                for e_t in &encoded {
                    let gate_in = tape.concat_channels(e_t)?;
                    let (f, next, z) = rgmu_step(
                        tape, &mut bind, &self.params, branches, e_t, gate_in, &state,
                    )?;
                    state = next;
                    gates.push(z);
                    fused = Some(f);
                }
                fused.unwrap()
            }
        };

        let w = bind.bind(tape, &self.params, self.head_w);
        let b = bind.bind(tape, &self.params, self.head_b);
        let pred = tape.conv2d(feature, w, b, 0, 1)?;

        Ok(ForwardOutput {
            pred,
            dam_preds,
            gates,
            bindings: bind,
        })
    }
}
