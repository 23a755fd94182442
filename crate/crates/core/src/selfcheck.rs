//! Built-in gradient verification battery.
//!
//! Two layers: every differentiable operator against central finite
//! differences (1e-6 for linear ops, 1e-4 otherwise), and every integration
//! variant as a full graph (forward + both losses) probed at sampled input
//! and parameter coordinates.

use crate::error::Result;
use crate::fusion::{GaspModel, ModelConfig, Variant};
use crate::gradcheck::{check_op, CheckOpts, CheckReport};
use crate::losses::{loss_dam, loss_total, LossWeights};
use crate::ops::BatchNormStats;
use crate::optim::Bindings;
use crate::rng::Stream;
use crate::tape::Tape;
use crate::tensor::Tensor as TensorOf;

type Tensor = TensorOf<f64>;

pub struct NamedCheck {
    pub name: String,
    pub tolerance: f64,
    pub report: CheckReport,
}

impl NamedCheck {
    pub fn passed(&self) -> bool {
        self.report.passed(self.tolerance)
    }
}

fn rand(shape: &[usize], key: u64) -> Tensor {
    let mut s = Stream::keyed(0x0bac1e, &[key]);
    Tensor::randn(shape, 1.0, &mut s)
}

fn positive(shape: &[usize], key: u64) -> Tensor {
    rand(shape, key).map(|v| v.abs() + 0.05)
}

/// Gradient-check every operator. Linear ops are held to 1e-6, the rest to
/// 1e-4.
pub fn check_all_ops() -> Result<Vec<NamedCheck>> {
    let mut out = Vec::new();
    let opts = CheckOpts::default();
    let mut push = |name: &str, tol: f64, report: CheckReport| {
        out.push(NamedCheck {
            name: name.into(),
            tolerance: tol,
            report,
        });
    };

    // linear ops through a quadratic loss
    let x = rand(&[2, 3, 5, 5], 1);
    let w = rand(&[2, 3, 3, 3], 2).map(|v| v * 0.4);
    let b = rand(&[2], 3).map(|v| v * 0.1);
    push(
        "conv2d",
        1e-6,
        check_op(&[x, w, b], opts, |t, xs| {
            let y = t.conv2d(xs[0], xs[1], xs[2], 1, 1)?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        })?,
    );

    let x = rand(&[1, 2, 4, 4], 4);
    let w = rand(&[2, 3, 2, 2], 5).map(|v| v * 0.4);
    let b = rand(&[3], 6).map(|v| v * 0.1);
    push(
        "conv_transpose2d",
        1e-6,
        check_op(&[x, w, b], opts, |t, xs| {
            let y = t.conv_transpose2d(xs[0], xs[1], xs[2], 2, 0)?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        })?,
    );

    let x = Tensor::from_vec(
        &[2, 2, 4, 4],
        (0..64).map(|i| ((i * 37) % 64) as f64 * 0.17).collect(),
    )
    .unwrap();
    push(
        "maxpool2d",
        1e-6,
        check_op(&[x], opts, |t, xs| {
            let (y, _) = t.maxpool2d(xs[0])?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        })?,
    );

    let x = rand(&[2, 6], 7);
    let w = rand(&[4, 6], 8).map(|v| v * 0.3);
    let b = rand(&[4], 9).map(|v| v * 0.1);
    push(
        "linear",
        1e-6,
        check_op(&[x, w, b], opts, |t, xs| {
            let y = t.linear(xs[0], xs[1], xs[2])?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        })?,
    );

    push(
        "global_avg_pool",
        1e-6,
        check_op(&[rand(&[2, 3, 4, 4], 10)], opts, |t, xs| {
            let y = t.global_avg_pool(xs[0])?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        })?,
    );

    // pointwise nonlinearities
    for (name, key) in [("tanh", 11u64), ("sigmoid", 12), ("relu", 13)] {
        let x = rand(&[2, 4, 4, 4], key);
        push(
            name,
            1e-4,
            check_op(&[x], opts, move |t, xs| {
                let y = match name {
                    "tanh" => t.tanh(xs[0])?,
                    "sigmoid" => t.sigmoid(xs[0])?,
                    _ => t.relu(xs[0])?,
                };
                let sq = t.mul(y, y)?;
                t.sum_all(sq)
            })?,
        );
    }

    push(
        "softmax_spatial",
        1e-4,
        check_op(&[rand(&[2, 2, 4, 4], 14)], opts, |t, xs| {
            let y = t.softmax_spatial(xs[0])?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        })?,
    );

    push(
        "standardize_spatial",
        1e-4,
        check_op(&[rand(&[2, 2, 4, 4], 15)], opts, |t, xs| {
            let y = t.standardize_spatial(xs[0], 1e-8)?;
            let e = t.exp(y)?;
            t.mean_all(e)
        })?,
    );

    let x = rand(&[2, 2, 3, 2, 2], 16);
    let gamma = rand(&[3], 17).map(|v| v * 0.3 + 1.0);
    let beta = rand(&[3], 18).map(|v| v * 0.2);
    push(
        "batchnorm_temporal",
        1e-4,
        check_op(&[x, gamma, beta], opts, |t, xs| {
            let mut stats = BatchNormStats::new(3);
            let y = t.batchnorm_temporal(xs[0], xs[1], xs[2], &mut stats, true)?;
            let e = t.exp(y)?;
            t.mean_all(e)
        })?,
    );

    push(
        "scale_channels",
        1e-6,
        check_op(&[rand(&[2, 3, 3, 3], 19), rand(&[2, 3], 20)], opts, |t, xs| {
            let y = t.scale_channels(xs[0], xs[1])?;
            let sq = t.mul(y, y)?;
            t.sum_all(sq)
        })?,
    );

    // losses
    let fdm = positive(&[2, 1, 4, 4], 21);
    let pred = rand(&[2, 1, 4, 4], 22);
    let pts = vec![vec![(0usize, 1usize), (3, 2)], vec![(2, 2)]];
    let w = LossWeights::default();
    push(
        "loss_total",
        1e-4,
        check_op(&[pred], opts, move |t, xs| {
            Ok(loss_total(t, xs[0], &fdm, &pts, &w)?.total)
        })?,
    );

    let fdm = positive(&[1, 1, 4, 4], 23);
    let p0 = rand(&[1, 1, 2, 2], 24);
    push(
        "loss_dam",
        1e-4,
        check_op(&[p0], opts, move |t, xs| {
            loss_dam(t, &[xs[0]], &[fdm.clone()], &w)
        })?,
    );

    Ok(out)
}

/// Loss over a full variant graph, as trained: prediction loss plus the
/// attention-stream loss when the directed attention module is present.
fn graph_loss(
    tape: &mut Tape<f64>,
    model: &mut GaspModel,
    input_id: crate::tape::ValueId,
    fdm_final: &Tensor,
    points: &[Vec<(usize, usize)>],
    fdm_per_t: &[Tensor],
) -> Result<(crate::tape::ValueId, Bindings)> {
    let fwd = model.forward_node(tape, input_id, true)?;
    let weights = LossWeights::default();
    let main = loss_total(tape, fwd.pred, fdm_final, points, &weights)?;
    let mut total = main.total;
    if !fwd.dam_preds.is_empty() {
        let dam = loss_dam(tape, &fwd.dam_preds, fdm_per_t, &weights)?;
        total = tape.add(total, dam)?;
    }
    Ok((total, fwd.bindings))
}

/// Multi-scale central differences. A full graph holds tens of thousands of
/// piecewise-linear units, so at h = 1e-5 many probe windows straddle some
/// tiny slope change; a finite difference is only a derivative estimate at
/// coordinates where the loss is smooth across the whole window. Estimates
/// at h, h/2 and h/4 must agree pairwise, otherwise the coordinate is
/// re-drawn. A wrong backward still fails the check: at smooth coordinates
/// all scales agree with each other and disagree with the analytic value.
struct MultiScaleFd {
    h: f64,
}

impl MultiScaleFd {
    fn estimate(&self, mut eval_at: impl FnMut(f64) -> Result<f64>, x0: f64) -> Result<Option<f64>> {
        let h = self.h;
        let at_scale = |e: &mut dyn FnMut(f64) -> Result<f64>, s: f64| -> Result<f64> {
            Ok((e(x0 + s)? - e(x0 - s)?) / (2.0 * s))
        };
        let full = at_scale(&mut eval_at, h)?;
        let half = at_scale(&mut eval_at, h / 2.0)?;
        let quarter = at_scale(&mut eval_at, h / 4.0)?;
        let consistent = |a: f64, b: f64| {
            (a - b).abs() <= 1e-4 * a.abs().max(b.abs()).max(1e-3)
        };
        if consistent(full, half) && consistent(half, quarter) {
            Ok(Some(full))
        } else {
            Ok(None)
        }
    }
}

/// Finite-difference check of a full variant graph at 8x8 maps: input
/// coordinates plus sampled parameter coordinates (head, first encoder conv,
/// and the attention-stream conv when present).
pub fn check_variant_graph(
    variant: Variant,
    dam: bool,
    context: usize,
    coords_per_tensor: usize,
) -> Result<NamedCheck> {
    const H: usize = 8;
    const W: usize = 8;
    let cfg = ModelConfig {
        variant,
        context,
        dam,
        height: H,
        width: W,
    };
    let seed = 0xc4ec;
    let mut model = GaspModel::build(cfg, seed)?;
    let input = rand(&[1, context, 15, H, W], 31 + variant as u64);
    let fdm_final = positive(&[1, 1, H, W], 32);
    let points = vec![vec![(2usize, 3usize), (5, 6)]];
    let fdm_per_t: Vec<Tensor> = (0..context)
        .map(|t| positive(&[1, 1, H, W], 40 + t as u64))
        .collect();

    // analytic gradients for the input and all parameters
    let mut tape = Tape::new();
    let input_id = tape.leaf(input.clone(), true);
    let (loss, bindings) = graph_loss(
        &mut tape, &mut model, input_id, &fdm_final, &points, &fdm_per_t,
    )?;
    let grads = tape.backward(loss)?;
    let input_grad = grads
        .get(input_id)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(input.shape()));

    let eval = |model: &mut GaspModel, x: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let id = tape.constant(x.clone());
        let (loss, _) = graph_loss(&mut tape, model, id, &fdm_final, &points, &fdm_per_t)?;
        Ok(tape.value(loss).as_slice()[0])
    };

    let fd = MultiScaleFd { h: 1e-5 };
    let mut report = CheckReport {
        max_rel_err: 0.0,
        coords_checked: 0,
        worst: None,
    };
    let mut skipped = 0usize;
    let probe = |report: &mut CheckReport, analytic: f64, fd: f64, which: usize, ci: usize| {
        let denom = analytic.abs().max(fd.abs()).max(1e-3);
        let e = (analytic - fd).abs() / denom;
        report.coords_checked += 1;
        if e > report.max_rel_err {
            report.max_rel_err = e;
            report.worst = Some((which, ci, analytic, fd));
        }
    };

    // input coordinates: probe shuffled candidates until enough smooth ones
    let mut coords: Vec<usize> = (0..input.len()).collect();
    Stream::keyed(7, &[variant as u64]).shuffle(&mut coords);
    coords.truncate(coords_per_tensor * 8);
    let mut valid = 0usize;
    for &ci in &coords {
        if valid == coords_per_tensor {
            break;
        }
        let x0 = input.as_slice()[ci];
        let estimate = fd.estimate(
            |x| {
                let mut xp = input.clone();
                xp.make_mut()[ci] = x;
                eval(&mut model, &xp)
            },
            x0,
        )?;
        match estimate {
            Some(d) => {
                probe(&mut report, input_grad.as_slice()[ci], d, 0, ci);
                valid += 1;
            }
            None => skipped += 1,
        }
    }

    // sampled parameter coordinates
    let mut param_names = vec!["head.weight".to_string(), "encoder0.conv1.weight".into()];
    if dam {
        param_names.push("dam.inverted.conv.weight".into());
    }
    for (pi, name) in param_names.iter().enumerate() {
        let pid = model.params.id(name).expect("parameter exists");
        let node = bindings.node(pid).expect("parameter was bound");
        let analytic_grad = grads
            .get(node)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(model.params.value(pid).shape()));
        let base = model.params.value(pid).clone();
        let mut coords: Vec<usize> = (0..base.len()).collect();
        Stream::keyed(13, &[variant as u64, pi as u64]).shuffle(&mut coords);
        coords.truncate((coords_per_tensor * 8).min(base.len()));
        let mut valid = 0usize;
        for &ci in &coords {
            if valid == coords_per_tensor.min(base.len()) {
                break;
            }
            let x0 = base.as_slice()[ci];
            let estimate = fd.estimate(
                |x| {
                    let mut v = base.clone();
                    v.make_mut()[ci] = x;
                    model.params.set_value(pid, v)?;
                    eval(&mut model, &input)
                },
                x0,
            )?;
            model.params.set_value(pid, base.clone())?;
            match estimate {
                Some(d) => {
                    probe(&mut report, analytic_grad.as_slice()[ci], d, pi + 1, ci);
                    valid += 1;
                }
                None => skipped += 1,
            }
        }
    }

    // every probe straddling a kink would leave nothing verified
    if report.coords_checked == 0 {
        return Err(crate::error::Error::numeric(format!(
            "variant {}: all {skipped} probes straddled kinks, nothing verified",
            variant.name()
        )));
    }

    Ok(NamedCheck {
        name: format!(
            "graph {}{} ctx {context}",
            variant.name(),
            if dam { "+dam" } else { "" }
        ),
        tolerance: 1e-4,
        report,
    })
}

/// Every variant in every supported form, with and without directed
/// attention.
pub fn variant_graph_matrix() -> Vec<(Variant, bool, usize)> {
    let mut out = Vec::new();
    for variant in Variant::ALL {
        let contexts: &[usize] = if variant.is_sequential_only() {
            &[4]
        } else if variant.is_static_only() {
            &[1]
        } else {
            &[1, 4]
        };
        for &context in contexts {
            for dam in [false, true] {
                out.push((variant, dam, context));
            }
        }
    }
    out
}
