//! Composite training loss and the auxiliary attention loss, built as
//! differentiable graphs on the tape.

use crate::error::{Error, Result};
use crate::image::resize_bilinear;
use crate::metrics::Point;
use crate::scalar::Scalar;
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;

/// Loss weighting: cross-entropy 0.1, correlation 2, scanpath 1; the
/// attention-stream loss carries 0.5.
#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub ce: f64,
    pub cc: f64,
    pub nss: f64,
    pub dam: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            ce: 0.1,
            cc: 2.0,
            nss: 1.0,
            dam: 0.5,
        }
    }
}

impl LossWeights {
    /// Weighted sum of the three components.
    pub fn combine(&self, ce: f64, cc: f64, nss: f64) -> f64 {
        self.ce * ce + self.cc * cc + self.nss * nss
    }
}

/// Scalar loss node plus component values for reporting.
pub struct LossOutput {
    pub total: ValueId,
    pub ce: f64,
    pub cc: f64,
    /// None when every sample in the batch had no fixation points.
    pub nss: Option<f64>,
    pub nss_skipped: bool,
}

const VAR_EPS: f64 = 1e-12;

fn check_pred_fdm<S: Scalar>(pred_shape: &[usize], fdm: &Tensor<S>) -> Result<(usize, usize, usize)> {
    if pred_shape.len() != 4 || pred_shape[1] != 1 {
        return Err(Error::shape(format!(
            "loss: prediction must be [B,1,H,W], got {pred_shape:?}"
        )));
    }
    if fdm.shape() != pred_shape {
        return Err(Error::shape(format!(
            "loss: fdm shape {:?} != prediction {:?}",
            fdm.shape(),
            pred_shape
        )));
    }
    Ok((pred_shape[0], pred_shape[2], pred_shape[3]))
}

/// Per-sample normalized target distribution; errors on an all-zero map.
fn target_distribution<S: Scalar>(fdm: &Tensor<S>, b: usize, plane: usize) -> Result<Tensor<S>> {
    let mut q = fdm.to_vec();
    for (bi, chunk) in q.chunks_exact_mut(plane).enumerate() {
        if chunk.iter().any(|&v| v < S::zero()) {
            return Err(Error::numeric(format!(
                "loss: fdm sample {bi} has negative values"
            )));
        }
        let total: S = chunk.iter().copied().sum();
        if total <= S::zero() {
            return Err(Error::numeric(format!("loss: fdm sample {bi} is all zero")));
        }
        for v in chunk.iter_mut() {
            *v /= total;
        }
    }
    debug_assert_eq!(q.len(), b * plane);
    Tensor::from_vec(fdm.shape(), q)
}

/// Cross-entropy between softmaxed prediction and a normalized target,
/// meaned over the batch. Both are `[B,1,H,W]`; the target is constant.
fn cross_entropy<S: Scalar>(
    tape: &mut Tape<S>,
    pred: ValueId,
    q: &Tensor<S>,
) -> Result<ValueId> {
    let shape = tape.shape(pred).to_vec();
    let plane: usize = shape[2] * shape[3];
    let p = tape.softmax_spatial(pred)?;
    let logp = tape.ln(p)?;
    let qid = tape.constant(q.clone());
    let ql = tape.mul(qid, logp)?;
    let per_sample = tape.mean_per_sample(ql)?; // [B] of means
    let sums = tape.mul_scalar(per_sample, S::of(plane as f64))?;
    let mean = tape.mean_all(sums)?;
    tape.neg(mean)
}

/// The composite prediction loss: `w_ce * CE + w_cc * (1 - CC) + w_nss * (-NSS)`.
///
/// `points[b]` are sample b's fixation locations; samples without points are
/// skipped by the NSS term (flagged). An all-zero fdm sample is an error.
pub fn loss_total<S: Scalar>(
    tape: &mut Tape<S>,
    pred: ValueId,
    fdm: &Tensor<S>,
    points: &[Vec<Point>],
    w: &LossWeights,
) -> Result<LossOutput> {
    let (b, h, wd) = check_pred_fdm(tape.shape(pred), fdm)?;
    if points.len() != b {
        return Err(Error::shape(format!(
            "loss: {} point lists for batch {b}",
            points.len()
        )));
    }
    let plane = h * wd;
    let q = target_distribution(fdm, b, plane)?;

    // cross-entropy
    let ce = cross_entropy(tape, pred, &q)?;

    // shared per-sample moments of the prediction
    let shape = tape.shape(pred).to_vec();
    let p_mean = tape.mean_per_sample(pred)?;
    let p_mean_b = tape.broadcast_sample(p_mean, &shape)?;
    let pc = tape.sub(pred, p_mean_b)?;
    let pc_sq = tape.mul(pc, pc)?;
    let p_var = tape.mean_per_sample(pc_sq)?;

    // correlation term: 1 - mean_b cov / sqrt(pvar * qvar)
    let mut qc = fdm.to_vec();
    let mut q_var = vec![S::zero(); b];
    for (bi, chunk) in qc.chunks_exact_mut(plane).enumerate() {
        let mean = chunk.iter().copied().sum::<S>() / S::of(plane as f64);
        let mut var = S::zero();
        for v in chunk.iter_mut() {
            *v = *v - mean;
            var += *v * *v;
        }
        q_var[bi] = var / S::of(plane as f64);
        if q_var[bi] <= S::zero() {
            return Err(Error::numeric(format!(
                "loss: fdm sample {bi} is constant, correlation undefined"
            )));
        }
    }
    let qc = tape.constant(Tensor::from_vec(fdm.shape(), qc)?);
    let pq = tape.mul(pc, qc)?;
    let cov = tape.mean_per_sample(pq)?;
    let q_var = tape.constant(Tensor::from_vec(&[b], q_var)?);
    let var_prod = tape.mul(p_var, q_var)?;
    let var_prod = tape.add_scalar(var_prod, S::of(VAR_EPS * VAR_EPS))?;
    let denom = tape.sqrt(var_prod)?;
    let cc_vec = tape.div(cov, denom)?;
    let cc_mean = tape.mean_all(cc_vec)?;
    let neg_cc = tape.neg(cc_mean)?;
    let cc_loss = tape.add_scalar(neg_cc, S::one())?;

    // scanpath term: negative mean standardized value at the fixation points
    let n_with_points = points.iter().filter(|p| !p.is_empty()).count();
    let nss_skipped = n_with_points < b;
    let nss_loss = if n_with_points == 0 {
        None
    } else {
        let var_eps = tape.add_scalar(p_var, S::of(VAR_EPS))?;
        let std = tape.sqrt(var_eps)?;
        let std_b = tape.broadcast_sample(std, &shape)?;
        let z = tape.div(pc, std_b)?;
        let mut flat_pts = Vec::new();
        let mut weights = Vec::new();
        for (bi, pts) in points.iter().enumerate() {
            for &(y, x) in pts {
                if y >= h || x >= wd {
                    return Err(Error::shape(format!(
                        "loss: fixation ({y},{x}) outside {h}x{wd}"
                    )));
                }
                flat_pts.push((bi, y, x));
                weights.push(S::of(1.0 / (n_with_points as f64 * pts.len() as f64)));
            }
        }
        let gathered = tape.gather_points(z, &flat_pts)?;
        let wts = tape.constant(Tensor::from_vec(&[weights.len()], weights)?);
        let weighted = tape.mul(gathered, wts)?;
        let mean_nss = tape.sum_all(weighted)?;
        Some(tape.neg(mean_nss)?)
    };

    // weighted sum
    let ce_w = tape.mul_scalar(ce, S::of(w.ce))?;
    let cc_w = tape.mul_scalar(cc_loss, S::of(w.cc))?;
    let mut total = tape.add(ce_w, cc_w)?;
    if let Some(nl) = nss_loss {
        let nss_w = tape.mul_scalar(nl, S::of(w.nss))?;
        total = tape.add(total, nss_w)?;
    }

    let scalar_of = |tape: &Tape<S>, id: ValueId| tape.value(id).as_slice()[0].to_f64_lossy();
    Ok(LossOutput {
        total,
        ce: scalar_of(tape, ce),
        cc: scalar_of(tape, cc_loss),
        nss: nss_loss.map(|id| scalar_of(tape, id)),
        nss_skipped,
    })
}

/// Attention-stream loss: cross-entropy against the fdm at each timestep,
/// with the fdm resized to the stream's output resolution, summed over
/// timesteps and scaled by the stream weight.
///
/// `preds[t]` is `[B,1,h,w]`; `fdm_per_t[t]` is `[B,1,H,W]` at full
/// resolution.
pub fn loss_dam<S: Scalar>(
    tape: &mut Tape<S>,
    preds: &[ValueId],
    fdm_per_t: &[Tensor<S>],
    w: &LossWeights,
) -> Result<ValueId> {
    if preds.is_empty() || preds.len() != fdm_per_t.len() {
        return Err(Error::shape(format!(
            "loss_dam: {} predictions vs {} targets",
            preds.len(),
            fdm_per_t.len()
        )));
    }
    let mut total: Option<ValueId> = None;
    for (&p, fdm) in preds.iter().zip(fdm_per_t) {
        let ps = tape.shape(p).to_vec();
        if ps.len() != 4 || ps[1] != 1 {
            return Err(Error::shape(format!("loss_dam: prediction {ps:?}")));
        }
        let (b, h, wd) = (ps[0], ps[2], ps[3]);
        let fs = fdm.shape();
        if fs.len() != 4 || fs[0] != b || fs[1] != 1 {
            return Err(Error::shape(format!("loss_dam: fdm {fs:?}")));
        }
        // resize each sample's fdm to the stream resolution, renormalize
        let plane_in = fs[2] * fs[3];
        let mut small = Vec::with_capacity(b * h * wd);
        for bi in 0..b {
            let sample = Tensor::from_vec(
                &[fs[2], fs[3]],
                fdm.as_slice()[bi * plane_in..(bi + 1) * plane_in].to_vec(),
            )?;
            let r = resize_bilinear(&sample, h, wd)?;
            small.extend_from_slice(r.as_slice());
        }
        let small = Tensor::from_vec(&[b, 1, h, wd], small)?;
        let q = target_distribution(&small, b, h * wd)?;
        let ce = cross_entropy(tape, p, &q)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, ce)?,
            None => ce,
        });
    }
    tape.mul_scalar(total.unwrap(), S::of(w.dam))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_op, CheckOpts};
    use crate::rng::Stream;

    type T = Tensor<f64>;

    fn rand_map(shape: &[usize], key: u64, positive: bool) -> T {
        let mut s = Stream::keyed(0x10F5, &[key]);
        let t = T::randn(shape, 1.0, &mut s);
        if positive {
            t.map(|v| v.abs() + 0.05)
        } else {
            t
        }
    }

    #[test]
    fn weight_arithmetic() {
        let w = LossWeights::default();
        assert!((w.combine(1.0, 1.0, 1.0) - 3.1).abs() < 1e-12);
    }

    #[test]
    fn cc_term_vanishes_when_pred_proportional_to_fdm() {
        let fdm = rand_map(&[2, 1, 4, 4], 1, true);
        let pred_t = fdm.map(|v| 3.0 * v);
        let mut tape = Tape::<f64>::new();
        let pred = tape.leaf(pred_t, true);
        let pts = vec![vec![(1usize, 1usize)], vec![(2, 3)]];
        let out = loss_total(&mut tape, pred, &fdm, &pts, &LossWeights::default()).unwrap();
        assert!(out.cc.abs() < 1e-6, "cc loss {}", out.cc);
    }

    #[test]
    fn all_zero_fdm_is_an_error() {
        let fdm = T::zeros(&[1, 1, 3, 3]);
        let mut tape = Tape::<f64>::new();
        let pred = tape.leaf(rand_map(&[1, 1, 3, 3], 2, false), true);
        let r = loss_total(&mut tape, pred, &fdm, &[vec![(0, 0)]], &LossWeights::default());
        assert!(r.is_err());
    }

    #[test]
    fn empty_points_skip_nss_with_flag() {
        let fdm = rand_map(&[2, 1, 3, 3], 3, true);
        let mut tape = Tape::<f64>::new();
        let pred = tape.leaf(rand_map(&[2, 1, 3, 3], 4, false), true);
        let out = loss_total(
            &mut tape,
            pred,
            &fdm,
            &[vec![], vec![]],
            &LossWeights::default(),
        )
        .unwrap();
        assert!(out.nss.is_none());
        assert!(out.nss_skipped);

        let mut tape = Tape::<f64>::new();
        let pred = tape.leaf(rand_map(&[2, 1, 3, 3], 5, false), true);
        let out = loss_total(
            &mut tape,
            pred,
            &fdm,
            &[vec![(1, 1)], vec![]],
            &LossWeights::default(),
        )
        .unwrap();
        assert!(out.nss.is_some());
        assert!(out.nss_skipped);
    }

    #[test]
    fn loss_total_gradcheck() {
        let fdm = rand_map(&[2, 1, 4, 4], 6, true);
        let pred0 = rand_map(&[2, 1, 4, 4], 7, false);
        let pts = vec![vec![(0usize, 1usize), (3, 2)], vec![(2, 2)]];
        let w = LossWeights::default();
        let r = check_op(&[pred0], CheckOpts::default(), move |tape, xs| {
            Ok(loss_total(tape, xs[0], &fdm, &pts, &w)?.total)
        })
        .unwrap();
        assert!(r.passed(1e-4), "loss_total: max rel err {}", r.max_rel_err);
    }

    #[test]
    fn dam_loss_single_timestep_is_half_ce() {
        let fdm = rand_map(&[1, 1, 4, 4], 8, true);
        let pred_t = rand_map(&[1, 1, 2, 2], 9, false);
        let w = LossWeights::default();

        let mut tape = Tape::<f64>::new();
        let p = tape.leaf(pred_t.clone(), true);
        let dam = loss_dam(&mut tape, &[p], &[fdm.clone()], &w).unwrap();
        let dam_v = tape.value(dam).as_slice()[0];

        // plain CE against the same resized target
        let small = resize_bilinear(
            &T::from_vec(&[4, 4], fdm.to_vec()).unwrap(),
            2,
            2,
        )
        .unwrap();
        let small = T::from_vec(&[1, 1, 2, 2], small.to_vec()).unwrap();
        let q = target_distribution(&small, 1, 4).unwrap();
        let mut tape2 = Tape::<f64>::new();
        let p2 = tape2.leaf(pred_t, true);
        let ce = cross_entropy(&mut tape2, p2, &q).unwrap();
        let ce_v = tape2.value(ce).as_slice()[0];

        assert!((dam_v - 0.5 * ce_v).abs() < 1e-12);
    }

    #[test]
    fn dam_loss_sums_over_timesteps() {
        let fdm = rand_map(&[1, 1, 4, 4], 10, true);
        let pred_t = rand_map(&[1, 1, 2, 2], 11, false);
        let w = LossWeights::default();

        let mut tape = Tape::<f64>::new();
        let p = tape.leaf(pred_t.clone(), true);
        let one = loss_dam(&mut tape, &[p], &[fdm.clone()], &w).unwrap();
        let one_v = tape.value(one).as_slice()[0];

        let mut tape3 = Tape::<f64>::new();
        let p3 = tape3.leaf(pred_t, true);
        let three = loss_dam(
            &mut tape3,
            &[p3, p3, p3],
            &[fdm.clone(), fdm.clone(), fdm],
            &w,
        )
        .unwrap();
        let three_v = tape3.value(three).as_slice()[0];
        assert!((three_v - 3.0 * one_v).abs() < 1e-9);
    }

    #[test]
    fn dam_loss_gradcheck() {
        let fdm0 = rand_map(&[2, 1, 4, 4], 12, true);
        let fdm1 = rand_map(&[2, 1, 4, 4], 13, true);
        let p0 = rand_map(&[2, 1, 2, 2], 14, false);
        let p1 = rand_map(&[2, 1, 2, 2], 15, false);
        let w = LossWeights::default();
        let r = check_op(&[p0, p1], CheckOpts::default(), move |tape, xs| {
            loss_dam(tape, &[xs[0], xs[1]], &[fdm0.clone(), fdm1.clone()], &w)
        })
        .unwrap();
        assert!(r.passed(1e-4), "loss_dam: max rel err {}", r.max_rel_err);
    }
}
