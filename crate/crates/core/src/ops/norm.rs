//! Batch normalization over the temporal axis.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Running statistics for one batch-norm site, per channel.
#[derive(Clone, Debug)]
pub struct BatchNormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchNormStats {
    pub fn new(channels: usize) -> Self {
        BatchNormStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

impl<S: Scalar> Tape<S> {
    /// Normalize `x[B,T,C,H,W]` per channel over (B,T,H,W).
    ///
    /// Training mode uses batch statistics and updates `stats` with momentum
    /// 0.1; eval mode normalizes with the stored running statistics.
    pub fn batchnorm_temporal(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        stats: &mut BatchNormStats,
        training: bool,
    ) -> Result<ValueId> {
        let (vx, vg, vb) = (
            self.value(x).clone(),
            self.value(gamma).clone(),
            self.value(beta).clone(),
        );
        let s = vx.shape();
        if s.len() != 5 {
            return Err(Error::shape(format!("batchnorm_temporal: {s:?}")));
        }
        let (b, t, c, h, w) = (s[0], s[1], s[2], s[3], s[4]);
        if vg.shape() != [c] || vb.shape() != [c] || stats.mean.len() != c {
            return Err(Error::shape(format!(
                "batchnorm_temporal: channel mismatch c={c}, gamma {:?}, beta {:?}, stats {}",
                vg.shape(),
                vb.shape(),
                stats.mean.len()
            )));
        }
        let plane = h * w;
        let n = b * t * plane;
        let n_s = S::of(n as f64);
        let eps = S::of(BN_EPS);

        // channel reduction helper over the [B,T,C,H,W] layout
        let xs = vx.as_slice();
        let channel_fold = |f: &mut dyn FnMut(usize, S)| {
            for bt in 0..b * t {
                for ci in 0..c {
                    let off = (bt * c + ci) * plane;
                    for &v in &xs[off..off + plane] {
                        f(ci, v);
                    }
                }
            }
        };

        let (mean, var): (Vec<S>, Vec<S>) = if training {
            let mut mean = vec![S::zero(); c];
            channel_fold(&mut |ci, v| mean[ci] += v);
            for m in mean.iter_mut() {
                *m /= n_s;
            }
            let mut var = vec![S::zero(); c];
            channel_fold(&mut |ci, v| {
                let d = v - mean[ci];
                var[ci] += d * d;
            });
            for v in var.iter_mut() {
                *v /= n_s;
            }
            for ci in 0..c {
                stats.mean[ci] = (1.0 - BN_MOMENTUM) * stats.mean[ci]
                    + BN_MOMENTUM * mean[ci].to_f64_lossy();
                stats.var[ci] =
                    (1.0 - BN_MOMENTUM) * stats.var[ci] + BN_MOMENTUM * var[ci].to_f64_lossy();
            }
            (mean, var)
        } else {
            (
                stats.mean.iter().map(|&m| S::of(m)).collect(),
                stats.var.iter().map(|&v| S::of(v)).collect(),
            )
        };

        let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();

        let mut out = vec![S::zero(); vx.len()];
        let mut xhat = vec![S::zero(); vx.len()];
        for bt in 0..b * t {
            for ci in 0..c {
                let off = (bt * c + ci) * plane;
                let (g_c, b_c, m_c, is_c) = (
                    vg.as_slice()[ci],
                    vb.as_slice()[ci],
                    mean[ci],
                    inv_std[ci],
                );
                for i in off..off + plane {
                    let xh = (xs[i] - m_c) * is_c;
                    xhat[i] = xh;
                    out[i] = g_c * xh + b_c;
                }
            }
        }

        let needs = self.parent_needs(&[x, gamma, beta]);
        let xhat = Tensor::from_vec(s, xhat)?;
        let out = Tensor::from_vec(s, out)?;
        let shape = s.to_vec();
        self.push(
            "batchnorm_temporal",
            out,
            vec![x, gamma, beta],
            Box::new(move |g| {
                let gs = g.as_slice();
                let xh = xhat.as_slice();
                // per-channel sums of g and g*xhat
                let mut sum_g = vec![S::zero(); c];
                let mut sum_gx = vec![S::zero(); c];
                for bt in 0..b * t {
                    for ci in 0..c {
                        let off = (bt * c + ci) * plane;
                        for i in off..off + plane {
                            sum_g[ci] += gs[i];
                            sum_gx[ci] += gs[i] * xh[i];
                        }
                    }
                }
                let dx = needs[0].then(|| {
                    let mut d = vec![S::zero(); gs.len()];
                    for bt in 0..b * t {
                        for ci in 0..c {
                            let off = (bt * c + ci) * plane;
                            let scale = vg.as_slice()[ci] * inv_std[ci];
                            if training {
                                let mg = sum_g[ci] / n_s;
                                let mgx = sum_gx[ci] / n_s;
                                for i in off..off + plane {
                                    d[i] = scale * (gs[i] - mg - xh[i] * mgx);
                                }
                            } else {
                                for i in off..off + plane {
                                    d[i] = scale * gs[i];
                                }
                            }
                        }
                    }
                    Tensor::from_vec(&shape, d).unwrap()
                });
                let dg = needs[1].then(|| Tensor::from_vec(&[c], sum_gx.clone()).unwrap());
                let db = needs[2].then(|| Tensor::from_vec(&[c], sum_g.clone()).unwrap());
                vec![dx, dg, db]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_op, CheckOpts};
    use crate::rng::Stream;

    #[test]
    fn constant_input_yields_beta() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[2, 3, 2, 2, 2], 7.3));
        let gamma = tape.constant(Tensor::ones(&[2]));
        let beta = tape.constant(Tensor::from_vec(&[2], vec![0.4, -2.0]).unwrap());
        let mut stats = BatchNormStats::new(2);
        let y = tape
            .batchnorm_temporal(x, gamma, beta, &mut stats, true)
            .unwrap();
        let v = tape.value(y);
        for bt in 0..6 {
            for (ci, expect) in [0.4, -2.0].iter().enumerate() {
                for i in 0..4 {
                    let got = v.as_slice()[(bt * 2 + ci) * 4 + i];
                    assert!((got - expect).abs() < 1e-12, "got {got}");
                }
            }
        }
    }

    #[test]
    fn training_output_is_standardized_per_channel() {
        let mut s = Stream::keyed(5, &[1]);
        let x = Tensor::<f64>::randn(&[2, 3, 4, 3, 3], 2.0, &mut s).map(|v| v + 1.5);
        let mut tape = Tape::<f64>::new();
        let xid = tape.constant(x);
        let gamma = tape.constant(Tensor::ones(&[4]));
        let beta = tape.constant(Tensor::zeros(&[4]));
        let mut stats = BatchNormStats::new(4);
        let y = tape
            .batchnorm_temporal(xid, gamma, beta, &mut stats, true)
            .unwrap();
        let v = tape.value(y);
        // per channel over (B,T,H,W): mean 0, var ~= 1
        for ci in 0..4 {
            let mut vals = Vec::new();
            for bt in 0..6 {
                let off = (bt * 4 + ci) * 9;
                vals.extend_from_slice(&v.as_slice()[off..off + 9]);
            }
            let n = vals.len() as f64;
            let mean: f64 = vals.iter().sum::<f64>() / n;
            let var: f64 = vals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-12, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }

    #[test]
    fn running_stats_update_with_momentum() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[1, 1, 1, 2, 2], 10.0));
        let gamma = tape.constant(Tensor::ones(&[1]));
        let beta = tape.constant(Tensor::zeros(&[1]));
        let mut stats = BatchNormStats::new(1);
        tape.batchnorm_temporal(x, gamma, beta, &mut stats, true)
            .unwrap();
        // mean: 0.9*0 + 0.1*10 = 1.0 ; var: 0.9*1 + 0.1*0 = 0.9
        assert!((stats.mean[0] - 1.0).abs() < 1e-12);
        assert!((stats.var[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[1, 1, 1, 1, 2], 3.0));
        let gamma = tape.constant(Tensor::ones(&[1]));
        let beta = tape.constant(Tensor::zeros(&[1]));
        let mut stats = BatchNormStats {
            mean: vec![1.0],
            var: vec![4.0],
        };
        let y = tape
            .batchnorm_temporal(x, gamma, beta, &mut stats, false)
            .unwrap();
        let expect = (3.0 - 1.0) / (4.0f64 + 1e-5).sqrt();
        assert!((tape.value(y).as_slice()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn gradcheck_training_mode() {
        let mut s = Stream::keyed(5, &[2]);
        let x = Tensor::<f64>::randn(&[2, 2, 3, 2, 2], 1.0, &mut s);
        let gamma = Tensor::<f64>::randn(&[3], 0.5, &mut s).map(|v| v + 1.0);
        let beta = Tensor::<f64>::randn(&[3], 0.3, &mut s);
        let r = check_op(&[x, gamma, beta], CheckOpts::default(), |tape, xs| {
            let mut stats = BatchNormStats::new(3);
            let y = tape.batchnorm_temporal(xs[0], xs[1], xs[2], &mut stats, true)?;
            let e = tape.exp(y)?;
            tape.mean_all(e)
        })
        .unwrap();
        assert!(r.passed(1e-5), "bn train: max rel err {}", r.max_rel_err);
    }

    #[test]
    fn gradcheck_eval_mode() {
        let mut s = Stream::keyed(5, &[3]);
        let x = Tensor::<f64>::randn(&[1, 2, 2, 2, 2], 1.0, &mut s);
        let gamma = Tensor::<f64>::ones(&[2]);
        let beta = Tensor::<f64>::zeros(&[2]);
        let r = check_op(&[x, gamma, beta], CheckOpts::default(), |tape, xs| {
            let mut stats = BatchNormStats {
                mean: vec![0.2, -0.1],
                var: vec![1.5, 0.8],
            };
            let y = tape.batchnorm_temporal(xs[0], xs[1], xs[2], &mut stats, false)?;
            let sq = tape.mul(y, y)?;
            tape.sum_all(sq)
        })
        .unwrap();
        assert!(r.passed(1e-6), "bn eval: max rel err {}", r.max_rel_err);
    }
}
