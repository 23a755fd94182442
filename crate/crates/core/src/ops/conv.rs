//! Convolution family: conv2d, transposed conv2d, 2x2 max pooling.
//!
//! Convolutions run as im2col + GEMM per batch item, parallelized over the
//! batch. Gradient reductions over the batch are summed in index order so
//! results do not depend on thread scheduling.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::{matmul_nt_acc, matmul_tn, Scalar};
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;

/// Output spatial size of a convolution.
fn conv_out(h: usize, k: usize, pad: usize, stride: usize) -> usize {
    (h + 2 * pad - k) / stride + 1
}

/// Unfold `x[C,H,W]` into `col[(C*k*k), (ho*wo)]` for kernel/pad/stride.
#[allow(clippy::too_many_arguments)]
fn im2col<S: Scalar>(
    x: &[S],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    stride: usize,
    ho: usize,
    wo: usize,
    col: &mut [S],
) {
    debug_assert_eq!(col.len(), c * k * k * ho * wo);
    for v in col.iter_mut() {
        *v = S::zero();
    }
    for ci in 0..c {
        let x_plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((ci * k + ki) * k + kj) * (ho * wo);
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let x_row = &x_plane[iy as usize * w..(iy as usize + 1) * w];
                    let col_row = &mut col[row + oy * wo..row + (oy + 1) * wo];
                    if stride == 1 {
                        // contiguous span of valid ix
                        let ox_lo = (pad as isize - kj as isize).max(0) as usize;
                        let ox_hi = ((w + pad - kj) as isize).min(wo as isize).max(0) as usize;
                        if ox_lo < ox_hi {
                            let ix_lo = ox_lo + kj - pad;
                            col_row[ox_lo..ox_hi]
                                .copy_from_slice(&x_row[ix_lo..ix_lo + (ox_hi - ox_lo)]);
                        }
                    } else {
                        for (ox, cv) in col_row.iter_mut().enumerate() {
                            let ix = (ox * stride + kj) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                *cv = x_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Fold `col` back onto an image, accumulating overlaps (adjoint of im2col).
#[allow(clippy::too_many_arguments)]
fn col2im<S: Scalar>(
    col: &[S],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    stride: usize,
    ho: usize,
    wo: usize,
    x: &mut [S],
) {
    debug_assert_eq!(col.len(), c * k * k * ho * wo);
    debug_assert_eq!(x.len(), c * h * w);
    for ci in 0..c {
        let x_plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = ((ci * k + ki) * k + kj) * (ho * wo);
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let x_row = &mut x_plane[iy as usize * w..(iy as usize + 1) * w];
                    let col_row = &col[row + oy * wo..row + (oy + 1) * wo];
                    if stride == 1 {
                        let ox_lo = (pad as isize - kj as isize).max(0) as usize;
                        let ox_hi = ((w + pad - kj) as isize).min(wo as isize).max(0) as usize;
                        for ox in ox_lo..ox_hi {
                            x_row[ox + kj - pad] += col_row[ox];
                        }
                    } else {
                        for (ox, &cv) in col_row.iter().enumerate() {
                            let ix = (ox * stride + kj) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                x_row[ix as usize] += cv;
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<S: Scalar> Tape<S> {
    /// 2-D convolution: `x[B,Cin,H,W] (*) w[Cout,Cin,k,k] + b[Cout]`.
    pub fn conv2d(
        &mut self,
        x: ValueId,
        w: ValueId,
        b: ValueId,
        pad: usize,
        stride: usize,
    ) -> Result<ValueId> {
        let (vx, vw, vb) = (
            self.value(x).clone(),
            self.value(w).clone(),
            self.value(b).clone(),
        );
        let (sx, sw, sb) = (vx.shape(), vw.shape(), vb.shape());
        if sx.len() != 4 || sw.len() != 4 || sb.len() != 1 {
            return Err(Error::shape(format!("conv2d: x{sx:?} w{sw:?} b{sb:?}")));
        }
        let (bs, cin, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (cout, cin_w, k, k2) = (sw[0], sw[1], sw[2], sw[3]);
        if k != k2 || k == 0 {
            return Err(Error::shape(format!("conv2d: kernel must be square, got {k}x{k2}")));
        }
        if cin != cin_w || sb[0] != cout {
            return Err(Error::shape(format!(
                "conv2d: channel mismatch x{sx:?} w{sw:?} b{sb:?}"
            )));
        }
        if stride == 0 || h + 2 * pad < k || wd + 2 * pad < k {
            return Err(Error::shape(format!(
                "conv2d: invalid geometry h={h} w={wd} k={k} pad={pad} stride={stride}"
            )));
        }
        let ho = conv_out(h, k, pad, stride);
        let wo = conv_out(wd, k, pad, stride);
        let ck2 = cin * k * k;
        let plane_out = ho * wo;

        let mut out = vec![S::zero(); bs * cout * plane_out];
        out.par_chunks_exact_mut(cout * plane_out)
            .enumerate()
            .for_each(|(bi, out_b)| {
                let mut col = vec![S::zero(); ck2 * plane_out];
                let x_b = &vx.as_slice()[bi * cin * h * wd..(bi + 1) * cin * h * wd];
                im2col(x_b, cin, h, wd, k, pad, stride, ho, wo, &mut col);
                for (ci, chunk) in out_b.chunks_exact_mut(plane_out).enumerate() {
                    let bias = vb.as_slice()[ci];
                    for v in chunk.iter_mut() {
                        *v = bias;
                    }
                }
                unsafe {
                    S::gemm(
                        cout, ck2, plane_out,
                        S::one(),
                        vw.as_slice().as_ptr(), ck2 as isize, 1,
                        col.as_ptr(), plane_out as isize, 1,
                        S::one(),
                        out_b.as_mut_ptr(),
                    );
                }
            });

        let needs = self.parent_needs(&[x, w, b]);
        let out = Tensor::from_vec(&[bs, cout, ho, wo], out)?;
        self.push(
            "conv2d",
            out,
            vec![x, w, b],
            Box::new(move |g| {
                let gs = g.as_slice();
                // per-batch partials, reduced in batch order
                let partials: Vec<(Option<Vec<S>>, Option<Vec<S>>)> = (0..bs)
                    .into_par_iter()
                    .map(|bi| {
                        let g_b = &gs[bi * cout * plane_out..(bi + 1) * cout * plane_out];
                        let dx_b = needs[0].then(|| {
                            let mut dcol = vec![S::zero(); ck2 * plane_out];
                            matmul_tn(ck2, cout, plane_out, vw.as_slice(), g_b, &mut dcol);
                            let mut dx = vec![S::zero(); cin * h * wd];
                            col2im(&dcol, cin, h, wd, k, pad, stride, ho, wo, &mut dx);
                            dx
                        });
                        let dw_b = needs[1].then(|| {
                            let mut col = vec![S::zero(); ck2 * plane_out];
                            let x_b = &vx.as_slice()[bi * cin * h * wd..(bi + 1) * cin * h * wd];
                            im2col(x_b, cin, h, wd, k, pad, stride, ho, wo, &mut col);
                            let mut dw = vec![S::zero(); cout * ck2];
                            matmul_nt_acc(cout, plane_out, ck2, g_b, &col, &mut dw);
                            dw
                        });
                        (dx_b, dw_b)
                    })
                    .collect();

                let dx = needs[0].then(|| {
                    let mut dx = vec![S::zero(); bs * cin * h * wd];
                    for (bi, (dx_b, _)) in partials.iter().enumerate() {
                        dx[bi * cin * h * wd..(bi + 1) * cin * h * wd]
                            .copy_from_slice(dx_b.as_ref().unwrap());
                    }
                    Tensor::from_vec(&[bs, cin, h, wd], dx).unwrap()
                });
                let dw = needs[1].then(|| {
                    let mut dw = vec![S::zero(); cout * ck2];
                    for (_, dw_b) in &partials {
                        for (acc, &v) in dw.iter_mut().zip(dw_b.as_ref().unwrap()) {
                            *acc += v;
                        }
                    }
                    Tensor::from_vec(&[cout, cin, k, k], dw).unwrap()
                });
                let db = needs[2].then(|| {
                    let mut db = vec![S::zero(); cout];
                    for bi in 0..bs {
                        for ci in 0..cout {
                            let off = (bi * cout + ci) * plane_out;
                            db[ci] += gs[off..off + plane_out].iter().copied().sum();
                        }
                    }
                    Tensor::from_vec(&[cout], db).unwrap()
                });
                vec![dx, dw, db]
            }),
        )
    }

    /// Transposed 2-D convolution: `x[B,Cin,H,W]`, `w[Cin,Cout,k,k]`, `b[Cout]`.
    ///
    /// Output spatial size is `(H-1)*stride + k - 2*pad`.
    pub fn conv_transpose2d(
        &mut self,
        x: ValueId,
        w: ValueId,
        b: ValueId,
        stride: usize,
        pad: usize,
    ) -> Result<ValueId> {
        let (vx, vw, vb) = (
            self.value(x).clone(),
            self.value(w).clone(),
            self.value(b).clone(),
        );
        let (sx, sw, sb) = (vx.shape(), vw.shape(), vb.shape());
        if sx.len() != 4 || sw.len() != 4 || sb.len() != 1 {
            return Err(Error::shape(format!(
                "conv_transpose2d: x{sx:?} w{sw:?} b{sb:?}"
            )));
        }
        let (bs, cin, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let (cin_w, cout, k, k2) = (sw[0], sw[1], sw[2], sw[3]);
        if k != k2 || k == 0 || stride == 0 {
            return Err(Error::shape(format!(
                "conv_transpose2d: bad kernel/stride k={k}x{k2} stride={stride}"
            )));
        }
        if cin != cin_w || sb[0] != cout {
            return Err(Error::shape(format!(
                "conv_transpose2d: channel mismatch x{sx:?} w{sw:?} b{sb:?}"
            )));
        }
        let ho_i = ((h - 1) * stride + k) as isize - 2 * pad as isize;
        let wo_i = ((wd - 1) * stride + k) as isize - 2 * pad as isize;
        if ho_i <= 0 || wo_i <= 0 {
            return Err(Error::shape(format!(
                "conv_transpose2d: empty output for h={h} w={wd} k={k} pad={pad}"
            )));
        }
        let (ho, wo) = (ho_i as usize, wo_i as usize);
        let ck2 = cout * k * k;
        let plane_in = h * wd;
        let plane_out = ho * wo;

        let mut out = vec![S::zero(); bs * cout * plane_out];
        out.par_chunks_exact_mut(cout * plane_out)
            .enumerate()
            .for_each(|(bi, out_b)| {
                let x_b = &vx.as_slice()[bi * cin * plane_in..(bi + 1) * cin * plane_in];
                let mut tmp = vec![S::zero(); ck2 * plane_in];
                // tmp = W^T (Cout*k*k x Cin) * x_b (Cin x H*W)
                matmul_tn(ck2, cin, plane_in, vw.as_slice(), x_b, &mut tmp);
                col2im(&tmp, cout, ho, wo, k, pad, stride, h, wd, out_b);
                for (ci, chunk) in out_b.chunks_exact_mut(plane_out).enumerate() {
                    let bias = vb.as_slice()[ci];
                    for v in chunk.iter_mut() {
                        *v += bias;
                    }
                }
            });

        let needs = self.parent_needs(&[x, w, b]);
        let out = Tensor::from_vec(&[bs, cout, ho, wo], out)?;
        self.push(
            "conv_transpose2d",
            out,
            vec![x, w, b],
            Box::new(move |g| {
                let gs = g.as_slice();
                let partials: Vec<(Option<Vec<S>>, Option<Vec<S>>)> = (0..bs)
                    .into_par_iter()
                    .map(|bi| {
                        let g_b = &gs[bi * cout * plane_out..(bi + 1) * cout * plane_out];
                        let mut gcol = vec![S::zero(); ck2 * plane_in];
                        im2col(g_b, cout, ho, wo, k, pad, stride, h, wd, &mut gcol);
                        let dx_b = needs[0].then(|| {
                            let mut dx = vec![S::zero(); cin * plane_in];
                            // dx = W (Cin x Cout*k*k) * gcol
                            crate::scalar::matmul(cin, ck2, plane_in, vw.as_slice(), &gcol, &mut dx);
                            dx
                        });
                        let dw_b = needs[1].then(|| {
                            let x_b =
                                &vx.as_slice()[bi * cin * plane_in..(bi + 1) * cin * plane_in];
                            let mut dw = vec![S::zero(); cin * ck2];
                            matmul_nt_acc(cin, plane_in, ck2, x_b, &gcol, &mut dw);
                            dw
                        });
                        (dx_b, dw_b)
                    })
                    .collect();

                let dx = needs[0].then(|| {
                    let mut dx = vec![S::zero(); bs * cin * plane_in];
                    for (bi, (dx_b, _)) in partials.iter().enumerate() {
                        dx[bi * cin * plane_in..(bi + 1) * cin * plane_in]
                            .copy_from_slice(dx_b.as_ref().unwrap());
                    }
                    Tensor::from_vec(&[bs, cin, h, wd], dx).unwrap()
                });
                let dw = needs[1].then(|| {
                    let mut dw = vec![S::zero(); cin * ck2];
                    for (_, dw_b) in &partials {
                        for (acc, &v) in dw.iter_mut().zip(dw_b.as_ref().unwrap()) {
                            *acc += v;
                        }
                    }
                    Tensor::from_vec(&[cin, cout, k, k], dw).unwrap()
                });
                let db = needs[2].then(|| {
                    let mut db = vec![S::zero(); cout];
                    for bi in 0..bs {
                        for ci in 0..cout {
                            let off = (bi * cout + ci) * plane_out;
                            db[ci] += gs[off..off + plane_out].iter().copied().sum();
                        }
                    }
                    Tensor::from_vec(&[cout], db).unwrap()
                });
                vec![dx, dw, db]
            }),
        )
    }

    /// 2x2 max pooling with stride 2. Returns the pooled value and the flat
    /// input offsets of each winner; ties go to the first element in row-major
    /// scan order, so the backward routing is deterministic.
    pub fn maxpool2d(&mut self, x: ValueId) -> Result<(ValueId, Vec<usize>)> {
        let vx = self.value(x).clone();
        let s = vx.shape();
        if s.len() != 4 {
            return Err(Error::shape(format!("maxpool2d: {s:?}")));
        }
        let (bs, c, h, w) = (s[0], s[1], s[2], s[3]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(format!(
                "maxpool2d: spatial dims must be even, got {h}x{w}"
            )));
        }
        let (ho, wo) = (h / 2, w / 2);
        let xs = vx.as_slice();
        let mut out = vec![S::zero(); bs * c * ho * wo];
        let mut idx = vec![0usize; out.len()];
        for bc in 0..bs * c {
            let plane = &xs[bc * h * w..(bc + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let candidates = [
                        (2 * oy) * w + 2 * ox,
                        (2 * oy) * w + 2 * ox + 1,
                        (2 * oy + 1) * w + 2 * ox,
                        (2 * oy + 1) * w + 2 * ox + 1,
                    ];
                    let mut best = candidates[0];
                    for &cand in &candidates[1..] {
                        if plane[cand] > plane[best] {
                            best = cand;
                        }
                    }
                    let o = (bc * ho + oy) * wo + ox;
                    out[o] = plane[best];
                    idx[o] = bc * h * w + best;
                }
            }
        }
        let indices = idx.clone();
        let in_len = vx.len();
        let shape_in = s.to_vec();
        let id = self.push(
            "maxpool2d",
            Tensor::from_vec(&[bs, c, ho, wo], out)?,
            vec![x],
            Box::new(move |g| {
                let mut d = vec![S::zero(); in_len];
                for (&i, &gv) in idx.iter().zip(g.as_slice()) {
                    d[i] += gv;
                }
                vec![Some(Tensor::from_vec(&shape_in, d).unwrap())]
            }),
        )?;
        Ok((id, indices))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_op, CheckOpts};
    use crate::rng::Stream;

    fn rand_t(shape: &[usize], key: u64) -> Tensor<f64> {
        let mut s = Stream::keyed(0xC0FFEE, &[key]);
        Tensor::randn(shape, 1.0, &mut s)
    }

    #[test]
    fn conv2d_all_ones_overlap_counts() {
        // 3x3 ones (*) 3x3 ones, pad 1: center sees 9 taps, corners 4.
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let w = tape.constant(Tensor::ones(&[1, 1, 3, 3]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv2d(x, w, b, 1, 1).unwrap();
        let v = tape.value(y);
        assert_eq!(v.shape(), &[1, 1, 3, 3]);
        assert_eq!(v.at(&[0, 0, 1, 1]), 9.0);
        assert_eq!(v.at(&[0, 0, 0, 0]), 4.0);
        assert_eq!(v.at(&[0, 0, 0, 2]), 4.0);
        assert_eq!(v.at(&[0, 0, 2, 0]), 4.0);
        assert_eq!(v.at(&[0, 0, 2, 2]), 4.0);
        assert_eq!(v.at(&[0, 0, 0, 1]), 6.0);
    }

    #[test]
    fn conv2d_zero_weight_gives_bias() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(rand_t(&[2, 3, 4, 4], 1));
        let w = tape.constant(Tensor::zeros(&[2, 3, 3, 3]));
        let b = tape.constant(Tensor::from_vec(&[2], vec![0.7, -1.2]).unwrap());
        let y = tape.conv2d(x, w, b, 1, 1).unwrap();
        let v = tape.value(y);
        for bi in 0..2 {
            for (ci, expect) in [0.7, -1.2].iter().enumerate() {
                for i in 0..16 {
                    assert_eq!(v.at(&[bi, ci, i / 4, i % 4]), *expect);
                }
            }
        }
    }

    #[test]
    fn conv2d_rejects_bad_shapes() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let w = tape.constant(Tensor::zeros(&[1, 3, 3, 3])); // cin mismatch
        let b = tape.constant(Tensor::zeros(&[1]));
        assert!(tape.conv2d(x, w, b, 1, 1).is_err());
        let w5 = tape.constant(Tensor::zeros(&[1, 2, 7, 7])); // kernel larger than padded input
        assert!(tape.conv2d(x, w5, b, 1, 1).is_err());
    }

    #[test]
    fn conv2d_gradcheck_random() {
        let x = rand_t(&[2, 3, 5, 5], 2);
        let w = rand_t(&[2, 3, 3, 3], 3).map(|v| v * 0.4);
        let b = rand_t(&[2], 4).map(|v| v * 0.1);
        let r = check_op(&[x, w, b], CheckOpts::default(), |tape, xs| {
            let y = tape.conv2d(xs[0], xs[1], xs[2], 1, 1)?;
            let sq = tape.mul(y, y)?;
            tape.sum_all(sq)
        })
        .unwrap();
        assert!(r.passed(1e-6), "conv2d: max rel err {}", r.max_rel_err);
    }

    #[test]
    fn conv2d_gradcheck_stride_2() {
        let x = rand_t(&[1, 2, 6, 6], 21);
        let w = rand_t(&[3, 2, 3, 3], 22).map(|v| v * 0.4);
        let b = rand_t(&[3], 23).map(|v| v * 0.1);
        let r = check_op(&[x, w, b], CheckOpts::default(), |tape, xs| {
            let y = tape.conv2d(xs[0], xs[1], xs[2], 1, 2)?;
            let sq = tape.mul(y, y)?;
            tape.sum_all(sq)
        })
        .unwrap();
        assert!(r.passed(1e-6), "conv2d s2: max rel err {}", r.max_rel_err);
    }

    #[test]
    fn conv_transpose_identity_k1() {
        let mut tape = Tape::<f64>::new();
        let t = rand_t(&[1, 1, 3, 3], 5);
        let x = tape.constant(t.clone());
        let w = tape.constant(Tensor::ones(&[1, 1, 1, 1]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv_transpose2d(x, w, b, 1, 0).unwrap();
        assert_eq!(tape.value(y).as_slice(), t.as_slice());
    }

    #[test]
    fn conv_transpose_k2_s2_tiles_value() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_vec(&[1, 1, 1, 1], vec![3.5]).unwrap());
        let w = tape.constant(Tensor::ones(&[1, 1, 2, 2]));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv_transpose2d(x, w, b, 2, 0).unwrap();
        let v = tape.value(y);
        assert_eq!(v.shape(), &[1, 1, 2, 2]);
        assert!(v.as_slice().iter().all(|&e| e == 3.5));
    }

    #[test]
    fn conv_transpose_doubles_spatial_dims() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(rand_t(&[1, 4, 5, 5], 6));
        let w = tape.constant(rand_t(&[4, 2, 2, 2], 7));
        let b = tape.constant(Tensor::zeros(&[2]));
        let y = tape.conv_transpose2d(x, w, b, 2, 0).unwrap();
        assert_eq!(tape.shape(y), &[1, 2, 10, 10]);
    }

    #[test]
    fn conv_transpose_gradcheck_random() {
        let x = rand_t(&[2, 2, 3, 3], 8);
        let w = rand_t(&[2, 3, 2, 2], 9).map(|v| v * 0.4);
        let b = rand_t(&[3], 10).map(|v| v * 0.1);
        let r = check_op(&[x, w, b], CheckOpts::default(), |tape, xs| {
            let y = tape.conv_transpose2d(xs[0], xs[1], xs[2], 2, 0)?;
            let sq = tape.mul(y, y)?;
            tape.sum_all(sq)
        })
        .unwrap();
        assert!(r.passed(1e-6), "convT s2: max rel err {}", r.max_rel_err);

        let x = rand_t(&[1, 3, 4, 4], 11);
        let w = rand_t(&[3, 2, 3, 3], 12).map(|v| v * 0.4);
        let b = rand_t(&[2], 13).map(|v| v * 0.1);
        let r = check_op(&[x, w, b], CheckOpts::default(), |tape, xs| {
            let y = tape.conv_transpose2d(xs[0], xs[1], xs[2], 1, 1)?;
            let sq = tape.mul(y, y)?;
            tape.sum_all(sq)
        })
        .unwrap();
        assert!(r.passed(1e-6), "convT s1p1: max rel err {}", r.max_rel_err);
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(
            Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            true,
        );
        let (y, idx) = tape.maxpool2d(x).unwrap();
        assert_eq!(tape.value(y).as_slice(), &[4.0]);
        assert_eq!(idx, vec![3]);
        let loss = tape.sum_all(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().as_slice(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn maxpool_tie_goes_to_first_row_major() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::full(&[1, 1, 2, 2], 5.0), true);
        let (y, idx) = tape.maxpool2d(x).unwrap();
        assert_eq!(tape.value(y).as_slice(), &[5.0]);
        assert_eq!(idx, vec![0]);
        let loss = tape.sum_all(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().as_slice(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_rejects_odd_dims() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 3, 4]));
        assert!(tape.maxpool2d(x).is_err());
    }

    #[test]
    fn maxpool_gradcheck_random() {
        // draw from a grid with distinct values so FD does not cross a tie
        let mut s = Stream::keyed(99, &[0]);
        let data: Vec<f64> = (0..2 * 2 * 4 * 4).map(|_| s.uniform() * 10.0).collect();
        let x = Tensor::from_vec(&[2, 2, 4, 4], data).unwrap();
        let r = check_op(&[x], CheckOpts::default(), |tape, xs| {
            let (y, _) = tape.maxpool2d(xs[0])?;
            let sq = tape.mul(y, y)?;
            tape.sum_all(sq)
        })
        .unwrap();
        assert!(r.passed(1e-6), "maxpool: max rel err {}", r.max_rel_err);
    }
}
