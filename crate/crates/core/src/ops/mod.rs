//! Differentiable tensor operations, written as tape methods.
//!
//! Each op appends one node; the backward closure captures whatever forward
//! values it needs (tensors are cheap to clone, the buffer is shared).

mod conv;
mod norm;

pub use norm::BatchNormStats;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;

fn same_shape<S: Scalar>(op: &str, a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{op}: shape mismatch {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl<S: Scalar> Tape<S> {
    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (va, vb) = (self.value(a).clone(), self.value(b).clone());
        same_shape("add", &va, &vb)?;
        let out = va.zip(&vb, |x, y| x + y)?;
        let needs = self.parent_needs(&[a, b]);
        self.push(
            "add",
            out,
            vec![a, b],
            Box::new(move |g| {
                vec![
                    needs[0].then(|| g.clone()),
                    needs[1].then(|| g.clone()),
                ]
            }),
        )
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (va, vb) = (self.value(a).clone(), self.value(b).clone());
        same_shape("sub", &va, &vb)?;
        let out = va.zip(&vb, |x, y| x - y)?;
        let needs = self.parent_needs(&[a, b]);
        self.push(
            "sub",
            out,
            vec![a, b],
            Box::new(move |g| {
                vec![
                    needs[0].then(|| g.clone()),
                    needs[1].then(|| g.map(|x| -x)),
                ]
            }),
        )
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (va, vb) = (self.value(a).clone(), self.value(b).clone());
        same_shape("mul", &va, &vb)?;
        let out = va.zip(&vb, |x, y| x * y)?;
        let needs = self.parent_needs(&[a, b]);
        self.push(
            "mul",
            out,
            vec![a, b],
            Box::new(move |g| {
                vec![
                    needs[0].then(|| g.zip(&vb, |gi, y| gi * y).unwrap()),
                    needs[1].then(|| g.zip(&va, |gi, x| gi * x).unwrap()),
                ]
            }),
        )
    }

    pub fn div(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (va, vb) = (self.value(a).clone(), self.value(b).clone());
        same_shape("div", &va, &vb)?;
        let out = va.zip(&vb, |x, y| x / y)?;
        let needs = self.parent_needs(&[a, b]);
        self.push(
            "div",
            out,
            vec![a, b],
            Box::new(move |g| {
                vec![
                    needs[0].then(|| g.zip(&vb, |gi, y| gi / y).unwrap()),
                    needs[1].then(|| {
                        let mut d = g.zip(&va, |gi, x| gi * x).unwrap();
                        let db = d.make_mut();
                        for (di, &y) in db.iter_mut().zip(vb.as_slice()) {
                            *di = -*di / (y * y);
                        }
                        d
                    }),
                ]
            }),
        )
    }

    pub fn neg(&mut self, a: ValueId) -> Result<ValueId> {
        self.mul_scalar(a, -S::one())
    }

    pub fn add_scalar(&mut self, a: ValueId, c: S) -> Result<ValueId> {
        let out = self.value(a).map(|x| x + c);
        self.push("add_scalar", out, vec![a], Box::new(move |g| vec![Some(g.clone())]))
    }

    pub fn mul_scalar(&mut self, a: ValueId, c: S) -> Result<ValueId> {
        let out = self.value(a).map(|x| x * c);
        self.push(
            "mul_scalar",
            out,
            vec![a],
            Box::new(move |g| vec![Some(g.map(|x| x * c))]),
        )
    }

    pub fn tanh(&mut self, a: ValueId) -> Result<ValueId> {
        let out = self.value(a).map(|x| x.tanh());
        let y = out.clone();
        self.push(
            "tanh",
            out,
            vec![a],
            Box::new(move |g| vec![Some(g.zip(&y, |gi, yi| gi * (S::one() - yi * yi)).unwrap())]),
        )
    }

    pub fn sigmoid(&mut self, a: ValueId) -> Result<ValueId> {
        let out = self.value(a).map(|x| {
            let one = S::one();
            if x >= S::zero() {
                one / (one + (-x).exp())
            } else {
                let e = x.exp();
                e / (one + e)
            }
        });
        let y = out.clone();
        self.push(
            "sigmoid",
            out,
            vec![a],
            Box::new(move |g| vec![Some(g.zip(&y, |gi, yi| gi * yi * (S::one() - yi)).unwrap())]),
        )
    }

    pub fn relu(&mut self, a: ValueId) -> Result<ValueId> {
        let va = self.value(a).clone();
        let out = va.map(|x| x.max(S::zero()));
        self.push(
            "relu",
            out,
            vec![a],
            Box::new(move |g| {
                vec![Some(
                    g.zip(&va, |gi, x| if x > S::zero() { gi } else { S::zero() })
                        .unwrap(),
                )]
            }),
        )
    }

    pub fn ln(&mut self, a: ValueId) -> Result<ValueId> {
        let va = self.value(a).clone();
        let out = va.map(|x| x.ln());
        self.push(
            "ln",
            out,
            vec![a],
            Box::new(move |g| vec![Some(g.zip(&va, |gi, x| gi / x).unwrap())]),
        )
    }

    pub fn exp(&mut self, a: ValueId) -> Result<ValueId> {
        let out = self.value(a).map(|x| x.exp());
        let y = out.clone();
        self.push(
            "exp",
            out,
            vec![a],
            Box::new(move |g| vec![Some(g.zip(&y, |gi, yi| gi * yi).unwrap())]),
        )
    }

    pub fn sqrt(&mut self, a: ValueId) -> Result<ValueId> {
        let out = self.value(a).map(|x| x.sqrt());
        let y = out.clone();
        let half = S::of(0.5);
        self.push(
            "sqrt",
            out,
            vec![a],
            Box::new(move |g| vec![Some(g.zip(&y, |gi, yi| gi * half / yi).unwrap())]),
        )
    }

    pub fn sum_all(&mut self, a: ValueId) -> Result<ValueId> {
        let va = self.value(a).clone();
        let shape = va.shape().to_vec();
        let out = Tensor::scalar(va.sum());
        self.push(
            "sum_all",
            out,
            vec![a],
            Box::new(move |g| {
                let gv = g.as_slice()[0];
                vec![Some(Tensor::full(&shape, gv))]
            }),
        )
    }

    pub fn mean_all(&mut self, a: ValueId) -> Result<ValueId> {
        let n = self.value(a).len();
        let s = self.sum_all(a)?;
        self.mul_scalar(s, S::one() / S::of(n as f64))
    }

    /// Mean over every axis but the first: `[B, ...] -> [B]`.
    pub fn mean_per_sample(&mut self, a: ValueId) -> Result<ValueId> {
        let va = self.value(a).clone();
        if va.shape().is_empty() {
            return Err(Error::shape("mean_per_sample: rank-0 input"));
        }
        let b = va.shape()[0];
        let per: usize = va.shape()[1..].iter().product();
        if per == 0 {
            return Err(Error::shape("mean_per_sample: empty sample"));
        }
        let inv = S::one() / S::of(per as f64);
        let mut out = vec![S::zero(); b];
        for (i, chunk) in va.as_slice().chunks_exact(per).enumerate() {
            out[i] = chunk.iter().copied().sum::<S>() * inv;
        }
        let shape = va.shape().to_vec();
        self.push(
            "mean_per_sample",
            Tensor::from_vec(&[b], out)?,
            vec![a],
            Box::new(move |g| {
                let mut d = Tensor::zeros(&shape);
                let dd = d.make_mut();
                for (i, chunk) in dd.chunks_exact_mut(per).enumerate() {
                    let gv = g.as_slice()[i] * inv;
                    for v in chunk {
                        *v = gv;
                    }
                }
                vec![Some(d)]
            }),
        )
    }

    /// Broadcast `[B]` across a shape whose first axis is B.
    pub fn broadcast_sample(&mut self, v: ValueId, shape: &[usize]) -> Result<ValueId> {
        let vv = self.value(v).clone();
        if vv.shape().len() != 1 || shape.first() != Some(&vv.len()) {
            return Err(Error::shape(format!(
                "broadcast_sample: {:?} into {:?}",
                vv.shape(),
                shape
            )));
        }
        let b = vv.len();
        let per: usize = shape[1..].iter().product();
        let mut out = vec![S::zero(); b * per];
        for (i, chunk) in out.chunks_exact_mut(per).enumerate() {
            let val = vv.as_slice()[i];
            for x in chunk {
                *x = val;
            }
        }
        self.push(
            "broadcast_sample",
            Tensor::from_vec(shape, out)?,
            vec![v],
            Box::new(move |g| {
                let mut d = vec![S::zero(); b];
                for (i, chunk) in g.as_slice().chunks_exact(per).enumerate() {
                    d[i] = chunk.iter().copied().sum();
                }
                vec![Some(Tensor::from_vec(&[b], d).unwrap())]
            }),
        )
    }

    /// Broadcast a `[1]` scalar across an arbitrary shape.
    pub fn broadcast_scalar(&mut self, v: ValueId, shape: &[usize]) -> Result<ValueId> {
        let vv = self.value(v).clone();
        if vv.len() != 1 {
            return Err(Error::shape("broadcast_scalar: input must be [1]"));
        }
        let out = Tensor::full(shape, vv.as_slice()[0]);
        self.push(
            "broadcast_scalar",
            out,
            vec![v],
            Box::new(move |g| vec![Some(Tensor::scalar(g.sum()))]),
        )
    }

    /// Channel concatenation of `[B, C_i, H, W]` tensors.
    pub fn concat_channels(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        if parts.is_empty() {
            return Err(Error::shape("concat_channels: no inputs"));
        }
        let first = self.value(parts[0]).shape().to_vec();
        if first.len() != 4 {
            return Err(Error::shape("concat_channels: expected 4-D inputs"));
        }
        let (b, h, w) = (first[0], first[2], first[3]);
        let mut chans = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != 4 || s[0] != b || s[2] != h || s[3] != w {
                return Err(Error::shape(format!(
                    "concat_channels: incompatible shape {s:?}"
                )));
            }
            chans.push(s[1]);
        }
        let c_total: usize = chans.iter().sum();
        let plane = h * w;
        let mut out = vec![S::zero(); b * c_total * plane];
        let mut base_c = 0usize;
        for (&p, &c) in parts.iter().zip(&chans) {
            let src = self.value(p).as_slice();
            for bi in 0..b {
                let dst_off = (bi * c_total + base_c) * plane;
                let src_off = bi * c * plane;
                out[dst_off..dst_off + c * plane]
                    .copy_from_slice(&src[src_off..src_off + c * plane]);
            }
            base_c += c;
        }
        let needs = self.parent_needs(parts);
        let chans_bw = chans.clone();
        self.push(
            "concat_channels",
            Tensor::from_vec(&[b, c_total, h, w], out)?,
            parts.to_vec(),
            Box::new(move |g| {
                let gs = g.as_slice();
                let mut outs = Vec::with_capacity(chans_bw.len());
                let mut base_c = 0usize;
                for (i, &c) in chans_bw.iter().enumerate() {
                    if !needs[i] {
                        outs.push(None);
                        base_c += c;
                        continue;
                    }
                    let mut d = vec![S::zero(); b * c * plane];
                    for bi in 0..b {
                        let src_off = (bi * c_total + base_c) * plane;
                        let dst_off = bi * c * plane;
                        d[dst_off..dst_off + c * plane]
                            .copy_from_slice(&gs[src_off..src_off + c * plane]);
                    }
                    outs.push(Some(Tensor::from_vec(&[b, c, h, w], d).unwrap()));
                    base_c += c;
                }
                outs
            }),
        )
    }

    /// Channel slice `[B, C, H, W] -> [B, hi-lo, H, W]`.
    pub fn slice_channels(&mut self, a: ValueId, lo: usize, hi: usize) -> Result<ValueId> {
        let va = self.value(a).clone();
        let s = va.shape();
        if s.len() != 4 || lo >= hi || hi > s[1] {
            return Err(Error::shape(format!(
                "slice_channels: [{lo}, {hi}) of {s:?}"
            )));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let cs = hi - lo;
        let plane = h * w;
        let mut out = vec![S::zero(); b * cs * plane];
        for bi in 0..b {
            let src_off = (bi * c + lo) * plane;
            let dst_off = bi * cs * plane;
            out[dst_off..dst_off + cs * plane]
                .copy_from_slice(&va.as_slice()[src_off..src_off + cs * plane]);
        }
        self.push(
            "slice_channels",
            Tensor::from_vec(&[b, cs, h, w], out)?,
            vec![a],
            Box::new(move |g| {
                let mut d = Tensor::zeros(&[b, c, h, w]);
                let dd = d.make_mut();
                for bi in 0..b {
                    let dst_off = (bi * c + lo) * plane;
                    let src_off = bi * cs * plane;
                    dd[dst_off..dst_off + cs * plane]
                        .copy_from_slice(&g.as_slice()[src_off..src_off + cs * plane]);
                }
                vec![Some(d)]
            }),
        )
    }

    /// Time slice `[B, T, C, H, W] -> [B, C, H, W]`.
    pub fn select_time(&mut self, a: ValueId, t: usize) -> Result<ValueId> {
        let va = self.value(a).clone();
        let s = va.shape();
        if s.len() != 5 || t >= s[1] {
            return Err(Error::shape(format!("select_time: t={t} of {s:?}")));
        }
        let (b, tt, c, h, w) = (s[0], s[1], s[2], s[3], s[4]);
        let frame = c * h * w;
        let mut out = vec![S::zero(); b * frame];
        for bi in 0..b {
            let src_off = (bi * tt + t) * frame;
            out[bi * frame..(bi + 1) * frame]
                .copy_from_slice(&va.as_slice()[src_off..src_off + frame]);
        }
        self.push(
            "select_time",
            Tensor::from_vec(&[b, c, h, w], out)?,
            vec![a],
            Box::new(move |g| {
                let mut d = Tensor::zeros(&[b, tt, c, h, w]);
                let dd = d.make_mut();
                for bi in 0..b {
                    let dst_off = (bi * tt + t) * frame;
                    dd[dst_off..dst_off + frame]
                        .copy_from_slice(&g.as_slice()[bi * frame..(bi + 1) * frame]);
                }
                vec![Some(d)]
            }),
        )
    }

    /// Stack T frames `[B, C, H, W]` into `[B, T, C, H, W]`.
    pub fn stack_time(&mut self, frames: &[ValueId]) -> Result<ValueId> {
        if frames.is_empty() {
            return Err(Error::shape("stack_time: no frames"));
        }
        let s0 = self.value(frames[0]).shape().to_vec();
        if s0.len() != 4 {
            return Err(Error::shape("stack_time: expected 4-D frames"));
        }
        for &f in frames {
            if self.value(f).shape() != s0.as_slice() {
                return Err(Error::shape("stack_time: frame shapes differ"));
            }
        }
        let (b, c, h, w) = (s0[0], s0[1], s0[2], s0[3]);
        let t = frames.len();
        let frame = c * h * w;
        let mut out = vec![S::zero(); b * t * frame];
        for (ti, &f) in frames.iter().enumerate() {
            let src = self.value(f).as_slice();
            for bi in 0..b {
                let dst_off = (bi * t + ti) * frame;
                out[dst_off..dst_off + frame]
                    .copy_from_slice(&src[bi * frame..(bi + 1) * frame]);
            }
        }
        let needs = self.parent_needs(frames);
        self.push(
            "stack_time",
            Tensor::from_vec(&[b, t, c, h, w], out)?,
            frames.to_vec(),
            Box::new(move |g| {
                let gs = g.as_slice();
                (0..t)
                    .map(|ti| {
                        if !needs[ti] {
                            return None;
                        }
                        let mut d = vec![S::zero(); b * frame];
                        for bi in 0..b {
                            let src_off = (bi * t + ti) * frame;
                            d[bi * frame..(bi + 1) * frame]
                                .copy_from_slice(&gs[src_off..src_off + frame]);
                        }
                        Some(Tensor::from_vec(&[b, c, h, w], d).unwrap())
                    })
                    .collect()
            }),
        )
    }

    /// Gather single-channel map values at (sample, row, col) points: `[B,1,H,W] -> [K]`.
    pub fn gather_points(&mut self, a: ValueId, points: &[(usize, usize, usize)]) -> Result<ValueId> {
        let va = self.value(a).clone();
        let s = va.shape();
        if s.len() != 4 || s[1] != 1 {
            return Err(Error::shape(format!(
                "gather_points: expected [B,1,H,W], got {s:?}"
            )));
        }
        let (b, h, w) = (s[0], s[2], s[3]);
        let mut out = Vec::with_capacity(points.len());
        for &(bi, y, x) in points {
            if bi >= b || y >= h || x >= w {
                return Err(Error::shape(format!(
                    "gather_points: point ({bi},{y},{x}) outside [{b},{h},{w}]"
                )));
            }
            out.push(va.as_slice()[(bi * h + y) * w + x]);
        }
        let pts = points.to_vec();
        let shape = s.to_vec();
        self.push(
            "gather_points",
            Tensor::from_vec(&[points.len()], out)?,
            vec![a],
            Box::new(move |g| {
                let mut d = Tensor::zeros(&shape);
                let dd = d.make_mut();
                for (&(bi, y, x), &gv) in pts.iter().zip(g.as_slice()) {
                    dd[(bi * h + y) * w + x] += gv;
                }
                vec![Some(d)]
            }),
        )
    }

    /// Dense layer: `x[B,N] . w[M,N]^T + b[M] -> [B,M]`.
    pub fn linear(&mut self, x: ValueId, w: ValueId, b: ValueId) -> Result<ValueId> {
        let (vx, vw, vb) = (
            self.value(x).clone(),
            self.value(w).clone(),
            self.value(b).clone(),
        );
        let (sx, sw, sb) = (vx.shape(), vw.shape(), vb.shape());
        if sx.len() != 2 || sw.len() != 2 || sb.len() != 1 || sx[1] != sw[1] || sw[0] != sb[0] {
            return Err(Error::shape(format!(
                "linear: x{sx:?} w{sw:?} b{sb:?}"
            )));
        }
        let (bs, n, m) = (sx[0], sx[1], sw[0]);
        let mut out = vec![S::zero(); bs * m];
        // y[b,m] = sum_n x[b,n] w[m,n]
        for bi in 0..bs {
            let xr = &vx.as_slice()[bi * n..(bi + 1) * n];
            for mi in 0..m {
                let wr = &vw.as_slice()[mi * n..(mi + 1) * n];
                let mut acc = vb.as_slice()[mi];
                for (xi, wi) in xr.iter().zip(wr) {
                    acc += *xi * *wi;
                }
                out[bi * m + mi] = acc;
            }
        }
        let needs = self.parent_needs(&[x, w, b]);
        self.push(
            "linear",
            Tensor::from_vec(&[bs, m], out)?,
            vec![x, w, b],
            Box::new(move |g| {
                let gs = g.as_slice();
                let dx = needs[0].then(|| {
                    let mut d = vec![S::zero(); bs * n];
                    for bi in 0..bs {
                        for mi in 0..m {
                            let gv = gs[bi * m + mi];
                            let wr = &vw.as_slice()[mi * n..(mi + 1) * n];
                            for (di, wi) in d[bi * n..(bi + 1) * n].iter_mut().zip(wr) {
                                *di += gv * *wi;
                            }
                        }
                    }
                    Tensor::from_vec(&[bs, n], d).unwrap()
                });
                let dw = needs[1].then(|| {
                    let mut d = vec![S::zero(); m * n];
                    for bi in 0..bs {
                        let xr = &vx.as_slice()[bi * n..(bi + 1) * n];
                        for mi in 0..m {
                            let gv = gs[bi * m + mi];
                            for (di, xi) in d[mi * n..(mi + 1) * n].iter_mut().zip(xr) {
                                *di += gv * *xi;
                            }
                        }
                    }
                    Tensor::from_vec(&[m, n], d).unwrap()
                });
                let db = needs[2].then(|| {
                    let mut d = vec![S::zero(); m];
                    for bi in 0..bs {
                        for mi in 0..m {
                            d[mi] += gs[bi * m + mi];
                        }
                    }
                    Tensor::from_vec(&[m], d).unwrap()
                });
                vec![dx, dw, db]
            }),
        )
    }

    /// Global average pool `[B,C,H,W] -> [B,C]`.
    pub fn global_avg_pool(&mut self, a: ValueId) -> Result<ValueId> {
        let va = self.value(a).clone();
        let s = va.shape();
        if s.len() != 4 {
            return Err(Error::shape(format!("global_avg_pool: {s:?}")));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let plane = h * w;
        let inv = S::one() / S::of(plane as f64);
        let mut out = vec![S::zero(); b * c];
        for (i, chunk) in va.as_slice().chunks_exact(plane).enumerate() {
            out[i] = chunk.iter().copied().sum::<S>() * inv;
        }
        self.push(
            "global_avg_pool",
            Tensor::from_vec(&[b, c], out)?,
            vec![a],
            Box::new(move |g| {
                let mut d = Tensor::zeros(&[b, c, h, w]);
                let dd = d.make_mut();
                for (i, chunk) in dd.chunks_exact_mut(plane).enumerate() {
                    let gv = g.as_slice()[i] * inv;
                    for v in chunk {
                        *v = gv;
                    }
                }
                vec![Some(d)]
            }),
        )
    }

    /// Per-channel scaling: `x[B,C,H,W] * s[B,C]`.
    pub fn scale_channels(&mut self, x: ValueId, sc: ValueId) -> Result<ValueId> {
        let (vx, vs) = (self.value(x).clone(), self.value(sc).clone());
        let (sx, ss) = (vx.shape(), vs.shape());
        if sx.len() != 4 || ss.len() != 2 || ss[0] != sx[0] || ss[1] != sx[1] {
            return Err(Error::shape(format!("scale_channels: x{sx:?} s{ss:?}")));
        }
        let (b, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let plane = h * w;
        let mut out = vec![S::zero(); vx.len()];
        for (i, (chunk, o)) in vx
            .as_slice()
            .chunks_exact(plane)
            .zip(out.chunks_exact_mut(plane))
            .enumerate()
        {
            let s_val = vs.as_slice()[i];
            for (oi, &xi) in o.iter_mut().zip(chunk) {
                *oi = xi * s_val;
            }
        }
        let needs = self.parent_needs(&[x, sc]);
        self.push(
            "scale_channels",
            Tensor::from_vec(&[b, c, h, w], out)?,
            vec![x, sc],
            Box::new(move |g| {
                let gs = g.as_slice();
                let dx = needs[0].then(|| {
                    let mut d = vec![S::zero(); gs.len()];
                    for (i, (chunk, o)) in gs
                        .chunks_exact(plane)
                        .zip(d.chunks_exact_mut(plane))
                        .enumerate()
                    {
                        let s_val = vs.as_slice()[i];
                        for (oi, &gi) in o.iter_mut().zip(chunk) {
                            *oi = gi * s_val;
                        }
                    }
                    Tensor::from_vec(&[b, c, h, w], d).unwrap()
                });
                let ds = needs[1].then(|| {
                    let mut d = vec![S::zero(); b * c];
                    for (i, (gc, xc)) in gs
                        .chunks_exact(plane)
                        .zip(vx.as_slice().chunks_exact(plane))
                        .enumerate()
                    {
                        d[i] = gc.iter().zip(xc).map(|(&gi, &xi)| gi * xi).sum();
                    }
                    Tensor::from_vec(&[b, c], d).unwrap()
                });
                vec![dx, ds]
            }),
        )
    }

    /// Position-wise scaling across channels: `x[B,C,H,W] * a[B,1,H,W]`.
    pub fn mul_spatial(&mut self, x: ValueId, a: ValueId) -> Result<ValueId> {
        let (vx, va) = (self.value(x).clone(), self.value(a).clone());
        let (sx, sa) = (vx.shape(), va.shape());
        if sx.len() != 4
            || sa.len() != 4
            || sa[1] != 1
            || sa[0] != sx[0]
            || sa[2] != sx[2]
            || sa[3] != sx[3]
        {
            return Err(Error::shape(format!("mul_spatial: x{sx:?} a{sa:?}")));
        }
        let (b, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let plane = h * w;
        let mut out = vec![S::zero(); vx.len()];
        for bi in 0..b {
            let amap = &va.as_slice()[bi * plane..(bi + 1) * plane];
            for ci in 0..c {
                let off = (bi * c + ci) * plane;
                for i in 0..plane {
                    out[off + i] = vx.as_slice()[off + i] * amap[i];
                }
            }
        }
        let needs = self.parent_needs(&[x, a]);
        self.push(
            "mul_spatial",
            Tensor::from_vec(&[b, c, h, w], out)?,
            vec![x, a],
            Box::new(move |g| {
                let gs = g.as_slice();
                let dx = needs[0].then(|| {
                    let mut d = vec![S::zero(); gs.len()];
                    for bi in 0..b {
                        let amap = &va.as_slice()[bi * plane..(bi + 1) * plane];
                        for ci in 0..c {
                            let off = (bi * c + ci) * plane;
                            for i in 0..plane {
                                d[off + i] = gs[off + i] * amap[i];
                            }
                        }
                    }
                    Tensor::from_vec(&[b, c, h, w], d).unwrap()
                });
                let da = needs[1].then(|| {
                    let mut d = vec![S::zero(); b * plane];
                    for bi in 0..b {
                        for ci in 0..c {
                            let off = (bi * c + ci) * plane;
                            for i in 0..plane {
                                d[bi * plane + i] += gs[off + i] * vx.as_slice()[off + i];
                            }
                        }
                    }
                    Tensor::from_vec(&[b, 1, h, w], d).unwrap()
                });
                vec![dx, da]
            }),
        )
    }

    /// Mean over channels: `[B,C,H,W] -> [B,1,H,W]`.
    pub fn mean_channels(&mut self, a: ValueId) -> Result<ValueId> {
        let va = self.value(a).clone();
        let s = va.shape();
        if s.len() != 4 {
            return Err(Error::shape(format!("mean_channels: {s:?}")));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let plane = h * w;
        let inv = S::one() / S::of(c as f64);
        let mut out = vec![S::zero(); b * plane];
        for bi in 0..b {
            for ci in 0..c {
                let off = (bi * c + ci) * plane;
                for i in 0..plane {
                    out[bi * plane + i] += va.as_slice()[off + i];
                }
            }
            for i in 0..plane {
                out[bi * plane + i] *= inv;
            }
        }
        self.push(
            "mean_channels",
            Tensor::from_vec(&[b, 1, h, w], out)?,
            vec![a],
            Box::new(move |g| {
                let mut d = Tensor::zeros(&[b, c, h, w]);
                let dd = d.make_mut();
                for bi in 0..b {
                    let gmap = &g.as_slice()[bi * plane..(bi + 1) * plane];
                    for ci in 0..c {
                        let off = (bi * c + ci) * plane;
                        for i in 0..plane {
                            dd[off + i] = gmap[i] * inv;
                        }
                    }
                }
                vec![Some(d)]
            }),
        )
    }

    /// Softmax over the last two axes, independently per leading slice.
    ///
    /// Stabilized with max subtraction; each H*W slice sums to 1.
    pub fn softmax_spatial(&mut self, a: ValueId) -> Result<ValueId> {
        let va = self.value(a).clone();
        let s = va.shape();
        if s.len() < 2 {
            return Err(Error::shape(format!("softmax_spatial: {s:?}")));
        }
        let plane = s[s.len() - 2] * s[s.len() - 1];
        let mut out = vec![S::zero(); va.len()];
        for (chunk, o) in va
            .as_slice()
            .chunks_exact(plane)
            .zip(out.chunks_exact_mut(plane))
        {
            let mx = chunk.iter().copied().fold(S::neg_infinity(), S::max);
            let mut total = S::zero();
            for (oi, &xi) in o.iter_mut().zip(chunk) {
                let e = (xi - mx).exp();
                *oi = e;
                total += e;
            }
            for oi in o.iter_mut() {
                *oi /= total;
            }
        }
        let out = Tensor::from_vec(s, out)?;
        let y = out.clone();
        self.push(
            "softmax_spatial",
            out,
            vec![a],
            Box::new(move |g| {
                let mut d = vec![S::zero(); g.len()];
                for ((gc, yc), dc) in g
                    .as_slice()
                    .chunks_exact(plane)
                    .zip(y.as_slice().chunks_exact(plane))
                    .zip(d.chunks_exact_mut(plane))
                {
                    let dot: S = gc.iter().zip(yc).map(|(&gi, &yi)| gi * yi).sum();
                    for ((di, &gi), &yi) in dc.iter_mut().zip(gc).zip(yc) {
                        *di = yi * (gi - dot);
                    }
                }
                vec![Some(Tensor::from_vec(y.shape(), d).unwrap())]
            }),
        )
    }

    /// Standardize each H*W slice to mean 0 / std 1 (population, eps-guarded).
    pub fn standardize_spatial(&mut self, a: ValueId, eps: f64) -> Result<ValueId> {
        let va = self.value(a).clone();
        let s = va.shape();
        if s.len() < 2 {
            return Err(Error::shape(format!("standardize_spatial: {s:?}")));
        }
        let plane = s[s.len() - 2] * s[s.len() - 1];
        let n = S::of(plane as f64);
        let epss = S::of(eps);
        let mut out = vec![S::zero(); va.len()];
        let mut inv_stds = Vec::with_capacity(va.len() / plane);
        for (chunk, o) in va
            .as_slice()
            .chunks_exact(plane)
            .zip(out.chunks_exact_mut(plane))
        {
            let mean = chunk.iter().copied().sum::<S>() / n;
            let var = chunk.iter().map(|&x| (x - mean) * (x - mean)).sum::<S>() / n;
            let inv_std = S::one() / (var + epss).sqrt();
            inv_stds.push(inv_std);
            for (oi, &xi) in o.iter_mut().zip(chunk) {
                *oi = (xi - mean) * inv_std;
            }
        }
        let out = Tensor::from_vec(s, out)?;
        let xhat = out.clone();
        self.push(
            "standardize_spatial",
            out,
            vec![a],
            Box::new(move |g| {
                let mut d = vec![S::zero(); g.len()];
                for (si, ((gc, xc), dc)) in g
                    .as_slice()
                    .chunks_exact(plane)
                    .zip(xhat.as_slice().chunks_exact(plane))
                    .zip(d.chunks_exact_mut(plane))
                    .enumerate()
                {
                    let inv_std = inv_stds[si];
                    let gmean = gc.iter().copied().sum::<S>() / n;
                    let gxmean: S = gc.iter().zip(xc).map(|(&gi, &xi)| gi * xi).sum::<S>() / n;
                    for ((di, &gi), &xi) in dc.iter_mut().zip(gc).zip(xc) {
                        *di = inv_std * (gi - gmean - xi * gxmean);
                    }
                }
                vec![Some(Tensor::from_vec(xhat.shape(), d).unwrap())]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_op, CheckOpts};
    use crate::rng::Stream;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn softmax_output_is_a_distribution(vals in proptest::collection::vec(-30.0f64..30.0, 12)) {
            let mut tape = Tape::<f64>::new();
            let x = tape.constant(Tensor::from_vec(&[1, 1, 3, 4], vals).unwrap());
            let y = tape.softmax_spatial(x).unwrap();
            let v = tape.value(y);
            prop_assert!(v.iter().all(|&p| p >= 0.0));
            let total: f64 = v.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }

    fn rand_t(shape: &[usize], key: u64) -> Tensor<f64> {
        let mut s = Stream::keyed(0xA11CE, &[key]);
        Tensor::randn(shape, 1.0, &mut s)
    }

    #[test]
    fn softmax_uniform_slice_is_quarter() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[1, 1, 2, 2], 3.7));
        let y = tape.softmax_spatial(x).unwrap();
        for &v in tape.value(y).as_slice() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_dominant_cell_takes_all() {
        let mut tape = Tape::<f64>::new();
        let mut d = vec![0.0; 16];
        d[5] = 1e3;
        let x = tape.constant(Tensor::from_vec(&[1, 1, 4, 4], d).unwrap());
        let y = tape.softmax_spatial(x).unwrap();
        assert!((tape.value(y).as_slice()[5] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_slices_sum_to_one() {
        let t = rand_t(&[2, 3, 4, 4], 11);
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t);
        let y = tape.softmax_spatial(x).unwrap();
        for chunk in tape.value(y).as_slice().chunks_exact(16) {
            let s: f64 = chunk.iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "sum {s}");
            assert!(chunk.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn elementwise_ops_pass_gradcheck() {
        let a = rand_t(&[2, 3], 1);
        let b = rand_t(&[2, 3], 2).map(|x| x + 4.0); // keep away from 0 for div
        for op in ["add", "sub", "mul", "div"] {
            let r = check_op(
                &[a.clone(), b.clone()],
                CheckOpts::default(),
                move |tape, xs| {
                    let y = match op {
                        "add" => tape.add(xs[0], xs[1])?,
                        "sub" => tape.sub(xs[0], xs[1])?,
                        "mul" => tape.mul(xs[0], xs[1])?,
                        _ => tape.div(xs[0], xs[1])?,
                    };
                    tape.sum_all(y)
                },
            )
            .unwrap();
            assert!(r.passed(1e-6), "{op}: max rel err {}", r.max_rel_err);
        }
    }

    #[test]
    fn pointwise_ops_pass_gradcheck() {
        let a = rand_t(&[3, 3], 3).map(|x| x * 0.5 + 2.0); // positive for ln/sqrt
        for op in ["tanh", "sigmoid", "relu", "ln", "exp", "sqrt"] {
            let r = check_op(&[a.clone()], CheckOpts::default(), move |tape, xs| {
                let y = match op {
                    "tanh" => tape.tanh(xs[0])?,
                    "sigmoid" => tape.sigmoid(xs[0])?,
                    "relu" => tape.relu(xs[0])?,
                    "ln" => tape.ln(xs[0])?,
                    "exp" => tape.exp(xs[0])?,
                    _ => tape.sqrt(xs[0])?,
                };
                tape.sum_all(y)
            })
            .unwrap();
            assert!(r.passed(1e-6), "{op}: max rel err {}", r.max_rel_err);
        }
    }

    #[test]
    fn tanh_and_sigmoid_at_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::scalar(0.0));
        let t = tape.tanh(x).unwrap();
        let s = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(t).as_slice()[0], 0.0);
        assert_eq!(tape.value(s).as_slice()[0], 0.5);
    }

    #[test]
    fn reductions_and_broadcasts_pass_gradcheck() {
        let a = rand_t(&[3, 2, 2], 5);
        let r = check_op(&[a.clone()], CheckOpts::default(), |tape, xs| {
            let m = tape.mean_per_sample(xs[0])?;
            let b = tape.broadcast_sample(m, &[3, 2, 2])?;
            let d = tape.sub(xs[0], b)?;
            let sq = tape.mul(d, d)?;
            tape.mean_all(sq)
        })
        .unwrap();
        assert!(r.passed(1e-6), "max rel err {}", r.max_rel_err);
    }

    #[test]
    fn structural_ops_pass_gradcheck() {
        let a = rand_t(&[2, 3, 2, 2], 7);
        let b = rand_t(&[2, 2, 2, 2], 8);
        let r = check_op(&[a.clone(), b.clone()], CheckOpts::default(), |tape, xs| {
            let cat = tape.concat_channels(&[xs[0], xs[1]])?;
            let sl = tape.slice_channels(cat, 1, 4)?;
            let st = tape.stack_time(&[sl, sl])?;
            let t1 = tape.select_time(st, 1)?;
            let sq = tape.mul(t1, t1)?;
            tape.sum_all(sq)
        })
        .unwrap();
        assert!(r.passed(1e-6), "max rel err {}", r.max_rel_err);
    }

    #[test]
    fn gather_points_grads_and_values() {
        let a = rand_t(&[2, 1, 3, 3], 9);
        let pts = vec![(0usize, 1usize, 2usize), (1, 0, 0), (0, 1, 2)];
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(a.clone(), true);
        let g = tape.gather_points(x, &pts).unwrap();
        assert_eq!(tape.value(g).as_slice()[0], a.at(&[0, 0, 1, 2]));
        let loss = tape.sum_all(g).unwrap();
        let grads = tape.backward(loss).unwrap();
        // (0,1,2) gathered twice -> gradient 2 there, 1 at (1,0,0)
        assert_eq!(grads.get(x).unwrap().at(&[0, 0, 1, 2]), 2.0);
        assert_eq!(grads.get(x).unwrap().at(&[1, 0, 0, 0]), 1.0);
    }

    #[test]
    fn linear_and_pool_pass_gradcheck() {
        let x = rand_t(&[2, 6], 10);
        let w = rand_t(&[4, 6], 11).map(|v| v * 0.3);
        let b = rand_t(&[4], 12).map(|v| v * 0.1);
        let r = check_op(&[x, w, b], CheckOpts::default(), |tape, xs| {
            let y = tape.linear(xs[0], xs[1], xs[2])?;
            let sq = tape.mul(y, y)?;
            tape.sum_all(sq)
        })
        .unwrap();
        assert!(r.passed(1e-6), "linear: {}", r.max_rel_err);

        let x = rand_t(&[2, 3, 4, 4], 13);
        let r = check_op(&[x], CheckOpts::default(), |tape, xs| {
            let y = tape.global_avg_pool(xs[0])?;
            let sq = tape.mul(y, y)?;
            tape.sum_all(sq)
        })
        .unwrap();
        assert!(r.passed(1e-6), "gap: {}", r.max_rel_err);
    }

    #[test]
    fn scale_and_spatial_mul_pass_gradcheck() {
        let x = rand_t(&[2, 3, 3, 3], 14);
        let s = rand_t(&[2, 3], 15);
        let r = check_op(&[x.clone(), s], CheckOpts::default(), |tape, xs| {
            let y = tape.scale_channels(xs[0], xs[1])?;
            tape.sum_all(y)
        })
        .unwrap();
        assert!(r.passed(1e-6), "scale_channels: {}", r.max_rel_err);

        let a = rand_t(&[2, 1, 3, 3], 16);
        let r = check_op(&[x, a], CheckOpts::default(), |tape, xs| {
            let y = tape.mul_spatial(xs[0], xs[1])?;
            let sq = tape.mul(y, y)?;
            tape.sum_all(sq)
        })
        .unwrap();
        assert!(r.passed(1e-6), "mul_spatial: {}", r.max_rel_err);
    }

    #[test]
    fn softmax_and_standardize_pass_gradcheck() {
        let x = rand_t(&[2, 2, 3, 3], 17);
        let r = check_op(&[x.clone()], CheckOpts::default(), |tape, xs| {
            let y = tape.softmax_spatial(xs[0])?;
            let sq = tape.mul(y, y)?;
            tape.sum_all(sq)
        })
        .unwrap();
        assert!(r.passed(1e-5), "softmax: {}", r.max_rel_err);

        let r = check_op(&[x], CheckOpts::default(), |tape, xs| {
            let y = tape.standardize_spatial(xs[0], 1e-8)?;
            let c = tape.exp(y)?;
            tape.mean_all(c)
        })
        .unwrap();
        assert!(r.passed(1e-5), "standardize: {}", r.max_rel_err);
    }

    #[test]
    fn mean_channels_pass_gradcheck() {
        let x = rand_t(&[2, 4, 3, 3], 18);
        let r = check_op(&[x], CheckOpts::default(), |tape, xs| {
            let y = tape.mean_channels(xs[0])?;
            let sq = tape.mul(y, y)?;
            tape.sum_all(sq)
        })
        .unwrap();
        assert!(r.passed(1e-6), "mean_channels: {}", r.max_rel_err);
    }
}
