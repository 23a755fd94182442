//! Plain (non-differentiable) image utilities: bilinear resize, Gaussian
//! blur, toroidal shift, min-max normalization, PPM export.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Bilinear resize of an `[H, W]` map (half-pixel centers, no corner
/// alignment).
pub fn resize_bilinear<S: Scalar>(map: &Tensor<S>, out_h: usize, out_w: usize) -> Result<Tensor<S>> {
    let s = map.shape();
    if s.len() != 2 {
        return Err(Error::shape(format!("resize_bilinear: {s:?}")));
    }
    let (h, w) = (s[0], s[1]);
    if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::shape("resize_bilinear: empty map"));
    }
    if h == out_h && w == out_w {
        return Ok(map.clone());
    }
    let src = map.as_slice();
    let scale_y = h as f64 / out_h as f64;
    let scale_x = w as f64 / out_w as f64;
    let mut out = vec![S::zero(); out_h * out_w];
    for oy in 0..out_h {
        let sy = ((oy as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for ox in 0..out_w {
            let sx = ((ox as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            let v00 = src[y0 * w + x0].to_f64_lossy();
            let v01 = src[y0 * w + x1].to_f64_lossy();
            let v10 = src[y1 * w + x0].to_f64_lossy();
            let v11 = src[y1 * w + x1].to_f64_lossy();
            let top = v00 + (v01 - v00) * fx;
            let bot = v10 + (v11 - v10) * fx;
            out[oy * out_w + ox] = S::of(top + (bot - top) * fy);
        }
    }
    Tensor::from_vec(&[out_h, out_w], out)
}

/// Resize each channel of a `[C, H, W]` stack.
pub fn resize_bilinear_chw<S: Scalar>(
    map: &Tensor<S>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<S>> {
    let s = map.shape();
    if s.len() != 3 {
        return Err(Error::shape(format!("resize_bilinear_chw: {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ci in 0..c {
        let plane = Tensor::from_vec(
            &[h, w],
            map.as_slice()[ci * h * w..(ci + 1) * h * w].to_vec(),
        )?;
        out.extend_from_slice(resize_bilinear(&plane, out_h, out_w)?.as_slice());
    }
    Tensor::from_vec(&[c, out_h, out_w], out)
}

/// Separable Gaussian blur with a truncated kernel (radius 3 sigma),
/// renormalized at the borders so constants are preserved.
pub fn gaussian_blur<S: Scalar>(map: &Tensor<S>, sigma: f64) -> Result<Tensor<S>> {
    let s = map.shape();
    if s.len() != 2 {
        return Err(Error::shape(format!("gaussian_blur: {s:?}")));
    }
    if sigma <= 0.0 {
        return Ok(map.clone());
    }
    let (h, w) = (s[0], s[1]);
    let radius = (3.0 * sigma).ceil() as usize;
    let kernel: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();

    let blur_axis = |src: &[f64], len: usize, stride: usize, count: usize, dst: &mut [f64]| {
        for line in 0..count {
            let base = line * if stride == 1 { len } else { 1 };
            for i in 0..len {
                let mut acc = 0.0;
                let mut norm = 0.0;
                let lo = i.saturating_sub(radius);
                let hi = (i + radius).min(len - 1);
                for j in lo..=hi {
                    let k = kernel[j + radius - i];
                    acc += k * src[base + j * stride];
                    norm += k;
                }
                dst[base + i * stride] = acc / norm;
            }
        }
    };

    let src: Vec<f64> = map.iter().map(|&v| v.to_f64_lossy()).collect();
    let mut tmp = vec![0.0f64; h * w];
    // rows
    blur_axis(&src, w, 1, h, &mut tmp);
    // columns
    let mut out = vec![0.0f64; h * w];
    for col in 0..w {
        for i in 0..h {
            let mut acc = 0.0;
            let mut norm = 0.0;
            let lo = i.saturating_sub(radius);
            let hi = (i + radius).min(h - 1);
            for j in lo..=hi {
                let k = kernel[j + radius - i];
                acc += k * tmp[j * w + col];
                norm += k;
            }
            out[i * w + col] = acc / norm;
        }
    }
    Tensor::from_vec(&[h, w], out.into_iter().map(S::of).collect())
}

/// Wrap-around shift by (dy, dx) pixels.
pub fn shift_torus<S: Scalar>(map: &Tensor<S>, dy: isize, dx: isize) -> Result<Tensor<S>> {
    let s = map.shape();
    if s.len() != 2 {
        return Err(Error::shape(format!("shift_torus: {s:?}")));
    }
    let (h, w) = (s[0] as isize, s[1] as isize);
    let src = map.as_slice();
    let mut out = vec![S::zero(); src.len()];
    for y in 0..h {
        for x in 0..w {
            let sy = (y - dy).rem_euclid(h);
            let sx = (x - dx).rem_euclid(w);
            out[(y * w + x) as usize] = src[(sy * w + sx) as usize];
        }
    }
    Tensor::from_vec(map.shape(), out)
}

/// Min-max normalize to [0, 1]; a constant map becomes all zeros.
pub fn minmax_normalize<S: Scalar>(map: &Tensor<S>) -> Tensor<S> {
    let lo = map.min();
    let hi = map.max();
    if hi - lo < S::of(1e-12) {
        return Tensor::zeros(map.shape());
    }
    map.map(|v| (v - lo) / (hi - lo))
}

/// Write a `[3, H, W]` map in [0, 1] as a binary PPM (P6, 8-bit).
pub fn write_ppm<S: Scalar>(path: &Path, rgb: &Tensor<S>) -> Result<()> {
    let bytes = ppm_bytes(rgb)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Encode a `[3, H, W]` map in [0, 1] as binary PPM bytes.
pub fn ppm_bytes<S: Scalar>(rgb: &Tensor<S>) -> Result<Vec<u8>> {
    let s = rgb.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::shape(format!("ppm: expected [3,H,W], got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let plane = h * w;
    let mut out = Vec::with_capacity(32 + 3 * plane);
    write!(out, "P6\n{w} {h}\n255\n")?;
    let data = rgb.as_slice();
    for i in 0..plane {
        for c in 0..3 {
            let v = data[c * plane + i].to_f64_lossy().clamp(0.0, 1.0);
            out.push((v * 255.0).round() as u8);
        }
    }
    Ok(out)
}

/// Stitch `[3,H,W]` panels side by side into one `[3,H,W*n]` image.
pub fn hstack_panels<S: Scalar>(panels: &[Tensor<S>]) -> Result<Tensor<S>> {
    if panels.is_empty() {
        return Err(Error::shape("hstack_panels: no panels"));
    }
    let s0 = panels[0].shape().to_vec();
    if s0.len() != 3 || s0[0] != 3 {
        return Err(Error::shape(format!("hstack_panels: {s0:?}")));
    }
    for p in panels {
        if p.shape() != s0.as_slice() {
            return Err(Error::shape("hstack_panels: panel shapes differ"));
        }
    }
    let (h, w) = (s0[1], s0[2]);
    let n = panels.len();
    let wide = w * n;
    let mut out = vec![S::zero(); 3 * h * wide];
    for (pi, p) in panels.iter().enumerate() {
        let src = p.as_slice();
        for c in 0..3 {
            for y in 0..h {
                let dst_off = (c * h + y) * wide + pi * w;
                let src_off = (c * h + y) * w;
                out[dst_off..dst_off + w].copy_from_slice(&src[src_off..src_off + w]);
            }
        }
    }
    Tensor::from_vec(&[3, h, wide], out)
}
