//! Jet colormap.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Jet value for one gray level in [0, 1]: the classic piecewise-linear ramp
/// r = clamp(1.5 - |4v-3|), g = clamp(1.5 - |4v-2|), b = clamp(1.5 - |4v-1|).
pub fn jet<S: Scalar>(v: S) -> [S; 3] {
    let v = v.to_f64_lossy();
    let ch = |center: f64| (1.5 - (4.0 * v - center).abs()).clamp(0.0, 1.0);
    [S::of(ch(3.0)), S::of(ch(2.0)), S::of(ch(1.0))]
}

/// Colormap a gray `[H, W]` map into `[3, H, W]`.
///
/// Inputs outside [0, 1] are clamped; the count of clamped values is
/// returned alongside the map.
pub fn jet_colormap<S: Scalar>(gray: &Tensor<S>) -> (Tensor<S>, usize) {
    debug_assert_eq!(gray.shape().len(), 2);
    let (h, w) = (gray.shape()[0], gray.shape()[1]);
    let plane = h * w;
    let mut out = vec![S::zero(); 3 * plane];
    let mut clamped = 0usize;
    for (i, &v) in gray.as_slice().iter().enumerate() {
        let mut vv = v;
        if vv < S::zero() || vv > S::one() {
            clamped += 1;
            vv = vv.max(S::zero()).min(S::one());
        }
        let [r, g, b] = jet(vv);
        out[i] = r;
        out[plane + i] = g;
        out[2 * plane + i] = b;
    }
    (Tensor::from_vec(&[3, h, w], out).unwrap(), clamped)
}
