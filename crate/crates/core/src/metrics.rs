//! The five saliency evaluation metrics.
//!
//! Each metric has an independent brute-force oracle in [`oracle`]; the
//! acceptance suite holds them to 1e-9 agreement on random instances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// (row, col) fixation location.
pub type Point = (usize, usize);

/// Ground truth for one frame: the fixation density map and the discrete
/// fixation points it was built from.
#[derive(Clone, Debug)]
pub struct FixationData {
    pub frame: usize,
    /// Nonnegative `[H, W]` density.
    pub fdm: Tensor<f64>,
    pub points: Vec<Point>,
}

impl FixationData {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = check_2d("fixation data", &self.fdm)?;
        if self.fdm.iter().any(|&v| v < 0.0) {
            return Err(Error::numeric(format!(
                "frame {}: fdm has negative mass",
                self.frame
            )));
        }
        if self.fdm.sum() <= 0.0 {
            return Err(Error::numeric(format!(
                "frame {}: fdm sums to zero",
                self.frame
            )));
        }
        check_points("fixation data", h, w, &self.points)
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct MetricSet {
    pub auc_j: f64,
    pub sauc: f64,
    pub cc: f64,
    pub nss: f64,
    pub sim: f64,
}

impl MetricSet {
    pub fn values(&self) -> [f64; 5] {
        [self.auc_j, self.sauc, self.cc, self.nss, self.sim]
    }

    pub const NAMES: [&'static str; 5] = ["AUC-J", "sAUC", "CC", "NSS", "SIM"];
}

fn to_f64<S: Scalar>(t: &Tensor<S>) -> Vec<f64> {
    t.iter().map(|&v| v.to_f64_lossy()).collect()
}

fn check_2d<S: Scalar>(name: &str, t: &Tensor<S>) -> Result<(usize, usize)> {
    let s = t.shape();
    if s.len() != 2 || s[0] == 0 || s[1] == 0 {
        return Err(Error::shape(format!("{name}: expected non-empty [H,W], got {s:?}")));
    }
    Ok((s[0], s[1]))
}

fn check_points(name: &str, h: usize, w: usize, points: &[Point]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::config(format!("{name}: no fixation points")));
    }
    for &(y, x) in points {
        if y >= h || x >= w {
            return Err(Error::shape(format!(
                "{name}: point ({y},{x}) outside {h}x{w}"
            )));
        }
    }
    Ok(())
}

/// Normalized scanpath saliency: mean of the standardized prediction at the
/// fixation points. Population std; a zero-variance map scores 0.
pub fn nss<S: Scalar>(pred: &Tensor<S>, points: &[Point]) -> Result<f64> {
    let (h, w) = check_2d("nss", pred)?;
    check_points("nss", h, w, points)?;
    let v = to_f64(pred);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= 1e-12 * (1.0 + mean.abs()) {
        return Ok(0.0);
    }
    let total: f64 = points.iter().map(|&(y, x)| (v[y * w + x] - mean) / std).sum();
    Ok(total / points.len() as f64)
}

/// Pearson correlation of the two maps; either map constant scores 0.
pub fn cc<S: Scalar>(pred: &Tensor<S>, fdm: &Tensor<S>) -> Result<f64> {
    let sp = check_2d("cc", pred)?;
    let sf = check_2d("cc", fdm)?;
    if sp != sf {
        return Err(Error::shape(format!("cc: {sp:?} vs {sf:?}")));
    }
    let a = to_f64(pred);
    let b = to_f64(fdm);
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(&b) {
        let dx = x - ma;
        let dy = y - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    let denom = (va / n).sqrt() * (vb / n).sqrt();
    if (va / n).sqrt() <= 1e-12 * (1.0 + ma.abs()) || (vb / n).sqrt() <= 1e-12 * (1.0 + mb.abs()) {
        return Ok(0.0);
    }
    Ok(cov / (n * denom))
}

/// Histogram intersection: shift each map nonnegative, normalize to sum 1,
/// sum the pointwise minimum. A degenerate (constant) map is treated as
/// uniform mass.
pub fn sim<S: Scalar>(pred: &Tensor<S>, fdm: &Tensor<S>) -> Result<f64> {
    let sp = check_2d("sim", pred)?;
    let sf = check_2d("sim", fdm)?;
    if sp != sf {
        return Err(Error::shape(format!("sim: {sp:?} vs {sf:?}")));
    }
    let dist = |t: &Tensor<S>| -> Vec<f64> {
        let mut v = to_f64(t);
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        if lo < 0.0 {
            for x in v.iter_mut() {
                *x -= lo;
            }
        }
        let total: f64 = v.iter().sum();
        if total < 1e-12 {
            let u = 1.0 / v.len() as f64;
            v.iter_mut().for_each(|x| *x = u);
        } else {
            v.iter_mut().for_each(|x| *x /= total);
        }
        v
    };
    let p = dist(pred);
    let q = dist(fdm);
    Ok(p.iter().zip(&q).map(|(a, b)| a.min(*b)).sum())
}

/// ROC sweep shared by AUC-J and its oracle: thresholds at the distinct
/// fixation values (descending), `>=` tie rule, trapezoidal area, with the
/// false-positive rate taken over non-fixation pixels.
fn judd_area(tp_fp: &[(f64, f64)]) -> f64 {
    // points ordered by ascending FPR: prepend (0,0), append (1,1)
    let mut area = 0.0;
    let mut prev = (0.0f64, 0.0f64);
    for &(fpr, tpr) in tp_fp {
        area += (fpr - prev.0) * (tpr + prev.1) * 0.5;
        prev = (fpr, tpr);
    }
    area += (1.0 - prev.0) * (1.0 + prev.1) * 0.5;
    area
}

/// AUC (Judd variant): thresholds at each fixation's saliency value; true
/// positives over fixations, false positives over all non-fixation pixels.
pub fn auc_judd<S: Scalar>(pred: &Tensor<S>, points: &[Point]) -> Result<f64> {
    let (h, w) = check_2d("auc_judd", pred)?;
    check_points("auc_judd", h, w, points)?;
    let v = to_f64(pred);

    let mut fix_vals: Vec<f64> = points.iter().map(|&(y, x)| v[y * w + x]).collect();
    let n_fix = fix_vals.len() as f64;

    // unique fixation pixels define the negative (non-fixation) population
    let mut fix_pixels: Vec<usize> = points.iter().map(|&(y, x)| y * w + x).collect();
    fix_pixels.sort_unstable();
    fix_pixels.dedup();
    let mut neg_vals: Vec<f64> = Vec::with_capacity(v.len() - fix_pixels.len());
    let mut fi = 0;
    for (i, &val) in v.iter().enumerate() {
        if fi < fix_pixels.len() && fix_pixels[fi] == i {
            fi += 1;
        } else {
            neg_vals.push(val);
        }
    }
    let n_neg = neg_vals.len() as f64;
    if neg_vals.is_empty() {
        return Ok(1.0);
    }

    // sorted ascending for counting ">= threshold" by binary search
    fix_vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    neg_vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let count_ge = |sorted: &[f64], theta: f64| -> f64 {
        let idx = sorted.partition_point(|&x| x < theta);
        (sorted.len() - idx) as f64
    };

    let mut thresholds: Vec<f64> = fix_vals.clone();
    thresholds.dedup();
    // descending thresholds give ascending (FPR, TPR)
    let curve: Vec<(f64, f64)> = thresholds
        .iter()
        .rev()
        .map(|&th| {
            (
                count_ge(&neg_vals, th) / n_neg,
                count_ge(&fix_vals, th) / n_fix,
            )
        })
        .collect();
    Ok(judd_area(&curve))
}

/// Shuffled AUC: ranking statistic of fixation values against a pool of
/// negative locations (fraction of pos > neg pairs, half credit for ties).
pub fn sauc<S: Scalar>(pred: &Tensor<S>, points: &[Point], negatives: &[Point]) -> Result<f64> {
    let (h, w) = check_2d("sauc", pred)?;
    check_points("sauc", h, w, points)?;
    check_points("sauc (negatives)", h, w, negatives)?;
    let v = to_f64(pred);
    let pos: Vec<f64> = points.iter().map(|&(y, x)| v[y * w + x]).collect();
    let neg: Vec<f64> = negatives.iter().map(|&(y, x)| v[y * w + x]).collect();

    // rank-sum with average ranks over the pooled values
    let mut pooled: Vec<(f64, bool)> = pos
        .iter()
        .map(|&x| (x, true))
        .chain(neg.iter().map(|&x| (x, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        // average 1-based rank over the tie run [i, j)
        let avg_rank = (i + 1 + j) as f64 * 0.5;
        for p in &pooled[i..j] {
            if p.1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let np = pos.len() as f64;
    let nn = neg.len() as f64;
    let u = rank_sum_pos - np * (np + 1.0) * 0.5;
    Ok(u / (np * nn))
}

/// Brute-force reference implementations. Kept deliberately naive and
/// separate from the fast paths above.
pub mod oracle {
    use super::*;

    pub fn nss<S: Scalar>(pred: &Tensor<S>, points: &[Point]) -> f64 {
        let v = to_f64(pred);
        let w = pred.shape()[1];
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        if std <= 1e-12 * (1.0 + mean.abs()) {
            return 0.0;
        }
        points
            .iter()
            .map(|&(y, x)| (v[y * w + x] - mean) / std)
            .sum::<f64>()
            / points.len() as f64
    }

    /// Textbook two-pass Pearson correlation.
    pub fn cc<S: Scalar>(pred: &Tensor<S>, fdm: &Tensor<S>) -> f64 {
        let a = to_f64(pred);
        let b = to_f64(fdm);
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
        if (va / n).sqrt() <= 1e-12 * (1.0 + ma.abs()) || (vb / n).sqrt() <= 1e-12 * (1.0 + mb.abs()) {
            0.0
        } else {
            cov / (va.sqrt() * vb.sqrt())
        }
    }

    /// Exhaustive threshold sweep: for every distinct fixation value, scan
    /// all pixels to count hits.
    pub fn auc_judd<S: Scalar>(pred: &Tensor<S>, points: &[Point]) -> f64 {
        let v = to_f64(pred);
        let w = pred.shape()[1];
        let fix_vals: Vec<f64> = points.iter().map(|&(y, x)| v[y * w + x]).collect();
        let mut fix_pixels: Vec<usize> = points.iter().map(|&(y, x)| y * w + x).collect();
        fix_pixels.sort_unstable();
        fix_pixels.dedup();
        let is_fix = |i: usize| fix_pixels.binary_search(&i).is_ok();
        let n_neg = (v.len() - fix_pixels.len()) as f64;
        if n_neg == 0.0 {
            return 1.0;
        }
        let mut thresholds = fix_vals.clone();
        thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
        thresholds.dedup();

        let mut curve = Vec::new();
        for &th in &thresholds {
            let tp = fix_vals.iter().filter(|&&x| x >= th).count() as f64 / fix_vals.len() as f64;
            let fp = v
                .iter()
                .enumerate()
                .filter(|&(i, &x)| !is_fix(i) && x >= th)
                .count() as f64
                / n_neg;
            curve.push((fp, tp));
        }
        super::judd_area(&curve)
    }

    /// All pos/neg pairs compared directly, half credit for ties.
    pub fn sauc<S: Scalar>(pred: &Tensor<S>, points: &[Point], negatives: &[Point]) -> f64 {
        let v = to_f64(pred);
        let w = pred.shape()[1];
        let pos: Vec<f64> = points.iter().map(|&(y, x)| v[y * w + x]).collect();
        let neg: Vec<f64> = negatives.iter().map(|&(y, x)| v[y * w + x]).collect();
        let mut score = 0.0;
        for &p in &pos {
            for &n in &neg {
                if p > n {
                    score += 1.0;
                } else if p == n {
                    score += 0.5;
                }
            }
        }
        score / (pos.len() as f64 * neg.len() as f64)
    }

    /// Histogram intersection recomputed from first principles: shift each
    /// map by its own minimum, divide by the total, accumulate minima.
    pub fn sim<S: Scalar>(pred: &Tensor<S>, fdm: &Tensor<S>) -> f64 {
        let normalize = |t: &Tensor<S>| -> Vec<f64> {
            let raw: Vec<f64> = t.iter().map(|&v| v.to_f64_lossy()).collect();
            let mut lo = f64::INFINITY;
            for &v in &raw {
                lo = lo.min(v);
            }
            let shift = if lo < 0.0 { -lo } else { 0.0 };
            let mut total = 0.0;
            for &v in &raw {
                total += v + shift;
            }
            if total < 1e-12 {
                return vec![1.0 / raw.len() as f64; raw.len()];
            }
            raw.into_iter().map(|v| (v + shift) / total).collect()
        };
        let p = normalize(pred);
        let q = normalize(fdm);
        let mut acc = 0.0;
        for (a, b) in p.iter().zip(&q) {
            acc += if a < b { *a } else { *b };
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    type T = Tensor<f64>;

    fn rand_map(h: usize, w: usize, key: u64) -> T {
        let mut s = Stream::keyed(0xBEEF, &[key]);
        T::from_vec(&[h, w], (0..h * w).map(|_| s.uniform()).collect()).unwrap()
    }

    fn rand_points(h: usize, w: usize, n: usize, key: u64) -> Vec<Point> {
        let mut s = Stream::keyed(0xF1F1, &[key]);
        (0..n).map(|_| (s.below(h), s.below(w))).collect()
    }

    #[test]
    fn nss_hand_example() {
        // pred [1,0;0,0], fixation (0,0): (1 - 0.25)/sqrt(0.1875) = sqrt(3)
        let pred = T::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let v = nss(&pred, &[(0, 0)]).unwrap();
        assert!((v - 3.0f64.sqrt()).abs() < 1e-12, "{v}");
    }

    #[test]
    fn nss_constant_map_scores_zero() {
        let pred = T::full(&[3, 3], 0.4);
        assert_eq!(nss(&pred, &[(1, 1)]).unwrap(), 0.0);
    }

    #[test]
    fn nss_positive_at_unique_max() {
        let mut d = vec![0.1; 9];
        d[4] = 2.0;
        let pred = T::from_vec(&[3, 3], d).unwrap();
        assert!(nss(&pred, &[(1, 1)]).unwrap() > 0.0);
    }

    #[test]
    fn nss_affine_invariance_positive_scale() {
        let pred = rand_map(6, 6, 1);
        let pts = rand_points(6, 6, 5, 2);
        let a = nss(&pred, &pts).unwrap();
        let b = nss(&pred.map(|v| 3.0 * v + 1.0), &pts).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn cc_identity_and_negation() {
        let fdm = rand_map(5, 5, 3);
        assert!((cc(&fdm, &fdm).unwrap() - 1.0).abs() < 1e-12);
        let neg = fdm.map(|v| -v + 0.7);
        assert!((cc(&neg, &fdm).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn cc_matches_two_pass_oracle() {
        for k in 0..20 {
            let a = rand_map(8, 8, 100 + k);
            let b = rand_map(8, 8, 200 + k);
            let fast = cc(&a, &b).unwrap();
            let slow = oracle::cc(&a, &b);
            assert!((fast - slow).abs() < 1e-12);
        }
    }

    #[test]
    fn sim_identity_disjoint_symmetry() {
        let a = rand_map(4, 4, 5);
        assert!((sim(&a, &a).unwrap() - 1.0).abs() < 1e-12);

        let mut p = vec![0.0; 16];
        let mut q = vec![0.0; 16];
        p[0] = 1.0;
        q[15] = 1.0;
        let p = T::from_vec(&[4, 4], p).unwrap();
        let q = T::from_vec(&[4, 4], q).unwrap();
        assert_eq!(sim(&p, &q).unwrap(), 0.0);

        let b = rand_map(4, 4, 6);
        let ab = sim(&a, &b).unwrap();
        let ba = sim(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn auc_judd_perfect_and_chance() {
        let mut d = vec![0.1; 16];
        d[5] = 0.9;
        d[10] = 0.9;
        let pred = T::from_vec(&[4, 4], d).unwrap();
        assert!((auc_judd(&pred, &[(1, 1), (2, 2)]).unwrap() - 1.0).abs() < 1e-12);

        let flat = T::full(&[4, 4], 0.3);
        assert!((auc_judd(&flat, &[(1, 1), (3, 0)]).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn auc_judd_matches_sweep_oracle() {
        for k in 0..20 {
            let pred = rand_map(16, 16, 300 + k);
            let pts = rand_points(16, 16, 8, 400 + k);
            let fast = auc_judd(&pred, &pts).unwrap();
            let slow = oracle::auc_judd(&pred, &pts);
            assert!((fast - slow).abs() < 1e-9, "k={k}: {fast} vs {slow}");
        }
    }

    #[test]
    fn sauc_degenerate_and_perfect() {
        let pred = rand_map(6, 6, 7);
        let pts = rand_points(6, 6, 6, 8);
        // negatives equal to positives: indistinguishable, 0.5
        let v = sauc(&pred, &pts, &pts).unwrap();
        assert!((v - 0.5).abs() < 1e-12, "{v}");

        // positives strictly above all negatives
        let mut d = vec![0.0; 36];
        d[7] = 1.0;
        d[14] = 0.9;
        let pred = T::from_vec(&[6, 6], d).unwrap();
        let v = sauc(&pred, &[(1, 1), (2, 2)], &[(0, 0), (5, 5)]).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn sauc_matches_pairwise_oracle() {
        for k in 0..20 {
            let pred = rand_map(16, 16, 500 + k);
            let pos = rand_points(16, 16, 7, 600 + k);
            let neg = rand_points(16, 16, 23, 700 + k);
            let fast = sauc(&pred, &pos, &neg).unwrap();
            let slow = oracle::sauc(&pred, &pos, &neg);
            assert!((fast - slow).abs() < 1e-9, "k={k}: {fast} vs {slow}");
        }
    }

    #[test]
    fn auc_metrics_invariant_under_monotone_transforms() {
        for k in 0..10 {
            let pred = rand_map(12, 12, 800 + k);
            let pos = rand_points(12, 12, 6, 900 + k);
            let neg = rand_points(12, 12, 15, 1000 + k);
            let base_j = auc_judd(&pred, &pos).unwrap();
            let base_s = sauc(&pred, &pos, &neg).unwrap();
            for transform in [|x: f64| x.exp(), |x: f64| 3.0 * x + 1.0] {
                let t = pred.map(transform);
                assert!((auc_judd(&t, &pos).unwrap() - base_j).abs() < 1e-9);
                assert!((sauc(&t, &pos, &neg).unwrap() - base_s).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ranges_hold_on_random_inputs() {
        for k in 0..30 {
            let a = rand_map(8, 8, 1100 + k).map(|v| v * 4.0 - 2.0);
            let b = rand_map(8, 8, 1200 + k);
            let s = sim(&a, &b).unwrap();
            let c = cc(&a, &b).unwrap();
            assert!((0.0..=1.0 + 1e-12).contains(&s), "sim {s}");
            assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c), "cc {c}");
        }
    }

    #[test]
    fn empty_points_are_rejected() {
        let pred = rand_map(4, 4, 1300);
        assert!(nss(&pred, &[]).is_err());
        assert!(auc_judd(&pred, &[]).is_err());
    }
}
