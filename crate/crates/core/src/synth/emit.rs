//! Emitters: frames, detection records, observer fixations, saliency maps.

use crate::cuemap::{DetectionRecord, FaceDetection, GridData};
use crate::error::Result;
use crate::image::{gaussian_blur, minmax_normalize, shift_torus};
use crate::metrics::FixationData;
use crate::rng::Stream;
use crate::tensor::Tensor as TensorOf;

use super::scene::SceneScript;

type Tensor = TensorOf<f64>;

/// Gaze-target heatmaps are emitted on the detector's own coarse grid.
const HEATMAP_GRID: usize = 15;
/// Observers follow a gaze target only when the gaze estimate is at least
/// this confident.
pub const CONFIDENT_GAZE: f64 = 0.7;
/// Expression activation grids are this square size.
const EXPR_GRID: usize = 9;

/// Flat-color actors over a textured noise background.
pub fn render_frame(script: &SceneScript, t: usize) -> Tensor {
    let (h, w) = (script.height, script.width);
    let plane = h * w;
    let mut data = vec![0.0f64; 3 * plane];

    // static per-scene background: coarse value noise, bilinearly smoothed
    let mut bg_rng = Stream::keyed(script.seed, &[0xb6, 0]);
    let gh = (h / 6).max(2);
    let gw = (w / 6).max(2);
    let grid: Vec<f64> = (0..3 * gh * gw).map(|_| bg_rng.range(0.1, 0.4)).collect();
    for c in 0..3 {
        for y in 0..h {
            let gy = y as f64 * (gh - 1) as f64 / (h - 1).max(1) as f64;
            let (y0, fy) = (gy.floor() as usize, gy.fract());
            let y1 = (y0 + 1).min(gh - 1);
            for x in 0..w {
                let gx = x as f64 * (gw - 1) as f64 / (w - 1).max(1) as f64;
                let (x0, fx) = (gx.floor() as usize, gx.fract());
                let x1 = (x0 + 1).min(gw - 1);
                let at = |yy: usize, xx: usize| grid[(c * gh + yy) * gw + xx];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                data[c * plane + y * w + x] = top * (1.0 - fy) + bot * fy;
            }
        }
    }

    // actors as filled ellipses
    for a in &script.actors {
        let (bx, by, bw, bh) = a.bboxes[t];
        let (cx, cy) = (bx + bw * 0.5, by + bh * 0.5);
        let (rx, ry) = (bw * 0.5, bh * 0.5);
        for y in 0..h {
            for x in 0..w {
                let dx = (x as f64 - cx) / rx.max(1e-9);
                let dy = (y as f64 - cy) / ry.max(1e-9);
                if dx * dx + dy * dy <= 1.0 {
                    for c in 0..3 {
                        data[c * plane + y * w + x] = a.color[c];
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[3, h, w], data).unwrap()
}

/// Radially decaying bump grid scaled by the expression intensity.
fn expression_grid(intensity: f64) -> GridData {
    let n = EXPR_GRID;
    let c = (n - 1) as f64 * 0.5;
    let mut data = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let r2 = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)) / (c * c);
            data.push(intensity * (1.0 - r2).max(0.0));
        }
    }
    GridData {
        rows: n,
        cols: n,
        data,
    }
}

/// Gaussian heatmap on the coarse detector grid, peaked at the target.
fn target_heatmap(script: &SceneScript, tx: f64, ty: f64) -> GridData {
    let n = HEATMAP_GRID;
    let sx = tx / (script.width - 1).max(1) as f64 * (n - 1) as f64;
    let sy = ty / (script.height - 1).max(1) as f64 * (n - 1) as f64;
    // sigma of 6 px at a 120 px frame, expressed on the coarse grid
    let sigma = 6.0 / 120.0 * (n - 1) as f64;
    let mut data = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let d2 = (x as f64 - sx).powi(2) + (y as f64 - sy).powi(2);
            data.push((-0.5 * d2 / (sigma * sigma)).exp());
        }
    }
    GridData {
        rows: n,
        cols: n,
        data,
    }
}

/// Detection records for every frame, with optional additive noise on boxes
/// and gaze angles (zero noise reproduces the script exactly).
pub fn emit_detections(script: &SceneScript, noise_sigma: f64) -> Vec<DetectionRecord> {
    (0..script.frames)
        .map(|t| {
            let faces = script
                .actors
                .iter()
                .enumerate()
                .map(|(ai, a)| {
                    let (mut x, mut y, w, h) = a.bboxes[t];
                    let (mut az, mut pitch, conf) = a.gaze[t];
                    if noise_sigma > 0.0 {
                        let mut rng =
                            Stream::keyed(script.seed, &[0xde7, t as u64, ai as u64]);
                        x = (x + rng.normal() * noise_sigma)
                            .clamp(0.0, script.width as f64 - w);
                        y = (y + rng.normal() * noise_sigma)
                            .clamp(0.0, script.height as f64 - h);
                        az += rng.normal() * noise_sigma * 0.01;
                        pitch += rng.normal() * noise_sigma * 0.01;
                    }
                    let heatmap = a.gaze_targets[t].map(|(tx, ty)| {
                        if script.gf_reliable {
                            target_heatmap(script, tx, ty)
                        } else {
                            // broken detector: a confident heatmap somewhere else
                            let mut bad =
                                Stream::keyed(script.seed, &[0xbad6f, t as u64, ai as u64]);
                            let fx = bad.uniform() * (script.width - 1) as f64;
                            let fy = bad.uniform() * (script.height - 1) as f64;
                            target_heatmap(script, fx, fy)
                        }
                    });
                    FaceDetection {
                        bbox: (x, y, w, h),
                        gaze: (az, pitch, conf),
                        expression_grid: expression_grid(a.expression[t]),
                        gaze_target_heatmap: heatmap,
                    }
                })
                .collect();
            DetectionRecord { frame: t, faces }
        })
        .collect()
}

/// Sample the observer pool: a mixture of face, gaze-target and
/// expression-weighted attractors, then a blurred histogram as the ground
/// truth density.
pub fn simulate_fixations(script: &SceneScript) -> Result<Vec<FixationData>> {
    let obs = &script.observer;
    obs.validate()?;
    let (h, w) = (script.height, script.width);
    let mut out = Vec::with_capacity(script.frames);
    for t in 0..script.frames {
        // attractors: (x, y, sigma, weight)
        let mut attractors: Vec<(f64, f64, f64, f64)> = Vec::new();
        let n_act = script.actors.len() as f64;
        for a in &script.actors {
            let (cx, cy) = a.centroid(t);
            let face_sigma = a.bboxes[t].2 * 0.25;
            attractors.push((cx, cy, face_sigma, obs.w_face / n_act));
            if a.expression[t] > 0.0 {
                attractors.push((
                    cx,
                    cy,
                    face_sigma,
                    obs.w_expression * a.expression[t] / n_act,
                ));
            }
            if let Some((tx, ty)) = a.gaze_targets[t] {
                // observers only follow confidently-estimated gaze; the same
                // confidence scales the cone intensity, so the cue maps carry
                // the evidence needed to weight the target stream
                let conf = a.gaze[t].2;
                if conf >= CONFIDENT_GAZE {
                    let target_sigma = 6.0 / 120.0 * h.min(w) as f64;
                    attractors.push((tx, ty, target_sigma, obs.w_gazetarget / n_act));
                }
            }
        }
        let weights: Vec<f64> = attractors.iter().map(|a| a.3).collect();

        let mut points = Vec::with_capacity(obs.n_observers);
        let mut hist = vec![0.0f64; h * w];
        for o in 0..obs.n_observers {
            let mut rng = Stream::keyed(script.seed, &[0xf1c5, t as u64, o as u64]);
            let (ax, ay, sigma, _) = attractors[rng.weighted(&weights)];
            let x = ax + rng.normal() * sigma + rng.normal() * obs.noise_sigma;
            let y = ay + rng.normal() * sigma + rng.normal() * obs.noise_sigma;
            let col = (x.round().clamp(0.0, w as f64 - 1.0)) as usize;
            let row = (y.round().clamp(0.0, h as f64 - 1.0)) as usize;
            points.push((row, col));
            hist[row * w + col] += 1.0;
        }
        let blurred = gaussian_blur(&Tensor::from_vec(&[h, w], hist)?, obs.fdm_sigma)?;
        let total = blurred.sum();
        let fdm = blurred.map(|v| v / total);
        out.push(FixationData {
            frame: t,
            fdm,
            points,
        });
    }
    Ok(out)
}

/// Saliency-predictor stand-in: the ground-truth density mixed with a
/// quality-controlled corruption (toroidal shift + blur + uniform noise).
/// Quality 1 returns the density itself (min-max normalized).
pub fn emit_sp_gray(script: &SceneScript, fdm: &Tensor, t: usize, quality: f64) -> Result<Tensor> {
    let q = quality.clamp(0.0, 1.0);
    let fdm_n = minmax_normalize(fdm);
    if q >= 1.0 {
        return Ok(fdm_n);
    }
    let (h, w) = (script.height, script.width);
    let mut rng = Stream::keyed(script.seed, &[0x59c, t as u64]);
    // uniform toroidal displacement scaled by (1 - q): at q = 0 the blob
    // lands anywhere, which kills the correlation on average
    let dy = (rng.range(-0.5, 0.5) * (1.0 - q) * h as f64).round() as isize;
    let dx = (rng.range(-0.5, 0.5) * (1.0 - q) * w as f64).round() as isize;
    let shifted = shift_torus(&fdm_n, dy, dx)?;
    let blurred = gaussian_blur(&shifted, (1.0 - q) * 0.15 * h.min(w) as f64)?;
    let blurred = minmax_normalize(&blurred);
    let noise = Tensor::from_vec(
        &[h, w],
        (0..h * w).map(|_| rng.uniform()).collect(),
    )?;
    let corrupted = blurred.zip(&noise, |b, n| 0.7 * b + 0.3 * n)?;
    Ok(fdm_n.zip(&corrupted, |f, c| q * f + (1.0 - q) * c)?)
}
