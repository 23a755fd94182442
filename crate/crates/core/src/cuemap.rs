//! Social-cue map synthesis: detection records in, standardized 3-channel
//! cue maps out.
//!
//! Detection records are the per-frame outputs a detector stage would emit
//! (face boxes, gaze angles, expression grids, gaze-target heatmaps). The
//! renderers here turn them into the five modality maps: the raw frame (IMG),
//! a saliency map (SP, produced by the synthetic generator), gaze-target
//! overlays (GF), gaze-direction cones (GE) and affect maps (FER).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::colormap::jet_colormap;
use crate::error::{Error, Result};
use crate::image::{minmax_normalize, resize_bilinear};
use crate::tensor::Tensor as TensorOf;

type Tensor = TensorOf<f64>;

/// Cone apex angle is 60 degrees, i.e. 30 degrees half-angle.
pub const CONE_HALF_ANGLE_DEG: f64 = 30.0;
/// Opacity of the furthest face's cone; nearer faces use [`CONE_ALPHA_NEAR`].
pub const CONE_ALPHA_FURTHEST: f64 = 0.5;
pub const CONE_ALPHA_NEAR: f64 = 0.75;
/// Radial falloff: intensity decays linearly to this fraction at the border.
pub const CONE_BORDER_FRACTION: f64 = 0.2;

/// Native input resolutions of the upstream detectors. The detectors are not
/// part of this crate; the constants document the interface they would have.
pub const DETECTOR_CROP_GF: (usize, usize) = (227, 227);
pub const DETECTOR_CROP_GE: (usize, usize) = (224, 224);
pub const DETECTOR_CROP_FER: (usize, usize) = (96, 96);
pub const DETECTOR_CROP_SP: (usize, usize) = (256, 320);

/// The five modalities, in stack order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    Img,
    Sp,
    Gf,
    Ge,
    Fer,
}

impl Modality {
    pub const ALL: [Modality; 5] = [
        Modality::Img,
        Modality::Sp,
        Modality::Gf,
        Modality::Ge,
        Modality::Fer,
    ];

    pub fn index(self) -> usize {
        Modality::ALL.iter().position(|&m| m == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Img => "img",
            Modality::Sp => "sp",
            Modality::Gf => "gf",
            Modality::Ge => "ge",
            Modality::Fer => "fer",
        }
    }
}

/// One detected face with its social-cue attachments.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FaceDetection {
    /// (x, y, w, h) in pixels, image coordinates (x right, y down).
    pub bbox: (f64, f64, f64, f64),
    /// (azimuth rad, pitch rad, confidence in [0, 1]).
    pub gaze: (f64, f64, f64),
    /// Nonnegative activation grid (class-activation surrogate), row-major.
    pub expression_grid: GridData,
    /// Nonnegative gaze-target heatmap over the full frame, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaze_target_heatmap: Option<GridData>,
}

/// A small 2-D grid serialized as rows of numbers.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridData {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl GridData {
    pub fn from_tensor(t: &Tensor) -> Self {
        debug_assert_eq!(t.shape().len(), 2);
        GridData {
            rows: t.shape()[0],
            cols: t.shape()[1],
            data: t.to_vec(),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::from_vec(&[self.rows, self.cols], self.data.clone())
    }
}

/// Everything a detector stage emits for one frame.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame: usize,
    pub faces: Vec<FaceDetection>,
}

impl DetectionRecord {
    /// Check the record contract against the frame dimensions.
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        for (i, f) in self.faces.iter().enumerate() {
            let (x, y, w, h) = f.bbox;
            if !(x >= 0.0 && y >= 0.0 && x + w <= width as f64 && y + h <= height as f64) {
                return Err(Error::Format(format!(
                    "frame {}: face {i} bbox {:?} outside {width}x{height}",
                    self.frame, f.bbox
                )));
            }
            let conf = f.gaze.2;
            if !(0.0..=1.0).contains(&conf) {
                return Err(Error::Format(format!(
                    "frame {}: face {i} confidence {conf} outside [0,1]",
                    self.frame
                )));
            }
            if f.expression_grid.data.iter().any(|&v| v < 0.0) {
                return Err(Error::Format(format!(
                    "frame {}: face {i} expression grid has negative values",
                    self.frame
                )));
            }
            if let Some(hm) = &f.gaze_target_heatmap {
                if hm.data.iter().any(|&v| v < 0.0) {
                    return Err(Error::Format(format!(
                        "frame {}: face {i} gaze-target heatmap has negative values",
                        self.frame
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Write records as JSON-lines, one object per frame.
pub fn write_records_jsonl(path: &Path, records: &[DetectionRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records_jsonl(path: &Path) -> Result<Vec<DetectionRecord>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Outer product of 1-D Hann windows: `w[n] = 0.5 (1 - cos(2 pi n / (N-1)))`.
pub fn hanning1d(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos()))
        .collect()
}

pub fn hanning2d(h: usize, w: usize) -> Tensor {
    let wy = hanning1d(h);
    let wx = hanning1d(w);
    let mut out = Vec::with_capacity(h * w);
    for y in &wy {
        for x in &wx {
            out.push(y * x);
        }
    }
    Tensor::from_vec(&[h, w], out).unwrap()
}

fn bbox_centroid(bbox: (f64, f64, f64, f64)) -> (f64, f64) {
    (bbox.0 + bbox.2 * 0.5, bbox.1 + bbox.3 * 0.5)
}

/// Image-plane gaze direction: x = cos(az) cos(pitch), y = sin(pitch).
/// Returns None when the projection is degenerate.
pub fn gaze_direction_2d(azimuth: f64, pitch: f64) -> Option<(f64, f64)> {
    let dx = azimuth.cos() * pitch.cos();
    let dy = pitch.sin();
    let n = (dx * dx + dy * dy).sqrt();
    if n < 1e-9 {
        None
    } else {
        Some((dx / n, dy / n))
    }
}

/// Gaze-cone intensity map before colormapping. Also reports how many faces
/// were skipped for degenerate boxes or gaze projections.
pub fn cone_gray(height: usize, width: usize, faces: &[FaceDetection]) -> (Tensor, usize) {
    let mut acc = vec![0.0f64; height * width];
    let mut skipped = 0usize;

    // back-to-front: smallest box (furthest) first; ties keep list order
    let mut order: Vec<usize> = (0..faces.len()).collect();
    order.sort_by(|&a, &b| {
        let area = |i: usize| faces[i].bbox.2 * faces[i].bbox.3;
        area(a).partial_cmp(&area(b)).unwrap()
    });

    let cos_half = (CONE_HALF_ANGLE_DEG.to_radians()).cos();
    let mut first_drawn = true;
    for &fi in &order {
        let f = &faces[fi];
        if f.bbox.2 <= 0.0 || f.bbox.3 <= 0.0 {
            skipped += 1;
            continue;
        }
        let Some((ux, uy)) = gaze_direction_2d(f.gaze.0, f.gaze.1) else {
            skipped += 1;
            continue;
        };
        let conf = f.gaze.2;
        let (cx, cy) = bbox_centroid(f.bbox);
        // farthest image corner bounds the radial falloff
        let corners = [
            (0.0, 0.0),
            (width as f64 - 1.0, 0.0),
            (0.0, height as f64 - 1.0),
            (width as f64 - 1.0, height as f64 - 1.0),
        ];
        let max_d = corners
            .iter()
            .map(|&(x, y)| ((x - cx).powi(2) + (y - cy).powi(2)).sqrt())
            .fold(0.0f64, f64::max)
            .max(1e-9);
        let alpha = if first_drawn {
            CONE_ALPHA_FURTHEST
        } else {
            CONE_ALPHA_NEAR
        };
        first_drawn = false;
        for y in 0..height {
            for x in 0..width {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                let d = (dx * dx + dy * dy).sqrt();
                let inside = if d < 1e-9 {
                    true
                } else {
                    (dx * ux + dy * uy) / d >= cos_half
                };
                if inside {
                    let intensity = conf * (1.0 - (1.0 - CONE_BORDER_FRACTION) * d / max_d);
                    let cell = &mut acc[y * width + x];
                    *cell = alpha * intensity + (1.0 - alpha) * *cell;
                }
            }
        }
    }

    let mut gray = Tensor::from_vec(&[height, width], acc).unwrap();
    let mx = gray.max();
    if mx > 0.0 {
        gray = gray.map(|v| v / mx);
    }
    (gray, skipped)
}

/// Gaze-direction cone map, jet-colormapped: `[3, H, W]`.
pub fn render_cone_map(height: usize, width: usize, faces: &[FaceDetection]) -> Tensor {
    let (gray, _) = cone_gray(height, width, faces);
    jet_colormap(&gray).0
}

/// Mean of per-face gaze-target heatmaps, resized to the frame.
pub fn gf_gray(height: usize, width: usize, faces: &[FaceDetection]) -> Result<Tensor> {
    let mut acc = Tensor::zeros(&[height, width]);
    let mut count = 0usize;
    for f in faces {
        if let Some(hm) = &f.gaze_target_heatmap {
            let t = resize_bilinear(&hm.to_tensor()?, height, width)?;
            acc.add_assign(&t)?;
            count += 1;
        }
    }
    if count > 0 {
        let inv = 1.0 / count as f64;
        acc = acc.map(|v| v * inv);
    }
    Ok(minmax_normalize(&acc))
}

/// Gaze-following map (overlaid mean fixation heatmaps), jet-colormapped.
pub fn render_gf_map(height: usize, width: usize, faces: &[FaceDetection]) -> Result<Tensor> {
    Ok(jet_colormap(&gf_gray(height, width, faces)?).0)
}

/// Hann-filtered expression grids pasted at the face positions.
pub fn fer_gray(height: usize, width: usize, faces: &[FaceDetection]) -> Result<Tensor> {
    let mut acc = Tensor::zeros(&[height, width]);
    for f in faces {
        let (x, y, w, h) = f.bbox;
        let bw = (w.round() as usize).max(1);
        let bh = (h.round() as usize).max(1);
        let grid = resize_bilinear(&f.expression_grid.to_tensor()?, bh, bw)?;
        let window = hanning2d(bh, bw);
        let filtered = grid.zip(&window, |g, wv| g * wv)?;
        let x0 = x.round() as isize;
        let y0 = y.round() as isize;
        let dst = acc.make_mut();
        for gy in 0..bh {
            let yy = y0 + gy as isize;
            if yy < 0 || yy >= height as isize {
                continue;
            }
            for gx in 0..bw {
                let xx = x0 + gx as isize;
                if xx < 0 || xx >= width as isize {
                    continue;
                }
                dst[yy as usize * width + xx as usize] += filtered.as_slice()[gy * bw + gx];
            }
        }
    }
    Ok(minmax_normalize(&acc))
}

/// Affect map, jet-colormapped.
pub fn render_fer_map(height: usize, width: usize, faces: &[FaceDetection]) -> Result<Tensor> {
    Ok(jet_colormap(&fer_gray(height, width, faces)?).0)
}

/// A time-ordered stack of 3-channel maps for one modality.
#[derive(Clone, Debug)]
pub struct ModalityClip {
    pub modality: Modality,
    /// `[T, 3, H, W]`
    pub frames: Tensor,
    pub standardized: bool,
    /// Set when standardization hit a (near-)constant clip.
    pub degenerate: bool,
}

impl ModalityClip {
    pub fn new(modality: Modality, frames: Tensor) -> Result<Self> {
        let s = frames.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::shape(format!(
                "ModalityClip: expected [T,3,H,W], got {s:?}"
            )));
        }
        Ok(ModalityClip {
            modality,
            frames,
            standardized: false,
            degenerate: false,
        })
    }

    /// Standardize the whole clip to mean 0 / std 1 (population). A clip with
    /// std below 1e-8 becomes all zeros and is flagged degenerate.
    pub fn standardize(&self) -> ModalityClip {
        let mean = self.frames.mean();
        let std = self.frames.var().sqrt();
        if std < 1e-8 {
            return ModalityClip {
                modality: self.modality,
                frames: Tensor::zeros(self.frames.shape()),
                standardized: true,
                degenerate: true,
            };
        }
        ModalityClip {
            modality: self.modality,
            frames: self.frames.map(|v| (v - mean) / std),
            standardized: true,
            degenerate: false,
        }
    }
}
