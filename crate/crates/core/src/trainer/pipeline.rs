//! From on-disk scenes to model-ready stacks.
//!
//! Each scene becomes one fused `[F, 15, H, W]` tensor: per modality, frames
//! pass through the detector window buffer, the emitted record is rendered to
//! a 3-channel map, the per-scene clip is standardized, and masked modalities
//! are zeroed. Modality order in the stack is IMG, SP, GF, GE, FER.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::colormap::jet_colormap;
use crate::cuemap::{cone_gray, fer_gray, gf_gray, Modality, ModalityClip};
use crate::error::{Error, Result};
use crate::metrics::FixationData;
use crate::synth::{emit_sp_gray, load_scene, DatasetManifest, LoadedScene};
use crate::tensor::Tensor as TensorOf;
use crate::windowing::WindowBuffer;

type Tensor = TensorOf<f64>;

/// Which social modalities are zeroed out (IMG and SP always stay).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationMask {
    pub ge: bool,
    pub gf: bool,
    pub fer: bool,
}

impl AblationMask {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn all() -> Self {
        AblationMask {
            ge: true,
            gf: true,
            fer: true,
        }
    }

    pub fn masks_modality(&self, m: Modality) -> bool {
        match m {
            Modality::Ge => self.ge,
            Modality::Gf => self.gf,
            Modality::Fer => self.fer,
            Modality::Img | Modality::Sp => false,
        }
    }

    /// Parse a comma-separated list like `ge,fer`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut mask = AblationMask::none();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "ge" => mask.ge = true,
                "gf" => mask.gf = true,
                "fer" => mask.fer = true,
                other => {
                    return Err(Error::config(format!(
                        "unknown ablation target {other:?} (ge | gf | fer)"
                    )))
                }
            }
        }
        Ok(mask)
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.ge {
            parts.push("ge");
        }
        if self.gf {
            parts.push("gf");
        }
        if self.fer {
            parts.push("fer");
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }
}

/// One scene, rendered and standardized.
pub struct PreparedScene {
    /// `[F, 15, H, W]` standardized modality stack.
    pub stack: Tensor,
    pub fixations: Vec<FixationData>,
}

pub struct Pipeline {
    pub scenes: Vec<PreparedScene>,
    pub height: usize,
    pub width: usize,
    /// Scene indices for training and evaluation (80/20, keyed by the
    /// dataset seed so every model sees the same split).
    pub train_scenes: Vec<usize>,
    pub eval_scenes: Vec<usize>,
}

/// Windowed emission index per modality for every display frame.
pub fn emission_indices(frames: usize) -> Vec<Vec<usize>> {
    Modality::ALL
        .iter()
        .map(|&m| {
            let mut buf = WindowBuffer::for_modality(m);
            (0..frames).map(|t| buf.step(t)).collect()
        })
        .collect()
}

/// Render one modality's 3-channel map from its emitted source frame.
pub fn render_modality_map(
    scene: &LoadedScene,
    modality: Modality,
    src: usize,
    sp_quality: f64,
) -> Result<Tensor> {
    let script = &scene.script;
    let (h, w) = (script.height, script.width);
    let plane = h * w;
    Ok(match modality {
        Modality::Img => Tensor::from_vec(
            &[3, h, w],
            scene.frames.as_slice()[src * 3 * plane..(src + 1) * 3 * plane].to_vec(),
        )?,
        Modality::Sp => {
            let gray = emit_sp_gray(script, &scene.fixations[src].fdm, src, sp_quality)?;
            jet_colormap(&gray).0
        }
        Modality::Gf => jet_colormap(&gf_gray(h, w, &scene.records[src].faces)?).0,
        Modality::Ge => jet_colormap(&cone_gray(h, w, &scene.records[src].faces).0).0,
        Modality::Fer => jet_colormap(&fer_gray(h, w, &scene.records[src].faces)?).0,
    })
}

/// Render the five modality maps for every frame of a loaded scene.
fn render_scene_stack(scene: &LoadedScene, sp_quality: f64, mask: &AblationMask) -> Result<Tensor> {
    let script = &scene.script;
    let (h, w) = (script.height, script.width);
    let frames = script.frames;
    let plane = h * w;
    let emission = emission_indices(frames);

    // per-modality clip [F,3,H,W]
    let clips: Vec<ModalityClip> = Modality::ALL
        .par_iter()
        .map(|&m| {
            let mut data = Vec::with_capacity(frames * 3 * plane);
            for t in 0..frames {
                let src = emission[m.index()][t];
                let map = render_modality_map(scene, m, src, sp_quality)?;
                data.extend_from_slice(map.as_slice());
            }
            let clip = ModalityClip::new(m, Tensor::from_vec(&[frames, 3, h, w], data)?)?;
            let mut standardized = clip.standardize();
            if mask.masks_modality(m) {
                standardized.frames = Tensor::zeros(standardized.frames.shape());
            }
            Ok(standardized)
        })
        .collect::<Result<Vec<_>>>()?;

    // interleave into [F, 15, H, W]
    let mut stack = vec![0.0f64; frames * 15 * plane];
    for (mi, clip) in clips.iter().enumerate() {
        let src = clip.frames.as_slice();
        for t in 0..frames {
            for c in 0..3 {
                let dst_off = (t * 15 + mi * 3 + c) * plane;
                let src_off = (t * 3 + c) * plane;
                stack[dst_off..dst_off + plane].copy_from_slice(&src[src_off..src_off + plane]);
            }
        }
    }
    Tensor::from_vec(&[frames, 15, h, w], stack)
}

impl Pipeline {
    pub fn build(
        dataset_dir: &Path,
        manifest: &DatasetManifest,
        sp_quality: f64,
        mask: &AblationMask,
    ) -> Result<Pipeline> {
        let scenes: Vec<PreparedScene> = manifest
            .scenes
            .iter()
            .map(|entry| {
                let loaded = load_scene(dataset_dir, entry)?;
                let stack = render_scene_stack(&loaded, sp_quality, mask)?;
                Ok(PreparedScene {
                    stack,
                    fixations: loaded.fixations,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        // 80/20 split by scene, shuffled with the dataset seed
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        crate::rng::Stream::keyed(manifest.seed, &[0x5b117]).shuffle(&mut order);
        let n_train = ((scenes.len() as f64) * 0.8).round().max(1.0) as usize;
        let n_train = n_train.min(scenes.len().saturating_sub(1)).max(1);
        let (train, eval) = order.split_at(n_train);
        Ok(Pipeline {
            scenes,
            height: manifest.height,
            width: manifest.width,
            train_scenes: train.to_vec(),
            eval_scenes: eval.to_vec(),
        })
    }

    pub fn frames_in(&self, scene: usize) -> usize {
        self.scenes[scene].stack.shape()[0]
    }

    /// Copy a `[T, 15, H, W]` context window ending at `t_end` (inclusive).
    pub fn window(&self, scene: usize, t_end: usize, context: usize) -> Result<Vec<f64>> {
        let stack = &self.scenes[scene].stack;
        let f = stack.shape()[0];
        if t_end >= f || t_end + 1 < context {
            return Err(Error::shape(format!(
                "window: t_end {t_end} context {context} of {f} frames"
            )));
        }
        let per_frame: usize = stack.shape()[1..].iter().product();
        let lo = (t_end + 1 - context) * per_frame;
        let hi = (t_end + 1) * per_frame;
        Ok(stack.as_slice()[lo..hi].to_vec())
    }

    /// Assemble a batch: input `[B, T, 15, H, W]`, final-frame fdm
    /// `[B,1,H,W]`, per-sample points, and per-timestep fdm `[B,1,H,W]`.
    pub fn batch(
        &self,
        samples: &[(usize, usize)],
        context: usize,
    ) -> Result<BatchData> {
        let b = samples.len();
        let (h, w) = (self.height, self.width);
        let plane = h * w;
        let per_frame = 15 * plane;
        let mut input = Vec::with_capacity(b * context * per_frame);
        let mut fdm_final = Vec::with_capacity(b * plane);
        let mut fdm_per_t = vec![Vec::with_capacity(b * plane); context];
        let mut points = Vec::with_capacity(b);
        for &(scene, t_end) in samples {
            input.extend_from_slice(&self.window(scene, t_end, context)?);
            let fx = &self.scenes[scene].fixations;
            fdm_final.extend_from_slice(fx[t_end].fdm.as_slice());
            points.push(fx[t_end].points.clone());
            for (ti, dst) in fdm_per_t.iter_mut().enumerate() {
                let t = t_end + 1 - context + ti;
                dst.extend_from_slice(fx[t].fdm.as_slice());
            }
        }
        Ok(BatchData {
            input: Tensor::from_vec(&[b, context, 15, h, w], input)?,
            fdm_final: Tensor::from_vec(&[b, 1, h, w], fdm_final)?,
            fdm_per_t: fdm_per_t
                .into_iter()
                .map(|v| Tensor::from_vec(&[b, 1, h, w], v))
                .collect::<Result<Vec<_>>>()?,
            points,
        })
    }
}

pub struct BatchData {
    pub input: Tensor,
    pub fdm_final: Tensor,
    pub fdm_per_t: Vec<Tensor>,
    pub points: Vec<Vec<(usize, usize)>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, GenPreset};

    #[test]
    fn mask_parse_and_label() {
        let m = AblationMask::parse("ge,fer").unwrap();
        assert!(m.ge && m.fer && !m.gf);
        assert_eq!(m.label(), "ge+fer");
        assert!(AblationMask::parse("bogus").is_err());
        assert_eq!(AblationMask::parse("").unwrap(), AblationMask::none());
    }

    #[test]
    fn pipeline_builds_standardized_stacks_with_split() {
        let dir = std::env::temp_dir().join("pipeline_build_test");
        std::fs::remove_dir_all(&dir).ok();
        let manifest = generate_dataset(&dir, GenPreset::Tiny, 3).unwrap();
        let pipe = Pipeline::build(&dir, &manifest, 0.7, &AblationMask::none()).unwrap();
        assert_eq!(pipe.scenes.len(), 10);
        assert_eq!(pipe.train_scenes.len(), 8);
        assert_eq!(pipe.eval_scenes.len(), 2);
        // train and eval are disjoint and cover all scenes
        let mut all: Vec<usize> = pipe
            .train_scenes
            .iter()
            .chain(&pipe.eval_scenes)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());

        // per-modality standardization: mean 0 / unit variance per 3-channel clip
        let stack = &pipe.scenes[0].stack;
        let f = stack.shape()[0];
        let plane = 24 * 24;
        for m in 0..5 {
            let mut vals = Vec::new();
            for t in 0..f {
                for c in 0..3 {
                    let off = (t * 15 + m * 3 + c) * plane;
                    vals.extend_from_slice(&stack.as_slice()[off..off + plane]);
                }
            }
            let n = vals.len() as f64;
            let mean: f64 = vals.iter().sum::<f64>() / n;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6, "modality {m} mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "modality {m} var {var}");
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn ablation_zeroes_only_masked_modalities() {
        let dir = std::env::temp_dir().join("pipeline_mask_test");
        std::fs::remove_dir_all(&dir).ok();
        let manifest = generate_dataset(&dir, GenPreset::Tiny, 4).unwrap();
        let mask = AblationMask {
            ge: true,
            gf: false,
            fer: true,
        };
        let pipe = Pipeline::build(&dir, &manifest, 0.7, &mask).unwrap();
        let stack = &pipe.scenes[1].stack;
        let plane = 24 * 24;
        let f = stack.shape()[0];
        let channel_zero = |m: usize| -> bool {
            (0..f).all(|t| {
                (0..3).all(|c| {
                    let off = (t * 15 + m * 3 + c) * plane;
                    stack.as_slice()[off..off + plane].iter().all(|&v| v == 0.0)
                })
            })
        };
        // order IMG, SP, GF, GE, FER
        assert!(!channel_zero(0));
        assert!(!channel_zero(1));
        assert!(!channel_zero(2));
        assert!(channel_zero(3));
        assert!(channel_zero(4));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn batch_shapes_and_window_bounds() {
        let dir = std::env::temp_dir().join("pipeline_batch_test");
        std::fs::remove_dir_all(&dir).ok();
        let manifest = generate_dataset(&dir, GenPreset::Tiny, 5).unwrap();
        let pipe = Pipeline::build(&dir, &manifest, 1.0, &AblationMask::none()).unwrap();
        let batch = pipe.batch(&[(0, 5), (1, 10)], 4).unwrap();
        assert_eq!(batch.input.shape(), &[2, 4, 15, 24, 24]);
        assert_eq!(batch.fdm_final.shape(), &[2, 1, 24, 24]);
        assert_eq!(batch.fdm_per_t.len(), 4);
        assert_eq!(batch.points.len(), 2);
        assert!(pipe.window(0, 2, 4).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
