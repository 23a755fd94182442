//! Dataset layout on disk.
//!
//! ```text
//! out/
//!   manifest.json                 dataset-level manifest
//!   scenes/scene_0000/
//!     scene.json                  per-scene manifest (seed, dims, preset)
//!     detections.jsonl            one DetectionRecord per frame
//!     frames.gtf                  [T,3,H,W] rendered frames
//!     fdm.gtf                     [T,H,W] fixation densities
//!     fixations.csv               frame,row,col,observer
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cuemap::{read_records_jsonl, write_records_jsonl, DetectionRecord};
use crate::error::{Error, Result};
use crate::gtf;
use crate::metrics::FixationData;
use crate::tensor::Tensor as TensorOf;

use super::emit::{emit_detections, render_frame, simulate_fixations};
use super::scene::{generate_scene, ScenePreset, SceneScript};

type Tensor = TensorOf<f64>;

/// Dataset-scale presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GenPreset {
    /// 24x24 maps, quick enough for CI and smoke training.
    Tiny,
    /// 120x120 maps at the pipeline's native resolution.
    Full,
}

impl GenPreset {
    pub fn parse(s: &str) -> Result<GenPreset> {
        match s {
            "tiny" => Ok(GenPreset::Tiny),
            "full" => Ok(GenPreset::Full),
            other => Err(Error::config(format!(
                "unknown preset {other:?} (tiny | full)"
            ))),
        }
    }

    pub fn dims(self) -> (usize, usize) {
        match self {
            GenPreset::Tiny => (24, 24),
            GenPreset::Full => (120, 120),
        }
    }

    pub fn scenes(self) -> usize {
        match self {
            GenPreset::Tiny => 10,
            GenPreset::Full => 8,
        }
    }

    pub fn frames_per_scene(self) -> usize {
        match self {
            GenPreset::Tiny => 72,
            GenPreset::Full => 96,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneEntry {
    pub id: usize,
    pub seed: u64,
    pub dir: String,
    pub preset: ScenePreset,
    pub n_actors: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub preset: GenPreset,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub frames_per_scene: usize,
    pub scenes: Vec<SceneEntry>,
}

/// Scene difficulty cycle across the dataset.
fn difficulty_for(index: usize) -> ScenePreset {
    match index % 4 {
        0 | 2 => ScenePreset::Social,
        1 => ScenePreset::TwoGazers,
        _ => ScenePreset::SingleStatic,
    }
}

/// Generate and write a dataset; returns its manifest.
pub fn generate_dataset(out: &Path, preset: GenPreset, seed: u64) -> Result<DatasetManifest> {
    let (h, w) = preset.dims();
    let frames = preset.frames_per_scene();
    let scenes_dir = out.join("scenes");
    fs::create_dir_all(&scenes_dir)?;

    let mut entries = Vec::new();
    for i in 0..preset.scenes() {
        let scene_seed = seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(i as u64);
        let script = generate_scene(scene_seed, difficulty_for(i), frames, h, w)?;
        let dir = scenes_dir.join(format!("scene_{i:04}"));
        write_scene(&dir, &script)?;
        entries.push(SceneEntry {
            id: i,
            seed: scene_seed,
            dir: format!("scenes/scene_{i:04}"),
            preset: script.preset,
            n_actors: script.actors.len(),
        });
    }
    let manifest = DatasetManifest {
        version: 1,
        preset,
        seed,
        height: h,
        width: w,
        frames_per_scene: frames,
        scenes: entries,
    };
    fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

fn write_scene(dir: &Path, script: &SceneScript) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("scene.json"), serde_json::to_string_pretty(script)?)?;

    let records = emit_detections(script, 0.0);
    write_records_jsonl(&dir.join("detections.jsonl"), &records)?;

    let (h, w) = (script.height, script.width);
    let mut frames = Vec::with_capacity(script.frames * 3 * h * w);
    for t in 0..script.frames {
        frames.extend_from_slice(render_frame(script, t).as_slice());
    }
    gtf::save(
        &dir.join("frames.gtf"),
        &Tensor::from_vec(&[script.frames, 3, h, w], frames)?,
    )?;

    let fixations = simulate_fixations(script)?;
    let mut fdms = Vec::with_capacity(script.frames * h * w);
    for f in &fixations {
        fdms.extend_from_slice(f.fdm.as_slice());
    }
    gtf::save(
        &dir.join("fdm.gtf"),
        &Tensor::from_vec(&[script.frames, h, w], fdms)?,
    )?;

    let mut csv = String::from("frame,row,col,observer\n");
    for f in &fixations {
        for (o, &(row, col)) in f.points.iter().enumerate() {
            csv.push_str(&format!("{},{},{},{}\n", f.frame, row, col, o));
        }
    }
    let mut file = fs::File::create(dir.join("fixations.csv"))?;
    file.write_all(csv.as_bytes())?;
    Ok(())
}

/// A scene loaded back from disk.
pub struct LoadedScene {
    pub script: SceneScript,
    pub records: Vec<DetectionRecord>,
    /// `[T,3,H,W]`
    pub frames: Tensor,
    /// Ground truth per frame.
    pub fixations: Vec<FixationData>,
}

pub fn load_dataset(dir: &Path) -> Result<DatasetManifest> {
    let manifest: DatasetManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    Ok(manifest)
}

pub fn load_scene(dataset_dir: &Path, entry: &SceneEntry) -> Result<LoadedScene> {
    load_scene_dir(&dataset_dir.join(&entry.dir))
}

/// Load a scene from its directory (the one holding `scene.json`).
pub fn load_scene_dir(dir: &Path) -> Result<LoadedScene> {
    let dir: PathBuf = dir.to_path_buf();
    let script: SceneScript = serde_json::from_str(&fs::read_to_string(dir.join("scene.json"))?)?;
    let records = read_records_jsonl(&dir.join("detections.jsonl"))?;
    let frames: Tensor = gtf::load(&dir.join("frames.gtf"))?;
    let fdms: Tensor = gtf::load(&dir.join("fdm.gtf"))?;
    let (h, w) = (script.height, script.width);
    if fdms.shape() != [script.frames, h, w] {
        return Err(Error::Format(format!(
            "fdm.gtf shape {:?} does not match scene dims",
            fdms.shape()
        )));
    }

    let mut points_per_frame: Vec<Vec<(usize, usize)>> = vec![Vec::new(); script.frames];
    let csv = fs::read_to_string(dir.join("fixations.csv"))?;
    for (ln, line) in csv.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(Error::Format(format!(
                "fixations.csv line {}: expected 4 columns",
                ln + 1
            )));
        }
        let parse = |s: &str| -> Result<usize> {
            s.trim()
                .parse()
                .map_err(|_| Error::Format(format!("fixations.csv line {}: bad number", ln + 1)))
        };
        let frame = parse(cols[0])?;
        if frame >= script.frames {
            return Err(Error::Format(format!(
                "fixations.csv line {}: frame {frame} out of range",
                ln + 1
            )));
        }
        points_per_frame[frame].push((parse(cols[1])?, parse(cols[2])?));
    }

    let plane = h * w;
    let fixations = (0..script.frames)
        .map(|t| {
            let fdm = Tensor::from_vec(
                &[h, w],
                fdms.as_slice()[t * plane..(t + 1) * plane].to_vec(),
            )?;
            let fx = FixationData {
                frame: t,
                fdm,
                points: points_per_frame[t].clone(),
            };
            fx.validate()?;
            Ok(fx)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(LoadedScene {
        script,
        records,
        frames,
        fixations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hash_dir(dir: &Path) -> u64 {
        let mut entries: Vec<PathBuf> = walk(dir);
        entries.sort();
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for e in entries {
            for b in fs::read(&e).unwrap() {
                h ^= b as u64;
                h = h.wrapping_mul(0x1000_0000_01b3);
            }
        }
        h
    }

    fn walk(dir: &Path) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                out.extend(walk(&p));
            } else {
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn roundtrip_and_byte_reproducibility() {
        let base = std::env::temp_dir().join("synth_dataset_test");
        fs::remove_dir_all(&base).ok();
        let d1 = base.join("a");
        let d2 = base.join("b");

        // shrink the preset work by generating only via the entry API once
        let m1 = generate_dataset(&d1, GenPreset::Tiny, 77).unwrap();
        let m2 = generate_dataset(&d2, GenPreset::Tiny, 77).unwrap();
        assert_eq!(hash_dir(&d1), hash_dir(&d2));
        assert_eq!(m1.scenes.len(), 10);

        let loaded = load_scene(&d1, &m1.scenes[0]).unwrap();
        assert_eq!(loaded.frames.shape(), &[72, 3, 24, 24]);
        assert_eq!(loaded.records.len(), 72);
        assert_eq!(loaded.fixations.len(), 72);
        for f in &loaded.fixations {
            assert_eq!(f.points.len(), 12);
        }

        let re = load_dataset(&d1).unwrap();
        assert_eq!(re.scenes.len(), m1.scenes.len());
        fs::remove_dir_all(&base).ok();
    }

    #[test]
    fn difficulty_cycle_covers_presets() {
        let kinds: Vec<ScenePreset> = (0..8).map(difficulty_for).collect();
        assert!(kinds.contains(&ScenePreset::Social));
        assert!(kinds.contains(&ScenePreset::TwoGazers));
        assert!(kinds.contains(&ScenePreset::SingleStatic));
    }
}
