//! Scene scripts: who is where, looking at what, feeling how much.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Scene difficulty presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenePreset {
    /// One motionless actor, wandering gaze.
    SingleStatic,
    /// Two actors that intermittently look at each other.
    TwoGazers,
    /// 1-3 actors, mixed gaze targets and expression bursts.
    Social,
}

impl ScenePreset {
    pub fn parse(s: &str) -> Result<ScenePreset> {
        match s {
            "single-static" => Ok(ScenePreset::SingleStatic),
            "two-gazers" => Ok(ScenePreset::TwoGazers),
            "social" => Ok(ScenePreset::Social),
            other => Err(Error::config(format!(
                "unknown scene preset {other:?} (single-static | two-gazers | social)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScenePreset::SingleStatic => "single-static",
            ScenePreset::TwoGazers => "two-gazers",
            ScenePreset::Social => "social",
        }
    }
}

/// Simulated observer pool driving the ground-truth fixations.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObserverModel {
    pub n_observers: usize,
    pub w_face: f64,
    pub w_gazetarget: f64,
    pub w_expression: f64,
    /// Fixation jitter in pixels.
    pub noise_sigma: f64,
    /// Gaussian blur of the fixation histogram, in pixels.
    pub fdm_sigma: f64,
}

impl ObserverModel {
    /// Defaults scaled to the frame size (blur of 4 px at 120 px frames).
    pub fn for_dims(height: usize, width: usize) -> Self {
        let scale = height.min(width) as f64 / 120.0;
        ObserverModel {
            n_observers: 12,
            w_face: 0.4,
            w_gazetarget: 0.4,
            w_expression: 0.2,
            noise_sigma: 2.0 * scale,
            fdm_sigma: 4.0 * scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ws = [self.w_face, self.w_gazetarget, self.w_expression];
        if ws.iter().any(|&w| w < 0.0) || ws.iter().sum::<f64>() <= 0.0 {
            return Err(Error::config(
                "observer weights must be nonnegative and not all zero",
            ));
        }
        Ok(())
    }
}

/// One actor's per-frame script.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ActorScript {
    /// (x, y, w, h) per frame, inside the frame bounds.
    pub bboxes: Vec<(f64, f64, f64, f64)>,
    /// (azimuth, pitch, confidence) per frame.
    pub gaze: Vec<(f64, f64, f64)>,
    /// Gaze target point (x, y) per frame, when the gaze is aimed at one.
    pub gaze_targets: Vec<Option<(f64, f64)>>,
    /// Expression intensity in [0, 1] per frame.
    pub expression: Vec<f64>,
    /// Flat body color for rendering.
    pub color: [f64; 3],
}

impl ActorScript {
    pub fn centroid(&self, t: usize) -> (f64, f64) {
        let (x, y, w, h) = self.bboxes[t];
        (x + w * 0.5, y + h * 0.5)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneScript {
    pub seed: u64,
    pub preset: ScenePreset,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub actors: Vec<ActorScript>,
    pub observer: ObserverModel,
    /// When false, the gaze-following detector in this scene is broken:
    /// emitted target heatmaps land at random positions while observers keep
    /// following the true targets. Gated models can learn to discount the
    /// stream per scene; an unweighted sum cannot.
    pub gf_reliable: bool,
}

/// Gaze angles whose image-plane projection points along the unit vector
/// (ux, uy); the fixed depth tilt keeps the projection well-defined.
pub fn gaze_angles_towards(ux: f64, uy: f64) -> (f64, f64) {
    const TILT: f64 = 0.8;
    let pitch = (uy * TILT).asin();
    let az = (ux * TILT / pitch.cos()).clamp(-1.0, 1.0).acos();
    (az, pitch)
}

/// Catmull-Rom interpolation through control points, clamped at the ends.
fn spline(points: &[(f64, f64)], t: f64) -> (f64, f64) {
    let n = points.len();
    debug_assert!(n >= 2);
    let seg = t * (n - 1) as f64;
    let i = (seg.floor() as usize).min(n - 2);
    let u = seg - i as f64;
    let p = |j: isize| points[j.clamp(0, n as isize - 1) as usize];
    let (p0, p1, p2, p3) = (p(i as isize - 1), p(i as isize), p(i as isize + 1), p(i as isize + 2));
    let cr = |a: f64, b: f64, c: f64, d: f64| {
        0.5 * ((2.0 * b)
            + (-a + c) * u
            + (2.0 * a - 5.0 * b + 4.0 * c - d) * u * u
            + (-a + 3.0 * b - 3.0 * c + d) * u * u * u)
    };
    (cr(p0.0, p1.0, p2.0, p3.0), cr(p0.1, p1.1, p2.1, p3.1))
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Build one actor: a smooth trajectory plus empty schedules to fill in.
fn actor_shell(
    rng: &mut Stream,
    frames: usize,
    height: usize,
    width: usize,
    motionless: bool,
) -> ActorScript {
    let dim = height.min(width) as f64;
    let size = rng.range(0.20, 0.30) * dim;
    let margin_x = (width as f64 - size).max(1.0);
    let margin_y = (height as f64 - size).max(1.0);
    let n_ctrl = if motionless { 1 } else { 4 };
    let ctrl: Vec<(f64, f64)> = (0..n_ctrl)
        .map(|_| (rng.uniform() * margin_x, rng.uniform() * margin_y))
        .collect();
    let bboxes = (0..frames)
        .map(|t| {
            let (x, y) = if motionless {
                ctrl[0]
            } else {
                let tt = t as f64 / (frames - 1).max(1) as f64;
                spline(&ctrl, tt)
            };
            (
                x.clamp(0.0, margin_x),
                y.clamp(0.0, margin_y),
                size,
                size,
            )
        })
        .collect();
    let color = [
        rng.range(0.3, 0.95),
        rng.range(0.3, 0.95),
        rng.range(0.3, 0.95),
    ];
    ActorScript {
        bboxes,
        gaze: vec![(0.0, 0.0, 1.0); frames],
        gaze_targets: vec![None; frames],
        expression: vec![0.0; frames],
        color,
    }
}

/// Fill gaze schedules: alternating "target" segments (aimed at another
/// actor or a scripted point) and wander segments.
fn schedule_gaze(
    rng: &mut Stream,
    actors: &mut [ActorScript],
    frames: usize,
    height: usize,
    width: usize,
    mutual_pairs: bool,
) {
    let n = actors.len();
    for a in 0..n {
        let mut t = 0usize;
        let mut wander_az = rng.range(0.0, std::f64::consts::PI);
        let mut wander_pitch = rng.range(-0.5, 0.5);
        while t < frames {
            let seg = rng.below(12) + 6; // 6..18 frame segments
            let end = (t + seg).min(frames);
            let conf = rng.range(0.35, 1.0);
            // target segment when another actor exists (or a scripted point)
            let aim_at_actor = n > 1 && (mutual_pairs || rng.uniform() < 0.5);
            let off_actor_target = !aim_at_actor && rng.uniform() < 0.5;
            let target_actor = if aim_at_actor {
                let mut other = rng.below(n - 1);
                if other >= a {
                    other += 1;
                }
                Some(other)
            } else {
                None
            };
            let fixed_point = off_actor_target.then(|| {
                (
                    rng.uniform() * (width as f64 - 1.0),
                    rng.uniform() * (height as f64 - 1.0),
                )
            });
            for ti in t..end {
                let (cx, cy) = actors[a].centroid(ti);
                let target = match (target_actor, fixed_point) {
                    (Some(b), _) => Some(actors[b].centroid(ti)),
                    (None, Some(p)) => Some(p),
                    _ => None,
                };
                match target {
                    Some((tx, ty)) => {
                        let (dx, dy) = (tx - cx, ty - cy);
                        let norm = (dx * dx + dy * dy).sqrt().max(1e-6);
                        let (az, pitch) = gaze_angles_towards(dx / norm, dy / norm);
                        actors[a].gaze[ti] = (az, pitch, conf);
                        actors[a].gaze_targets[ti] = Some((tx, ty));
                    }
                    None => {
                        wander_az += rng.range(-0.08, 0.08);
                        wander_pitch = (wander_pitch + rng.range(-0.05, 0.05)).clamp(-0.9, 0.9);
                        actors[a].gaze[ti] = (wander_az, wander_pitch, conf);
                        actors[a].gaze_targets[ti] = None;
                    }
                }
            }
            t = end;
        }
    }
}

/// Expression bursts: ramp up, hold, ramp down.
fn schedule_expression(rng: &mut Stream, actor: &mut ActorScript, frames: usize) {
    let mut t = rng.below(8);
    while t < frames {
        let burst = rng.below(10) + 8;
        let peak = rng.range(0.6, 1.0);
        let end = (t + burst).min(frames);
        for ti in t..end {
            let u = (ti - t) as f64 / (burst - 1).max(1) as f64;
            // symmetric ramp peaking mid-burst
            let env = smoothstep(2.0 * u.min(1.0 - u) * 2.0);
            actor.expression[ti] = peak * env;
        }
        t = end + rng.below(10) + 4;
    }
}

/// Deterministic scene synthesis.
pub fn generate_scene(
    seed: u64,
    preset: ScenePreset,
    frames: usize,
    height: usize,
    width: usize,
) -> Result<SceneScript> {
    if frames == 0 || height < 8 || width < 8 {
        return Err(Error::config(format!(
            "scene too small: {frames} frames, {height}x{width}"
        )));
    }
    let mut rng = Stream::keyed(seed, &[0x5ce5e]);
    let (n_actors, motionless, mutual) = match preset {
        ScenePreset::SingleStatic => (1, true, false),
        ScenePreset::TwoGazers => (2, false, true),
        ScenePreset::Social => (1 + rng.below(3), false, false),
    };
    let mut actors: Vec<ActorScript> = (0..n_actors)
        .map(|_| actor_shell(&mut rng, frames, height, width, motionless))
        .collect();
    schedule_gaze(&mut rng, &mut actors, frames, height, width, mutual);
    for a in actors.iter_mut() {
        match preset {
            ScenePreset::SingleStatic => {} // neutral face
            _ => schedule_expression(&mut rng, a, frames),
        }
    }
    // half of the free-form scenes ship a broken gaze-following detector
    let gf_reliable = match preset {
        ScenePreset::Social => rng.uniform() < 0.5,
        _ => true,
    };
    let observer = ObserverModel::for_dims(height, width);
    observer.validate()?;
    Ok(SceneScript {
        seed,
        preset,
        frames,
        height,
        width,
        actors,
        observer,
        gf_reliable,
    })
}
