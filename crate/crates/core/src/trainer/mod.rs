//! Training, evaluation, ablation and contribution reporting.

mod pipeline;

pub use pipeline::{
    emission_indices, render_modality_map, AblationMask, BatchData, Pipeline, PreparedScene,
};

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{
    GaspModel, GateAccumulator, GateReport, ModelConfig, Variant, VALID_CONTEXTS,
};
use crate::losses::{loss_dam, loss_total, LossWeights};
use crate::metrics::{self, MetricSet, Point};
use crate::optim::Adam;
use crate::rng::Stream;
use crate::synth::DatasetManifest;
use crate::tape::Tape;
use crate::tensor::Tensor as TensorOf;

type Tensor = TensorOf<f64>;

/// Negative fixations drawn per frame for the shuffled-AUC metric.
pub const SAUC_NEGATIVES_PER_FRAME: usize = 100;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    pub context: usize,
    pub dam: bool,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub sp_quality: f64,
    pub ablate: AblationMask,
    pub trials: usize,
    /// Steps between direct-stream weight syncs (1 = every step).
    pub tie_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Gmu,
            context: 1,
            dam: false,
            iterations: 2000,
            batch_size: 4,
            lr: 0.001,
            seed: 1,
            sp_quality: 0.7,
            ablate: AblationMask::none(),
            trials: 1,
            tie_interval: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if self.trials == 0 {
            return Err(Error::config("trials must be at least 1"));
        }
        if self.tie_interval == 0 {
            return Err(Error::config("tie interval must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.sp_quality) {
            return Err(Error::config("sp quality must lie in [0, 1]"));
        }
        if !VALID_CONTEXTS.contains(&self.context) {
            return Err(Error::config(format!(
                "context {} not in {VALID_CONTEXTS:?}",
                self.context
            )));
        }
        Ok(())
    }

    pub fn model_config(&self, height: usize, width: usize) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            context: self.context,
            dam: self.dam,
            height,
            width,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub total: f64,
    pub ce: f64,
    pub cc: f64,
    pub nss: f64,
    pub dam: f64,
}

/// Aggregated evaluation of one trained model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub metrics: MetricSet,
    pub frames_evaluated: usize,
    pub final_loss: f64,
    /// Reported on stdout only; excluded from artifacts so reruns are
    /// byte-identical.
    #[serde(skip)]
    pub wall_secs: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: Variant,
    pub context: usize,
    pub dam: bool,
    pub trials: Vec<TrialResult>,
    pub mean: MetricSet,
    /// Per-metric standard deviation; present only with 2+ trials.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std: Option<MetricSet>,
    #[serde(skip)]
    pub gates: Option<GateReport>,
}

impl RunReport {
    pub fn from_trials(
        variant: Variant,
        context: usize,
        dam: bool,
        trials: Vec<TrialResult>,
        gates: Option<GateReport>,
    ) -> RunReport {
        let n = trials.len() as f64;
        let mut mean = MetricSet::default();
        let sum = |f: fn(&MetricSet) -> f64, ts: &[TrialResult]| -> f64 {
            ts.iter().map(|t| f(&t.metrics)).sum::<f64>()
        };
        mean.auc_j = sum(|m| m.auc_j, &trials) / n;
        mean.sauc = sum(|m| m.sauc, &trials) / n;
        mean.cc = sum(|m| m.cc, &trials) / n;
        mean.nss = sum(|m| m.nss, &trials) / n;
        mean.sim = sum(|m| m.sim, &trials) / n;
        let std = (trials.len() >= 2).then(|| {
            let mut s = MetricSet::default();
            let dev = |f: fn(&MetricSet) -> f64, mu: f64| -> f64 {
                (trials.iter().map(|t| (f(&t.metrics) - mu).powi(2)).sum::<f64>()
                    / (n - 1.0))
                    .sqrt()
            };
            s.auc_j = dev(|m| m.auc_j, mean.auc_j);
            s.sauc = dev(|m| m.sauc, mean.sauc);
            s.cc = dev(|m| m.cc, mean.cc);
            s.nss = dev(|m| m.nss, mean.nss);
            s.sim = dev(|m| m.sim, mean.sim);
            s
        });
        RunReport {
            variant,
            context,
            dam,
            trials,
            mean,
            std,
            gates,
        }
    }
}

pub struct TrainOutcome {
    pub model: GaspModel,
    pub loss_curve: Vec<LossRecord>,
    pub final_loss: f64,
    pub wall_secs: f64,
}

/// Train one model on the pipeline's training split. Deterministic for a
/// fixed (config, dataset) pair.
pub fn train(pipeline: &Pipeline, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let mcfg = cfg.model_config(pipeline.height, pipeline.width);
    let mut model = GaspModel::build(mcfg, cfg.seed)?;
    let mut adam = Adam::new(cfg.lr);
    let weights = LossWeights::default();
    let mut curve = Vec::with_capacity(cfg.iterations);
    let mut final_loss = f64::NAN;

    for step in 0..cfg.iterations {
        let mut rng = Stream::keyed(cfg.seed, &[0xba7c4, step as u64]);
        let samples: Vec<(usize, usize)> = (0..cfg.batch_size)
            .map(|_| {
                let scene = pipeline.train_scenes[rng.below(pipeline.train_scenes.len())];
                let f = pipeline.frames_in(scene);
                let t_end = cfg.context - 1 + rng.below(f - cfg.context + 1);
                (scene, t_end)
            })
            .collect();
        let batch = pipeline.batch(&samples, cfg.context)?;

        let mut tape = Tape::new();
        let fwd = model
            .forward(&mut tape, &batch.input, true)
            .map_err(|e| Error::numeric(format!("step {step}: forward failed: {e}")))?;
        let main_loss = loss_total(&mut tape, fwd.pred, &batch.fdm_final, &batch.points, &weights)
            .map_err(|e| Error::numeric(format!("step {step}: prediction loss: {e}")))?;
        let mut total = main_loss.total;
        let mut dam_value = 0.0;
        if cfg.dam {
            let dam_loss = loss_dam(&mut tape, &fwd.dam_preds, &batch.fdm_per_t, &weights)
                .map_err(|e| Error::numeric(format!("step {step}: attention loss: {e}")))?;
            dam_value = tape.value(dam_loss).as_slice()[0];
            total = tape.add(total, dam_loss)?;
        }
        let total_value = tape.value(total).as_slice()[0];
        if !total_value.is_finite() {
            return Err(Error::numeric(format!(
                "step {step}: loss went non-finite (ce {:.4}, cc {:.4}, nss {:?}, dam {dam_value:.4})",
                main_loss.ce, main_loss.cc, main_loss.nss
            )));
        }

        let mut grads = tape
            .backward(total)
            .map_err(|e| Error::numeric(format!("step {step}: backward failed: {e}")))?;
        adam.step(&mut model.params, |pid| {
            fwd.bindings.node(pid).and_then(|node| grads.take(node))
        })?;
        if (step + 1) % cfg.tie_interval == 0 {
            model.tie_sync()?;
        }

        final_loss = total_value;
        curve.push(LossRecord {
            step,
            total: total_value,
            ce: main_loss.ce,
            cc: main_loss.cc,
            nss: main_loss.nss.unwrap_or(f64::NAN),
            dam: dam_value,
        });
    }
    // leave the streams consistent even with a coarser sync cadence
    model.tie_sync()?;

    Ok(TrainOutcome {
        model,
        loss_curve: curve,
        final_loss,
        wall_secs: started.elapsed().as_secs_f64(),
    })
}

/// Negative pool for the shuffled AUC: fixation points pooled from the other
/// evaluation scenes, sampled deterministically per frame.
fn sauc_negatives(
    pipeline: &Pipeline,
    eval_scenes: &[usize],
    scene: usize,
    frame: usize,
    dataset_seed: u64,
) -> Vec<Point> {
    let mut pool: Vec<Point> = Vec::new();
    for &other in eval_scenes {
        if other == scene {
            continue;
        }
        for fx in &pipeline.scenes[other].fixations {
            pool.extend_from_slice(&fx.points);
        }
    }
    if pool.is_empty() {
        // single-scene split: fall back to this scene's other frames
        for fx in &pipeline.scenes[scene].fixations {
            if fx.frame != frame {
                pool.extend_from_slice(&fx.points);
            }
        }
    }
    let mut rng = Stream::keyed(dataset_seed, &[0x5a0c, scene as u64, frame as u64]);
    (0..SAUC_NEGATIVES_PER_FRAME)
        .map(|_| pool[rng.below(pool.len())])
        .collect()
}

pub struct EvalOutcome {
    pub metrics: MetricSet,
    pub per_frame: Vec<MetricSet>,
    pub gates: Option<GateReport>,
}

/// Run every metric over the evaluation split.
pub fn evaluate(
    model: &mut GaspModel,
    pipeline: &Pipeline,
    dataset_seed: u64,
    batch_size: usize,
) -> Result<EvalOutcome> {
    let context = model.cfg.context;
    let (h, w) = (pipeline.height, pipeline.width);
    let plane = h * w;
    let mut per_frame = Vec::new();
    let mut gate_acc = GateAccumulator::new();

    for &scene in &pipeline.eval_scenes {
        let frames = pipeline.frames_in(scene);
        let t_ends: Vec<usize> = (context - 1..frames).collect();
        for chunk in t_ends.chunks(batch_size.max(1)) {
            let samples: Vec<(usize, usize)> = chunk.iter().map(|&t| (scene, t)).collect();
            let batch = pipeline.batch(&samples, context)?;
            let mut tape = Tape::new();
            let fwd = model.forward(&mut tape, &batch.input, false)?;
            gate_acc.add(&tape, &fwd.gates);
            let pred = tape.value(fwd.pred);
            for (bi, &t_end) in chunk.iter().enumerate() {
                let map = Tensor::from_vec(
                    &[h, w],
                    pred.as_slice()[bi * plane..(bi + 1) * plane].to_vec(),
                )?;
                let fx = &pipeline.scenes[scene].fixations[t_end];
                let negatives =
                    sauc_negatives(pipeline, &pipeline.eval_scenes, scene, t_end, dataset_seed);
                per_frame.push(MetricSet {
                    auc_j: metrics::auc_judd(&map, &fx.points)?,
                    sauc: metrics::sauc(&map, &fx.points, &negatives)?,
                    cc: metrics::cc(&map, &fx.fdm)?,
                    nss: metrics::nss(&map, &fx.points)?,
                    sim: metrics::sim(&map, &fx.fdm)?,
                });
            }
        }
    }

    let n = per_frame.len() as f64;
    let mut mean = MetricSet::default();
    for m in &per_frame {
        mean.auc_j += m.auc_j / n;
        mean.sauc += m.sauc / n;
        mean.cc += m.cc / n;
        mean.nss += m.nss / n;
        mean.sim += m.sim / n;
    }
    let gates = if model.cfg.variant.is_gated() {
        Some(gate_acc.finalize()?)
    } else {
        None
    };
    Ok(EvalOutcome {
        metrics: mean,
        per_frame,
        gates,
    })
}

/// Train and evaluate `cfg.trials` models (seeds `seed..seed+trials`).
pub fn run_trials(
    dataset_dir: &Path,
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
) -> Result<(RunReport, Option<GaspModel>)> {
    cfg.validate()?;
    let pipeline = Pipeline::build(dataset_dir, manifest, cfg.sp_quality, &cfg.ablate)?;
    let mut trials = Vec::with_capacity(cfg.trials);
    let mut last_model = None;
    let mut gates = None;
    for trial in 0..cfg.trials {
        let mut trial_cfg = cfg.clone();
        trial_cfg.seed = cfg.seed + trial as u64;
        let started = Instant::now();
        let outcome = train(&pipeline, &trial_cfg)?;
        let mut model = outcome.model;
        let eval = evaluate(&mut model, &pipeline, manifest.seed, cfg.batch_size)?;
        trials.push(TrialResult {
            seed: trial_cfg.seed,
            metrics: eval.metrics,
            frames_evaluated: eval.per_frame.len(),
            final_loss: outcome.final_loss,
            wall_secs: started.elapsed().as_secs_f64(),
        });
        gates = eval.gates;
        last_model = Some(model);
    }
    Ok((
        RunReport::from_trials(cfg.variant, cfg.context, cfg.dam, trials, gates),
        last_model,
    ))
}

/// One ablation row: which social modalities were present, and the scores.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub ge: bool,
    pub gf: bool,
    pub fer: bool,
    pub report: RunReport,
}

/// The full 2^3 social-modality ablation table.
pub fn ablate(
    dataset_dir: &Path,
    manifest: &DatasetManifest,
    base: &TrainConfig,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(8);
    for bits in 0..8u8 {
        let mask = AblationMask {
            ge: bits & 4 == 0,
            gf: bits & 2 == 0,
            fer: bits & 1 == 0,
        };
        // mask lists what is REMOVED; the row reports what is PRESENT
        let mut cfg = base.clone();
        cfg.ablate = mask;
        let (report, _) = run_trials(dataset_dir, manifest, &cfg)?;
        rows.push(AblationRow {
            ge: !mask.ge,
            gf: !mask.gf,
            fer: !mask.fer,
            report,
        });
    }
    Ok(rows)
}

/// Gate contribution of an already-trained model on the evaluation split.
pub fn contribution(
    model: &mut GaspModel,
    dataset_dir: &Path,
    manifest: &DatasetManifest,
    sp_quality: f64,
    batch_size: usize,
) -> Result<GateReport> {
    if !model.cfg.variant.is_gated() {
        return Err(Error::Unsupported(format!(
            "variant {} has no gates to report",
            model.cfg.variant.name()
        )));
    }
    let pipeline = Pipeline::build(dataset_dir, manifest, sp_quality, &AblationMask::none())?;
    let eval = evaluate(model, &pipeline, manifest.seed, batch_size)?;
    eval.gates
        .ok_or_else(|| Error::Unsupported("no gate activity recorded".into()))
}
