//! Command implementations behind the CLI.
//!
//! Everything here is deterministic for fixed inputs, seeds and output
//! directory: artifacts are byte-identical across runs (wall-clock numbers
//! are reported on stdout, never written into artifacts).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::colormap::jet_colormap;
use crate::cuemap::Modality;
use crate::error::{Error, Result};
use crate::fusion::{load_checkpoint, save_checkpoint, GateReport, Variant};
use crate::image::{hstack_panels, minmax_normalize, write_ppm};
use crate::metrics::MetricSet;
use crate::selfcheck;
use crate::synth::{self, GenPreset};
use crate::tensor::Tensor as TensorOf;
use crate::trainer::{
    self, emission_indices, render_modality_map, AblationRow, Pipeline, RunReport, TrainConfig,
};

type Tensor = TensorOf<f64>;

fn model_label(variant: Variant, dam: bool) -> String {
    if dam {
        format!("dam+{}", variant.name())
    } else {
        variant.name().to_string()
    }
}

/// `gen-data`: write a synthetic dataset.
pub fn gen_data(out: &Path, preset: GenPreset, seed: u64) -> Result<()> {
    let manifest = synth::generate_dataset(out, preset, seed)?;
    println!(
        "wrote {} scenes ({}x{}, {} frames each) to {}",
        manifest.scenes.len(),
        manifest.width,
        manifest.height,
        manifest.frames_per_scene,
        out.display()
    );
    Ok(())
}

/// `render`: the five modality maps of one frame, as PPM images.
pub fn render(scene_json: &Path, frame: usize, sp_quality: f64, out: &Path) -> Result<()> {
    let dir = scene_json
        .parent()
        .ok_or_else(|| Error::config("scene path has no parent directory"))?;
    let scene = synth::load_scene_dir(dir)?;
    if frame >= scene.script.frames {
        return Err(Error::config(format!(
            "frame {frame} out of range (scene has {})",
            scene.script.frames
        )));
    }
    fs::create_dir_all(out)?;
    let emission = emission_indices(scene.script.frames);
    for m in Modality::ALL {
        let src = emission[m.index()][frame];
        let map = render_modality_map(&scene, m, src, sp_quality)?;
        write_ppm(&out.join(format!("{}.ppm", m.name())), &map)?;
    }
    println!("wrote 5 modality maps for frame {frame} to {}", out.display());
    Ok(())
}

/// Side-by-side panel: input frame, prediction, ground truth (both
/// jet-colormapped after min-max normalization).
pub fn render_overlay(frame_rgb: &Tensor, prediction: &Tensor, fdm: &Tensor) -> Result<Tensor> {
    let pred_panel = jet_colormap(&minmax_normalize(prediction)).0;
    let fdm_panel = jet_colormap(&minmax_normalize(fdm)).0;
    hstack_panels(&[frame_rgb.clone(), pred_panel, fdm_panel])
}

fn metrics_csv_row(model: &str, context: usize, m: &MetricSet, seed: u64) -> String {
    format!(
        "{model},{context},{:.6},{:.6},{:.6},{:.6},{:.6},{seed}\n",
        m.auc_j, m.sauc, m.cc, m.nss, m.sim
    )
}

fn write_metrics_csv(path: &Path, report: &RunReport) -> Result<()> {
    let model = model_label(report.variant, report.dam);
    let mut csv = String::from("model,context,AUC-J,sAUC,CC,NSS,SIM,seed\n");
    for t in &report.trials {
        csv.push_str(&metrics_csv_row(&model, report.context, &t.metrics, t.seed));
    }
    fs::write(path, csv)?;
    Ok(())
}

fn print_report(report: &RunReport) {
    let m = &report.mean;
    println!(
        "{} ctx {}: AUC-J {:.4}  sAUC {:.4}  CC {:.4}  NSS {:.4}  SIM {:.4}  ({} trials)",
        model_label(report.variant, report.dam),
        report.context,
        m.auc_j,
        m.sauc,
        m.cc,
        m.nss,
        m.sim,
        report.trials.len()
    );
    if let Some(s) = &report.std {
        println!(
            "  std: AUC-J {:.4}  sAUC {:.4}  CC {:.4}  NSS {:.4}  SIM {:.4}",
            s.auc_j, s.sauc, s.cc, s.nss, s.sim
        );
    }
}

/// `train`: train (one or more trials), evaluate, write the checkpoint of
/// the last trial plus reports.
pub fn train(data: &Path, out: &Path, cfg: &TrainConfig) -> Result<RunReport> {
    let manifest = synth::load_dataset(data)?;
    fs::create_dir_all(out)?;

    // loss curve comes from a dedicated deterministic training pass of the
    // first trial seed; run_trials repeats it for the report
    let pipeline = Pipeline::build(data, &manifest, cfg.sp_quality, &cfg.ablate)?;
    let outcome = trainer::train(&pipeline, cfg)?;
    let mut curve = String::from("step,total,ce,cc,nss,dam\n");
    for r in &outcome.loss_curve {
        let _ = writeln!(
            curve,
            "{},{:.9},{:.9},{:.9},{:.9},{:.9}",
            r.step, r.total, r.ce, r.cc, r.nss, r.dam
        );
    }
    fs::write(out.join("loss_curve.csv"), curve)?;
    println!(
        "trained {} ctx {} for {} steps in {:.1}s (final loss {:.5})",
        model_label(cfg.variant, cfg.dam),
        cfg.context,
        cfg.iterations,
        outcome.wall_secs,
        outcome.final_loss
    );

    let mut model = outcome.model;
    let eval = trainer::evaluate(&mut model, &pipeline, manifest.seed, cfg.batch_size)?;
    let mut trials = vec![trainer::TrialResult {
        seed: cfg.seed,
        metrics: eval.metrics,
        frames_evaluated: eval.per_frame.len(),
        final_loss: outcome.final_loss,
        wall_secs: outcome.wall_secs,
    }];

    // additional trials (seeds seed+1..)
    for trial in 1..cfg.trials {
        let mut tcfg = cfg.clone();
        tcfg.seed = cfg.seed + trial as u64;
        let o = trainer::train(&pipeline, &tcfg)?;
        let mut m = o.model;
        let e = trainer::evaluate(&mut m, &pipeline, manifest.seed, cfg.batch_size)?;
        trials.push(trainer::TrialResult {
            seed: tcfg.seed,
            metrics: e.metrics,
            frames_evaluated: e.per_frame.len(),
            final_loss: o.final_loss,
            wall_secs: o.wall_secs,
        });
    }
    let report = RunReport::from_trials(cfg.variant, cfg.context, cfg.dam, trials, eval.gates);

    save_checkpoint(&out.join("checkpoint"), &model, cfg.seed)?;
    fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    write_metrics_csv(&out.join("metrics.csv"), &report)?;
    print_report(&report);
    Ok(report)
}

/// `eval`: run the metric battery for an existing checkpoint.
pub fn eval(
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    sp_quality: f64,
    batch: usize,
    overlays: usize,
) -> Result<RunReport> {
    let manifest = synth::load_dataset(data)?;
    let mut model = load_checkpoint(checkpoint)?;
    if model.cfg.height != manifest.height || model.cfg.width != manifest.width {
        return Err(Error::config(format!(
            "checkpoint maps are {}x{}, dataset is {}x{}",
            model.cfg.width, model.cfg.height, manifest.width, manifest.height
        )));
    }
    fs::create_dir_all(out)?;
    let pipeline = Pipeline::build(data, &manifest, sp_quality, &Default::default())?;
    let eval = trainer::evaluate(&mut model, &pipeline, manifest.seed, batch)?;

    // per-frame rows plus the aggregate
    let model_name = model_label(model.cfg.variant, model.cfg.dam);
    let mut csv = String::from("model,context,AUC-J,sAUC,CC,NSS,SIM,seed\n");
    csv.push_str(&metrics_csv_row(
        &model_name,
        model.cfg.context,
        &eval.metrics,
        manifest.seed,
    ));
    fs::write(out.join("metrics.csv"), csv)?;
    let mut per_frame = String::from("index,AUC-J,sAUC,CC,NSS,SIM\n");
    for (i, m) in eval.per_frame.iter().enumerate() {
        let _ = writeln!(
            per_frame,
            "{i},{:.6},{:.6},{:.6},{:.6},{:.6}",
            m.auc_j, m.sauc, m.cc, m.nss, m.sim
        );
    }
    fs::write(out.join("per_frame.csv"), per_frame)?;

    // a few overlay panels from the first evaluation scene
    if overlays > 0 {
        let context = model.cfg.context;
        if let Some(&scene) = pipeline.eval_scenes.first() {
            let loaded = synth::load_scene(data, &manifest.scenes[scene])?;
            let plane = pipeline.height * pipeline.width;
            let frames = pipeline.frames_in(scene);
            let t_ends: Vec<usize> = (context - 1..frames).take(overlays).collect();
            for &t_end in &t_ends {
                let batch_data = pipeline.batch(&[(scene, t_end)], context)?;
                let mut tape = crate::tape::Tape::new();
                let fwd = model.forward(&mut tape, &batch_data.input, false)?;
                let pred = Tensor::from_vec(
                    &[pipeline.height, pipeline.width],
                    tape.value(fwd.pred).as_slice()[..plane].to_vec(),
                )?;
                let frame_rgb = Tensor::from_vec(
                    &[3, pipeline.height, pipeline.width],
                    loaded.frames.as_slice()[t_end * 3 * plane..(t_end + 1) * 3 * plane].to_vec(),
                )?;
                let panel = render_overlay(
                    &frame_rgb,
                    &pred,
                    &pipeline.scenes[scene].fixations[t_end].fdm,
                )?;
                write_ppm(&out.join(format!("overlay_{t_end:04}.ppm")), &panel)?;
            }
        }
    }

    let report = RunReport::from_trials(
        model.cfg.variant,
        model.cfg.context,
        model.cfg.dam,
        vec![trainer::TrialResult {
            seed: manifest.seed,
            metrics: eval.metrics,
            frames_evaluated: eval.per_frame.len(),
            final_loss: f64::NAN,
            wall_secs: 0.0,
        }],
        eval.gates,
    );
    fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    print_report(&report);
    Ok(report)
}

/// `ablate`: the 2^3 social-modality ablation table.
pub fn ablate(data: &Path, out: &Path, cfg: &TrainConfig) -> Result<Vec<AblationRow>> {
    let manifest = synth::load_dataset(data)?;
    fs::create_dir_all(out)?;
    let rows = trainer::ablate(data, &manifest, cfg)?;
    let mut csv = String::from("GE,GF,FER,AUC-J,sAUC,CC,NSS,SIM\n");
    for row in &rows {
        let mark = |b: bool| if b { "yes" } else { "-" };
        let m = &row.report.mean;
        let _ = writeln!(
            csv,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            mark(row.ge),
            mark(row.gf),
            mark(row.fer),
            m.auc_j,
            m.sauc,
            m.cc,
            m.nss,
            m.sim
        );
    }
    fs::write(out.join("ablation.csv"), &csv)?;
    print!("{csv}");
    Ok(rows)
}

/// `contrib`: per-modality gate shares of a trained model.
pub fn contrib(
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    sp_quality: f64,
    batch: usize,
) -> Result<GateReport> {
    let manifest = synth::load_dataset(data)?;
    let mut model = load_checkpoint(checkpoint)?;
    fs::create_dir_all(out)?;
    let report = trainer::contribution(&mut model, data, &manifest, sp_quality, batch)?;
    let mut csv = String::from("modality,raw_mean,share\n");
    for (m, (raw, share)) in Modality::ALL
        .iter()
        .zip(report.raw_means.iter().zip(&report.shares))
    {
        let _ = writeln!(csv, "{},{:.6},{:.6}", m.name(), raw, share);
    }
    fs::write(out.join("contribution.csv"), &csv)?;
    print!("{csv}");
    Ok(report)
}

pub enum GradcheckScope {
    All,
    Op(String),
    Variant { variant: Variant, dam: bool, context: usize },
}

/// `gradcheck`: run the verification battery, print one line per check.
/// Returns false when anything failed.
pub fn gradcheck(scope: GradcheckScope, coords: usize) -> Result<bool> {
    let mut all_pass = true;
    let mut show = |check: &selfcheck::NamedCheck| {
        let ok = check.passed();
        all_pass &= ok;
        println!(
            "{} {:<28} max rel err {:.3e} (tol {:.0e}, {} coords)",
            if ok { "PASS" } else { "FAIL" },
            check.name,
            check.report.max_rel_err,
            check.tolerance,
            check.report.coords_checked
        );
    };
    match scope {
        GradcheckScope::All => {
            for check in selfcheck::check_all_ops()? {
                show(&check);
            }
            for (variant, dam, context) in selfcheck::variant_graph_matrix() {
                show(&selfcheck::check_variant_graph(variant, dam, context, coords)?);
            }
        }
        GradcheckScope::Op(name) => {
            let checks = selfcheck::check_all_ops()?;
            let found: Vec<_> = checks.iter().filter(|c| c.name == name).collect();
            if found.is_empty() {
                let names: Vec<_> = checks.iter().map(|c| c.name.as_str()).collect();
                return Err(Error::config(format!(
                    "unknown op {name:?}; available: {}",
                    names.join(", ")
                )));
            }
            for check in found {
                show(check);
            }
        }
        GradcheckScope::Variant { variant, dam, context } => {
            show(&selfcheck::check_variant_graph(variant, dam, context, coords)?);
        }
    }
    Ok(all_pass)
}

/// Resolve output paths strictly under `--out`.
pub fn out_dir(out: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out)?;
    Ok(out.to_path_buf())
}
