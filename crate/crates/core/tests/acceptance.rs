//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured numbers once its assertions hold.
//!
//! The two training criteria (5 and 6) train real models and dominate the
//! suite's runtime; everything else finishes in seconds.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use saliency_core::commands;
use saliency_core::fusion::{inverted_surprisal, GaspModel, Variant};
use saliency_core::losses::{loss_dam, loss_total, LossWeights};
use saliency_core::metrics::{self, oracle, Point};
use saliency_core::optim::Adam;
use saliency_core::rng::Stream;
use saliency_core::selfcheck;
use saliency_core::synth::{generate_dataset, GenPreset};
use saliency_core::tape::Tape;
use saliency_core::tensor::Tensor as TensorOf;
use saliency_core::trainer::{self, AblationMask, Pipeline, TrainConfig};
use saliency_core::windowing::WindowBuffer;

type Tensor = TensorOf<f64>;

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("acceptance_{tag}"));
    fs::remove_dir_all(&dir).ok();
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn rand_map(h: usize, w: usize, key: u64) -> Tensor {
    let mut s = Stream::keyed(0xacce97, &[key]);
    Tensor::from_vec(&[h, w], (0..h * w).map(|_| s.uniform()).collect()).unwrap()
}

fn rand_points(h: usize, w: usize, n: usize, key: u64) -> Vec<Point> {
    let mut s = Stream::keyed(0x90187, &[key]);
    (0..n).map(|_| (s.below(h), s.below(w))).collect()
}

/// Criterion 1: every differentiable op and every full variant graph passes
/// finite-difference checks at 1e-4 (1e-6 for linear ops) in under 5 minutes.
#[test]
fn criterion_1_gradient_suite() {
    let started = Instant::now();
    let mut checked = 0usize;

    for check in selfcheck::check_all_ops().unwrap() {
        assert!(
            check.passed(),
            "op {}: max rel err {:.3e} exceeds {:.0e}",
            check.name,
            check.report.max_rel_err,
            check.tolerance
        );
        checked += 1;
    }

    for (variant, dam, context) in selfcheck::variant_graph_matrix() {
        let check = selfcheck::check_variant_graph(variant, dam, context, 6).unwrap();
        assert!(
            check.passed(),
            "{}: max rel err {:.3e} exceeds {:.0e}",
            check.name,
            check.report.max_rel_err,
            check.tolerance
        );
        checked += 1;
    }

    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 300.0, "gradient suite took {elapsed:.1}s (limit 300s)");
    println!("PASS criterion 1: gradient suite, {checked} checks in {elapsed:.1}s");
}

/// Criterion 2: all five metrics match their brute-force oracles on 100
/// random 16x16 instances within 1e-9, and the AUC metrics are invariant
/// under strictly monotone transforms within 1e-9.
#[test]
fn criterion_2_metric_oracles() {
    let mut max_gap = 0.0f64;
    for k in 0..100u64 {
        let pred = rand_map(16, 16, 2 * k);
        let fdm = rand_map(16, 16, 2 * k + 1).map(|v| v + 0.01);
        let pos = rand_points(16, 16, 3 + (k % 8) as usize, 3 * k);
        let neg = rand_points(16, 16, 20 + (k % 30) as usize, 7 * k);

        let pairs = [
            (metrics::nss(&pred, &pos).unwrap(), oracle::nss(&pred, &pos)),
            (metrics::cc(&pred, &fdm).unwrap(), oracle::cc(&pred, &fdm)),
            (metrics::sim(&pred, &fdm).unwrap(), oracle::sim(&pred, &fdm)),
            (
                metrics::auc_judd(&pred, &pos).unwrap(),
                oracle::auc_judd(&pred, &pos),
            ),
            (
                metrics::sauc(&pred, &pos, &neg).unwrap(),
                oracle::sauc(&pred, &pos, &neg),
            ),
        ];
        for (i, (fast, slow)) in pairs.iter().enumerate() {
            let gap = (fast - slow).abs();
            max_gap = max_gap.max(gap);
            assert!(
                gap < 1e-9,
                "instance {k}, metric {}: {fast} vs oracle {slow}",
                metrics::MetricSet::NAMES[[3, 2, 4, 0, 1][i]]
            );
        }

        // monotone-transform invariance of the AUC metrics
        let base_j = metrics::auc_judd(&pred, &pos).unwrap();
        let base_s = metrics::sauc(&pred, &pos, &neg).unwrap();
        for transform in [|x: f64| x.exp(), |x: f64| 3.0 * x + 1.0] {
            let t = pred.map(transform);
            assert!((metrics::auc_judd(&t, &pos).unwrap() - base_j).abs() < 1e-9);
            assert!((metrics::sauc(&t, &pos, &neg).unwrap() - base_s).abs() < 1e-9);
        }
    }
    println!("PASS criterion 2: metric oracles, 100 instances, max gap {max_gap:.2e}");
}

/// Criterion 3: per-channel ordering inversion on 1000 random channels, and
/// the exact uniform-input surprisal value log(H*W).
#[test]
fn criterion_3_inversion_properties() {
    // uniform input: -log(softmax) = log(H*W) exactly (within 1e-12)
    for (h, w) in [(2usize, 2usize), (4, 4), (3, 5)] {
        let mut tape = Tape::new();
        let u = tape.constant(Tensor::full(&[1, 1, h, w], 1.234));
        let s = inverted_surprisal(&mut tape, u).unwrap();
        let expect = ((h * w) as f64).ln();
        for &v in tape.value(s).as_slice() {
            assert!(
                (v - expect).abs() < 1e-12,
                "uniform {h}x{w}: {v} vs {expect}"
            );
        }
    }

    // argmax(u) == argmin(u^-1) on 1000 random channels
    let mut stream = Stream::keyed(0x1771, &[0]);
    for _ in 0..1000 {
        let u = Tensor::randn(&[1, 1, 8, 8], 1.0, &mut stream);
        let mut tape = Tape::new();
        let uid = tape.constant(u.clone());
        let inv = inverted_surprisal(&mut tape, uid).unwrap();
        let iv = tape.value(inv);
        let argmax = u
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let argmin = iv
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, argmin);
    }
    println!("PASS criterion 3: ordering inversion on 1000 channels, uniform value exact");
}

/// Criterion 4: over a 200-step training run the frozen direct stream
/// changes only at tie-sync points and never receives gradient.
#[test]
fn criterion_4_freeze_tie_contract() {
    let dir = temp_dir("criterion4");
    let manifest = generate_dataset(&dir, GenPreset::Tiny, 404).unwrap();
    let cfg = TrainConfig {
        variant: Variant::Gmu,
        context: 1,
        dam: true,
        iterations: 200,
        batch_size: 1,
        lr: 0.002,
        seed: 4,
        sp_quality: 0.7,
        ablate: AblationMask::none(),
        trials: 1,
        tie_interval: 1,
    };
    let pipeline = Pipeline::build(&dir, &manifest, cfg.sp_quality, &cfg.ablate).unwrap();
    let mut model = GaspModel::build(cfg.model_config(24, 24), cfg.seed).unwrap();
    let mut adam = Adam::new(cfg.lr);
    let weights = LossWeights::default();

    let direct_ids: Vec<_> = {
        let dam = model.dam_params().unwrap();
        dam.direct_se.param_ids().to_vec()
    };
    let sync_every = 3usize; // deliberately coarser than every step

    for step in 0..cfg.iterations {
        let mut rng = Stream::keyed(cfg.seed, &[0xba7c4, step as u64]);
        let scene = pipeline.train_scenes[rng.below(pipeline.train_scenes.len())];
        let f = pipeline.frames_in(scene);
        let t_end = rng.below(f);
        let batch = pipeline.batch(&[(scene, t_end)], 1).unwrap();

        let before: Vec<u64> = direct_ids.iter().map(|&id| model.params.fingerprint(id)).collect();

        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, &batch.input, true).unwrap();
        let main = loss_total(&mut tape, fwd.pred, &batch.fdm_final, &batch.points, &weights).unwrap();
        let dam_loss = loss_dam(&mut tape, &fwd.dam_preds, &batch.fdm_per_t, &weights).unwrap();
        let total = tape.add(main.total, dam_loss).unwrap();
        let mut grads = tape.backward(total).unwrap();

        // frozen parameters were bound but never accumulate gradient
        for &id in &direct_ids {
            let node = fwd.bindings.node(id).expect("direct stream bound");
            assert!(
                grads.get(node).is_none(),
                "step {step}: direct stream received gradient"
            );
        }

        adam.step(&mut model.params, |pid| {
            fwd.bindings.node(pid).and_then(|n| grads.take(n))
        })
        .unwrap();

        // optimizer never touches the frozen stream
        let after: Vec<u64> = direct_ids.iter().map(|&id| model.params.fingerprint(id)).collect();
        assert_eq!(before, after, "step {step}: optimizer changed frozen weights");

        if (step + 1) % sync_every == 0 {
            model.tie_sync().unwrap();
            // after syncing the streams are bit-identical
            assert!(model.dam_params().unwrap().tied(&model.params));
        } else {
            // between syncs the trained inverted stream drifts away
            let now: Vec<u64> = direct_ids.iter().map(|&id| model.params.fingerprint(id)).collect();
            assert_eq!(before, now, "step {step}: drift without tie-sync");
        }
    }
    fs::remove_dir_all(&dir).ok();
    println!("PASS criterion 4: freeze/tie contract held over 200 steps (sync every {sync_every})");
}

/// Hand simulation of the windowed emission, written independently of the
/// WindowBuffer implementation.
fn hand_simulated_emissions(window: usize, read: usize, frames: usize) -> Vec<usize> {
    let mut slots: Vec<usize> = Vec::new();
    let mut out = Vec::new();
    for t in 0..frames {
        if window == 0 {
            out.push(t);
            continue;
        }
        if slots.is_empty() {
            slots = vec![t; window];
        } else {
            for i in 0..window - 1 {
                slots[i] = slots[i + 1];
            }
            slots[window - 1] = t;
        }
        let idx = if read < window { read } else { window - 1 };
        out.push(slots[idx]);
    }
    out
}

/// Criterion 7: the window buffer reproduces hand-simulated emission
/// sequences for all four (W, T') pairs exactly.
#[test]
fn criterion_7_windowing_conformance() {
    let table = [(15usize, 15usize), (7, 4), (5, 0), (0, 0)];
    for (w, t_read) in table {
        let mut buf = WindowBuffer::new(w, t_read);
        let got: Vec<usize> = (0..60).map(|t| buf.step(t)).collect();
        let expect = hand_simulated_emissions(w, t_read, 60);
        assert_eq!(got, expect, "window {w}, read index {t_read}");
    }
    println!("PASS criterion 7: windowing conforms for (15,15), (7,4), (5,0), (0,0)");
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    fn walk(root: &Path, dir: &Path, files: &mut Vec<(String, Vec<u8>)>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, files);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    walk(dir, dir, &mut files);
    files.sort_by(|a, b| a.0.cmp(&b.0));
    files
}

fn assert_dirs_identical(a: &Path, b: &Path, what: &str) {
    let fa = dir_bytes(a);
    let fb = dir_bytes(b);
    let names_a: Vec<&String> = fa.iter().map(|(n, _)| n).collect();
    let names_b: Vec<&String> = fb.iter().map(|(n, _)| n).collect();
    assert_eq!(names_a, names_b, "{what}: file sets differ");
    for ((name, bytes_a), (_, bytes_b)) in fa.iter().zip(&fb) {
        assert_eq!(bytes_a, bytes_b, "{what}: {name} differs between runs");
    }
}

/// Criterion 8: gen-data, train and eval are byte-reproducible for fixed
/// seeds; two independent runs produce diff-identical trees.
#[test]
fn criterion_8_byte_reproducibility() {
    let base = temp_dir("criterion8");
    let (d1, d2) = (base.join("data1"), base.join("data2"));
    commands::gen_data(&d1, GenPreset::Tiny, 88).unwrap();
    commands::gen_data(&d2, GenPreset::Tiny, 88).unwrap();
    assert_dirs_identical(&d1, &d2, "gen-data");

    let cfg = TrainConfig {
        variant: Variant::Gmu,
        context: 1,
        dam: true,
        iterations: 6,
        batch_size: 2,
        lr: 0.001,
        seed: 9,
        sp_quality: 0.6,
        ablate: AblationMask::none(),
        trials: 1,
        tie_interval: 1,
    };
    let (r1, r2) = (base.join("run1"), base.join("run2"));
    commands::train(&d1, &r1, &cfg).unwrap();
    commands::train(&d1, &r2, &cfg).unwrap();
    assert_dirs_identical(&r1, &r2, "train");

    let (e1, e2) = (base.join("eval1"), base.join("eval2"));
    commands::eval(&r1.join("checkpoint"), &d1, &e1, 0.6, 2, 2).unwrap();
    commands::eval(&r1.join("checkpoint"), &d1, &e2, 0.6, 2, 2).unwrap();
    assert_dirs_identical(&e1, &e2, "eval");

    fs::remove_dir_all(&base).ok();
    println!("PASS criterion 8: gen-data, train, eval byte-reproducible");
}
