//! Central finite-difference gradient checking.
//!
//! The checker rebuilds the graph from scratch for every probe, so it is
//! independent of the backward implementation it verifies. Relative error
//! uses a small floor so near-zero gradient coordinates compare absolutely.

use crate::error::Result;
use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct CheckOpts {
    /// Central-difference step.
    pub h: f64,
    /// Probe at most this many coordinates per input (None = all).
    pub max_coords: Option<usize>,
    /// Seed for coordinate sampling.
    pub seed: u64,
}

impl Default for CheckOpts {
    fn default() -> Self {
        CheckOpts {
            h: 1e-5,
            max_coords: None,
            seed: 0x9d5c,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
    /// (input index, flat coordinate, analytic, finite-difference) of the worst probe.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl CheckReport {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

fn rel_err(a: f64, fd: f64) -> f64 {
    (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3)
}

/// Compare reverse-mode gradients of `f` against central finite differences.
///
/// `f` must build a scalar loss from the given leaves. Every input is treated
/// as differentiable.
pub fn check_op<S, F>(inputs: &[Tensor<S>], opts: CheckOpts, f: F) -> Result<CheckReport>
where
    S: Scalar,
    F: Fn(&mut Tape<S>, &[ValueId]) -> Result<ValueId>,
{
    // analytic pass
    let mut tape = Tape::new();
    let ids: Vec<ValueId> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone(), true))
        .collect();
    let loss = f(&mut tape, &ids)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<S>> = ids
        .iter()
        .map(|&id| {
            grads
                .get(id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(tape.shape(id)))
        })
        .collect();

    let eval = |xs: &[Tensor<S>]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<ValueId> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = f(&mut tape, &ids)?;
        Ok(tape.value(loss).as_slice()[0].to_f64_lossy())
    };

    let h = opts.h;
    let mut report = CheckReport {
        max_rel_err: 0.0,
        coords_checked: 0,
        worst: None,
    };

    let mut work = inputs.to_vec();
    for (ii, input) in inputs.iter().enumerate() {
        let n = input.len();
        let coords: Vec<usize> = match opts.max_coords {
            Some(k) if k < n => {
                let mut all: Vec<usize> = (0..n).collect();
                Stream::keyed(opts.seed, &[ii as u64]).shuffle(&mut all);
                all.truncate(k);
                all
            }
            _ => (0..n).collect(),
        };
        for &ci in &coords {
            let x0 = input.as_slice()[ci].to_f64_lossy();

            work[ii] = input.clone();
            work[ii].make_mut()[ci] = S::of(x0 + h);
            let lp = eval(&work)?;
            work[ii].make_mut()[ci] = S::of(x0 - h);
            let lm = eval(&work)?;
            work[ii] = input.clone();

            let fd = (lp - lm) / (2.0 * h);
            let a = analytic[ii].as_slice()[ci].to_f64_lossy();
            let e = rel_err(a, fd);
            report.coords_checked += 1;
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = Some((ii, ci, a, fd));
            }
        }
    }
    Ok(report)
}
