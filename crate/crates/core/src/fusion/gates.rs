//! Gate-activation bookkeeping for the modality-contribution report.

use crate::error::{Error, Result};
use crate::tape::{Tape, ValueId};

use super::MODALITIES;

/// Per-modality mean gate activation and normalized shares.
#[derive(Clone, Debug)]
pub struct GateReport {
    /// Mean activation per modality over channels, positions, timesteps and
    /// evaluation batches; each in [0, 1].
    pub raw_means: Vec<f64>,
    /// Means normalized to sum 1.
    pub shares: Vec<f64>,
}

/// Accumulates gate activations across forward passes.
#[derive(Clone, Debug, Default)]
pub struct GateAccumulator {
    sums: [f64; MODALITIES],
    counts: [f64; MODALITIES],
}

impl GateAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Feed one forward pass's gates (`[timestep][modality]` value ids).
    pub fn add(&mut self, tape: &Tape<f64>, gates: &[Vec<ValueId>]) {
        for per_t in gates {
            for (m, &z) in per_t.iter().enumerate() {
                let v = tape.value(z);
                self.sums[m] += v.iter().sum::<f64>();
                self.counts[m] += v.len() as f64;
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.counts.iter().all(|&c| c == 0.0)
    }

    pub fn finalize(&self) -> Result<GateReport> {
        if self.is_empty() {
            return Err(Error::Unsupported(
                "gate report: variant has no gates (non-gated integration)".into(),
            ));
        }
        let raw_means: Vec<f64> = self
            .sums
            .iter()
            .zip(&self.counts)
            .map(|(&s, &c)| if c > 0.0 { s / c } else { 0.0 })
            .collect();
        let total: f64 = raw_means.iter().sum();
        let shares = if total > 0.0 {
            raw_means.iter().map(|&m| m / total).collect()
        } else {
            vec![1.0 / MODALITIES as f64; MODALITIES]
        };
        Ok(GateReport { raw_means, shares })
    }
}
