//! Sliding-window buffering of detector inputs.
//!
//! Each modality consumes frames through a fixed-length window `W` and emits
//! the element at read index `T'`. At the first frame the whole window is
//! filled with that frame (warm-up); afterwards the window shifts left by one
//! and appends. A read index at or past the end clamps to the newest slot,
//! which is how the saliency-predictor window (W = 15, T' = 15) emits its
//! final-timestep output. `W = 0` modalities pass frames straight through.

use std::collections::VecDeque;

use crate::cuemap::Modality;

/// (window size, output step) per modality.
pub fn window_params(m: Modality) -> (usize, usize) {
    match m {
        Modality::Img => (0, 0),
        Modality::Sp => (15, 15),
        Modality::Ge => (7, 4),
        Modality::Gf => (5, 0),
        Modality::Fer => (0, 0),
    }
}

#[derive(Clone, Debug)]
pub struct WindowBuffer<T> {
    window: usize,
    read_index: usize,
    slots: VecDeque<T>,
}

impl<T: Clone> WindowBuffer<T> {
    pub fn new(window: usize, read_index: usize) -> Self {
        WindowBuffer {
            window,
            read_index,
            slots: VecDeque::with_capacity(window),
        }
    }

    pub fn for_modality(m: Modality) -> Self {
        let (w, t) = window_params(m);
        WindowBuffer::new(w, t)
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Effective read slot: clamped to the newest element.
    pub fn effective_read_index(&self) -> usize {
        if self.window == 0 {
            0
        } else {
            self.read_index.min(self.window - 1)
        }
    }

    /// Feed one frame payload, get the emitted payload.
    pub fn step(&mut self, payload: T) -> T {
        if self.window == 0 {
            return payload;
        }
        if self.slots.is_empty() {
            for _ in 0..self.window {
                self.slots.push_back(payload.clone());
            }
        } else {
            self.slots.pop_front();
            self.slots.push_back(payload);
        }
        self.slots[self.effective_read_index()].clone()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }
}

/// Emission lag after warm-up: the emitted frame is `lag` steps behind the
/// input. Useful as an independent cross-check of the buffer semantics.
pub fn emission_lag(window: usize, read_index: usize) -> usize {
    if window == 0 {
        0
    } else {
        window - 1 - read_index.min(window - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(window: usize, read: usize, n: usize) -> Vec<usize> {
        let mut buf = WindowBuffer::new(window, read);
        (0..n).map(|t| buf.step(t)).collect()
    }

    #[test]
    fn w5_t0_reads_oldest_slot() {
        // W=5, T'=0: emissions f0 x5 then f1, f2, ...
        let got = run(5, 0, 10);
        assert_eq!(got, vec![0, 0, 0, 0, 0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn w0_is_pass_through() {
        let got = run(0, 0, 6);
        assert_eq!(got, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn w7_t4_emits_two_steps_back() {
        let got = run(7, 4, 12);
        // index 4 of 7 slots is W-1-T' = 2 steps behind the newest
        for (t, &e) in got.iter().enumerate().skip(7) {
            assert_eq!(e, t - 2, "t={t}");
        }
        assert_eq!(&got[..4], &[0, 0, 0, 1]);
    }

    #[test]
    fn sp_read_index_clamps_to_newest() {
        // W=15, T'=15 reads the newest slot: emission == current frame
        let got = run(15, 15, 20);
        let expect: Vec<usize> = (0..20).collect();
        assert_eq!(got, expect);
    }

    #[test]
    fn emissions_match_lag_formula_for_all_modalities() {
        for m in Modality::ALL {
            let (w, t) = window_params(m);
            let lag = emission_lag(w, t);
            let mut buf = WindowBuffer::new(w, t);
            for frame in 0..40usize {
                let got = buf.step(frame);
                let expect = frame.saturating_sub(lag);
                assert_eq!(got, expect, "modality {m:?} frame {frame}");
            }
        }
    }

    #[test]
    fn buffer_length_constant_after_warmup() {
        let mut buf = WindowBuffer::new(7, 4);
        buf.step(0usize);
        for t in 1..20 {
            buf.step(t);
            assert_eq!(buf.len(), 7);
        }
    }
}
