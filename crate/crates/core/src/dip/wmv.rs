//! Windowed-moving-variance early stopping.
//!
//! Each observed output enters a ring buffer of the last `window` outputs.
//! Once the buffer is full every observation is a check: the variance of the
//! buffered outputs around their mean is compared with the smallest variance
//! seen so far. The stopper fires after `patience` consecutive checks without
//! a new minimum, and only once.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StopReport {
    /// Step at which the stopper fired.
    pub fired_at: Option<usize>,
    /// Step whose window holds the smallest variance so far.
    pub best_step: Option<usize>,
    pub best_variance: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct WmvStopper<T> {
    window: usize,
    patience: usize,
    buffer: VecDeque<Vec<T>>,
    best: Option<(T, usize)>,
    since_best: usize,
    seen: usize,
    fired_at: Option<usize>,
}

impl<T: Real> WmvStopper<T> {
    pub fn new(window: usize, patience: usize) -> Result<Self> {
        if window < 2 || patience == 0 {
            return Err(invalid("WMV window must be >= 2 and patience >= 1"));
        }
        Ok(Self {
            window,
            patience,
            buffer: VecDeque::with_capacity(window),
            best: None,
            since_best: 0,
            seen: 0,
            fired_at: None,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn patience(&self) -> usize {
        self.patience
    }

    pub fn fired(&self) -> bool {
        self.fired_at.is_some()
    }

    /// Number of outputs observed so far; the step index of the next output.
    pub fn steps_seen(&self) -> usize {
        self.seen
    }

    pub fn report(&self) -> StopReport {
        StopReport {
            fired_at: self.fired_at,
            best_step: self.best.map(|(_, s)| s),
            best_variance: self.best.map(|(v, _)| v.to_f64_lossy()),
        }
    }

    /// Mean over elements of the per-element variance across the buffer.
    pub fn buffer_variance(&self) -> T {
        let n = self.buffer.front().map_or(0, Vec::len);
        if n == 0 || self.buffer.is_empty() {
            return T::zero();
        }
        let w = T::from_count(self.buffer.len());
        let mut total = T::zero();
        for k in 0..n {
            let mean = self.buffer.iter().map(|b| b[k]).sum::<T>() / w;
            total += self.buffer.iter().map(|b| (b[k] - mean) * (b[k] - mean)).sum::<T>() / w;
        }
        total / T::from_count(n)
    }

    /// Records one output; returns `true` exactly on the observation that fires.
    pub fn observe(&mut self, output: &[T]) -> bool {
        let step = self.seen;
        self.seen += 1;
        if self.buffer.len() == self.window {
            self.buffer.pop_front();
        }
        self.buffer.push_back(output.to_vec());
        if self.buffer.len() < self.window || self.fired_at.is_some() {
            return false;
        }
        let var = self.buffer_variance();
        match self.best {
            Some((b, _)) if var >= b => {
                self.since_best += 1;
                if self.since_best >= self.patience {
                    self.fired_at = Some(step);
                    return true;
                }
            }
            _ => {
                self.best = Some((var, step));
                self.since_best = 0;
            }
        }
        false
    }
}
