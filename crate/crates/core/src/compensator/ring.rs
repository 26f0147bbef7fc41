use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// Default number of recent errors kept.
pub const DEFAULT_RING_SIZE: usize = 5;

/// The most recent forecast errors (`actual − forecast`), newest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRing {
    capacity: usize,
    errors: VecDeque<f64>,
}

impl Default for ErrorRing {
    fn default() -> Self {
        Self::new(DEFAULT_RING_SIZE)
    }
}

impl ErrorRing {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "error ring capacity must be positive");
        Self {
            capacity,
            errors: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.errors.len() == self.capacity
    }

    /// Record `actual − forecast_y`, evicting the oldest entry when full.
    pub fn push_error(&mut self, actual: f64, forecast_y: f64) {
        self.push(actual - forecast_y);
    }

    pub fn push(&mut self, error: f64) {
        if self.errors.len() == self.capacity {
            self.errors.pop_back();
        }
        self.errors.push_front(error);
    }

    /// `e_1 ..= e_m`, most recent first.
    pub fn errors(&self) -> impl Iterator<Item = f64> + '_ {
        self.errors.iter().copied()
    }
}
