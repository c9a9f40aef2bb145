//! FIFO buffer of the most recent per-sample cross-entropy values.

use std::collections::VecDeque;

/// Bounded FIFO queue feeding the mixture fit; pushing onto a full queue
/// evicts the oldest value.
#[derive(Debug, Clone)]
pub struct LossQueue {
    capacity: usize,
    buffer: VecDeque<f64>,
}

impl LossQueue {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        Self {
            capacity,
            buffer: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, value: f64) {
        if self.buffer.len() == self.capacity {
            self.buffer.pop_front();
        }
        self.buffer.push_back(value);
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Oldest-to-newest snapshot of the contents.
    pub fn values(&self) -> Vec<f64> {
        self.buffer.iter().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn occupancy_never_exceeds_capacity() {
        let mut q = LossQueue::new(16);
        for i in 0..100 {
            q.push(i as f64);
            assert!(q.len() <= 16);
        }
        assert_eq!(q.len(), 16);
    }

    #[test]
    fn eviction_is_strictly_fifo() {
        let q_cap = 32;
        let m = 8;
        let mut q = LossQueue::new(q_cap);
        for i in 0..(q_cap + m) {
            q.push(i as f64);
        }
        // after q + m insertions the oldest m values are gone
        let values = q.values();
        assert_eq!(values.len(), q_cap);
        assert_eq!(values[0], m as f64);
        assert_eq!(*values.last().unwrap(), (q_cap + m - 1) as f64);
        for w in values.windows(2) {
            assert_eq!(w[1], w[0] + 1.0);
        }
    }
}
