use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};

/// Default replay capacity.
pub const DEFAULT_CAPACITY: usize = 100_000;

/// One transition `(x, a, r, x')`.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub observation: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_observation: Vec<f64>,
}

/// Fixed-capacity FIFO of experiences.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    buffer: VecDeque<Experience>,
    inserted: u64,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidParameter("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            buffer: VecDeque::with_capacity(capacity.min(1 << 16)),
            inserted: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    /// Total experiences ever stored, evicted ones included.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// Appends `e`, evicting the oldest experience when full.
    pub fn store(&mut self, e: Experience) {
        if self.buffer.len() == self.capacity {
            self.buffer.pop_front();
        }
        self.buffer.push_back(e);
        self.inserted += 1;
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.buffer.iter()
    }

    /// `batch` experiences drawn uniformly with replacement.
    pub fn sample_minibatch<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&Experience>> {
        if batch == 0 {
            return Err(Error::InvalidParameter("minibatch size must be positive".into()));
        }
        if self.buffer.len() < batch {
            return Err(Error::InsufficientExperience {
                have: self.buffer.len(),
                need: batch,
            });
        }
        Ok((0..batch)
            .map(|_| &self.buffer[rng.random_range(0..self.buffer.len())])
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exp(tag: usize) -> Experience {
        Experience {
            observation: vec![tag as f64],
            action: tag,
            reward: tag as f64,
            next_observation: vec![],
        }
    }

    #[test]
    fn evicts_oldest_first() {
        let mut m = ReplayMemory::new(2).unwrap();
        for i in 0..3 {
            m.store(exp(i));
            assert!(m.len() <= 2);
        }
        let tags: Vec<usize> = m.iter().map(|e| e.action).collect();
        assert_eq!(tags, vec![1, 2]);
        assert_eq!(m.inserted(), 3);
    }

    #[test]
    fn sampling_rules() {
        let mut m = ReplayMemory::new(10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            m.sample_minibatch(1, &mut rng),
            Err(Error::InsufficientExperience { have: 0, need: 1 })
        ));
        m.store(exp(7));
        assert_eq!(m.sample_minibatch(1, &mut rng).unwrap()[0].action, 7);
        assert!(m.sample_minibatch(2, &mut rng).is_err());
    }

    #[test]
    fn uniform_over_contents() {
        let mut m = ReplayMemory::new(10).unwrap();
        (0..10).for_each(|i| m.store(exp(i)));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = [0usize; 10];
        let draws = 100_000;
        for _ in 0..draws / 10 {
            for e in m.sample_minibatch(10, &mut rng).unwrap() {
                counts[e.action] += 1;
            }
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 0.1).abs() < 0.01);
        }
    }
}
