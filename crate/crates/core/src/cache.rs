//! Per-candidate cache state: whether the content a candidate requests is in
//! its transmitter's cache this slot.

use rand::Rng;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheStateVector {
    bits: Vec<bool>,
}

impl CacheStateVector {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn all_miss(candidates: usize) -> Self {
        Self {
            bits: vec![false; candidates],
        }
    }

    /// Each bit independently set with probability `p_hit`.
    ///
    /// Always consumes exactly one uniform per candidate, whatever `p_hit` is,
    /// so runs that differ only in `p_hit` stay on the same random stream.
    pub fn sample<R: Rng + ?Sized>(p_hit: f64, candidates: usize, rng: &mut R) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_hit) {
            return Err(invalid(format!("p_hit must lie in [0, 1], got {p_hit}")));
        }
        let bits = (0..candidates).map(|_| rng.random::<f64>() < p_hit).collect();
        Ok(Self { bits })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn hit(&self, candidate: usize) -> bool {
        self.bits[candidate]
    }

    pub fn set(&mut self, candidate: usize, hit: bool) {
        self.bits[candidate] = hit;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn hits(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}
