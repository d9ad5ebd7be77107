//! Per-entity random streams.
//!
//! Every entity draws from its own ChaCha8 stream seeded with
//! `SHA-256(global_seed_le || entity_name)`. A stream is therefore a pure
//! function of the global seed and the entity's name, and draws on one entity
//! never perturb another.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown entity `{0}`")]
pub struct UnknownEntity(pub String);

/// Independent deterministic stream for one entity.
#[derive(Clone, Debug)]
pub struct EntityRng(ChaCha8Rng);

impl EntityRng {
    pub fn derive(global_seed: u64, entity: &str) -> Self {
        let mut h = Sha256::new();
        h.update(global_seed.to_le_bytes());
        h.update(entity.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        EntityRng(ChaCha8Rng::from_seed(seed))
    }

    /// Uniform draw in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        self.0.gen::<f64>()
    }

    /// Bernoulli trial. `p >= 1` always succeeds and `p <= 0` always fails,
    /// but a draw is consumed either way so stream positions do not depend
    /// on parameter values.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        self.0.gen_range(0..n)
    }
}

/// Registry of named streams sharing one global seed.
#[derive(Clone, Debug)]
pub struct RngRegistry {
    seed: u64,
    streams: BTreeMap<String, EntityRng>,
}

impl RngRegistry {
    pub fn new(seed: u64) -> Self {
        RngRegistry {
            seed,
            streams: BTreeMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn register(&mut self, entity: &str) {
        self.streams
            .entry(entity.to_owned())
            .or_insert_with(|| EntityRng::derive(self.seed, entity));
    }

    pub fn next_random(&mut self, entity: &str) -> Result<f64, UnknownEntity> {
        self.streams
            .get_mut(entity)
            .map(EntityRng::next_f64)
            .ok_or_else(|| UnknownEntity(entity.to_owned()))
    }

    pub fn stream_mut(&mut self, entity: &str) -> Option<&mut EntityRng> {
        self.streams.get_mut(entity)
    }
}
