use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use super::{Circuit, QuantumError, Unitary};

pub const DEFAULT_MEMO_CAPACITY: usize = 1024;

struct Lru {
    entries: HashMap<String, (Arc<Unitary>, u64)>,
    tick: u64,
}

/// Bounded least-recently-used cache of circuit unitaries.
///
/// A hit returns the matrix computed by the same code path as a miss, so
/// enabling the cache never changes results. Capacity 0 disables caching.
pub struct UnitaryMemo {
    capacity: usize,
    inner: Mutex<Lru>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl Default for UnitaryMemo {
    fn default() -> Self {
        UnitaryMemo::new(DEFAULT_MEMO_CAPACITY)
    }
}

impl std::fmt::Debug for UnitaryMemo {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UnitaryMemo")
            .field("capacity", &self.capacity)
            .field("hits", &self.hits())
            .field("misses", &self.misses())
            .finish()
    }
}

impl UnitaryMemo {
    pub fn new(capacity: usize) -> Self {
        UnitaryMemo {
            capacity,
            inner: Mutex::new(Lru {
                entries: HashMap::new(),
                tick: 0,
            }),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn disabled() -> Self {
        UnitaryMemo::new(0)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn unitary(&self, circuit: &Circuit) -> Result<Arc<Unitary>, QuantumError> {
        if self.capacity == 0 {
            self.misses.fetch_add(1, Ordering::Relaxed);
            return circuit.unitary().map(Arc::new);
        }
        let fp = circuit.fingerprint();
        {
            let mut lru = self.inner.lock().unwrap();
            lru.tick += 1;
            let tick = lru.tick;
            if let Some((u, used)) = lru.entries.get_mut(&fp) {
                *used = tick;
                self.hits.fetch_add(1, Ordering::Relaxed);
                return Ok(Arc::clone(u));
            }
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let u = Arc::new(circuit.unitary()?);
        let mut lru = self.inner.lock().unwrap();
        if lru.entries.len() >= self.capacity && !lru.entries.contains_key(&fp) {
            let oldest = lru
                .entries
                .iter()
                .min_by_key(|(_, (_, used))| *used)
                .map(|(k, _)| k.clone());
            if let Some(k) = oldest {
                lru.entries.remove(&k);
            }
        }
        let tick = lru.tick;
        lru.entries.insert(fp, (Arc::clone(&u), tick));
        Ok(u)
    }
}
