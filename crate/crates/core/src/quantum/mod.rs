//! Ket-vector quantum state math.
//!
//! A [`Ket`] is a normalized amplitude vector over an ordered list of qubit
//! keys. Wire `i` of the ket is `keys[i]`, and `keys[0]` is the most
//! significant bit of the basis index, so with keys `[a, b]` the amplitude of
//! `|a=0, b=1⟩` sits at index 1.

mod circuit;
mod memo;
mod ops;

pub use circuit::{circuits, Circuit, Gate, GateOp, Unitary};
pub use memo::{UnitaryMemo, DEFAULT_MEMO_CAPACITY};
pub use ops::{apply, measure, permute, tensor, Applied, Measured};

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

pub type C64 = Complex64;

/// Normalization tolerance for stored states.
pub const NORM_TOLERANCE: f64 = 1e-9;

/// Handle through which models touch a qubit's state.
#[derive(Copy, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QubitKey(pub Uuid);

impl QubitKey {
    /// Keys are minted from the creating entity and its private counter, so
    /// they are unique within a run and identical across partitionings.
    pub fn mint(entity: u32, counter: u64) -> Self {
        QubitKey(Uuid::from_u64_pair(
            0x5154_4b00_0000_0000 | entity as u64,
            counter,
        ))
    }

    pub fn random_for_tests(n: u64) -> Self {
        QubitKey(Uuid::from_u64_pair(0xdead_beef, n))
    }
}

impl fmt::Debug for QubitKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (hi, lo) = self.0.as_u64_pair();
        write!(f, "q{:x}.{}", hi & 0xffff_ffff, lo)
    }
}

impl fmt::Display for QubitKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantumError {
    #[error("key {0} appears more than once")]
    DuplicateKey(QubitKey),
    #[error("key order is not a permutation of the state's keys")]
    NotAPermutation,
    #[error("wire {wire} out of range for width {width}")]
    WireOutOfRange { wire: usize, width: usize },
    #[error("selected outcome left a zero-norm residual")]
    ZeroNormResidual,
    #[error("expected {expected} amplitudes, got {got}")]
    BadDimension { expected: usize, got: usize },
    #[error("state norm {0} is not 1")]
    NotNormalized(f64),
    #[error("unknown gate `{0}`")]
    UnknownGate(String),
    #[error("gate {gate:?} takes {expected} wires, got {got}")]
    GateArity { gate: Gate, expected: usize, got: usize },
    #[error("circuit has width {width} but {keys} keys were supplied")]
    KeyCount { width: usize, keys: usize },
    #[error("key {0} is not held by any supplied state")]
    MissingKey(QubitKey),
    #[error("circuit measures but no prob_sample was supplied")]
    MissingSample,
    #[error("prob_sample {0} is outside [0, 1)")]
    BadSample(f64),
    #[error("a ket needs at least one qubit")]
    Empty,
}

/// Pure state over an ordered list of qubit keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKet")]
pub struct Ket {
    keys: Vec<QubitKey>,
    #[serde(with = "amp_pairs")]
    amps: Vec<C64>,
}

#[derive(Deserialize)]
struct RawKet {
    keys: Vec<QubitKey>,
    #[serde(with = "amp_pairs")]
    amps: Vec<C64>,
}

impl TryFrom<RawKet> for Ket {
    type Error = QuantumError;

    fn try_from(r: RawKet) -> Result<Self, Self::Error> {
        Ket::new(r.keys, r.amps)
    }
}

impl Ket {
    pub fn new(keys: Vec<QubitKey>, amps: Vec<C64>) -> Result<Self, QuantumError> {
        let ket = Ket::unchecked(keys, amps)?;
        let norm = ket.norm();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(QuantumError::NotNormalized(norm));
        }
        Ok(ket)
    }

    /// Builds a ket checking shape and key uniqueness but not the norm.
    pub(crate) fn unchecked(keys: Vec<QubitKey>, amps: Vec<C64>) -> Result<Self, QuantumError> {
        if keys.is_empty() {
            return Err(QuantumError::Empty);
        }
        let expected = 1usize << keys.len();
        if amps.len() != expected {
            return Err(QuantumError::BadDimension {
                expected,
                got: amps.len(),
            });
        }
        for (i, k) in keys.iter().enumerate() {
            if keys[..i].contains(k) {
                return Err(QuantumError::DuplicateKey(*k));
            }
        }
        Ok(Ket { keys, amps })
    }

    pub fn from_real(keys: Vec<QubitKey>, amps: &[f64]) -> Result<Self, QuantumError> {
        Ket::new(keys, amps.iter().map(|&a| C64::new(a, 0.0)).collect())
    }

    /// Computational basis state `|bit⟩` for a single key.
    pub fn basis(key: QubitKey, bit: u8) -> Self {
        let mut amps = vec![C64::new(0.0, 0.0); 2];
        amps[(bit & 1) as usize] = C64::new(1.0, 0.0);
        Ket {
            keys: vec![key],
            amps,
        }
    }

    pub fn zero(key: QubitKey) -> Self {
        Ket::basis(key, 0)
    }

    /// `(|00⟩ + |11⟩)/√2` over `[a, b]`.
    pub fn epr(a: QubitKey, b: QubitKey) -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Ket::from_real(vec![a, b], &[h, 0.0, 0.0, h]).expect("valid EPR state")
    }

    pub fn keys(&self) -> &[QubitKey] {
        &self.keys
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn num_qubits(&self) -> usize {
        self.keys.len()
    }

    pub fn contains(&self, key: &QubitKey) -> bool {
        self.keys.contains(key)
    }

    pub fn position(&self, key: &QubitKey) -> Option<usize> {
        self.keys.iter().position(|k| k == key)
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn into_parts(self) -> (Vec<QubitKey>, Vec<C64>) {
        (self.keys, self.amps)
    }

    /// `|⟨self|other⟩|²` after aligning `other` to this ket's key order.
    pub fn fidelity(&self, other: &Ket) -> Result<f64, QuantumError> {
        let other = permute(other, &self.keys)?;
        let inner: C64 = self
            .amps
            .iter()
            .zip(other.amps.iter())
            .map(|(a, b)| a.conj() * b)
            .sum();
        Ok(inner.norm_sqr())
    }

    /// Stable digest of keys and amplitudes, used to check that two parties
    /// hold the same state.
    pub fn digest(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.keys.hash(&mut h);
        for a in &self.amps {
            a.re.to_bits().hash(&mut h);
            a.im.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// Complex numbers travel as `[re, im]` pairs.
pub mod amp_pairs {
    use super::C64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(amps: &[C64], s: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<[f64; 2]> = amps.iter().map(|a| [a.re, a.im]).collect();
        pairs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<C64>, D::Error> {
        let pairs = Vec::<[f64; 2]>::deserialize(d)?;
        Ok(pairs.into_iter().map(|[re, im]| C64::new(re, im)).collect())
    }
}
