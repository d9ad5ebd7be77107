//! Local quantum state manager.
//!
//! Each worker owns one [`LocalQsm`]. Keys whose state lives in this
//! worker's registry are `Local`; keys whose state lives on the global QSM
//! are `Global`. All keys of one ket always share one tag.

pub mod client;
pub mod wire;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{ClientStats, Link, QsmClient, TcpLink};
use wire::{GetBody, Request, RunBody, SetBody, TransferBody, WireError};

use crate::quantum::{apply, Circuit, Ket, QuantumError, QubitKey, UnitaryMemo, C64};

#[derive(Debug, Error)]
pub enum QsmError {
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error("unknown key {0}")]
    UnknownKey(QubitKey),
    #[error("global QSM unavailable: {0}")]
    Unavailable(String),
    #[error("global QSM rejected a request: {0}")]
    Server(WireError),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("key {0} needs the global QSM but none is configured")]
    NoServer(QubitKey),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Owner {
    Local(u64),
    Global,
}

/// How a qubit travels inside a cross-entity event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum QubitRef {
    /// Sender and receiver share a worker; nothing moves.
    Same(QubitKey),
    /// State is held by the global QSM.
    Global(QubitKey),
    /// Unentangled state shipped inline.
    Value(Ket),
}

impl QubitRef {
    pub fn key(&self) -> QubitKey {
        match self {
            QubitRef::Same(k) | QubitRef::Global(k) => *k,
            QubitRef::Value(s) => s.keys()[0],
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QsmOptions {
    /// Let measurement and `set` pull qubits back from the global QSM.
    pub offload: bool,
    pub memo_capacity: usize,
}

impl Default for QsmOptions {
    fn default() -> Self {
        QsmOptions {
            offload: true,
            memo_capacity: crate::quantum::DEFAULT_MEMO_CAPACITY,
        }
    }
}

/// Counts of `set`, `get` and `run` calls.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QsmStats {
    pub requests: u64,
    pub local: u64,
    pub forwarded: u64,
    /// Requests naming a key this worker has seen held by the global QSM.
    pub touching_transferred: u64,
    pub touching_transferred_local: u64,
    /// Local kets pushed to the global QSM.
    pub pushed_states: u64,
}

impl QsmStats {
    pub fn local_fraction(&self) -> f64 {
        if self.requests == 0 {
            return 0.0;
        }
        self.local as f64 / self.requests as f64
    }

    pub fn merge(&mut self, o: &QsmStats) {
        self.requests += o.requests;
        self.local += o.local;
        self.forwarded += o.forwarded;
        self.touching_transferred += o.touching_transferred;
        self.touching_transferred_local += o.touching_transferred_local;
        self.pushed_states += o.pushed_states;
    }
}

pub struct LocalQsm {
    worker: u32,
    opts: QsmOptions,
    states: HashMap<u64, Ket>,
    next_state: u64,
    owner: HashMap<QubitKey, Owner>,
    ever_global: HashSet<QubitKey>,
    memo: UnitaryMemo,
    client: Option<QsmClient>,
    stats: QsmStats,
}

impl LocalQsm {
    pub fn new(worker: u32, opts: QsmOptions, client: Option<QsmClient>) -> Self {
        LocalQsm {
            worker,
            opts,
            states: HashMap::new(),
            next_state: 0,
            owner: HashMap::new(),
            ever_global: HashSet::new(),
            memo: UnitaryMemo::new(opts.memo_capacity),
            client,
            stats: QsmStats::default(),
        }
    }

    pub fn standalone() -> Self {
        LocalQsm::new(0, QsmOptions::default(), None)
    }

    pub fn worker(&self) -> u32 {
        self.worker
    }

    pub fn stats(&self) -> &QsmStats {
        &self.stats
    }

    pub fn client_stats(&self) -> Option<&ClientStats> {
        self.client.as_ref().map(QsmClient::stats)
    }

    pub fn memo(&self) -> &UnitaryMemo {
        &self.memo
    }

    pub fn owner(&self, key: &QubitKey) -> Option<Owner> {
        self.owner.get(key).copied()
    }

    pub fn owned_keys(&self) -> impl Iterator<Item = (QubitKey, Owner)> + '_ {
        self.owner.iter().map(|(k, o)| (*k, *o))
    }

    pub fn local_state_count(&self) -> usize {
        self.states.len()
    }

    fn client(&mut self, key: QubitKey) -> Result<&mut QsmClient, QsmError> {
        self.client.as_mut().ok_or(QsmError::NoServer(key))
    }

    fn insert_local(&mut self, ket: Ket) {
        let id = self.next_state;
        self.next_state += 1;
        for k in ket.keys() {
            self.owner.insert(*k, Owner::Local(id));
        }
        self.states.insert(id, ket);
    }

    /// Unbinds `keys` from their local kets; partners left behind are reset
    /// to `|0⟩`.
    fn detach_local(&mut self, keys: &[QubitKey]) {
        let mut ids: Vec<u64> = Vec::new();
        for k in keys {
            if let Some(Owner::Local(id)) = self.owner.get(k) {
                if !ids.contains(id) {
                    ids.push(*id);
                }
            }
        }
        for id in ids {
            let ket = self.states.remove(&id).expect("local owner points at a state");
            for k in ket.keys() {
                if keys.contains(k) {
                    self.owner.remove(k);
                } else {
                    self.insert_local(Ket::zero(*k));
                }
            }
        }
    }

    /// Moves a local ket to the global QSM.
    fn push(&mut self, id: u64) -> Result<(), QsmError> {
        let ket = self.states.remove(&id).expect("state id is live");
        let first = ket.keys()[0];
        for k in ket.keys() {
            self.owner.insert(*k, Owner::Global);
            self.ever_global.insert(*k);
        }
        self.stats.pushed_states += 1;
        self.client(first)?.submit(Request::TransferIn(TransferBody { state: ket }))
    }

    fn record(&mut self, keys: &[QubitKey], forwarded: bool) {
        self.stats.requests += 1;
        if forwarded {
            self.stats.forwarded += 1;
        } else {
            self.stats.local += 1;
        }
        if keys.iter().any(|k| self.ever_global.contains(k)) {
            self.stats.touching_transferred += 1;
            if !forwarded {
                self.stats.touching_transferred_local += 1;
            }
        }
    }

    /// Binds `keys` to a fresh state, destroying any prior entanglement.
    pub fn set(&mut self, keys: &[QubitKey], amps: Vec<C64>) -> Result<(), QsmError> {
        let ket = Ket::new(keys.to_vec(), amps)?;
        let global: Vec<QubitKey> = keys
            .iter()
            .filter(|k| self.owner.get(k) == Some(&Owner::Global))
            .copied()
            .collect();
        self.record(keys, !global.is_empty());
        let local: Vec<QubitKey> = keys.iter().filter(|k| !global.contains(k)).copied().collect();
        self.detach_local(&local);
        if global.is_empty() {
            self.insert_local(ket);
        } else if self.opts.offload {
            for k in &global {
                self.owner.remove(k);
            }
            self.client(global[0])?.submit(Request::Set(SetBody {
                keys: global,
                state: None,
            }))?;
            self.insert_local(ket);
        } else {
            for k in keys {
                self.owner.insert(*k, Owner::Global);
                self.ever_global.insert(*k);
            }
            self.client(global[0])?.submit(Request::Set(SetBody {
                keys: global,
                state: Some(ket),
            }))?;
        }
        Ok(())
    }

    pub fn get(&mut self, key: &QubitKey) -> Result<Ket, QsmError> {
        match self.owner.get(key).copied() {
            None => Err(QsmError::UnknownKey(*key)),
            Some(Owner::Local(id)) => {
                self.record(&[*key], false);
                Ok(self.states[&id].clone())
            }
            Some(Owner::Global) => {
                self.record(&[*key], true);
                let data = self.client(*key)?.call(Request::Get(GetBody { key: *key }))?;
                data.state
                    .ok_or_else(|| QsmError::Protocol("GET reply without a state".into()))
            }
        }
    }

    /// Runs `circuit` with wire `i` bound to `keys[i]`; returns the
    /// measurement outcome if the circuit measures.
    pub fn run(
        &mut self,
        circuit: &Circuit,
        keys: &[QubitKey],
        prob_sample: Option<f64>,
    ) -> Result<Option<Vec<u8>>, QsmError> {
        if circuit.measures() && prob_sample.is_none() {
            return Err(QuantumError::MissingSample.into());
        }
        let mut owners = Vec::with_capacity(keys.len());
        for k in keys {
            owners.push(self.owner.get(k).copied().ok_or(QsmError::UnknownKey(*k))?);
        }
        let all_local = owners.iter().all(|o| matches!(o, Owner::Local(_)));
        self.record(keys, !all_local);

        if all_local {
            let mut ids: Vec<u64> = Vec::new();
            for o in &owners {
                if let Owner::Local(id) = o {
                    if !ids.contains(id) {
                        ids.push(*id);
                    }
                }
            }
            let refs: Vec<&Ket> = ids.iter().map(|id| &self.states[id]).collect();
            let applied = apply(&refs, circuit, keys, prob_sample, &self.memo)?;
            for id in &ids {
                let old = self.states.remove(id).unwrap();
                for k in old.keys() {
                    self.owner.remove(k);
                }
            }
            for s in applied.states {
                self.insert_local(s);
            }
            return Ok(applied.outcome);
        }

        let mut ids: Vec<u64> = Vec::new();
        for o in &owners {
            if let Owner::Local(id) = o {
                if !ids.contains(id) {
                    ids.push(*id);
                }
            }
        }
        for id in ids {
            self.push(id)?;
        }
        let body = RunBody {
            circuit: circuit.clone(),
            keys: keys.to_vec(),
            prob_sample,
            reclaim: self.opts.offload,
        };
        let client = self.client(keys[0])?;
        if !circuit.measures() {
            client.submit(Request::Run(body))?;
            return Ok(None);
        }
        let data = client.call(Request::Run(body))?;
        for s in data.reclaimed {
            self.insert_local(s);
        }
        data.outcome
            .map(Some)
            .ok_or_else(|| QsmError::Protocol("measuring RUN reply without an outcome".into()))
    }

    /// Detaches `key` for delivery to another entity.
    pub fn transfer_out(&mut self, key: QubitKey, same_worker: bool) -> Result<QubitRef, QsmError> {
        if same_worker {
            return if self.owner.contains_key(&key) {
                Ok(QubitRef::Same(key))
            } else {
                Err(QsmError::UnknownKey(key))
            };
        }
        match self.owner.get(&key).copied() {
            None => Err(QsmError::UnknownKey(key)),
            Some(Owner::Local(id)) if self.states[&id].num_qubits() == 1 => {
                let s = self.states.remove(&id).unwrap();
                self.owner.remove(&key);
                self.ever_global.remove(&key);
                Ok(QubitRef::Value(s))
            }
            Some(Owner::Local(id)) => {
                self.push(id)?;
                self.owner.remove(&key);
                self.ever_global.remove(&key);
                Ok(QubitRef::Global(key))
            }
            Some(Owner::Global) => {
                self.owner.remove(&key);
                self.ever_global.remove(&key);
                Ok(QubitRef::Global(key))
            }
        }
    }

    pub fn receive(&mut self, r: QubitRef) {
        match r {
            QubitRef::Same(_) => {}
            QubitRef::Global(k) => {
                self.owner.insert(k, Owner::Global);
                self.ever_global.insert(k);
            }
            QubitRef::Value(s) => self.insert_local(s),
        }
    }

    /// Forgets a key that will never be used again.
    pub fn release(&mut self, key: QubitKey) -> Result<(), QsmError> {
        match self.owner.get(&key).copied() {
            None => Err(QsmError::UnknownKey(key)),
            Some(Owner::Local(_)) => {
                self.detach_local(&[key]);
                self.ever_global.remove(&key);
                Ok(())
            }
            Some(Owner::Global) => {
                self.owner.remove(&key);
                self.ever_global.remove(&key);
                self.client(key)?.submit(Request::Set(SetBody {
                    keys: vec![key],
                    state: None,
                }))
            }
        }
    }

    pub fn flush(&mut self) -> Result<(), QsmError> {
        match &mut self.client {
            Some(c) => c.flush(),
            None => Ok(()),
        }
    }

    pub fn sync_barrier(&mut self) -> Result<(), QsmError> {
        match &mut self.client {
            Some(c) => c.sync_barrier(),
            None => Ok(()),
        }
    }

    pub fn sync_if_dirty(&mut self) -> Result<(), QsmError> {
        match &mut self.client {
            Some(c) => c.sync_if_dirty(),
            None => Ok(()),
        }
    }

    pub fn terminate_server(&mut self) -> Result<(), QsmError> {
        match &mut self.client {
            Some(c) => c.terminate(),
            None => Ok(()),
        }
    }

    /// Checks that every local key resolves to exactly one ket that holds
    /// it, and every local ket's keys all point back at it.
    pub fn audit(&self) -> Result<(), String> {
        for (k, o) in &self.owner {
            if let Owner::Local(id) = o {
                match self.states.get(id) {
                    Some(s) if s.contains(k) => {}
                    _ => return Err(format!("worker {}: key {k} points at a missing state", self.worker)),
                }
            }
        }
        for (id, s) in &self.states {
            for k in s.keys() {
                if self.owner.get(k) != Some(&Owner::Local(*id)) {
                    return Err(format!(
                        "worker {}: key {k} of a local state is tagged {:?}",
                        self.worker,
                        self.owner.get(k)
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::circuits;

    fn k(n: u64) -> QubitKey {
        QubitKey::random_for_tests(n)
    }

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn set_then_get() {
        let mut q = LocalQsm::standalone();
        q.set(&[k(0)], vec![c(0.0), c(1.0)]).unwrap();
        assert_eq!(q.get(&k(0)).unwrap().amplitudes(), &[c(0.0), c(1.0)]);
        assert!(matches!(q.get(&k(9)), Err(QsmError::UnknownKey(_))));
    }

    #[test]
    fn partial_set_resets_partner() {
        let mut q = LocalQsm::standalone();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        q.set(&[k(1), k(2)], vec![c(h), c(0.0), c(0.0), c(h)]).unwrap();
        assert_eq!(q.get(&k(1)).unwrap(), q.get(&k(2)).unwrap());
        q.set(&[k(1)], vec![c(1.0), c(0.0)]).unwrap();
        assert_eq!(q.get(&k(2)).unwrap(), Ket::zero(k(2)));
        q.audit().unwrap();
    }

    #[test]
    fn local_bsm_swaps_pairs() {
        let mut q = LocalQsm::standalone();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let epr = vec![c(h), c(0.0), c(0.0), c(h)];
        q.set(&[k(0), k(1)], epr.clone()).unwrap();
        q.set(&[k(2), k(3)], epr).unwrap();
        let out = q.run(&circuits::bell_measurement(), &[k(1), k(2)], Some(0.6)).unwrap().unwrap();
        q.run(&circuits::pauli_correction(out[0], out[1]), &[k(3)], None).unwrap();
        let s = q.get(&k(0)).unwrap();
        assert!((Ket::epr(k(0), k(3)).fidelity(&s).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(q.stats().forwarded, 0);
        q.audit().unwrap();
    }

    #[test]
    fn measuring_without_sample_is_rejected() {
        let mut q = LocalQsm::standalone();
        q.set(&[k(0), k(1)], Ket::epr(k(0), k(1)).amplitudes().to_vec()).unwrap();
        assert!(matches!(
            q.run(&circuits::bell_measurement(), &[k(0), k(1)], None),
            Err(QsmError::Quantum(QuantumError::MissingSample))
        ));
    }

    #[test]
    fn same_worker_transfer_is_free() {
        let mut q = LocalQsm::standalone();
        q.set(&[k(0), k(1)], Ket::epr(k(0), k(1)).amplitudes().to_vec()).unwrap();
        assert_eq!(q.transfer_out(k(1), true).unwrap(), QubitRef::Same(k(1)));
        assert!(matches!(q.owner(&k(1)), Some(Owner::Local(_))));
    }

    #[test]
    fn single_qubit_travels_by_value() {
        let mut a = LocalQsm::standalone();
        let mut b = LocalQsm::standalone();
        a.set(&[k(0)], vec![c(1.0), c(0.0)]).unwrap();
        let r = a.transfer_out(k(0), false).unwrap();
        assert_eq!(r, QubitRef::Value(Ket::zero(k(0))));
        assert_eq!(a.owner(&k(0)), None);
        b.receive(r);
        assert!(matches!(b.owner(&k(0)), Some(Owner::Local(_))));
    }

    #[test]
    fn entangled_transfer_without_server_fails() {
        let mut q = LocalQsm::standalone();
        q.set(&[k(0), k(1)], Ket::epr(k(0), k(1)).amplitudes().to_vec()).unwrap();
        assert!(matches!(q.transfer_out(k(1), false), Err(QsmError::NoServer(_))));
    }

    #[test]
    fn release_drops_key() {
        let mut q = LocalQsm::standalone();
        q.set(&[k(0)], vec![c(1.0), c(0.0)]).unwrap();
        q.release(k(0)).unwrap();
        assert_eq!(q.owner(&k(0)), None);
        assert_eq!(q.local_state_count(), 0);
    }
}
