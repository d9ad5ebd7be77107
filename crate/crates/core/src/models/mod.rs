//! Quantum network hardware and protocol models.
//!
//! Routers own quantum memories grouped into per-flow lanes. Each hop of a
//! flow generates entanglement through a BSM node at the link midpoint;
//! intermediate routers swap outward from the source until the source
//! shares a pair with the destination. Optional purification pairs up even
//! and odd lanes of a hop.

mod bsm;
pub mod layout;
pub mod params;
mod router;

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{Ctx, EntityId, Event, Handler, KernelError, Payload, WorkerId};
use crate::qsm::{LocalQsm, QsmError, QsmStats, QubitRef};
use crate::qsm_server::{audit_snapshots, OwnershipSnapshot, ServerCore};
use crate::sync::{Placement, WindowHook};
use crate::time::SimTime;
use crate::topology::{RouterId, TopologyError};

use bsm::BsmState;
pub use layout::{Layout, MemAddr, Role, Side, Slot};
pub use params::{
    coincident, purified_fidelity, swapped_fidelity, AttemptGrid, HardwareOverrides, HardwareParams, ParamError,
};
use router::RouterState;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid parameter {0}")]
    Param(#[from] ParamError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("router {router} needs {demand} memories but has {capacity}")]
    Capacity { router: RouterId, demand: u32, capacity: u32 },
    #[error(transparent)]
    Qsm(#[from] QsmError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelConfig {
    pub hardware: HardwareParams,
    pub router_overrides: BTreeMap<RouterId, HardwareOverrides>,
    /// Keyed by link index in the network spec.
    pub link_overrides: BTreeMap<usize, HardwareOverrides>,
    pub purification: bool,
    /// Memories per router; unlimited when absent.
    pub memory_capacity: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Msg {
    /// A memory tries to emit in its channel slot.
    Attempt { slot: u32, attempt: u32 },
    /// A photon, or the notice that none is coming, reaches a BSM node.
    Photon {
        slot: u32,
        side: u8,
        attempt: u32,
        photon: Option<QubitRef>,
    },
    Herald {
        slot: u32,
        attempt: u32,
        outcome: Option<[u8; 2]>,
    },
    /// The far end of a slot freed its memory at `released`.
    Ready { slot: u32, released: SimTime },
    SwapUpdate {
        target: MemAddr,
        pair: u64,
        new_pair: u64,
        partner: MemAddr,
        fidelity: f64,
        correction: Option<[u8; 2]>,
    },
    SwapFailed { target: MemAddr, pair: u64 },
    Expire { mem: u32, epoch: u64 },
    Expired { target: MemAddr, pair: u64 },
    Purify { kept: u32, pair: u64 },
    PurifyOutcome { target: MemAddr, pair: u64, bit: u8 },
}

impl Payload for Msg {
    fn handler(&self) -> &'static str {
        match self {
            Msg::Attempt { .. } => "attempt",
            Msg::Photon { .. } => "photon",
            Msg::Herald { .. } => "herald",
            Msg::Ready { .. } => "ready",
            Msg::SwapUpdate { .. } => "swap_update",
            Msg::SwapFailed { .. } => "swap_failed",
            Msg::Expire { .. } => "expire",
            Msg::Expired { .. } => "expired",
            Msg::Purify { .. } => "purify",
            Msg::PurifyOutcome { .. } => "purify_outcome",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub attempts: u64,
    pub emissions: u64,
    pub photons_lost: u64,
    pub heralds_ok: u64,
    pub heralds_failed: u64,
    pub swaps_ok: u64,
    pub swaps_failed: u64,
    pub purify_kept: u64,
    pub purify_discarded: u64,
    pub expirations: u64,
    pub deliveries: u64,
}

impl Counters {
    pub fn merge(&mut self, o: &Counters) {
        self.attempts += o.attempts;
        self.emissions += o.emissions;
        self.photons_lost += o.photons_lost;
        self.heralds_ok += o.heralds_ok;
        self.heralds_failed += o.heralds_failed;
        self.swaps_ok += o.swaps_ok;
        self.swaps_failed += o.swaps_failed;
        self.purify_kept += o.purify_kept;
        self.purify_discarded += o.purify_discarded;
        self.expirations += o.expirations;
        self.deliveries += o.deliveries;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowMetrics {
    pub flow: u32,
    pub source: RouterId,
    pub dest: RouterId,
    pub hops: u32,
    pub delivered: u64,
    pub fidelity_sum: f64,
    pub first_delivery: Option<SimTime>,
    /// Heralded link-level pairs over all hops.
    pub link_pairs: u64,
    pub swaps: u64,
}

impl FlowMetrics {
    pub fn mean_fidelity(&self) -> Option<f64> {
        (self.delivered > 0).then(|| self.fidelity_sum / self.delivered as f64)
    }

    pub fn merge(&mut self, o: &FlowMetrics) {
        self.delivered += o.delivered;
        self.fidelity_sum += o.fidelity_sum;
        self.first_delivery = match (self.first_delivery, o.first_delivery) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        self.link_pairs += o.link_pairs;
        self.swaps += o.swaps;
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub counters: Counters,
    pub flows: Vec<FlowMetrics>,
}

impl ModelMetrics {
    pub fn merge(&mut self, o: &ModelMetrics) {
        self.counters.merge(&o.counters);
        if self.flows.is_empty() {
            self.flows = o.flows.clone();
            return;
        }
        for (a, b) in self.flows.iter_mut().zip(&o.flows) {
            a.merge(b);
        }
    }

    pub fn delivered(&self) -> u64 {
        self.flows.iter().map(|f| f.delivered).sum()
    }
}

/// Collects every worker's ownership snapshot for a window and checks them
/// together once the last one arrives. Workers cannot start the next window
/// before that, so the server is quiescent during the check.
pub struct AuditBoard {
    workers: usize,
    server: Option<Arc<ServerCore>>,
    state: Mutex<AuditState>,
}

#[derive(Default)]
struct AuditState {
    rounds: HashMap<u64, Vec<OwnershipSnapshot>>,
    checks: u64,
    violations: Vec<String>,
}

impl AuditBoard {
    pub fn new(workers: usize, server: Option<Arc<ServerCore>>) -> Self {
        AuditBoard {
            workers,
            server,
            state: Mutex::new(AuditState::default()),
        }
    }

    pub fn submit(&self, window: u64, snap: Result<OwnershipSnapshot, String>) {
        let mut st = self.state.lock().unwrap();
        let snap = match snap {
            Ok(s) => s,
            Err(e) => {
                st.violations.push(format!("window {window}: {e}"));
                return;
            }
        };
        let round = st.rounds.entry(window).or_default();
        round.push(snap);
        if round.len() == self.workers {
            let round = st.rounds.remove(&window).unwrap();
            st.checks += 1;
            if let Err(e) = audit_snapshots(&round, self.server.as_deref()) {
                st.violations.push(format!("window {window}: {e}"));
            }
        }
    }

    pub fn checks(&self) -> u64 {
        self.state.lock().unwrap().checks
    }

    pub fn violations(&self) -> Vec<String> {
        self.state.lock().unwrap().violations.clone()
    }
}

/// Everything one worker simulates: its routers, its BSM nodes and its
/// local QSM.
pub struct NetModel {
    layout: Arc<Layout>,
    placement: Arc<Placement>,
    worker: WorkerId,
    routers: Vec<Option<RouterState>>,
    bsms: Vec<Option<BsmState>>,
    qsm: LocalQsm,
    audit: Option<Arc<AuditBoard>>,
    counters: Counters,
    flows: Vec<FlowMetrics>,
}

impl NetModel {
    pub fn new(
        layout: Arc<Layout>,
        placement: Arc<Placement>,
        worker: WorkerId,
        seed: u64,
        qsm: LocalQsm,
        audit: Option<Arc<AuditBoard>>,
    ) -> Self {
        let routers = (0..layout.routers)
            .map(|r| {
                let e = layout.router_entity(r);
                (placement.worker_of(e) == worker).then(|| RouterState::new(&layout, r, seed))
            })
            .collect();
        let bsms = (0..layout.links.len() as u32)
            .map(|l| {
                let e = layout.bsm_entity(l);
                (placement.worker_of(e) == worker).then(|| BsmState::new(&layout, l, seed))
            })
            .collect();
        let flows = layout
            .flows
            .iter()
            .enumerate()
            .map(|(i, f)| FlowMetrics {
                flow: i as u32,
                source: f.source,
                dest: f.dest,
                hops: f.hops() as u32,
                ..FlowMetrics::default()
            })
            .collect();
        NetModel {
            layout,
            placement,
            worker,
            routers,
            bsms,
            qsm,
            audit,
            counters: Counters::default(),
            flows,
        }
    }

    /// First attempt of every local memory: `(time, source, target, payload)`.
    pub fn initial_events(&self) -> Vec<(SimTime, EntityId, EntityId, Msg)> {
        let mut out = Vec::new();
        for r in self.routers.iter().flatten() {
            let e = self.layout.router_entity(r.id);
            for info in &self.layout.memories[r.id as usize] {
                let slot = &self.layout.slots[info.slot as usize];
                out.push((slot.grid.first(), e, e, Msg::Attempt { slot: info.slot, attempt: 0 }));
            }
        }
        out
    }

    pub fn metrics(&self) -> ModelMetrics {
        ModelMetrics {
            counters: self.counters.clone(),
            flows: self.flows.clone(),
        }
    }

    pub fn qsm(&self) -> &LocalQsm {
        &self.qsm
    }

    pub fn qsm_mut(&mut self) -> &mut LocalQsm {
        &mut self.qsm
    }

    pub fn qsm_stats(&self) -> &QsmStats {
        self.qsm.stats()
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    fn same_worker(&self, e: EntityId) -> bool {
        self.placement.worker_of(e) == self.worker
    }
}

impl Handler<Msg> for NetModel {
    type Error = ModelError;

    fn handle(&mut self, event: Event<Msg>, ctx: &mut Ctx<'_, Msg>) -> Result<(), ModelError> {
        match self.layout.as_router(event.target) {
            Some(r) => self.router_event(r, event.payload, ctx),
            None => {
                let link = self.layout.as_link(event.target).expect("entity is a router or a BSM node");
                self.bsm_event(link, event.payload, ctx)
            }
        }
    }
}

impl WindowHook for NetModel {
    fn window_done(&mut self, window: u64, _sync_time: SimTime) -> Result<(), String> {
        self.qsm.sync_if_dirty().map_err(|e| e.to_string())?;
        if let Some(board) = &self.audit {
            board.submit(window, OwnershipSnapshot::capture(&self.qsm));
        }
        Ok(())
    }

    fn socket_time(&self) -> Duration {
        self.qsm.client_stats().map(|s| s.socket_time).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests;
