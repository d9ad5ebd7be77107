//! Conservative time-window synchronization across workers.
//!
//! Each worker repeatedly exchanges its outgoing cross-worker events and its
//! local minimum timestamp, agrees on a window bound
//! `sync_time = min(global_min + lookahead, end_time)`, merges what it
//! received and executes everything below the bound.

mod engine;
mod transport;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::{EntityId, Event, EventQueue, KernelError, SortKey, WorkerId};
use crate::partition::PartitionMap;
use crate::time::SimTime;
use crate::topology::{NetworkSpec, RouterId};

pub use engine::{
    run_lagged_window_loop, run_window_loop, EngineConfig, Placement, WindowAdvance, WindowHook, Worker,
    WorkerStats,
};
pub use transport::{
    decode_events, encode_events, Exchanged, LocalTransport, TcpTransport, ThreadTransport, Transport,
    EVENT_WIRE_VERSION,
};

#[derive(Debug, Error)]
pub enum SyncError {
    #[error("worker {worker}: event {key:?} for {target} arrived below the bound {bound:?}")]
    CausalityViolation {
        worker: WorkerId,
        key: SortKey,
        target: EntityId,
        bound: SimTime,
    },
    #[error("transport failure on worker {worker}: {message}")]
    Transport { worker: WorkerId, message: String },
    #[error("undecodable event record: {0}")]
    Decode(String),
    #[error("half-classical lookahead needs T_cc/2 > T_qc, but link {a}-{b} has T_qc {qc:?} against {half_cc:?}")]
    ModeInapplicable {
        a: RouterId,
        b: RouterId,
        qc: SimTime,
        half_cc: SimTime,
    },
    #[error("lagged clock trails by {lag:?}, more than twice the lookahead {lookahead:?}")]
    LagExceeded { lag: SimTime, lookahead: SimTime },
    #[error("worker {worker}: {source}")]
    Kernel {
        worker: WorkerId,
        #[source]
        source: KernelError,
    },
    #[error("worker {worker}: {message}")]
    Hook { worker: WorkerId, message: String },
}

/// The bound agreed on for one iteration of the window loop.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyncWindow {
    pub local_min_time: SimTime,
    pub remote_min_times: Vec<SimTime>,
    pub global_min_time: SimTime,
    pub lookahead: SimTime,
    pub sync_time: SimTime,
    pub end_time: SimTime,
}

impl SyncWindow {
    /// `remote_min_times` holds every worker's minimum, this one included.
    pub fn new(local_min_time: SimTime, remote_min_times: Vec<SimTime>, lookahead: SimTime, end_time: SimTime) -> Self {
        let global_min_time = remote_min_times.iter().copied().min().unwrap_or(SimTime::INFINITY);
        let sync_time = global_min_time.saturating_add(lookahead).min(end_time);
        SyncWindow {
            local_min_time,
            remote_min_times,
            global_min_time,
            lookahead,
            sync_time,
            end_time,
        }
    }

    pub fn is_idle(&self) -> bool {
        self.global_min_time.is_infinite()
    }
}

/// Per-destination lists of events created for other workers.
#[derive(Debug)]
pub struct OutQ<P> {
    lists: Vec<Vec<Event<P>>>,
}

impl<P> OutQ<P> {
    pub fn new(workers: usize) -> Self {
        OutQ {
            lists: (0..workers).map(|_| Vec::new()).collect(),
        }
    }

    pub fn push(&mut self, event: Event<P>) {
        let w = event.dest_worker;
        self.lists[w].push(event);
    }

    pub fn min_time(&self) -> SimTime {
        self.lists
            .iter()
            .flatten()
            .map(Event::time)
            .min()
            .unwrap_or(SimTime::INFINITY)
    }

    pub fn len(&self) -> usize {
        self.lists.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.iter().all(Vec::is_empty)
    }

    pub fn workers(&self) -> usize {
        self.lists.len()
    }

    /// Empties the queue, returning one list per destination worker.
    pub fn take(&mut self) -> Vec<Vec<Event<P>>> {
        self.lists.iter_mut().map(std::mem::take).collect()
    }
}

pub fn compute_local_min<P>(queue: &EventQueue<P>, outq: &OutQ<P>) -> SimTime {
    queue.min_time().min(outq.min_time())
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LookaheadMode {
    #[default]
    MinQuantumChannel,
    HalfClassical,
}

/// Channel timing needed to bound cross-worker delays.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct LinkTiming {
    /// Speed of light in fiber, m/s.
    pub light_speed: f64,
    pub cc_latency: SimTime,
}

impl LinkTiming {
    /// Photon flight time from a router to the BSM node halfway along a link.
    pub fn qc_delay(&self, link_km: f64) -> SimTime {
        SimTime::from_secs_f64(link_km * 500.0 / self.light_speed)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LookaheadConfig {
    pub mode: LookaheadMode,
    pub lookahead: SimTime,
    /// Links (lower id first) whose BSM node runs on the lagged clock.
    pub lagged_bsm_links: BTreeSet<(RouterId, RouterId)>,
}

impl LookaheadConfig {
    pub fn is_lagged(&self) -> bool {
        !self.lagged_bsm_links.is_empty()
    }
}

pub fn compute_lookahead(
    spec: &NetworkSpec,
    pmap: &PartitionMap,
    mode: LookaheadMode,
    timing: &LinkTiming,
    end_time: SimTime,
) -> Result<LookaheadConfig, SyncError> {
    let cut: Vec<_> = spec
        .links
        .iter()
        .filter(|l| pmap.worker_of(l.a) != pmap.worker_of(l.b))
        .collect();
    if cut.is_empty() {
        return Ok(LookaheadConfig {
            mode,
            lookahead: end_time,
            lagged_bsm_links: BTreeSet::new(),
        });
    }
    match mode {
        LookaheadMode::MinQuantumChannel => {
            // Classical messages between routers cross workers too.
            let qc = cut.iter().map(|l| timing.qc_delay(l.length_km)).min().expect("non-empty cut");
            let lookahead = qc.min(timing.cc_latency);
            Ok(LookaheadConfig {
                mode,
                lookahead,
                lagged_bsm_links: BTreeSet::new(),
            })
        }
        LookaheadMode::HalfClassical => {
            let half_cc = timing.cc_latency.half();
            for l in &cut {
                let qc = timing.qc_delay(l.length_km);
                if half_cc <= qc {
                    return Err(SyncError::ModeInapplicable {
                        a: l.a,
                        b: l.b,
                        qc,
                        half_cc,
                    });
                }
            }
            Ok(LookaheadConfig {
                mode,
                lookahead: half_cc,
                lagged_bsm_links: cut.iter().map(|l| (l.a, l.b)).collect(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::partition_blocks;
    use crate::topology::{gen_linear, Link};

    fn ev(t: u64, dest: usize) -> Event<()> {
        Event {
            key: SortKey {
                time: SimTime::from_ps(t),
                source: EntityId(0),
                seq: t,
            },
            target: EntityId(1),
            dest_worker: dest,
            payload: (),
        }
    }

    fn timing() -> LinkTiming {
        LinkTiming {
            light_speed: 2e8,
            cc_latency: SimTime::from_us(300),
        }
    }

    #[test]
    fn local_min_covers_both_containers() {
        let mut q = EventQueue::new();
        let mut out = OutQ::new(2);
        assert_eq!(compute_local_min(&q, &out), SimTime::INFINITY);
        out.push(ev(3, 1));
        assert_eq!(compute_local_min(&q, &out), SimTime::from_ps(3));
        q.push(ev(7, 0));
        out.push(ev(5, 1));
        assert_eq!(compute_local_min(&q, &out), SimTime::from_ps(3));
        out.take();
        assert_eq!(compute_local_min(&q, &out), SimTime::from_ps(7));
        assert!(out.is_empty());
    }

    #[test]
    fn window_bound() {
        let w = SyncWindow::new(
            SimTime::from_ps(10),
            vec![SimTime::from_ps(10), SimTime::from_ps(4)],
            SimTime::from_ps(3),
            SimTime::from_ps(100),
        );
        assert_eq!(w.global_min_time, SimTime::from_ps(4));
        assert_eq!(w.sync_time, SimTime::from_ps(7));
        let w = SyncWindow::new(SimTime::from_ps(98), vec![SimTime::from_ps(98)], SimTime::from_ps(3), SimTime::from_ps(100));
        assert_eq!(w.sync_time, SimTime::from_ps(100));
        let w = SyncWindow::new(SimTime::INFINITY, vec![SimTime::INFINITY; 2], SimTime::from_ps(3), SimTime::from_ps(100));
        assert!(w.is_idle());
    }

    #[test]
    fn lookahead_defaults() {
        let spec = gen_linear(8).unwrap();
        let pmap = partition_blocks(&spec, 2).unwrap();
        let end = SimTime::from_ms(100);
        let base = compute_lookahead(&spec, &pmap, LookaheadMode::MinQuantumChannel, &timing(), end).unwrap();
        assert_eq!(base.lookahead, SimTime::from_ps(2_500_000));
        assert!(!base.is_lagged());
        let half = compute_lookahead(&spec, &pmap, LookaheadMode::HalfClassical, &timing(), end).unwrap();
        assert_eq!(half.lookahead, SimTime::from_ps(150_000_000));
        assert_eq!(half.lagged_bsm_links.into_iter().collect::<Vec<_>>(), vec![(3, 4)]);
    }

    #[test]
    fn lookahead_takes_shortest_cut_link() {
        let mut spec = gen_linear(4).unwrap();
        spec.links = vec![Link { a: 0, b: 1, length_km: 4.0 }, Link { a: 1, b: 2, length_km: 1.0 }, Link { a: 2, b: 3, length_km: 4.0 }];
        let pmap = PartitionMap { workers: 2, assign: vec![0, 1, 0, 1] };
        let cfg = compute_lookahead(&spec, &pmap, LookaheadMode::MinQuantumChannel, &timing(), SimTime::from_ms(1)).unwrap();
        assert_eq!(cfg.lookahead, SimTime::from_us(2) + SimTime::from_ns(500));
    }

    #[test]
    fn single_worker_window_spans_the_run() {
        let spec = gen_linear(4).unwrap();
        let pmap = partition_blocks(&spec, 1).unwrap();
        let end = SimTime::from_ms(100);
        let cfg = compute_lookahead(&spec, &pmap, LookaheadMode::HalfClassical, &timing(), end).unwrap();
        assert_eq!(cfg.lookahead, end);
        assert!(!cfg.is_lagged());
    }

    #[test]
    fn half_classical_needs_short_links() {
        let mut spec = gen_linear(2).unwrap();
        spec.links = vec![Link { a: 0, b: 1, length_km: 200.0 }];
        let pmap = PartitionMap { workers: 2, assign: vec![0, 1] };
        let err = compute_lookahead(&spec, &pmap, LookaheadMode::HalfClassical, &timing(), SimTime::from_ms(1)).unwrap_err();
        assert!(matches!(err, SyncError::ModeInapplicable { a: 0, b: 1, .. }));
    }
}
