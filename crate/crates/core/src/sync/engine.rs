//! The window loop run by every worker.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::transport::{decode_events, encode_events, Transport};
use super::{compute_local_min, OutQ, SyncError, SyncWindow};
use crate::event::{execute_event, EntityId, Event, EventQueue, Handler, Payload, SeqCounters, SortKey, WorkerId};
use crate::time::SimTime;

/// Where every entity lives and whether it runs on the lagged clock.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Placement {
    worker: Vec<WorkerId>,
    lagged: Vec<bool>,
}

impl Placement {
    pub fn new(worker: Vec<WorkerId>, lagged: Vec<bool>) -> Self {
        assert_eq!(worker.len(), lagged.len());
        Placement { worker, lagged }
    }

    /// Every entity on worker 0, none lagged.
    pub fn single(entities: usize) -> Self {
        Placement::new(vec![0; entities], vec![false; entities])
    }

    pub fn worker_of(&self, e: EntityId) -> WorkerId {
        self.worker[e.0 as usize]
    }

    pub fn is_lagged(&self, e: EntityId) -> bool {
        self.lagged[e.0 as usize]
    }

    pub fn entities(&self) -> usize {
        self.worker.len()
    }

    pub fn entities_on(&self, w: WorkerId) -> impl Iterator<Item = EntityId> + '_ {
        self.worker
            .iter()
            .enumerate()
            .filter(move |(_, &x)| x == w)
            .map(|(i, _)| EntityId(i as u32))
    }
}

/// How the window bound advances.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowAdvance {
    /// `global_min + lookahead`, skipping idle stretches.
    #[default]
    GlobalMin,
    /// Previous bound plus the lookahead, one window per lookahead span.
    Fixed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EngineConfig {
    pub end_time: SimTime,
    pub lookahead: SimTime,
    pub advance: WindowAdvance,
    /// Extra copies of every cross-worker record put on the wire.
    pub duplication: u32,
    pub record_windows: bool,
}

impl EngineConfig {
    pub fn new(end_time: SimTime, lookahead: SimTime) -> Self {
        EngineConfig {
            end_time,
            lookahead,
            advance: WindowAdvance::GlobalMin,
            duplication: 0,
            record_windows: false,
        }
    }
}

/// Called by the loop once a window's events have executed.
pub trait WindowHook {
    fn window_done(&mut self, _window: u64, _sync_time: SimTime) -> Result<(), String> {
        Ok(())
    }

    /// Cumulative wall time spent talking to the global QSM.
    fn socket_time(&self) -> Duration {
        Duration::ZERO
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkerStats {
    pub worker: WorkerId,
    pub windows: u64,
    pub executed: u64,
    pub events_sent: u64,
    pub events_received: u64,
    /// Cross-worker record bytes written, duplicates included.
    pub event_bytes_sent: u64,
    #[serde(with = "crate::time::duration_secs")]
    pub computing: Duration,
    #[serde(with = "crate::time::duration_secs")]
    pub communicating: Duration,
    #[serde(with = "crate::time::duration_secs")]
    pub waiting: Duration,
    #[serde(with = "crate::time::duration_secs")]
    pub socket: Duration,
    #[serde(with = "crate::time::duration_secs")]
    pub total: Duration,
    /// Largest distance between the router window bound and the lagged
    /// clock, zero without lagged entities.
    pub max_lag: SimTime,
    #[serde(skip)]
    pub sync_times: Vec<SimTime>,
}

impl WorkerStats {
    pub fn accounted(&self) -> Duration {
        self.computing + self.communicating + self.waiting + self.socket
    }
}

/// One worker's share of the simulation: its entities' pending events and
/// the events it owes other workers.
pub struct Worker<P> {
    id: WorkerId,
    placement: Arc<Placement>,
    queue: EventQueue<P>,
    lagged: EventQueue<P>,
    outq: OutQ<P>,
    seqs: SeqCounters,
    scratch: Vec<Event<P>>,
    trace: Option<Vec<SortKey>>,
    /// Everything below this has executed on the main queue.
    clock: SimTime,
    /// Everything below this has executed on the lagged queue.
    lagged_clock: SimTime,
}

enum Lane {
    Main,
    Lagged,
}

impl<P: Payload> Worker<P> {
    pub fn new(id: WorkerId, workers: usize, placement: Arc<Placement>, record_trace: bool) -> Self {
        Worker {
            id,
            placement,
            queue: EventQueue::new(),
            lagged: EventQueue::new(),
            outq: OutQ::new(workers),
            seqs: SeqCounters::default(),
            scratch: Vec::new(),
            trace: record_trace.then(Vec::new),
            clock: SimTime::ZERO,
            lagged_clock: SimTime::ZERO,
        }
    }

    pub fn id(&self) -> WorkerId {
        self.id
    }

    pub fn placement(&self) -> &Placement {
        &self.placement
    }

    pub fn now(&self) -> SimTime {
        self.clock
    }

    pub fn pending(&self) -> usize {
        self.queue.len() + self.lagged.len() + self.outq.len()
    }

    /// Schedules a starting event on behalf of `source`, which must live on
    /// this worker.
    pub fn schedule_initial(
        &mut self,
        time: SimTime,
        source: EntityId,
        target: EntityId,
        payload: P,
    ) -> Result<SortKey, SyncError> {
        debug_assert_eq!(self.placement.worker_of(source), self.id);
        let key = SortKey {
            time,
            source,
            seq: self.seqs.next(source),
        };
        self.route(Event {
            key,
            target,
            dest_worker: 0,
            payload,
        })?;
        Ok(key)
    }

    pub fn take_trace(&mut self) -> Vec<SortKey> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn violation(&self, e: &Event<P>, bound: SimTime) -> SyncError {
        SyncError::CausalityViolation {
            worker: self.id,
            key: e.key,
            target: e.target,
            bound,
        }
    }

    fn route(&mut self, mut e: Event<P>) -> Result<(), SyncError> {
        let w = self.placement.worker_of(e.target);
        e.dest_worker = w;
        if w != self.id {
            self.outq.push(e);
        } else {
            self.admit(e)?;
        }
        Ok(())
    }

    /// Queues an event for a local entity, refusing it if that entity's
    /// clock has already passed it.
    fn admit(&mut self, e: Event<P>) -> Result<(), SyncError> {
        if self.placement.is_lagged(e.target) {
            if e.time() < self.lagged_clock {
                return Err(self.violation(&e, self.lagged_clock));
            }
            self.lagged.push(e);
        } else {
            if e.time() < self.clock {
                return Err(self.violation(&e, self.clock));
            }
            self.queue.push(e);
        }
        Ok(())
    }

    fn execute<H: Handler<P>>(&mut self, lane: Lane, bound: SimTime, handler: &mut H) -> Result<u64, SyncError> {
        let mut count = 0;
        let mut emitted = std::mem::take(&mut self.scratch);
        loop {
            let next = match lane {
                Lane::Main => self.queue.pop_before(bound),
                Lane::Lagged => self.lagged.pop_before(bound),
            };
            let Some(event) = next else { break };
            if let Some(t) = self.trace.as_mut() {
                t.push(event.key);
            }
            execute_event(event, handler, &mut self.seqs, &mut emitted).map_err(|source| SyncError::Kernel {
                worker: self.id,
                source,
            })?;
            for e in emitted.drain(..) {
                self.route(e)?;
            }
            count += 1;
        }
        self.scratch = emitted;
        Ok(count)
    }

    fn local_min(&self) -> SimTime {
        compute_local_min(&self.queue, &self.outq).min(self.lagged.min_time())
    }
}

struct Loop<'a, P, H, T: ?Sized> {
    worker: &'a mut Worker<P>,
    handler: &'a mut H,
    transport: &'a mut T,
    cfg: &'a EngineConfig,
    stats: WorkerStats,
}

impl<P, H, T> Loop<'_, P, H, T>
where
    P: Payload,
    H: Handler<P> + WindowHook,
    T: Transport + ?Sized,
{
    /// Ships the OutQ and merges what arrives. Returns the agreed window.
    fn communicate(&mut self) -> Result<SyncWindow, SyncError> {
        let local_min = self.worker.local_min();
        let t = Instant::now();
        let lists = self.worker.outq.take();
        let mut outgoing = Vec::with_capacity(lists.len());
        for list in &lists {
            let (buf, bytes) = encode_events(list, self.cfg.duplication);
            self.stats.events_sent += list.len() as u64;
            self.stats.event_bytes_sent += bytes;
            outgoing.push(buf);
        }
        let encode = t.elapsed();
        let ex = self.transport.exchange(outgoing, local_min)?;
        let t = Instant::now();
        let mut incoming = Vec::new();
        for buf in &ex.incoming {
            incoming.extend(decode_events::<P>(buf, self.worker.id)?);
        }
        let decode = t.elapsed();
        self.stats.communicating += encode + ex.transfer + decode;
        self.stats.waiting += ex.waiting;
        self.stats.events_received += incoming.len() as u64;
        for e in incoming {
            self.worker.admit(e)?;
        }
        Ok(SyncWindow::new(local_min, ex.mins, self.cfg.lookahead, self.cfg.end_time))
    }

    fn finish_window(&mut self, sync: SimTime, started: Instant, socket_before: Duration) -> Result<(), SyncError> {
        self.handler
            .window_done(self.stats.windows, sync)
            .map_err(|message| SyncError::Hook {
                worker: self.worker.id,
                message,
            })?;
        let socket = self.handler.socket_time().saturating_sub(socket_before);
        self.stats.socket += socket;
        self.stats.computing += started.elapsed().saturating_sub(socket);
        self.stats.windows += 1;
        if self.cfg.record_windows {
            self.stats.sync_times.push(sync);
        }
        Ok(())
    }

    fn run(&mut self, lagged: bool) -> Result<(), SyncError> {
        let end = self.cfg.end_time;
        while self.worker.clock < end {
            let window = self.communicate()?;
            if window.is_idle() {
                break;
            }
            let sync = match self.cfg.advance {
                WindowAdvance::GlobalMin => window.sync_time,
                WindowAdvance::Fixed => self.worker.clock.saturating_add(self.cfg.lookahead).min(end),
            };
            let started = Instant::now();
            let socket_before = self.handler.socket_time();
            self.stats.executed += self.worker.execute(Lane::Main, sync, self.handler)?;
            let prev = std::mem::replace(&mut self.worker.clock, sync);
            if lagged {
                let behind = self.worker.lagged_clock.max(window.global_min_time);
                let lag = sync.checked_sub(behind).unwrap_or(SimTime::ZERO);
                self.stats.max_lag = self.stats.max_lag.max(lag);
                if lag > self.cfg.lookahead.saturating_add(self.cfg.lookahead) {
                    return Err(SyncError::LagExceeded {
                        lag,
                        lookahead: self.cfg.lookahead,
                    });
                }
                self.stats.executed += self.worker.execute(Lane::Lagged, prev, self.handler)?;
                self.worker.lagged_clock = prev;
            }
            self.finish_window(sync, started, socket_before)?;
        }
        if lagged {
            // The lagged entities still owe the last window.
            self.communicate()?;
            let started = Instant::now();
            let socket_before = self.handler.socket_time();
            let bound = self.worker.clock;
            self.stats.executed += self.worker.execute(Lane::Lagged, bound, self.handler)?;
            self.worker.lagged_clock = bound;
            self.handler
                .window_done(self.stats.windows, bound)
                .map_err(|message| SyncError::Hook {
                    worker: self.worker.id,
                    message,
                })?;
            let socket = self.handler.socket_time().saturating_sub(socket_before);
            self.stats.socket += socket;
            self.stats.computing += started.elapsed().saturating_sub(socket);
        }
        Ok(())
    }
}

fn drive<P, H, T>(
    worker: &mut Worker<P>,
    handler: &mut H,
    transport: &mut T,
    cfg: &EngineConfig,
    lagged: bool,
) -> Result<WorkerStats, SyncError>
where
    P: Payload,
    H: Handler<P> + WindowHook,
    T: Transport + ?Sized,
{
    let start = Instant::now();
    let mut lp = Loop {
        stats: WorkerStats {
            worker: worker.id,
            ..WorkerStats::default()
        },
        worker,
        handler,
        transport,
        cfg,
    };
    if let Err(e) = lp.run(lagged) {
        lp.transport.abort();
        return Err(e);
    }
    let mut stats = lp.stats;
    stats.total = start.elapsed();
    Ok(stats)
}

/// Runs the conservative window loop until `end_time` or until no events
/// remain anywhere.
pub fn run_window_loop<P, H, T>(
    worker: &mut Worker<P>,
    handler: &mut H,
    transport: &mut T,
    cfg: &EngineConfig,
) -> Result<WorkerStats, SyncError>
where
    P: Payload,
    H: Handler<P> + WindowHook,
    T: Transport + ?Sized,
{
    drive(worker, handler, transport, cfg, false)
}

/// The window loop with lagged entities: in each window they execute the
/// previous window's span while everything else executes the current one,
/// and a final round lets them catch up to the end.
pub fn run_lagged_window_loop<P, H, T>(
    worker: &mut Worker<P>,
    handler: &mut H,
    transport: &mut T,
    cfg: &EngineConfig,
) -> Result<WorkerStats, SyncError>
where
    P: Payload,
    H: Handler<P> + WindowHook,
    T: Transport + ?Sized,
{
    drive(worker, handler, transport, cfg, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{Ctx, EventKernel, KernelError};
    use crate::rng::EntityRng;
    use crate::sync::{LocalTransport, TcpTransport, ThreadTransport};

    /// Entities on a ring ping their neighbours after random delays no
    /// shorter than `min_delay`.
    #[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
    struct Hop {
        ttl: u32,
    }

    impl Payload for Hop {
        fn handler(&self) -> &'static str {
            "hop"
        }
    }

    struct Ring {
        n: u32,
        min_delay: u64,
        rngs: Vec<EntityRng>,
        log: Vec<(SortKey, u32)>,
    }

    impl Ring {
        fn new(n: u32, min_delay: u64) -> Self {
            Ring {
                n,
                min_delay,
                rngs: (0..n).map(|i| EntityRng::derive(7, &format!("ring:{i}"))).collect(),
                log: Vec::new(),
            }
        }
    }

    impl Handler<Hop> for Ring {
        type Error = KernelError;

        fn handle(&mut self, event: Event<Hop>, ctx: &mut Ctx<'_, Hop>) -> Result<(), KernelError> {
            self.log.push((event.key, event.payload.ttl));
            if event.payload.ttl == 0 {
                return Ok(());
            }
            let me = event.target.0;
            let rng = &mut self.rngs[me as usize];
            for step in [1, self.n - 1] {
                let extra = rng.below(5) as u64;
                let to = EntityId((me + step) % self.n);
                ctx.schedule_after(
                    SimTime::from_ps(self.min_delay + extra * 7),
                    to,
                    Hop {
                        ttl: event.payload.ttl - 1,
                    },
                )?;
            }
            Ok(())
        }
    }

    impl WindowHook for Ring {}

    fn seed_events(n: u32) -> Vec<(SimTime, EntityId, Hop)> {
        (0..n)
            .map(|i| (SimTime::from_ps(i as u64 * 3), EntityId(i), Hop { ttl: 9 }))
            .collect()
    }

    fn sequential_trace(n: u32, end: SimTime) -> Vec<SortKey> {
        let mut kernel = EventKernel::new().with_trace();
        for (t, e, p) in seed_events(n) {
            kernel.schedule_new(t, e, e, p).unwrap();
        }
        let mut ring = Ring::new(n, 10);
        kernel.run_until(end, &mut ring).unwrap();
        kernel.take_trace()
    }

    fn parallel_trace<T: Transport + 'static>(
        n: u32,
        assign: Vec<WorkerId>,
        lagged: Vec<bool>,
        transports: Vec<T>,
        cfg: EngineConfig,
        lagged_loop: bool,
    ) -> (Vec<SortKey>, Vec<WorkerStats>) {
        let placement = Arc::new(Placement::new(assign, lagged));
        let p = transports.len();
        let handles: Vec<_> = transports
            .into_iter()
            .map(|mut t| {
                let placement = placement.clone();
                let cfg = cfg.clone();
                std::thread::spawn(move || {
                    let me = t.worker();
                    let mut w = Worker::new(me, p, placement.clone(), true);
                    for (time, e, payload) in seed_events(n) {
                        if placement.worker_of(e) == me {
                            w.schedule_initial(time, e, e, payload).unwrap();
                        }
                    }
                    let mut ring = Ring::new(n, 10);
                    let stats = if lagged_loop {
                        run_lagged_window_loop(&mut w, &mut ring, &mut t, &cfg)
                    } else {
                        run_window_loop(&mut w, &mut ring, &mut t, &cfg)
                    }
                    .unwrap();
                    (w.take_trace(), stats)
                })
            })
            .collect();
        let mut trace = Vec::new();
        let mut stats = Vec::new();
        for h in handles {
            let (t, s) = h.join().unwrap();
            trace.extend(t);
            stats.push(s);
        }
        trace.sort();
        (trace, stats)
    }

    #[test]
    fn single_worker_matches_the_kernel() {
        let end = SimTime::from_ps(400);
        let expect = sequential_trace(6, end);
        let (trace, stats) = parallel_trace(6, vec![0; 6], vec![false; 6], vec![LocalTransport], EngineConfig::new(end, end), false);
        assert_eq!(trace, expect);
        assert_eq!(stats[0].windows, 1);
    }

    #[test]
    fn partitioned_runs_reproduce_the_sequential_trace() {
        let end = SimTime::from_ps(600);
        let expect = sequential_trace(8, end);
        for p in [2usize, 4] {
            let assign: Vec<_> = (0..8).map(|i| i * p / 8).collect();
            let mut cfg = EngineConfig::new(end, SimTime::from_ps(10));
            cfg.record_windows = true;
            let (trace, stats) = parallel_trace(8, assign.clone(), vec![false; 8], ThreadTransport::group(p), cfg.clone(), false);
            assert_eq!(trace, expect, "p = {p}");
            for s in &stats {
                assert!(s.sync_times.windows(2).all(|w| w[0] < w[1]), "window bounds must increase");
            }
            let (tcp, _) = parallel_trace(8, assign, vec![false; 8], TcpTransport::local_mesh(p).unwrap(), cfg, false);
            assert_eq!(tcp, expect);
        }
    }

    #[test]
    fn fixed_windows_and_duplication_change_nothing() {
        let end = SimTime::from_ps(100);
        let expect = sequential_trace(6, end);
        let assign = vec![0, 0, 1, 1, 2, 2];
        let mut cfg = EngineConfig::new(end, SimTime::from_ps(10));
        cfg.advance = WindowAdvance::Fixed;
        let (base, base_stats) = parallel_trace(6, assign.clone(), vec![false; 6], ThreadTransport::group(3), cfg.clone(), false);
        cfg.duplication = 8;
        let (dup, dup_stats) = parallel_trace(6, assign, vec![false; 6], ThreadTransport::group(3), cfg, false);
        assert_eq!(base, expect);
        assert_eq!(dup, expect);
        let bytes = |s: &[WorkerStats]| s.iter().map(|x| x.event_bytes_sent).sum::<u64>();
        assert_eq!(bytes(&dup_stats), 9 * bytes(&base_stats));
        assert_eq!(dup_stats[0].windows, 10);
    }

    #[test]
    fn too_large_lookahead_is_caught() {
        let end = SimTime::from_ps(500);
        let placement = Arc::new(Placement::new(vec![0, 0, 1, 1], vec![false; 4]));
        let cfg = EngineConfig::new(end, SimTime::from_ps(100));
        let handles: Vec<_> = ThreadTransport::group(2)
            .into_iter()
            .map(|mut t| {
                let placement = placement.clone();
                let cfg = cfg.clone();
                std::thread::spawn(move || {
                    let me = t.worker();
                    let mut w = Worker::new(me, 2, placement.clone(), false);
                    for (time, e, payload) in seed_events(4) {
                        if placement.worker_of(e) == me {
                            w.schedule_initial(time, e, e, payload).unwrap();
                        }
                    }
                    run_window_loop(&mut w, &mut Ring::new(4, 10), &mut t, &cfg)
                })
            })
            .collect();
        let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        assert!(results
            .iter()
            .any(|r| matches!(r, Err(SyncError::CausalityViolation { .. }))));
    }

    #[test]
    fn idle_network_stops_early() {
        let end = SimTime::from_ms(1);
        let mut cfg = EngineConfig::new(end, SimTime::from_ps(10));
        cfg.record_windows = true;
        let (_, stats) = parallel_trace(4, vec![0, 0, 1, 1], vec![false; 4], ThreadTransport::group(2), cfg, false);
        assert!(stats[0].sync_times.last().unwrap() < &end);
    }

    /// Ring where odd entities only talk to even ones: odd-to-even delays
    /// are long, even-to-odd short. Odd entities can then run lagged.
    struct Split {
        inner: Ring,
    }

    impl Handler<Hop> for Split {
        type Error = KernelError;

        fn handle(&mut self, event: Event<Hop>, ctx: &mut Ctx<'_, Hop>) -> Result<(), KernelError> {
            self.inner.log.push((event.key, event.payload.ttl));
            if event.payload.ttl == 0 {
                return Ok(());
            }
            let me = event.target.0;
            let n = self.inner.n;
            let rng = &mut self.inner.rngs[me as usize];
            let extra = rng.below(4) as u64;
            let (delay, to) = if me % 2 == 1 {
                (20 + extra, (me + 1) % n)
            } else {
                (3 + extra, (me + 1) % n)
            };
            ctx.schedule_after(SimTime::from_ps(delay), EntityId(to), Hop { ttl: event.payload.ttl - 1 })?;
            ctx.schedule_after(SimTime::from_ps(delay + 1), EntityId(to), Hop { ttl: event.payload.ttl - 1 })?;
            Ok(())
        }
    }

    impl WindowHook for Split {}

    fn split_trace(assign: Vec<WorkerId>, lagged: Vec<bool>, cfg: EngineConfig, lagged_loop: bool) -> (Vec<SortKey>, Vec<WorkerStats>) {
        let n = assign.len() as u32;
        let p = assign.iter().max().unwrap() + 1;
        let placement = Arc::new(Placement::new(assign, lagged));
        let handles: Vec<_> = ThreadTransport::group(p)
            .into_iter()
            .map(|mut t| {
                let placement = placement.clone();
                let cfg = cfg.clone();
                std::thread::spawn(move || {
                    let me = t.worker();
                    let mut w = Worker::new(me, p, placement.clone(), true);
                    for i in (0..n).step_by(2) {
                        let e = EntityId(i);
                        if placement.worker_of(e) == me {
                            w.schedule_initial(SimTime::from_ps(i as u64), e, e, Hop { ttl: 12 }).unwrap();
                        }
                    }
                    let mut h = Split { inner: Ring::new(n, 0) };
                    let stats = if lagged_loop {
                        run_lagged_window_loop(&mut w, &mut h, &mut t, &cfg)
                    } else {
                        run_window_loop(&mut w, &mut h, &mut t, &cfg)
                    }
                    .unwrap();
                    (w.take_trace(), stats)
                })
            })
            .collect();
        let mut trace = Vec::new();
        let mut stats = Vec::new();
        for h in handles {
            let (t, s) = h.join().unwrap();
            trace.extend(t);
            stats.push(s);
        }
        trace.sort();
        (trace, stats)
    }

    #[test]
    fn lagged_entities_reproduce_the_baseline() {
        let end = SimTime::from_ps(120);
        // Entities 0..4 on worker 0 and 4..8 on worker 1; cross edges 3->4
        // (odd to even, long) and 7->0 (long). Odd entities lag.
        let assign = vec![0, 0, 0, 0, 1, 1, 1, 1];
        let lagged: Vec<bool> = (0..8).map(|i| i % 2 == 1).collect();
        let (base, _) = split_trace(assign.clone(), vec![false; 8], EngineConfig::new(end, SimTime::from_ps(20)), false);
        for advance in [WindowAdvance::GlobalMin, WindowAdvance::Fixed] {
            let mut cfg = EngineConfig::new(end, SimTime::from_ps(10));
            cfg.advance = advance;
            cfg.record_windows = true;
            let (trace, stats) = split_trace(assign.clone(), lagged.clone(), cfg, true);
            assert_eq!(trace, base, "{advance:?}");
            assert!(stats.iter().all(|s| s.max_lag <= SimTime::from_ps(20)));
            if advance == WindowAdvance::Fixed {
                assert_eq!(stats[0].windows, 12);
            }
        }
    }
}
