//! Events, their total order, and the sequential event kernel.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::SimTime;

/// Identifier of a simulated entity (router, BSM node, ...).
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

/// Identifier of a worker (one partition block).
pub type WorkerId = usize;

/// Partition-independent total order on events: time, then the entity that
/// scheduled the event, then that entity's scheduling counter.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SortKey {
    pub time: SimTime,
    pub source: EntityId,
    pub seq: u64,
}

/// What an event payload must provide to travel between workers.
pub trait Payload: Clone + fmt::Debug + Serialize + DeserializeOwned + Send + 'static {
    /// Symbolic handler name, recorded in traces and wire records.
    fn handler(&self) -> &'static str;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event<P> {
    pub key: SortKey,
    pub target: EntityId,
    pub dest_worker: WorkerId,
    pub payload: P,
}

impl<P> Event<P> {
    pub fn time(&self) -> SimTime {
        self.key.time
    }
}

struct Queued<P>(Event<P>);

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.0.key == other.0.key
    }
}

impl<P> Eq for Queued<P> {}

impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Queued<P> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.key.cmp(&other.0.key)
    }
}

/// Min-queue of events ordered by [`SortKey`].
pub struct EventQueue<P> {
    heap: BinaryHeap<Reverse<Queued<P>>>,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
        }
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, event: Event<P>) {
        self.heap.push(Reverse(Queued(event)));
    }

    pub fn pop(&mut self) -> Option<Event<P>> {
        self.heap.pop().map(|Reverse(Queued(e))| e)
    }

    pub fn peek(&self) -> Option<&Event<P>> {
        self.heap.peek().map(|Reverse(Queued(e))| e)
    }

    /// Pops the head only if its time is strictly below `bound`.
    pub fn pop_before(&mut self, bound: SimTime) -> Option<Event<P>> {
        match self.peek() {
            Some(e) if e.time() < bound => self.pop(),
            _ => None,
        }
    }

    /// Earliest pending timestamp, or `SimTime::INFINITY` when empty.
    pub fn min_time(&self) -> SimTime {
        self.peek().map_or(SimTime::INFINITY, Event::time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

impl<P> fmt::Debug for EventQueue<P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EventQueue")
            .field("len", &self.len())
            .field("min_time", &self.min_time())
            .finish()
    }
}

/// Per-source scheduling counters. An entity lives on exactly one worker, so
/// its counter advances identically however the network is partitioned.
#[derive(Debug, Default, Clone)]
pub struct SeqCounters(Vec<u64>);

impl SeqCounters {
    pub fn next(&mut self, source: EntityId) -> u64 {
        let idx = source.0 as usize;
        if idx >= self.0.len() {
            self.0.resize(idx + 1, 0);
        }
        let seq = self.0[idx];
        self.0[idx] += 1;
        seq
    }
}

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("event at {event_time:?} scheduled in the past (local time {now:?})")]
    SchedulingInPast { event_time: SimTime, now: SimTime },
    #[error("simulation time overflow scheduling {delay:?} after {now:?}")]
    TimeOverflow { now: SimTime, delay: SimTime },
    #[error("run_until({t_stop:?}) is behind local time {now:?}")]
    StopInPast { t_stop: SimTime, now: SimTime },
    #[error("handler `{handler}` failed on event {key:?}: {source}")]
    Handler {
        key: SortKey,
        handler: &'static str,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

/// Scheduling context handed to a handler while it executes one event.
pub struct Ctx<'a, P> {
    now: SimTime,
    entity: EntityId,
    seqs: &'a mut SeqCounters,
    emitted: &'a mut Vec<Event<P>>,
}

impl<'a, P> Ctx<'a, P> {
    pub fn new(
        now: SimTime,
        entity: EntityId,
        seqs: &'a mut SeqCounters,
        emitted: &'a mut Vec<Event<P>>,
    ) -> Self {
        Ctx {
            now,
            entity,
            seqs,
            emitted,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// The entity executing the current event; it is the source of anything
    /// scheduled through this context.
    pub fn entity(&self) -> EntityId {
        self.entity
    }

    pub fn schedule_at(
        &mut self,
        time: SimTime,
        target: EntityId,
        payload: P,
    ) -> Result<SortKey, KernelError> {
        if time < self.now {
            return Err(KernelError::SchedulingInPast {
                event_time: time,
                now: self.now,
            });
        }
        let key = SortKey {
            time,
            source: self.entity,
            seq: self.seqs.next(self.entity),
        };
        self.emitted.push(Event {
            key,
            target,
            dest_worker: 0,
            payload,
        });
        Ok(key)
    }

    pub fn schedule_after(
        &mut self,
        delay: SimTime,
        target: EntityId,
        payload: P,
    ) -> Result<SortKey, KernelError> {
        let time = self
            .now
            .checked_add(delay)
            .ok_or(KernelError::TimeOverflow {
                now: self.now,
                delay,
            })?;
        self.schedule_at(time, target, payload)
    }
}

/// Executes events on behalf of the kernel.
pub trait Handler<P> {
    type Error: std::error::Error + Send + Sync + 'static;

    fn handle(&mut self, event: Event<P>, ctx: &mut Ctx<'_, P>) -> Result<(), Self::Error>;
}

/// Runs one event through `handler`, returning the events it scheduled.
pub fn execute_event<P: Payload, H: Handler<P>>(
    event: Event<P>,
    handler: &mut H,
    seqs: &mut SeqCounters,
    emitted: &mut Vec<Event<P>>,
) -> Result<(), KernelError> {
    let key = event.key;
    let name = event.payload.handler();
    let mut ctx = Ctx::new(key.time, event.target, seqs, emitted);
    handler
        .handle(event, &mut ctx)
        .map_err(|e| KernelError::Handler {
            key,
            handler: name,
            source: Box::new(e),
        })
}

/// Single-timeline discrete-event kernel.
pub struct EventKernel<P> {
    queue: EventQueue<P>,
    now: SimTime,
    seqs: SeqCounters,
    executed: u64,
    trace: Option<Vec<SortKey>>,
    scratch: Vec<Event<P>>,
}

impl<P: Payload> Default for EventKernel<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P: Payload> EventKernel<P> {
    pub fn new() -> Self {
        EventKernel {
            queue: EventQueue::new(),
            now: SimTime::ZERO,
            seqs: SeqCounters::default(),
            executed: 0,
            trace: None,
            scratch: Vec::new(),
        }
    }

    /// Records the sort key of every executed event.
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn executed(&self) -> u64 {
        self.executed
    }

    pub fn trace(&self) -> Option<&[SortKey]> {
        self.trace.as_deref()
    }

    pub fn take_trace(&mut self) -> Vec<SortKey> {
        self.trace.take().unwrap_or_default()
    }

    pub fn queue(&self) -> &EventQueue<P> {
        &self.queue
    }

    pub fn seqs_mut(&mut self) -> &mut SeqCounters {
        &mut self.seqs
    }

    pub fn schedule(&mut self, event: Event<P>) -> Result<(), KernelError> {
        if event.time() < self.now {
            return Err(KernelError::SchedulingInPast {
                event_time: event.time(),
                now: self.now,
            });
        }
        self.queue.push(event);
        Ok(())
    }

    /// Schedules an event from outside any handler (initial conditions).
    pub fn schedule_new(
        &mut self,
        time: SimTime,
        source: EntityId,
        target: EntityId,
        payload: P,
    ) -> Result<SortKey, KernelError> {
        let mut out = Vec::with_capacity(1);
        let key = Ctx::new(self.now, source, &mut self.seqs, &mut out)
            .schedule_at(time, target, payload)?;
        for e in out {
            self.queue.push(e);
        }
        Ok(key)
    }

    /// Executes every event strictly before `t_stop`, in sort-key order, then
    /// advances local time to `t_stop`.
    pub fn run_until<H: Handler<P>>(
        &mut self,
        t_stop: SimTime,
        handler: &mut H,
    ) -> Result<u64, KernelError> {
        if t_stop < self.now {
            return Err(KernelError::StopInPast {
                t_stop,
                now: self.now,
            });
        }
        let mut count = 0;
        while let Some(event) = self.queue.pop_before(t_stop) {
            self.now = event.time();
            if let Some(trace) = self.trace.as_mut() {
                trace.push(event.key);
            }
            let mut emitted = std::mem::take(&mut self.scratch);
            execute_event(event, handler, &mut self.seqs, &mut emitted)?;
            for e in emitted.drain(..) {
                self.queue.push(e);
            }
            self.scratch = emitted;
            count += 1;
        }
        self.executed += count;
        if !t_stop.is_infinite() {
            self.now = t_stop;
        }
        Ok(count)
    }
}
