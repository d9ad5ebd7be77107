//! Collective exchange between workers and the cross-worker event records.
//!
//! A per-destination buffer is one version byte followed by records, each a
//! 4-byte big-endian length and a JSON object
//! `{"key":{...},"target":..,"handler":"..","payload":{...}}`.
//! An empty list is sent as an empty buffer.

use std::collections::HashSet;
use std::io::{BufReader, BufWriter, Read};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::SyncError;
use crate::event::{EntityId, Event, Payload, SortKey, WorkerId};
use crate::qsm::wire::write_frame;
use crate::time::SimTime;

pub const EVENT_WIRE_VERSION: u8 = 1;

#[derive(Serialize)]
struct RecordOut<'a, P> {
    key: SortKey,
    target: EntityId,
    handler: &'static str,
    payload: &'a P,
}

#[derive(Deserialize)]
struct RecordIn<P> {
    key: SortKey,
    target: EntityId,
    handler: String,
    payload: P,
}

/// Serializes `events`, writing each record `1 + duplication` times.
/// Returns the buffer and the number of record bytes in it.
pub fn encode_events<P: Payload>(events: &[Event<P>], duplication: u32) -> (Vec<u8>, u64) {
    if events.is_empty() {
        return (Vec::new(), 0);
    }
    let mut buf = vec![EVENT_WIRE_VERSION];
    let mut record_bytes = 0u64;
    for e in events {
        let json = serde_json::to_vec(&RecordOut {
            key: e.key,
            target: e.target,
            handler: e.payload.handler(),
            payload: &e.payload,
        })
        .expect("payloads always serialize");
        for _ in 0..=duplication {
            buf.extend_from_slice(&(json.len() as u32).to_be_bytes());
            buf.extend_from_slice(&json);
            record_bytes += 4 + json.len() as u64;
        }
    }
    (buf, record_bytes)
}

/// Parses a buffer produced by [`encode_events`], dropping duplicate
/// records.
pub fn decode_events<P: Payload>(buf: &[u8], dest: WorkerId) -> Result<Vec<Event<P>>, SyncError> {
    let Some((&version, mut rest)) = buf.split_first() else {
        return Ok(Vec::new());
    };
    if version != EVENT_WIRE_VERSION {
        return Err(SyncError::Decode(format!("unsupported record version {version}")));
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    while !rest.is_empty() {
        if rest.len() < 4 {
            return Err(SyncError::Decode("truncated record length".into()));
        }
        let len = u32::from_be_bytes(rest[..4].try_into().unwrap()) as usize;
        let body = rest
            .get(4..4 + len)
            .ok_or_else(|| SyncError::Decode("truncated record".into()))?;
        rest = &rest[4 + len..];
        let rec: RecordIn<P> = serde_json::from_slice(body).map_err(|e| SyncError::Decode(e.to_string()))?;
        if rec.handler != rec.payload.handler() {
            return Err(SyncError::Decode(format!(
                "record names handler `{}` but carries `{}`",
                rec.handler,
                rec.payload.handler()
            )));
        }
        if seen.insert(rec.key) {
            out.push(Event {
                key: rec.key,
                target: rec.target,
                dest_worker: dest,
                payload: rec.payload,
            });
        }
    }
    Ok(out)
}

/// Result of one collective exchange.
#[derive(Debug, Default)]
pub struct Exchanged {
    /// Buffers received, indexed by source worker.
    pub incoming: Vec<Vec<u8>>,
    /// Every worker's local minimum, this one included.
    pub mins: Vec<SimTime>,
    /// Time spent moving bytes.
    pub transfer: Duration,
    /// Time spent blocked on other workers.
    pub waiting: Duration,
}

/// A reliable collective among a fixed set of workers. `exchange` returns
/// only after every worker has contributed to the same round.
pub trait Transport: Send {
    fn worker(&self) -> WorkerId;
    fn workers(&self) -> usize;
    /// `outgoing[w]` goes to worker `w`; the entry for this worker is ignored.
    fn exchange(&mut self, outgoing: Vec<Vec<u8>>, local_min: SimTime) -> Result<Exchanged, SyncError>;
    /// Releases peers blocked in `exchange` after this worker failed.
    fn abort(&mut self) {}
}

/// The single-worker case: nothing to exchange.
#[derive(Debug, Default)]
pub struct LocalTransport;

impl Transport for LocalTransport {
    fn worker(&self) -> WorkerId {
        0
    }

    fn workers(&self) -> usize {
        1
    }

    fn exchange(&mut self, _outgoing: Vec<Vec<u8>>, local_min: SimTime) -> Result<Exchanged, SyncError> {
        Ok(Exchanged {
            incoming: vec![Vec::new()],
            mins: vec![local_min],
            ..Exchanged::default()
        })
    }
}

struct BarrierState {
    arrived: usize,
    generation: u64,
    aborted: bool,
}

/// Reusable barrier that can be broken by a failing participant.
struct AbortableBarrier {
    n: usize,
    state: Mutex<BarrierState>,
    cv: Condvar,
}

impl AbortableBarrier {
    fn new(n: usize) -> Self {
        AbortableBarrier {
            n,
            state: Mutex::new(BarrierState {
                arrived: 0,
                generation: 0,
                aborted: false,
            }),
            cv: Condvar::new(),
        }
    }

    fn wait(&self) -> Result<(), ()> {
        let mut s = self.state.lock().unwrap();
        if s.aborted {
            return Err(());
        }
        let gen = s.generation;
        s.arrived += 1;
        if s.arrived == self.n {
            s.arrived = 0;
            s.generation += 1;
            self.cv.notify_all();
            return Ok(());
        }
        while s.generation == gen && !s.aborted {
            s = self.cv.wait(s).unwrap();
        }
        if s.generation == gen {
            Err(())
        } else {
            Ok(())
        }
    }

    fn abort(&self) {
        self.state.lock().unwrap().aborted = true;
        self.cv.notify_all();
    }
}

struct Mailboxes {
    /// `slots[src][dst]`.
    slots: Vec<Vec<Vec<u8>>>,
    mins: Vec<SimTime>,
}

struct Shared {
    mail: Mutex<Mailboxes>,
    barrier: AbortableBarrier,
}

/// In-host workers exchanging through shared mailboxes and a barrier.
pub struct ThreadTransport {
    me: WorkerId,
    shared: Arc<Shared>,
}

impl ThreadTransport {
    /// One endpoint per worker; hand each to its worker thread.
    pub fn group(n: usize) -> Vec<ThreadTransport> {
        assert!(n > 0, "a transport group needs at least one worker");
        let shared = Arc::new(Shared {
            mail: Mutex::new(Mailboxes {
                slots: vec![vec![Vec::new(); n]; n],
                mins: vec![SimTime::INFINITY; n],
            }),
            barrier: AbortableBarrier::new(n),
        });
        (0..n)
            .map(|me| ThreadTransport {
                me,
                shared: shared.clone(),
            })
            .collect()
    }

    fn barrier(&self) -> Result<(), SyncError> {
        self.shared.barrier.wait().map_err(|_| SyncError::Transport {
            worker: self.me,
            message: "a peer worker aborted".into(),
        })
    }
}

impl Transport for ThreadTransport {
    fn worker(&self) -> WorkerId {
        self.me
    }

    fn workers(&self) -> usize {
        self.shared.barrier.n
    }

    fn exchange(&mut self, outgoing: Vec<Vec<u8>>, local_min: SimTime) -> Result<Exchanged, SyncError> {
        let n = self.workers();
        let t0 = Instant::now();
        {
            let mut mail = self.shared.mail.lock().unwrap();
            for (dst, buf) in outgoing.into_iter().enumerate().take(n) {
                if dst != self.me {
                    mail.slots[self.me][dst] = buf;
                }
            }
            mail.mins[self.me] = local_min;
        }
        let t1 = Instant::now();
        self.barrier()?;
        let t2 = Instant::now();
        let (incoming, mins) = {
            let mut mail = self.shared.mail.lock().unwrap();
            let incoming = (0..n).map(|src| std::mem::take(&mut mail.slots[src][self.me])).collect();
            (incoming, mail.mins.clone())
        };
        let t3 = Instant::now();
        // Nobody may refill the mailboxes until everyone has read them.
        self.barrier()?;
        let t4 = Instant::now();
        Ok(Exchanged {
            incoming,
            mins,
            transfer: (t1 - t0) + (t3 - t2),
            waiting: (t2 - t1) + (t4 - t3),
        })
    }

    fn abort(&mut self) {
        self.shared.barrier.abort();
    }
}

struct Peer {
    reader: BufReader<TcpStream>,
    stream: TcpStream,
    tx: Option<mpsc::Sender<Vec<u8>>>,
    writer: Option<JoinHandle<()>>,
}

/// Workers connected all-to-all by stream sockets. Each round every worker
/// sends one frame (`local_min` as 8 big-endian bytes, then the event
/// buffer) to every peer and reads one frame from each.
pub struct TcpTransport {
    me: WorkerId,
    n: usize,
    peers: Vec<Option<Peer>>,
}

impl TcpTransport {
    /// Joins the mesh: connects to every lower-numbered worker and accepts
    /// every higher-numbered one on `listener`.
    pub fn join(me: WorkerId, listener: TcpListener, addrs: &[SocketAddr]) -> Result<Self, SyncError> {
        let n = addrs.len();
        let fail = |e: std::io::Error| SyncError::Transport {
            worker: me,
            message: e.to_string(),
        };
        let mut streams: Vec<Option<TcpStream>> = (0..n).map(|_| None).collect();
        for (peer, addr) in addrs.iter().enumerate().take(me) {
            let mut s = TcpStream::connect(addr).map_err(fail)?;
            write_frame(&mut s, &(me as u32).to_be_bytes()).map_err(fail)?;
            streams[peer] = Some(s);
        }
        for _ in me + 1..n {
            let (mut s, _) = listener.accept().map_err(fail)?;
            let mut id = [0u8; 8];
            s.read_exact(&mut id).map_err(fail)?;
            let peer = u32::from_be_bytes(id[4..].try_into().unwrap()) as usize;
            if peer <= me || peer >= n || streams[peer].is_some() {
                return Err(SyncError::Transport {
                    worker: me,
                    message: format!("unexpected peer id {peer}"),
                });
            }
            streams[peer] = Some(s);
        }
        let mut peers = Vec::with_capacity(n);
        for s in streams {
            let Some(s) = s else {
                peers.push(None);
                continue;
            };
            s.set_nodelay(true).ok();
            let reader = BufReader::new(s.try_clone().map_err(fail)?);
            let mut w = BufWriter::new(s.try_clone().map_err(fail)?);
            let (tx, rx) = mpsc::channel::<Vec<u8>>();
            let writer = std::thread::spawn(move || {
                for frame in rx {
                    if write_frame(&mut w, &frame).is_err() {
                        break;
                    }
                }
            });
            peers.push(Some(Peer {
                reader,
                stream: s,
                tx: Some(tx),
                writer: Some(writer),
            }));
        }
        Ok(TcpTransport { me, n, peers })
    }

    /// A full mesh of `n` endpoints on loopback.
    pub fn local_mesh(n: usize) -> Result<Vec<TcpTransport>, SyncError> {
        let fail = |e: std::io::Error| SyncError::Transport {
            worker: 0,
            message: e.to_string(),
        };
        let listeners = (0..n)
            .map(|_| TcpListener::bind("127.0.0.1:0"))
            .collect::<Result<Vec<_>, _>>()
            .map_err(fail)?;
        let addrs = listeners
            .iter()
            .map(TcpListener::local_addr)
            .collect::<Result<Vec<_>, _>>()
            .map_err(fail)?;
        let handles: Vec<_> = listeners
            .into_iter()
            .enumerate()
            .map(|(me, l)| {
                let addrs = addrs.clone();
                std::thread::spawn(move || TcpTransport::join(me, l, &addrs))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("mesh setup thread panicked"))
            .collect()
    }

    fn fail(&self, message: impl Into<String>) -> SyncError {
        SyncError::Transport {
            worker: self.me,
            message: message.into(),
        }
    }
}

impl Transport for TcpTransport {
    fn worker(&self) -> WorkerId {
        self.me
    }

    fn workers(&self) -> usize {
        self.n
    }

    fn exchange(&mut self, outgoing: Vec<Vec<u8>>, local_min: SimTime) -> Result<Exchanged, SyncError> {
        let mut transfer = Duration::ZERO;
        let mut waiting = Duration::ZERO;
        let t0 = Instant::now();
        for (dst, buf) in outgoing.into_iter().enumerate() {
            let Some(peer) = self.peers.get(dst).and_then(Option::as_ref) else {
                continue;
            };
            let mut frame = Vec::with_capacity(8 + buf.len());
            frame.extend_from_slice(&local_min.as_ps().to_be_bytes());
            frame.extend_from_slice(&buf);
            let sent = peer.tx.as_ref().is_some_and(|tx| tx.send(frame).is_ok());
            if !sent {
                return Err(self.fail(format!("connection to worker {dst} closed")));
            }
        }
        transfer += t0.elapsed();
        let mut incoming = vec![Vec::new(); self.n];
        let mut mins = vec![SimTime::INFINITY; self.n];
        mins[self.me] = local_min;
        for src in 0..self.n {
            let Some(peer) = self.peers[src].as_mut() else {
                continue;
            };
            let t = Instant::now();
            let mut len = [0u8; 4];
            let r = peer.reader.read_exact(&mut len);
            waiting += t.elapsed();
            r.map_err(|e| SyncError::Transport {
                worker: self.me,
                message: format!("reading from worker {src}: {e}"),
            })?;
            let t = Instant::now();
            let mut frame = vec![0u8; u32::from_be_bytes(len) as usize];
            peer.reader.read_exact(&mut frame).map_err(|e| SyncError::Transport {
                worker: self.me,
                message: format!("reading from worker {src}: {e}"),
            })?;
            transfer += t.elapsed();
            if frame.len() < 8 {
                return Err(self.fail(format!("short frame from worker {src}")));
            }
            mins[src] = SimTime::from_ps(u64::from_be_bytes(frame[..8].try_into().unwrap()));
            frame.drain(..8);
            incoming[src] = frame;
        }
        Ok(Exchanged {
            incoming,
            mins,
            transfer,
            waiting,
        })
    }

    fn abort(&mut self) {
        for p in self.peers.iter().flatten() {
            p.stream.shutdown(Shutdown::Both).ok();
        }
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        for p in self.peers.iter_mut().flatten() {
            p.tx.take();
            if let Some(h) = p.writer.take() {
                h.join().ok();
            }
        }
    }
}
