//! Global quantum state manager service.
//!
//! One [`ServerCore`] holds every state that spans workers. Sessions are
//! served concurrently; a request first locks the tokens of every key in the
//! entanglement closure of the keys it names, in ascending key order, so
//! requests on disjoint closures never wait on each other.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{self, BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;

use crate::qsm::wire::{
    self, ErrorCode, Frame, GetBody, Reply, ReplyData, Request, RunBody, SetBody, WireError,
};
use crate::qsm::{Link, LocalQsm, Owner, QsmError};
use crate::quantum::{apply, Ket, QubitKey, UnitaryMemo, DEFAULT_MEMO_CAPACITY};

/// Environment variable that overrides the listen endpoint.
pub const ENDPOINT_ENV: &str = "QNET_QSM_ENDPOINT";
pub const DEFAULT_ENDPOINT: &str = "127.0.0.1:0";
const MAX_LOCK_ATTEMPTS: usize = 64;

pub fn endpoint_from_env() -> String {
    std::env::var(ENDPOINT_ENV).unwrap_or_else(|_| DEFAULT_ENDPOINT.to_owned())
}

#[derive(Default)]
struct Registry {
    key_state: HashMap<QubitKey, u64>,
    states: HashMap<u64, Ket>,
    next: u64,
}

impl Registry {
    fn insert(&mut self, ket: Ket) {
        let id = self.next;
        self.next += 1;
        for k in ket.keys() {
            self.key_state.insert(*k, id);
        }
        self.states.insert(id, ket);
    }

    fn remove(&mut self, id: u64) -> Ket {
        let ket = self.states.remove(&id).expect("live state id");
        for k in ket.keys() {
            self.key_state.remove(k);
        }
        ket
    }

    /// State ids holding `keys`, in first-reference order, plus every key
    /// of those states.
    fn closure(&self, keys: &[QubitKey]) -> Result<(Vec<u64>, BTreeSet<QubitKey>), WireError> {
        let mut ids = Vec::new();
        let mut all = BTreeSet::new();
        for k in keys {
            let id = *self
                .key_state
                .get(k)
                .ok_or_else(|| WireError::new(ErrorCode::MissingState, format!("no state for key {k}")))?;
            if !ids.contains(&id) {
                ids.push(id);
                all.extend(self.states[&id].keys().iter().copied());
            }
        }
        Ok((ids, all))
    }
}

struct Tokens<'a> {
    core: &'a ServerCore,
    keys: Vec<QubitKey>,
}

impl Drop for Tokens<'_> {
    fn drop(&mut self) {
        let mut held = self.core.held.lock().unwrap();
        for k in &self.keys {
            held.remove(k);
        }
        drop(held);
        self.core.released.notify_all();
    }
}

#[derive(Default)]
pub struct Session {
    worker: Option<u32>,
    last_id: u64,
    deferred: Option<WireError>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ServerStats {
    pub frames: u64,
    pub requests: u64,
}

pub struct ServerCore {
    registry: Mutex<Registry>,
    held: Mutex<HashSet<QubitKey>>,
    released: Condvar,
    memo: UnitaryMemo,
    terminated: AtomicBool,
    frames: AtomicU64,
    requests: AtomicU64,
}

impl Default for ServerCore {
    fn default() -> Self {
        ServerCore::new(DEFAULT_MEMO_CAPACITY)
    }
}

impl ServerCore {
    pub fn new(memo_capacity: usize) -> Self {
        ServerCore {
            registry: Mutex::new(Registry::default()),
            held: Mutex::new(HashSet::new()),
            released: Condvar::new(),
            memo: UnitaryMemo::new(memo_capacity),
            terminated: AtomicBool::new(false),
            frames: AtomicU64::new(0),
            requests: AtomicU64::new(0),
        }
    }

    pub fn is_terminated(&self) -> bool {
        self.terminated.load(Ordering::SeqCst)
    }

    pub fn stats(&self) -> ServerStats {
        ServerStats {
            frames: self.frames.load(Ordering::Relaxed),
            requests: self.requests.load(Ordering::Relaxed),
        }
    }

    pub fn contains(&self, key: &QubitKey) -> bool {
        self.registry.lock().unwrap().key_state.contains_key(key)
    }

    pub fn keys(&self) -> Vec<QubitKey> {
        let mut v: Vec<_> = self.registry.lock().unwrap().key_state.keys().copied().collect();
        v.sort();
        v
    }

    pub fn state_of(&self, key: &QubitKey) -> Option<Ket> {
        let reg = self.registry.lock().unwrap();
        reg.key_state.get(key).map(|id| reg.states[id].clone())
    }

    pub fn state_count(&self) -> usize {
        self.registry.lock().unwrap().states.len()
    }

    fn acquire(&self, keys: &BTreeSet<QubitKey>) -> Tokens<'_> {
        let mut got = Vec::with_capacity(keys.len());
        for k in keys {
            let mut held = self.held.lock().unwrap();
            while held.contains(k) {
                held = self.released.wait(held).unwrap();
            }
            held.insert(*k);
            got.push(*k);
        }
        Tokens { core: self, keys: got }
    }

    /// Locks the entanglement closure of `keys`, retrying if it grows
    /// between lookup and acquisition.
    fn lock_closure(&self, keys: &[QubitKey]) -> Result<(Tokens<'_>, Vec<u64>), WireError> {
        for _ in 0..MAX_LOCK_ATTEMPTS {
            let (_, closure) = self.registry.lock().unwrap().closure(keys)?;
            let tokens = self.acquire(&closure);
            let (ids, now) = self.registry.lock().unwrap().closure(keys)?;
            if now == closure {
                return Ok((tokens, ids));
            }
        }
        Err(WireError::new(
            ErrorCode::Protocol,
            format!("entanglement closure kept changing after {MAX_LOCK_ATTEMPTS} attempts"),
        ))
    }

    fn handle_set(&self, body: SetBody) -> Result<ReplyData, WireError> {
        let (_tokens, ids) = self.lock_closure(&body.keys)?;
        let mut reg = self.registry.lock().unwrap();
        for id in ids {
            let ket = reg.remove(id);
            for k in ket.keys() {
                if !body.keys.contains(k) {
                    reg.insert(Ket::zero(*k));
                }
            }
        }
        if let Some(s) = body.state {
            if let Some(k) = s.keys().iter().find(|k| reg.key_state.contains_key(k)) {
                return Err(WireError::new(ErrorCode::Protocol, format!("key {k} already held")));
            }
            reg.insert(s);
        }
        Ok(ReplyData::default())
    }

    fn handle_transfer(&self, state: Ket) -> Result<ReplyData, WireError> {
        let mut reg = self.registry.lock().unwrap();
        if let Some(k) = state.keys().iter().find(|k| reg.key_state.contains_key(k)) {
            return Err(WireError::new(ErrorCode::Protocol, format!("key {k} already held")));
        }
        reg.insert(state);
        Ok(ReplyData::default())
    }

    fn handle_get(&self, body: GetBody) -> Result<ReplyData, WireError> {
        let (_tokens, ids) = self.lock_closure(&[body.key])?;
        let reg = self.registry.lock().unwrap();
        Ok(ReplyData {
            state: Some(reg.states[&ids[0]].clone()),
            ..Default::default()
        })
    }

    fn handle_run(&self, body: RunBody) -> Result<ReplyData, WireError> {
        let (_tokens, ids) = self.lock_closure(&body.keys)?;
        let inputs: Vec<Ket> = {
            let reg = self.registry.lock().unwrap();
            ids.iter().map(|id| reg.states[id].clone()).collect()
        };
        let refs: Vec<&Ket> = inputs.iter().collect();
        let applied = apply(&refs, &body.circuit, &body.keys, body.prob_sample, &self.memo)
            .map_err(|e| WireError::new(ErrorCode::Quantum, e.to_string()))?;
        let mut reg = self.registry.lock().unwrap();
        for id in ids {
            reg.remove(id);
        }
        let measured: Vec<QubitKey> = body.circuit.measured.iter().map(|&w| body.keys[w]).collect();
        let mut reclaimed = Vec::new();
        for s in applied.states {
            if body.reclaim && s.num_qubits() == 1 && measured.contains(&s.keys()[0]) {
                reclaimed.push(s);
            } else {
                reg.insert(s);
            }
        }
        Ok(ReplyData {
            outcome: applied.outcome,
            reclaimed,
            ..Default::default()
        })
    }

    fn apply_one(&self, req: Request) -> Result<ReplyData, WireError> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        match req {
            Request::Set(b) => self.handle_set(b),
            Request::Get(b) => self.handle_get(b),
            Request::Run(b) => self.handle_run(b),
            Request::TransferIn(b) => self.handle_transfer(b.state),
            Request::Sync => Ok(ReplyData::default()),
            Request::Terminate => {
                self.terminated.store(true, Ordering::SeqCst);
                Ok(ReplyData::default())
            }
            Request::Batch(bodies) => {
                for (i, b) in bodies.into_iter().enumerate() {
                    if !b.is_no_response() {
                        return Err(WireError::new(
                            ErrorCode::Malformed,
                            format!("{} is not allowed in a batch", b.kind()),
                        )
                        .at(i));
                    }
                    self.apply_one(b).map_err(|e| e.at(i))?;
                }
                Ok(ReplyData::default())
            }
        }
    }

    /// Processes one frame payload. Returns the reply, or `None` for frames
    /// whose main request takes no reply.
    pub fn handle_frame(&self, session: &mut Session, payload: &[u8]) -> Option<Reply> {
        self.frames.fetch_add(1, Ordering::Relaxed);
        let frame: Frame = match serde_json::from_slice(payload) {
            Ok(f) => f,
            Err(e) => return Some(self.salvage(session, payload, e)),
        };
        let id = frame.id;
        let wants_reply = !frame.request.is_no_response();
        let result = self.process(session, frame);
        match (wants_reply, result) {
            (true, Ok(data)) => Some(Reply::ok(id, data)),
            (true, Err(e)) => Some(Reply::error(id, e)),
            (false, Ok(_)) => None,
            (false, Err(e)) => {
                session.deferred.get_or_insert(e);
                None
            }
        }
    }

    /// Handles a frame that failed to parse as a whole. A BATCH is applied
    /// body by body up to the first unreadable one so the error can name its
    /// index; anything else is rejected outright.
    fn salvage(&self, session: &mut Session, payload: &[u8], err: serde_json::Error) -> Reply {
        let malformed = |m: String| WireError::new(ErrorCode::Malformed, m);
        let Ok(v) = serde_json::from_slice::<serde_json::Value>(payload) else {
            return Reply::error(0, malformed(err.to_string()));
        };
        let id = v.get("id").and_then(|i| i.as_u64()).unwrap_or(0);
        let bodies = match (v.get("kind").and_then(|k| k.as_str()), v.get("body")) {
            (Some("BATCH"), Some(serde_json::Value::Array(b))) if v.get("pending").is_none() => b.clone(),
            _ => return Reply::error(id, malformed(err.to_string())),
        };
        let header = Frame {
            v: v.get("v").and_then(|x| x.as_u64()).unwrap_or(0) as u32,
            id,
            worker: v.get("worker").and_then(|x| x.as_u64()).unwrap_or(u64::MAX) as u32,
            request: Request::Batch(Vec::new()),
            pending: Vec::new(),
        };
        if let Err(e) = self.process(session, header) {
            return Reply::error(id, e);
        }
        for (i, b) in bodies.into_iter().enumerate() {
            let req: Request = match serde_json::from_value(b) {
                Ok(r) => r,
                Err(e) => return Reply::error(id, malformed(e.to_string()).at(i)),
            };
            let r = self.apply_one(Request::Batch(vec![req])).map_err(|e| e.at(i));
            if let Err(e) = r {
                return Reply::error(id, e);
            }
        }
        Reply::ok(id, ReplyData::default())
    }

    fn process(&self, session: &mut Session, frame: Frame) -> Result<ReplyData, WireError> {
        if frame.v != wire::PROTOCOL_VERSION {
            return Err(WireError::new(ErrorCode::Malformed, format!("protocol version {}", frame.v)));
        }
        if *session.worker.get_or_insert(frame.worker) != frame.worker {
            return Err(WireError::new(ErrorCode::Protocol, "worker id changed within a session"));
        }
        if frame.id <= session.last_id {
            return Err(WireError::new(
                ErrorCode::Protocol,
                format!("request id {} does not exceed {}", frame.id, session.last_id),
            ));
        }
        session.last_id = frame.id;
        if let Some(e) = session.deferred.take() {
            return Err(e);
        }
        for (i, p) in frame.pending.into_iter().enumerate() {
            if !p.is_no_response() {
                return Err(WireError::new(ErrorCode::Malformed, format!("{} cannot be pending", p.kind())).at(i));
            }
            self.apply_one(p).map_err(|e| e.at(i))?;
        }
        self.apply_one(frame.request)
    }
}

/// Link that calls a server core in the same process. Frames are still
/// encoded and decoded so message and byte counts match the TCP link.
pub struct InProcLink {
    core: Arc<ServerCore>,
    session: Session,
}

impl InProcLink {
    pub fn new(core: Arc<ServerCore>) -> Self {
        InProcLink {
            core,
            session: Session::default(),
        }
    }
}

impl Link for InProcLink {
    fn request(&mut self, frame: &[u8]) -> Result<Vec<u8>, QsmError> {
        let reply = self
            .core
            .handle_frame(&mut self.session, &frame[4..])
            .ok_or_else(|| QsmError::Protocol("request frame produced no reply".into()))?;
        Ok(wire::encode(&reply)[4..].to_vec())
    }

    fn post(&mut self, frame: &[u8]) -> Result<(), QsmError> {
        match self.core.handle_frame(&mut self.session, &frame[4..]) {
            None => Ok(()),
            Some(_) => Err(QsmError::Protocol("posted frame produced a reply".into())),
        }
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    core: Arc<ServerCore>,
    thread: Option<JoinHandle<io::Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn core(&self) -> &Arc<ServerCore> {
        &self.core
    }

    /// Stops accepting sessions and waits for the accept loop to exit.
    pub fn shutdown(mut self) -> io::Result<()> {
        self.stop()
    }

    fn stop(&mut self) -> io::Result<()> {
        self.core.terminated.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.stop();
    }
}

/// Binds `endpoint` and serves sessions on background threads until a
/// TERMINATE arrives or the handle is shut down.
pub fn serve(endpoint: &str, core: Arc<ServerCore>) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(endpoint)?;
    let addr = listener.local_addr()?;
    let c = Arc::clone(&core);
    let thread = std::thread::Builder::new()
        .name("qsm-accept".into())
        .spawn(move || accept_loop(listener, addr, c))?;
    Ok(ServerHandle {
        addr,
        core,
        thread: Some(thread),
    })
}

fn accept_loop(listener: TcpListener, addr: SocketAddr, core: Arc<ServerCore>) -> io::Result<()> {
    for stream in listener.incoming() {
        if core.is_terminated() {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(_) => continue,
        };
        let c = Arc::clone(&core);
        // Sessions are detached: a worker that keeps its connection open
        // must not block shutdown.
        std::thread::spawn(move || {
            if let Err(e) = session_loop(stream, &c) {
                if e.kind() != io::ErrorKind::UnexpectedEof {
                    eprintln!("qsm session ended: {e}");
                }
            }
            if c.is_terminated() {
                // Wake the accept loop so it can observe the flag.
                let _ = TcpStream::connect(addr);
            }
        });
    }
    Ok(())
}

fn session_loop(stream: TcpStream, core: &ServerCore) -> io::Result<()> {
    stream.set_nodelay(true).ok();
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let mut session = Session::default();
    while let Some(payload) = wire::read_frame(&mut reader)? {
        if let Some(reply) = core.handle_frame(&mut session, &payload) {
            let bytes = wire::encode(&reply);
            wire::write_frame(&mut writer, &bytes[4..])?;
        }
        if core.is_terminated() {
            break;
        }
    }
    Ok(())
}

/// Cross-checks every worker registry against the server: each key is held
/// by at most one worker, local keys are absent from the server, and global
/// keys are present on it.
/// What one worker owns, captured at a window boundary.
#[derive(Clone, Debug)]
pub struct OwnershipSnapshot {
    pub worker: u32,
    pub keys: Vec<(QubitKey, Owner)>,
}

impl OwnershipSnapshot {
    /// Runs the worker's own consistency audit, then records its keys.
    pub fn capture(q: &LocalQsm) -> Result<Self, String> {
        q.audit()?;
        Ok(OwnershipSnapshot {
            worker: q.worker(),
            keys: q.owned_keys().collect(),
        })
    }
}

/// Single authority: no key is held by two workers, local keys are absent
/// from the server and global keys are present on it.
pub fn audit_snapshots(snaps: &[OwnershipSnapshot], server: Option<&ServerCore>) -> Result<(), String> {
    let mut holder: HashMap<QubitKey, u32> = HashMap::new();
    for snap in snaps {
        for (k, o) in &snap.keys {
            if let Some(w) = holder.insert(*k, snap.worker) {
                return Err(format!("key {k} held by workers {w} and {}", snap.worker));
            }
            let on_server = server.is_some_and(|s| s.contains(k));
            match o {
                Owner::Local(_) if on_server => {
                    return Err(format!("key {k} is local on worker {} and on the server", snap.worker))
                }
                Owner::Global if !on_server => {
                    return Err(format!("key {k} is global on worker {} but not on the server", snap.worker))
                }
                _ => {}
            }
        }
    }
    Ok(())
}

pub fn audit_ownership(workers: &[&LocalQsm], server: Option<&ServerCore>) -> Result<(), String> {
    let snaps = workers
        .iter()
        .map(|q| OwnershipSnapshot::capture(q))
        .collect::<Result<Vec<_>, _>>()?;
    audit_snapshots(&snaps, server)
}
