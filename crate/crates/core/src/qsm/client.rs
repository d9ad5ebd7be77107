use std::io::{BufReader, BufWriter};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::wire::{self, Frame, Reply, ReplyBody, ReplyData, Request, WireError, PROTOCOL_VERSION};
use super::QsmError;

/// Byte transport to the global QSM. A `request` expects exactly one reply
/// frame back; a `post` expects none.
pub trait Link: Send {
    fn request(&mut self, frame: &[u8]) -> Result<Vec<u8>, QsmError>;
    fn post(&mut self, frame: &[u8]) -> Result<(), QsmError>;
}

pub struct TcpLink {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl TcpLink {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, QsmError> {
        let stream = TcpStream::connect(addr).map_err(|e| QsmError::Unavailable(e.to_string()))?;
        stream.set_nodelay(true).ok();
        let reader = BufReader::new(stream.try_clone().map_err(|e| QsmError::Unavailable(e.to_string()))?);
        Ok(TcpLink {
            reader,
            writer: BufWriter::new(stream),
        })
    }
}

impl Link for TcpLink {
    fn request(&mut self, frame: &[u8]) -> Result<Vec<u8>, QsmError> {
        self.post(frame)?;
        wire::read_frame(&mut self.reader)
            .map_err(|e| QsmError::Unavailable(e.to_string()))?
            .ok_or_else(|| QsmError::Unavailable("server closed the connection".into()))
    }

    fn post(&mut self, frame: &[u8]) -> Result<(), QsmError> {
        use std::io::Write;
        self.writer
            .write_all(frame)
            .and_then(|_| self.writer.flush())
            .map_err(|e| QsmError::Unavailable(e.to_string()))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClientStats {
    /// Frames written to the server.
    pub messages: u64,
    pub bytes_sent: u64,
    pub round_trips: u64,
    /// Individual requests carried, counting each batched body.
    pub requests: u64,
    #[serde(with = "crate::time::duration_secs")]
    pub socket_time: Duration,
}

/// Client for one worker's session with the global QSM.
pub struct QsmClient {
    link: Box<dyn Link>,
    worker: u32,
    next_id: u64,
    batching: bool,
    pending: Vec<Request>,
    /// Frames posted without a reply since the last round trip.
    unacked: bool,
    stats: ClientStats,
}

impl QsmClient {
    pub fn new(link: Box<dyn Link>, worker: u32, batching: bool) -> Self {
        QsmClient {
            link,
            worker,
            next_id: 1,
            batching,
            pending: Vec::new(),
            unacked: false,
            stats: ClientStats::default(),
        }
    }

    pub fn stats(&self) -> &ClientStats {
        &self.stats
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    fn frame(&mut self, request: Request, pending: Vec<Request>) -> Vec<u8> {
        let id = self.next_id;
        self.next_id += 1;
        self.stats.requests += pending.len() as u64
            + match &request {
                Request::Batch(b) => b.len() as u64,
                _ => 1,
            };
        let bytes = wire::encode(&Frame {
            v: PROTOCOL_VERSION,
            id,
            worker: self.worker,
            request,
            pending,
        });
        self.stats.messages += 1;
        self.stats.bytes_sent += bytes.len() as u64;
        bytes
    }

    /// Queues a request whose result is not needed. Without batching it is
    /// sent immediately.
    pub fn submit(&mut self, request: Request) -> Result<(), QsmError> {
        debug_assert!(request.is_no_response());
        if self.batching {
            self.pending.push(request);
            return Ok(());
        }
        let bytes = self.frame(request, Vec::new());
        let start = Instant::now();
        let r = self.link.post(&bytes);
        self.stats.socket_time += start.elapsed();
        self.unacked = true;
        r
    }

    /// Sends `request` with the pending buffer piggybacked and waits for
    /// the reply.
    pub fn call(&mut self, request: Request) -> Result<ReplyData, QsmError> {
        debug_assert!(!request.is_no_response(), "the server never answers {}", request.kind());
        let pending = std::mem::take(&mut self.pending);
        let bytes = self.frame(request, pending);
        let start = Instant::now();
        let reply = self.link.request(&bytes);
        self.stats.socket_time += start.elapsed();
        self.stats.round_trips += 1;
        self.unacked = false;
        let reply: Reply = serde_json::from_slice(&reply?)
            .map_err(|e| QsmError::Protocol(format!("unreadable reply: {e}")))?;
        match reply.body {
            ReplyBody::Ok { data } => Ok(data),
            ReplyBody::Error { error } => Err(QsmError::Server(error)),
        }
    }

    /// Sends the pending buffer as one grouped message, if non-empty.
    pub fn flush(&mut self) -> Result<(), QsmError> {
        if self.pending.is_empty() {
            return Ok(());
        }
        let batch = std::mem::take(&mut self.pending);
        self.call(Request::Batch(batch)).map(drop)
    }

    /// Blocks until the server has applied every earlier request.
    pub fn sync_barrier(&mut self) -> Result<(), QsmError> {
        if self.pending.is_empty() {
            self.call(Request::Sync).map(drop)
        } else {
            self.flush()
        }
    }

    /// Like [`sync_barrier`](Self::sync_barrier) but skips the round trip
    /// when nothing has been sent since the last reply.
    pub fn sync_if_dirty(&mut self) -> Result<(), QsmError> {
        if !self.pending.is_empty() || self.unacked {
            self.sync_barrier()
        } else {
            Ok(())
        }
    }

    pub fn terminate(&mut self) -> Result<(), QsmError> {
        self.sync_barrier()?;
        self.call(Request::Terminate).map(drop)
    }
}

impl From<WireError> for QsmError {
    fn from(e: WireError) -> Self {
        QsmError::Server(e)
    }
}
