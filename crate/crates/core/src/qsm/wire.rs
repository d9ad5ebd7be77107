//! Global-QSM wire protocol.
//!
//! Every message is one frame: a 4-byte big-endian payload length followed
//! by a UTF-8 JSON object. Requests look like
//!
//! ```text
//! {"v":1,"id":7,"worker":2,"kind":"RUN","body":{...},"pending":[{"kind":"TRANSFER_IN","body":{...}}]}
//! ```
//!
//! `pending` carries buffered no-response requests that the server applies,
//! in order, before the main request. Replies look like
//!
//! ```text
//! {"v":1,"id":7,"status":"ok","data":{"outcome":[0,1],"reclaimed":[...]}}
//! {"v":1,"id":7,"status":"error","error":{"code":"MISSING_STATE","index":null,"message":"..."}}
//! ```
//!
//! A frame whose main request is a SET, a TRANSFER_IN or a RUN without
//! measurement gets no reply; a failure among such frames is reported on
//! the session's next reply. Every other frame gets exactly one reply.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::quantum::{Circuit, Ket, QubitKey};

pub const PROTOCOL_VERSION: u32 = 1;
/// Upper bound on a frame payload; anything larger is treated as garbage.
pub const MAX_FRAME: usize = 64 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetBody {
    /// Keys whose server-side states are discarded. Partners left behind are
    /// reset to `|0⟩`.
    pub keys: Vec<QubitKey>,
    /// Replacement state kept on the server.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<Ket>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GetBody {
    pub key: QubitKey,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunBody {
    pub circuit: Circuit,
    pub keys: Vec<QubitKey>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob_sample: Option<f64>,
    /// Return measured qubits to the caller instead of keeping them.
    #[serde(default)]
    pub reclaim: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferBody {
    pub state: Ket,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "body", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Request {
    Set(SetBody),
    Get(GetBody),
    Run(RunBody),
    TransferIn(TransferBody),
    Sync,
    Terminate,
    Batch(Vec<Request>),
}

impl Request {
    /// Requests whose effect the client does not need to observe.
    pub fn is_no_response(&self) -> bool {
        match self {
            Request::Set(_) | Request::TransferIn(_) => true,
            Request::Run(r) => !r.circuit.measures(),
            _ => false,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Request::Set(_) => "SET",
            Request::Get(_) => "GET",
            Request::Run(_) => "RUN",
            Request::TransferIn(_) => "TRANSFER_IN",
            Request::Sync => "SYNC",
            Request::Terminate => "TERMINATE",
            Request::Batch(_) => "BATCH",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub v: u32,
    pub id: u64,
    pub worker: u32,
    #[serde(flatten)]
    pub request: Request,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pending: Vec<Request>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    Malformed,
    MissingState,
    Quantum,
    Protocol,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{code:?}{}: {message}", index.map(|i| format!(" at index {i}")).unwrap_or_default())]
pub struct WireError {
    pub code: ErrorCode,
    /// Position of the failing body within a batch or pending list.
    pub index: Option<usize>,
    pub message: String,
}

impl WireError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        WireError {
            code,
            index: None,
            message: message.into(),
        }
    }

    pub fn at(mut self, index: usize) -> Self {
        self.index = Some(index);
        self
    }

    /// Errors that indicate a broken simulation rather than a bad message.
    pub fn is_fatal(&self) -> bool {
        matches!(self.code, ErrorCode::MissingState | ErrorCode::Protocol)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplyData {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<Ket>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reclaimed: Vec<Ket>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum ReplyBody {
    Ok { data: ReplyData },
    Error { error: WireError },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub v: u32,
    pub id: u64,
    #[serde(flatten)]
    pub body: ReplyBody,
}

impl Reply {
    pub fn ok(id: u64, data: ReplyData) -> Self {
        Reply {
            v: PROTOCOL_VERSION,
            id,
            body: ReplyBody::Ok { data },
        }
    }

    pub fn error(id: u64, error: WireError) -> Self {
        Reply {
            v: PROTOCOL_VERSION,
            id,
            body: ReplyBody::Error { error },
        }
    }
}

pub fn encode<T: Serialize>(msg: &T) -> Vec<u8> {
    let json = serde_json::to_vec(msg).expect("wire types always serialize");
    let mut out = Vec::with_capacity(json.len() + 4);
    out.extend_from_slice(&(json.len() as u32).to_be_bytes());
    out.extend_from_slice(&json);
    out
}

pub fn write_frame(w: &mut impl Write, payload: &[u8]) -> io::Result<()> {
    w.write_all(&(payload.len() as u32).to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

/// Reads one frame payload. `Ok(None)` on a clean end of stream.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {len} bytes")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(Some(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::circuits;

    fn k(n: u64) -> QubitKey {
        QubitKey::random_for_tests(n)
    }

    #[test]
    fn frame_layout() {
        let f = Frame {
            v: 1,
            id: 3,
            worker: 2,
            request: Request::Sync,
            pending: vec![],
        };
        let bytes = encode(&f);
        let len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
        assert_eq!(len, bytes.len() - 4);
        let v: serde_json::Value = serde_json::from_slice(&bytes[4..]).unwrap();
        assert_eq!(v["kind"], "SYNC");
        assert_eq!(v["worker"], 2);
        assert!(v.get("pending").is_none());
    }

    #[test]
    fn round_trip_with_pending() {
        let f = Frame {
            v: 1,
            id: 9,
            worker: 0,
            request: Request::Run(RunBody {
                circuit: circuits::bell_measurement(),
                keys: vec![k(1), k(2)],
                prob_sample: Some(0.25),
                reclaim: true,
            }),
            pending: vec![
                Request::TransferIn(TransferBody { state: Ket::epr(k(1), k(3)) }),
                Request::Set(SetBody { keys: vec![k(4)], state: None }),
            ],
        };
        let bytes = encode(&f);
        let back: Frame = serde_json::from_slice(&bytes[4..]).unwrap();
        assert_eq!(back, f);
        let v: serde_json::Value = serde_json::from_slice(&bytes[4..]).unwrap();
        assert_eq!(v["pending"][0]["kind"], "TRANSFER_IN");
        assert_eq!(v["body"]["circuit"]["gates"][0]["gate"], "CNOT");
    }

    #[test]
    fn reply_shapes() {
        let ok = serde_json::to_value(Reply::ok(4, ReplyData::default())).unwrap();
        assert_eq!(ok["status"], "ok");
        let err = Reply::error(5, WireError::new(ErrorCode::Malformed, "bad").at(1));
        let v = serde_json::to_value(&err).unwrap();
        assert_eq!(v["error"]["code"], "MALFORMED");
        assert_eq!(v["error"]["index"], 1);
        let back: Reply = serde_json::from_value(v).unwrap();
        assert_eq!(back, err);
    }

    #[test]
    fn read_frame_handles_eof() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"{}").unwrap();
        let mut r = &buf[..];
        assert_eq!(read_frame(&mut r).unwrap().unwrap(), b"{}");
        assert_eq!(read_frame(&mut r).unwrap(), None);
    }

    #[test]
    fn no_response_kinds() {
        let run = |c: Circuit| Request::Run(RunBody { circuit: c, keys: vec![], prob_sample: None, reclaim: false });
        assert!(run(circuits::pauli_correction(1, 1)).is_no_response());
        assert!(!run(circuits::bell_measurement()).is_no_response());
        assert!(!Request::Get(GetBody { key: k(0) }).is_no_response());
        assert!(Request::TransferIn(TransferBody { state: Ket::zero(k(0)) }).is_no_response());
    }
}
