//! Byte-level encodings: parameter tensors, frames and message payloads.
//!
//! Frame header: `"FFL1"`, one type byte, payload length as u64 big-endian.
//! Every integer and float inside a payload is little-endian.

use std::io::{ErrorKind, Read, Write};

use crate::metrics::{LossConfig, RoundMetrics};
use crate::model::{ModelParams, NamedTensor, TrainConfig};

pub const MAGIC: [u8; 4] = *b"FFL1";
pub const HEADER_LEN: usize = 13;
/// Default upper bound on a payload; larger headers are rejected before
/// any allocation.
pub const DEFAULT_MAX_PAYLOAD: u64 = 256 * 1024 * 1024;

const DTYPE_F32: u8 = 0;

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("truncated input: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unknown message type 0x{0:02x}")]
    UnknownMessageType(u8),
    #[error("payload of {len} bytes exceeds limit of {max}")]
    PayloadTooLarge { len: u64, max: u64 },
    #[error("tensor name of {0} bytes exceeds 65535")]
    NameTooLong(usize),
    #[error("unsupported dtype tag {0}")]
    UnsupportedDtype(u8),
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("unexpected message {got} (expected {expected})")]
    Unexpected { expected: &'static str, got: &'static str },
    #[error("connection closed")]
    Closed,
    #[error("connection error: {0}")]
    Io(#[from] std::io::Error),
}

type PResult<T> = std::result::Result<T, ProtocolError>;

/// Little-endian cursor over a payload.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> PResult<&'a [u8]> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(ProtocolError::Truncated { needed: n, available });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> PResult<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> PResult<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> PResult<u16> {
        self.array().map(u16::from_le_bytes)
    }

    fn u32(&mut self) -> PResult<u32> {
        self.array().map(u32::from_le_bytes)
    }

    fn u64(&mut self) -> PResult<u64> {
        self.array().map(u64::from_le_bytes)
    }

    fn f64(&mut self) -> PResult<f64> {
        self.array().map(f64::from_le_bytes)
    }

    fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }

    fn finish(self) -> PResult<()> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(ProtocolError::TrailingBytes(n)),
        }
    }
}

/// Encodes parameters: u32 tensor count, then per tensor a u16-prefixed
/// UTF-8 name, dtype tag, rank, u32 dims and the f32 payload.
pub fn serialize_params(p: &ModelParams) -> PResult<Vec<u8>> {
    let mut out = Vec::with_capacity(4 + p.scalar_count() * 4 + p.tensors().len() * 32);
    write_params(&mut out, p)?;
    Ok(out)
}

fn write_params(out: &mut Vec<u8>, p: &ModelParams) -> PResult<()> {
    let count = u32::try_from(p.tensors().len()).map_err(|_| ProtocolError::Malformed("too many tensors".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for t in p.tensors() {
        let name = t.name().as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| ProtocolError::NameTooLong(name.len()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(DTYPE_F32);
        let rank = u8::try_from(t.shape().len()).map_err(|_| ProtocolError::Malformed(format!("rank {} exceeds 255", t.shape().len())))?;
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| ProtocolError::Malformed(format!("dimension {d} exceeds u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(())
}

pub fn deserialize_params(bytes: &[u8]) -> PResult<ModelParams> {
    let mut r = Reader::new(bytes);
    let p = read_params(&mut r)?;
    r.finish()?;
    Ok(p)
}

fn read_params(r: &mut Reader<'_>) -> PResult<ModelParams> {
    let count = r.u32()? as usize;
    // Every tensor needs at least 4 bytes; cap the allocation accordingly.
    let mut tensors = Vec::with_capacity(count.min(r.buf.len() / 4 + 1));
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| ProtocolError::Malformed("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype = r.u8()?;
        if dtype != DTYPE_F32 {
            return Err(ProtocolError::UnsupportedDtype(dtype));
        }
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut n: usize = 1;
        for _ in 0..rank {
            let d = r.u32()? as usize;
            n = n
                .checked_mul(d)
                .ok_or_else(|| ProtocolError::Malformed(format!("tensor {name} is too large")))?;
            shape.push(d);
        }
        let bytes_needed = n
            .checked_mul(4)
            .ok_or_else(|| ProtocolError::Malformed(format!("tensor {name} is too large")))?;
        let raw = r.take(bytes_needed)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect();
        tensors.push(NamedTensor::new(name, shape, data).map_err(|e| ProtocolError::Malformed(e.to_string()))?);
    }
    ModelParams::new(tensors).map_err(|e| ProtocolError::Malformed(e.to_string()))
}

/// Wire message types. No variant carries pixel data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageType {
    JoinRequest = 0x01,
    JoinAck = 0x02,
    FitInstruction = 0x03,
    FitResult = 0x04,
    EvaluateInstruction = 0x05,
    EvaluateResult = 0x06,
    Shutdown = 0x07,
    Error = 0x7f,
}

impl MessageType {
    pub const ALL: [MessageType; 8] = [
        MessageType::JoinRequest,
        MessageType::JoinAck,
        MessageType::FitInstruction,
        MessageType::FitResult,
        MessageType::EvaluateInstruction,
        MessageType::EvaluateResult,
        MessageType::Shutdown,
        MessageType::Error,
    ];

    pub fn from_u8(b: u8) -> PResult<Self> {
        Self::ALL
            .into_iter()
            .find(|t| *t as u8 == b)
            .ok_or(ProtocolError::UnknownMessageType(b))
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageType::JoinRequest => "JoinRequest",
            MessageType::JoinAck => "JoinAck",
            MessageType::FitInstruction => "FitInstruction",
            MessageType::FitResult => "FitResult",
            MessageType::EvaluateInstruction => "EvaluateInstruction",
            MessageType::EvaluateResult => "EvaluateResult",
            MessageType::Shutdown => "Shutdown",
            MessageType::Error => "Error",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MessageType,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.push(self.msg_type as u8);
        out.extend_from_slice(&(self.payload.len() as u64).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Decodes one frame from the front of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn decode(bytes: &[u8], max_payload: u64) -> PResult<(Frame, usize)> {
        if bytes.len() < HEADER_LEN {
            return Err(ProtocolError::Truncated {
                needed: HEADER_LEN,
                available: bytes.len(),
            });
        }
        let (msg_type, len) = parse_header(bytes[..HEADER_LEN].try_into().expect("header"), max_payload)?;
        let len = len as usize;
        let body = &bytes[HEADER_LEN..];
        if body.len() < len {
            return Err(ProtocolError::Truncated {
                needed: len,
                available: body.len(),
            });
        }
        Ok((
            Frame {
                msg_type,
                payload: body[..len].to_vec(),
            },
            HEADER_LEN + len,
        ))
    }
}

fn parse_header(h: &[u8; HEADER_LEN], max_payload: u64) -> PResult<(MessageType, u64)> {
    let magic: [u8; 4] = h[..4].try_into().expect("magic");
    if magic != MAGIC {
        return Err(ProtocolError::BadMagic(magic));
    }
    let msg_type = MessageType::from_u8(h[4])?;
    let len = u64::from_be_bytes(h[5..].try_into().expect("length"));
    if len > max_payload {
        return Err(ProtocolError::PayloadTooLarge { len, max: max_payload });
    }
    Ok((msg_type, len))
}

/// Reads one frame. A clean end of stream before the first header byte is
/// [`ProtocolError::Closed`]; anywhere else it is truncation.
pub fn read_frame(r: &mut impl Read, max_payload: u64) -> PResult<Frame> {
    let mut header = [0u8; HEADER_LEN];
    let got = read_full(r, &mut header)?;
    if got == 0 {
        return Err(ProtocolError::Closed);
    }
    if got < HEADER_LEN {
        return Err(ProtocolError::Truncated {
            needed: HEADER_LEN,
            available: got,
        });
    }
    let (msg_type, len) = parse_header(&header, max_payload)?;
    // Grow with the data actually received rather than trusting the header.
    let mut payload = Vec::with_capacity((len as usize).min(1 << 20));
    r.take(len).read_to_end(&mut payload)?;
    if (payload.len() as u64) < len {
        return Err(ProtocolError::Truncated {
            needed: len as usize,
            available: payload.len(),
        });
    }
    Ok(Frame { msg_type, payload })
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> PResult<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(filled)
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> PResult<()> {
    w.write_all(&frame.encode())?;
    w.flush()?;
    Ok(())
}

/// A client's contribution to one round.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientUpdate {
    pub params: ModelParams,
    pub num_samples: u64,
    pub metrics: RoundMetrics,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    JoinRequest { name: String },
    JoinAck { client_id: u32 },
    FitInstruction { round: u32, config: TrainConfig, params: ModelParams },
    FitResult(ClientUpdate),
    EvaluateInstruction { round: u32, n_samples: u32, params: ModelParams },
    EvaluateResult { metrics: RoundMetrics, n_samples: u64 },
    Shutdown { params: ModelParams },
    Error(String),
}

fn put_metrics(out: &mut Vec<u8>, m: &RoundMetrics) {
    for v in [m.loss, m.iou, m.pixel_accuracy, m.dice] {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn get_metrics(r: &mut Reader<'_>) -> PResult<RoundMetrics> {
    Ok(RoundMetrics {
        loss: r.f64()?,
        iou: r.f64()?,
        pixel_accuracy: r.f64()?,
        dice: r.f64()?,
    })
}

fn put_config(out: &mut Vec<u8>, c: &TrainConfig) {
    out.extend_from_slice(&c.epochs.to_le_bytes());
    out.extend_from_slice(&c.steps_per_epoch.to_le_bytes());
    out.extend_from_slice(&c.batch_size.to_le_bytes());
    for v in [c.lr, c.weight_decay, c.loss.alpha, c.loss.score_weight] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&c.seed.to_le_bytes());
}

fn get_config(r: &mut Reader<'_>) -> PResult<TrainConfig> {
    Ok(TrainConfig {
        epochs: r.u32()?,
        steps_per_epoch: r.u32()?,
        batch_size: r.u32()?,
        lr: r.f64()?,
        weight_decay: r.f64()?,
        loss: LossConfig {
            alpha: r.f64()?,
            score_weight: r.f64()?,
        },
        seed: r.u64()?,
    })
}

impl Message {
    pub fn msg_type(&self) -> MessageType {
        match self {
            Message::JoinRequest { .. } => MessageType::JoinRequest,
            Message::JoinAck { .. } => MessageType::JoinAck,
            Message::FitInstruction { .. } => MessageType::FitInstruction,
            Message::FitResult(_) => MessageType::FitResult,
            Message::EvaluateInstruction { .. } => MessageType::EvaluateInstruction,
            Message::EvaluateResult { .. } => MessageType::EvaluateResult,
            Message::Shutdown { .. } => MessageType::Shutdown,
            Message::Error(_) => MessageType::Error,
        }
    }

    pub fn to_frame(&self) -> PResult<Frame> {
        let mut p = Vec::new();
        match self {
            Message::JoinRequest { name } => {
                let len = u16::try_from(name.len()).map_err(|_| ProtocolError::NameTooLong(name.len()))?;
                p.extend_from_slice(&len.to_le_bytes());
                p.extend_from_slice(name.as_bytes());
            }
            Message::JoinAck { client_id } => p.extend_from_slice(&client_id.to_le_bytes()),
            Message::FitInstruction { round, config, params } => {
                p.extend_from_slice(&round.to_le_bytes());
                put_config(&mut p, config);
                write_params(&mut p, params)?;
            }
            Message::FitResult(u) => {
                p.extend_from_slice(&u.num_samples.to_le_bytes());
                put_metrics(&mut p, &u.metrics);
                write_params(&mut p, &u.params)?;
            }
            Message::EvaluateInstruction { round, n_samples, params } => {
                p.extend_from_slice(&round.to_le_bytes());
                p.extend_from_slice(&n_samples.to_le_bytes());
                write_params(&mut p, params)?;
            }
            Message::EvaluateResult { metrics, n_samples } => {
                p.extend_from_slice(&n_samples.to_le_bytes());
                put_metrics(&mut p, metrics);
            }
            Message::Shutdown { params } => write_params(&mut p, params)?,
            Message::Error(text) => p.extend_from_slice(text.as_bytes()),
        }
        Ok(Frame {
            msg_type: self.msg_type(),
            payload: p,
        })
    }

    pub fn from_frame(f: &Frame) -> PResult<Message> {
        let mut r = Reader::new(&f.payload);
        let msg = match f.msg_type {
            MessageType::JoinRequest => {
                let len = r.u16()? as usize;
                let name = std::str::from_utf8(r.take(len)?)
                    .map_err(|_| ProtocolError::Malformed("client name is not UTF-8".into()))?;
                Message::JoinRequest { name: name.to_string() }
            }
            MessageType::JoinAck => Message::JoinAck { client_id: r.u32()? },
            MessageType::FitInstruction => Message::FitInstruction {
                round: r.u32()?,
                config: get_config(&mut r)?,
                params: read_params(&mut r)?,
            },
            MessageType::FitResult => {
                let num_samples = r.u64()?;
                let metrics = get_metrics(&mut r)?;
                Message::FitResult(ClientUpdate {
                    params: read_params(&mut r)?,
                    num_samples,
                    metrics,
                })
            }
            MessageType::EvaluateInstruction => Message::EvaluateInstruction {
                round: r.u32()?,
                n_samples: r.u32()?,
                params: read_params(&mut r)?,
            },
            MessageType::EvaluateResult => {
                let n_samples = r.u64()?;
                Message::EvaluateResult {
                    metrics: get_metrics(&mut r)?,
                    n_samples,
                }
            }
            MessageType::Shutdown => Message::Shutdown {
                params: read_params(&mut r)?,
            },
            MessageType::Error => Message::Error(String::from_utf8_lossy(r.rest()).into_owned()),
        };
        r.finish()?;
        Ok(msg)
    }

    pub fn encode(&self) -> PResult<Vec<u8>> {
        Ok(self.to_frame()?.encode())
    }
}

pub fn send_message(w: &mut impl Write, msg: &Message) -> PResult<()> {
    write_frame(w, &msg.to_frame()?)
}

pub fn recv_message(r: &mut impl Read, max_payload: u64) -> PResult<Message> {
    Message::from_frame(&read_frame(r, max_payload)?)
}
