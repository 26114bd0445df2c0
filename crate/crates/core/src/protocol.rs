//! Framed binary protocol between the coordinator and layer workers.
//!
//! Every frame is a 12-byte header followed by the payload:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "TMAW"
//! 4       2     protocol version (u16, little endian)
//! 6       1     message kind (1 FitRequest, 2 FitReply, 3 Error, 4 Heartbeat)
//! 7       1     reserved, zero
//! 8       4     payload length in bytes (u32, little endian)
//! ```
//!
//! Payload fields are little endian; floats are IEEE-754 bit patterns, so
//! values survive the round trip exactly. A [`WorkerReply`] carries fitted
//! means on the requested pairs and fit metadata only; the layer's observed
//! values never appear in it.

use std::io::{Read, Write};
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::family::EdgeFamily;
use crate::graph::{EdgeId, LayerData};
use crate::lsm::{FitOptions, Init};
use crate::rng::{Purpose, RngStream, StreamId};

pub const MAGIC: [u8; 4] = *b"TMAW";
pub const PROTOCOL_VERSION: u16 = 1;
const HEADER_LEN: usize = 12;
const MAX_PAYLOAD: usize = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MessageKind {
    FitRequest = 1,
    FitReply = 2,
    Error = 3,
    Heartbeat = 4,
}

impl MessageKind {
    fn from_u8(v: u8) -> Result<Self> {
        match v {
            1 => Ok(MessageKind::FitRequest),
            2 => Ok(MessageKind::FitReply),
            3 => Ok(MessageKind::Error),
            4 => Ok(MessageKind::Heartbeat),
            other => Err(Error::Protocol(format!("unknown message kind {other}"))),
        }
    }
}

/// Where a worker finds the layer it is asked to fit.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSource {
    /// The layer travels with the request (local workers).
    Inline(LayerData),
    /// The worker reads layer `layer` of an edge-list file it has access to.
    File { path: PathBuf, layer: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitRequest {
    pub layer: usize,
    pub family: EdgeFamily,
    pub dims: Vec<usize>,
    pub seed: u64,
    pub fit_options: FitOptions,
    pub source: LayerSource,
    /// Pairs on which fitted means are returned.
    pub edges: Vec<EdgeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateReply {
    pub dim: usize,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `b′(Θ̂)` on the request's edges, in request order.
    pub means: Vec<f64>,
}

/// A worker's answer: fitted means on requested pairs plus fit metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerReply {
    pub layer: usize,
    pub edges: Vec<EdgeId>,
    pub candidates: Vec<CandidateReply>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReply {
    pub layer: usize,
    pub retriable: bool,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    FitRequest(FitRequest),
    FitReply(WorkerReply),
    Error(ErrorReply),
    Heartbeat,
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::FitRequest(_) => MessageKind::FitRequest,
            Message::FitReply(_) => MessageKind::FitReply,
            Message::Error(_) => MessageKind::Error,
            Message::Heartbeat => MessageKind::Heartbeat,
        }
    }

    /// Complete frame: header plus payload.
    pub fn encode(&self) -> Vec<u8> {
        let mut payload = Encoder::default();
        match self {
            Message::FitRequest(r) => payload.fit_request(r),
            Message::FitReply(r) => payload.reply(r),
            Message::Error(e) => {
                payload.u64(e.layer as u64);
                payload.u8(u8::from(e.retriable));
                payload.str(&e.message);
            }
            Message::Heartbeat => {}
        }
        let payload = payload.buf;
        let mut frame = Vec::with_capacity(HEADER_LEN + payload.len());
        frame.extend_from_slice(&MAGIC);
        frame.extend_from_slice(&PROTOCOL_VERSION.to_le_bytes());
        frame.push(self.kind() as u8);
        frame.push(0);
        frame.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        frame.extend_from_slice(&payload);
        frame
    }

    pub fn decode(frame: &[u8]) -> Result<Message> {
        if frame.len() < HEADER_LEN {
            return Err(Error::Protocol("frame shorter than header".into()));
        }
        let (kind, len) = parse_header(frame[..HEADER_LEN].try_into().expect("header slice"))?;
        if frame.len() != HEADER_LEN + len {
            return Err(Error::Protocol(format!(
                "frame length {} does not match header length {}",
                frame.len(),
                HEADER_LEN + len
            )));
        }
        decode_payload(kind, &frame[HEADER_LEN..])
    }
}

fn parse_header(h: &[u8; HEADER_LEN]) -> Result<(MessageKind, usize)> {
    if h[..4] != MAGIC {
        return Err(Error::Protocol("bad magic".into()));
    }
    let version = u16::from_le_bytes([h[4], h[5]]);
    if version != PROTOCOL_VERSION {
        return Err(Error::Protocol(format!(
            "unsupported protocol version {version} (expected {PROTOCOL_VERSION})"
        )));
    }
    let kind = MessageKind::from_u8(h[6])?;
    let len = u32::from_le_bytes([h[8], h[9], h[10], h[11]]) as usize;
    if len > MAX_PAYLOAD {
        return Err(Error::Protocol(format!("payload of {len} bytes is too large")));
    }
    Ok((kind, len))
}

fn decode_payload(kind: MessageKind, payload: &[u8]) -> Result<Message> {
    let mut d = Decoder { buf: payload, pos: 0 };
    let msg = match kind {
        MessageKind::FitRequest => Message::FitRequest(d.fit_request()?),
        MessageKind::FitReply => Message::FitReply(d.reply()?),
        MessageKind::Error => Message::Error(ErrorReply {
            layer: d.usize()?,
            retriable: d.u8()? != 0,
            message: d.str()?,
        }),
        MessageKind::Heartbeat => Message::Heartbeat,
    };
    if d.pos != payload.len() {
        return Err(Error::Protocol("trailing bytes after payload".into()));
    }
    Ok(msg)
}

pub fn write_message(w: &mut impl Write, msg: &Message) -> std::io::Result<()> {
    w.write_all(&msg.encode())?;
    w.flush()
}

/// Reads one frame. Returns `Ok(None)` on a clean end of stream.
pub fn read_message(r: &mut impl Read) -> Result<Option<Message>> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(Error::Protocol("stream ended inside a header".into())),
            Ok(k) => got += k,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(Error::Protocol(format!("read failed: {e}"))),
        }
    }
    let (kind, len) = parse_header(&header)?;
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)
        .map_err(|e| Error::Protocol(format!("stream ended inside a payload: {e}")))?;
    decode_payload(kind, &payload).map(Some)
}

/// Stream used for the fit of `(layer, dim)` with `fold` held out.
pub fn task_stream(seed: u64, layer: usize, dim: usize, fold: Option<usize>) -> RngStream {
    RngStream::new(seed, StreamId::new(Purpose::Fit).layer(layer).dim(dim).fold(fold))
}

#[derive(Default)]
struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn edges(&mut self, edges: &[EdgeId]) {
        self.u64(edges.len() as u64);
        for e in edges {
            self.u32(e.i);
            self.u32(e.j);
        }
    }

    fn fit_options(&mut self, o: &FitOptions) {
        self.u64(o.max_iters as u64);
        self.f64(o.rel_tol);
        self.f64(o.step_init);
        self.f64(o.backtrack_factor);
        self.f64(o.armijo_c);
        self.u8(match o.init {
            Init::RandomGaussian => 0,
            Init::SpectralWarmStart => 1,
        });
    }

    fn fit_request(&mut self, r: &FitRequest) {
        self.u64(r.layer as u64);
        self.u8(family_code(r.family));
        self.u32(r.dims.len() as u32);
        for &d in &r.dims {
            self.u32(d as u32);
        }
        self.u64(r.seed);
        self.fit_options(&r.fit_options);
        match &r.source {
            LayerSource::Inline(layer) => {
                self.u8(0);
                self.u64(layer.n() as u64);
                self.u64(layer.len() as u64);
                for (e, v) in layer.iter() {
                    self.u32(e.i);
                    self.u32(e.j);
                    self.f64(v);
                }
            }
            LayerSource::File { path, layer } => {
                self.u8(1);
                self.str(&path.to_string_lossy());
                self.u64(*layer as u64);
            }
        }
        self.edges(&r.edges);
    }

    fn reply(&mut self, r: &WorkerReply) {
        self.u64(r.layer as u64);
        self.edges(&r.edges);
        self.u32(r.candidates.len() as u32);
        for c in &r.candidates {
            self.u32(c.dim as u32);
            self.f64(c.objective);
            self.u64(c.iterations as u64);
            self.u8(u8::from(c.converged));
            self.u64(c.means.len() as u64);
            for &m in &c.means {
                self.f64(m);
            }
        }
    }
}

fn family_code(f: EdgeFamily) -> u8 {
    match f {
        EdgeFamily::GaussianIdentity => 0,
        EdgeFamily::BernoulliLogistic => 1,
    }
}

struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Decoder<'_> {
    fn take(&mut self, k: usize) -> Result<&[u8]> {
        if self.buf.len() - self.pos < k {
            return Err(Error::Protocol("payload truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + k];
        self.pos += k;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Protocol("integer overflow".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::Protocol("invalid utf-8".into()))
    }
    /// Length prefix checked against the remaining bytes.
    fn count(&mut self, item_size: usize) -> Result<usize> {
        let k = self.usize()?;
        if k.saturating_mul(item_size) > self.buf.len() - self.pos {
            return Err(Error::Protocol("length prefix exceeds payload".into()));
        }
        Ok(k)
    }
    fn edge(&mut self) -> Result<EdgeId> {
        let (i, j) = (self.u32()?, self.u32()?);
        if i >= j {
            return Err(Error::Protocol(format!("non-canonical edge ({i}, {j})")));
        }
        Ok(EdgeId { i, j })
    }
    fn edges(&mut self) -> Result<Vec<EdgeId>> {
        let k = self.count(8)?;
        (0..k).map(|_| self.edge()).collect()
    }

    fn fit_options(&mut self) -> Result<FitOptions> {
        let max_iters = self.usize()?;
        let rel_tol = self.f64()?;
        let step_init = self.f64()?;
        let backtrack_factor = self.f64()?;
        let armijo_c = self.f64()?;
        let init = match self.u8()? {
            0 => Init::RandomGaussian,
            1 => Init::SpectralWarmStart,
            other => return Err(Error::Protocol(format!("unknown init {other}"))),
        };
        Ok(FitOptions {
            max_iters,
            rel_tol,
            step_init,
            backtrack_factor,
            armijo_c,
            init,
            ..FitOptions::default()
        })
    }

    fn fit_request(&mut self) -> Result<FitRequest> {
        let layer = self.usize()?;
        let family = match self.u8()? {
            0 => EdgeFamily::GaussianIdentity,
            1 => EdgeFamily::BernoulliLogistic,
            other => return Err(Error::Protocol(format!("unknown family {other}"))),
        };
        let ndims = self.u32()? as usize;
        let dims = (0..ndims).map(|_| self.u32().map(|d| d as usize)).collect::<Result<_>>()?;
        let seed = self.u64()?;
        let mut fit_options = self.fit_options()?;
        fit_options.rng = RngStream::new(seed, StreamId::new(Purpose::Fit).layer(layer));
        let source = match self.u8()? {
            0 => {
                let n = self.usize()?;
                let k = self.count(16)?;
                let mut triples = Vec::with_capacity(k);
                for _ in 0..k {
                    let e = self.edge()?;
                    triples.push((e.i(), e.j(), self.f64()?));
                }
                LayerSource::Inline(LayerData::from_triples(n, triples)?)
            }
            1 => {
                let path = PathBuf::from(self.str()?);
                let layer = self.usize()?;
                LayerSource::File { path, layer }
            }
            other => return Err(Error::Protocol(format!("unknown layer source {other}"))),
        };
        let edges = self.edges()?;
        Ok(FitRequest {
            layer,
            family,
            dims,
            seed,
            fit_options,
            source,
            edges,
        })
    }

    fn reply(&mut self) -> Result<WorkerReply> {
        let layer = self.usize()?;
        let edges = self.edges()?;
        let ncand = self.u32()? as usize;
        let mut candidates = Vec::with_capacity(ncand);
        for _ in 0..ncand {
            let dim = self.u32()? as usize;
            let objective = self.f64()?;
            let iterations = self.usize()?;
            let converged = self.u8()? != 0;
            let k = self.count(8)?;
            let means = (0..k).map(|_| self.f64()).collect::<Result<_>>()?;
            candidates.push(CandidateReply {
                dim,
                objective,
                iterations,
                converged,
                means,
            });
        }
        Ok(WorkerReply { layer, edges, candidates })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_request() -> FitRequest {
        let layer = LayerData::from_triples(4, [(0, 1, 1.5), (2, 3, -0.25)]).unwrap();
        FitRequest {
            layer: 2,
            family: EdgeFamily::GaussianIdentity,
            dims: vec![1, 3],
            seed: 77,
            fit_options: FitOptions {
                rng: RngStream::new(77, StreamId::new(Purpose::Fit).layer(2)),
                ..FitOptions::default()
            },
            source: LayerSource::Inline(layer),
            edges: vec![EdgeId::canonical(0, 1), EdgeId::canonical(1, 2)],
        }
    }

    #[test]
    fn messages_round_trip() {
        let msgs = vec![
            Message::FitRequest(sample_request()),
            Message::FitRequest(FitRequest {
                source: LayerSource::File { path: "/data/layer.tsv".into(), layer: 3 },
                ..sample_request()
            }),
            Message::Heartbeat,
            Message::Error(ErrorReply { layer: 1, retriable: true, message: "boom".into() }),
        ];
        for m in msgs {
            let bytes = m.encode();
            assert_eq!(Message::decode(&bytes).unwrap(), m);
            let mut cursor = std::io::Cursor::new(bytes);
            assert_eq!(read_message(&mut cursor).unwrap().unwrap(), m);
            assert!(read_message(&mut cursor).unwrap().is_none());
        }
    }

    #[test]
    fn header_is_checked() {
        let mut bytes = Message::Heartbeat.encode();
        assert_eq!(&bytes[..4], b"TMAW");
        assert_eq!(bytes[6], MessageKind::Heartbeat as u8);
        bytes[4] = 9;
        assert!(Message::decode(&bytes).is_err());
        let mut bytes = Message::Heartbeat.encode();
        bytes[0] = b'X';
        assert!(Message::decode(&bytes).is_err());
        let mut bytes = Message::Heartbeat.encode();
        bytes[6] = 42;
        assert!(Message::decode(&bytes).is_err());
        let bytes = Message::FitRequest(sample_request()).encode();
        assert!(Message::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut cursor = std::io::Cursor::new(bytes[..5].to_vec());
        assert!(read_message(&mut cursor).is_err());
    }

    proptest! {
        #[test]
        fn replies_round_trip_bit_exactly(
            layer in 0usize..10,
            means in proptest::collection::vec(any::<f64>(), 0..20),
            objective in any::<f64>(),
            iterations in 0usize..5000,
        ) {
            let edges = (0..means.len()).map(|k| EdgeId::canonical(k, k + 1)).collect();
            let reply = WorkerReply {
                layer,
                edges,
                candidates: vec![CandidateReply { dim: 2, objective, iterations, converged: true, means: means.clone() }],
            };
            let back = Message::decode(&Message::FitReply(reply.clone()).encode()).unwrap();
            let Message::FitReply(back) = back else { panic!("wrong kind") };
            prop_assert_eq!(back.layer, reply.layer);
            prop_assert_eq!(back.candidates[0].objective.to_bits(), objective.to_bits());
            let bits: Vec<u64> = back.candidates[0].means.iter().map(|v| v.to_bits()).collect();
            let expected: Vec<u64> = means.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(bits, expected);
        }
    }
}
