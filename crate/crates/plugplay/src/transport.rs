//! The public classical channel between the two endpoints.
//!
//! Everything the protocol says out loud goes through a [`Channel`]:
//! reliable, ordered, duplex delivery of typed frames. Two implementations
//! are provided. [`memory_pair`] connects both endpoints inside one
//! process; [`TcpChannel`] carries the same frames over a byte stream so
//! the endpoints can live in separate processes. Both speak the exact wire
//! format of [`encode_frame`], so a session transcript does not depend on
//! which one carried it.
//!
//! The channel is public by construction. It is neither encrypted nor
//! authenticated here; what it costs in secrecy is tracked instead, by
//! wrapping an endpoint in [`AuditedChannel`] and reading back how many
//! key-dependent bits each message type disclosed.
//!
//! # Wire format
//!
//! ```text
//! +----------------+-----------+--------------------+
//! | length: u32 BE | type: u8  | payload bytes      |
//! +----------------+-----------+--------------------+
//! ```
//!
//! `length` counts the type byte plus the payload, so an empty payload
//! encodes as `[0, 0, 0, 1, type]`. Payloads are capped at 16 MiB. Any
//! parse failure closes the connection: a stream that has lost framing
//! cannot be trusted to resynchronize.

use std::fmt;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc;
use std::time::Duration;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bits::read_u32;

/// Hard cap on a single frame's payload.
pub const MAX_PAYLOAD: usize = 16 * 1024 * 1024;

/// Errors surfaced by channel operations.
#[derive(Debug, Error)]
pub enum TransportError {
    /// The peer endpoint is gone or the channel was poisoned by an earlier
    /// framing error.
    #[error("endpoint closed")]
    Closed,
    /// Payload larger than [`MAX_PAYLOAD`]; nothing was sent.
    #[error("payload of {len} bytes exceeds the 16 MiB frame cap")]
    Oversize { len: usize },
    /// No frame arrived within the requested timeout.
    #[error("receive timed out")]
    Timeout,
    /// The byte stream violated the framing rules. The connection is
    /// closed; no partial frame is ever delivered.
    #[error("malformed frame: {reason}")]
    Malformed { reason: String },
    #[error("transport i/o: {0}")]
    Io(#[from] io::Error),
}

/// Frame type codes. The numeric codes are wire contract and never change
/// meaning across versions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageType {
    /// Receiver's detection slots and measurement bases, and the sender's
    /// keep/drop verdict on them.
    BasisReveal,
    /// Positions sacrificed for error estimation.
    SampleIndices,
    /// The key bits at the sampled positions, disclosed in the clear.
    SampleBits,
    /// A parity question over ranges of the reconciled key.
    ParityQuery,
    /// The answering parity bits.
    ParityReply,
    /// Public seed for the final hashing step.
    HashSeed,
    /// Truncated digest of the corrected key, for verification.
    KeyHash,
    /// Session abandoned; payload says at which stage and why.
    Abort,
    /// Opening handshake: configuration digest and shared seeds.
    SessionConfig,
}

impl MessageType {
    pub const ALL: [MessageType; 9] = [
        MessageType::BasisReveal,
        MessageType::SampleIndices,
        MessageType::SampleBits,
        MessageType::ParityQuery,
        MessageType::ParityReply,
        MessageType::HashSeed,
        MessageType::KeyHash,
        MessageType::Abort,
        MessageType::SessionConfig,
    ];

    pub fn code(self) -> u8 {
        match self {
            MessageType::BasisReveal => 0x01,
            MessageType::SampleIndices => 0x02,
            MessageType::SampleBits => 0x03,
            MessageType::ParityQuery => 0x04,
            MessageType::ParityReply => 0x05,
            MessageType::HashSeed => 0x06,
            MessageType::KeyHash => 0x07,
            MessageType::Abort => 0x08,
            MessageType::SessionConfig => 0x09,
        }
    }

    pub fn from_code(code: u8) -> Option<MessageType> {
        MessageType::ALL.into_iter().find(|t| t.code() == code)
    }
}

impl fmt::Display for MessageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            MessageType::BasisReveal => "basis-reveal",
            MessageType::SampleIndices => "sample-indices",
            MessageType::SampleBits => "sample-bits",
            MessageType::ParityQuery => "parity-query",
            MessageType::ParityReply => "parity-reply",
            MessageType::HashSeed => "hash-seed",
            MessageType::KeyHash => "key-hash",
            MessageType::Abort => "abort",
            MessageType::SessionConfig => "session-config",
        };
        f.write_str(name)
    }
}

/// Encodes one frame. Fails on oversize payloads; nothing else can go
/// wrong.
pub fn encode_frame(msg_type: MessageType, payload: &[u8]) -> Result<Vec<u8>, TransportError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(TransportError::Oversize { len: payload.len() });
    }
    let mut out = Vec::with_capacity(5 + payload.len());
    out.extend_from_slice(&(payload.len() as u32 + 1).to_be_bytes());
    out.push(msg_type.code());
    out.extend_from_slice(payload);
    Ok(out)
}

/// Decodes exactly one frame from a buffer holding exactly one frame.
/// Short input, trailing input, an unknown type code and an out-of-range
/// length are all malformed.
pub fn decode_frame(bytes: &[u8]) -> Result<(MessageType, Vec<u8>), TransportError> {
    let malformed = |reason: &str| TransportError::Malformed { reason: reason.to_string() };
    if bytes.len() < 5 {
        return Err(malformed("truncated header"));
    }
    let length = read_u32(bytes, 0).unwrap() as usize;
    if length == 0 {
        return Err(malformed("length field must cover the type byte"));
    }
    if length - 1 > MAX_PAYLOAD {
        return Err(malformed("length field exceeds the frame cap"));
    }
    if bytes.len() != 4 + length {
        return Err(malformed("length field does not match the frame"));
    }
    let msg_type = MessageType::from_code(bytes[4])
        .ok_or_else(|| malformed("unknown message type code"))?;
    Ok((msg_type, bytes[5..].to_vec()))
}

fn write_frame<W: Write>(
    w: &mut W,
    msg_type: MessageType,
    payload: &[u8],
) -> Result<(), TransportError> {
    let frame = encode_frame(msg_type, payload)?;
    w.write_all(&frame)?;
    w.flush()?;
    Ok(())
}

fn read_frame<R: Read>(r: &mut R) -> Result<(MessageType, Vec<u8>), TransportError> {
    let malformed = |reason: &str| TransportError::Malformed { reason: reason.to_string() };
    let mut header = [0u8; 5];
    r.read_exact(&mut header).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => malformed("stream ended inside a frame"),
        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => TransportError::Timeout,
        _ => TransportError::Io(e),
    })?;
    let length = u32::from_be_bytes(header[..4].try_into().unwrap()) as usize;
    if length == 0 {
        return Err(malformed("length field must cover the type byte"));
    }
    if length - 1 > MAX_PAYLOAD {
        return Err(malformed("length field exceeds the frame cap"));
    }
    let msg_type =
        MessageType::from_code(header[4]).ok_or_else(|| malformed("unknown message type code"))?;
    let mut payload = vec![0u8; length - 1];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => malformed("stream ended inside a frame"),
        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => TransportError::Timeout,
        _ => TransportError::Io(e),
    })?;
    Ok((msg_type, payload))
}

/// One endpoint of a reliable, ordered, duplex message link.
///
/// Sends are atomic at frame granularity. Receives return frames in the
/// peer's emission order, exactly once each.
pub trait Channel {
    /// Delivers one frame to the peer.
    fn send(&mut self, msg_type: MessageType, payload: &[u8]) -> Result<(), TransportError>;

    /// Waits up to `timeout` for the next frame; `None` waits forever.
    fn recv_timeout(
        &mut self,
        timeout: Option<Duration>,
    ) -> Result<(MessageType, Vec<u8>), TransportError>;

    /// Blocking receive.
    fn recv(&mut self) -> Result<(MessageType, Vec<u8>), TransportError> {
        self.recv_timeout(None)
    }
}

/// In-process endpoint; see [`memory_pair`].
///
/// Frames cross the boundary fully encoded and are re-decoded on arrival,
/// so this path exercises the same codec as the socket path.
pub struct MemoryChannel {
    tx: mpsc::Sender<Vec<u8>>,
    rx: mpsc::Receiver<Vec<u8>>,
    poisoned: bool,
}

/// Two connected in-memory endpoints.
pub fn memory_pair() -> (MemoryChannel, MemoryChannel) {
    let (tx_a, rx_b) = mpsc::channel();
    let (tx_b, rx_a) = mpsc::channel();
    (
        MemoryChannel { tx: tx_a, rx: rx_a, poisoned: false },
        MemoryChannel { tx: tx_b, rx: rx_b, poisoned: false },
    )
}

impl Channel for MemoryChannel {
    fn send(&mut self, msg_type: MessageType, payload: &[u8]) -> Result<(), TransportError> {
        if self.poisoned {
            return Err(TransportError::Closed);
        }
        let frame = encode_frame(msg_type, payload)?;
        self.tx.send(frame).map_err(|_| TransportError::Closed)
    }

    fn recv_timeout(
        &mut self,
        timeout: Option<Duration>,
    ) -> Result<(MessageType, Vec<u8>), TransportError> {
        if self.poisoned {
            return Err(TransportError::Closed);
        }
        let frame = match timeout {
            None => self.rx.recv().map_err(|_| TransportError::Closed)?,
            Some(d) => self.rx.recv_timeout(d).map_err(|e| match e {
                mpsc::RecvTimeoutError::Timeout => TransportError::Timeout,
                mpsc::RecvTimeoutError::Disconnected => TransportError::Closed,
            })?,
        };
        match decode_frame(&frame) {
            Ok(m) => Ok(m),
            Err(e) => {
                // Fail closed: a peer that emits garbage is not trusted
                // with further traffic.
                self.poisoned = true;
                Err(e)
            }
        }
    }
}

/// Socket endpoint speaking the frame format over TCP.
///
/// Any framing violation or mid-frame timeout poisons the channel: a byte
/// stream that stopped making sense has no recoverable frame boundary, so
/// the connection is shut down and every later call reports `Closed`.
pub struct TcpChannel {
    stream: TcpStream,
    poisoned: bool,
}

impl TcpChannel {
    /// Connects to a listening peer.
    pub fn connect<A: ToSocketAddrs>(addr: A) -> io::Result<TcpChannel> {
        let stream = TcpStream::connect(addr)?;
        // The reconciliation dialogue is many tiny frames in strict
        // alternation; leaving Nagle on would serialize it against
        // delayed ACKs.
        stream.set_nodelay(true)?;
        Ok(TcpChannel { stream, poisoned: false })
    }

    /// Binds `addr`, accepts exactly one peer, returns the connected
    /// channel and the bound address (useful with port 0).
    pub fn listen_one<A: ToSocketAddrs>(addr: A) -> io::Result<(TcpChannel, SocketAddr)> {
        let listener = TcpListener::bind(addr)?;
        let local = listener.local_addr()?;
        let (stream, _) = listener.accept()?;
        stream.set_nodelay(true)?;
        Ok((TcpChannel { stream, poisoned: false }, local))
    }

    fn poison(&mut self) {
        self.poisoned = true;
        let _ = self.stream.shutdown(std::net::Shutdown::Both);
    }
}

impl Channel for TcpChannel {
    fn send(&mut self, msg_type: MessageType, payload: &[u8]) -> Result<(), TransportError> {
        if self.poisoned {
            return Err(TransportError::Closed);
        }
        match write_frame(&mut self.stream, msg_type, payload) {
            Ok(()) => Ok(()),
            Err(e @ TransportError::Oversize { .. }) => Err(e),
            Err(e) => {
                self.poison();
                Err(e)
            }
        }
    }

    fn recv_timeout(
        &mut self,
        timeout: Option<Duration>,
    ) -> Result<(MessageType, Vec<u8>), TransportError> {
        if self.poisoned {
            return Err(TransportError::Closed);
        }
        self.stream.set_read_timeout(timeout)?;
        match read_frame(&mut self.stream) {
            Ok(m) => Ok(m),
            Err(e) => {
                // Even a timeout may have consumed part of a frame, so
                // there is no safe way to keep reading.
                self.poison();
                Err(e)
            }
        }
    }
}

/// Running totals of what one direction of traffic disclosed.
///
/// Bit-string payloads open with a 32-bit big-endian bit count; the
/// auditor trusts that count. Key digests have no count and are charged at
/// their full payload size.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct AuditCounters {
    pub frames: u64,
    pub payload_bytes: u64,
    /// Sifting metadata: measurement bases and keep/drop verdicts. Bases
    /// of discarded detections say nothing about the key, so these are not
    /// key leakage.
    pub basis_bits: u64,
    /// Key bits read out loud for error estimation. Removed from the key
    /// afterwards, so disclosed but no longer secret-bearing.
    pub sample_bits: u64,
    /// Parities of key ranges disclosed during reconciliation.
    pub parity_bits: u64,
    /// Bits of key digest disclosed during verification.
    pub hash_bits: u64,
}

impl AuditCounters {
    /// Everything that depends in any way on key material.
    pub fn key_bits(&self) -> u64 {
        self.sample_bits + self.parity_bits + self.hash_bits
    }

    fn tally(&mut self, msg_type: MessageType, payload: &[u8]) {
        self.frames += 1;
        self.payload_bytes += payload.len() as u64;
        let leading_count = || read_u32(payload, 0).map(u64::from).unwrap_or(0);
        match msg_type {
            MessageType::BasisReveal => self.basis_bits += leading_count(),
            MessageType::SampleBits => self.sample_bits += leading_count(),
            MessageType::ParityReply => self.parity_bits += leading_count(),
            MessageType::KeyHash => self.hash_bits += payload.len() as u64 * 8,
            _ => {}
        }
    }
}

/// A [`Channel`] wrapper that meters the conversation.
///
/// Counts disclosed bits per direction and keeps a running digest of each
/// direction's frames. Two sessions are observationally identical exactly
/// when their transcript digests match, whatever carried the frames.
pub struct AuditedChannel<C> {
    inner: C,
    sent: AuditCounters,
    received: AuditCounters,
    sent_digest: Sha256,
    received_digest: Sha256,
}

impl<C: Channel> AuditedChannel<C> {
    pub fn new(inner: C) -> AuditedChannel<C> {
        AuditedChannel {
            inner,
            sent: AuditCounters::default(),
            received: AuditCounters::default(),
            sent_digest: Sha256::new(),
            received_digest: Sha256::new(),
        }
    }

    pub fn sent(&self) -> &AuditCounters {
        &self.sent
    }

    pub fn received(&self) -> &AuditCounters {
        &self.received
    }

    /// Digests of (sent, received) traffic so far.
    pub fn transcript_digests(&self) -> ([u8; 32], [u8; 32]) {
        (
            self.sent_digest.clone().finalize().into(),
            self.received_digest.clone().finalize().into(),
        )
    }

    pub fn into_inner(self) -> C {
        self.inner
    }
}

fn absorb(digest: &mut Sha256, msg_type: MessageType, payload: &[u8]) {
    digest.update([msg_type.code()]);
    digest.update((payload.len() as u32).to_be_bytes());
    digest.update(payload);
}

impl<C: Channel> Channel for AuditedChannel<C> {
    fn send(&mut self, msg_type: MessageType, payload: &[u8]) -> Result<(), TransportError> {
        self.inner.send(msg_type, payload)?;
        self.sent.tally(msg_type, payload);
        absorb(&mut self.sent_digest, msg_type, payload);
        Ok(())
    }

    fn recv_timeout(
        &mut self,
        timeout: Option<Duration>,
    ) -> Result<(MessageType, Vec<u8>), TransportError> {
        let (msg_type, payload) = self.inner.recv_timeout(timeout)?;
        self.received.tally(msg_type, &payload);
        absorb(&mut self.received_digest, msg_type, &payload);
        Ok((msg_type, payload))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::push_u32;

    #[test]
    fn empty_payload_frame_fixture() {
        for t in MessageType::ALL {
            assert_eq!(encode_frame(t, &[]).unwrap(), vec![0, 0, 0, 1, t.code()]);
        }
    }

    #[test]
    fn three_byte_parity_query_fixture() {
        // Hand-encoded: length 4 covers the type byte plus three bytes.
        let frame = encode_frame(MessageType::ParityQuery, &[0xAA, 0xBB, 0xCC]).unwrap();
        assert_eq!(frame, vec![0x00, 0x00, 0x00, 0x04, 0x04, 0xAA, 0xBB, 0xCC]);
        let (t, p) = decode_frame(&frame).unwrap();
        assert_eq!(t, MessageType::ParityQuery);
        assert_eq!(p, vec![0xAA, 0xBB, 0xCC]);
    }

    #[test]
    fn type_codes_are_stable() {
        // Wire contract: these exact numbers, forever.
        let expected: [(MessageType, u8); 9] = [
            (MessageType::BasisReveal, 0x01),
            (MessageType::SampleIndices, 0x02),
            (MessageType::SampleBits, 0x03),
            (MessageType::ParityQuery, 0x04),
            (MessageType::ParityReply, 0x05),
            (MessageType::HashSeed, 0x06),
            (MessageType::KeyHash, 0x07),
            (MessageType::Abort, 0x08),
            (MessageType::SessionConfig, 0x09),
        ];
        for (t, code) in expected {
            assert_eq!(t.code(), code);
            assert_eq!(MessageType::from_code(code), Some(t));
        }
        assert_eq!(MessageType::from_code(0x00), None);
        assert_eq!(MessageType::from_code(0x0A), None);
    }

    #[test]
    fn decode_rejects_malformed_frames() {
        // Truncated header.
        assert!(matches!(decode_frame(&[0, 0]), Err(TransportError::Malformed { .. })));
        // Zero length.
        assert!(matches!(decode_frame(&[0, 0, 0, 0, 1]), Err(TransportError::Malformed { .. })));
        // Length/buffer mismatch both ways.
        assert!(matches!(decode_frame(&[0, 0, 0, 2, 1]), Err(TransportError::Malformed { .. })));
        assert!(matches!(
            decode_frame(&[0, 0, 0, 1, 1, 0xFF]),
            Err(TransportError::Malformed { .. })
        ));
        // Unknown type code.
        assert!(matches!(decode_frame(&[0, 0, 0, 1, 0x7F]), Err(TransportError::Malformed { .. })));
    }

    #[test]
    fn oversize_payload_is_rejected_before_sending() {
        let (mut a, mut b) = memory_pair();
        let big = vec![0u8; MAX_PAYLOAD + 1];
        assert!(matches!(
            a.send(MessageType::SampleBits, &big),
            Err(TransportError::Oversize { .. })
        ));
        // Nothing was sent and the channel still works.
        a.send(MessageType::Abort, &[1]).unwrap();
        let (t, p) = b.recv().unwrap();
        assert_eq!((t, p.as_slice()), (MessageType::Abort, &[1u8][..]));
        // The cap itself is allowed.
        let exactly = vec![0u8; MAX_PAYLOAD];
        a.send(MessageType::SampleBits, &exactly).unwrap();
        let (_, p) = b.recv().unwrap();
        assert_eq!(p.len(), MAX_PAYLOAD);
    }

    #[test]
    fn memory_pair_preserves_order_both_directions() {
        let (mut a, mut b) = memory_pair();
        for i in 0..10u8 {
            a.send(MessageType::ParityQuery, &[i]).unwrap();
            b.send(MessageType::ParityReply, &[100 + i]).unwrap();
        }
        for i in 0..10u8 {
            let (t, p) = b.recv().unwrap();
            assert_eq!((t, p[0]), (MessageType::ParityQuery, i));
            let (t, p) = a.recv().unwrap();
            assert_eq!((t, p[0]), (MessageType::ParityReply, 100 + i));
        }
    }

    #[test]
    fn dropped_peer_reads_as_closed() {
        let (mut a, b) = memory_pair();
        drop(b);
        assert!(matches!(a.send(MessageType::Abort, &[]), Err(TransportError::Closed)));
        assert!(matches!(a.recv(), Err(TransportError::Closed)));
    }

    #[test]
    fn recv_timeout_expires_on_silence() {
        let (mut a, _b) = memory_pair();
        let r = a.recv_timeout(Some(Duration::from_millis(10)));
        assert!(matches!(r, Err(TransportError::Timeout)));
    }

    #[test]
    fn tcp_round_trip_and_ordering() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let join = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            stream.set_nodelay(true).unwrap();
            let mut ch = TcpChannel { stream, poisoned: false };
            for i in 0..20u8 {
                let (t, p) = ch.recv().unwrap();
                assert_eq!((t, p.as_slice()), (MessageType::ParityQuery, &[i][..]));
                ch.send(MessageType::ParityReply, &[i, i]).unwrap();
            }
        });
        let mut ch = TcpChannel::connect(addr).unwrap();
        for i in 0..20u8 {
            ch.send(MessageType::ParityQuery, &[i]).unwrap();
            let (t, p) = ch.recv().unwrap();
            assert_eq!((t, p.as_slice()), (MessageType::ParityReply, &[i, i][..]));
        }
        join.join().unwrap();
    }

    #[test]
    fn tcp_fails_closed_on_garbage() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let join = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            // A frame claiming more bytes than will ever arrive.
            stream.write_all(&[0, 0, 0, 9, 0x01, 0xAA]).unwrap();
        });
        let mut ch = TcpChannel::connect(addr).unwrap();
        join.join().unwrap();
        assert!(matches!(ch.recv(), Err(TransportError::Malformed { .. })));
        // Poisoned from here on.
        assert!(matches!(ch.recv(), Err(TransportError::Closed)));
        assert!(matches!(ch.send(MessageType::Abort, &[]), Err(TransportError::Closed)));
    }

    #[test]
    fn tcp_rejects_unknown_type_codes() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let join = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            stream.write_all(&[0, 0, 0, 1, 0x7F]).unwrap();
        });
        let mut ch = TcpChannel::connect(addr).unwrap();
        join.join().unwrap();
        assert!(matches!(ch.recv(), Err(TransportError::Malformed { .. })));
    }

    fn counted_bits_payload(count: u32, packed: &[u8]) -> Vec<u8> {
        let mut p = Vec::new();
        push_u32(&mut p, count);
        p.extend_from_slice(packed);
        p
    }

    #[test]
    fn audit_counts_parity_bits_as_key_leakage() {
        let (a, mut b) = memory_pair();
        let mut a = AuditedChannel::new(a);
        a.send(MessageType::ParityReply, &counted_bits_payload(1, &[0x80])).unwrap();
        assert_eq!(a.sent().parity_bits, 1);
        assert_eq!(a.sent().key_bits(), 1);
        let _ = b.recv().unwrap();

        for i in 0..100u32 {
            a.send(MessageType::ParityReply, &counted_bits_payload(1, &[(i % 2) as u8 * 0x80]))
                .unwrap();
            let _ = b.recv().unwrap();
        }
        assert_eq!(a.sent().parity_bits, 101);
        assert_eq!(a.sent().frames, 101);
    }

    #[test]
    fn audit_keeps_basis_bits_out_of_key_leakage() {
        let (a, mut b) = memory_pair();
        let mut a = AuditedChannel::new(a);
        a.send(MessageType::BasisReveal, &counted_bits_payload(64, &[0xFF; 8])).unwrap();
        let _ = b.recv().unwrap();
        assert_eq!(a.sent().basis_bits, 64);
        assert_eq!(a.sent().key_bits(), 0);
    }

    #[test]
    fn audit_charges_digests_in_full() {
        let (a, mut b) = memory_pair();
        let mut a = AuditedChannel::new(a);
        a.send(MessageType::KeyHash, &[0u8; 8]).unwrap();
        let _ = b.recv().unwrap();
        assert_eq!(a.sent().hash_bits, 64);
        assert_eq!(a.sent().key_bits(), 64);
    }

    #[test]
    fn audit_counts_both_directions_independently() {
        let (a, b) = memory_pair();
        let mut a = AuditedChannel::new(a);
        let mut b = AuditedChannel::new(b);
        a.send(MessageType::SampleBits, &counted_bits_payload(10, &[0xFF, 0xC0])).unwrap();
        let _ = b.recv().unwrap();
        b.send(MessageType::SampleBits, &counted_bits_payload(10, &[0x00, 0x00])).unwrap();
        let _ = a.recv().unwrap();
        assert_eq!(a.sent().sample_bits, 10);
        assert_eq!(a.received().sample_bits, 10);
        assert_eq!(b.sent().sample_bits, 10);
        assert_eq!(b.received().sample_bits, 10);
    }

    #[test]
    fn transcript_digests_match_across_the_link() {
        let (a, b) = memory_pair();
        let mut a = AuditedChannel::new(a);
        let mut b = AuditedChannel::new(b);
        a.send(MessageType::SessionConfig, b"cfg").unwrap();
        let _ = b.recv().unwrap();
        b.send(MessageType::Abort, &[3]).unwrap();
        let _ = a.recv().unwrap();
        let (a_sent, a_recv) = a.transcript_digests();
        let (b_sent, b_recv) = b.transcript_digests();
        assert_eq!(a_sent, b_recv);
        assert_eq!(b_sent, a_recv);
        assert_ne!(a_sent, a_recv);
    }
}
