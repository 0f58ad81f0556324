//! Transport protocol: connection management codec, data transfer packets,
//! and the originator/responder session state machines.
//!
//! Multi-packet payloads (9 to 1785 bytes) travel as TP.DT packets of one
//! sequence byte plus seven data bytes. A connection-management message
//! (PGN 60416) opens, sustains, and closes the transfer. The five kinds are
//! selected by the first byte:
//!
//! ```text
//! byte      1     2..3      4        5       6..8
//! RTS      16   size LE   packets  max/CTS  packeted PGN LE
//! CTS      17   allow     next     ──       packeted PGN LE
//! ACK      19   size LE   packets  ──       packeted PGN LE
//! Abort   255   reason    ──       ──       packeted PGN LE
//! BAM      32   size LE   packets  ──       packeted PGN LE
//! ```
//!
//! Unused bytes are 0xFF. The state machines deliberately model the observed
//! behavior of the simulated test nodes rather than a strictly conforming
//! stack: an out-of-plan clear-to-send that supersedes an unstarted burst
//! makes the originator emit only its last in-plan packet and stall, and a
//! receiver that reaches the end of a granted window with packets missing
//! answers with a zero-packet hold instead of a retransmission request.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::Pgn;

pub const CTRL_RTS: u8 = 16;
pub const CTRL_CTS: u8 = 17;
pub const CTRL_END_OF_MSG_ACK: u8 = 19;
pub const CTRL_CONN_ABORT: u8 = 255;
pub const CTRL_BAM: u8 = 32;

/// Largest multi-packet payload: 255 packets of 7 bytes.
pub const MAX_TP_BYTES: u16 = 1785;
/// Smallest payload that needs the transport protocol.
pub const MIN_TP_BYTES: u16 = 9;

/// Connection abort reason: node busy with another session.
pub const ABORT_BUSY: u8 = 1;
/// Connection abort reason: timeout.
pub const ABORT_TIMEOUT: u8 = 3;
/// Connection abort reason: clear-to-send received mid data transfer.
pub const ABORT_CTS_DURING_DT: u8 = 4;
/// Connection abort reason: request exceeded what the node will send.
pub const ABORT_UNEXPECTED: u8 = 6;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TpError {
    #[error("unknown TP.CM control byte {0:#04x}")]
    UnknownControlByte(u8),
    #[error("TP.CM payload must be 8 bytes, got {0}")]
    PayloadLength(usize),
    #[error("message size {0} outside 9..=1785")]
    SizeRange(u16),
    #[error("packet count {packets} inconsistent with {bytes} bytes")]
    PacketCount { bytes: u16, packets: u8 },
    #[error("TP.DT sequence number must be at least 1")]
    ZeroSequence,
    #[error("data length {data} does not match announced size {announced}")]
    DataMismatch { announced: u16, data: usize },
    #[error("session incomplete, missing sequences {0:?}")]
    Incomplete(Vec<u8>),
}

/// The five connection-management message kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TpCm {
    Rts {
        total_bytes: u16,
        total_packets: u8,
        max_per_cts: u8,
        pgn: Pgn,
    },
    Cts {
        packets_to_send: u8,
        next_packet: u8,
        pgn: Pgn,
    },
    EndOfMsgAck {
        total_bytes: u16,
        total_packets: u8,
        pgn: Pgn,
    },
    ConnAbort {
        reason: u8,
        pgn: Pgn,
    },
    Bam {
        total_bytes: u16,
        total_packets: u8,
        pgn: Pgn,
    },
}

impl TpCm {
    pub fn control_byte(&self) -> u8 {
        match self {
            TpCm::Rts { .. } => CTRL_RTS,
            TpCm::Cts { .. } => CTRL_CTS,
            TpCm::EndOfMsgAck { .. } => CTRL_END_OF_MSG_ACK,
            TpCm::ConnAbort { .. } => CTRL_CONN_ABORT,
            TpCm::Bam { .. } => CTRL_BAM,
        }
    }

    pub fn pgn(&self) -> Pgn {
        match *self {
            TpCm::Rts { pgn, .. }
            | TpCm::Cts { pgn, .. }
            | TpCm::EndOfMsgAck { pgn, .. }
            | TpCm::ConnAbort { pgn, .. }
            | TpCm::Bam { pgn, .. } => pgn,
        }
    }
}

/// Number of 7-byte packets needed for `bytes` of payload.
pub fn packets_for(bytes: u16) -> u8 {
    bytes.div_ceil(7).min(255) as u8
}

/// Acknowledgement code carried in the control byte of PGN 59392.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum AckCode {
    Ack = 0,
    Nack = 1,
    AccessDenied = 2,
    CannotRespond = 3,
}

impl AckCode {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(AckCode::Ack),
            1 => Some(AckCode::Nack),
            2 => Some(AckCode::AccessDenied),
            3 => Some(AckCode::CannotRespond),
            _ => None,
        }
    }
}

fn put_pgn(buf: &mut [u8; 8], pgn: Pgn) {
    buf[5] = (pgn.0 & 0xFF) as u8;
    buf[6] = ((pgn.0 >> 8) & 0xFF) as u8;
    buf[7] = ((pgn.0 >> 16) & 0xFF) as u8;
}

fn get_pgn(buf: &[u8]) -> Pgn {
    Pgn((buf[5] as u32) | ((buf[6] as u32) << 8) | ((buf[7] as u32) << 16))
}

/// Encode a connection-management message without consistency checks.
///
/// The attack templates rely on this to craft announcements whose byte and
/// packet counts disagree on purpose.
pub fn encode_tpcm_unchecked(m: &TpCm) -> [u8; 8] {
    let mut buf = [0xFFu8; 8];
    buf[0] = m.control_byte();
    match *m {
        TpCm::Rts {
            total_bytes,
            total_packets,
            max_per_cts,
            pgn,
        } => {
            buf[1..3].copy_from_slice(&total_bytes.to_le_bytes());
            buf[3] = total_packets;
            buf[4] = max_per_cts;
            put_pgn(&mut buf, pgn);
        }
        TpCm::Cts {
            packets_to_send,
            next_packet,
            pgn,
        } => {
            buf[1] = packets_to_send;
            buf[2] = next_packet;
            put_pgn(&mut buf, pgn);
        }
        TpCm::EndOfMsgAck {
            total_bytes,
            total_packets,
            pgn,
        } => {
            buf[1..3].copy_from_slice(&total_bytes.to_le_bytes());
            buf[3] = total_packets;
            put_pgn(&mut buf, pgn);
        }
        TpCm::ConnAbort { reason, pgn } => {
            buf[1] = reason;
            put_pgn(&mut buf, pgn);
        }
        TpCm::Bam {
            total_bytes,
            total_packets,
            pgn,
        } => {
            buf[1..3].copy_from_slice(&total_bytes.to_le_bytes());
            buf[3] = total_packets;
            put_pgn(&mut buf, pgn);
        }
    }
    buf
}

/// Encode a connection-management message, enforcing the invariants a
/// well-behaved node would uphold.
pub fn encode_tpcm(m: &TpCm) -> Result<[u8; 8], TpError> {
    match *m {
        TpCm::Rts {
            total_bytes,
            total_packets,
            ..
        }
        | TpCm::Bam {
            total_bytes,
            total_packets,
            ..
        } => {
            if !(MIN_TP_BYTES..=MAX_TP_BYTES).contains(&total_bytes) {
                return Err(TpError::SizeRange(total_bytes));
            }
            if total_packets != packets_for(total_bytes) {
                return Err(TpError::PacketCount {
                    bytes: total_bytes,
                    packets: total_packets,
                });
            }
        }
        TpCm::Cts { next_packet, .. } => {
            if next_packet == 0 {
                return Err(TpError::ZeroSequence);
            }
        }
        // End-of-message acknowledgements report whatever the receiver
        // bookkeeping holds, which an attacked session can leave inconsistent.
        TpCm::EndOfMsgAck { total_bytes, .. } => {
            if !(MIN_TP_BYTES..=MAX_TP_BYTES).contains(&total_bytes) {
                return Err(TpError::SizeRange(total_bytes));
            }
        }
        TpCm::ConnAbort { .. } => {}
    }
    Ok(encode_tpcm_unchecked(m))
}

/// Decode an 8-byte TP.CM payload.
pub fn decode_tpcm(payload: &[u8]) -> Result<TpCm, TpError> {
    if payload.len() != 8 {
        return Err(TpError::PayloadLength(payload.len()));
    }
    let pgn = get_pgn(payload);
    let size = u16::from_le_bytes([payload[1], payload[2]]);
    match payload[0] {
        CTRL_RTS => Ok(TpCm::Rts {
            total_bytes: size,
            total_packets: payload[3],
            max_per_cts: payload[4],
            pgn,
        }),
        CTRL_CTS => Ok(TpCm::Cts {
            packets_to_send: payload[1],
            next_packet: payload[2],
            pgn,
        }),
        CTRL_END_OF_MSG_ACK => Ok(TpCm::EndOfMsgAck {
            total_bytes: size,
            total_packets: payload[3],
            pgn,
        }),
        CTRL_CONN_ABORT => Ok(TpCm::ConnAbort {
            reason: payload[1],
            pgn,
        }),
        CTRL_BAM => Ok(TpCm::Bam {
            total_bytes: size,
            total_packets: payload[3],
            pgn,
        }),
        other => Err(TpError::UnknownControlByte(other)),
    }
}

/// A single data-transfer packet: sequence byte plus seven payload bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TpDt {
    pub sequence: u8,
    pub payload: [u8; 7],
}

impl TpDt {
    pub fn new(sequence: u8, payload: [u8; 7]) -> Result<Self, TpError> {
        if sequence == 0 {
            return Err(TpError::ZeroSequence);
        }
        Ok(Self { sequence, payload })
    }

    pub fn encode(&self) -> [u8; 8] {
        let mut buf = [0u8; 8];
        buf[0] = self.sequence;
        buf[1..].copy_from_slice(&self.payload);
        buf
    }

    pub fn decode(payload: &[u8]) -> Result<Self, TpError> {
        if payload.len() != 8 {
            return Err(TpError::PayloadLength(payload.len()));
        }
        if payload[0] == 0 {
            return Err(TpError::ZeroSequence);
        }
        let mut p = [0u8; 7];
        p.copy_from_slice(&payload[1..]);
        Ok(Self {
            sequence: payload[0],
            payload: p,
        })
    }
}

/// Split a payload into 7-byte chunks, 0xFF padded.
pub fn chunk_payload(data: &[u8]) -> Vec<[u8; 7]> {
    data.chunks(7)
        .map(|c| {
            let mut p = [0xFFu8; 7];
            p[..c.len()].copy_from_slice(c);
            p
        })
        .collect()
}

/// Either kind of transport-protocol frame payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TpMessage {
    Cm(TpCm),
    Dt(TpDt),
}

/// Build the broadcast-announce frame train for `data`: one BAM announce
/// followed by the data packets, all to the global address.
pub fn bam_send(total_bytes: u16, pgn: Pgn, data: &[u8]) -> Result<Vec<TpMessage>, TpError> {
    if !(MIN_TP_BYTES..=MAX_TP_BYTES).contains(&total_bytes) {
        return Err(TpError::SizeRange(total_bytes));
    }
    if data.len() != total_bytes as usize {
        return Err(TpError::DataMismatch {
            announced: total_bytes,
            data: data.len(),
        });
    }
    let total_packets = packets_for(total_bytes);
    let mut out = Vec::with_capacity(1 + total_packets as usize);
    out.push(TpMessage::Cm(TpCm::Bam {
        total_bytes,
        total_packets,
        pgn,
    }));
    for (i, chunk) in chunk_payload(data).into_iter().enumerate() {
        out.push(TpMessage::Dt(TpDt {
            sequence: (i + 1) as u8,
            payload: chunk,
        }));
    }
    Ok(out)
}

/// Session lifecycle states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionState {
    Idle,
    RtsSent,
    CtsReceived,
    Sending,
    Receiving,
    Complete,
    Aborted,
}

/// Session timer configuration, microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TpTimings {
    /// Wait for the first response (clear-to-send or first data packet).
    pub response_timeout_us: u64,
    /// Keep-alive window once a transfer is underway.
    pub hold_timeout_us: u64,
}

impl Default for TpTimings {
    fn default() -> Self {
        Self {
            response_timeout_us: 750_000,
            hold_timeout_us: 1_250_000,
        }
    }
}

/// The granted send window an originator is working through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Burst {
    first: u8,
    last: u8,
    transmitted: u8,
    /// Abort once the burst has drained (out-of-plan first grant).
    abort_after: bool,
}

/// One multi-packet transfer between an originator and a responder (or the
/// global address for broadcast announce).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TpSession {
    pub originator_sa: u8,
    pub responder_sa: u8,
    /// PGN of the packeted message.
    pub pgn: Pgn,
    pub total_bytes: u16,
    pub total_packets: u8,
    /// Received packets, first arrival wins.
    pub received: BTreeMap<u8, [u8; 7]>,
    pub state: SessionState,
    /// Deadline after which the session times out, microseconds.
    pub hold_deadline_us: u64,
    timings: TpTimings,
    /// Originator: payload chunks to send.
    chunks: Vec<[u8; 7]>,
    /// Originator: current granted burst.
    burst: Option<Burst>,
    /// Originator: the announcement has actually been on the wire. Grants
    /// arriving before then answer nothing and are dropped.
    announced: bool,
    /// Responder: last sequence of the granted window.
    grant_end: u8,
}

/// Events fed into a session state machine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TpEvent {
    /// A connection-management message for this session arrived.
    Cm(TpCm),
    /// A data-transfer packet for this session arrived.
    Dt(TpDt),
    /// Our request-to-send actually left the node.
    RtsTransmitted,
    /// One of our own data packets actually left the node.
    DtTransmitted(u8),
    /// Time passed; check deadlines.
    Tick,
}

/// What a state machine wants done.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TpAction {
    /// Send a connection-management message to the session peer.
    EmitCm(TpCm),
    /// Send data packets, in order, paced by the node's packet gap.
    EmitDts(Vec<TpDt>),
    /// Drop any queued-but-unsent data packets.
    CancelPendingDts,
    /// Transfer finished; release the slot and any buffer hold.
    Closed(SessionClose),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionClose {
    Complete,
    Aborted,
    /// Timed out without a termination message on the wire.
    TimedOut,
}

impl TpSession {
    /// Open an originating session. Returns the session and the RTS to emit.
    pub fn originate(
        originator_sa: u8,
        responder_sa: u8,
        pgn: Pgn,
        data: &[u8],
        max_per_cts: u8,
        timings: TpTimings,
        now_us: u64,
    ) -> Result<(Self, TpCm), TpError> {
        let total_bytes = data.len() as u16;
        if !(MIN_TP_BYTES..=MAX_TP_BYTES).contains(&total_bytes) {
            return Err(TpError::SizeRange(total_bytes));
        }
        let total_packets = packets_for(total_bytes);
        let rts = TpCm::Rts {
            total_bytes,
            total_packets,
            max_per_cts,
            pgn,
        };
        let sess = Self {
            originator_sa,
            responder_sa,
            pgn,
            total_bytes,
            total_packets,
            received: BTreeMap::new(),
            state: SessionState::RtsSent,
            hold_deadline_us: now_us + timings.response_timeout_us,
            timings,
            chunks: chunk_payload(data),
            burst: None,
            announced: false,
            grant_end: 0,
        };
        Ok((sess, rts))
    }

    /// Open a responding session from a received RTS.
    pub fn respond(
        originator_sa: u8,
        responder_sa: u8,
        rts: &TpCm,
        timings: TpTimings,
        now_us: u64,
    ) -> Option<(Self, TpCm)> {
        let (total_bytes, total_packets, max_per_cts, pgn) = match *rts {
            TpCm::Rts {
                total_bytes,
                total_packets,
                max_per_cts,
                pgn,
            } => (total_bytes, total_packets, max_per_cts, pgn),
            _ => return None,
        };
        let grant = total_packets.min(max_per_cts);
        let cts = TpCm::Cts {
            packets_to_send: grant,
            next_packet: 1,
            pgn,
        };
        let sess = Self {
            originator_sa,
            responder_sa,
            pgn,
            total_bytes,
            total_packets,
            received: BTreeMap::new(),
            state: SessionState::Receiving,
            hold_deadline_us: now_us + timings.response_timeout_us,
            timings,
            chunks: Vec::new(),
            burst: None,
            announced: false,
            grant_end: grant,
        };
        Some((sess, cts))
    }

    /// Receiving side of a broadcast announce. No reply is ever sent.
    pub fn receive_bam(originator_sa: u8, bam: &TpCm, timings: TpTimings, now_us: u64) -> Option<Self> {
        let (total_bytes, total_packets, pgn) = match *bam {
            TpCm::Bam {
                total_bytes,
                total_packets,
                pgn,
            } => (total_bytes, total_packets, pgn),
            _ => return None,
        };
        Some(Self {
            originator_sa,
            responder_sa: crate::frame::GLOBAL_ADDR,
            pgn,
            total_bytes,
            total_packets,
            received: BTreeMap::new(),
            state: SessionState::Receiving,
            hold_deadline_us: now_us + timings.response_timeout_us,
            timings,
            chunks: Vec::new(),
            burst: None,
            announced: false,
            grant_end: 0,
        })
    }

    pub fn is_active(&self) -> bool {
        !matches!(self.state, SessionState::Complete | SessionState::Aborted | SessionState::Idle)
    }

    /// Replace the announced geometry on a duplicate RTS: the most recent
    /// announcement wins and earlier ones are forgotten.
    fn apply_duplicate_rts(&mut self, rts: &TpCm, now_us: u64) -> Vec<TpAction> {
        if let TpCm::Rts {
            total_bytes,
            total_packets,
            max_per_cts,
            pgn,
        } = *rts
        {
            self.total_bytes = total_bytes;
            self.total_packets = total_packets;
            self.pgn = pgn;
            self.received.clear();
            self.state = SessionState::Receiving;
            self.hold_deadline_us = now_us + self.timings.response_timeout_us;
            let grant = total_packets.min(max_per_cts);
            self.grant_end = grant;
            vec![TpAction::EmitCm(TpCm::Cts {
                packets_to_send: grant,
                next_packet: 1,
                pgn,
            })]
        } else {
            Vec::new()
        }
    }

    fn dts_for(&self, first: u8, last: u8) -> Vec<TpDt> {
        (first..=last)
            .filter_map(|seq| {
                self.chunks.get(seq as usize - 1).map(|&payload| TpDt {
                    sequence: seq,
                    payload,
                })
            })
            .collect()
    }

    fn abort(&mut self, reason: u8) -> Vec<TpAction> {
        self.state = SessionState::Aborted;
        vec![
            TpAction::EmitCm(TpCm::ConnAbort {
                reason,
                pgn: self.pgn,
            }),
            TpAction::Closed(SessionClose::Aborted),
        ]
    }

    /// Apply a granted send window.
    ///
    /// `superseding` is true when this grant replaces one whose packets have
    /// not gone out yet. The rules mirror the modeled nodes:
    /// in-plan grants emit the requested packets; an out-of-plan first grant
    /// emits everything in plan and then force-closes; an out-of-plan
    /// superseding grant emits only the last in-plan packet and stalls.
    fn apply_grant(&mut self, n: u8, k: u8, now_us: u64, superseding: bool) -> Vec<TpAction> {
        self.hold_deadline_us = now_us + self.timings.hold_timeout_us;
        if n == 0 {
            // Zero-packet hold: keep the connection open, send nothing.
            self.burst = None;
            self.state = SessionState::Sending;
            return vec![TpAction::CancelPendingDts];
        }
        let end = k.saturating_add(n - 1);
        let out_of_plan = k > self.total_packets || end > self.total_packets;
        let mut actions = Vec::new();
        if superseding {
            actions.push(TpAction::CancelPendingDts);
        }
        if out_of_plan && (superseding || k > self.total_packets) {
            // Skip-and-stall: only the last in-plan packet goes out, then the
            // session waits for whatever comes next.
            let last = self.total_packets;
            self.burst = Some(Burst {
                first: last,
                last,
                transmitted: 0,
                abort_after: false,
            });
            self.state = SessionState::Sending;
            actions.push(TpAction::EmitDts(self.dts_for(last, last)));
            return actions;
        }
        let last = end.min(self.total_packets);
        self.burst = Some(Burst {
            first: k,
            last,
            transmitted: 0,
            abort_after: out_of_plan,
        });
        self.state = SessionState::Sending;
        actions.push(TpAction::EmitDts(self.dts_for(k, last)));
        if out_of_plan {
            // More packets were requested than the node is programmed to
            // send: everything in plan goes out, then a forced close.
            self.state = SessionState::Aborted;
            actions.push(TpAction::EmitCm(TpCm::ConnAbort {
                reason: ABORT_UNEXPECTED,
                pgn: self.pgn,
            }));
            actions.push(TpAction::Closed(SessionClose::Aborted));
        }
        actions
    }
}

/// Drive the originator state machine with one event.
///
/// Events for sessions in a terminal state are ignored.
pub fn originator_on_event(s: &mut TpSession, ev: TpEvent, now_us: u64) -> Vec<TpAction> {
    if !s.is_active() {
        return Vec::new();
    }
    match ev {
        TpEvent::RtsTransmitted => {
            s.announced = true;
            Vec::new()
        }
        TpEvent::Cm(_) if !s.announced => Vec::new(),
        TpEvent::Cm(TpCm::Cts {
            packets_to_send,
            next_packet,
            ..
        }) => {
            match s.state {
                SessionState::RtsSent => {
                    s.apply_grant(packets_to_send, next_packet.max(1), now_us, false)
                }
                SessionState::Sending | SessionState::CtsReceived => {
                    let burst = s.burst;
                    match burst {
                        Some(b) if b.transmitted == 0 => {
                            // Grant superseded before the first packet left.
                            s.apply_grant(packets_to_send, next_packet.max(1), now_us, true)
                        }
                        Some(b) if b.transmitted < b.last.saturating_sub(b.first) + 1 => {
                            // A second clear-to-send in the middle of a
                            // running transfer interrupts the connection.
                            let mut actions = vec![TpAction::CancelPendingDts];
                            actions.extend(s.abort(ABORT_CTS_DURING_DT));
                            actions
                        }
                        _ => s.apply_grant(packets_to_send, next_packet.max(1), now_us, false),
                    }
                }
                _ => Vec::new(),
            }
        }
        TpEvent::Cm(TpCm::EndOfMsgAck { .. }) => {
            s.state = SessionState::Complete;
            vec![TpAction::Closed(SessionClose::Complete)]
        }
        TpEvent::Cm(TpCm::ConnAbort { .. }) => {
            s.state = SessionState::Aborted;
            vec![TpAction::Closed(SessionClose::Aborted)]
        }
        TpEvent::Cm(_) => Vec::new(),
        TpEvent::DtTransmitted(seq) => {
            s.hold_deadline_us = now_us + s.timings.hold_timeout_us;
            if let Some(b) = &mut s.burst {
                if seq >= b.first && seq <= b.last {
                    b.transmitted = b.transmitted.saturating_add(1);
                }
            }
            Vec::new()
        }
        TpEvent::Dt(_) => Vec::new(),
        TpEvent::Tick => {
            if now_us >= s.hold_deadline_us {
                let mut actions = vec![TpAction::CancelPendingDts];
                actions.extend(s.abort(ABORT_TIMEOUT));
                actions
            } else {
                Vec::new()
            }
        }
    }
}

/// Drive the responder state machine with one event.
///
/// `s` is `None` when no session exists with the peer; only an RTS can open
/// one, and anything else is ignored without a response.
pub fn responder_on_event(
    s: &mut Option<TpSession>,
    originator_sa: u8,
    responder_sa: u8,
    ev: TpEvent,
    timings: TpTimings,
    now_us: u64,
) -> Vec<TpAction> {
    match s {
        None => match ev {
            TpEvent::Cm(rts @ TpCm::Rts { .. }) => {
                match TpSession::respond(originator_sa, responder_sa, &rts, timings, now_us) {
                    Some((sess, cts)) => {
                        *s = Some(sess);
                        vec![TpAction::EmitCm(cts)]
                    }
                    None => Vec::new(),
                }
            }
            // A clear-to-send with no session behind it elicits nothing.
            _ => Vec::new(),
        },
        Some(sess) => {
            if !sess.is_active() {
                if let TpEvent::Cm(rts @ TpCm::Rts { .. }) = ev {
                    return match TpSession::respond(originator_sa, responder_sa, &rts, timings, now_us)
                    {
                        Some((new_sess, cts)) => {
                            *sess = new_sess;
                            vec![TpAction::EmitCm(cts)]
                        }
                        None => Vec::new(),
                    };
                }
                return Vec::new();
            }
            match ev {
                TpEvent::Cm(rts @ TpCm::Rts { .. }) => sess.apply_duplicate_rts(&rts, now_us),
                TpEvent::Cm(TpCm::ConnAbort { .. }) => {
                    sess.state = SessionState::Aborted;
                    vec![TpAction::Closed(SessionClose::Aborted)]
                }
                TpEvent::Cm(_) => Vec::new(),
                TpEvent::Dt(dt) => {
                    if dt.sequence == 0 || dt.sequence > sess.total_packets {
                        // Out-of-range packets never make it into the buffer.
                        return Vec::new();
                    }
                    sess.hold_deadline_us = now_us + sess.timings.hold_timeout_us;
                    sess.received.entry(dt.sequence).or_insert(dt.payload);
                    if sess.received.len() == sess.total_packets as usize {
                        sess.state = SessionState::Complete;
                        return vec![
                            TpAction::EmitCm(TpCm::EndOfMsgAck {
                                total_bytes: sess.total_bytes,
                                total_packets: sess.received.len() as u8,
                                pgn: sess.pgn,
                            }),
                            TpAction::Closed(SessionClose::Complete),
                        ];
                    }
                    if dt.sequence == sess.grant_end {
                        // Granted window exhausted with packets missing: hold
                        // the connection open asking for zero more packets.
                        let next = sess
                            .received
                            .keys()
                            .next_back()
                            .map_or(1, |&m| m.saturating_add(1));
                        return vec![TpAction::EmitCm(TpCm::Cts {
                            packets_to_send: 0,
                            next_packet: next,
                            pgn: sess.pgn,
                        })];
                    }
                    Vec::new()
                }
                TpEvent::DtTransmitted(_) => Vec::new(),
                TpEvent::Tick => {
                    if now_us >= sess.hold_deadline_us {
                        // The modeled receiver lets a dead transfer lapse
                        // without an abort on the wire.
                        sess.state = SessionState::Aborted;
                        vec![TpAction::Closed(SessionClose::TimedOut)]
                    } else {
                        Vec::new()
                    }
                }
            }
        }
    }
}

/// Feed a broadcast data packet into a BAM receive session.
pub fn bam_rx_on_event(sess: &mut TpSession, ev: TpEvent, now_us: u64) -> Vec<TpAction> {
    if !sess.is_active() {
        return Vec::new();
    }
    match ev {
        TpEvent::Dt(dt) => {
            if dt.sequence == 0 || dt.sequence > sess.total_packets {
                return Vec::new();
            }
            sess.hold_deadline_us = now_us + sess.timings.hold_timeout_us;
            sess.received.entry(dt.sequence).or_insert(dt.payload);
            if sess.received.len() == sess.total_packets as usize {
                sess.state = SessionState::Complete;
                return vec![TpAction::Closed(SessionClose::Complete)];
            }
            Vec::new()
        }
        TpEvent::Tick => {
            if now_us >= sess.hold_deadline_us {
                sess.state = SessionState::Aborted;
                vec![TpAction::Closed(SessionClose::TimedOut)]
            } else {
                Vec::new()
            }
        }
        _ => Vec::new(),
    }
}

/// Reassemble a completed session's payload: packets concatenated in
/// sequence order, truncated to the announced byte count.
pub fn reassemble(s: &TpSession) -> Result<Vec<u8>, TpError> {
    let missing: Vec<u8> = (1..=s.total_packets)
        .filter(|seq| !s.received.contains_key(seq))
        .collect();
    if s.state != SessionState::Complete || !missing.is_empty() {
        return Err(TpError::Incomplete(missing));
    }
    let mut out = Vec::with_capacity(s.total_bytes as usize);
    for seq in 1..=s.total_packets {
        out.extend_from_slice(&s.received[&seq]);
    }
    out.truncate(s.total_bytes as usize);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hex(s: &str) -> Vec<u8> {
        s.split_whitespace()
            .map(|b| u8::from_str_radix(b, 16).unwrap())
            .collect()
    }

    const PACKETED: Pgn = Pgn(65260);

    #[test]
    fn tpcm_layout_frozen_vectors() {
        let rts = TpCm::Rts {
            total_bytes: 18,
            total_packets: 3,
            max_per_cts: 255,
            pgn: PACKETED,
        };
        assert_eq!(encode_tpcm(&rts).unwrap().to_vec(), hex("10 12 00 03 FF EC FE 00"));

        let cts = TpCm::Cts {
            packets_to_send: 3,
            next_packet: 1,
            pgn: PACKETED,
        };
        assert_eq!(encode_tpcm(&cts).unwrap().to_vec(), hex("11 03 01 FF FF EC FE 00"));

        let bam = TpCm::Bam {
            total_bytes: 1785,
            total_packets: 255,
            pgn: PACKETED,
        };
        assert_eq!(encode_tpcm(&bam).unwrap().to_vec(), hex("20 F9 06 FF FF EC FE 00"));
    }

    #[test]
    fn tpcm_decode_frozen_vectors() {
        assert_eq!(
            decode_tpcm(&hex("13 12 00 03 FF EC FE 00")).unwrap(),
            TpCm::EndOfMsgAck {
                total_bytes: 18,
                total_packets: 3,
                pgn: PACKETED,
            }
        );
        assert_eq!(
            decode_tpcm(&hex("FF 01 FF FF FF EC FE 00")).unwrap(),
            TpCm::ConnAbort {
                reason: 1,
                pgn: PACKETED,
            }
        );
        assert_eq!(
            decode_tpcm(&hex("42 00 00 00 00 00 00 00")),
            Err(TpError::UnknownControlByte(0x42))
        );
        assert_eq!(decode_tpcm(&[0u8; 7]), Err(TpError::PayloadLength(7)));
    }

    #[test]
    fn checked_encode_rejects_bad_geometry() {
        assert!(encode_tpcm(&TpCm::Rts {
            total_bytes: 18,
            total_packets: 2,
            max_per_cts: 255,
            pgn: PACKETED,
        })
        .is_err());
        assert!(encode_tpcm(&TpCm::Bam {
            total_bytes: 8,
            total_packets: 2,
            pgn: PACKETED,
        })
        .is_err());
        assert!(encode_tpcm(&TpCm::Cts {
            packets_to_send: 1,
            next_packet: 0,
            pgn: PACKETED,
        })
        .is_err());
        // Receiver bookkeeping after an attack legitimately reports 18/2.
        assert!(encode_tpcm(&TpCm::EndOfMsgAck {
            total_bytes: 18,
            total_packets: 2,
            pgn: PACKETED,
        })
        .is_ok());
    }

    #[test]
    fn tpcm_round_trip_all_kinds() {
        let cases = [
            TpCm::Rts {
                total_bytes: 1785,
                total_packets: 255,
                max_per_cts: 16,
                pgn: Pgn(0x1EF00),
            },
            TpCm::Cts {
                packets_to_send: 0,
                next_packet: 4,
                pgn: PACKETED,
            },
            TpCm::EndOfMsgAck {
                total_bytes: 10,
                total_packets: 2,
                pgn: PACKETED,
            },
            TpCm::ConnAbort {
                reason: 250,
                pgn: PACKETED,
            },
            TpCm::Bam {
                total_bytes: 9,
                total_packets: 2,
                pgn: Pgn(65259),
            },
        ];
        for m in cases {
            assert_eq!(decode_tpcm(&encode_tpcm_unchecked(&m)).unwrap(), m);
        }
    }

    const TIMINGS: TpTimings = TpTimings {
        response_timeout_us: 750_000,
        hold_timeout_us: 1_250_000,
    };

    fn vin_bytes() -> Vec<u8> {
        hex("31 4D 38 47 44 4D 39 41 38 4B 50 30 34 32 30 30 30 2A")
    }

    /// Open an originating session and mark its announcement transmitted.
    fn originate_sent(data: &[u8]) -> TpSession {
        let (mut s, _) = TpSession::originate(0, 249, PACKETED, data, 255, TIMINGS, 0).unwrap();
        originator_on_event(&mut s, TpEvent::RtsTransmitted, 10);
        s
    }

    fn emitted_dt_seqs(actions: &[TpAction]) -> Vec<u8> {
        actions
            .iter()
            .flat_map(|a| match a {
                TpAction::EmitDts(dts) => dts.iter().map(|d| d.sequence).collect(),
                _ => Vec::new(),
            })
            .collect()
    }

    #[test]
    fn normal_grant_emits_full_burst() {
        let (_, rts) =
            TpSession::originate(0, 249, PACKETED, &vin_bytes(), 255, TIMINGS, 0).unwrap();
        assert_eq!(
            rts,
            TpCm::Rts {
                total_bytes: 18,
                total_packets: 3,
                max_per_cts: 255,
                pgn: PACKETED,
            }
        );
        let mut s = originate_sent(&vin_bytes());
        let actions = originator_on_event(
            &mut s,
            TpEvent::Cm(TpCm::Cts {
                packets_to_send: 3,
                next_packet: 1,
                pgn: PACKETED,
            }),
            1000,
        );
        assert_eq!(emitted_dt_seqs(&actions), vec![1, 2, 3]);
        assert_eq!(s.state, SessionState::Sending);
    }

    #[test]
    fn out_of_range_next_packet_stalls_on_last_in_plan() {
        let mut s = originate_sent(&vin_bytes());
        // First the legitimate grant arrives, then before any packet leaves
        // the node a grant asking for packets 5..7 supersedes it.
        originator_on_event(
            &mut s,
            TpEvent::Cm(TpCm::Cts {
                packets_to_send: 3,
                next_packet: 1,
                pgn: PACKETED,
            }),
            1000,
        );
        let actions = originator_on_event(
            &mut s,
            TpEvent::Cm(TpCm::Cts {
                packets_to_send: 3,
                next_packet: 5,
                pgn: PACKETED,
            }),
            2000,
        );
        assert!(actions.contains(&TpAction::CancelPendingDts));
        assert_eq!(emitted_dt_seqs(&actions), vec![3]);
        assert_eq!(s.state, SessionState::Sending);
        assert!(!actions.iter().any(|a| matches!(a, TpAction::EmitCm(TpCm::EndOfMsgAck { .. }))));
    }

    #[test]
    fn overrun_superseding_grant_also_stalls() {
        // Ten packets requested from packet 1 on a three-packet plan, landing
        // before the first packet of the earlier grant went out.
        let mut s = originate_sent(&vin_bytes());
        originator_on_event(
            &mut s,
            TpEvent::Cm(TpCm::Cts {
                packets_to_send: 3,
                next_packet: 1,
                pgn: PACKETED,
            }),
            1000,
        );
        let actions = originator_on_event(
            &mut s,
            TpEvent::Cm(TpCm::Cts {
                packets_to_send: 10,
                next_packet: 1,
                pgn: PACKETED,
            }),
            2000,
        );
        assert_eq!(emitted_dt_seqs(&actions), vec![3]);
        assert_eq!(s.state, SessionState::Sending);
    }

    #[test]
    fn first_grant_beyond_plan_sends_plan_then_aborts() {
        let mut s = originate_sent(&vin_bytes());
        let actions = originator_on_event(
            &mut s,
            TpEvent::Cm(TpCm::Cts {
                packets_to_send: 4,
                next_packet: 1,
                pgn: PACKETED,
            }),
            1000,
        );
        assert_eq!(emitted_dt_seqs(&actions), vec![1, 2, 3]);
        assert!(actions
            .iter()
            .any(|a| matches!(a, TpAction::EmitCm(TpCm::ConnAbort { .. }))));
        assert_eq!(s.state, SessionState::Aborted);
    }

    #[test]
    fn cts_mid_burst_interrupts_the_connection() {
        let mut s = originate_sent(&vin_bytes());
        originator_on_event(
            &mut s,
            TpEvent::Cm(TpCm::Cts {
                packets_to_send: 3,
                next_packet: 1,
                pgn: PACKETED,
            }),
            1000,
        );
        originator_on_event(&mut s, TpEvent::DtTransmitted(1), 2000);
        let actions = originator_on_event(
            &mut s,
            TpEvent::Cm(TpCm::Cts {
                packets_to_send: 3,
                next_packet: 1,
                pgn: PACKETED,
            }),
            3000,
        );
        assert!(actions.iter().any(
            |a| matches!(a, TpAction::EmitCm(TpCm::ConnAbort { reason, .. }) if *reason == ABORT_CTS_DURING_DT)
        ));
        assert_eq!(s.state, SessionState::Aborted);
    }

    #[test]
    fn zero_packet_hold_keeps_session_open() {
        let mut s = originate_sent(&vin_bytes());
        let actions = originator_on_event(
            &mut s,
            TpEvent::Cm(TpCm::Cts {
                packets_to_send: 0,
                next_packet: 1,
                pgn: PACKETED,
            }),
            1000,
        );
        assert_eq!(emitted_dt_seqs(&actions), Vec::<u8>::new());
        assert!(s.is_active());
        assert_eq!(s.hold_deadline_us, 1000 + TIMINGS.hold_timeout_us);
        // Timeout fires once the hold lapses without further traffic.
        let actions = originator_on_event(&mut s, TpEvent::Tick, 1000 + TIMINGS.hold_timeout_us);
        assert!(actions.iter().any(
            |a| matches!(a, TpAction::EmitCm(TpCm::ConnAbort { reason, .. }) if *reason == ABORT_TIMEOUT)
        ));
        assert_eq!(s.state, SessionState::Aborted);
    }

    #[test]
    fn end_of_msg_ack_completes_even_before_sending() {
        let mut s = originate_sent(&vin_bytes());
        let actions = originator_on_event(
            &mut s,
            TpEvent::Cm(TpCm::EndOfMsgAck {
                total_bytes: 18,
                total_packets: 3,
                pgn: PACKETED,
            }),
            500,
        );
        assert_eq!(actions, vec![TpAction::Closed(SessionClose::Complete)]);
        assert_eq!(s.state, SessionState::Complete);
    }

    #[test]
    fn responder_grants_full_window() {
        let mut slot = None;
        let rts = TpCm::Rts {
            total_bytes: 18,
            total_packets: 3,
            max_per_cts: 255,
            pgn: PACKETED,
        };
        let actions = responder_on_event(&mut slot, 0, 249, TpEvent::Cm(rts), TIMINGS, 0);
        assert_eq!(
            actions,
            vec![TpAction::EmitCm(TpCm::Cts {
                packets_to_send: 3,
                next_packet: 1,
                pgn: PACKETED,
            })]
        );
        assert_eq!(slot.as_ref().unwrap().state, SessionState::Receiving);
    }

    #[test]
    fn duplicate_rts_replaces_bookkeeping() {
        let mut slot = None;
        responder_on_event(
            &mut slot,
            0,
            249,
            TpEvent::Cm(TpCm::Rts {
                total_bytes: 18,
                total_packets: 3,
                max_per_cts: 255,
                pgn: PACKETED,
            }),
            TIMINGS,
            0,
        );
        let actions = responder_on_event(
            &mut slot,
            0,
            249,
            TpEvent::Cm(TpCm::Rts {
                total_bytes: 10,
                total_packets: 2,
                max_per_cts: 255,
                pgn: PACKETED,
            }),
            TIMINGS,
            100,
        );
        assert_eq!(
            actions,
            vec![TpAction::EmitCm(TpCm::Cts {
                packets_to_send: 2,
                next_packet: 1,
                pgn: PACKETED,
            })]
        );
        // Two packets now complete the transfer, reported verbatim.
        let chunks = chunk_payload(&vin_bytes()[..10]);
        for (i, c) in chunks.iter().enumerate() {
            let actions = responder_on_event(
                &mut slot,
                0,
                249,
                TpEvent::Dt(TpDt::new(i as u8 + 1, *c).unwrap()),
                TIMINGS,
                200 + i as u64,
            );
            if i == 1 {
                assert!(actions.contains(&TpAction::EmitCm(TpCm::EndOfMsgAck {
                    total_bytes: 10,
                    total_packets: 2,
                    pgn: PACKETED,
                })));
            }
        }
        assert_eq!(slot.as_ref().unwrap().state, SessionState::Complete);
    }

    #[test]
    fn cts_without_session_elicits_nothing() {
        let mut slot = None;
        let actions = responder_on_event(
            &mut slot,
            0,
            249,
            TpEvent::Cm(TpCm::Cts {
                packets_to_send: 3,
                next_packet: 1,
                pgn: PACKETED,
            }),
            TIMINGS,
            0,
        );
        assert!(actions.is_empty());
        assert!(slot.is_none());
    }

    #[test]
    fn grant_window_exhausted_with_gaps_holds_with_zero_grant() {
        let mut slot = None;
        responder_on_event(
            &mut slot,
            0,
            249,
            TpEvent::Cm(TpCm::Rts {
                total_bytes: 18,
                total_packets: 3,
                max_per_cts: 255,
                pgn: PACKETED,
            }),
            TIMINGS,
            0,
        );
        // Only the last packet of the granted window ever shows up.
        let actions = responder_on_event(
            &mut slot,
            0,
            249,
            TpEvent::Dt(TpDt::new(3, [0x30, 0x30, 0x30, 0x2A, 0xFF, 0xFF, 0xFF]).unwrap()),
            TIMINGS,
            500,
        );
        assert_eq!(
            actions,
            vec![TpAction::EmitCm(TpCm::Cts {
                packets_to_send: 0,
                next_packet: 4,
                pgn: PACKETED,
            })]
        );
        assert!(slot.as_ref().unwrap().is_active());
    }

    #[test]
    fn first_arrival_wins_and_out_of_range_is_ignored() {
        let mut slot = None;
        responder_on_event(
            &mut slot,
            0,
            249,
            TpEvent::Cm(TpCm::Rts {
                total_bytes: 18,
                total_packets: 3,
                max_per_cts: 255,
                pgn: PACKETED,
            }),
            TIMINGS,
            0,
        );
        let spoof = [0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0x00];
        let real = [0x41, 0x38, 0x4B, 0x50, 0x30, 0x34, 0x32];
        responder_on_event(&mut slot, 0, 249, TpEvent::Dt(TpDt::new(2, spoof).unwrap()), TIMINGS, 10);
        responder_on_event(&mut slot, 0, 249, TpEvent::Dt(TpDt::new(2, real).unwrap()), TIMINGS, 20);
        // Sequence beyond the announced total is dropped.
        responder_on_event(&mut slot, 0, 249, TpEvent::Dt(TpDt::new(4, real).unwrap()), TIMINGS, 30);
        let sess = slot.as_ref().unwrap();
        assert_eq!(sess.received[&2], spoof);
        assert!(!sess.received.contains_key(&4));
    }

    #[test]
    fn bam_send_examples() {
        let frames = bam_send(18, PACKETED, &vin_bytes()).unwrap();
        assert_eq!(frames.len(), 4);
        assert!(matches!(frames[0], TpMessage::Cm(TpCm::Bam { total_packets: 3, .. })));

        let big = vec![0xAB; 1785];
        let frames = bam_send(1785, PACKETED, &big).unwrap();
        assert_eq!(frames.len(), 256);

        assert_eq!(bam_send(7, PACKETED, &[0; 7]), Err(TpError::SizeRange(7)));
    }

    #[test]
    fn reassemble_table_payloads() {
        let mut slot = None;
        responder_on_event(
            &mut slot,
            0,
            249,
            TpEvent::Cm(TpCm::Rts {
                total_bytes: 18,
                total_packets: 3,
                max_per_cts: 255,
                pgn: PACKETED,
            }),
            TIMINGS,
            0,
        );
        let rows = [
            hex("31 4D 38 47 44 4D 39"),
            hex("41 38 4B 50 30 34 32"),
            hex("30 30 30 2A FF FF FF"),
        ];
        for (i, row) in rows.iter().enumerate() {
            let mut p = [0u8; 7];
            p.copy_from_slice(row);
            responder_on_event(
                &mut slot,
                0,
                249,
                TpEvent::Dt(TpDt::new(i as u8 + 1, p).unwrap()),
                TIMINGS,
                (i as u64 + 1) * 10,
            );
        }
        let sess = slot.unwrap();
        assert_eq!(sess.state, SessionState::Complete);
        assert_eq!(reassemble(&sess).unwrap(), vin_bytes());
    }

    #[test]
    fn reassemble_truncates_to_announced_bytes() {
        // Nine bytes over two packets: packet one whole, two bytes of packet
        // two.
        let mut slot = None;
        responder_on_event(
            &mut slot,
            0,
            249,
            TpEvent::Cm(TpCm::Rts {
                total_bytes: 9,
                total_packets: 2,
                max_per_cts: 255,
                pgn: PACKETED,
            }),
            TIMINGS,
            0,
        );
        responder_on_event(
            &mut slot,
            0,
            249,
            TpEvent::Dt(TpDt::new(1, [1, 2, 3, 4, 5, 6, 7]).unwrap()),
            TIMINGS,
            10,
        );
        responder_on_event(
            &mut slot,
            0,
            249,
            TpEvent::Dt(TpDt::new(2, [8, 9, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF]).unwrap()),
            TIMINGS,
            20,
        );
        assert_eq!(
            reassemble(&slot.unwrap()).unwrap(),
            vec![1, 2, 3, 4, 5, 6, 7, 8, 9]
        );
    }

    #[test]
    fn reassemble_incomplete_reports_missing() {
        let (s, _) = TpSession::originate(0, 249, PACKETED, &vin_bytes(), 255, TIMINGS, 0).unwrap();
        match reassemble(&s) {
            Err(TpError::Incomplete(missing)) => assert_eq!(missing, vec![1, 2, 3]),
            other => panic!("expected incomplete error, got {other:?}"),
        }
    }

    #[test]
    fn reassembly_matches_brute_force_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(0xBEEF);
        for _ in 0..1000 {
            let packets: u8 = rng.gen_range(2..=255);
            let max_bytes = (packets as u16) * 7;
            let min_bytes = ((packets as u16) - 1) * 7 + 1;
            let bytes: u16 = rng.gen_range(min_bytes.max(9)..=max_bytes);
            let data: Vec<u8> = (0..bytes).map(|_| rng.gen()).collect();

            // Oracle: sort (sequence, chunk) pairs, concatenate, truncate.
            let mut pairs: Vec<(u8, [u8; 7])> = chunk_payload(&data)
                .into_iter()
                .enumerate()
                .map(|(i, c)| (i as u8 + 1, c))
                .collect();
            use rand::seq::SliceRandom;
            pairs.shuffle(&mut rng);
            let mut expected: Vec<(u8, [u8; 7])> = pairs.clone();
            expected.sort_by_key(|&(seq, _)| seq);
            let mut oracle: Vec<u8> = expected.iter().flat_map(|(_, c)| c.to_vec()).collect();
            oracle.truncate(bytes as usize);

            let mut slot = None;
            responder_on_event(
                &mut slot,
                0,
                249,
                TpEvent::Cm(TpCm::Rts {
                    total_bytes: bytes,
                    total_packets: packets,
                    max_per_cts: 255,
                    pgn: PACKETED,
                }),
                TIMINGS,
                0,
            );
            for (i, (seq, chunk)) in pairs.iter().enumerate() {
                responder_on_event(
                    &mut slot,
                    0,
                    249,
                    TpEvent::Dt(TpDt::new(*seq, *chunk).unwrap()),
                    TIMINGS,
                    i as u64,
                );
            }
            assert_eq!(reassemble(&slot.unwrap()).unwrap(), oracle);
        }
    }

    #[test]
    fn responder_times_out_silently() {
        let mut slot = None;
        responder_on_event(
            &mut slot,
            0,
            249,
            TpEvent::Cm(TpCm::Rts {
                total_bytes: 18,
                total_packets: 3,
                max_per_cts: 255,
                pgn: PACKETED,
            }),
            TIMINGS,
            0,
        );
        let actions = responder_on_event(
            &mut slot,
            0,
            249,
            TpEvent::Tick,
            TIMINGS,
            TIMINGS.response_timeout_us + 1,
        );
        assert_eq!(actions, vec![TpAction::Closed(SessionClose::TimedOut)]);
        assert_eq!(slot.as_ref().unwrap().state, SessionState::Aborted);
    }

    #[test]
    fn abort_reason_sweep_terminates_sessions() {
        // Reasons 251..=255 are manufacturer-defined; everything else must
        // close the session.
        for reason in 0u8..=250 {
            let mut s = originate_sent(&vin_bytes());
            originator_on_event(
                &mut s,
                TpEvent::Cm(TpCm::Cts {
                    packets_to_send: 3,
                    next_packet: 1,
                    pgn: PACKETED,
                }),
                100,
            );
            originator_on_event(
                &mut s,
                TpEvent::Cm(TpCm::ConnAbort {
                    reason,
                    pgn: PACKETED,
                }),
                200,
            );
            assert_eq!(s.state, SessionState::Aborted, "reason {reason}");
        }
    }
}
