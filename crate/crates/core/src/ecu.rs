//! Simulated controller nodes.
//!
//! Each node follows a declarative configuration: periodic broadcast groups
//! on absolute schedules, request servicing through a bounded FIFO that
//! delays those schedules, periodic multi-packet exchanges with a peer,
//! periodic broadcast-announce trains, and a memory pool that reserves the
//! announced size of every incoming transfer.
//!
//! Two behaviors matter for the attack outcomes:
//!
//! * A node owns a single transport-protocol slot shared by originating,
//!   responding, and broadcast-announce duties. While the slot is busy the
//!   other duties wait.
//! * When an announced transfer would overflow the memory pool the node
//!   suspends completely — no frames of any kind — until its buffer holds
//!   have drained and announcements have stopped arriving.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::bus::{BusEvent, Node, Outbox};
use crate::frame::{CanFrame, FrameId, Pgn, GLOBAL_ADDR, PGN_ACK, PGN_REQUEST, PGN_TP_CM, PGN_TP_DT};
use crate::tp::{
    bam_send, bam_rx_on_event, decode_tpcm, encode_tpcm_unchecked, originator_on_event,
    responder_on_event, AckCode, SessionClose, TpAction, TpCm, TpDt, TpEvent, TpMessage,
    TpSession, TpTimings,
};

/// Deterministic payload source for a periodic group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PayloadGen {
    /// The same bytes every cycle.
    Static(#[serde(with = "crate::config::hex_bytes")] Vec<u8>),
    /// Fixed bytes with one byte counting emissions, wrapping.
    Counter {
        #[serde(with = "crate::config::hex_bytes")]
        base: Vec<u8>,
        index: usize,
    },
}

impl PayloadGen {
    fn render(&self, cycle: u64) -> Vec<u8> {
        match self {
            PayloadGen::Static(bytes) => bytes.clone(),
            PayloadGen::Counter { base, index } => {
                let mut b = base.clone();
                if let Some(slot) = b.get_mut(*index) {
                    *slot = (cycle & 0xFF) as u8;
                }
                b
            }
        }
    }
}

/// One periodically broadcast parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicPgn {
    pub pgn: Pgn,
    #[serde(default = "default_data_priority")]
    pub priority: u8,
    pub period_ms: u64,
    /// Absolute time of the first emission; defaults to one full period.
    #[serde(default)]
    pub phase_ms: Option<u64>,
    pub payload: PayloadGen,
}

/// Periodic multi-packet exchange with a peer node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpDuty {
    pub peer: u8,
    pub pgn: Pgn,
    #[serde(with = "crate::config::hex_bytes")]
    pub data: Vec<u8>,
    pub period_min_ms: u64,
    pub period_max_ms: u64,
}

/// Periodic broadcast-announce train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BamDuty {
    pub pgn: Pgn,
    #[serde(with = "crate::config::hex_bytes")]
    pub data: Vec<u8>,
    pub period_ms: u64,
    #[serde(default)]
    pub phase_ms: Option<u64>,
}

/// Periodic request emission toward another node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestDuty {
    pub target: u8,
    pub pgns: Vec<Pgn>,
    pub period_ms: u64,
    #[serde(default)]
    pub phase_ms: Option<u64>,
}

fn default_data_priority() -> u8 {
    6
}
fn default_tp_priority() -> u8 {
    7
}
fn default_request_priority() -> u8 {
    6
}
fn default_service_time() -> u64 {
    10
}
fn default_queue_cap() -> usize {
    20
}
fn default_pool() -> u32 {
    4096
}
fn default_buffer_hold() -> u64 {
    750
}
fn default_response_timeout() -> u64 {
    750
}
fn default_session_hold() -> u64 {
    1250
}
fn default_proc_delay() -> u64 {
    2000
}
fn default_dt_gap() -> u64 {
    5000
}

/// Declarative node behavior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcuConfig {
    pub name: String,
    pub sa: u8,
    #[serde(default)]
    pub periodic_pgns: Vec<PeriodicPgn>,
    #[serde(default)]
    pub tp_duties: Vec<TpDuty>,
    #[serde(default)]
    pub bam_duty: Option<BamDuty>,
    #[serde(default)]
    pub request_duties: Vec<RequestDuty>,
    /// Groups answered when requested, beyond the periodic ones.
    #[serde(default)]
    pub extra_owned_pgns: Vec<Pgn>,
    /// Milliseconds of work one queued request costs.
    #[serde(default = "default_service_time")]
    pub request_service_time_ms: u64,
    /// Requests beyond this many are dropped instead of queued.
    #[serde(default = "default_queue_cap")]
    pub service_queue_cap: usize,
    /// Bytes available for incoming transfer buffers.
    #[serde(default = "default_pool")]
    pub memory_pool_bytes: u32,
    /// How long an unused transfer buffer stays reserved, milliseconds.
    #[serde(default = "default_buffer_hold")]
    pub buffer_hold_timeout_ms: u64,
    /// Wait for the first response in a transfer, milliseconds.
    #[serde(default = "default_response_timeout")]
    pub response_timeout_ms: u64,
    /// Keep-alive window of an open transfer, milliseconds.
    #[serde(default = "default_session_hold")]
    pub session_hold_timeout_ms: u64,
    /// Latency between receiving a frame and queueing the reaction, µs.
    #[serde(default = "default_proc_delay")]
    pub proc_delay_us: u64,
    /// Pacing between consecutive data packets of a burst, µs.
    #[serde(default = "default_dt_gap")]
    pub dt_gap_us: u64,
    #[serde(default = "default_tp_priority")]
    pub tp_priority: u8,
    #[serde(default = "default_request_priority")]
    pub request_priority: u8,
    /// Whether serviced requests emit an acknowledgement frame.
    #[serde(default)]
    pub emit_request_acks: bool,
    /// Whether inbound acknowledgement frames are processed at all.
    #[serde(default)]
    pub process_acks: bool,
}

impl EcuConfig {
    pub fn new(name: &str, sa: u8) -> Self {
        Self {
            name: name.to_string(),
            sa,
            periodic_pgns: Vec::new(),
            tp_duties: Vec::new(),
            bam_duty: None,
            request_duties: Vec::new(),
            extra_owned_pgns: Vec::new(),
            request_service_time_ms: default_service_time(),
            service_queue_cap: default_queue_cap(),
            memory_pool_bytes: default_pool(),
            buffer_hold_timeout_ms: default_buffer_hold(),
            response_timeout_ms: default_response_timeout(),
            session_hold_timeout_ms: default_session_hold(),
            proc_delay_us: default_proc_delay(),
            dt_gap_us: default_dt_gap(),
            tp_priority: default_tp_priority(),
            request_priority: default_request_priority(),
            emit_request_acks: false,
            process_acks: false,
        }
    }

    fn owns(&self, pgn: Pgn) -> bool {
        self.periodic_pgns.iter().any(|p| p.pgn == pgn) || self.extra_owned_pgns.contains(&pgn)
    }

    fn timings(&self) -> TpTimings {
        TpTimings {
            response_timeout_us: self.response_timeout_ms * 1000,
            hold_timeout_us: self.session_hold_timeout_ms * 1000,
        }
    }
}

/// What the transfer slot is being used for.
#[derive(Debug, Clone, PartialEq)]
enum SlotUse {
    Originator {
        session: TpSession,
        burst_tag: u64,
    },
    Responder {
        session: TpSession,
        /// Tag of queued control replies, withdrawn when a duplicate
        /// announcement replaces the session they describe.
        cm_tag: u64,
    },
    /// Broadcast train in progress; frees when the last packet left.
    BamTx {
        packets_left: u32,
    },
}

/// A reserved transfer buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Hold {
    originator_sa: u8,
    bytes: u32,
    deadline_us: u64,
}

/// Mutable node state, separate from its configuration.
#[derive(Debug)]
pub struct EcuState {
    pub service_queue_len: usize,
    pub memory_in_use: u32,
    pub suspended: bool,
    service_queue: VecDeque<ServiceItem>,
    holds: Vec<Hold>,
    last_refusal_us: Option<u64>,
    slot: Option<SlotUse>,
    bam_rx: BTreeMap<u8, TpSession>,
    acks_processed: u64,
}

#[derive(Debug, Clone, Copy)]
struct ServiceItem {
    requester: u8,
    pgn: Pgn,
}

impl EcuState {
    fn new() -> Self {
        Self {
            service_queue_len: 0,
            memory_in_use: 0,
            suspended: false,
            service_queue: VecDeque::new(),
            holds: Vec::new(),
            last_refusal_us: None,
            slot: None,
            bam_rx: BTreeMap::new(),
            acks_processed: 0,
        }
    }

    fn recount(&mut self) {
        self.service_queue_len = self.service_queue.len();
        self.memory_in_use = self.holds.iter().map(|h| h.bytes).sum();
    }
}

/// Schedule cursor state for one node.
#[derive(Debug)]
struct Schedules {
    periodic_next: Vec<u64>,
    periodic_cycle: Vec<u64>,
    request_next: Vec<u64>,
    request_cursor: Vec<usize>,
    bam_next: Option<u64>,
    duty_next: Vec<u64>,
}

/// A simulated controller node.
pub struct Ecu {
    cfg: EcuConfig,
    state: EcuState,
    sched: Schedules,
    rng: ChaCha12Rng,
    next_tag: u64,
}

impl Ecu {
    pub fn new(cfg: EcuConfig, seed: u64) -> Self {
        let mut rng =
            ChaCha12Rng::seed_from_u64(seed ^ (cfg.sa as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let sched = Schedules {
            periodic_next: cfg
                .periodic_pgns
                .iter()
                .map(|p| p.phase_ms.unwrap_or(p.period_ms) * 1000)
                .collect(),
            periodic_cycle: vec![0; cfg.periodic_pgns.len()],
            request_next: cfg
                .request_duties
                .iter()
                .map(|r| r.phase_ms.unwrap_or(r.period_ms) * 1000)
                .collect(),
            request_cursor: vec![0; cfg.request_duties.len()],
            bam_next: cfg
                .bam_duty
                .as_ref()
                .map(|b| b.phase_ms.unwrap_or(b.period_ms) * 1000),
            duty_next: cfg
                .tp_duties
                .iter()
                .map(|d| {
                    let span = d.period_max_ms.max(d.period_min_ms) - d.period_min_ms;
                    (d.period_min_ms + if span == 0 { 0 } else { rng.gen_range(0..=span) }) * 1000
                })
                .collect(),
        };
        Self {
            cfg,
            state: EcuState::new(),
            sched,
            rng,
            next_tag: 1,
        }
    }

    pub fn config(&self) -> &EcuConfig {
        &self.cfg
    }

    pub fn state(&self) -> &EcuState {
        &self.state
    }

    fn fresh_tag(&mut self) -> u64 {
        self.next_tag += 1;
        self.next_tag
    }

    fn tpcm_frame(&self, cm: &TpCm, da: u8) -> CanFrame {
        let id = FrameId::new(self.cfg.tp_priority, 0, 0, 0xEC, da, self.cfg.sa);
        CanFrame::new(id, encode_tpcm_unchecked(cm).to_vec()).expect("8-byte payload")
    }

    fn tpdt_frame(&self, dt: &TpDt, da: u8) -> CanFrame {
        let id = FrameId::new(self.cfg.tp_priority, 0, 0, 0xEB, da, self.cfg.sa);
        CanFrame::new(id, dt.encode().to_vec()).expect("8-byte payload")
    }

    fn data_frame(&self, pgn: Pgn, priority: u8, payload: Vec<u8>) -> CanFrame {
        let id = FrameId::for_pgn(priority, pgn, GLOBAL_ADDR, self.cfg.sa);
        CanFrame::new(id, payload).expect("payload fits")
    }

    /// Reserve `bytes` for an announced transfer. On refusal the node
    /// suspends and drops everything it was about to send.
    fn allocate(&mut self, originator_sa: u8, bytes: u32, now: u64, out: &mut Outbox) -> bool {
        if self.state.suspended {
            self.state.last_refusal_us = Some(now);
            return false;
        }
        if self.state.memory_in_use + bytes > self.cfg.memory_pool_bytes {
            self.state.suspended = true;
            self.state.last_refusal_us = Some(now);
            self.state.slot = None;
            self.state.bam_rx.clear();
            self.state.service_queue.clear();
            self.state.recount();
            out.cancel_all();
            return false;
        }
        self.state.holds.push(Hold {
            originator_sa,
            bytes,
            deadline_us: now + self.cfg.buffer_hold_timeout_ms * 1000,
        });
        self.state.recount();
        true
    }

    /// Release the most recent hold for `originator_sa`, if any.
    fn release_hold(&mut self, originator_sa: u8) {
        if let Some(pos) = self
            .state
            .holds
            .iter()
            .rposition(|h| h.originator_sa == originator_sa)
        {
            self.state.holds.remove(pos);
            self.state.recount();
        }
    }

    fn refresh_hold(&mut self, originator_sa: u8, now: u64) {
        if let Some(h) = self
            .state
            .holds
            .iter_mut()
            .rev()
            .find(|h| h.originator_sa == originator_sa)
        {
            h.deadline_us = now + self.cfg.buffer_hold_timeout_ms * 1000;
        }
    }

    /// Translate state-machine actions into frames on the wire. Control
    /// messages queue after any packet burst produced in the same batch, so
    /// a force-close follows the packets it trails.
    fn apply_tp_actions(
        &mut self,
        actions: Vec<TpAction>,
        peer: u8,
        role_originator: bool,
        now: u64,
        out: &mut Outbox,
    ) {
        let mut next_at = now + self.cfg.proc_delay_us;
        for action in actions {
            match action {
                TpAction::EmitCm(cm) => {
                    let frame = self.tpcm_frame(&cm, peer);
                    match &self.state.slot {
                        Some(SlotUse::Responder { cm_tag, .. }) if !role_originator => {
                            out.send_tagged(next_at, frame, *cm_tag);
                        }
                        _ => out.send(next_at, frame),
                    }
                }
                TpAction::EmitDts(dts) => {
                    let tag = self.fresh_tag();
                    if let Some(SlotUse::Originator { burst_tag, .. }) = &mut self.state.slot {
                        *burst_tag = tag;
                    }
                    for dt in &dts {
                        let frame = self.tpdt_frame(dt, peer);
                        out.send_tagged(next_at, frame, tag);
                        next_at += self.cfg.dt_gap_us;
                    }
                }
                TpAction::CancelPendingDts => {
                    if let Some(SlotUse::Originator { burst_tag, .. }) = &self.state.slot {
                        out.cancel_tag(*burst_tag);
                    }
                }
                TpAction::Closed(close) => {
                    if !role_originator {
                        match close {
                            SessionClose::Complete | SessionClose::Aborted => {
                                self.release_hold(peer)
                            }
                            // The buffer of a transfer that silently lapsed
                            // stays reserved until its hold expires.
                            SessionClose::TimedOut => {}
                        }
                    }
                    self.state.slot = None;
                }
            }
        }
    }

    /// Emission instant of a periodic task due at `slot_time`: queued
    /// requests are serviced first and each costs a fixed slice.
    fn flush_service_queue(&mut self, slot_time: u64, out: &mut Outbox) -> u64 {
        let queued = self.state.service_queue.len().min(self.cfg.service_queue_cap) as u64;
        let delay = queued * self.cfg.request_service_time_ms * 1000;
        if self.cfg.emit_request_acks {
            let items: Vec<ServiceItem> = self.state.service_queue.iter().copied().collect();
            for (i, item) in items.iter().enumerate() {
                let payload = vec![
                    AckCode::Ack as u8,
                    0xFF,
                    0xFF,
                    0xFF,
                    item.requester,
                    (item.pgn.0 & 0xFF) as u8,
                    ((item.pgn.0 >> 8) & 0xFF) as u8,
                    ((item.pgn.0 >> 16) & 0xFF) as u8,
                ];
                let id = FrameId::new(
                    self.cfg.request_priority,
                    0,
                    0,
                    0xE8,
                    GLOBAL_ADDR,
                    self.cfg.sa,
                );
                let frame = CanFrame::new(id, payload).expect("8-byte payload");
                out.send(
                    slot_time + (i as u64 + 1) * self.cfg.request_service_time_ms * 1000,
                    frame,
                );
            }
        }
        self.state.service_queue.clear();
        self.state.recount();
        slot_time + delay
    }

    fn start_tp_duty(&mut self, duty_idx: usize, now: u64, out: &mut Outbox) -> bool {
        let duty = self.cfg.tp_duties[duty_idx].clone();
        match TpSession::originate(
            self.cfg.sa,
            duty.peer,
            duty.pgn,
            &duty.data,
            255,
            self.cfg.timings(),
            now,
        ) {
            Ok((session, rts)) => {
                let frame = self.tpcm_frame(&rts, duty.peer);
                out.send(now, frame);
                self.state.slot = Some(SlotUse::Originator {
                    session,
                    burst_tag: 0,
                });
                true
            }
            Err(_) => false,
        }
    }

    fn start_bam(&mut self, now: u64, out: &mut Outbox) {
        let Some(duty) = self.cfg.bam_duty.clone() else {
            return;
        };
        let Ok(train) = bam_send(duty.data.len() as u16, duty.pgn, &duty.data) else {
            return;
        };
        let mut packets = 0u32;
        for (i, msg) in train.iter().enumerate() {
            let frame = match msg {
                TpMessage::Cm(cm) => self.tpcm_frame(cm, GLOBAL_ADDR),
                TpMessage::Dt(dt) => {
                    packets += 1;
                    self.tpdt_frame(dt, GLOBAL_ADDR)
                }
            };
            out.send(now + i as u64 * self.cfg.dt_gap_us, frame);
        }
        self.state.slot = Some(SlotUse::BamTx {
            packets_left: packets,
        });
    }

    fn maybe_unsuspend(&mut self, now: u64) {
        if !self.state.suspended {
            return;
        }
        let quiet_since = self
            .state
            .last_refusal_us
            .map_or(true, |t| now >= t + self.cfg.buffer_hold_timeout_ms * 1000);
        if self.state.memory_in_use == 0 && quiet_since {
            self.state.suspended = false;
            self.state.last_refusal_us = None;
        }
    }

    fn session_deadline(&self) -> Option<u64> {
        let slot = match &self.state.slot {
            Some(SlotUse::Originator { session, .. }) => Some(session.hold_deadline_us),
            Some(SlotUse::Responder { session, .. }) => Some(session.hold_deadline_us),
            _ => None,
        };
        let bam = self.state.bam_rx.values().map(|s| s.hold_deadline_us).min();
        match (slot, bam) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    fn hold_deadline(&self) -> Option<u64> {
        self.state.holds.iter().map(|h| h.deadline_us).min()
    }

    fn unsuspend_check_time(&self) -> Option<u64> {
        if !self.state.suspended {
            return None;
        }
        let quiet = self
            .state
            .last_refusal_us
            .map(|t| t + self.cfg.buffer_hold_timeout_ms * 1000);
        let drain = self.hold_deadline();
        match (quiet, drain) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        }
    }

    fn handle_tp_cm(&mut self, ev: &BusEvent, cm: TpCm, now: u64, out: &mut Outbox) {
        let peer = ev.frame.id.sa;
        let to_us = ev.frame.id.addressed_to(self.cfg.sa);
        let global = ev.frame.id.ps == GLOBAL_ADDR;
        if !to_us {
            return;
        }
        match cm {
            TpCm::Bam { total_bytes, .. } if global => {
                if !self.allocate(peer, total_bytes as u32, now, out) {
                    return;
                }
                if let Some(sess) = TpSession::receive_bam(peer, &cm, self.cfg.timings(), now) {
                    self.state.bam_rx.insert(peer, sess);
                }
            }
            TpCm::Bam { .. } => {}
            TpCm::Rts { total_bytes, .. } => {
                if global {
                    return;
                }
                // The announced buffer is reserved as soon as the
                // announcement is parsed, before session admission.
                if !self.allocate(peer, total_bytes as u32, now, out) {
                    return;
                }
                match &mut self.state.slot {
                    None => {
                        let mut slot_sess = None;
                        let actions = responder_on_event(
                            &mut slot_sess,
                            peer,
                            self.cfg.sa,
                            TpEvent::Cm(cm),
                            self.cfg.timings(),
                            now,
                        );
                        if let Some(session) = slot_sess {
                            let cm_tag = self.fresh_tag();
                            self.state.slot = Some(SlotUse::Responder { session, cm_tag });
                        }
                        self.apply_tp_actions(actions, peer, false, now, out);
                    }
                    Some(SlotUse::Responder { session, cm_tag }) if session.originator_sa == peer => {
                        // Duplicate announcement from the same origin: the
                        // most recent one wins, and a grant still queued for
                        // the superseded announcement never goes out.
                        out.cancel_tag(*cm_tag);
                        let mut slot_sess = Some(session.clone());
                        let actions = responder_on_event(
                            &mut slot_sess,
                            peer,
                            self.cfg.sa,
                            TpEvent::Cm(cm),
                            self.cfg.timings(),
                            now,
                        );
                        let fresh = self.fresh_tag();
                        if let Some(SlotUse::Responder { session, cm_tag }) = &mut self.state.slot {
                            if let Some(s) = slot_sess {
                                *session = s;
                            }
                            *cm_tag = fresh;
                        }
                        self.apply_tp_actions(actions, peer, false, now, out);
                    }
                    // Slot occupied elsewhere: no reply, the buffer hold
                    // lingers until it times out.
                    Some(_) => {}
                }
            }
            TpCm::Cts { .. } | TpCm::EndOfMsgAck { .. } => {
                if let Some(SlotUse::Originator { session, .. }) = &mut self.state.slot {
                    if session.responder_sa == peer {
                        let mut session = session.clone();
                        let actions = originator_on_event(&mut session, TpEvent::Cm(cm), now);
                        if let Some(SlotUse::Originator { session: s, .. }) = &mut self.state.slot {
                            *s = session;
                        }
                        self.apply_tp_actions(actions, peer, true, now, out);
                    }
                }
            }
            TpCm::ConnAbort { .. } => match &mut self.state.slot {
                Some(SlotUse::Originator { session, .. }) if session.responder_sa == peer => {
                    let mut session = session.clone();
                    let actions = originator_on_event(&mut session, TpEvent::Cm(cm), now);
                    if let Some(SlotUse::Originator { session: s, .. }) = &mut self.state.slot {
                        *s = session;
                    }
                    self.apply_tp_actions(actions, peer, true, now, out);
                }
                Some(SlotUse::Responder { session, .. }) if session.originator_sa == peer => {
                    let mut slot_sess = Some(session.clone());
                    let actions = responder_on_event(
                        &mut slot_sess,
                        peer,
                        self.cfg.sa,
                        TpEvent::Cm(cm),
                        self.cfg.timings(),
                        now,
                    );
                    if let (Some(s), Some(SlotUse::Responder { session, .. })) =
                        (slot_sess, &mut self.state.slot)
                    {
                        *session = s;
                    }
                    self.apply_tp_actions(actions, peer, false, now, out);
                }
                _ => {}
            },
        }
    }

    fn handle_tp_dt(&mut self, ev: &BusEvent, dt: TpDt, now: u64, out: &mut Outbox) {
        let peer = ev.frame.id.sa;
        if ev.frame.id.ps == GLOBAL_ADDR {
            if let Some(sess) = self.state.bam_rx.get_mut(&peer) {
                let mut s = sess.clone();
                let actions = bam_rx_on_event(&mut s, TpEvent::Dt(dt), now);
                let done = actions
                    .iter()
                    .any(|a| matches!(a, TpAction::Closed(_)));
                if done {
                    self.state.bam_rx.remove(&peer);
                    self.release_hold(peer);
                } else {
                    *sess = s;
                    self.refresh_hold(peer, now);
                }
            }
            return;
        }
        if !ev.frame.id.addressed_to(self.cfg.sa) {
            return;
        }
        if let Some(SlotUse::Responder { session, .. }) = &mut self.state.slot {
            if session.originator_sa == peer {
                let mut slot_sess = Some(session.clone());
                let actions = responder_on_event(
                    &mut slot_sess,
                    peer,
                    self.cfg.sa,
                    TpEvent::Dt(dt),
                    self.cfg.timings(),
                    now,
                );
                if let (Some(s), Some(SlotUse::Responder { session, .. })) =
                    (slot_sess, &mut self.state.slot)
                {
                    *session = s;
                }
                self.refresh_hold(peer, now);
                self.apply_tp_actions(actions, peer, false, now, out);
            }
        }
    }

    fn handle_request(&mut self, ev: &BusEvent, now: u64) {
        if !ev.frame.id.addressed_to(self.cfg.sa) || ev.frame.data.len() < 3 {
            return;
        }
        let pgn = Pgn(
            ev.frame.data[0] as u32
                | ((ev.frame.data[1] as u32) << 8)
                | ((ev.frame.data[2] as u32) << 16),
        );
        if !self.cfg.owns(pgn) {
            return;
        }
        if self.state.service_queue.len() < self.cfg.service_queue_cap {
            self.state.service_queue.push_back(ServiceItem {
                requester: ev.frame.id.sa,
                pgn,
            });
            self.state.recount();
        }
        let _ = now;
    }
}

impl Node for Ecu {
    fn name(&self) -> &str {
        &self.cfg.name
    }

    fn next_wakeup(&self) -> Option<u64> {
        let mut next: Option<u64> = None;
        let mut fold = |t: Option<u64>| {
            next = match (next, t) {
                (Some(a), Some(b)) => Some(a.min(b)),
                (a, b) => a.or(b),
            };
        };
        fold(self.sched.periodic_next.iter().min().copied());
        fold(self.sched.request_next.iter().min().copied());
        fold(self.sched.bam_next);
        fold(self.sched.duty_next.iter().min().copied());
        fold(self.session_deadline());
        fold(self.hold_deadline());
        fold(self.unsuspend_check_time());
        next
    }

    fn on_wakeup(&mut self, now: u64, out: &mut Outbox) {
        // Expired buffer holds drain regardless of suspension.
        let before = self.state.holds.len();
        self.state.holds.retain(|h| h.deadline_us > now);
        if self.state.holds.len() != before {
            self.state.recount();
        }
        self.maybe_unsuspend(now);

        // Periodic broadcast groups: schedules advance even while suspended,
        // but nothing is emitted.
        for i in 0..self.cfg.periodic_pgns.len() {
            while self.sched.periodic_next[i] <= now {
                let slot_time = self.sched.periodic_next[i];
                self.sched.periodic_next[i] += self.cfg.periodic_pgns[i].period_ms * 1000;
                if self.state.suspended {
                    continue;
                }
                let emit_at = self.flush_service_queue(slot_time, out);
                let p = &self.cfg.periodic_pgns[i];
                let cycle = self.sched.periodic_cycle[i];
                self.sched.periodic_cycle[i] += 1;
                let frame = self.data_frame(p.pgn, p.priority, p.payload.render(cycle));
                out.send(emit_at, frame);
            }
        }

        // Request duties.
        for i in 0..self.cfg.request_duties.len() {
            while self.sched.request_next[i] <= now {
                let slot_time = self.sched.request_next[i];
                self.sched.request_next[i] += self.cfg.request_duties[i].period_ms * 1000;
                if self.state.suspended {
                    continue;
                }
                let duty = &self.cfg.request_duties[i];
                let pgn = duty.pgns[self.sched.request_cursor[i] % duty.pgns.len()];
                self.sched.request_cursor[i] += 1;
                let payload = vec![
                    (pgn.0 & 0xFF) as u8,
                    ((pgn.0 >> 8) & 0xFF) as u8,
                    ((pgn.0 >> 16) & 0xFF) as u8,
                    0xFF,
                    0xFF,
                    0xFF,
                    0xFF,
                    0xFF,
                ];
                let id = FrameId::new(
                    self.cfg.request_priority,
                    0,
                    0,
                    0xEA,
                    duty.target,
                    self.cfg.sa,
                );
                out.send(slot_time, CanFrame::new(id, payload).expect("8 bytes"));
            }
        }

        // Broadcast-announce duty: needs the transfer slot.
        if let Some(t) = self.sched.bam_next {
            if t <= now {
                let period = self.cfg.bam_duty.as_ref().map(|b| b.period_ms).unwrap_or(0) * 1000;
                self.sched.bam_next = Some(t + period.max(1));
                if !self.state.suspended && self.state.slot.is_none() {
                    self.start_bam(now, out);
                }
            }
        }

        // Multi-packet exchange duties: wait half a second and retry when the
        // slot is busy.
        for i in 0..self.cfg.tp_duties.len() {
            if self.sched.duty_next[i] <= now {
                if self.state.suspended || self.state.slot.is_some() {
                    self.sched.duty_next[i] = now + 500_000;
                } else if self.start_tp_duty(i, now, out) {
                    let duty = &self.cfg.tp_duties[i];
                    let span = duty.period_max_ms.max(duty.period_min_ms) - duty.period_min_ms;
                    let period =
                        duty.period_min_ms + if span == 0 { 0 } else { self.rng.gen_range(0..=span) };
                    self.sched.duty_next[i] = now + period * 1000;
                } else {
                    self.sched.duty_next[i] = now + 500_000;
                }
            }
        }

        // Session timers.
        if let Some(deadline) = self.session_deadline() {
            if deadline <= now {
                match &mut self.state.slot {
                    Some(SlotUse::Originator { session, .. })
                        if session.hold_deadline_us <= now =>
                    {
                        let mut s = session.clone();
                        let actions = originator_on_event(&mut s, TpEvent::Tick, now);
                        if let Some(SlotUse::Originator { session, .. }) = &mut self.state.slot {
                            *session = s;
                        }
                        let peer = match &self.state.slot {
                            Some(SlotUse::Originator { session, .. }) => session.responder_sa,
                            _ => GLOBAL_ADDR,
                        };
                        self.apply_tp_actions(actions, peer, true, now, out);
                    }
                    Some(SlotUse::Responder { session, .. }) if session.hold_deadline_us <= now => {
                        let peer = session.originator_sa;
                        let mut slot_sess = Some(session.clone());
                        let actions = responder_on_event(
                            &mut slot_sess,
                            peer,
                            self.cfg.sa,
                            TpEvent::Tick,
                            self.cfg.timings(),
                            now,
                        );
                        if let (Some(s), Some(SlotUse::Responder { session, .. })) =
                            (slot_sess, &mut self.state.slot)
                        {
                            *session = s;
                        }
                        self.apply_tp_actions(actions, peer, false, now, out);
                    }
                    _ => {}
                }
                // Broadcast receive sessions that lapsed.
                let lapsed: Vec<u8> = self
                    .state
                    .bam_rx
                    .iter()
                    .filter(|(_, s)| s.hold_deadline_us <= now)
                    .map(|(&sa, _)| sa)
                    .collect();
                for sa in lapsed {
                    self.state.bam_rx.remove(&sa);
                }
            }
        }
    }

    fn on_frame(&mut self, now: u64, ev: &BusEvent, out: &mut Outbox) {
        let pgn = ev.frame.pgn();
        if self.state.suspended {
            // A suspended node answers nothing, but announcements hitting it
            // still count as refusals and keep it suspended.
            if pgn == Pgn(PGN_TP_CM) && ev.frame.id.addressed_to(self.cfg.sa) {
                if let Ok(TpCm::Rts { .. } | TpCm::Bam { .. }) = decode_tpcm(&ev.frame.data) {
                    self.state.last_refusal_us = Some(now);
                }
            }
            return;
        }
        if pgn == Pgn(PGN_TP_CM) {
            if let Ok(cm) = decode_tpcm(&ev.frame.data) {
                self.handle_tp_cm(ev, cm, now, out);
            }
        } else if pgn == Pgn(PGN_TP_DT) {
            if let Ok(dt) = TpDt::decode(&ev.frame.data) {
                self.handle_tp_dt(ev, dt, now, out);
            }
        } else if pgn == Pgn(PGN_REQUEST) {
            self.handle_request(ev, now);
        } else if pgn == Pgn(PGN_ACK) {
            if self.cfg.process_acks {
                self.state.acks_processed += 1;
            }
        }
    }

    fn on_tx_done(&mut self, now: u64, frame: &CanFrame, _out: &mut Outbox) {
        let pgn = frame.pgn();
        if pgn == Pgn(PGN_TP_CM) {
            if let Some(SlotUse::Originator { session, .. }) = &mut self.state.slot {
                if frame.data.first() == Some(&crate::tp::CTRL_RTS) {
                    originator_on_event(session, TpEvent::RtsTransmitted, now);
                }
            }
            return;
        }
        if pgn != Pgn(PGN_TP_DT) {
            return;
        }
        match &mut self.state.slot {
            Some(SlotUse::Originator { session, .. }) => {
                if let Ok(dt) = TpDt::decode(&frame.data) {
                    originator_on_event(session, TpEvent::DtTransmitted(dt.sequence), now);
                }
            }
            Some(SlotUse::BamTx { packets_left }) => {
                *packets_left -= 1;
                if *packets_left == 0 {
                    self.state.slot = None;
                }
            }
            _ => {}
        }
    }
}
