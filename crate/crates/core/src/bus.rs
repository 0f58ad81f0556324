//! Deterministic discrete-event CAN bus.
//!
//! One frame occupies the bus at a time for a fixed number of bit times.
//! Whenever the bus goes idle, every frame whose ready time has passed
//! competes and the numerically lowest 29-bit identifier wins; ties between
//! nodes fall back to registration order, so replaying identical inputs
//! yields an identical event log.

use std::collections::BinaryHeap;

use crate::frame::{encode_id, CanFrame};

/// Index of a registered node, in registration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BusConfig {
    /// Bit rate of the bus, bits per second.
    pub baud: u32,
    /// Fixed cost of one frame on the wire, bits. No stuffing model; the
    /// simulation reasons in utilization bands, not exact bit counts.
    pub frame_bits: u32,
}

impl Default for BusConfig {
    fn default() -> Self {
        Self {
            baud: 250_000,
            frame_bits: 128,
        }
    }
}

impl BusConfig {
    /// Wire time of one frame in microseconds.
    pub fn frame_time_us(&self) -> u64 {
        (self.frame_bits as u64 * 1_000_000) / self.baud as u64
    }
}

/// One transmitted frame in the totally ordered bus log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BusEvent {
    /// Start-of-frame time, microseconds.
    pub timestamp_us: u64,
    pub frame: CanFrame,
    pub origin: NodeId,
}

/// Fraction of the bus capacity consumed by logged frames inside
/// `[start_us, end_us)`. An empty window counts as zero.
pub fn utilization(log: &[BusEvent], cfg: &BusConfig, start_us: u64, end_us: u64) -> f64 {
    if end_us <= start_us {
        return 0.0;
    }
    let frames = log
        .iter()
        .filter(|e| e.timestamp_us >= start_us && e.timestamp_us < end_us)
        .count() as f64;
    let window_s = (end_us - start_us) as f64 / 1e6;
    frames * cfg.frame_bits as f64 / (cfg.baud as f64 * window_s)
}

/// A frame queued for transmission by a node.
#[derive(Debug, Clone)]
struct QueuedTx {
    ready_at: u64,
    raw_id: u32,
    node: usize,
    seq: u64,
    tag: Option<u64>,
    frame: CanFrame,
}

/// Transmission requests and cancellations a node hands back from a callback.
#[derive(Debug, Default)]
pub struct Outbox {
    ops: Vec<OutboxOp>,
}

#[derive(Debug)]
enum OutboxOp {
    Queue {
        ready_at: u64,
        tag: Option<u64>,
        frame: CanFrame,
    },
    CancelTag(u64),
    CancelAll,
}

impl Outbox {
    /// Queue a frame for transmission no earlier than `ready_at`.
    pub fn send(&mut self, ready_at: u64, frame: CanFrame) {
        self.ops.push(OutboxOp::Queue {
            ready_at,
            tag: None,
            frame,
        });
    }

    /// Queue a frame that can later be withdrawn by tag.
    pub fn send_tagged(&mut self, ready_at: u64, frame: CanFrame, tag: u64) {
        self.ops.push(OutboxOp::Queue {
            ready_at,
            tag: Some(tag),
            frame,
        });
    }

    /// Withdraw queued-but-untransmitted frames carrying `tag`.
    pub fn cancel_tag(&mut self, tag: u64) {
        self.ops.push(OutboxOp::CancelTag(tag));
    }

    /// Withdraw every queued-but-untransmitted frame of this node.
    pub fn cancel_all(&mut self) {
        self.ops.push(OutboxOp::CancelAll);
    }
}

/// A simulated bus participant.
pub trait Node {
    fn name(&self) -> &str;

    /// Earliest simulation time at which the node wants `on_wakeup`.
    fn next_wakeup(&self) -> Option<u64>;

    /// Timer callback; `now` is at or past the advertised wakeup.
    fn on_wakeup(&mut self, now_us: u64, out: &mut Outbox);

    /// A frame finished transmitting. The transmitting node does not hear
    /// its own frame; `tx_done` tells it instead.
    fn on_frame(&mut self, now_us: u64, ev: &BusEvent, out: &mut Outbox);

    /// One of this node's own frames finished transmitting.
    fn on_tx_done(&mut self, _now_us: u64, _frame: &CanFrame, _out: &mut Outbox) {}
}

/// The discrete-event engine: nodes, per-node transmit queues, and the log.
pub struct Simulation {
    cfg: BusConfig,
    nodes: Vec<Box<dyn Node>>,
    queues: Vec<Vec<QueuedTx>>,
    now: u64,
    seq: u64,
    in_flight: Option<QueuedTx>,
    busy_until: u64,
    log: Vec<BusEvent>,
}

impl Simulation {
    pub fn new(cfg: BusConfig) -> Self {
        Self {
            cfg,
            nodes: Vec::new(),
            queues: Vec::new(),
            now: 0,
            seq: 0,
            in_flight: None,
            busy_until: 0,
            log: Vec::new(),
        }
    }

    pub fn add_node(&mut self, node: Box<dyn Node>) -> NodeId {
        self.nodes.push(node);
        self.queues.push(Vec::new());
        NodeId(self.nodes.len() - 1)
    }

    pub fn config(&self) -> &BusConfig {
        &self.cfg
    }

    pub fn log(&self) -> &[BusEvent] {
        &self.log
    }

    pub fn into_log(self) -> Vec<BusEvent> {
        self.log
    }

    pub fn node_name(&self, id: NodeId) -> &str {
        self.nodes[id.0].name()
    }

    fn apply_outbox(&mut self, node: usize, out: Outbox) {
        for op in out.ops {
            match op {
                OutboxOp::Queue {
                    ready_at,
                    tag,
                    frame,
                } => {
                    let raw_id = encode_id(frame.id).expect("node queued an invalid identifier");
                    self.queues[node].push(QueuedTx {
                        ready_at,
                        raw_id,
                        node,
                        seq: self.seq,
                        tag,
                        frame,
                    });
                    self.seq += 1;
                }
                OutboxOp::CancelTag(tag) => {
                    self.queues[node].retain(|q| q.tag != Some(tag));
                }
                OutboxOp::CancelAll => self.queues[node].clear(),
            }
        }
    }

    fn earliest_ready(&self) -> Option<u64> {
        self.queues
            .iter()
            .flatten()
            .map(|q| q.ready_at)
            .min()
    }

    fn earliest_wakeup(&self) -> Option<u64> {
        self.nodes.iter().filter_map(|n| n.next_wakeup()).min()
    }

    /// All ready frames compete; the lowest identifier wins, ties broken by
    /// node registration order.
    fn arbitrate(&mut self) -> Option<QueuedTx> {
        let mut best: Option<(usize, usize)> = None;
        let mut best_key = (u32::MAX, usize::MAX, u64::MAX);
        for (ni, queue) in self.queues.iter().enumerate() {
            for (qi, q) in queue.iter().enumerate() {
                if q.ready_at > self.now {
                    continue;
                }
                let key = (q.raw_id, q.node, q.seq);
                if key < best_key {
                    best_key = key;
                    best = Some((ni, qi));
                }
            }
        }
        best.map(|(ni, qi)| self.queues[ni].remove(qi))
    }

    fn dispatch_wakeups(&mut self) {
        for i in 0..self.nodes.len() {
            while self.nodes[i].next_wakeup().is_some_and(|w| w <= self.now) {
                let mut out = Outbox::default();
                self.nodes[i].on_wakeup(self.now, &mut out);
                self.apply_outbox(i, out);
            }
        }
    }

    fn deliver(&mut self, tx: QueuedTx) {
        let mut frame = tx.frame;
        frame.timestamp_us = self.now - self.cfg.frame_time_us();
        let ev = BusEvent {
            timestamp_us: frame.timestamp_us,
            frame,
            origin: NodeId(tx.node),
        };
        for i in 0..self.nodes.len() {
            let mut out = Outbox::default();
            if i == tx.node {
                self.nodes[i].on_tx_done(self.now, &ev.frame, &mut out);
            } else {
                self.nodes[i].on_frame(self.now, &ev, &mut out);
            }
            self.apply_outbox(i, out);
        }
        self.log.push(ev);
    }

    /// Run the simulation until `horizon_us`. Frames starting before the
    /// horizon finish; nothing new starts after it.
    pub fn run_until(&mut self, horizon_us: u64) {
        loop {
            if let Some(tx) = self.in_flight.take() {
                // Bus is busy: next interesting instant is end of frame or an
                // earlier wakeup.
                let t = self
                    .earliest_wakeup()
                    .map_or(self.busy_until, |w| w.min(self.busy_until));
                self.now = t.max(self.now);
                if self.now < self.busy_until {
                    self.in_flight = Some(tx);
                    self.dispatch_wakeups();
                } else {
                    self.now = self.busy_until;
                    self.deliver(tx);
                    self.dispatch_wakeups();
                }
                continue;
            }
            // Bus idle: advance to the next wakeup or ready frame.
            let next = match (self.earliest_wakeup(), self.earliest_ready()) {
                (Some(w), Some(r)) => Some(w.min(r)),
                (Some(w), None) => Some(w),
                (None, Some(r)) => Some(r),
                (None, None) => None,
            };
            let Some(next) = next else {
                self.now = self.now.max(horizon_us);
                return;
            };
            let t = next.max(self.now);
            if t >= horizon_us {
                self.now = self.now.max(horizon_us);
                return;
            }
            self.now = t;
            self.dispatch_wakeups();
            if let Some(tx) = self.arbitrate() {
                self.busy_until = self.now + self.cfg.frame_time_us();
                self.in_flight = Some(tx);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{decode_id, FrameId};

    /// Emits a fixed script of (ready_at, raw_id) frames.
    struct ScriptNode {
        name: String,
        script: Vec<(u64, u32)>,
        fired: bool,
    }

    impl ScriptNode {
        fn new(name: &str, script: Vec<(u64, u32)>) -> Self {
            Self {
                name: name.to_string(),
                script,
                fired: false,
            }
        }
    }

    impl Node for ScriptNode {
        fn name(&self) -> &str {
            &self.name
        }
        fn next_wakeup(&self) -> Option<u64> {
            if self.fired {
                None
            } else {
                Some(0)
            }
        }
        fn on_wakeup(&mut self, _now: u64, out: &mut Outbox) {
            self.fired = true;
            for &(ready_at, raw) in &self.script {
                let frame = CanFrame::new(decode_id(raw).unwrap(), vec![0u8; 8]).unwrap();
                out.send(ready_at, frame);
            }
        }
        fn on_frame(&mut self, _now: u64, _ev: &BusEvent, _out: &mut Outbox) {}
    }

    fn run_scripts(scripts: Vec<(&str, Vec<(u64, u32)>)>, horizon: u64) -> Vec<BusEvent> {
        let mut sim = Simulation::new(BusConfig::default());
        for (name, script) in scripts {
            sim.add_node(Box::new(ScriptNode::new(name, script)));
        }
        sim.run_until(horizon);
        sim.into_log()
    }

    #[test]
    fn lowest_id_wins_arbitration() {
        let log = run_scripts(
            vec![
                ("a", vec![(100, 0x18FEEF00)]),
                ("b", vec![(100, 0x0CF00400)]),
            ],
            10_000,
        );
        assert_eq!(log.len(), 2);
        assert_eq!(encode_id(log[0].frame.id).unwrap(), 0x0CF00400);
        assert_eq!(encode_id(log[1].frame.id).unwrap(), 0x18FEEF00);
        // Loser starts right as the winner finishes.
        assert_eq!(log[1].timestamp_us, 100 + 512);
    }

    #[test]
    fn single_pending_frame_transmits() {
        let log = run_scripts(vec![("only", vec![(500, 0x1CEBF900)])], 10_000);
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].timestamp_us, 500);
    }

    #[test]
    fn identical_ids_tie_break_by_node_order() {
        let log = run_scripts(
            vec![
                ("ecu1", vec![(100, 0x1CECF900)]),
                ("attacker9", vec![(100, 0x1CECF900)]),
            ],
            10_000,
        );
        assert_eq!(log[0].origin, NodeId(0));
        assert_eq!(log[1].origin, NodeId(1));
    }

    #[test]
    fn replay_is_byte_identical() {
        let script = vec![
            ("x", vec![(10, 0x0CF00400), (600, 0x18FEEF00), (605, 0x1CEBF900)]),
            ("y", vec![(10, 0x0CF00401), (700, 0x18EAF900)]),
        ];
        let a = run_scripts(script.clone(), 50_000);
        let b = run_scripts(script, 50_000);
        assert_eq!(a, b);
    }

    #[test]
    fn utilization_examples() {
        let cfg = BusConfig::default();
        let id = FrameId::new(6, 0, 0, 0xFE, 0xEF, 0);
        let mk = |n: usize, window_us: u64| -> Vec<BusEvent> {
            (0..n)
                .map(|i| BusEvent {
                    timestamp_us: i as u64 * window_us / n as u64,
                    frame: CanFrame::new(id, vec![0; 8]).unwrap(),
                    origin: NodeId(0),
                })
                .collect()
        };
        let log = mk(390, 1_000_000);
        let u = utilization(&log, &cfg, 0, 1_000_000);
        assert!((u - 0.19968).abs() < 1e-4, "{u}");

        assert_eq!(utilization(&[], &cfg, 0, 1_000_000), 0.0);

        let log = mk(1953, 1_000_000);
        let u = utilization(&log, &cfg, 0, 1_000_000);
        assert!((u - 1.0).abs() < 1e-3, "{u}");
    }

    #[test]
    fn frame_time_is_512_us_at_defaults() {
        assert_eq!(BusConfig::default().frame_time_us(), 512);
    }
}
