//! The shipped testbed: three simulated controller nodes on a 250 kbit/s
//! bus, loaded to roughly a fifth of capacity.
//!
//! * Node 0 ("engine") broadcasts engine fluid data (PGN 65263) every
//!   half second, sends an 18-byte multi-packet record to node 249 every
//!   45 to 60 seconds, and announces a broadcast train every 2.5 seconds.
//! * Node 249 ("message center") carries most of the periodic bus load,
//!   answers requests, runs its own multi-packet exchange toward node 0,
//!   and announces a broadcast train of its own.
//! * Node 23 ("instrument") fills in more periodic load and polls the
//!   message center with request messages.

use crate::config::{BusSection, TestbedConfig};
use crate::ecu::{BamDuty, EcuConfig, PayloadGen, PeriodicPgn, RequestDuty, TpDuty};
use crate::frame::Pgn;

/// Source address of the engine node.
pub const ENGINE_SA: u8 = 0x00;
/// Source address of the message-center node.
pub const MCS_SA: u8 = 0xF9;
/// Source address of the instrument node.
pub const INSTRUMENT_SA: u8 = 0x17;
/// Source address the attacker transmits under when not spoofing.
pub const ATTACKER_SA: u8 = 0xFE;

/// Engine fluid level/pressure group, the request-overload target.
pub const ENGINE_FLUID_PGN: Pgn = Pgn(65263);
/// PGN of the packeted record both exchange duties carry.
pub const EXCHANGE_PGN: Pgn = Pgn(65260);
/// PGN announced by the engine node's broadcast train.
pub const ENGINE_BAM_PGN: Pgn = Pgn(65259);
/// PGN announced by the message-center broadcast train.
pub const MCS_BAM_PGN: Pgn = Pgn(65226);

/// The 18-byte record node 0 sends to node 249 (three packets).
pub fn exchange_record() -> Vec<u8> {
    b"1M8GDM9A8KP042000*".to_vec()
}

/// The 18-byte record node 249 sends back to node 0.
pub fn mcs_record() -> Vec<u8> {
    b"MCS-DATASET-00042*".to_vec()
}

fn stat(bytes: &[u8]) -> PayloadGen {
    PayloadGen::Static(bytes.to_vec())
}

fn filler(pgn: u32, phase_ms: u64, byte: u8) -> PeriodicPgn {
    PeriodicPgn {
        pgn: Pgn(pgn),
        priority: 6,
        period_ms: 100,
        phase_ms: Some(phase_ms),
        payload: stat(&[byte, byte, 0x00, 0xFF, 0x7D, 0x7D, 0xFF, 0xFF]),
    }
}

/// Build the default testbed configuration.
pub fn testbed_preset() -> TestbedConfig {
    let mut engine = EcuConfig::new("engine", ENGINE_SA);
    engine.periodic_pgns = vec![PeriodicPgn {
        pgn: ENGINE_FLUID_PGN,
        priority: 6,
        period_ms: 500,
        phase_ms: Some(97),
        payload: stat(&[0x51, 0x7D, 0x30, 0xFF, 0x20, 0x4E, 0xFF, 0xFF]),
    }];
    engine.tp_duties = vec![TpDuty {
        peer: MCS_SA,
        pgn: EXCHANGE_PGN,
        data: exchange_record(),
        period_min_ms: 45_000,
        period_max_ms: 60_000,
    }];
    engine.bam_duty = Some(BamDuty {
        pgn: ENGINE_BAM_PGN,
        data: b"ENGINE*CTRL*U1*".to_vec(),
        period_ms: 2_500,
        phase_ms: Some(2_503),
    });

    let mut mcs = EcuConfig::new("mcs", MCS_SA);
    mcs.periodic_pgns = (0..22)
        .map(|i| filler(65_100 + i as u32, i, 0x40 + i as u8))
        .collect();
    mcs.tp_duties = vec![TpDuty {
        peer: ENGINE_SA,
        pgn: EXCHANGE_PGN,
        data: mcs_record(),
        period_min_ms: 45_000,
        period_max_ms: 60_000,
    }];
    mcs.bam_duty = Some(BamDuty {
        pgn: MCS_BAM_PGN,
        data: vec![0x00, 0xFF, 0x00, 0x00, 0x00, 0x00, 0xFF, 0xFF, 0x00, 0x00],
        period_ms: 3_300,
        phase_ms: Some(3_307),
    });
    mcs.extra_owned_pgns = vec![Pgn(65227), Pgn(65253), Pgn(65254), EXCHANGE_PGN];

    let mut instrument = EcuConfig::new("instrument", INSTRUMENT_SA);
    instrument.periodic_pgns = (0..12)
        .map(|i| filler(65_271 + i as u32, 30 + i, 0x10 + i as u8))
        .collect();
    instrument.request_duties = vec![RequestDuty {
        target: MCS_SA,
        pgns: vec![Pgn(65227), Pgn(65253), Pgn(65254), EXCHANGE_PGN],
        period_ms: 500,
        phase_ms: Some(60),
    }];

    TestbedConfig {
        bus: BusSection {
            baud: 250_000,
            frame_bits: 128,
        },
        ecus: vec![engine, mcs, instrument],
    }
}
