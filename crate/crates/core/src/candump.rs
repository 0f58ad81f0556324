//! candump-compatible text logs.
//!
//! One line per frame: `(SECONDS.MICROS) vcan0 ID#DATA` with an 8-digit
//! uppercase hex identifier and the data bytes as hex pairs, e.g.
//!
//! ```text
//! (1.000000) vcan0 1CEBF900#01314D3847444D39
//! ```
//!
//! The format interoperates with the usual CAN tooling; node attribution is
//! simulator metadata and is not part of the text form.

use std::fmt::Write as _;

use thiserror::Error;

use crate::bus::BusEvent;
use crate::frame::{decode_id, encode_id, CanFrame};

pub const INTERFACE: &str = "vcan0";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CandumpError {
    #[error("line {0}: malformed candump record")]
    Malformed(usize),
    #[error("line {0}: bad identifier")]
    BadId(usize),
    #[error("line {0}: bad data hex")]
    BadData(usize),
}

/// Render a bus log as candump text. The empty log renders as empty text.
pub fn export_candump(log: &[BusEvent]) -> String {
    let mut out = String::with_capacity(log.len() * 40);
    for ev in log {
        let secs = ev.timestamp_us / 1_000_000;
        let micros = ev.timestamp_us % 1_000_000;
        let raw = encode_id(ev.frame.id).expect("logged frame has a valid id");
        let _ = write!(out, "({secs}.{micros:06}) {INTERFACE} {raw:08X}#");
        for b in &ev.frame.data {
            let _ = write!(out, "{b:02X}");
        }
        out.push('\n');
    }
    out
}

/// Parse candump text into `(timestamp_us, frame)` records.
pub fn parse_candump(text: &str) -> Result<Vec<(u64, CanFrame)>, CandumpError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let mut parts = line.split_whitespace();
        let ts = parts.next().ok_or(CandumpError::Malformed(lineno))?;
        let _iface = parts.next().ok_or(CandumpError::Malformed(lineno))?;
        let idata = parts.next().ok_or(CandumpError::Malformed(lineno))?;

        let ts = ts
            .strip_prefix('(')
            .and_then(|t| t.strip_suffix(')'))
            .ok_or(CandumpError::Malformed(lineno))?;
        let (secs, micros) = ts.split_once('.').ok_or(CandumpError::Malformed(lineno))?;
        if micros.len() != 6 {
            return Err(CandumpError::Malformed(lineno));
        }
        let secs: u64 = secs.parse().map_err(|_| CandumpError::Malformed(lineno))?;
        let micros: u64 = micros.parse().map_err(|_| CandumpError::Malformed(lineno))?;

        let (id, data) = idata.split_once('#').ok_or(CandumpError::Malformed(lineno))?;
        let raw = u32::from_str_radix(id, 16).map_err(|_| CandumpError::BadId(lineno))?;
        let id = decode_id(raw).map_err(|_| CandumpError::BadId(lineno))?;
        if data.len() % 2 != 0 || data.len() > 16 {
            return Err(CandumpError::BadData(lineno));
        }
        let bytes: Result<Vec<u8>, _> = (0..data.len())
            .step_by(2)
            .map(|j| u8::from_str_radix(&data[j..j + 2], 16))
            .collect();
        let bytes = bytes.map_err(|_| CandumpError::BadData(lineno))?;

        let mut frame = CanFrame::new(id, bytes).map_err(|_| CandumpError::BadData(lineno))?;
        frame.timestamp_us = secs * 1_000_000 + micros;
        out.push((frame.timestamp_us, frame));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::NodeId;
    use crate::frame::FrameId;

    #[test]
    fn export_known_line() {
        let id = FrameId::new(7, 0, 0, 0xEB, 0xF9, 0x00);
        let mut frame = CanFrame::new(
            id,
            vec![0x01, 0x31, 0x4D, 0x38, 0x47, 0x44, 0x4D, 0x39],
        )
        .unwrap();
        frame.timestamp_us = 1_000_000;
        let log = vec![BusEvent {
            timestamp_us: 1_000_000,
            frame,
            origin: NodeId(0),
        }];
        assert_eq!(
            export_candump(&log),
            "(1.000000) vcan0 1CEBF900#01314D3847444D39\n"
        );
    }

    #[test]
    fn empty_log_exports_empty_text() {
        assert_eq!(export_candump(&[]), "");
    }

    #[test]
    fn parse_round_trips_export() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(0xD0D0);
        let mut log = Vec::new();
        let mut t = 0u64;
        for _ in 0..500 {
            t += rng.gen_range(1..5_000_000);
            let id = FrameId::new(
                rng.gen_range(0..=7),
                rng.gen_range(0..=1),
                rng.gen_range(0..=1),
                rng.gen(),
                rng.gen(),
                rng.gen(),
            );
            let len = rng.gen_range(0..=8);
            let data: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            let mut frame = CanFrame::new(id, data).unwrap();
            frame.timestamp_us = t;
            log.push(BusEvent {
                timestamp_us: t,
                frame,
                origin: NodeId(0),
            });
        }
        let parsed = parse_candump(&export_candump(&log)).unwrap();
        assert_eq!(parsed.len(), log.len());
        for (ev, (ts, frame)) in log.iter().zip(parsed.iter()) {
            assert_eq!(*ts, ev.timestamp_us);
            assert_eq!(*frame, ev.frame);
        }
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(parse_candump("nonsense").is_err());
        assert!(parse_candump("(1.0) vcan0 1CEBF900#00").is_err());
        assert!(parse_candump("(1.000000) vcan0 FFFFFFFF#00").is_err());
        assert!(parse_candump("(1.000000) vcan0 1CEBF900#0").is_err());
    }
}
