//! 29-bit extended identifier codec and frame types.
//!
//! A J1939 arbitration identifier packs six fields into 29 bits:
//!
//! ```text
//! ┌──────────┬─────┬────┬────────┬────────┬────────┐
//! │ Priority │ EDP │ DP │   PF   │   PS   │   SA   │
//! │  3 bits  │  1  │ 1  │ 8 bits │ 8 bits │ 8 bits │
//! └──────────┴─────┴────┴────────┴────────┴────────┘
//! ```
//!
//! PF below 240 selects PDU1 (peer-to-peer, PS is the destination address);
//! PF of 240 and above selects PDU2 (broadcast, PS is the group extension).
//! The parameter group number is derived from EDP/DP/PF/PS, with PS masked
//! out for PDU1.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Request PGN (0xEA00).
pub const PGN_REQUEST: u32 = 59904;
/// Acknowledgement PGN (0xE800).
pub const PGN_ACK: u32 = 59392;
/// Transport protocol connection management PGN (0xEC00).
pub const PGN_TP_CM: u32 = 60416;
/// Transport protocol data transfer PGN (0xEB00).
pub const PGN_TP_DT: u32 = 60160;

/// Global destination address.
pub const GLOBAL_ADDR: u8 = 0xFF;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("field {field} value {value} out of range (max {max})")]
    FieldRange {
        field: &'static str,
        value: u32,
        max: u32,
    },
    #[error("raw identifier {0:#x} does not fit in 29 bits")]
    IdRange(u32),
    #[error("frame data length {0} exceeds 8 bytes")]
    DataLength(usize),
}

/// Decomposed 29-bit identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FrameId {
    /// Priority, 0 (highest) to 7 (lowest).
    pub priority: u8,
    /// Extended data page bit.
    pub edp: u8,
    /// Data page bit.
    pub dp: u8,
    /// PDU format.
    pub pf: u8,
    /// PDU specific: destination address (PDU1) or group extension (PDU2).
    pub ps: u8,
    /// Source address.
    pub sa: u8,
}

/// Parameter group number, 18 bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pgn(pub u32);

impl Pgn {
    /// PDU format byte of this group.
    pub fn pf(self) -> u8 {
        ((self.0 >> 8) & 0xFF) as u8
    }

    /// True when the group uses PDU1 (destination-addressed) framing.
    pub fn is_pdu1(self) -> bool {
        self.pf() < 240
    }
}

impl fmt::Display for Pgn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Where a frame is addressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Destination {
    /// PDU1 with a concrete destination address.
    Specific(u8),
    /// PDU1 addressed to 255.
    Global,
    /// PDU2; the PS byte is a group extension, not an address.
    GroupExtension(u8),
}

impl FrameId {
    pub fn new(priority: u8, edp: u8, dp: u8, pf: u8, ps: u8, sa: u8) -> Self {
        Self {
            priority,
            edp,
            dp,
            pf,
            ps,
            sa,
        }
    }

    /// Identifier for a PGN-addressed frame. For PDU1 groups the low PGN byte
    /// is replaced by the destination address; PDU2 groups ignore `da`.
    pub fn for_pgn(priority: u8, pgn: Pgn, da: u8, sa: u8) -> Self {
        let edp = ((pgn.0 >> 17) & 1) as u8;
        let dp = ((pgn.0 >> 16) & 1) as u8;
        let pf = ((pgn.0 >> 8) & 0xFF) as u8;
        let ps = if pf < 240 { da } else { (pgn.0 & 0xFF) as u8 };
        Self::new(priority, edp, dp, pf, ps, sa)
    }

    /// Parameter group number carried by this identifier.
    pub fn pgn(&self) -> Pgn {
        let base = ((self.edp as u32) << 17) | ((self.dp as u32) << 16) | ((self.pf as u32) << 8);
        if self.pf < 240 {
            Pgn(base)
        } else {
            Pgn(base | self.ps as u32)
        }
    }

    /// Destination of this identifier per the PDU1/PDU2 rules.
    pub fn destination(&self) -> Destination {
        if self.pf < 240 {
            if self.ps == GLOBAL_ADDR {
                Destination::Global
            } else {
                Destination::Specific(self.ps)
            }
        } else {
            Destination::GroupExtension(self.ps)
        }
    }

    /// True when the frame is deliverable to address `sa` (specific match or
    /// any broadcast form).
    pub fn addressed_to(&self, sa: u8) -> bool {
        match self.destination() {
            Destination::Specific(da) => da == sa,
            Destination::Global | Destination::GroupExtension(_) => true,
        }
    }
}

/// Encode a decomposed identifier into its 29-bit integer form.
pub fn encode_id(f: FrameId) -> Result<u32, FrameError> {
    fn check(field: &'static str, value: u32, max: u32) -> Result<(), FrameError> {
        if value > max {
            Err(FrameError::FieldRange { field, value, max })
        } else {
            Ok(())
        }
    }
    check("priority", f.priority as u32, 7)?;
    check("edp", f.edp as u32, 1)?;
    check("dp", f.dp as u32, 1)?;
    Ok(((f.priority as u32) << 26)
        | ((f.edp as u32) << 25)
        | ((f.dp as u32) << 24)
        | ((f.pf as u32) << 16)
        | ((f.ps as u32) << 8)
        | f.sa as u32)
}

/// Decode a 29-bit integer identifier into its fields.
pub fn decode_id(raw: u32) -> Result<FrameId, FrameError> {
    if raw >= 1 << 29 {
        return Err(FrameError::IdRange(raw));
    }
    Ok(FrameId {
        priority: ((raw >> 26) & 0x7) as u8,
        edp: ((raw >> 25) & 0x1) as u8,
        dp: ((raw >> 24) & 0x1) as u8,
        pf: ((raw >> 16) & 0xFF) as u8,
        ps: ((raw >> 8) & 0xFF) as u8,
        sa: (raw & 0xFF) as u8,
    })
}

/// PGN of an identifier (PS masked out for PDU1).
pub fn pgn_of(f: FrameId) -> Pgn {
    f.pgn()
}

/// Destination of an identifier.
pub fn destination_of(f: FrameId) -> Destination {
    f.destination()
}

/// A CAN frame at J1939 granularity: identifier plus up to 8 data bytes.
///
/// Bit-level framing (stuffing, CRC, error frames) is out of scope; the
/// simulator reasons about whole frames.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CanFrame {
    pub id: FrameId,
    pub data: Vec<u8>,
    /// Simulation time of the frame, microseconds.
    pub timestamp_us: u64,
}

impl CanFrame {
    pub fn new(id: FrameId, data: Vec<u8>) -> Result<Self, FrameError> {
        if data.len() > 8 {
            return Err(FrameError::DataLength(data.len()));
        }
        Ok(Self {
            id,
            data,
            timestamp_us: 0,
        })
    }

    pub fn dlc(&self) -> usize {
        self.data.len()
    }

    pub fn pgn(&self) -> Pgn {
        self.id.pgn()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent layout oracle: builds the identifier by binary string
    /// concatenation instead of shifts.
    fn id_oracle(priority: u8, edp: u8, dp: u8, pf: u8, ps: u8, sa: u8) -> u32 {
        let bits = format!(
            "{:03b}{:01b}{:01b}{:08b}{:08b}{:08b}",
            priority, edp, dp, pf, ps, sa
        );
        assert_eq!(bits.len(), 29);
        u32::from_str_radix(&bits, 2).unwrap()
    }

    #[test]
    fn encode_matches_bit_oracle() {
        assert_eq!(id_oracle(7, 0, 0, 0xEB, 0xF9, 0x00), 0x1CEBF900);
        assert_eq!(
            encode_id(FrameId::new(7, 0, 0, 0xEB, 0xF9, 0x00)).unwrap(),
            0x1CEBF900
        );
        assert_eq!(encode_id(FrameId::new(0, 0, 0, 0, 0, 0)).unwrap(), 0x0);
        assert_eq!(
            encode_id(FrameId::new(7, 1, 1, 255, 255, 255)).unwrap(),
            0x1FFFFFFF
        );
    }

    #[test]
    fn encode_rejects_out_of_range_fields() {
        assert!(matches!(
            encode_id(FrameId::new(8, 0, 0, 0, 0, 0)),
            Err(FrameError::FieldRange { field: "priority", .. })
        ));
        assert!(encode_id(FrameId::new(0, 2, 0, 0, 0, 0)).is_err());
        assert!(encode_id(FrameId::new(0, 0, 3, 0, 0, 0)).is_err());
    }

    #[test]
    fn decode_known_ids() {
        assert_eq!(
            decode_id(0x1CEBF900).unwrap(),
            FrameId::new(7, 0, 0, 0xEB, 0xF9, 0x00)
        );
        assert_eq!(decode_id(0x0).unwrap(), FrameId::new(0, 0, 0, 0, 0, 0));
        // A Request addressed to node 249.
        let req = decode_id(0x18EAF900).unwrap();
        assert_eq!(req, FrameId::new(6, 0, 0, 0xEA, 0xF9, 0x00));
        assert_eq!(req.pgn(), Pgn(59904));
        assert_eq!(req.destination(), Destination::Specific(249));
    }

    #[test]
    fn decode_rejects_wide_ids() {
        assert_eq!(decode_id(1 << 29), Err(FrameError::IdRange(1 << 29)));
        assert!(decode_id(0x1FFFFFFF).is_ok());
    }

    #[test]
    fn pgn_rules() {
        // PDU1: PS excluded.
        assert_eq!(FrameId::new(6, 0, 0, 0xEA, 0xF9, 0).pgn(), Pgn(59904));
        // PDU2: PS included.
        assert_eq!(FrameId::new(6, 0, 0, 0xFE, 0xEF, 0).pgn(), Pgn(65263));
        assert_eq!(FrameId::new(7, 0, 0, 0xEB, 0x00, 0).pgn(), Pgn(60160));
    }

    #[test]
    fn destination_rules() {
        assert_eq!(
            FrameId::new(7, 0, 0, 0xEC, 0xF9, 0).destination(),
            Destination::Specific(249)
        );
        assert_eq!(
            FrameId::new(7, 0, 0, 0xEC, 0xFF, 0).destination(),
            Destination::Global
        );
        assert_eq!(
            FrameId::new(6, 0, 0, 0xFE, 0xEF, 0).destination(),
            Destination::GroupExtension(0xEF)
        );
    }

    #[test]
    fn round_trip_10k_random_tuples() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(0x1939);
        for _ in 0..10_000 {
            let f = FrameId::new(
                rng.gen_range(0..=7),
                rng.gen_range(0..=1),
                rng.gen_range(0..=1),
                rng.gen(),
                rng.gen(),
                rng.gen(),
            );
            let raw = encode_id(f).unwrap();
            assert!(raw < (1 << 29));
            assert_eq!(decode_id(raw).unwrap(), f);
            // Cross-check against the independent oracle.
            assert_eq!(raw, id_oracle(f.priority, f.edp, f.dp, f.pf, f.ps, f.sa));
        }
    }

    #[test]
    fn pdu1_pgn_low_byte_is_zero() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(0x1940);
        for _ in 0..10_000 {
            let f = FrameId::new(
                rng.gen_range(0..=7),
                rng.gen_range(0..=1),
                rng.gen_range(0..=1),
                rng.gen(),
                rng.gen(),
                rng.gen(),
            );
            if f.pf < 240 {
                assert_eq!(f.pgn().0 % 256, 0);
            } else {
                assert!(!matches!(
                    f.destination(),
                    Destination::Specific(_) | Destination::Global
                ));
            }
        }
    }

    #[test]
    fn for_pgn_round_trips_with_pgn_of() {
        let id = FrameId::for_pgn(6, Pgn(59904), 249, 0x17);
        assert_eq!(id.pgn(), Pgn(59904));
        assert_eq!(id.destination(), Destination::Specific(249));
        let bcast = FrameId::for_pgn(6, Pgn(65263), 0, 0x00);
        assert_eq!(bcast.pgn(), Pgn(65263));
        assert_eq!(bcast.ps, 0xEF);
    }

    #[test]
    fn frame_rejects_long_data() {
        let id = FrameId::new(6, 0, 0, 0xFE, 0xEF, 0);
        assert!(CanFrame::new(id, vec![0; 9]).is_err());
        assert_eq!(CanFrame::new(id, vec![0; 8]).unwrap().dlc(), 8);
    }
}
