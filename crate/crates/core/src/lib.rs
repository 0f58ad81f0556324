//! Deterministic SAE J1939 network simulator and transport-protocol attack
//! harness.
//!
//! The crate models a small commercial-vehicle network — a virtual CAN bus
//! with priority arbitration, a set of simulated controller nodes, and the
//! J1939 transport protocol they speak — and ships a catalog of fourteen
//! attack scenarios that inject crafted frames against that network and
//! check the observable outcome of each one.

pub mod attack;
pub mod bus;
pub mod candump;
pub mod config;
pub mod ecu;
pub mod frame;
pub mod preset;
pub mod tp;

pub use frame::{decode_id, destination_of, encode_id, pgn_of, CanFrame, Destination, FrameId, Pgn};
pub use tp::{
    bam_send, decode_tpcm, encode_tpcm, encode_tpcm_unchecked, reassemble, AckCode, SessionState,
    TpCm, TpDt, TpSession,
};
