//! Pilot frames, constellations and ambiguity certificates.

mod constellation;
mod frames;
mod gf;

pub use constellation::{Constellation, Modulation};
pub use frames::{
    build_etf, build_etf_with, build_mub, check_ambiguity, coherence, cross_block_coherence,
    frame_from_pilots, make_pilots, require_unambiguous, welch_bound, EtfOptions, FrameKind,
    FrameMatrix,
};
