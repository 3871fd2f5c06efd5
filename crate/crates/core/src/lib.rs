//! Structural synthesis of CMOS operational amplifiers from a hierarchical
//! library of functional blocks.
//!
//! Blocks are composed level by level ([`composer`], [`rules`]), each op-amp
//! core receives a generated bias network ([`bias`]), and every topology is
//! sized with first-order equations and gated against a user specification
//! ([`sizing`], [`orchestrator`]).

pub mod bias;
pub mod composer;
pub mod library;
pub mod netlist;
pub mod orchestrator;
pub mod rules;
pub mod sizing;

pub use library::{BlockType, ImplementationStore};
pub use netlist::{BlockInstance, CanonicalDigest, Doping};
