//! Segment-memory stack machine with bounds-carrying handles.
//!
//! The crate is organized around a pipeline: programs in a small
//! C-like language compile to a stack IR ([`ir`]), the IR runs on an
//! interpreter whose memory operations produce event traces ([`trace`]),
//! and a family of safety monitors judges those traces against policies of
//! different strength ([`monitors`]).

pub mod corpus;
pub mod interp;
pub mod ir;
pub mod minic;
pub mod monitors;
pub mod robustness;
pub mod trace;
