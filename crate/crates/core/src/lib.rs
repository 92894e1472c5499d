//! Equivalence determination of Haar-random SU(2) black boxes.

pub mod choi;
pub mod numerics;
pub mod sdp;
pub mod su2rep;
pub mod tasks;
pub mod tester;
