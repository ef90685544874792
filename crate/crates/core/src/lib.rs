//! Power-system dynamic simulation and small-signal analysis.

pub mod case_io;
pub mod linalg;
pub mod machine;
pub mod network;
pub mod powerflow;
pub mod res;
pub mod simulate;
pub mod smallsignal;
pub mod svg;
pub mod freqresp;
