pub mod harmonics;
pub mod ntk;
pub mod spectral;
pub mod target;
pub mod netgdp;
pub mod select;
pub mod harness;
