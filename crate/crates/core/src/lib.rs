//! Multitype Galton–Watson trees, labeled mobiles and the random planar maps
//! they encode.

pub mod boltzmann;
pub mod branching;
pub mod harness;
pub mod infinite_map;
pub mod periodicity;
pub mod planar_maps;
pub mod sampler;
pub mod scalar;
pub mod series;
pub mod trees;
