//! Adaptive hypergraph computation: learned, continuous vertex-to-hyperedge
//! participation and linear-cost two-stage message passing, plus the
//! CSP-style block built around it.

pub mod ahc;
pub mod c3ah;

pub use ahc::{
    ahc, ahc_flops, ahc_forward, ahc_param_count, convolve, generate_hyperedges, hypergraph_convolve, participation,
    Activation, AhcLayer, AhcParams, AhcVars, ParticipationMatrix, VertexSet,
};
pub use c3ah::{C3ah, C3ahConfig};
