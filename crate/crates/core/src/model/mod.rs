//! Full detector assembly: backbone, correlation enhancement, gated
//! distribution tunnels, PAN-style neck and decoupled heads.

pub mod config;
pub mod fullpad;
pub mod head;
pub mod hyperace;
pub mod network;
pub mod suite;

pub use config::{Destination, HeadConfig, HyperAceConfig, ModelConfig, Tunnel, TunnelConfig, Variant};
pub use fullpad::{gated_fuse, GatedTunnel};
pub use head::{DetectHead, Projection};
pub use hyperace::HyperAce;
pub use network::{build_model, forward_detect, FeaturePyramid, ModuleCost, Network, STRIDES};
pub use suite::{check_suite_block, conditioned_micro_network, gradient_suite, SuiteEntry, SUITE_BLOCKS};
