//! Convolutional building blocks: Conv-BN-SiLU, separable convs and the
//! CSP family (bottleneck, C3k, C3k2) in separable or standard form.

pub mod check;
pub mod conv;
pub mod csp;
pub mod params;

pub use check::check_block;
pub use conv::{BatchNorm, Conv, ConvUnit, DsConv};
pub use csp::{Bottleneck, C3k, C3k2, CspBlockConfig};
pub use params::{BnMode, ParamEntry, ParamId, ParamStore, Session};

use crate::error::Result;
use crate::tensor::Var;

/// NCHW extents.
pub type Shape = [usize; 4];

pub trait Block {
    fn forward(&self, s: &mut Session, x: Var) -> Result<Var>;

    /// Output shape and forward FLOPs for an input of the given shape,
    /// computed in closed form under the same conventions as the
    /// execution tally in [`crate::tensor::flops`].
    fn cost(&self, input: Shape) -> Result<(Shape, u64)>;
}
