use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergraph::Activation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    N,
    S,
    L,
    X,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::N, Variant::S, Variant::L, Variant::X];

    /// Default hyperedge count per variant.
    pub fn default_hyperedges(self) -> usize {
        match self {
            Variant::N => 4,
            Variant::S | Variant::L => 8,
            Variant::X => 12,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::N => "n",
            Variant::S => "s",
            Variant::L => "l",
            Variant::X => "x",
        };
        f.write_str(s)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "n" => Ok(Variant::N),
            "s" => Ok(Variant::S),
            "l" => Ok(Variant::L),
            "x" => Ok(Variant::X),
            other => Err(Error::Config(format!("unknown variant `{other}` (expected n, s, l or x)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperAceConfig {
    /// Parallel C3AH branches on the high-order path.
    pub branches: usize,
    /// Stacked DS-C3k modules on the low-order path.
    pub stacked: usize,
    /// Channel split (high, low, shortcut) of the fused feature.
    pub split: [f64; 3],
    pub hyperedges: usize,
    pub heads: usize,
    /// C3AH hidden ratio.
    pub e: f64,
    /// Base width of the fused B3/B4/B5 feature, before width scaling.
    pub fused_channels: usize,
    /// Base width of the enhanced output Y.
    pub out_channels: usize,
    #[serde(default)]
    pub act: Activation,
}

/// The seven gated injection points of the distribution tunnels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Destination {
    /// Backbone stride-8 feature entering the neck.
    NeckP3,
    /// Backbone stride-16 feature entering the neck.
    NeckP4,
    /// Backbone stride-32 feature entering the neck.
    NeckP5,
    /// Top-down stride-16 fusion output, before it feeds the next fusions.
    TopDownP4,
    /// Downsampled stride-8 output, before the bottom-up stride-16 fusion.
    BottomUpP4,
    /// Stride-8 head input.
    HeadP3,
    /// Stride-32 head input.
    HeadP5,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tunnel {
    BackboneNeck,
    InNeck,
    NeckHead,
}

impl Destination {
    pub const ALL: [Destination; 7] = [
        Destination::NeckP3,
        Destination::NeckP4,
        Destination::NeckP5,
        Destination::TopDownP4,
        Destination::BottomUpP4,
        Destination::HeadP3,
        Destination::HeadP5,
    ];

    pub fn index(self) -> usize {
        Destination::ALL.iter().position(|&d| d == self).expect("listed")
    }

    pub fn tunnel(self) -> Tunnel {
        match self {
            Destination::NeckP3 | Destination::NeckP4 | Destination::NeckP5 => Tunnel::BackboneNeck,
            Destination::TopDownP4 | Destination::BottomUpP4 => Tunnel::InNeck,
            Destination::HeadP3 | Destination::HeadP5 => Tunnel::NeckHead,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Destination::NeckP3 => "neck_p3",
            Destination::NeckP4 => "neck_p4",
            Destination::NeckP5 => "neck_p5",
            Destination::TopDownP4 => "top_down_p4",
            Destination::BottomUpP4 => "bottom_up_p4",
            Destination::HeadP3 => "head_p3",
            Destination::HeadP5 => "head_p5",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunnelConfig {
    pub backbone_neck: bool,
    pub in_neck: bool,
    pub neck_head: bool,
    /// Initial gate per destination, in [`Destination::ALL`] order.
    pub gates: [f64; 7],
}

impl Default for TunnelConfig {
    fn default() -> Self {
        TunnelConfig {
            backbone_neck: true,
            in_neck: true,
            neck_head: true,
            gates: [0.0; 7],
        }
    }
}

impl TunnelConfig {
    pub fn disabled() -> Self {
        TunnelConfig {
            backbone_neck: false,
            in_neck: false,
            neck_head: false,
            gates: [0.0; 7],
        }
    }

    pub fn is_enabled(&self, t: Tunnel) -> bool {
        match t {
            Tunnel::BackboneNeck => self.backbone_neck,
            Tunnel::InNeck => self.in_neck,
            Tunnel::NeckHead => self.neck_head,
        }
    }

    pub fn any(&self) -> bool {
        self.backbone_neck || self.in_neck || self.neck_head
    }

    pub fn active(&self) -> impl Iterator<Item = Destination> + '_ {
        Destination::ALL.into_iter().filter(|d| self.is_enabled(d.tunnel()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub reg_bins: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig { reg_bins: 16 }
    }
}

/// Declarative description of a full detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub depth_multiple: f64,
    pub width_multiple: f64,
    pub max_channels: usize,
    pub num_classes: usize,
    /// Separable convolutions in bottlenecks and downsamplers; standard
    /// convolutions otherwise.
    pub use_ds: bool,
    /// Large kernel of the second bottleneck stage.
    pub large_kernel: usize,
    /// Base repeat counts of backbone stages 2–5, before depth scaling.
    pub backbone_repeats: [usize; 4],
    /// Base widths before width scaling: stem, stage-2 downsampler, B2…B5.
    pub backbone_channels: [usize; 6],
    /// Base widths of the neck outputs at strides 8, 16, 32.
    pub neck_channels: [usize; 3],
    /// Hidden ratio of the C3k2 blocks in backbone stages 2–5.
    pub backbone_e: [f64; 4],
    pub hyperace: HyperAceConfig,
    pub tunnels: TunnelConfig,
    pub head: HeadConfig,
}

impl ModelConfig {
    pub fn variant(v: Variant) -> Self {
        let (depth, width, max_channels) = match v {
            Variant::N => (0.5, 0.25, 1024),
            Variant::S => (0.5, 0.5, 1024),
            Variant::L => (1.0, 1.0, 768),
            Variant::X => (1.0, 1.5, 640),
        };
        ModelConfig {
            variant: v,
            depth_multiple: depth,
            width_multiple: width,
            max_channels,
            num_classes: 80,
            use_ds: true,
            large_kernel: 5,
            backbone_repeats: [2, 2, 4, 4],
            backbone_channels: [64, 128, 256, 512, 512, 1024],
            neck_channels: [256, 512, 1024],
            backbone_e: [0.5, 0.5, 0.5, 0.5],
            hyperace: HyperAceConfig {
                branches: 2,
                stacked: 2,
                split: [0.5, 0.25, 0.25],
                hyperedges: v.default_hyperedges(),
                heads: 4,
                e: 1.0,
                fused_channels: 512,
                out_channels: 512,
                act: Activation::Silu,
            },
            tunnels: TunnelConfig::default(),
            head: HeadConfig::default(),
        }
    }

    /// A tiny configuration for gradient checks and fast tests.
    pub fn micro() -> Self {
        let mut c = ModelConfig::variant(Variant::N);
        c.width_multiple = 1.0 / 16.0;
        c.depth_multiple = 0.25;
        c.num_classes = 2;
        c.head.reg_bins = 4;
        c.hyperace.hyperedges = 2;
        c.hyperace.heads = 2;
        c
    }

    /// Scaled channel width, rounded up to a multiple of 8.
    pub fn width(&self, base: usize) -> usize {
        let w = base.min(self.max_channels) as f64 * self.width_multiple;
        (((w / 8.0).ceil() as usize) * 8).max(8)
    }

    /// Scaled repeat count, at least 1.
    pub fn depth(&self, base: usize) -> usize {
        ((base as f64 * self.depth_multiple).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.hyperace;
        if !(self.depth_multiple > 0.0 && self.width_multiple > 0.0) {
            return Err(Error::Config("depth and width multiples must be positive".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("at least one class is required".into()));
        }
        if self.head.reg_bins < 2 {
            return Err(Error::Config("reg_bins must be at least 2".into()));
        }
        if self.large_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("large kernel {} must be odd", self.large_kernel)));
        }
        if h.branches == 0 || h.stacked == 0 {
            return Err(Error::Config("HyperACE needs at least one branch of each kind".into()));
        }
        if h.split.iter().any(|&r| r <= 0.0) || (h.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios {:?} must be positive and sum to 1", h.split)));
        }
        if h.hyperedges == 0 || h.heads == 0 {
            return Err(Error::Config("hyperedge and head counts must be at least 1".into()));
        }
        if self.tunnels.gates.iter().any(|g| !g.is_finite()) {
            return Err(Error::Config("tunnel gates must be finite".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hyperedges_per_variant() {
        let m: Vec<usize> = Variant::ALL.iter().map(|&v| ModelConfig::variant(v).hyperace.hyperedges).collect();
        assert_eq!(m, [4, 8, 8, 12]);
    }

    #[test]
    fn json_round_trip() {
        let c = ModelConfig::variant(Variant::S);
        assert_eq!(ModelConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn bad_split_rejected() {
        let mut c = ModelConfig::variant(Variant::N);
        c.hyperace.split = [0.5, 0.5, 0.25];
        assert!(c.validate().is_err());
    }

    #[test]
    fn seven_destinations_over_three_tunnels() {
        let t = TunnelConfig::default();
        assert_eq!(t.active().count(), 7);
        let per: Vec<usize> = [Tunnel::BackboneNeck, Tunnel::InNeck, Tunnel::NeckHead]
            .iter()
            .map(|&k| Destination::ALL.iter().filter(|d| d.tunnel() == k).count())
            .collect();
        assert_eq!(per, [3, 2, 2]);
    }
}
