use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelMode {
    /// Chain factors share one eigenbasis; aggregation is order independent.
    Commuting,
    /// Unconstrained chain factors multiplied in neighbor order.
    General,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarMode {
    /// Kernel sandwiched between the embedding and its conjugate.
    Complex,
    /// The conjugate is replaced by the embedding itself.
    Real,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Matrix-product spatial aggregation.
    Spatea,
    /// Pairwise mean-field aggregation, same front end and heads.
    Baseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Complex embedding dimension; node states carry `2 * d` reals.
    pub d: usize,
    pub chi: usize,
    pub sigma: usize,
    pub chi_t: usize,
    pub layers: usize,
    pub kernel_mode: KernelMode,
    pub scalar_mode: ScalarMode,
    pub variant: Variant,
    /// Hidden width of message, hypernet and output MLPs.
    pub hidden: usize,
    pub msg_width: usize,
    /// Hidden width of the baseline's gating network. `None` picks the
    /// width whose parameter count is closest to the matrix-product model.
    pub baseline_hidden: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 16,
            chi: 8,
            sigma: 4,
            chi_t: 8,
            layers: 4,
            kernel_mode: KernelMode::Commuting,
            scalar_mode: ScalarMode::Real,
            variant: Variant::Spatea,
            hidden: 64,
            msg_width: 32,
            baseline_hidden: None,
        }
    }
}

/// Invariant per-node inputs to the feature map: charge, speed and the
/// velocity in the node frame.
pub const NODE_INPUTS: usize = 5;
/// Distance plus the 3×3 node-to-edge orientation.
pub const EDGE_FEATURES: usize = 10;
/// Charge product plus both velocities in the edge frame.
pub const EDGE_SCALARS: usize = 7;

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d", self.d),
            ("chi", self.chi),
            ("sigma", self.sigma),
            ("chi_t", self.chi_t),
            ("layers", self.layers),
            ("hidden", self.hidden),
            ("msg_width", self.msg_width),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("model.{name} must be at least 1")));
            }
        }
        if self.baseline_hidden == Some(0) {
            return Err(Error::Config("model.baseline_hidden must be at least 1".into()));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        2 * self.d
    }

    pub(crate) fn msg_inputs(&self) -> usize {
        EDGE_SCALARS + 2 * self.width() + EDGE_FEATURES
    }

    pub(crate) fn hyper_inputs(&self) -> usize {
        EDGE_FEATURES + self.msg_width
    }

    pub(crate) fn hyper_outputs(&self) -> usize {
        match self.kernel_mode {
            KernelMode::Commuting => 2 * self.sigma * self.chi,
            KernelMode::General => 2 * self.sigma * self.chi * self.chi,
        }
    }

    pub(crate) fn out_inputs(&self) -> usize {
        EDGE_SCALARS + 2 * self.chi_t + EDGE_FEATURES
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_dimension_rejected() {
        let cfg = ModelConfig { chi: 0, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(m)) if m.contains("chi")));
        assert!(ModelConfig::default().validate().is_ok());
    }

    #[test]
    fn toml_roundtrip_with_defaults() {
        let cfg: ModelConfig = toml::from_str("d = 4\nkernel_mode = \"general\"").unwrap();
        assert_eq!(cfg.d, 4);
        assert_eq!(cfg.kernel_mode, KernelMode::General);
        assert_eq!(cfg.chi, 8);
        assert!(toml::from_str::<ModelConfig>("dd = 4").is_err());
    }
}
