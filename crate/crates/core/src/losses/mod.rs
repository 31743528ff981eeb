//! Training objectives.
//!
//! The separability loss combines an angular-margin softmax on the fused
//! embedding, an inverse-distance spread of the class centers, a penalty on
//! unequal modality representation norms, a direction alignment between
//! multimodal and per-modality centers, and the unimodal versions of the
//! first two terms. The compactness loss is a hyperspherical energy on the
//! (optionally projected) normalized neuron weights of every layer.

mod angular;
mod centers;
mod energy;
mod objective;

pub use angular::{angular_loss, Margins};
pub use centers::{center_alignment_loss, representation_loss, uniform_loss, update_centers, CenterBank, CenterBatch};
pub use energy::{compactness_loss, compactness_terms, hyperspherical_energy, ENERGY_EPS};
pub use objective::{separability_loss, total_loss, LossBreakdown, LossTerm, Objective};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    /// Margins `(m1, m2, m3)` on the multimodal embedding.
    pub margins: Margins,
    /// Margins for the per-modality angular terms.
    pub unimodal_margins: Margins,
    pub lambda_u: f64,
    pub lambda_r: f64,
    pub lambda_c: f64,
    pub lambda_ak: f64,
    pub lambda_uk: f64,
    pub lambda_h: f64,
    pub lambda_h0: f64,
    /// EMA rate pulling centers toward batch class means.
    pub alpha_c: f64,
    /// Verification setups ignore the center-alignment term.
    pub verification: bool,
    /// Energy over `{u} ∪ {-u}` instead of `{u}`.
    pub half_space: bool,
    /// Replace the live feature norm in the angular loss by a constant.
    pub fixed_scale: Option<f64>,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            margins: Margins {
                m1: 1.1,
                m2: 0.4,
                m3: 0.2,
            },
            unimodal_margins: Margins {
                m1: 1.2,
                m2: 0.4,
                m3: 0.2,
            },
            lambda_u: 1.0,
            lambda_r: 0.2,
            lambda_c: 0.2,
            lambda_ak: 0.3,
            lambda_uk: 0.3,
            lambda_h: 2.5,
            lambda_h0: 1.0,
            alpha_c: 0.5,
            verification: true,
            half_space: true,
            fixed_scale: None,
        }
    }
}

impl HyperParams {
    /// Center-alignment weight after the verification override.
    pub fn effective_lambda_c(&self) -> f64 {
        if self.verification {
            0.0
        } else {
            self.lambda_c
        }
    }

    pub fn validate(&self) -> Result<()> {
        for m in [&self.margins, &self.unimodal_margins] {
            if m.m1 < 1.0 {
                return Err(Error::Config(format!("m1 must be >= 1, got {}", m.m1)));
            }
        }
        let lambdas = [
            self.lambda_u,
            self.lambda_r,
            self.lambda_c,
            self.lambda_ak,
            self.lambda_uk,
            self.lambda_h,
            self.lambda_h0,
        ];
        if lambdas.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha_c) {
            return Err(Error::Config("alpha_c must lie in [0, 1]".into()));
        }
        if let Some(s) = self.fixed_scale {
            if !(s > 0.0) {
                return Err(Error::Config("fixed_scale must be positive".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verification_forces_lambda_c_zero() {
        let mut hp = HyperParams::default();
        hp.lambda_c = 0.7;
        hp.verification = true;
        assert_eq!(hp.effective_lambda_c(), 0.0);
        hp.verification = false;
        assert_eq!(hp.effective_lambda_c(), 0.7);
    }

    #[test]
    fn rejects_small_m1_and_negative_weights() {
        let mut hp = HyperParams::default();
        hp.margins.m1 = 0.9;
        assert!(hp.validate().is_err());
        let mut hp = HyperParams::default();
        hp.lambda_r = -0.1;
        assert!(hp.validate().is_err());
        assert!(HyperParams::default().validate().is_ok());
    }
}
