//! Reconstruction energies recorded on the tape.
//!
//! Norms are plain sums of squares over every pixel and channel.

use contour_autodiff::{Graph, Real, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyVariant {
    /// Maskless two-term energy weighted by `alpha`.
    Dsp,
    /// Masked reconstruction with the incomplete image as its own mask.
    DipSelfMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyConfig {
    pub alpha: f64,
    pub variant: EnergyVariant,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        EnergyConfig {
            alpha: 0.15,
            variant: EnergyVariant::Dsp,
        }
    }
}

impl EnergyConfig {
    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)
    }

    pub fn evaluate<T: Real>(&self, g: &mut Graph<T>, x: Var, target: Var) -> Result<Var> {
        match self.variant {
            EnergyVariant::Dsp => dsp_energy(g, x, target, self.alpha),
            EnergyVariant::DipSelfMask => dsp_self_mask_baseline(g, x, target),
        }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok(())
}

/// ‖(x − x_I) ⊙ m‖²
pub fn dip_energy<T: Real>(g: &mut Graph<T>, x: Var, target: Var, mask: Var) -> Result<Var> {
    let residual = g.sub(x, target)?;
    let masked = g.mul(residual, mask)?;
    Ok(g.sum_squares(masked))
}

/// α‖(x − x_I) ⊙ x_I‖² + (1 − α)‖(1 − x) ⊙ (1 − x_I) − (1 − x_I) ⊙ (1 − x_I)‖²
///
/// The first term fits the background (x_I ≈ 1), the second the contour
/// pixels (x_I ≈ 0). Evaluated literally rather than in factored form.
pub fn dsp_energy<T: Real>(g: &mut Graph<T>, x: Var, target: Var, alpha: f64) -> Result<Var> {
    check_alpha(alpha)?;
    let fill = dip_energy(g, x, target, target)?;

    let inv_x = g.one_minus(x);
    let inv_target = g.one_minus(target);
    let kept = g.mul(inv_x, inv_target)?;
    let reference = g.mul(inv_target, inv_target)?;
    let diff = g.sub(kept, reference)?;
    let contour = g.sum_squares(diff);

    let a = g.scalar_mul(fill, T::from_f64_lossy(alpha));
    let b = g.scalar_mul(contour, T::from_f64_lossy(1.0 - alpha));
    Ok(g.add(a, b)?)
}

/// Baseline arm: [`dip_energy`] with the incomplete image as the mask.
pub fn dsp_self_mask_baseline<T: Real>(g: &mut Graph<T>, x: Var, target: Var) -> Result<Var> {
    dip_energy(g, x, target, target)
}
