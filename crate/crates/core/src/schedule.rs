//! Stepsize policies. A policy maps an iteration index to the pair of base
//! stepsizes `(gamma_1, gamma_2)` before the per-sample multiplier.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::sampling::SchemeConstants;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    Constant,
    /// Horizon-aware schedule: `beta_k = 1` while `K <= 1/rho_tilde` or
    /// `k < ceil(K/2)`, then `2 / (2 + rho_tilde (k - k0))`.
    DecreasingK { total: usize, rho_tilde: f64 },
    /// Comparison-only double stepsize: extrapolation `gamma / (k+1)^(1/3)`,
    /// update `alpha gamma / (k+1)^(2/3)`.
    DoubleDecay,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepsizePolicy {
    pub kind: PolicyKind,
    pub base_gamma: f64,
    pub alpha: f64,
}

fn check_common(gamma: f64, alpha: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(invalid(format!("base stepsize must be positive, got {gamma}")));
    }
    // alpha = 1 is allowed for the equal-stepsize baseline; the rate theory
    // needs alpha <= 1/4.
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    Ok(())
}

impl StepsizePolicy {
    pub fn constant(gamma: f64, alpha: f64) -> Result<Self> {
        check_common(gamma, alpha)?;
        Ok(StepsizePolicy {
            kind: PolicyKind::Constant,
            base_gamma: gamma,
            alpha,
        })
    }

    pub fn decreasing(gamma: f64, alpha: f64, total: usize, rho_tilde: f64) -> Result<Self> {
        check_common(gamma, alpha)?;
        if !(rho_tilde > 0.0 && rho_tilde.is_finite()) {
            return Err(invalid(format!("decreasing schedule needs rho_tilde > 0, got {rho_tilde}")));
        }
        Ok(StepsizePolicy {
            kind: PolicyKind::DecreasingK { total, rho_tilde },
            base_gamma: gamma,
            alpha,
        })
    }

    pub fn double_decay(gamma: f64, alpha: f64) -> Result<Self> {
        check_common(gamma, alpha)?;
        Ok(StepsizePolicy {
            kind: PolicyKind::DoubleDecay,
            base_gamma: gamma,
            alpha,
        })
    }

    /// Multiplier of the base stepsize at iteration `k`.
    pub fn beta(&self, k: usize) -> Result<f64> {
        match self.kind {
            PolicyKind::Constant => Ok(1.0),
            PolicyKind::DecreasingK { total, rho_tilde } => {
                if k > total {
                    return Err(Error::OutOfHorizon { k, total });
                }
                let k0 = total.div_ceil(2);
                if total as f64 <= 1.0 / rho_tilde || k < k0 {
                    Ok(1.0)
                } else {
                    Ok(2.0 / (2.0 + rho_tilde * (k - k0) as f64))
                }
            }
            PolicyKind::DoubleDecay => Ok(((k + 1) as f64).powf(-1.0 / 3.0)),
        }
    }

    /// `(gamma_1, gamma_2)` at iteration `k`, before sample weights.
    pub fn steps(&self, k: usize) -> Result<(f64, f64)> {
        let beta = self.beta(k)?;
        let g1 = beta * self.base_gamma;
        let g2 = match self.kind {
            PolicyKind::DoubleDecay => self.alpha * self.base_gamma * ((k + 1) as f64).powf(-2.0 / 3.0),
            _ => self.alpha * g1,
        };
        Ok((g1, g2))
    }

    /// Whether the rate theory covers this policy (`alpha <= 1/4`, no
    /// comparison schedule).
    pub fn has_theory(&self) -> bool {
        self.alpha <= 0.25 && !matches!(self.kind, PolicyKind::DoubleDecay)
    }
}

/// `(1/8) E[gamma_{1,xi} mu_xi (1{mu >= 0} + 4 1{mu < 0})] = gamma mu_bar / 8`.
pub fn rho_tilde_sseg(consts: &SchemeConstants, base_gamma: f64) -> Result<f64> {
    let r = base_gamma * consts.mu_bar / 8.0;
    if r < 0.0 {
        return Err(invalid(format!("weighted mu aggregate is negative ({})", consts.mu_bar)));
    }
    Ok(r)
}

pub fn rho_tilde_iseg(mu: f64, gamma: f64) -> f64 {
    gamma * mu / 32.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn beta_examples() {
        let c = StepsizePolicy::constant(0.1, 0.25).unwrap();
        assert_eq!(c.beta(0).unwrap(), 1.0);
        assert_eq!(c.beta(123_456).unwrap(), 1.0);

        let d = StepsizePolicy::decreasing(0.1, 0.25, 50, 0.1).unwrap();
        assert_eq!(d.beta(10).unwrap(), 1.0);
        assert_abs_diff_eq!(d.beta(30).unwrap(), 0.8, epsilon = 1e-15);

        let short = StepsizePolicy::decreasing(0.1, 0.25, 5, 0.1).unwrap();
        assert_eq!(short.beta(4).unwrap(), 1.0);
    }

    #[test]
    fn beta_beyond_horizon_errors() {
        let d = StepsizePolicy::decreasing(0.1, 0.25, 50, 0.1).unwrap();
        assert!(d.beta(50).is_ok());
        assert!(matches!(d.beta(51), Err(Error::OutOfHorizon { k: 51, total: 50 })));
    }

    #[test]
    fn constructors_validate() {
        assert!(StepsizePolicy::decreasing(0.1, 0.25, 10, 0.0).is_err());
        assert!(StepsizePolicy::constant(0.0, 0.25).is_err());
        assert!(StepsizePolicy::constant(0.1, 0.0).is_err());
        assert!(StepsizePolicy::constant(0.1, 1.5).is_err());
        assert!(StepsizePolicy::constant(0.1, 1.0).is_ok());
    }

    #[test]
    fn steps_apply_alpha() {
        let c = StepsizePolicy::constant(0.2, 0.25).unwrap();
        assert_eq!(c.steps(3).unwrap(), (0.2, 0.05));
        let h = StepsizePolicy::double_decay(1.0, 0.5).unwrap();
        let (g1, g2) = h.steps(7).unwrap();
        assert_abs_diff_eq!(g1, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g2, 0.5 / 4.0, epsilon = 1e-15);
        assert!(!h.has_theory());
    }

    #[test]
    fn rho_tilde_examples() {
        let consts = |mu_bar| SchemeConstants {
            scheme: "us(b=1)".into(),
            mu_bar,
            mu_bar_stderr: None,
            sigma_star_sq: 0.0,
            l_eff: 1.0,
            cap: 1.0 / 6.0,
            cap_raw: 1.0,
            spectra: crate::sampling::SpectraMode::Exact,
        };
        assert_abs_diff_eq!(rho_tilde_sseg(&consts(0.3), 1.0 / 6.0).unwrap(), 0.00625, epsilon = 1e-15);
        assert_eq!(rho_tilde_sseg(&consts(0.0), 1.0 / 6.0).unwrap(), 0.0);
        assert!(rho_tilde_sseg(&consts(-0.1), 1.0 / 6.0).is_err());

        assert_abs_diff_eq!(rho_tilde_iseg(0.1, 0.32), 0.001, epsilon = 1e-15);
        assert_eq!(rho_tilde_iseg(0.0, 0.32), 0.0);
        let g = 1.0 / (4.0 + 6f64.sqrt());
        assert_abs_diff_eq!(rho_tilde_iseg(1.0, g), g / 32.0, epsilon = 1e-15);
    }
}
