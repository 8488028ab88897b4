//! The `(s, alpha) <-> (mu, beta)` algebra.

use crate::error::{Error, Result};

/// Learning rate, momentum and the derived friction/temperature pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyperparams {
    pub s: f64,
    pub alpha: f64,
    /// `(1 - alpha)^2 / ((1 + alpha)^2 s)`.
    pub mu: f64,
    /// `s (1 + alpha) / (2 (1 - alpha))`.
    pub beta: f64,
}

impl Hyperparams {
    pub fn derive(s: f64, alpha: f64) -> Result<Self> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Domain(format!("learning rate must be positive, got {s}")));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Domain(format!("momentum must lie in (0, 1), got {alpha}")));
        }
        let r = (1.0 - alpha) / (1.0 + alpha);
        Ok(Self { s, alpha, mu: r * r / s, beta: s * beta_multiplier(alpha)? })
    }

    /// Hyperparameters with prescribed `mu` at learning rate `s`.
    pub fn from_mu(s: f64, mu: f64) -> Result<Self> {
        Self::derive(s, alpha_from_mu(mu, s)?)
    }

    /// Friction coefficient `2 sqrt(mu)`.
    pub fn friction(&self) -> f64 {
        2.0 * self.mu.sqrt()
    }

    /// Noise amplitude `s^(1/4)` of the SDE.
    pub fn noise(&self) -> f64 {
        self.s.powf(0.25)
    }
}

/// `alpha = (1 - sqrt(mu s)) / (1 + sqrt(mu s))`.
pub fn alpha_from_mu(mu: f64, s: f64) -> Result<f64> {
    if !(mu > 0.0 && s > 0.0 && mu * s < 1.0) {
        return Err(Error::Domain(format!("need 0 < mu < 1/s, got mu={mu}, s={s}")));
    }
    let r = (mu * s).sqrt();
    Ok((1.0 - r) / (1.0 + r))
}

/// `(1 + alpha) / (2 (1 - alpha))`, so that `beta = multiplier * s`.
pub fn beta_multiplier(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("momentum must lie in (0, 1), got {alpha}")));
    }
    Ok((1.0 + alpha) / (2.0 * (1.0 - alpha)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateRatios {
    /// Asymptotic `lambda_{s,alpha} / lambda_s`.
    pub sgdm_over_sgd: f64,
    /// `2 (1 - alpha) / (1 + alpha)`.
    pub robustness_exponent: f64,
    /// Exponential part of `ln(lambda_{s1} / lambda_{s2})` for SGD.
    pub sgd_log_ratio: f64,
    /// Exponential part of `ln(lambda_{s1,alpha} / lambda_{s2,alpha})` for SGDM.
    pub sgdm_log_ratio: f64,
}

/// Momentum speedup and learning-rate robustness predicted by the exponents.
///
/// The speedup is an `s -> 0` asymptotic evaluated as an exact formula.
pub fn rate_ratios(s: f64, alpha: f64, h_f: f64, s1: f64, s2: f64) -> Result<RateRatios> {
    if !(s > 0.0 && s1 > 0.0 && s2 > 0.0) || h_f < 0.0 {
        return Err(Error::Domain("rate_ratios needs positive s, s1, s2 and nonnegative H_f".into()));
    }
    let m = beta_multiplier(alpha)?;
    let sgdm_over_sgd = 2.0 * m * 2.0 * s.sqrt() * ((2.0 * h_f / s) * (3.0 * alpha - 1.0) / (1.0 + alpha)).exp();
    let robustness_exponent = 1.0 / m;
    let sgd_log_ratio = 2.0 * h_f * (1.0 / s2 - 1.0 / s1);
    Ok(RateRatios { sgdm_over_sgd, robustness_exponent, sgd_log_ratio, sgdm_log_ratio: robustness_exponent * sgd_log_ratio })
}
