//! Closed-form escape-rate and gap predictions.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::hyperparams::Hyperparams;
use crate::morse::MorsePairing;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    UnderdampedHp,
    OverdampedLr,
    NagSc,
    NagC,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::UnderdampedHp => "underdamped_hp",
            Regime::OverdampedLr => "overdamped_lr",
            Regime::NagSc => "nag_sc",
            Regime::NagC => "nag_c",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RatePrediction {
    pub lambda: f64,
    pub prefactor: f64,
    /// `2 H / beta` (or `2 H / s` in the overdamped regime).
    pub exponent_arg: f64,
    pub regime: Regime,
    /// Signed negative eigenvalue of the friction block matrix.
    pub eta_d: Option<f64>,
    pub gamma_prefactor: f64,
    /// `A beta`, filled by [`RatePrediction::with_final_gap`].
    pub final_gap_bound: Option<f64>,
}

impl RatePrediction {
    pub fn with_final_gap(mut self, a: f64, hp: &Hyperparams) -> Self {
        self.final_gap_bound = Some(a * hp.beta);
        self
    }
}

/// Unique negative eigenvalue of `[[0, I], [-H, gamma I]]`.
pub fn eta_d(hess_saddle: &DMatrix<f64>, gamma_friction: f64) -> Result<f64> {
    if !(gamma_friction > 0.0) {
        return Err(Error::Domain(format!("friction must be positive, got {gamma_friction}")));
    }
    let d = hess_saddle.nrows();
    let mut block = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        block[(i, d + i)] = 1.0;
        block[(d + i, d + i)] = gamma_friction;
        for j in 0..d {
            block[(d + i, j)] = -hess_saddle[(i, j)];
        }
    }
    let eigs = block.complex_eigenvalues();
    let negative: Vec<_> = eigs.iter().filter(|z| z.re < 0.0).collect();
    if negative.len() != 1 {
        return Err(Error::Classification(format!(
            "expected one eigenvalue with negative real part, found {}; not an index-1 saddle",
            negative.len()
        )));
    }
    let z = negative[0];
    if z.im.abs() > 1e-10 * z.re.abs().max(1.0) {
        return Err(Error::Classification(format!("negative eigenvalue {z} is not real")));
    }
    Ok(z.re)
}

/// `(1/pi) sqrt(det H_min / -det H_saddle)`.
pub fn gamma_prefactor(hess_min: &DMatrix<f64>, hess_saddle: &DMatrix<f64>) -> Result<f64> {
    let dm = hess_min.determinant();
    let ds = hess_saddle.determinant();
    if !(dm > 0.0) || !(ds < 0.0) {
        return Err(Error::Classification(format!("need det(min) > 0 and det(saddle) < 0, got {dm} and {ds}")));
    }
    Ok((dm / -ds).sqrt() / PI)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LadderEntry {
    pub ell: usize,
    pub barrier: f64,
    pub prediction: RatePrediction,
    /// Predicted eigenvalue of the Kramers operator.
    pub zeta: f64,
    /// `beta zeta`, the eigenvalue of the rescaled operator.
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateReport {
    pub leading: RatePrediction,
    pub ladder: Vec<LadderEntry>,
}

/// Predicted decay constant for every finite pair, with `o(s)` corrections dropped.
///
/// Underdamped: `|eta_d| gamma_l exp(-2 H_l / beta)`. Overdamped: `v gamma_l exp(-2 H_l / s)`
/// with `v` the magnitude of the saddle's negative Hessian eigenvalue.
pub fn kramers_rate(pairing: &MorsePairing, hp: &Hyperparams, regime: Regime) -> Result<RateReport> {
    if pairing.pairs.len() < 2 {
        return Err(Error::NoMetastability);
    }
    let mut ladder = Vec::new();
    for (ell, pair) in pairing.pairs.iter().enumerate().skip(1) {
        let saddle = pair.saddle.as_ref().expect("finite pair carries a saddle");
        let gamma = gamma_prefactor(&pair.minimum.hessian, &saddle.hessian)?;
        let prediction = match regime {
            Regime::UnderdampedHp => {
                let eta = eta_d(&saddle.hessian, hp.friction())?;
                predict(eta.abs() * gamma, 2.0 * pair.barrier / hp.beta, regime, Some(eta), gamma)
            }
            Regime::OverdampedLr => predict(saddle.unstable_curvature() * gamma, 2.0 * pair.barrier / hp.s, regime, None, gamma),
            other => return Err(Error::Usage(format!("kramers_rate does not cover regime {}", other.as_str()))),
        };
        let zeta = prediction.lambda;
        ladder.push(LadderEntry { ell, barrier: pair.barrier, prediction, zeta, delta: hp.beta * zeta });
    }
    Ok(RateReport { leading: ladder[0].prediction.clone(), ladder })
}

fn predict(prefactor: f64, exponent_arg: f64, regime: Regime, eta: Option<f64>, gamma: f64) -> RatePrediction {
    RatePrediction {
        lambda: prefactor * (-exponent_arg).exp(),
        prefactor,
        exponent_arg,
        regime,
        eta_d: eta,
        gamma_prefactor: gamma,
        final_gap_bound: None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NagAsymptotics {
    pub eta_abs_nag_sc: f64,
    pub eta_abs_plain: f64,
    pub s: f64,
}

impl NagAsymptotics {
    /// `-(1/k)(1 + 3/(2k)) 6 H_f / s`, the NAG-C exponent at iteration `k`.
    pub fn nag_c_exponent(&self, k: f64, h_f: f64) -> f64 {
        -(1.0 / k) * (1.0 + 1.5 / k) * 6.0 * h_f / self.s
    }
}

/// High-resolution prefactors: NAG-SC keeps `O(sqrt s)` corrections.
pub fn nag_asymptotics(mu: f64, v: f64, s: f64) -> Result<NagAsymptotics> {
    if !(mu > 0.0 && v > 0.0 && s >= 0.0) {
        return Err(Error::Domain(format!("need mu, v > 0 and s >= 0, got ({mu}, {v}, {s})")));
    }
    let sqs = s.sqrt();
    Ok(NagAsymptotics {
        eta_abs_nag_sc: (mu + s * v * v / 4.0 + v).sqrt() - mu.sqrt() - sqs * v / 2.0,
        eta_abs_plain: (mu + v).sqrt() - mu.sqrt(),
        s,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FinalGap {
    /// `A beta`.
    pub gap_bound: f64,
    /// `min{(eps/A)(1 - alpha)/(1 + alpha), S}`.
    pub s_max: f64,
    /// `ln(2 C / eps) / lambda`.
    pub t_min: f64,
}

pub fn final_gap_and_iteration(hp: &Hyperparams, a: f64, epsilon: f64, s_cap: f64, c_norm_product: f64, lambda: f64) -> Result<FinalGap> {
    if !(a > 0.0 && epsilon > 0.0 && s_cap > 0.0 && c_norm_product > 0.0) {
        return Err(Error::Domain("final-gap inputs must be positive".into()));
    }
    if hp.s > s_cap {
        return Err(Error::Domain(format!("learning rate {} exceeds the cap {s_cap}", hp.s)));
    }
    if !(lambda > 0.0) {
        return Err(Error::CannotBound);
    }
    Ok(FinalGap {
        gap_bound: a * hp.beta,
        s_max: ((epsilon / a) * (1.0 - hp.alpha) / (1.0 + hp.alpha)).min(s_cap),
        t_min: (2.0 * c_norm_product / epsilon).ln() / lambda,
    })
}

/// `(100 - beta) exp(-e^{-0.1/beta} t / (2 sqrt mu)) + beta`.
pub fn idealized_risk(t: f64, s: f64, alpha: f64) -> Result<f64> {
    if t < 0.0 {
        return Err(Error::Domain(format!("time must be nonnegative, got {t}")));
    }
    let hp = Hyperparams::derive(s, alpha)?;
    Ok((100.0 - hp.beta) * (-risk_rate(&hp) * t).exp() + hp.beta)
}

fn risk_rate(hp: &Hyperparams) -> f64 {
    (-0.1 / hp.beta).exp() / hp.friction()
}

/// Smallest `k` with transient/(100 - beta) at most `ratio_threshold`, using `t = k s`.
pub fn stabilization_k(s: f64, alpha: f64, ratio_threshold: f64) -> Result<u64> {
    if !(ratio_threshold > 0.0 && ratio_threshold < 1.0) {
        return Err(Error::Domain(format!("threshold must lie in (0, 1), got {ratio_threshold}")));
    }
    let hp = Hyperparams::derive(s, alpha)?;
    let per_step = risk_rate(&hp) * s;
    let target = (1.0 / ratio_threshold).ln();
    let mut k = (target / per_step).ceil().max(0.0) as u64;
    while k > 0 && per_step * (k - 1) as f64 >= target {
        k -= 1;
    }
    while per_step * (k as f64) < target {
        k += 1;
    }
    Ok(k)
}
