//! Discrete optimizers, SDE integrators and ensemble estimators.
//!
//! Every trajectory draws from its own ChaCha stream (`seed`, stream =
//! trajectory index), so ensembles are bit-identical regardless of how rayon
//! schedules the work.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hyperparams::Hyperparams;
use crate::potentials::Potential;
use crate::spectral::{linear_fit, GibbsDistribution};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Sgd,
    Sgdm,
    NagSc,
    NagC,
    SdeUnderdamped,
    SdeOverdamped,
}

impl Scheme {
    pub fn is_discrete(&self) -> bool {
        matches!(self, Scheme::Sgd | Scheme::Sgdm | Scheme::NagSc | Scheme::NagC)
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "sgd" => Scheme::Sgd,
            "sgdm" => Scheme::Sgdm,
            "nag_sc" => Scheme::NagSc,
            "nag_c" => Scheme::NagC,
            "sde_underdamped" => Scheme::SdeUnderdamped,
            "sde_overdamped" => Scheme::SdeOverdamped,
            other => return Err(Error::Usage(format!("unknown scheme '{other}'"))),
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Sgd => "sgd",
            Scheme::Sgdm => "sgdm",
            Scheme::NagSc => "nag_sc",
            Scheme::NagC => "nag_c",
            Scheme::SdeUnderdamped => "sde_underdamped",
            Scheme::SdeOverdamped => "sde_overdamped",
        }
    }
}

/// Physical time carried by one discrete step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Clock {
    /// `t = k s`.
    Linear,
    /// `t = k sqrt(s)`.
    Sqrt,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Init {
    /// Deterministic start. For discrete schemes the previous iterate is
    /// `x0 - h v0` with `h` the step time.
    Point { x0: Vec<f64>, v0: Vec<f64> },
    /// Position `x0`, velocity drawn from `N(0, beta/2)`.
    GibbsVelocity { x0: Vec<f64> },
    /// Position and velocity drawn from the Gibbs density.
    Gibbs,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub potential: Potential,
    pub hp: Hyperparams,
    pub scheme: Scheme,
    pub n_traj: usize,
    pub n_steps: usize,
    /// SDE time step; ignored by discrete schemes.
    pub dt: Option<f64>,
    pub init: Init,
    pub seed: u64,
    /// Multiplier on the standard normal noise (0 switches noise off).
    pub noise: f64,
    pub record_every: usize,
    pub clock: Clock,
}

impl RunConfig {
    pub fn new(potential: Potential, hp: Hyperparams, scheme: Scheme, x0: Vec<f64>) -> Self {
        let d = potential.dim();
        Self {
            potential,
            hp,
            scheme,
            n_traj: 100,
            n_steps: 1000,
            dt: None,
            init: Init::Point { x0, v0: vec![0.0; d] },
            seed: 0,
            noise: 1.0,
            record_every: 1,
            clock: Clock::Linear,
        }
    }

    /// Physical time of one step.
    pub fn step_time(&self) -> Result<f64> {
        if self.scheme.is_discrete() {
            Ok(match self.clock {
                Clock::Linear => self.hp.s,
                Clock::Sqrt => self.hp.s.sqrt(),
            })
        } else {
            self.dt.ok_or_else(|| Error::Usage("SDE schemes need a time step dt".into()))
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_traj == 0 {
            return Err(Error::Usage("n_traj must be at least 1".into()));
        }
        if self.n_steps == 0 || self.record_every == 0 {
            return Err(Error::Usage("n_steps and record_every must be at least 1".into()));
        }
        if let Init::Point { x0, v0 } = &self.init {
            if x0.len() != self.potential.dim() || v0.len() != self.potential.dim() {
                return Err(Error::Usage("initial point dimension does not match the potential".into()));
            }
        }
        if let Init::GibbsVelocity { x0 } = &self.init {
            if x0.len() != self.potential.dim() {
                return Err(Error::Usage("initial point dimension does not match the potential".into()));
            }
        }
        if !self.scheme.is_discrete() {
            let dt = self.step_time()?;
            if !(dt > 0.0) {
                return Err(Error::Usage("dt must be positive".into()));
            }
            let n = if self.potential.dim() == 1 { 401 } else { 61 };
            let lmax = self.potential.max_hessian_eigenvalue(n);
            if lmax > 0.0 && dt > 0.1 / lmax.sqrt() {
                return Err(Error::Usage(format!("dt = {dt} exceeds the stability cap 0.1/sqrt({lmax:.4})")));
            }
        }
        Ok(())
    }
}

/// Recorded ensemble: `f_values[r * n_traj + i]` is `f` of trajectory `i` at `times[r]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub times: Vec<f64>,
    pub n_traj: usize,
    pub f_values: Vec<f64>,
    pub final_x: Vec<Vec<f64>>,
    pub final_v: Vec<Vec<f64>>,
}

impl Ensemble {
    pub fn at(&self, r: usize) -> &[f64] {
        &self.f_values[r * self.n_traj..(r + 1) * self.n_traj]
    }

    /// Ensemble mean and variance of `f` at every record time.
    pub fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        (0..self.times.len())
            .map(|r| {
                let s = self.at(r);
                let n = s.len() as f64;
                let m = s.iter().sum::<f64>() / n;
                let v = if s.len() > 1 { s.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
                (m, v)
            })
            .unzip()
    }
}

struct TrajOut {
    f: Vec<f64>,
    x: Vec<f64>,
    v: Vec<f64>,
}

/// Draw `(x, v)` from `exp(-(2 f + |v|^2) / beta)` by rejection on the box.
pub fn sample_gibbs_point(p: &Potential, beta: f64, fmin: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let d = p.dim();
    let x = loop {
        let x: Vec<f64> = (0..d).map(|k| p.lower()[k] + (p.upper()[k] - p.lower()[k]) * rng.gen::<f64>()).collect();
        if rng.gen::<f64>() < (-2.0 * (p.value(&x) - fmin) / beta).exp() {
            break x;
        }
    };
    let sv = (0.5 * beta).sqrt();
    let v = (0..d).map(|_| sv * rng.sample::<f64, _>(StandardNormal)).collect();
    (x, v)
}

/// `n` independent Gibbs samples (positions, velocities).
pub fn sample_gibbs(p: &Potential, beta: f64, n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let fmin = p.range_on_box(if p.dim() == 1 { 4001 } else { 201 }).0;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            sample_gibbs_point(p, beta, fmin, &mut rng)
        })
        .unzip()
}

fn initial_state(cfg: &RunConfig, rng: &mut ChaCha8Rng, fmin: f64) -> (Vec<f64>, Vec<f64>) {
    match &cfg.init {
        Init::Point { x0, v0 } => (x0.clone(), v0.clone()),
        Init::GibbsVelocity { x0 } => {
            let sv = (0.5 * cfg.hp.beta).sqrt();
            (x0.clone(), x0.iter().map(|_| sv * rng.sample::<f64, _>(StandardNormal)).collect())
        }
        Init::Gibbs => sample_gibbs_point(&cfg.potential, cfg.hp.beta, fmin, rng),
    }
}

/// Stepper shared by ensemble runs and first-passage runs.
struct Stepper<'a> {
    cfg: &'a RunConfig,
    h: f64,
    x: Vec<f64>,
    aux: Vec<f64>,
    g: Vec<f64>,
    k: usize,
}

impl<'a> Stepper<'a> {
    fn new(cfg: &'a RunConfig, x: Vec<f64>, v: Vec<f64>, h: f64) -> Self {
        let aux = if cfg.scheme.is_discrete() { x.iter().zip(&v).map(|(a, b)| a - h * b).collect() } else { v };
        let d = x.len();
        Self { cfg, h, x, aux, g: vec![0.0; d], k: 0 }
    }

    fn velocity(&self) -> Vec<f64> {
        if self.cfg.scheme.is_discrete() {
            self.x.iter().zip(&self.aux).map(|(a, b)| (a - b) / self.h).collect()
        } else {
            self.aux.clone()
        }
    }

    fn step(&mut self, rng: &mut ChaCha8Rng) -> bool {
        let cfg = self.cfg;
        let (s, alpha) = (cfg.hp.s, cfg.hp.alpha);
        let nz = cfg.noise;
        cfg.potential.grad_into(&self.x, &mut self.g);
        let d = self.x.len();
        match cfg.scheme {
            Scheme::Sgd => {
                for i in 0..d {
                    let xi: f64 = rng.sample(StandardNormal);
                    self.aux[i] = self.x[i];
                    self.x[i] = self.x[i] - s * self.g[i] + s * nz * xi;
                }
            }
            Scheme::Sgdm => {
                for i in 0..d {
                    let xi: f64 = rng.sample(StandardNormal);
                    let xn = self.x[i] - s * self.g[i] + s * nz * xi + alpha * (self.x[i] - self.aux[i]);
                    self.aux[i] = self.x[i];
                    self.x[i] = xn;
                }
            }
            Scheme::NagSc | Scheme::NagC => {
                let a = if cfg.scheme == Scheme::NagSc { alpha } else { self.k as f64 / (self.k as f64 + 3.0) };
                for i in 0..d {
                    let xi: f64 = rng.sample(StandardNormal);
                    let y_new = self.x[i] - s * self.g[i] + s * nz * xi;
                    let y_old = self.aux[i];
                    self.aux[i] = y_new;
                    self.x[i] = y_new + a * (y_new - y_old);
                }
            }
            Scheme::SdeUnderdamped => {
                let dt = self.h;
                let gamma = cfg.hp.friction();
                let amp = cfg.hp.noise() * dt.sqrt() * nz;
                for i in 0..d {
                    let xi: f64 = rng.sample(StandardNormal);
                    let v = self.aux[i];
                    self.x[i] += v * dt;
                    self.aux[i] = v - (gamma * v + self.g[i]) * dt + amp * xi;
                }
            }
            Scheme::SdeOverdamped => {
                let dt = self.h;
                let amp = (cfg.hp.beta * dt).sqrt() * nz;
                for i in 0..d {
                    let xi: f64 = rng.sample(StandardNormal);
                    self.x[i] += -self.g[i] * dt + amp * xi;
                }
            }
        }
        self.k += 1;
        self.x.iter().all(|v| v.is_finite() && v.abs() < 1e8)
    }
}

fn trajectory_rng(seed: u64, traj: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(traj as u64);
    rng
}

fn fmin_for_init(cfg: &RunConfig) -> f64 {
    if cfg.init == Init::Gibbs {
        cfg.potential.range_on_box(if cfg.potential.dim() == 1 { 4001 } else { 201 }).0
    } else {
        0.0
    }
}

/// Run a discrete optimizer or an SDE integrator over an ensemble.
pub fn run(cfg: &RunConfig) -> Result<Ensemble> {
    cfg.validate()?;
    let h = cfg.step_time()?;
    let fmin = fmin_for_init(cfg);
    let n_rec = cfg.n_steps / cfg.record_every + 1;
    let outs: Vec<Result<TrajOut>> = (0..cfg.n_traj)
        .into_par_iter()
        .map(|traj| {
            let mut rng = trajectory_rng(cfg.seed, traj);
            let (x, v) = initial_state(cfg, &mut rng, fmin);
            let mut st = Stepper::new(cfg, x, v, h);
            let mut f = Vec::with_capacity(n_rec);
            f.push(cfg.potential.value(&st.x));
            for k in 1..=cfg.n_steps {
                if !st.step(&mut rng) {
                    return Err(Error::Divergence { trajectory: traj, step: k });
                }
                if k % cfg.record_every == 0 {
                    f.push(cfg.potential.value(&st.x));
                }
            }
            let v = st.velocity();
            Ok(TrajOut { f, x: st.x, v })
        })
        .collect();
    let mut f_values = vec![0.0; n_rec * cfg.n_traj];
    let mut final_x = Vec::with_capacity(cfg.n_traj);
    let mut final_v = Vec::with_capacity(cfg.n_traj);
    for (i, o) in outs.into_iter().enumerate() {
        let o = o?;
        for (r, fv) in o.f.iter().enumerate() {
            f_values[r * cfg.n_traj + i] = *fv;
        }
        final_x.push(o.x);
        final_v.push(o.v);
    }
    let times = (0..n_rec).map(|r| (r * cfg.record_every) as f64 * h).collect();
    Ok(Ensemble { times, n_traj: cfg.n_traj, f_values, final_x, final_v })
}

/// Discrete schemes only.
pub fn run_discrete(cfg: &RunConfig) -> Result<Ensemble> {
    if !cfg.scheme.is_discrete() {
        return Err(Error::Usage(format!("{} is not a discrete scheme", cfg.scheme.as_str())));
    }
    run(cfg)
}

/// SDE schemes only.
pub fn run_sde(cfg: &RunConfig) -> Result<Ensemble> {
    if cfg.scheme.is_discrete() {
        return Err(Error::Usage(format!("{} is not an SDE scheme", cfg.scheme.as_str())));
    }
    run(cfg)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryStats {
    pub times: Vec<f64>,
    /// `E[f(X_t)] - f_star`.
    pub mean_f: Vec<f64>,
    pub var_f: Vec<f64>,
    /// Monte-Carlo standard error of `mean_f`.
    pub std_err: Vec<f64>,
    /// Tail average of `mean_f` over the final 20% of the grid.
    pub plateau: f64,
    /// 10%, 50%, 90% quantiles of `f - f_star`.
    pub quantiles: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecayFit {
    pub lambda_hat: f64,
    pub gap_hat: f64,
    pub prefactor_hat: f64,
    pub r_squared: f64,
    /// Index range of the fitted window.
    pub window: (usize, usize),
}

/// Excess-risk statistics and an exponential fit of `mean_f - plateau`.
///
/// The fit uses the leading contiguous window where `mean_f - plateau`
/// exceeds twice the Monte-Carlo standard error.
pub fn excess_risk_and_fit(ens: &Ensemble, f_star: f64) -> (TrajectoryStats, Result<DecayFit>) {
    let (mean, var) = ens.moments();
    let n = ens.n_traj as f64;
    let mean_f: Vec<f64> = mean.iter().map(|m| m - f_star).collect();
    let std_err: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
    let nt = mean_f.len();
    let tail = ((nt as f64) * 0.8).floor() as usize;
    let tail = tail.min(nt - 1);
    let plateau = mean_f[tail..].iter().sum::<f64>() / (nt - tail) as f64;
    let quantiles = (0..nt)
        .map(|r| {
            let mut s: Vec<f64> = ens.at(r).iter().map(|f| f - f_star).collect();
            s.sort_by(|a, b| a.total_cmp(b));
            let q = |p: f64| s[((s.len() - 1) as f64 * p).round() as usize];
            [q(0.1), q(0.5), q(0.9)]
        })
        .collect();
    let stats = TrajectoryStats { times: ens.times.clone(), mean_f: mean_f.clone(), var_f: var, std_err: std_err.clone(), plateau, quantiles };

    let above = |r: usize| mean_f[r] - plateau > 2.0 * std_err[r];
    let fit = match (0..nt).find(|&r| above(r)) {
        None => Err(Error::FitUnreliable { window: 0 }),
        Some(start) => {
            let mut end = start;
            while end + 1 < nt && above(end + 1) {
                end += 1;
            }
            let len = end - start + 1;
            if len < 10 {
                Err(Error::FitUnreliable { window: len })
            } else {
                let t = &ens.times[start..=end];
                let y: Vec<f64> = (start..=end).map(|r| (mean_f[r] - plateau).ln()).collect();
                let (slope, intercept, r2) = linear_fit(t, &y);
                Ok(DecayFit { lambda_hat: -slope, gap_hat: plateau.max(0.0), prefactor_hat: intercept.exp(), r_squared: r2, window: (start, end) })
            }
        }
    };
    (stats, fit)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MfptResult {
    pub mean_first_passage: f64,
    pub rate: f64,
    /// Bootstrap 95% interval of the rate.
    pub rate_ci95: (f64, f64),
    pub censored: usize,
    pub total: usize,
    pub radius: f64,
}

/// Mean first passage time from `source` into the ball of radius `radius`
/// (default `0.2 |target - source|`) around `target`.
///
/// The underdamped SDE starts with Gibbs-distributed velocity; other schemes
/// start at rest. Censored trajectories are excluded from the mean and counted.
pub fn mfpt(cfg: &RunConfig, source: &[f64], target: &[f64], radius: Option<f64>) -> Result<MfptResult> {
    let mut cfg = cfg.clone();
    cfg.init = if cfg.scheme == Scheme::SdeUnderdamped {
        Init::GibbsVelocity { x0: source.to_vec() }
    } else {
        Init::Point { x0: source.to_vec(), v0: vec![0.0; source.len()] }
    };
    cfg.validate()?;
    let h = cfg.step_time()?;
    let dist = |x: &[f64]| x.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let r = radius.unwrap_or(0.2 * dist(source));
    let hits: Vec<Result<Option<f64>>> = (0..cfg.n_traj)
        .into_par_iter()
        .map(|traj| {
            let mut rng = trajectory_rng(cfg.seed, traj);
            let (x, v) = initial_state(&cfg, &mut rng, 0.0);
            if dist(&x) <= r {
                return Ok(Some(0.0));
            }
            let mut st = Stepper::new(&cfg, x, v, h);
            for k in 1..=cfg.n_steps {
                if !st.step(&mut rng) {
                    return Err(Error::Divergence { trajectory: traj, step: k });
                }
                if dist(&st.x) <= r {
                    return Ok(Some(k as f64 * h));
                }
            }
            Ok(None)
        })
        .collect();
    let mut times = Vec::new();
    let mut censored = 0;
    for hit in hits {
        match hit? {
            Some(t) => times.push(t),
            None => censored += 1,
        }
    }
    let total = cfg.n_traj;
    if 2 * censored > total {
        return Err(Error::HorizonTooShort { censored, total });
    }
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xb007_57a9);
    let mut boot: Vec<f64> = (0..1000)
        .map(|_| (0..times.len()).map(|_| times[rng.gen_range(0..times.len())]).sum::<f64>() / times.len() as f64)
        .collect();
    boot.sort_by(|a, b| a.total_cmp(b));
    let (lo, hi) = (boot[25], boot[974]);
    let inv = |m: f64| if m > 0.0 { 1.0 / m } else { f64::INFINITY };
    Ok(MfptResult { mean_first_passage: mean, rate: inv(mean), rate_ci95: (inv(hi), inv(lo)), censored, total, radius: r })
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeakErrorLevel {
    pub s: f64,
    pub alpha: f64,
    pub error: f64,
    pub std_err: f64,
    pub sde_dt: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeakErrorReport {
    pub coarse: WeakErrorLevel,
    pub fine: WeakErrorLevel,
    /// `error(s) / error(s/2)`.
    pub ratio: f64,
}

#[derive(Clone, Debug)]
pub struct WeakErrorConfig {
    pub potential: Potential,
    pub hp: Hyperparams,
    pub t_end: f64,
    pub n_traj: usize,
    pub clock: Clock,
    pub x0: Vec<f64>,
    pub seed: u64,
    /// SDE steps per discrete step are chosen so that `dt <= s / dt_divisor`.
    pub dt_divisor: f64,
}

/// `max_k |E f(x_k) - E f(X(t_k))|` between SGDM and the underdamped SDE, at
/// `s` and `s/2`, using independent ensembles.
///
/// With [`Clock::Linear`] the momentum is held fixed when halving `s`; with
/// [`Clock::Sqrt`] the friction parameter `mu` is held fixed.
pub fn weak_error(cfg: &WeakErrorConfig) -> Result<WeakErrorReport> {
    if cfg.dt_divisor < 1.0 {
        return Err(Error::Usage("dt_divisor must be at least 1".into()));
    }
    let level = |hp: Hyperparams, seed: u64| -> Result<WeakErrorLevel> {
        let h = match cfg.clock {
            Clock::Linear => hp.s,
            Clock::Sqrt => hp.s.sqrt(),
        };
        let k = (cfg.t_end / h + 1e-9).floor() as usize;
        if k == 0 {
            return Err(Error::Usage("horizon shorter than one step".into()));
        }
        let sub = (cfg.dt_divisor * h / hp.s).ceil() as usize;
        let dt = h / sub as f64;
        let mut d = RunConfig::new(cfg.potential.clone(), hp, Scheme::Sgdm, cfg.x0.clone());
        d.n_traj = cfg.n_traj;
        d.n_steps = k;
        d.clock = cfg.clock;
        d.seed = seed;
        let mut c = d.clone();
        c.scheme = Scheme::SdeUnderdamped;
        c.dt = Some(dt);
        c.n_steps = k * sub;
        c.record_every = sub;
        c.seed = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let ed = run(&d)?;
        let ec = run(&c)?;
        let (md, vd) = ed.moments();
        let (mc, vc) = ec.moments();
        let n = cfg.n_traj as f64;
        let (mut err, mut se) = (0.0, 0.0);
        for r in 0..md.len() {
            let e = (md[r] - mc[r]).abs();
            if e > err {
                err = e;
                se = ((vd[r] + vc[r]) / n).sqrt();
            }
        }
        if se > 0.5 * err {
            return Err(Error::Inconclusive(format!(
                "Monte-Carlo standard error {se:.3e} exceeds half the measured gap {err:.3e}; increase n_traj"
            )));
        }
        Ok(WeakErrorLevel { s: hp.s, alpha: hp.alpha, error: err, std_err: se, sde_dt: dt })
    };
    let half = match cfg.clock {
        Clock::Linear => Hyperparams::derive(0.5 * cfg.hp.s, cfg.hp.alpha)?,
        Clock::Sqrt => Hyperparams::from_mu(0.5 * cfg.hp.s, cfg.hp.mu)?,
    };
    let coarse = level(cfg.hp, cfg.seed)?;
    let fine = level(half, cfg.seed.wrapping_add(1))?;
    Ok(WeakErrorReport { ratio: coarse.error / fine.error, coarse, fine })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistogramSpec {
    pub x_range: (f64, f64),
    pub v_range: (f64, f64),
    pub nx: usize,
    pub nv: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GibbsDistance {
    /// L1 distance including the out-of-range mass as one extra bin.
    pub distance: f64,
    /// Same with halved bin counts.
    pub distance_coarse: f64,
    pub mean_samples_per_bin: f64,
    pub resolution_warning: bool,
}

fn l1_histogram(xs: &[f64], vs: &[f64], g: &GibbsDistribution, spec: &HistogramSpec) -> (f64, f64) {
    let (nx, nv) = (spec.nx, spec.nv);
    let hx = (spec.x_range.1 - spec.x_range.0) / nx as f64;
    let hv = (spec.v_range.1 - spec.v_range.0) / nv as f64;
    let mut counts = vec![0usize; nx * nv];
    let mut outside = 0usize;
    for (&x, &v) in xs.iter().zip(vs) {
        let i = ((x - spec.x_range.0) / hx).floor();
        let j = ((v - spec.v_range.0) / hv).floor();
        if i >= 0.0 && j >= 0.0 && (i as usize) < nx && (j as usize) < nv {
            counts[i as usize * nv + j as usize] += 1;
        } else {
            outside += 1;
        }
    }
    const SUB: usize = 16;
    let n = xs.len() as f64;
    let mut dist = 0.0;
    let mut inside_mass = 0.0;
    for i in 0..nx {
        for j in 0..nv {
            let mut p = 0.0;
            for a in 0..SUB {
                for b in 0..SUB {
                    let x = spec.x_range.0 + (i as f64 + (a as f64 + 0.5) / SUB as f64) * hx;
                    let v = spec.v_range.0 + (j as f64 + (b as f64 + 0.5) / SUB as f64) * hv;
                    p += g.density(x, v);
                }
            }
            p *= hx * hv / (SUB * SUB) as f64;
            inside_mass += p;
            dist += (counts[i * nv + j] as f64 / n - p).abs();
        }
    }
    dist += (outside as f64 / n - (1.0 - inside_mass).max(0.0)).abs();
    let occupied = counts.iter().filter(|&&c| c > 0).count().max(1);
    (dist, (n - outside as f64) / occupied as f64)
}

/// L1 distance between the empirical `(x, v)` histogram and the Gibbs bin masses.
pub fn gibbs_convergence(xs: &[f64], vs: &[f64], gibbs: &GibbsDistribution, spec: &HistogramSpec) -> Result<GibbsDistance> {
    if xs.is_empty() || xs.len() != vs.len() {
        return Err(Error::Usage("need matching, nonempty position and velocity samples".into()));
    }
    if spec.nx == 0 || spec.nv == 0 {
        return Err(Error::Usage("histogram needs at least one bin per axis".into()));
    }
    let (distance, per_bin) = l1_histogram(xs, vs, gibbs, spec);
    let coarse = HistogramSpec { nx: (spec.nx / 2).max(1), nv: (spec.nv / 2).max(1), ..*spec };
    let (distance_coarse, _) = l1_histogram(xs, vs, gibbs, &coarse);
    let resolution_warning = per_bin < 20.0;
    if resolution_warning {
        log::warn!("only {per_bin:.1} samples per occupied bin on average");
    }
    Ok(GibbsDistance { distance, distance_coarse, mean_samples_per_bin: per_bin, resolution_warning })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{gibbs_density, PhaseGrid};

    fn quad_cfg(scheme: Scheme) -> RunConfig {
        let hp = Hyperparams::derive(0.04, 2.0 / 3.0).unwrap();
        RunConfig::new(Potential::quadratic(0.5), hp, scheme, vec![1.0])
    }

    #[test]
    fn deterministic_sgdm_contracts() {
        let hp = Hyperparams::derive(0.1, 0.5).unwrap();
        let mut cfg = RunConfig::new(Potential::quadratic(0.5), hp, Scheme::Sgdm, vec![1.0]);
        cfg.noise = 0.0;
        cfg.n_traj = 1;
        cfg.n_steps = 200;
        let e = run(&cfg).unwrap();
        assert!(e.final_x[0][0].abs() <= 1e-6);
    }

    #[test]
    fn ensembles_are_reproducible() {
        let mut cfg = quad_cfg(Scheme::Sgdm);
        cfg.n_traj = 64;
        cfg.n_steps = 50;
        cfg.seed = 9;
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a, b);
        cfg.seed = 10;
        assert_ne!(run(&cfg).unwrap(), a);
    }

    #[test]
    fn zero_momentum_sgdm_is_sgd() {
        let hp = Hyperparams { s: 0.05, alpha: 0.0, mu: 1.0 / 0.05, beta: 0.025 };
        let mut a = RunConfig::new(Potential::tilted_double_well(0.1), hp, Scheme::Sgdm, vec![0.5]);
        a.n_traj = 16;
        a.n_steps = 100;
        let mut b = a.clone();
        b.scheme = Scheme::Sgd;
        assert_eq!(run(&a).unwrap().f_values, run(&b).unwrap().f_values);
    }

    #[test]
    fn sgd_plateau_matches_ar1_variance() {
        let theta = 0.5;
        let s = 0.1;
        let hp = Hyperparams::derive(s, 0.5).unwrap();
        let mut cfg = RunConfig::new(Potential::quadratic(theta), hp, Scheme::Sgd, vec![0.0]);
        cfg.n_traj = 4000;
        cfg.n_steps = 600;
        cfg.record_every = 10;
        let e = run(&cfg).unwrap();
        let (stats, _) = excess_risk_and_fit(&e, 0.0);
        let a = 1.0 - s * theta;
        let var = s * s / (1.0 - a * a);
        let oracle = 0.5 * theta * var;
        assert!((stats.plateau / oracle - 1.0).abs() < 0.05, "{} vs {oracle}", stats.plateau);
    }

    #[test]
    fn underdamped_noise_off_dissipates() {
        let mut cfg = quad_cfg(Scheme::SdeUnderdamped);
        cfg.noise = 0.0;
        cfg.n_traj = 1;
        cfg.dt = Some(0.01);
        let h = cfg.step_time().unwrap();
        let mut st = Stepper::new(&cfg, vec![1.0], vec![0.0], h);
        let mut rng = trajectory_rng(0, 0);
        let energy = |st: &Stepper| cfg.potential.value(&st.x) + 0.5 * st.aux[0] * st.aux[0];
        let mut e0 = energy(&st);
        for _ in 0..2000 {
            st.step(&mut rng);
            let e1 = energy(&st);
            assert!(e1 <= e0 + 0.01 * 0.01);
            e0 = e1;
        }
        assert!(e0 < 1e-3);
    }

    #[test]
    fn stationary_moments() {
        let mut cfg = quad_cfg(Scheme::SdeUnderdamped);
        cfg.n_traj = 10_000;
        cfg.dt = Some(0.01);
        cfg.n_steps = 5000;
        cfg.record_every = 5000;
        let e = run(&cfg).unwrap();
        let beta = cfg.hp.beta;
        let v2 = e.final_v.iter().map(|v| v[0] * v[0]).sum::<f64>() / 1e4;
        let x2 = e.final_x.iter().map(|x| x[0] * x[0]).sum::<f64>() / 1e4;
        assert!((v2 / (beta / 2.0) - 1.0).abs() < 0.05, "{v2}");
        assert!((x2 / (beta / 1.0) - 1.0).abs() < 0.05, "{x2}");

        let mut o = quad_cfg(Scheme::SdeOverdamped);
        o.n_traj = 10_000;
        o.dt = Some(0.01);
        o.n_steps = 2000;
        o.record_every = 2000;
        let e = run(&o).unwrap();
        let x2 = e.final_x.iter().map(|x| x[0] * x[0]).sum::<f64>() / 1e4;
        assert!((x2 / (beta / 1.0) - 1.0).abs() < 0.05, "{x2}");
    }

    #[test]
    fn zero_noise_gap_vanishes() {
        let mut cfg = quad_cfg(Scheme::SdeUnderdamped);
        cfg.noise = 0.0;
        cfg.n_traj = 2;
        cfg.dt = Some(0.01);
        cfg.n_steps = 20_000;
        cfg.record_every = 100;
        let (_, fit) = excess_risk_and_fit(&run(&cfg).unwrap(), 0.0);
        assert!(fit.unwrap().gap_hat <= 1e-10);
    }

    #[test]
    fn quadratic_excess_risk_decays_at_twice_the_gap() {
        let mut cfg = quad_cfg(Scheme::SdeUnderdamped);
        cfg.n_traj = 20_000;
        cfg.dt = Some(0.01);
        cfg.n_steps = 4000;
        cfg.record_every = 20;
        cfg.init = Init::Point { x0: vec![2.0], v0: vec![0.0] };
        let (_, fit) = excess_risk_and_fit(&run(&cfg).unwrap(), 0.0);
        let fit = fit.unwrap();
        let zeta1 = 1.0 - 0.5f64.sqrt();
        assert!((fit.lambda_hat / (2.0 * zeta1) - 1.0).abs() < 0.2, "{fit:?}");
    }

    #[test]
    fn validation_errors() {
        let mut cfg = quad_cfg(Scheme::Sgdm);
        cfg.n_traj = 0;
        assert!(matches!(run(&cfg), Err(Error::Usage(_))));
        let mut cfg = quad_cfg(Scheme::SdeUnderdamped);
        assert!(run(&cfg).is_err());
        cfg.dt = Some(1.0);
        assert!(matches!(run(&cfg), Err(Error::Usage(_))));
        let hp = Hyperparams::derive(5.0, 0.5).unwrap();
        let mut cfg = RunConfig::new(Potential::quadratic(0.5), hp, Scheme::Sgd, vec![1.0]);
        cfg.noise = 0.0;
        cfg.n_steps = 2000;
        assert!(matches!(run(&cfg), Err(Error::Divergence { .. })));
    }

    #[test]
    fn mfpt_trivial_cases() {
        let mut cfg = quad_cfg(Scheme::SdeUnderdamped);
        cfg.dt = Some(0.01);
        cfg.n_traj = 20;
        let r = mfpt(&cfg, &[0.0], &[0.0], Some(0.1)).unwrap();
        assert_eq!(r.mean_first_passage, 0.0);

        let hp = Hyperparams::derive(0.05, 0.9).unwrap();
        let mut cfg = RunConfig::new(Potential::tilted_double_well(0.1), hp, Scheme::SdeUnderdamped, vec![0.9456]);
        cfg.noise = 0.0;
        cfg.dt = Some(0.01);
        cfg.n_traj = 10;
        cfg.n_steps = 1000;
        let mut c2 = cfg.clone();
        c2.hp.beta = 1e-12;
        assert!(matches!(mfpt(&c2, &[0.9456], &[-1.0466], None), Err(Error::HorizonTooShort { .. })));
    }

    #[test]
    fn gibbs_samples_are_close_to_quadrature() {
        let p = Potential::quadratic(0.5);
        let beta = 0.1;
        let grid = PhaseGrid::auto(&p, beta, 64, 64).unwrap();
        let g = gibbs_density(&p, beta, &grid).unwrap();
        let (xs, vs) = sample_gibbs(&p, beta, 10_000, 3);
        let xs: Vec<f64> = xs.iter().map(|x| x[0]).collect();
        let vs: Vec<f64> = vs.iter().map(|v| v[0]).collect();
        let sx = (beta / 1.0).sqrt();
        let sv = (beta / 2.0).sqrt();
        let spec = HistogramSpec { x_range: (-2.5 * sx, 2.5 * sx), v_range: (-2.5 * sv, 2.5 * sv), nx: 5, nv: 5 };
        let d = gibbs_convergence(&xs, &vs, &g, &spec).unwrap();
        assert!(d.distance <= 0.05, "{d:?}");
    }
}
