//! Subcommand pipelines. Each returns the tables to write plus a short text summary.

use momentum_lab::hyperparams::{beta_multiplier, rate_ratios, Hyperparams};
use momentum_lab::hypocoercivity::{certificate_search, kappa_constants, poincare_estimate, SearchLattice};
use momentum_lab::morse::{analyze, MorseOptions, MorsePairing, SaddleVerdict};
use momentum_lab::potentials::villani_diagnostics;
use momentum_lab::rates::{kramers_rate, stabilization_k};
use momentum_lab::simulate::{excess_risk_and_fit, run, RunConfig};
use momentum_lab::spectral::{kramers_spectrum, EigenOptions, PhaseGrid};
use momentum_lab::Potential;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::output::{num, opt_num, Table};
use crate::CliError;

pub struct Report {
    pub tables: Vec<Table>,
    pub summary: Vec<String>,
}

fn pairing(p: &Potential) -> Result<MorsePairing, CliError> {
    Ok(analyze(p, &MorseOptions::for_dim(p.dim()))?.2)
}

pub fn morse(cfg: &ExperimentConfig, hash: &str) -> Result<Report, CliError> {
    let p = cfg.build_potential()?;
    let (crit, ann, pairing) = analyze(&p, &MorseOptions::for_dim(p.dim()))?;
    let mut cps = Table::new("critical_points", &["id", "location", "value", "index", "grad_norm", "saddle_verdict"]);
    for (k, c) in crit.iter().enumerate() {
        let verdict = ann.iter().find(|a| a.saddle.location == c.location).map_or("", |a| match a.verdict {
            SaddleVerdict::Separating => "separating",
            SaddleVerdict::NotSeparating => "not_separating",
            SaddleVerdict::Inconclusive => "inconclusive",
        });
        let loc = c.location.iter().map(|x| num(*x)).collect::<Vec<_>>().join(";");
        cps.push(hash, vec![k.to_string(), loc, num(c.value), c.index.to_string(), num(c.grad_norm), verdict.into()]);
    }
    let mut pairs = Table::new("pairs", &["ell", "minimum", "saddle", "barrier"]);
    for (l, pr) in pairing.pairs.iter().enumerate() {
        let join = |v: &[f64]| v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(";");
        let saddle = pr.saddle.as_ref().map_or(String::new(), |s| join(&s.location));
        pairs.push(hash, vec![l.to_string(), join(&pr.minimum.location), saddle, num(pr.barrier)]);
    }
    let summary = vec![
        format!("{} critical points, {} minima, {} separating saddles", crit.len(), pairing.minima.len(), pairing.separating_saddles.len()),
        format!("H_f = {}", pairing.h_f.map_or("none".into(), |h| format!("{h:.6}"))),
    ];
    Ok(Report { tables: vec![cps, pairs], summary })
}

pub fn rates(cfg: &ExperimentConfig, hash: &str) -> Result<Report, CliError> {
    let p = cfg.build_potential()?;
    let pairing = pairing(&p)?;
    let regime = cfg.regime()?;
    let rows: Vec<Result<Vec<String>, CliError>> = cfg
        .grid()
        .par_iter()
        .map(|&(s, alpha)| {
            let hp = Hyperparams::derive(s, alpha)?;
            let r = kramers_rate(&pairing, &hp, regime)?.leading;
            Ok(vec![
                num(s),
                num(alpha),
                num(hp.mu),
                num(hp.beta),
                regime.as_str().into(),
                num(r.lambda),
                num(r.prefactor),
                num(r.exponent_arg),
                opt_num(r.eta_d),
                num(r.gamma_prefactor),
                opt_num(pairing.h_f),
            ])
        })
        .collect();
    let mut t = Table::new("rates", &["s", "alpha", "mu", "beta", "regime", "lambda", "prefactor", "exponent_arg", "eta_d", "gamma_prefactor", "h_f"]);
    let mut summary = Vec::new();
    for (row, (s, a)) in rows.into_iter().zip(cfg.grid()) {
        let row = row?;
        summary.push(format!("s = {s}, alpha = {a}: lambda = {}", row[5]));
        t.push(hash, row);
    }
    Ok(Report { tables: vec![t], summary })
}

pub fn simulate(cfg: &ExperimentConfig, hash: &str) -> Result<Report, CliError> {
    let p = cfg.build_potential()?;
    let x0 = cfg.x0.clone().ok_or_else(|| CliError::Validation("simulate needs x0".into()))?;
    if x0.len() != p.dim() {
        return Err(CliError::Validation(format!("x0 has {} entries, potential has dimension {}", x0.len(), p.dim())));
    }
    let f_star = match pairing(&p) {
        Ok(pr) => pr.global_minimum().value,
        Err(_) => p.range_on_box(if p.dim() == 1 { 4001 } else { 201 }).0,
    };
    let clock = cfg.clock()?;
    let mut traj = Table::new("trajectories", &["scheme", "s", "alpha", "time", "mean_excess", "std_err", "q10", "q50", "q90"]);
    let mut fits = Table::new("fits", &["scheme", "s", "alpha", "lambda_hat", "gap_hat", "prefactor_hat", "r_squared", "status"]);
    let mut summary = Vec::new();
    for scheme in cfg.schemes()? {
        for (s, alpha) in cfg.grid() {
            let hp = Hyperparams::derive(s, alpha)?;
            let mut rc = RunConfig::new(p.clone(), hp, scheme, x0.clone());
            rc.n_traj = cfg.n_traj;
            rc.n_steps = cfg.n_steps;
            rc.record_every = cfg.record_every;
            rc.dt = cfg.dt;
            rc.clock = clock;
            rc.seed = cfg.seed;
            let ens = run(&rc)?;
            let (stats, fit) = excess_risk_and_fit(&ens, f_star);
            let id = [scheme.as_str().to_string(), num(s), num(alpha)];
            for r in 0..stats.times.len() {
                let q = stats.quantiles[r];
                let mut row = id.to_vec();
                row.extend([num(stats.times[r]), num(stats.mean_f[r]), num(stats.std_err[r]), num(q[0]), num(q[1]), num(q[2])]);
                traj.push(hash, row);
            }
            let mut row = id.to_vec();
            match fit {
                Ok(f) => {
                    summary.push(format!("{} s = {s}, alpha = {alpha}: lambda_hat = {:.4e}, plateau = {:.4e}", scheme.as_str(), f.lambda_hat, stats.plateau));
                    row.extend([num(f.lambda_hat), num(f.gap_hat), num(f.prefactor_hat), num(f.r_squared), "ok".into()]);
                }
                Err(e) => {
                    summary.push(format!("{} s = {s}, alpha = {alpha}: {e}; plateau = {:.4e}", scheme.as_str(), stats.plateau));
                    row.extend([String::new(), num(stats.plateau.max(0.0)), String::new(), String::new(), "fit_unreliable".into()]);
                }
            }
            fits.push(hash, row);
        }
    }
    Ok(Report { tables: vec![traj, fits], summary })
}

fn eigen_options(cfg: &ExperimentConfig) -> EigenOptions {
    EigenOptions { k: cfg.eigen_k, seed: cfg.seed, ..EigenOptions::default() }
}

pub fn spectral(cfg: &ExperimentConfig, hash: &str) -> Result<Report, CliError> {
    let p = cfg.build_potential()?;
    if p.dim() != 1 {
        return Err(CliError::Validation("spectral runs need a one-dimensional potential".into()));
    }
    let opts = eigen_options(cfg);
    let results: Vec<_> = cfg
        .grid()
        .par_iter()
        .map(|&(s, alpha)| -> Result<_, CliError> {
            let hp = Hyperparams::derive(s, alpha)?;
            let grid = PhaseGrid::auto(&p, hp.beta, cfg.nx, cfg.nv)?;
            Ok((hp, kramers_spectrum(&p, &hp, &grid, &opts)?))
        })
        .collect();
    let mut eig = Table::new("spectrum", &["s", "alpha", "k", "re", "im", "residual"]);
    let mut sum = Table::new("spectral_summary", &["s", "alpha", "mu", "beta", "zeta1", "kernel_residual"]);
    let mut summary = Vec::new();
    for r in results {
        let (hp, ks) = r?;
        for (k, (z, res)) in ks.result.eigenvalues.iter().zip(&ks.result.residuals).enumerate() {
            eig.push(hash, vec![num(hp.s), num(hp.alpha), k.to_string(), num(z.re), num(z.im), num(*res)]);
        }
        sum.push(hash, vec![num(hp.s), num(hp.alpha), num(hp.mu), num(hp.beta), num(ks.zeta1), num(ks.kernel_residual)]);
        summary.push(format!("s = {}, alpha = {}: zeta1 = {:.6}, kernel residual = {:.2e}", hp.s, hp.alpha, ks.zeta1, ks.kernel_residual));
    }
    Ok(Report { tables: vec![eig, sum], summary })
}

pub fn certify(cfg: &ExperimentConfig, hash: &str) -> Result<Report, CliError> {
    let p = cfg.build_potential()?;
    if p.dim() != 1 {
        return Err(CliError::Validation("certify needs a one-dimensional potential".into()));
    }
    let opts = eigen_options(cfg);
    let mut cols = vec![
        "s", "alpha", "a", "b", "c", "M", "M_required", "kappa1", "kappa2", "kappa3", "chi", "C1", "C2", "lambda_lower", "feasible", "K1_psd",
    ];
    let margin_names = ["margin_12", "margin_13", "margin_14", "margin_23", "margin_24", "margin_34", "margin_M_quarter_a", "margin_M_one"];
    cols.extend(margin_names);
    cols.push("zeta1");
    let mut t = Table::new("certificate", &cols);
    let mut summary = Vec::new();
    for (s, alpha) in cfg.grid() {
        let hp = Hyperparams::derive(s, alpha)?;
        let c = match cfg.villani_c {
            Some(c) => c,
            None => villani_diagnostics(&p, s, 400)?.estimated_c,
        };
        let k = kappa_constants(c, p.dim(), hp.beta, s)?;
        let grid = PhaseGrid::auto(&p, hp.beta, cfg.nx, cfg.nv)?;
        let chi = poincare_estimate(&p, hp.beta, &grid)?;
        let cert = certificate_search(k.kappa3, hp.mu, chi, &SearchLattice::default())?;
        let zeta1 = kramers_spectrum(&p, &hp, &grid, &opts).map(|ks| ks.zeta1).ok();
        let mut row = vec![
            num(s),
            num(alpha),
            num(cert.a),
            num(cert.b),
            num(cert.c),
            num(cert.m),
            num(cert.m_required),
            num(k.kappa1),
            num(k.kappa2),
            num(k.kappa3),
            num(chi),
            num(cert.c1),
            num(cert.c2),
            num(cert.lambda_lower),
            cert.feasible.to_string(),
            cert.positivity.k1_psd.to_string(),
        ];
        row.extend(cert.positivity.margins.iter().map(|m| num(*m)));
        row.push(opt_num(zeta1));
        t.push(hash, row);
        summary.push(format!(
            "s = {s}, alpha = {alpha}: (a, b, c) = ({:.4}, {:.4}, {:.5}), M = {:.4}, chi = {chi:.4}, lambda_lower = {:.4e}, feasible = {}",
            cert.a, cert.b, cert.c, cert.m, cert.lambda_lower, cert.feasible
        ));
        for (name, m) in margin_names.iter().zip(cert.positivity.margins) {
            summary.push(format!("  {name} = {m:.4e}"));
        }
        if let Some(z) = zeta1 {
            summary.push(format!("  spectral zeta1 = {z:.6}; lambda_lower <= zeta1: {}", cert.lambda_lower <= z));
        }
    }
    Ok(Report { tables: vec![t], summary })
}

pub fn figure3(hash: &str) -> Result<Report, CliError> {
    let mut t = Table::new("figure3", &["alpha", "beta_multiplier"]);
    let mut summary = Vec::new();
    for alpha in [0.5, 0.9, 0.99] {
        let m = beta_multiplier(alpha)?;
        t.push(hash, vec![num(alpha), num(m)]);
        summary.push(format!("alpha = {alpha}: beta / s = {m}"));
    }
    Ok(Report { tables: vec![t], summary })
}

pub fn section32(hash: &str) -> Result<Report, CliError> {
    let mut t = Table::new("section32", &["method", "s", "alpha", "k_computed", "k_reference", "ratio", "pass"]);
    let mut summary = Vec::new();
    for (s, reference) in [(0.1, 2.5e1), (0.001, 1.5e9)] {
        let k = stabilization_k(s, 0.9, 1e-3)? as f64;
        let ratio = k / reference;
        let pass = (1.0 / 3.0..=3.0).contains(&ratio);
        t.push(hash, vec!["sgdm".into(), num(s), num(0.9), num(k), num(reference), num(ratio), pass.to_string()]);
        summary.push(format!("sgdm s = {s}: k = {k:.4e} (reference {reference:.1e}, {})", if pass { "pass" } else { "fail" }));
    }
    for (s, reference) in [(0.1, 2.5e2), (0.001, 2.5e47)] {
        t.push(hash, vec!["sgd".into(), num(s), String::new(), String::new(), num(reference), String::new(), String::new()]);
        summary.push(format!("sgd s = {s}: reference {reference:.1e} (echoed, not recomputed)"));
    }
    Ok(Report { tables: vec![t], summary })
}

pub fn ratio_demo(hash: &str) -> Result<Report, CliError> {
    let h_f = pairing(&Potential::tilted_double_well(0.1))?.h_f.ok_or(momentum_lab::Error::NoMetastability)?;
    let mut t = Table::new("ratio_demo", &["s", "alpha", "h_f", "sgdm_over_sgd", "robustness_exponent", "sgd_log_ratio", "sgdm_log_ratio"]);
    let mut summary = vec![format!("H_f = {h_f:.6}; log ratios compare s against 2s")];
    for s in [0.1, 0.05, 0.01] {
        for alpha in [1.0 / 3.0, 0.5, 0.9] {
            let r = rate_ratios(s, alpha, h_f, s, 2.0 * s)?;
            t.push(hash, vec![num(s), num(alpha), num(h_f), num(r.sgdm_over_sgd), num(r.robustness_exponent), num(r.sgd_log_ratio), num(r.sgdm_log_ratio)]);
            summary.push(format!("s = {s}, alpha = {alpha:.4}: sgdm/sgd = {:.4e}, robustness exponent = {:.4}", r.sgdm_over_sgd, r.robustness_exponent));
        }
    }
    Ok(Report { tables: vec![t], summary })
}

