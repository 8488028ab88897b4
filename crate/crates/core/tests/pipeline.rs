use momentum_lab::hyperparams::Hyperparams;
use momentum_lab::hypocoercivity::{certificate_search, kappa_constants, norm_sandwich_check, poincare_estimate, SearchLattice};
use momentum_lab::morse::{analyze, MorseOptions};
use momentum_lab::potentials::{catalog, villani_diagnostics, Potential};
use momentum_lab::rates::{kramers_rate, Regime};
use momentum_lab::simulate::{excess_risk_and_fit, run, RunConfig, Scheme};
use momentum_lab::spectral::{kramers_spectrum, EigenOptions, PhaseGrid};
use momentum_lab::Error;

#[test]
fn catalog_pairings_satisfy_count_identity() {
    for p in catalog() {
        match analyze(&p, &MorseOptions::for_dim(p.dim())) {
            Ok((_, _, pairing)) => assert_eq!(pairing.separating_saddles.len() + 1, pairing.minima.len(), "{}", p.name()),
            Err(Error::GenericAssumption(_)) => assert_eq!(p.name(), "double_well_2d"),
            Err(e) => panic!("{}: {e}", p.name()),
        }
    }
}

#[test]
fn tilted_2d_double_well_has_three_critical_points() {
    let p = Potential::double_well_2d(0.1);
    let (crit, _, pairing) = analyze(&p, &MorseOptions::for_dim(2)).unwrap();
    assert_eq!(crit.len(), 3);
    assert_eq!(pairing.minima.len(), 2);
}

#[test]
fn spectral_gap_tracks_closed_form_rate() {
    let p = Potential::tilted_double_well(0.1);
    let (_, _, pairing) = analyze(&p, &MorseOptions::for_dim(1)).unwrap();
    let hp = Hyperparams::derive(0.05, 0.9).unwrap();
    let lambda = kramers_rate(&pairing, &hp, Regime::UnderdampedHp).unwrap().leading.lambda;
    let grid = PhaseGrid::auto(&p, hp.beta, 100, 100).unwrap();
    let zeta1 = kramers_spectrum(&p, &hp, &grid, &EigenOptions::default()).unwrap().zeta1;
    assert!((zeta1 / lambda).ln().abs() < 0.5, "{zeta1} vs {lambda}");
}

#[test]
fn sgdm_escapes_faster_than_sgd() {
    let p = Potential::tilted_double_well(0.1);
    let f_star = p.value(&[-1.0466]);
    let fit = |scheme| {
        let mut cfg = RunConfig::new(p.clone(), Hyperparams::derive(0.02, 0.9).unwrap(), scheme, vec![0.9456]);
        cfg.n_traj = 200;
        cfg.n_steps = 5000;
        cfg.record_every = 25;
        cfg.seed = 1;
        excess_risk_and_fit(&run(&cfg).unwrap(), f_star).1
    };
    let sgdm = fit(Scheme::Sgdm).unwrap();
    assert!(sgdm.lambda_hat > 0.0);
    assert!(fit(Scheme::Sgd).is_err());
}

#[test]
fn certificate_pipeline_on_quadratic() {
    let p = Potential::quadratic(0.5);
    let hp = Hyperparams::derive(0.04, 2.0 / 3.0).unwrap();
    let c = villani_diagnostics(&p, hp.s, 100).unwrap().estimated_c;
    assert!((c - 0.5).abs() < 1e-9);
    let k = kappa_constants(c, 1, hp.beta, hp.s).unwrap();
    let grid = PhaseGrid::auto(&p, hp.beta, 60, 60).unwrap();
    let chi = poincare_estimate(&p, hp.beta, &grid).unwrap();
    assert!((chi / 10.0 - 1.0).abs() < 0.03);
    let cert = certificate_search(k.kappa3, hp.mu, chi, &SearchLattice::default()).unwrap();
    assert!(cert.feasible && cert.lambda_lower > 0.0 && cert.lambda_lower < 1.0 - 0.5f64.sqrt());
}

#[test]
fn norm_sandwich_holds_on_random_grid_functions() {
    let p = Potential::tilted_double_well(0.1);
    let hp = Hyperparams::derive(0.05, 0.9).unwrap();
    let grid = PhaseGrid::auto(&p, hp.beta, 40, 40).unwrap();
    let r = norm_sandwich_check(&p, &hp, &grid, 50, 11).unwrap();
    assert!(r.holds(), "{r:?}");
}

#[test]
fn overdamped_rate_is_much_smaller_at_same_learning_rate() {
    let p = Potential::tilted_double_well(0.1);
    let (_, _, pairing) = analyze(&p, &MorseOptions::for_dim(1)).unwrap();
    let hp = Hyperparams::derive(0.05, 0.9).unwrap();
    let hb = kramers_rate(&pairing, &hp, Regime::UnderdampedHp).unwrap().leading.lambda;
    let lr = kramers_rate(&pairing, &hp, Regime::OverdampedLr).unwrap().leading.lambda;
    assert!((lr - 7.4e-4).abs() < 0.5e-4, "{lr}");
    assert!(hb > 100.0 * lr);
}
