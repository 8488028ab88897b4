//! Constructive hypocoercivity certificate: relative-bound constants, the
//! Poincare constant, the `(a, b, c)` auxiliary inner product and the
//! matrix-positivity conditions that yield an explicit decay constant.

use nalgebra::{DMatrix, Matrix2, Matrix4, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hyperparams::Hyperparams;
use crate::potentials::Potential;
use crate::spectral::{phase_space_poincare, split_operators, PhaseGrid};

/// Relative safety factor applied to `M` so rounding never flips a binding margin.
pub const M_SAFETY: f64 = 1.0 - 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kappas {
    pub kappa1: f64,
    pub kappa2: f64,
    pub kappa3: f64,
}

/// `k1 = max{2(dC beta + d^2 C^2 beta^2), 2 beta^2}`, `k2 = 2 C^2 (1 + k1)`,
/// `k3 = max{2 k2 / sqrt(s), k2}`.
pub fn kappa_constants(c: f64, d: usize, beta: f64, s: f64) -> Result<Kappas> {
    if !(c >= 0.0 && beta > 0.0 && s > 0.0 && d > 0) {
        return Err(Error::Domain("kappa constants need C >= 0, d >= 1, beta > 0, s > 0".into()));
    }
    let d = d as f64;
    let kappa1 = (2.0 * (d * c * beta + d * d * c * c * beta * beta)).max(2.0 * beta * beta);
    let kappa2 = 2.0 * c * c * (1.0 + kappa1);
    let kappa3 = (2.0 * kappa2 / s.sqrt()).max(kappa2);
    Ok(Kappas { kappa1, kappa2, kappa3 })
}

/// Phase-space Poincare constant `chi` of the Gibbs measure.
pub fn poincare_estimate(p: &Potential, beta: f64, grid: &PhaseGrid) -> Result<f64> {
    Ok(phase_space_poincare(p, beta, grid)?.chi)
}

fn gram(a: f64, b: f64, c: f64) -> (f64, f64) {
    let e = SymmetricEigen::new(Matrix2::new(a, b, b, c)).eigenvalues;
    (e.min(), e.max())
}

/// `(C1, C2) = (min{1, lambda_min}, max{1, lambda_max})` of `[[a, b], [b, c]]`.
pub fn norm_equivalence(a: f64, b: f64, c: f64) -> Result<(f64, f64)> {
    if !(b * b < a * c) || a <= 0.0 {
        return Err(Error::Admissibility(format!("Gram matrix [[{a}, {b}], [{b}, {c}]] is not positive definite")));
    }
    let (lo, hi) = gram(a, b, c);
    Ok((lo.min(1.0), hi.max(1.0)))
}

/// `M = sqrt(min{1, 1/(4a), c/(32 b^2), ac/(64 b^2), b/(144 a^2), b/(2c)})`.
pub fn m_parameter(a: f64, b: f64, c: f64) -> f64 {
    let terms = [1.0, 1.0 / (4.0 * a), c / (32.0 * b * b), a * c / (64.0 * b * b), b / (144.0 * a * a), b / (2.0 * c)];
    terms.iter().copied().filter(|t| !t.is_nan()).fold(f64::INFINITY, f64::min).sqrt()
}

/// `C1 (1/8) min{1/2, 2b} min{1, chi}`.
pub fn lambda_lower(c1: f64, b: f64, chi: f64) -> f64 {
    let base = 0.125 * (0.5f64).min(2.0 * b);
    c1 * base.min(base * chi)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PositivityReport {
    /// Diagnostic only: the leading matrix with `sqrt(kappa3)` and `sqrt(mu)` entries.
    pub k1_psd: bool,
    pub k1_min_eigenvalue: f64,
    /// Six off-diagonal margins `sqrt(l_ii l_jj)/4 - |l_ij|` (pairs 12, 13, 14,
    /// 23, 24, 34), then `1/(4a) - M` and `1 - M`.
    pub margins: [f64; 8],
    pub min_eigenvalue: f64,
    pub l: Matrix4<f64>,
}

impl PositivityReport {
    pub fn all_margins_hold(&self) -> bool {
        self.margins.iter().all(|m| *m >= 0.0)
    }

    pub fn worst_margin(&self) -> f64 {
        self.margins.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn k1_matrix(a: f64, b: f64, c: f64, kappa3: f64, mu: f64) -> Matrix4<f64> {
    let (k, m) = (kappa3.sqrt(), mu.sqrt());
    let e14 = -0.5 * (a + c * k + 4.0 * b * m);
    Matrix4::new(
        1.0 + 2.0 * a * m - 2.0 * b * k, 0.0, -b * k, e14,
        0.0, a, -2.0 * b, 0.0,
        -b * k, -2.0 * b, c, -0.5 * c * k,
        e14, 0.0, -0.5 * c * k, 2.0 * b,
    )
}

pub fn l_matrix(a: f64, b: f64, c: f64, m: f64) -> Matrix4<f64> {
    Matrix4::new(
        0.5, 0.0, -m * b, -3.0 * m * a,
        0.0, a, -2.0 * m * b, 0.0,
        -m * b, -2.0 * m * b, c, -0.5 * m * c,
        -3.0 * m * a, 0.0, -0.5 * m * c, 2.0 * b,
    )
}

pub fn matrix_positivity_check(a: f64, b: f64, c: f64, m: f64, kappa3: f64, mu: f64) -> PositivityReport {
    let k1 = k1_matrix(a, b, c, kappa3, mu);
    let k1_min = SymmetricEigen::new(k1).eigenvalues.min();
    let l = l_matrix(a, b, c, m);
    let pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
    let mut margins = [0.0; 8];
    for (k, &(i, j)) in pairs.iter().enumerate() {
        margins[k] = (l[(i, i)] * l[(j, j)]).max(0.0).sqrt() / 4.0 - l[(i, j)].abs();
    }
    margins[6] = if a > 0.0 { 1.0 / (4.0 * a) - m } else { f64::INFINITY };
    margins[7] = 1.0 - m;
    PositivityReport {
        k1_psd: k1_min >= 0.0,
        k1_min_eigenvalue: k1_min,
        margins,
        min_eigenvalue: SymmetricEigen::new(l).eigenvalues.min(),
        l,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Certificate {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub m: f64,
    /// `max{1, sqrt(mu), sqrt(kappa3)}`, reported beside the `M` actually used.
    pub m_required: f64,
    pub kappa3: f64,
    pub mu: f64,
    pub chi: f64,
    pub c1: f64,
    pub c2: f64,
    pub lambda_lower: f64,
    pub positivity: PositivityReport,
    /// False when no lattice candidate passed; the fields then describe the
    /// candidate with the best worst-margin.
    pub feasible: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchLattice {
    pub ab_range: (f64, f64),
    pub c_range: (f64, f64),
    pub n: usize,
}

impl Default for SearchLattice {
    fn default() -> Self {
        Self { ab_range: (1e-3, 1.0), c_range: (1e-4, 0.5), n: 20 }
    }
}

fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    (0..n).map(|k| (lo.ln() + (hi.ln() - lo.ln()) * k as f64 / (n - 1) as f64).exp()).collect()
}

/// Admissible weights: `1 >= a >= b >= 2c > 0` and `b^2 < ac`.
pub fn admissible(a: f64, b: f64, c: f64) -> bool {
    c > 0.0 && 1.0 >= a && a >= b && b >= 2.0 * c && b * b < a * c
}

/// Certificate for fixed weights.
pub fn certificate_for(a: f64, b: f64, c: f64, kappa3: f64, mu: f64, chi: f64) -> Result<Certificate> {
    if !admissible(a, b, c) {
        return Err(Error::Admissibility(format!("weights ({a}, {b}, {c}) violate 1 >= a >= b >= 2c and b^2 < ac")));
    }
    let (c1, c2) = norm_equivalence(a, b, c)?;
    let m = m_parameter(a, b, c) * M_SAFETY;
    let positivity = matrix_positivity_check(a, b, c, m, kappa3, mu);
    Ok(Certificate {
        a,
        b,
        c,
        m,
        m_required: 1f64.max(mu.sqrt()).max(kappa3.sqrt()),
        kappa3,
        mu,
        chi,
        c1,
        c2,
        lambda_lower: lambda_lower(c1, b, chi),
        feasible: positivity.all_margins_hold(),
        positivity,
    })
}

/// Lattice search maximizing the certified decay constant. Ties go to the
/// lexicographically smallest `(a, b, c)`.
pub fn certificate_search(kappa3: f64, mu: f64, chi: f64, lattice: &SearchLattice) -> Result<Certificate> {
    if !(kappa3 >= 0.0 && mu > 0.0 && chi >= 0.0) || lattice.n == 0 {
        return Err(Error::Domain("certificate search needs kappa3 >= 0, mu > 0, chi >= 0 and a nonempty lattice".into()));
    }
    let ab = log_space(lattice.ab_range.0, lattice.ab_range.1, lattice.n);
    let cs = log_space(lattice.c_range.0, lattice.c_range.1, lattice.n);
    let mut cands = Vec::new();
    for &a in &ab {
        for &b in &ab {
            for &c in &cs {
                if admissible(a, b, c) {
                    cands.push((a, b, c));
                }
            }
        }
    }
    if cands.is_empty() {
        return Err(Error::Admissibility("no admissible (a, b, c) on the lattice".into()));
    }
    let certs: Vec<Certificate> =
        cands.par_iter().map(|&(a, b, c)| certificate_for(a, b, c, kappa3, mu, chi)).collect::<Result<_>>()?;
    let key = |x: &Certificate| (x.a, x.b, x.c);
    let lex_less = |x: &Certificate, y: &Certificate| key(x).partial_cmp(&key(y)) == Some(std::cmp::Ordering::Less);
    let mut best: Option<&Certificate> = None;
    for cert in certs.iter().filter(|c| c.feasible) {
        best = match best {
            Some(b) if cert.lambda_lower < b.lambda_lower || (cert.lambda_lower == b.lambda_lower && !lex_less(cert, b)) => Some(b),
            _ => Some(cert),
        };
    }
    if let Some(b) = best {
        return Ok(b.clone());
    }
    let mut fallback = &certs[0];
    for cert in &certs[1..] {
        let (w, wf) = (cert.positivity.worst_margin(), fallback.positivity.worst_margin());
        if w > wf || (w == wf && lex_less(cert, fallback)) {
            fallback = cert;
        }
    }
    Ok(fallback.clone())
}

/// Worst observed ratios for `C1 |g|_H1^2 <= ((g, g)) <= C2 |g|_H1^2`, where
/// `((g, g)) = |g|^2 + a|Ag|^2 + 2b(Ag, Cg) + c|Cg|^2` and
/// `|g|_H1^2 = |g|^2 + |Ag|^2 + |Cg|^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct SandwichReport {
    pub samples: usize,
    /// `min ((g,g)) / (C1 |g|_H1^2)`; must be at least 1.
    pub lower_ratio: f64,
    /// `max ((g,g)) / (C2 |g|_H1^2)`; must be at most 1.
    pub upper_ratio: f64,
}

impl SandwichReport {
    pub fn holds(&self) -> bool {
        self.lower_ratio >= 1.0 - 1e-12 && self.upper_ratio <= 1.0 + 1e-12
    }
}

pub fn norm_sandwich_check(p: &Potential, hp: &Hyperparams, grid: &PhaseGrid, samples: usize, seed: u64) -> Result<SandwichReport> {
    if p.dim() != 1 {
        return Err(Error::Usage("norm sandwich uses the one-dimensional phase grid".into()));
    }
    let ops = split_operators(p, hp, grid);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    let (mut lower, mut upper) = (f64::INFINITY, 0.0f64);
    let mut done = 0;
    while done < samples {
        let a = 10f64.powf(rng.gen_range(-3.0..0.0));
        let b = a * rng.gen::<f64>();
        let c = b * b / a * (1.0 + rng.gen::<f64>());
        if !(c > 0.0 && b >= 2.0 * c && b * b < a * c) {
            continue;
        }
        let (c1, c2) = norm_equivalence(a, b, c)?;
        let g: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ag = ops.a.matvec(&g);
        let cg = ops.c.matvec(&g);
        let (gg, aa, cc, ac) = (dot(&g, &g), dot(&ag, &ag), dot(&cg, &cg), dot(&ag, &cg));
        let h1 = gg + aa + cc;
        let new = gg + a * aa + 2.0 * b * ac + c * cc;
        lower = lower.min(new / (c1 * h1));
        upper = upper.max(new / (c2 * h1));
        done += 1;
    }
    Ok(SandwichReport { samples, lower_ratio: lower, upper_ratio: upper })
}

/// Dense eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut e: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    e.sort_by(|a, b| a.total_cmp(b));
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kappa_oracle() {
        let k = kappa_constants(1.0, 1, 0.1, 0.04).unwrap();
        assert!((k.kappa1 - 0.22).abs() < 1e-12);
        assert!((k.kappa2 - 2.44).abs() < 1e-12);
        assert!((k.kappa3 - 24.4).abs() < 1e-10);
        let z = kappa_constants(0.0, 1, 0.1, 0.04).unwrap();
        assert_eq!((z.kappa2, z.kappa3), (0.0, 0.0));
        assert!((z.kappa1 - 0.02).abs() < 1e-15);
        assert!(kappa_constants(1.0, 1, 0.2, 0.04).unwrap().kappa1 >= 2.0 * k.kappa1);
    }

    #[test]
    fn m_and_norm_oracles() {
        assert!((m_parameter(1.0, 0.4, 0.2) - (1.0f64 / 360.0).sqrt()).abs() < 1e-12);
        let (c1, c2) = norm_equivalence(1.0, 0.4, 0.2).unwrap();
        assert!((c1 - 0.034315).abs() < 1e-6);
        assert!((c2 - 1.165685).abs() < 1e-6);
        assert!((lambda_lower(c1, 0.4, 20.0) - 2.14e-3).abs() < 1e-5);
        assert!(matches!(norm_equivalence(1.0, 1.0, 0.5), Err(Error::Admissibility(_))));
        assert!(!admissible(1.0, 1.0, 0.5));
        assert_eq!(lambda_lower(1.0, 0.25, 1.0), lambda_lower(1.0, 0.9, 1.0));
    }

    #[test]
    fn zero_weights_certify_nothing() {
        let r = matrix_positivity_check(0.0, 0.0, 0.0, 0.0, 1.0, 1.0);
        assert!(r.all_margins_hold());
        assert_eq!(lambda_lower(0.0, 0.0, 20.0), 0.0);
    }

    #[test]
    fn doubling_m_breaks_a_margin() {
        let m = m_parameter(1.0, 0.4, 0.2);
        assert!(matrix_positivity_check(1.0, 0.4, 0.2, m * M_SAFETY, 24.4, 1.0).all_margins_hold());
        assert!(!matrix_positivity_check(1.0, 0.4, 0.2, 2.0 * m, 24.4, 1.0).all_margins_hold());
    }

    #[test]
    fn search_returns_verified_certificate() {
        let cert = certificate_search(24.4, 1.0, 20.0, &SearchLattice::default()).unwrap();
        assert!(cert.feasible && cert.lambda_lower > 0.0);
        let again = matrix_positivity_check(cert.a, cert.b, cert.c, cert.m, cert.kappa3, cert.mu);
        assert!(again.all_margins_hold());
        let l = &again.l;
        let dmin = (0..4).map(|i| l[(i, i)]).fold(f64::INFINITY, f64::min);
        let off = (0..4)
            .flat_map(|i| (0..4).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| l[(i, j)].abs() / (l[(i, i)] * l[(j, j)]).sqrt())
            .fold(0.0, f64::max);
        assert!(again.min_eigenvalue >= 0.25 * dmin * (1.0 - 4.0 * off) - 1e-12);
        assert_eq!(certificate_search(24.4, 1.0, 20.0, &SearchLattice::default()).unwrap(), cert);
    }

    proptest! {
        #[test]
        fn lambda_monotone_in_chi(c1 in 0.0..1.0f64, b in 1e-3..1.0f64, chi in 0.0..5.0f64, dchi in 0.0..5.0f64) {
            prop_assert!(lambda_lower(c1, b, chi + dchi) >= lambda_lower(c1, b, chi));
        }

        #[test]
        fn admissible_weights_pass_margins(a in 1e-3..1.0f64, fb in 0.0..1.0f64, fc in 0.0..1.0f64) {
            let b = a * fb.max(1e-3);
            let c = (b * b / a) * (1.0 + fc);
            prop_assume!(admissible(a, b, c));
            let m = m_parameter(a, b, c) * M_SAFETY;
            prop_assert!(matrix_positivity_check(a, b, c, m, 10.0, 1.0).all_margins_hold());
        }
    }
}
