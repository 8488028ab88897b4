//! Catalog of smooth Morse objectives with closed-form derivatives.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Parametric family of a catalog objective.
#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    /// `theta x^2 / 2`.
    Quadratic { theta: f64 },
    /// `(x^2 - 1)^2 / 4 + tau x`.
    TiltedDoubleWell { tau: f64 },
    /// `x^6/6 - 5x^4/4 + 2x^2 + tau x`, minima near -2, 0, 2 and saddles near -1, 1.
    TripleWell { tau: f64 },
    /// `(x^2 - 1)^2 / 4 + tau x + y^2 / 2`.
    DoubleWell2d { tau: f64 },
    /// Identically zero in `dim` dimensions.
    Flat { dim: usize },
}

/// Requested derivative order for [`evaluate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Order {
    Value,
    Gradient,
    Hessian,
}

impl std::str::FromStr for Order {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "value" => Ok(Order::Value),
            "gradient" => Ok(Order::Gradient),
            "hessian" => Ok(Order::Hessian),
            other => Err(Error::Usage(format!("unsupported derivative order '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Evaluation {
    Value(f64),
    Gradient(Vec<f64>),
    Hessian(DMatrix<f64>),
}

/// A smooth objective on an axis-aligned box.
///
/// `value(x) = g(x - shift) + offset` where `g` is the family's closed form.
#[derive(Clone, Debug, PartialEq)]
pub struct Potential {
    family: Family,
    name: String,
    lower: Vec<f64>,
    upper: Vec<f64>,
    offset: f64,
    shift: Vec<f64>,
}

impl Potential {
    pub fn quadratic(theta: f64) -> Self {
        Self::new(Family::Quadratic { theta }, "quadratic", vec![-6.0], vec![6.0])
    }

    pub fn tilted_double_well(tau: f64) -> Self {
        Self::new(Family::TiltedDoubleWell { tau }, "tilted_double_well", vec![-2.5], vec![2.5])
    }

    pub fn triple_well(tau: f64) -> Self {
        Self::new(Family::TripleWell { tau }, "triple_well", vec![-3.2], vec![3.2])
    }

    pub fn double_well_2d(tau: f64) -> Self {
        Self::new(Family::DoubleWell2d { tau }, "double_well_2d", vec![-2.5, -2.5], vec![2.5, 2.5])
    }

    pub fn flat(dim: usize) -> Self {
        Self::new(Family::Flat { dim }, "flat", vec![-1.0; dim], vec![1.0; dim])
    }

    fn new(family: Family, name: &str, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        let d = lower.len();
        Self { family, name: name.to_string(), lower, upper, offset: 0.0, shift: vec![0.0; d] }
    }

    /// Build a catalog entry from its name and a parameter map.
    ///
    /// Recognized parameters: `theta` (quadratic), `tau` (the tilted families),
    /// `dim` (flat), plus `lower`/`upper` for a symmetric-per-axis box override.
    pub fn from_name(name: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let allowed: &[&str] = match name {
            "quadratic" => &["theta", "lower", "upper"],
            "tilted_double_well" | "triple_well" | "double_well_2d" => &["tau", "lower", "upper"],
            "flat" => &["dim", "lower", "upper"],
            other => return Err(Error::Usage(format!("unknown potential '{other}'"))),
        };
        if let Some(k) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::Usage(format!("parameter '{k}' not accepted by potential '{name}'")));
        }
        let get = |k: &str, default: f64| params.get(k).copied().unwrap_or(default);
        let mut p = match name {
            "quadratic" => {
                let theta = get("theta", 0.5);
                if !(theta > 0.0) {
                    return Err(Error::Domain(format!("theta must be positive, got {theta}")));
                }
                Self::quadratic(theta)
            }
            "tilted_double_well" => Self::tilted_double_well(get("tau", 0.1)),
            "triple_well" => Self::triple_well(get("tau", 0.3)),
            "double_well_2d" => Self::double_well_2d(get("tau", 0.0)),
            _ => {
                let dim = get("dim", 1.0);
                if dim != 1.0 && dim != 2.0 {
                    return Err(Error::Usage(format!("flat potential supports dim 1 or 2, got {dim}")));
                }
                Self::flat(dim as usize)
            }
        };
        if params.contains_key("lower") || params.contains_key("upper") {
            let d = p.dim();
            let lo = get("lower", p.lower[0]);
            let hi = get("upper", p.upper[0]);
            p = p.with_box(vec![lo; d], vec![hi; d])?;
        }
        Ok(p)
    }

    /// Replace the domain box.
    pub fn with_box(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != self.dim() || upper.len() != self.dim() {
            return Err(Error::Usage("box dimension does not match potential".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::Domain(format!("empty box {lower:?} .. {upper:?}")));
        }
        self.lower = lower;
        self.upper = upper;
        Ok(self)
    }

    /// Add a constant to every value.
    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset += offset;
        self
    }

    /// Translate the objective and its box by `t`.
    pub fn translated(mut self, t: &[f64]) -> Self {
        for i in 0..self.dim() {
            self.shift[i] += t[i];
            self.lower[i] += t[i];
            self.upper[i] += t[i];
        }
        self
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn diameter(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| (u - l).powi(2)).sum::<f64>().sqrt()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().enumerate().all(|(i, &xi)| xi >= self.lower[i] && xi <= self.upper[i])
    }

    /// False for the flat family, which does not grow at infinity.
    pub fn is_confining(&self) -> bool {
        !matches!(self.family, Family::Flat { .. })
    }

    fn local(&self, x: &[f64], i: usize) -> f64 {
        x[i] - self.shift[i]
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let y0 = self.local(x, 0);
        let v = match self.family {
            Family::Quadratic { theta } => 0.5 * theta * y0 * y0,
            Family::TiltedDoubleWell { tau } => dw_value(y0, tau),
            Family::TripleWell { tau } => tw_value(y0, tau),
            Family::DoubleWell2d { tau } => {
                let y1 = self.local(x, 1);
                dw_value(y0, tau) + 0.5 * y1 * y1
            }
            Family::Flat { .. } => 0.0,
        };
        v + self.offset
    }

    pub fn grad_into(&self, x: &[f64], g: &mut [f64]) {
        let y0 = self.local(x, 0);
        match self.family {
            Family::Quadratic { theta } => g[0] = theta * y0,
            Family::TiltedDoubleWell { tau } => g[0] = dw_grad(y0, tau),
            Family::TripleWell { tau } => g[0] = tw_grad(y0, tau),
            Family::DoubleWell2d { tau } => {
                g[0] = dw_grad(y0, tau);
                g[1] = self.local(x, 1);
            }
            Family::Flat { .. } => g.iter_mut().for_each(|gi| *gi = 0.0),
        }
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.grad_into(x, &mut g);
        g
    }

    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let y0 = self.local(x, 0);
        let mut h = DMatrix::zeros(d, d);
        match self.family {
            Family::Quadratic { theta } => h[(0, 0)] = theta,
            Family::TiltedDoubleWell { .. } => h[(0, 0)] = dw_hess(y0),
            Family::TripleWell { .. } => h[(0, 0)] = tw_hess(y0),
            Family::DoubleWell2d { .. } => {
                h[(0, 0)] = dw_hess(y0);
                h[(1, 1)] = 1.0;
            }
            Family::Flat { .. } => {}
        }
        h
    }

    /// Trace of the Hessian.
    pub fn laplacian(&self, x: &[f64]) -> f64 {
        self.hessian(x).trace()
    }

    /// Scalar fast path for one-dimensional potentials: `(f, f', f'')`.
    pub fn eval1(&self, x: f64) -> (f64, f64, f64) {
        debug_assert_eq!(self.dim(), 1);
        let y = x - self.shift[0];
        let (f, g, h) = match self.family {
            Family::Quadratic { theta } => (0.5 * theta * y * y, theta * y, theta),
            Family::TiltedDoubleWell { tau } => (dw_value(y, tau), dw_grad(y, tau), dw_hess(y)),
            Family::TripleWell { tau } => (tw_value(y, tau), tw_grad(y, tau), tw_hess(y)),
            Family::Flat { .. } => (0.0, 0.0, 0.0),
            Family::DoubleWell2d { .. } => unreachable!("eval1 on a 2D potential"),
        };
        (f + self.offset, g, h)
    }

    /// `f'(x)` for one-dimensional potentials.
    pub fn grad1(&self, x: f64) -> f64 {
        self.eval1(x).1
    }

    /// Smallest and largest value on a uniform grid of `n` nodes per axis.
    pub fn range_on_box(&self, n: usize) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for x in box_grid(&self.lower, &self.upper, n) {
            let v = self.value(&x);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// Largest Hessian eigenvalue on a uniform grid of `n` nodes per axis.
    pub fn max_hessian_eigenvalue(&self, n: usize) -> f64 {
        box_grid(&self.lower, &self.upper, n)
            .map(|x| SymmetricEigen::new(self.hessian(&x)).eigenvalues.max())
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

fn dw_value(x: f64, tau: f64) -> f64 {
    let a = x * x - 1.0;
    0.25 * a * a + tau * x
}

fn dw_grad(x: f64, tau: f64) -> f64 {
    x * x * x - x + tau
}

fn dw_hess(x: f64) -> f64 {
    3.0 * x * x - 1.0
}

fn tw_value(x: f64, tau: f64) -> f64 {
    let x2 = x * x;
    x2 * x2 * x2 / 6.0 - 1.25 * x2 * x2 + 2.0 * x2 + tau * x
}

fn tw_grad(x: f64, tau: f64) -> f64 {
    let x2 = x * x;
    x * (x2 * x2 - 5.0 * x2 + 4.0) + tau
}

fn tw_hess(x: f64) -> f64 {
    let x2 = x * x;
    5.0 * x2 * x2 - 15.0 * x2 + 4.0
}

/// Iterator over a tensor grid with `n` nodes per axis, endpoints included.
pub fn box_grid<'a>(lower: &'a [f64], upper: &'a [f64], n: usize) -> impl Iterator<Item = Vec<f64>> + 'a {
    let d = lower.len();
    let total = n.pow(d as u32);
    (0..total).map(move |mut idx| {
        let mut x = vec![0.0; d];
        for k in 0..d {
            let i = idx % n;
            idx /= n;
            x[k] = lower[k] + (upper[k] - lower[k]) * i as f64 / (n - 1) as f64;
        }
        x
    })
}

/// Evaluate the requested derivative order at a point of the box.
pub fn evaluate(p: &Potential, x: &[f64], order: Order) -> Result<Evaluation> {
    if !p.contains(x) {
        return Err(Error::Domain(format!("point {x:?} outside the box of '{}'", p.name())));
    }
    Ok(match order {
        Order::Value => Evaluation::Value(p.value(x)),
        Order::Gradient => Evaluation::Gradient(p.grad(x)),
        Order::Hessian => Evaluation::Hessian(p.hessian(x)),
    })
}

#[derive(Clone, Debug)]
pub struct VillaniDiagnostics {
    pub grid: Vec<Vec<f64>>,
    /// `|grad f|^2 / s - laplacian f` per grid point.
    pub condition1_values: Vec<f64>,
    /// `||hess f||_2 / (1 + |grad f|)` per grid point.
    pub ratios: Vec<f64>,
    pub condition2_ratio_max: f64,
    pub estimated_c: f64,
    /// Marks points on the outermost grid shell.
    pub outer_shell: Vec<bool>,
}

impl VillaniDiagnostics {
    /// Every outer-shell condition-1 value exceeds the interior median.
    pub fn growth_surrogate_holds(&self) -> bool {
        let mut interior: Vec<f64> = self
            .condition1_values
            .iter()
            .zip(&self.outer_shell)
            .filter(|(_, &o)| !o)
            .map(|(&c, _)| c)
            .collect();
        if interior.is_empty() {
            return false;
        }
        interior.sort_by(|a, b| a.total_cmp(b));
        let median = interior[interior.len() / 2];
        self.condition1_values.iter().zip(&self.outer_shell).filter(|(_, &o)| o).all(|(&c, _)| c > median)
    }
}

/// Villani-condition surrogates on a grid with `resolution` intervals per axis.
pub fn villani_diagnostics(p: &Potential, s: f64, resolution: usize) -> Result<VillaniDiagnostics> {
    if !(s > 0.0) {
        return Err(Error::Domain(format!("learning rate must be positive, got {s}")));
    }
    if resolution < 8 {
        return Err(Error::Usage(format!("resolution must be at least 8, got {resolution}")));
    }
    let n = resolution + 1;
    let d = p.dim();
    let grid: Vec<Vec<f64>> = box_grid(p.lower(), p.upper(), n).collect();
    let mut condition1_values = Vec::with_capacity(grid.len());
    let mut ratios = Vec::with_capacity(grid.len());
    let mut outer_shell = Vec::with_capacity(grid.len());
    for (idx, x) in grid.iter().enumerate() {
        let g = p.grad(x);
        let h = p.hessian(x);
        let gn2: f64 = g.iter().map(|v| v * v).sum();
        condition1_values.push(gn2 / s - h.trace());
        let spec = SymmetricEigen::new(h).eigenvalues.iter().fold(0.0_f64, |m, e| m.max(e.abs()));
        ratios.push(spec / (1.0 + gn2.sqrt()));
        let mut rem = idx;
        let mut on_shell = false;
        for _ in 0..d {
            let i = rem % n;
            rem /= n;
            on_shell |= i == 0 || i == n - 1;
        }
        outer_shell.push(on_shell);
    }
    let max = ratios.iter().copied().fold(0.0_f64, f64::max);
    Ok(VillaniDiagnostics {
        grid,
        condition1_values,
        ratios,
        condition2_ratio_max: max,
        estimated_c: max,
        outer_shell,
    })
}

#[derive(Clone, Debug)]
pub struct SelfCheckReport {
    pub max_grad_error: f64,
    pub max_hess_error: f64,
    pub worst_point: Vec<f64>,
}

impl SelfCheckReport {
    pub fn max_error(&self) -> f64 {
        self.max_grad_error.max(self.max_hess_error)
    }
}

/// Compare closed-form derivatives with central differences at step `1e-5`.
///
/// Errors are relative to `max(1, |exact|)`. Hessian differences are taken on
/// the closed-form gradient.
pub fn derivative_selfcheck(p: &Potential, samples: usize, seed: u64) -> Result<SelfCheckReport> {
    if samples == 0 {
        return Err(Error::Usage("samples must be at least 1".into()));
    }
    const H: f64 = 1e-5;
    let d = p.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SelfCheckReport { max_grad_error: 0.0, max_hess_error: 0.0, worst_point: p.center() };
    let mut worst = -1.0;
    for _ in 0..samples {
        let x: Vec<f64> = (0..d)
            .map(|k| {
                let w = p.upper()[k] - p.lower()[k];
                p.lower()[k] + w * (0.05 + 0.9 * rng.gen::<f64>())
            })
            .collect();
        let g = p.grad(&x);
        let h = p.hessian(&x);
        let mut ge = 0.0_f64;
        let mut he = 0.0_f64;
        for k in 0..d {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += H;
            xm[k] -= H;
            let fd = (p.value(&xp) - p.value(&xm)) / (2.0 * H);
            ge = ge.max((fd - g[k]).abs() / g[k].abs().max(1.0));
            let gp = p.grad(&xp);
            let gm = p.grad(&xm);
            for j in 0..d {
                let fd = (gp[j] - gm[j]) / (2.0 * H);
                he = he.max((fd - h[(j, k)]).abs() / h[(j, k)].abs().max(1.0));
            }
        }
        report.max_grad_error = report.max_grad_error.max(ge);
        report.max_hess_error = report.max_hess_error.max(he);
        if ge.max(he) > worst {
            worst = ge.max(he);
            report.worst_point = x;
        }
    }
    Ok(report)
}

/// Every catalog entry with default parameters.
pub fn catalog() -> Vec<Potential> {
    vec![
        Potential::quadratic(0.5),
        Potential::tilted_double_well(0.1),
        Potential::triple_well(0.3),
        Potential::double_well_2d(0.0),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spot_values() {
        let dw = Potential::tilted_double_well(0.1);
        assert_eq!(evaluate(&dw, &[0.0], Order::Value).unwrap(), Evaluation::Value(0.25));
        match evaluate(&dw, &[1.0], Order::Hessian).unwrap() {
            Evaluation::Hessian(h) => assert_eq!(h[(0, 0)], 2.0),
            _ => unreachable!(),
        }
        let q = Potential::quadratic(0.5);
        assert_eq!(evaluate(&q, &[0.0], Order::Gradient).unwrap(), Evaluation::Gradient(vec![0.0]));
    }

    #[test]
    fn evaluate_rejects_outside_points_and_bad_orders() {
        let q = Potential::quadratic(0.5);
        assert!(matches!(evaluate(&q, &[7.0], Order::Value), Err(Error::Domain(_))));
        assert!(matches!("jerk".parse::<Order>(), Err(Error::Usage(_))));
    }

    #[test]
    fn catalog_is_confining_and_finite() {
        for p in catalog() {
            let c = p.value(&p.center());
            for x in box_grid(p.lower(), p.upper(), 9) {
                assert!(p.value(&x).is_finite());
                let on_face = x.iter().enumerate().any(|(k, &v)| v == p.lower()[k] || v == p.upper()[k]);
                if on_face {
                    assert!(p.value(&x) > c, "{} face {x:?}", p.name());
                }
            }
        }
    }

    #[test]
    fn selfcheck_catalog() {
        let q = derivative_selfcheck(&Potential::quadratic(0.5), 10, 1).unwrap();
        assert!(q.max_error() <= 1e-8, "{q:?}");
        for p in catalog() {
            let r = derivative_selfcheck(&p, 100, 7).unwrap();
            assert!(r.max_error() <= 1e-6, "{}: {r:?}", p.name());
        }
        assert!(derivative_selfcheck(&Potential::quadratic(0.5), 0, 1).is_err());
    }

    #[test]
    fn villani_quadratic_constant_is_theta() {
        let q = Potential::quadratic(0.5).with_box(vec![-4.0], vec![4.0]).unwrap();
        let v = villani_diagnostics(&q, 0.1, 64).unwrap();
        assert_eq!(v.estimated_c, 0.5);
        assert!(v.growth_surrogate_holds());
    }

    #[test]
    fn villani_double_well_growth() {
        let dw = Potential::tilted_double_well(0.1).with_box(vec![-2.0], vec![2.0]).unwrap();
        let v = villani_diagnostics(&dw, 0.1, 64).unwrap();
        assert!(v.growth_surrogate_holds());
        assert!(v.condition2_ratio_max.is_finite() && v.condition2_ratio_max >= 0.0);
    }

    #[test]
    fn villani_flat_is_zero() {
        let v = villani_diagnostics(&Potential::flat(1), 0.1, 16).unwrap();
        assert_eq!(v.estimated_c, 0.0);
        assert!(villani_diagnostics(&Potential::flat(1), 0.1, 4).is_err());
    }

    #[test]
    fn from_name_validates() {
        let mut m = BTreeMap::new();
        m.insert("tau".to_string(), 0.2);
        assert_eq!(Potential::from_name("tilted_double_well", &m).unwrap().family(), &Family::TiltedDoubleWell { tau: 0.2 });
        assert!(Potential::from_name("quadratic", &m).is_err());
        assert!(Potential::from_name("banana", &BTreeMap::new()).is_err());
    }

    #[test]
    fn offset_and_translation() {
        let p = Potential::tilted_double_well(0.1).with_offset(3.0).translated(&[0.5]);
        let q = Potential::tilted_double_well(0.1);
        assert!((p.value(&[0.7]) - q.value(&[0.2]) - 3.0).abs() < 1e-15);
        assert_eq!(p.lower(), &[-2.0]);
    }
}
