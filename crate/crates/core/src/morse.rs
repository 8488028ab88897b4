//! Critical points, separating saddles and the saddle/minimum pairing.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::potentials::Potential;

/// Eigenvalue magnitude below which a Hessian counts as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-8;

/// Relative gap below which two minima are considered tied.
pub const TIE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct CriticalPoint {
    pub location: Vec<f64>,
    pub value: f64,
    /// Hessian eigenvalues sorted in descending order.
    pub hess_eigs: Vec<f64>,
    /// Number of negative Hessian eigenvalues.
    pub index: usize,
    pub hessian: DMatrix<f64>,
    /// Gradient norm at `location` after Newton.
    pub grad_norm: f64,
}

impl CriticalPoint {
    fn classify(p: &Potential, x: Vec<f64>) -> Result<Self> {
        let hessian = p.hessian(&x);
        let mut hess_eigs: Vec<f64> = SymmetricEigen::new(hessian.clone()).eigenvalues.iter().copied().collect();
        hess_eigs.sort_by(|a, b| b.total_cmp(a));
        let min_abs = hess_eigs.iter().fold(f64::INFINITY, |m, e| m.min(e.abs()));
        if min_abs <= DEGENERACY_TOL {
            return Err(Error::NonMorse { location: x, min_abs_eig: min_abs });
        }
        let grad_norm = norm(&p.grad(&x));
        Ok(Self {
            value: p.value(&x),
            index: hess_eigs.iter().filter(|&&e| e < 0.0).count(),
            hess_eigs,
            hessian,
            grad_norm,
            location: x,
        })
    }

    /// Unit eigenvector of the most negative Hessian eigenvalue.
    pub fn unstable_direction(&self) -> Vec<f64> {
        let eig = SymmetricEigen::new(self.hessian.clone());
        let (k, _) = eig.eigenvalues.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        eig.eigenvectors.column(k).iter().copied().collect()
    }

    /// `|eta_d|`, the magnitude of the unique negative Hessian eigenvalue.
    pub fn unstable_curvature(&self) -> f64 {
        -self.hess_eigs[self.hess_eigs.len() - 1]
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn newton(p: &Potential, mut x: Vec<f64>, tol: f64) -> Option<Vec<f64>> {
    let d = p.dim();
    for _ in 0..100 {
        let g = p.grad(&x);
        if !g.iter().all(|v| v.is_finite()) {
            return None;
        }
        if norm(&g) <= tol {
            return Some(x);
        }
        let step = p.hessian(&x).lu().solve(&DVector::from_vec(g))?;
        for k in 0..d {
            x[k] -= step[k];
        }
        if !p.contains(&x) {
            return None;
        }
    }
    let g = p.grad(&x);
    (norm(&g) <= tol).then_some(x)
}

/// Newton's method on `grad f = 0` from a uniform grid of cell-centered seeds.
///
/// Divergent or out-of-box seeds are dropped. Results are deduplicated within
/// `1e-6` times the box diameter and sorted lexicographically by location.
pub fn find_critical_points(p: &Potential, seeds_per_axis: usize, newton_tol: f64) -> Result<Vec<CriticalPoint>> {
    if seeds_per_axis < 4 {
        return Err(Error::Usage(format!("seeds_per_axis must be at least 4, got {seeds_per_axis}")));
    }
    if !(newton_tol > 0.0) {
        return Err(Error::Usage("newton_tol must be positive".into()));
    }
    let d = p.dim();
    let total = seeds_per_axis.pow(d as u32);
    let found: Vec<Option<Vec<f64>>> = (0..total)
        .into_par_iter()
        .map(|mut idx| {
            let mut x = vec![0.0; d];
            for k in 0..d {
                let i = idx % seeds_per_axis;
                idx /= seeds_per_axis;
                let w = p.upper()[k] - p.lower()[k];
                x[k] = p.lower()[k] + w * (i as f64 + 0.5) / seeds_per_axis as f64;
            }
            newton(p, x, newton_tol)
        })
        .collect();
    let radius = 1e-6 * p.diameter();
    let mut unique: Vec<Vec<f64>> = Vec::new();
    for x in found.into_iter().flatten() {
        if !unique.iter().any(|u| norm(&u.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>()) <= radius) {
            unique.push(x);
        }
    }
    unique.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    unique.into_iter().map(|x| CriticalPoint::classify(p, x)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SaddleVerdict {
    Separating,
    NotSeparating,
    /// A downhill probe left the box before entering the sublevel set.
    Inconclusive,
}

#[derive(Clone, Debug)]
pub struct SaddleAnnotation {
    pub saddle: CriticalPoint,
    pub verdict: SaddleVerdict,
    /// Indices (into the critical-point list) of the minima lying in the
    /// sublevel components reached by the two downhill probes.
    pub sides: Option<[Vec<usize>; 2]>,
}

struct Raster {
    n: usize,
    d: usize,
    lower: Vec<f64>,
    h: Vec<f64>,
    values: Vec<f64>,
}

impl Raster {
    fn new(p: &Potential, n: usize) -> Self {
        let d = p.dim();
        let lower = p.lower().to_vec();
        let h: Vec<f64> = (0..d).map(|k| (p.upper()[k] - p.lower()[k]) / (n - 1) as f64).collect();
        let total = n.pow(d as u32);
        let values = (0..total)
            .into_par_iter()
            .map(|idx| {
                let mut rem = idx;
                let x: Vec<f64> = (0..d)
                    .map(|k| {
                        let i = rem % n;
                        rem /= n;
                        lower[k] + h[k] * i as f64
                    })
                    .collect();
                p.value(&x)
            })
            .collect();
        Self { n, d, lower, h, values }
    }

    fn node_of(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0;
        let mut stride = 1;
        for k in 0..self.d {
            let i = ((x[k] - self.lower[k]) / self.h[k]).round();
            if i < 0.0 || i > (self.n - 1) as f64 {
                return None;
            }
            idx += i as usize * stride;
            stride *= self.n;
        }
        Some(idx)
    }

    /// Union-find component labels of `{value < level}`; `usize::MAX` outside.
    fn components(&self, level: f64) -> Vec<usize> {
        let total = self.values.len();
        let mut parent: Vec<usize> = (0..total).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        let inside = |i: usize| self.values[i] < level;
        let mut stride = 1;
        for k in 0..self.d {
            for i in 0..total {
                if (i / stride) % self.n == self.n - 1 {
                    continue;
                }
                let j = i + stride;
                if inside(i) && inside(j) {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
            stride *= self.n;
            let _ = k;
        }
        (0..total).map(|i| if inside(i) { find(&mut parent, i) } else { usize::MAX }).collect()
    }
}

/// Decide which index-1 saddles separate two sublevel components.
///
/// The strict sublevel set at `f(saddle) - delta`, `delta = 1e-3 (f_max - f_min)`,
/// is rasterized with `grid_resolution` nodes per axis and split into
/// components; the saddle separates if its two downhill probes land in
/// different components.
pub fn separating_saddles(p: &Potential, criticals: &[CriticalPoint], grid_resolution: usize) -> Result<Vec<SaddleAnnotation>> {
    if grid_resolution < 64 {
        return Err(Error::Usage(format!("grid_resolution must be at least 64, got {grid_resolution}")));
    }
    let raster = Raster::new(p, grid_resolution);
    let fmin = raster.values.iter().copied().fold(f64::INFINITY, f64::min);
    let fmax = raster.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let delta = 1e-3 * (fmax - fmin);
    let hmin = raster.h.iter().copied().fold(f64::INFINITY, f64::min);
    let minima: Vec<usize> = (0..criticals.len()).filter(|&i| criticals[i].index == 0).collect();

    let mut out = Vec::new();
    for saddle in criticals.iter().filter(|c| c.index == 1) {
        let level = saddle.value - delta;
        let labels = raster.components(level);
        let e = saddle.unstable_direction();
        let mut probe_labels = [usize::MAX; 2];
        let mut inconclusive = false;
        for (side, sign) in [1.0, -1.0].into_iter().enumerate() {
            let mut t = 0.5 * hmin;
            loop {
                let x: Vec<f64> = saddle.location.iter().zip(&e).map(|(c, ek)| c + sign * t * ek).collect();
                match raster.node_of(&x) {
                    None => {
                        inconclusive = true;
                        break;
                    }
                    Some(node) if labels[node] != usize::MAX => {
                        probe_labels[side] = labels[node];
                        break;
                    }
                    Some(_) => t += 0.5 * hmin,
                }
                if !p.contains(&x) {
                    inconclusive = true;
                    break;
                }
            }
        }
        let (verdict, sides) = if inconclusive {
            (SaddleVerdict::Inconclusive, None)
        } else {
            let side_minima = |lab: usize| -> Vec<usize> {
                minima
                    .iter()
                    .copied()
                    .filter(|&m| raster.node_of(&criticals[m].location).is_some_and(|n| labels[n] == lab))
                    .collect()
            };
            let sides = [side_minima(probe_labels[0]), side_minima(probe_labels[1])];
            let verdict = if probe_labels[0] != probe_labels[1] { SaddleVerdict::Separating } else { SaddleVerdict::NotSeparating };
            (verdict, Some(sides))
        };
        out.push(SaddleAnnotation { saddle: saddle.clone(), verdict, sides });
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct Pair {
    /// `None` is the fictive saddle at infinity paired with the global minimum.
    pub saddle: Option<CriticalPoint>,
    pub minimum: CriticalPoint,
    pub barrier: f64,
}

#[derive(Clone, Debug)]
pub struct MorsePairing {
    pub minima: Vec<CriticalPoint>,
    pub separating_saddles: Vec<CriticalPoint>,
    /// Pair 0 is the global minimum; pairs 1.. have non-increasing barriers.
    pub pairs: Vec<Pair>,
    /// `barriers[0]` is `+inf`.
    pub barriers: Vec<f64>,
    /// `barriers[1]`, absent for single-well objectives.
    pub h_f: Option<f64>,
}

impl MorsePairing {
    pub fn global_minimum(&self) -> &CriticalPoint {
        &self.pairs[0].minimum
    }
}

/// Pair every separating saddle with the minimum it isolates.
///
/// A saddle at level `f(x)` splits its sublevel component in two; the side
/// whose deepest minimum is shallower contributes that minimum as partner.
pub fn label_pairs(criticals: &[CriticalPoint], annotations: &[SaddleAnnotation]) -> Result<MorsePairing> {
    let minima_idx: Vec<usize> = (0..criticals.len()).filter(|&i| criticals[i].index == 0).collect();
    if minima_idx.is_empty() {
        return Err(Error::Topology("no local minimum found".into()));
    }
    let mut seps: Vec<&SaddleAnnotation> = annotations.iter().filter(|a| a.verdict == SaddleVerdict::Separating).collect();
    if seps.len() + 1 != minima_idx.len() {
        return Err(Error::Topology(format!(
            "count identity broken: {} separating saddles for {} minima",
            seps.len(),
            minima_idx.len()
        )));
    }
    seps.sort_by(|a, b| {
        b.saddle.value.total_cmp(&a.saddle.value).then_with(|| {
            a.saddle.location.iter().zip(&b.saddle.location).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    for w in seps.windows(2) {
        if w[0].saddle.value == w[1].saddle.value {
            log::warn!("tied saddle values at {:?} and {:?}; ordering by location", w[0].saddle.location, w[1].saddle.location);
        }
    }

    let global = *minima_idx
        .iter()
        .min_by(|&&a, &&b| criticals[a].value.total_cmp(&criticals[b].value))
        .unwrap();
    let mut used = vec![false; criticals.len()];
    used[global] = true;
    let mut pairs = Vec::new();
    for a in &seps {
        let sides = a.sides.as_ref().ok_or_else(|| Error::Topology("separating saddle without side information".into()))?;
        let deepest = |side: &Vec<usize>| side.iter().copied().min_by(|&x, &y| criticals[x].value.total_cmp(&criticals[y].value));
        let (Some(m0), Some(m1)) = (deepest(&sides[0]), deepest(&sides[1])) else {
            return Err(Error::Topology(format!("saddle at {:?} has a side without a minimum", a.saddle.location)));
        };
        let (v0, v1) = (criticals[m0].value, criticals[m1].value);
        if (v0 - v1).abs() <= TIE_TOL * v0.abs().max(v1.abs()).max(1.0) {
            return Err(Error::GenericAssumption(format!(
                "minima at {:?} and {:?} tie at level {v0} below saddle {:?}",
                criticals[m0].location, criticals[m1].location, a.saddle.location
            )));
        }
        let partner = if v0 > v1 { m0 } else { m1 };
        if used[partner] {
            return Err(Error::Topology(format!("minimum at {:?} paired twice", criticals[partner].location)));
        }
        used[partner] = true;
        pairs.push(Pair { barrier: a.saddle.value - criticals[partner].value, saddle: Some(a.saddle.clone()), minimum: criticals[partner].clone() });
    }
    pairs.sort_by(|a, b| b.barrier.total_cmp(&a.barrier));
    pairs.insert(0, Pair { saddle: None, minimum: criticals[global].clone(), barrier: f64::INFINITY });
    let barriers: Vec<f64> = pairs.iter().map(|p| p.barrier).collect();
    Ok(MorsePairing {
        minima: minima_idx.iter().map(|&i| criticals[i].clone()).collect(),
        separating_saddles: seps.iter().map(|a| a.saddle.clone()).collect(),
        h_f: barriers.get(1).copied(),
        barriers,
        pairs,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct MorseOptions {
    pub seeds_per_axis: usize,
    pub newton_tol: f64,
    pub grid_resolution: usize,
}

impl MorseOptions {
    pub fn for_dim(d: usize) -> Self {
        if d == 1 {
            Self { seeds_per_axis: 64, newton_tol: 1e-10, grid_resolution: 4096 }
        } else {
            Self { seeds_per_axis: 24, newton_tol: 1e-10, grid_resolution: 256 }
        }
    }
}

/// Full pipeline: critical points, separating saddles, pairing.
pub fn analyze(p: &Potential, opts: &MorseOptions) -> Result<(Vec<CriticalPoint>, Vec<SaddleAnnotation>, MorsePairing)> {
    let crit = find_critical_points(p, opts.seeds_per_axis, opts.newton_tol)?;
    let ann = separating_saddles(p, &crit, opts.grid_resolution)?;
    let pairing = label_pairs(&crit, &ann)?;
    Ok((crit, ann, pairing))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bisect(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if f(a) * f(m) <= 0.0 {
                b = m;
            } else {
                a = m;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn tilted_double_well_critical_points() {
        let p = Potential::tilted_double_well(0.1);
        let fp = |x: f64| x * x * x - x + 0.1;
        let oracle = [bisect(fp, -2.0, -0.6), bisect(fp, -0.5, 0.5), bisect(fp, 0.6, 2.0)];
        let crit = find_critical_points(&p, 32, 1e-12).unwrap();
        assert_eq!(crit.len(), 3);
        for (c, o) in crit.iter().zip(oracle) {
            assert!((c.location[0] - o).abs() < 1e-10);
        }
        assert_eq!(crit.iter().map(|c| c.index).collect::<Vec<_>>(), vec![0, 1, 0]);
        assert!((crit[0].location[0] + 1.0466).abs() < 1e-4);
        assert!((crit[1].location[0] - 0.1010).abs() < 1e-4);
        assert!((crit[2].location[0] - 0.9456).abs() < 1e-4);
    }

    #[test]
    fn quadratic_single_minimum() {
        let crit = find_critical_points(&Potential::quadratic(0.5), 8, 1e-12).unwrap();
        assert_eq!(crit.len(), 1);
        assert_eq!(crit[0].location, vec![0.0]);
        assert_eq!(crit[0].index, 0);
        let ann = separating_saddles(&Potential::quadratic(0.5), &crit, 128).unwrap();
        assert!(ann.is_empty());
        let pairing = label_pairs(&crit, &ann).unwrap();
        assert_eq!(pairing.h_f, None);
    }

    #[test]
    fn double_well_2d_critical_set() {
        let p = Potential::double_well_2d(0.0);
        let crit = find_critical_points(&p, 16, 1e-12).unwrap();
        assert_eq!(crit.len(), 3);
        let saddle = crit.iter().find(|c| c.index == 1).unwrap();
        assert!(saddle.location.iter().all(|v| v.abs() < 1e-12));
        assert!((saddle.hess_eigs[0] - 1.0).abs() < 1e-12 && (saddle.hess_eigs[1] + 1.0).abs() < 1e-12);
        let ann = separating_saddles(&p, &crit, 256).unwrap();
        assert_eq!(ann.len(), 1);
        assert_eq!(ann[0].verdict, SaddleVerdict::Separating);
    }

    #[test]
    fn tilted_pairing_and_barrier() {
        let p = Potential::tilted_double_well(0.1);
        let (_, ann, pairing) = analyze(&p, &MorseOptions::for_dim(1)).unwrap();
        assert_eq!(ann[0].verdict, SaddleVerdict::Separating);
        assert_eq!(pairing.separating_saddles.len() + 1, pairing.minima.len());
        assert!((pairing.pairs[0].minimum.location[0] + 1.0466).abs() < 1e-4);
        assert!((pairing.pairs[1].minimum.location[0] - 0.9456).abs() < 1e-4);
        assert!((pairing.h_f.unwrap() - 0.1576).abs() < 1e-3);
        assert!(pairing.barriers[0].is_infinite());
    }

    #[test]
    fn symmetric_double_well_violates_generic_assumption() {
        let p = Potential::tilted_double_well(0.0);
        assert!(matches!(analyze(&p, &MorseOptions::for_dim(1)), Err(Error::GenericAssumption(_))));
        let p = Potential::double_well_2d(0.0);
        assert!(matches!(analyze(&p, &MorseOptions::for_dim(2)), Err(Error::GenericAssumption(_))));
    }

    #[test]
    fn triple_well_barriers_strictly_decrease() {
        let p = Potential::triple_well(0.3);
        let (_, _, pairing) = analyze(&p, &MorseOptions::for_dim(1)).unwrap();
        assert_eq!(pairing.minima.len(), 3);
        assert_eq!(pairing.separating_saddles.len(), 2);
        assert!(pairing.barriers[1] > pairing.barriers[2]);
        assert!((pairing.barriers[1] - 1.95).abs() < 0.01, "{:?}", pairing.barriers);
    }

    #[test]
    fn barrier_invariant_under_offset_and_translation() {
        let base = Potential::tilted_double_well(0.1);
        let h = analyze(&base, &MorseOptions::for_dim(1)).unwrap().2.h_f.unwrap();
        let shifted = base.clone().with_offset(5.0);
        let moved = base.translated(&[0.37]);
        for q in [shifted, moved] {
            let hq = analyze(&q, &MorseOptions::for_dim(1)).unwrap().2.h_f.unwrap();
            assert!((hq - h).abs() < 1e-9);
        }
    }

    #[test]
    fn flat_potential_is_not_morse() {
        assert!(matches!(find_critical_points(&Potential::flat(1), 8, 1e-10), Err(Error::NonMorse { .. })));
    }

    #[test]
    fn reported_points_reverify_gradient() {
        for p in crate::potentials::catalog() {
            let opts = MorseOptions::for_dim(p.dim());
            for c in find_critical_points(&p, opts.seeds_per_axis, opts.newton_tol).unwrap() {
                assert!(norm(&p.grad(&c.location)) <= opts.newton_tol);
                assert!(c.hess_eigs.iter().all(|e| e.abs() > DEGENERACY_TOL));
            }
        }
    }

    #[test]
    fn count_identity_on_catalog() {
        for p in crate::potentials::catalog() {
            let opts = MorseOptions::for_dim(p.dim());
            let crit = find_critical_points(&p, opts.seeds_per_axis, opts.newton_tol).unwrap();
            let ann = separating_saddles(&p, &crit, opts.grid_resolution).unwrap();
            let n_sep = ann.iter().filter(|a| a.verdict == SaddleVerdict::Separating).count();
            let n_min = crit.iter().filter(|c| c.index == 0).count();
            assert_eq!(n_sep + 1, n_min, "{}", p.name());
        }
    }
}
