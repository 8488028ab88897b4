//! Phase-space discretizations of the Kramers and Witten operators.
//!
//! Grids use interior nodes only (homogeneous Dirichlet data on the box
//! boundary): `x_i = lo + (i + 1) h` with `h = (hi - lo) / (n + 1)`.
//! Phase-space vectors are stored x-major, `index = i * nv + j`.

use faer::complex_native::c64;
use faer::prelude::*;
use faer::Mat;
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hyperparams::Hyperparams;
use crate::potentials::Potential;
use crate::sparse::CsrMatrix;

/// Bound on `2 (f - f_min) / beta` kept inside automatically sized boxes.
pub const AUTO_EXPONENT_CUTOFF: f64 = 25.0;
/// Velocity half-width of automatic boxes in units of `sqrt(beta)`.
pub const AUTO_VELOCITY_WIDTH: f64 = 5.0;

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseGrid {
    pub x_range: (f64, f64),
    pub v_range: (f64, f64),
    pub nx: usize,
    pub nv: usize,
    pub hx: f64,
    pub hv: f64,
}

impl PhaseGrid {
    pub fn new(x_range: (f64, f64), v_range: (f64, f64), nx: usize, nv: usize) -> Result<Self> {
        if nx < 32 || nv < 32 {
            return Err(Error::Usage(format!("phase grids need at least 32 nodes per axis, got {nx}x{nv}")));
        }
        if !(x_range.0 < x_range.1 && v_range.0 < v_range.1) {
            return Err(Error::Domain("empty phase-grid range".into()));
        }
        Ok(Self {
            x_range,
            v_range,
            nx,
            nv,
            hx: (x_range.1 - x_range.0) / (nx + 1) as f64,
            hv: (v_range.1 - v_range.0) / (nv + 1) as f64,
        })
    }

    /// Box covering `2 (f - f_min) / beta <= 25` inside the potential's box and
    /// `|v| <= 5 sqrt(beta)`.
    pub fn auto(p: &Potential, beta: f64, nx: usize, nv: usize) -> Result<Self> {
        let x_range = auto_x_range(p, beta)?;
        let vmax = AUTO_VELOCITY_WIDTH * beta.sqrt();
        Self::new(x_range, (-vmax, vmax), nx, nv)
    }

    pub fn len(&self) -> usize {
        self.nx * self.nv
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_range.0 + (i + 1) as f64 * self.hx
    }

    pub fn v(&self, j: usize) -> f64 {
        self.v_range.0 + (j + 1) as f64 * self.hv
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.nv + j
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.x(i)).collect()
    }

    pub fn vs(&self) -> Vec<f64> {
        (0..self.nv).map(|j| self.v(j)).collect()
    }

    /// Half the grid spacing, same box.
    pub fn refined(&self) -> Result<Self> {
        Self::new(self.x_range, self.v_range, 2 * self.nx + 1, 2 * self.nv + 1)
    }
}

fn auto_x_range(p: &Potential, beta: f64) -> Result<(f64, f64)> {
    if p.dim() != 1 {
        return Err(Error::Usage("phase-space grids need a one-dimensional potential".into()));
    }
    if !(beta > 0.0) {
        return Err(Error::Domain(format!("beta must be positive, got {beta}")));
    }
    let (lo, hi) = (p.lower()[0], p.upper()[0]);
    let n = 8001;
    let xs: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let fs: Vec<f64> = xs.iter().map(|&x| p.eval1(x).0).collect();
    let fmin = fs.iter().copied().fold(f64::INFINITY, f64::min);
    let keep: Vec<usize> = (0..n).filter(|&i| 2.0 * (fs[i] - fmin) / beta <= AUTO_EXPONENT_CUTOFF).collect();
    let a = xs[keep[0].saturating_sub(1)];
    let b = xs[(keep[keep.len() - 1] + 1).min(n - 1)];
    Ok((a, b))
}

/// An assembled operator with its physical metadata.
#[derive(Clone, Debug)]
pub struct OperatorMatrix {
    pub matrix: CsrMatrix,
    pub symmetric: bool,
    pub beta: f64,
    pub mu: Option<f64>,
    pub s: f64,
    pub potential: String,
}

impl OperatorMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows
    }

    /// `(row, col, value)` lines.
    pub fn to_coordinate_text(&self) -> String {
        let mut out = String::new();
        for (r, c, v) in self.matrix.triplets() {
            out.push_str(&format!("{r} {c} {v:.16e}\n"));
        }
        out
    }

    /// The same operator multiplied by `factor` (e.g. `beta` for the rescaled form).
    pub fn scaled(&self, factor: f64) -> Self {
        Self { matrix: self.matrix.scaled(factor), ..self.clone() }
    }
}

/// Second-order one-sided difference weights `(offset, weight * h)` upwinded
/// for the sign of the advecting coefficient `a` in `a d/dx`.
fn upwind(a: f64) -> [(isize, f64); 3] {
    if a > 0.0 {
        [(0, 1.5 * a), (-1, -2.0 * a), (-2, 0.5 * a)]
    } else {
        [(0, -1.5 * a), (1, 2.0 * a), (2, -0.5 * a)]
    }
}

/// Discretized Kramers operator
/// `v d_x - f'(x) d_v - (sqrt(s)/2)(d_vv + 1/beta - v^2/beta^2)` in the
/// `sqrt(Gibbs)`-conjugated frame.
///
/// Transport uses second-order one-sided upwinding, diffusion the centered
/// three-point stencil.
pub fn assemble_kramers(p: &Potential, hp: &Hyperparams, grid: &PhaseGrid) -> Result<OperatorMatrix> {
    if p.dim() != 1 {
        return Err(Error::Usage("the Kramers operator is assembled for one-dimensional potentials".into()));
    }
    let (nx, nv) = (grid.nx, grid.nv);
    let diff = 0.5 * hp.s.sqrt();
    let beta = hp.beta;
    let mut t = Vec::with_capacity(grid.len() * 7);
    for i in 0..nx {
        let fp = p.grad1(grid.x(i));
        for j in 0..nv {
            let v = grid.v(j);
            let row = grid.idx(i, j);
            if v != 0.0 {
                for (o, w) in upwind(v) {
                    let ii = i as isize + o;
                    if ii >= 0 && (ii as usize) < nx {
                        t.push((row, grid.idx(ii as usize, j), w / grid.hx));
                    }
                }
            }
            if fp != 0.0 {
                for (o, w) in upwind(-fp) {
                    let jj = j as isize + o;
                    if jj >= 0 && (jj as usize) < nv {
                        t.push((row, grid.idx(i, jj as usize), w / grid.hv));
                    }
                }
            }
            let c = diff / (grid.hv * grid.hv);
            t.push((row, row, 2.0 * c - diff * (1.0 / beta - v * v / (beta * beta))));
            if j > 0 {
                t.push((row, row - 1, -c));
            }
            if j + 1 < nv {
                t.push((row, row + 1, -c));
            }
        }
    }
    Ok(OperatorMatrix {
        matrix: CsrMatrix::from_triplets(grid.len(), grid.len(), t),
        symmetric: false,
        beta,
        mu: Some(hp.mu),
        s: hp.s,
        potential: p.name().to_string(),
    })
}

/// `exp(-(2 (f - f_min) + v^2) / (2 beta))` on the grid, the kernel of the
/// conjugated Kramers operator.
pub fn sqrt_gibbs(p: &Potential, beta: f64, grid: &PhaseGrid) -> Vec<f64> {
    let fs: Vec<f64> = grid.xs().iter().map(|&x| p.eval1(x).0).collect();
    let fmin = fs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut out = Vec::with_capacity(grid.len());
    for f in &fs {
        for v in grid.vs() {
            out.push((-(2.0 * (f - fmin) + v * v) / (2.0 * beta)).exp());
        }
    }
    out
}

/// Uniform interior-node grid on a box of dimension 1 or 2.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionGrid {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub n: Vec<usize>,
}

impl PositionGrid {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, n: Vec<usize>) -> Result<Self> {
        if lower.len() != upper.len() || lower.len() != n.len() || lower.is_empty() || lower.len() > 2 {
            return Err(Error::Usage("position grids are one- or two-dimensional".into()));
        }
        if n.iter().any(|&k| k < 8) {
            return Err(Error::Usage("position grids need at least 8 nodes per axis".into()));
        }
        Ok(Self { lower, upper, n })
    }

    /// The potential's box with `n` interior nodes per axis.
    pub fn for_potential(p: &Potential, n: usize) -> Result<Self> {
        Self::new(p.lower().to_vec(), p.upper().to_vec(), vec![n; p.dim()])
    }

    pub fn h(&self, k: usize) -> f64 {
        (self.upper[k] - self.lower[k]) / (self.n[k] + 1) as f64
    }

    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Coordinates of flat node `idx` (last axis fastest).
    pub fn point(&self, idx: usize) -> Vec<f64> {
        let d = self.n.len();
        let mut rem = idx;
        let mut x = vec![0.0; d];
        for k in (0..d).rev() {
            let i = rem % self.n[k];
            rem /= self.n[k];
            x[k] = self.lower[k] + (i + 1) as f64 * self.h(k);
        }
        x
    }

    fn stride(&self, k: usize) -> usize {
        self.n[k + 1..].iter().product()
    }

    fn axis_index(&self, idx: usize, k: usize) -> usize {
        (idx / self.stride(k)) % self.n[k]
    }
}

/// Witten (Schrodinger) form `-eps Lap + |grad U|^2/(4 eps) - Lap U / 2`.
///
/// `u_terms(x)` returns `(|grad U|^2, Lap U)`. The ground state is `exp(-U/(2 eps))`.
pub fn assemble_witten(grid: &PositionGrid, eps: f64, u_terms: impl Fn(&[f64]) -> (f64, f64)) -> CsrMatrix {
    let d = grid.n.len();
    let mut t = Vec::with_capacity(grid.len() * (2 * d + 1));
    for idx in 0..grid.len() {
        let x = grid.point(idx);
        let (g2, lap) = u_terms(&x);
        let mut diag = g2 / (4.0 * eps) - 0.5 * lap;
        for k in 0..d {
            let c = eps / (grid.h(k) * grid.h(k));
            diag += 2.0 * c;
            let i = grid.axis_index(idx, k);
            let st = grid.stride(k);
            if i > 0 {
                t.push((idx, idx - st, -c));
            }
            if i + 1 < grid.n[k] {
                t.push((idx, idx + st, -c));
            }
        }
        t.push((idx, idx, diag));
    }
    CsrMatrix::from_triplets(grid.len(), grid.len(), t)
}

/// Symmetric form of the overdamped Fokker-Planck operator with noise `sqrt(s)`:
/// `-(s/2) Lap + |grad f|^2 / (2 s) - Lap f / 2`.
pub fn assemble_overdamped_witten(p: &Potential, s: f64, grid: &PositionGrid) -> Result<OperatorMatrix> {
    if !(s > 0.0) {
        return Err(Error::Domain(format!("learning rate must be positive, got {s}")));
    }
    if grid.n.len() != p.dim() {
        return Err(Error::Usage("grid dimension does not match potential".into()));
    }
    let m = assemble_witten(grid, 0.5 * s, |x| {
        let g = p.grad(x);
        (g.iter().map(|v| v * v).sum(), p.laplacian(x))
    });
    Ok(OperatorMatrix { matrix: m, symmetric: true, beta: s, mu: None, s, potential: p.name().to_string() })
}

/// `exp(-(f - f_min) / s)` on a position grid, the overdamped Witten ground state.
pub fn overdamped_ground_state(p: &Potential, s: f64, grid: &PositionGrid) -> Vec<f64> {
    let fs: Vec<f64> = (0..grid.len()).map(|i| p.value(&grid.point(i))).collect();
    let fmin = fs.iter().copied().fold(f64::INFINITY, f64::min);
    fs.iter().map(|f| (-(f - fmin) / s).exp()).collect()
}

#[derive(Clone, Copy, Debug)]
pub struct EigenOptions {
    pub k: usize,
    pub tol: f64,
    pub shift: f64,
    pub krylov_dim: usize,
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self { k: 6, tol: 1e-6, shift: -0.01, krylov_dim: 40, max_restarts: 8, seed: 0x5eed }
    }
}

#[derive(Clone, Debug)]
pub struct SpectralResult {
    /// Ascending by real part.
    pub eigenvalues: Vec<Complex64>,
    /// `||A phi - lambda phi|| / ||phi||`.
    pub residuals: Vec<f64>,
    pub which: usize,
    pub vectors_re: Vec<Vec<f64>>,
    pub vectors_im: Vec<Vec<f64>>,
    pub kernel_index: usize,
    /// Normalized overlap of the kernel eigenvector with the reference state.
    pub kernel_overlap: Option<f64>,
}

impl SpectralResult {
    pub fn kernel_eigenvalue(&self) -> Complex64 {
        self.eigenvalues[self.kernel_index]
    }

    /// Non-kernel eigenvalues in ascending real-part order.
    pub fn excited(&self) -> Vec<Complex64> {
        self.eigenvalues.iter().enumerate().filter(|(i, _)| *i != self.kernel_index).map(|(_, z)| *z).collect()
    }

    /// Real part of the first eigenvalue above the kernel.
    pub fn gap(&self) -> f64 {
        self.excited()[0].re
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn nrm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct ShiftInvert {
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    n: usize,
}

impl ShiftInvert {
    fn new(a: &CsrMatrix, sigma: f64) -> Result<Self> {
        let m = a.to_faer_shifted(sigma)?;
        let lu = m.sp_lu().map_err(|e| Error::Solver { message: format!("sparse LU failed: {e:?}"), residuals: vec![] })?;
        Ok(Self { lu, n: a.nrows })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut m = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        self.lu.solve_in_place(m.as_mut());
        (0..self.n).map(|i| m.read(i, 0)).collect()
    }
}

/// Eigenvalues of `A` nearest the shift (the low-lying spectrum for shifts
/// just left of it) by shift-invert Arnoldi with explicit restarts.
///
/// If `reference` is given, the kernel eigenpair is the one with the largest
/// overlap with it; otherwise the eigenvalue of smallest modulus.
pub fn smallest_eigenvalues(a: &CsrMatrix, opts: &EigenOptions, reference: Option<&[f64]>) -> Result<SpectralResult> {
    if opts.k < 2 {
        return Err(Error::Usage("request at least two eigenvalues".into()));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::Usage("tolerance must be positive".into()));
    }
    let n = a.nrows;
    let m = opts.krylov_dim.max(2 * opts.k + 4).min(n);
    let op = ShiftInvert::new(a, opts.shift)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut start: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    let mut best: Option<(f64, SpectralResult)> = None;

    for _ in 0..=opts.max_restarts {
        let (basis, h) = arnoldi(&op, &start, m);
        let mm = basis.len() - 1;
        let hm = Mat::<f64>::from_fn(mm, mm, |i, j| h[(i, j)]);
        let evd = hm.eigendecomposition::<c64>();
        let s = evd.s().column_vector();
        let u = evd.u();
        let mut order: Vec<usize> = (0..mm).collect();
        order.sort_by(|&i, &j| {
            let (a, b) = (s.read(i), s.read(j));
            (b.re * b.re + b.im * b.im).total_cmp(&(a.re * a.re + a.im * a.im))
        });
        let take = opts.k.min(mm);
        let mut pairs = Vec::with_capacity(take);
        for &q in order.iter().take(take) {
            let th = s.read(q);
            let th = Complex64::new(th.re, th.im);
            let lam = Complex64::new(opts.shift, 0.0) + 1.0 / th;
            let mut yr = vec![0.0; n];
            let mut yi = vec![0.0; n];
            for (col, bv) in basis.iter().take(mm).enumerate() {
                let c = u.read(col, q);
                for r in 0..n {
                    yr[r] += c.re * bv[r];
                    yi[r] += c.im * bv[r];
                }
            }
            normalize_phase(&mut yr, &mut yi);
            let ar = a.matvec(&yr);
            let ai = a.matvec(&yi);
            let mut res2 = 0.0;
            for r in 0..n {
                let re = ar[r] - lam.re * yr[r] + lam.im * yi[r];
                let im = ai[r] - lam.re * yi[r] - lam.im * yr[r];
                res2 += re * re + im * im;
            }
            let norm = (dot(&yr, &yr) + dot(&yi, &yi)).sqrt();
            pairs.push((lam, res2.sqrt() / norm, yr, yi));
        }
        pairs.sort_by(|a, b| a.0.re.total_cmp(&b.0.re).then(a.0.im.total_cmp(&b.0.im)));
        let worst = pairs.iter().map(|p| p.1).fold(0.0, f64::max);
        let result = package(pairs, opts.k, reference);
        let better = best.as_ref().map_or(true, |(w, _)| worst < *w);
        if better {
            best = Some((worst, result));
        }
        if worst <= opts.tol {
            break;
        }
        let (_, r) = best.as_ref().unwrap();
        start = vec![0.0; n];
        for (vr, vi) in r.vectors_re.iter().zip(&r.vectors_im) {
            for i in 0..n {
                start[i] += vr[i] + vi[i];
            }
        }
    }
    let (worst, result) = best.unwrap();
    if worst > opts.tol {
        return Err(Error::Solver { message: format!("Arnoldi did not reach tolerance {:e}", opts.tol), residuals: result.residuals });
    }
    Ok(result)
}

fn normalize_phase(yr: &mut [f64], yi: &mut [f64]) {
    let (mut k, mut best) = (0, -1.0);
    for i in 0..yr.len() {
        let m = yr[i] * yr[i] + yi[i] * yi[i];
        if m > best {
            best = m;
            k = i;
        }
    }
    let z = Complex64::new(yr[k], yi[k]);
    let rot = z.conj() / z.norm();
    let norm = (dot(yr, yr) + dot(yi, yi)).sqrt();
    for i in 0..yr.len() {
        let w = Complex64::new(yr[i], yi[i]) * rot / norm;
        yr[i] = w.re;
        yi[i] = w.im;
    }
}

type Pairs = Vec<(Complex64, f64, Vec<f64>, Vec<f64>)>;

fn package(pairs: Pairs, which: usize, reference: Option<&[f64]>) -> SpectralResult {
    let mut eigenvalues = Vec::new();
    let mut residuals = Vec::new();
    let mut vectors_re = Vec::new();
    let mut vectors_im = Vec::new();
    for (l, r, vr, vi) in pairs {
        eigenvalues.push(l);
        residuals.push(r);
        vectors_re.push(vr);
        vectors_im.push(vi);
    }
    let (kernel_index, kernel_overlap) = match reference {
        Some(refv) => {
            let rn = nrm(refv);
            let ov: Vec<f64> = vectors_re
                .iter()
                .zip(&vectors_im)
                .map(|(vr, vi)| {
                    let c = Complex64::new(dot(vr, refv), dot(vi, refv));
                    c.norm() / (rn * (dot(vr, vr) + dot(vi, vi)).sqrt())
                })
                .collect();
            let (k, o) = ov.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
            (k, Some(*o))
        }
        None => {
            let (k, _) = eigenvalues.iter().enumerate().min_by(|a, b| a.1.norm().total_cmp(&b.1.norm())).unwrap();
            (k, None)
        }
    };
    SpectralResult { eigenvalues, residuals, which, vectors_re, vectors_im, kernel_index, kernel_overlap }
}

/// Arnoldi with twice-iterated Gram-Schmidt; returns the basis (length
/// `m + 1`, shorter on breakdown) and the Hessenberg matrix.
fn arnoldi(op: &ShiftInvert, start: &[f64], m: usize) -> (Vec<Vec<f64>>, DMatrix<f64>) {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    let s = nrm(start);
    basis.push(start.iter().map(|v| v / s).collect());
    let mut h = DMatrix::zeros(m + 1, m);
    for j in 0..m {
        let mut w = op.solve(&basis[j]);
        for _ in 0..2 {
            for (i, b) in basis.iter().enumerate() {
                let c = dot(&w, b);
                h[(i, j)] += c;
                w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let hn = nrm(&w);
        h[(j + 1, j)] = hn;
        if hn < 1e-13 * h.column(j).norm() {
            let k = j + 1;
            let mut hh = DMatrix::zeros(k + 1, k);
            hh.copy_from(&h.view((0, 0), (k + 1, k)));
            basis.push(vec![0.0; w.len()]);
            return (basis, hh);
        }
        basis.push(w.iter().map(|v| v / hn).collect());
    }
    (basis, h)
}

#[derive(Clone, Debug)]
pub struct KramersSpectrum {
    pub result: SpectralResult,
    /// `||K sqrt(G)|| / ||sqrt(G)||`.
    pub kernel_residual: f64,
    pub zeta1: f64,
}

/// Assemble and solve the Kramers operator; the kernel is matched against `sqrt(G)`.
pub fn kramers_spectrum(p: &Potential, hp: &Hyperparams, grid: &PhaseGrid, opts: &EigenOptions) -> Result<KramersSpectrum> {
    let op = assemble_kramers(p, hp, grid)?;
    let g = sqrt_gibbs(p, hp.beta, grid);
    let kernel_residual = nrm(&op.matrix.matvec(&g)) / nrm(&g);
    let result = smallest_eigenvalues(&op.matrix, opts, Some(&g))?;
    let zeta1 = result.gap();
    Ok(KramersSpectrum { result, kernel_residual, zeta1 })
}

#[derive(Clone, Debug)]
pub struct SemigroupDecay {
    pub rate: f64,
    pub r_squared: f64,
    pub times: Vec<f64>,
    /// Norm of the component orthogonal to the kernel.
    pub norms: Vec<f64>,
    /// Full norm of the state.
    pub total_norms: Vec<f64>,
    /// Fit quality below 0.9.
    pub multimode: bool,
}

/// Implicit-Euler evolution of `d psi/dt = -A psi` and an exponential fit of
/// the non-kernel component over `[0.2 T, T]`.
pub fn semigroup_decay(a: &CsrMatrix, psi0: &[f64], kernel: &[f64], t_end: f64, dt: f64) -> Result<SemigroupDecay> {
    if !(t_end > 0.0 && dt > 0.0) {
        return Err(Error::Usage("horizon and step must be positive".into()));
    }
    let steps = (t_end / dt).round() as usize;
    let n = a.nrows;
    let op = ShiftInvert::new(&a.scaled(dt), -1.0)?;
    let kn = nrm(kernel);
    let khat: Vec<f64> = kernel.iter().map(|v| v / kn).collect();
    let p0 = nrm(psi0);
    let mut psi: Vec<f64> = psi0.iter().map(|v| v / p0).collect();
    let orth = |x: &[f64]| {
        let c = dot(x, &khat);
        x.iter().zip(&khat).map(|(a, b)| (a - c * b).powi(2)).sum::<f64>().sqrt()
    };
    let mut times = vec![0.0];
    let mut norms = vec![orth(&psi)];
    let mut total_norms = vec![1.0];
    for k in 1..=steps {
        psi = op.solve(&psi);
        times.push(k as f64 * dt);
        norms.push(orth(&psi));
        total_norms.push(nrm(&psi));
    }
    debug_assert_eq!(psi.len(), n);
    if norms[0] <= 1e-10 {
        return Ok(SemigroupDecay { rate: 0.0, r_squared: 1.0, times, norms, total_norms, multimode: false });
    }
    let (ts, ys): (Vec<f64>, Vec<f64>) =
        times.iter().zip(&norms).filter(|(t, _)| **t >= 0.2 * t_end).map(|(t, y)| (*t, y.ln())).unzip();
    let (slope, _, r2) = linear_fit(&ts, &ys);
    let multimode = r2 < 0.9;
    if multimode {
        log::warn!("semigroup decay fit r^2 = {r2:.3}; curve is multi-mode");
    }
    Ok(SemigroupDecay { rate: -slope, r_squared: r2, times, norms, total_norms, multimode })
}

/// Ordinary least squares `y = slope x + intercept`; returns `(slope, intercept, r^2)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, my - slope * mx, r2)
}

#[derive(Clone, Debug)]
pub struct CommutatorReport {
    /// `max |[A, A*] - 2 sqrt(mu) I|` on interior rows.
    pub a_astar: f64,
    /// `max |[A, C]|` on interior rows.
    pub a_c: f64,
    /// `max |[A, T] - C|` on interior rows.
    pub a_t_minus_c: f64,
    /// `max |([C, T] + f'' A) g|` on interior rows for a smooth bump `g`.
    pub c_t_plus_hess_a: f64,
}

/// Discrete first-order operators of the hypocoercive splitting.
pub struct SplitOperators {
    pub a: CsrMatrix,
    pub a_star: CsrMatrix,
    pub c: CsrMatrix,
    pub t: CsrMatrix,
    pub hess: CsrMatrix,
}

/// `A = c D+_v`, `A* = c(-D-_v + (2/beta) S-V)`, `C = c D0_x`,
/// `T = (S-V) D0_x - f'(x) D+_v` with `c = (s/4)^(1/4)` and
/// `(S-V g)_j = v_{j-1} g_{j-1}`.
pub fn split_operators(p: &Potential, hp: &Hyperparams, grid: &PhaseGrid) -> SplitOperators {
    let n = grid.len();
    let c = (hp.s / 4.0).powf(0.25);
    let (mut dp, mut dm, mut smv, mut dcx, mut fpd, mut fpp) = (vec![], vec![], vec![], vec![], vec![], vec![]);
    for i in 0..grid.nx {
        let (_, fp, fh) = p.eval1(grid.x(i));
        for j in 0..grid.nv {
            let r = grid.idx(i, j);
            dp.push((r, r, -1.0 / grid.hv));
            if j + 1 < grid.nv {
                dp.push((r, r + 1, 1.0 / grid.hv));
            }
            dm.push((r, r, 1.0 / grid.hv));
            if j > 0 {
                dm.push((r, r - 1, -1.0 / grid.hv));
                smv.push((r, r - 1, grid.v(j - 1)));
            }
            if i > 0 {
                dcx.push((r, grid.idx(i - 1, j), -0.5 / grid.hx));
            }
            if i + 1 < grid.nx {
                dcx.push((r, grid.idx(i + 1, j), 0.5 / grid.hx));
            }
            fpd.push((r, r, fp));
            fpp.push((r, r, fh));
        }
    }
    let m = |t| CsrMatrix::from_triplets(n, n, t);
    let (dp, dm, smv, dcx, fpd, hess) = (m(dp), m(dm), m(smv), m(dcx), m(fpd), m(fpp));
    let a = dp.scaled(c);
    let a_star = dm.axpby(-c, &smv, c * 2.0 / hp.beta);
    let cx = dcx.scaled(c);
    let t = smv.matmul(&dcx).axpby(1.0, &fpd.matmul(&dp), -1.0);
    SplitOperators { a, a_star, c: cx, t, hess }
}

/// Residuals of the commutator identities on rows at least two nodes from the boundary.
pub fn commutator_residuals(p: &Potential, hp: &Hyperparams, grid: &PhaseGrid) -> Result<CommutatorReport> {
    if p.dim() != 1 {
        return Err(Error::Usage("commutators are assembled for one-dimensional potentials".into()));
    }
    let ops = split_operators(p, hp, grid);
    let interior = |r: usize| {
        let (i, j) = (r / grid.nv, r % grid.nv);
        i >= 2 && i + 2 < grid.nx && j >= 2 && j + 2 < grid.nv
    };
    let n = grid.len();
    let aa = ops.a.commutator(&ops.a_star).axpby(1.0, &CsrMatrix::identity(n), -2.0 * hp.mu.sqrt());
    let ac = ops.a.commutator(&ops.c);
    let at = ops.a.commutator(&ops.t).axpby(1.0, &ops.c, -1.0);

    let xm = 0.5 * (grid.x_range.0 + grid.x_range.1);
    let sx = (grid.x_range.1 - grid.x_range.0) / 8.0;
    let sv = (grid.v_range.1 - grid.v_range.0) / 8.0;
    let mut g = Vec::with_capacity(n);
    for i in 0..grid.nx {
        for j in 0..grid.nv {
            let (x, v) = ((grid.x(i) - xm) / sx, grid.v(j) / sv);
            g.push((-(x * x + v * v) / 2.0).exp());
        }
    }
    let ct_g = {
        let tg = ops.t.matvec(&g);
        let cg = ops.c.matvec(&g);
        let ctg = ops.c.matvec(&tg);
        let tcg = ops.t.matvec(&cg);
        let hag = ops.hess.matvec(&ops.a.matvec(&g));
        (0..n).map(|r| ctg[r] - tcg[r] + hag[r]).collect::<Vec<_>>()
    };
    let c_t_plus_hess_a = (0..n).filter(|&r| interior(r)).fold(0.0_f64, |m, r| m.max(ct_g[r].abs()));
    Ok(CommutatorReport {
        a_astar: aa.max_abs_on_rows(interior),
        a_c: ac.max_abs_on_rows(interior),
        a_t_minus_c: at.max_abs_on_rows(interior),
        c_t_plus_hess_a,
    })
}

#[derive(Clone, Debug)]
pub struct GibbsDistribution {
    pub beta: f64,
    /// `integral exp(-(2 f + v^2) / beta) dx dv`.
    pub z: f64,
    /// Normalized density on the grid nodes, x-major.
    pub values: Vec<f64>,
    pub mean_v2: f64,
    pub mean_x2: f64,
    pub mean_f: f64,
    potential: Potential,
}

impl GibbsDistribution {
    pub fn density(&self, x: f64, v: f64) -> f64 {
        (-(2.0 * self.potential.eval1(x).0 + v * v) / self.beta).exp() / self.z
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }
}

fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    (0..n).map(|i| if i == 0 || i == n - 1 { 0.5 * h } else { h }).collect()
}

/// Gibbs density `exp(-(2 f + v^2) / beta) / Z` with `Z` by tensor trapezoid.
///
/// Confining potentials whose boundary ring holds more than `1e-6` of the
/// unnormalized mass are rejected.
pub fn gibbs_density(p: &Potential, beta: f64, grid: &PhaseGrid) -> Result<GibbsDistribution> {
    if p.dim() != 1 {
        return Err(Error::Usage("phase-space Gibbs densities need a one-dimensional potential".into()));
    }
    if !(beta > 0.0) {
        return Err(Error::Domain(format!("beta must be positive, got {beta}")));
    }
    let wx = trapezoid_weights(grid.nx, grid.hx);
    let wv = trapezoid_weights(grid.nv, grid.hv);
    let mut raw = Vec::with_capacity(grid.len());
    let (mut z, mut ring, mut mv2, mut mx2, mut mf) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..grid.nx {
        let x = grid.x(i);
        let f = p.eval1(x).0;
        for j in 0..grid.nv {
            let v = grid.v(j);
            let d = (-(2.0 * f + v * v) / beta).exp();
            raw.push(d);
            let w = wx[i] * wv[j];
            z += w * d;
            mv2 += w * d * v * v;
            mx2 += w * d * x * x;
            mf += w * d * f;
            if i == 0 || j == 0 || i + 1 == grid.nx || j + 1 == grid.nv {
                ring += w * d;
            }
        }
    }
    if p.is_confining() && ring / z > 1e-6 {
        return Err(Error::BoxTooSmall { boundary_fraction: ring / z });
    }
    Ok(GibbsDistribution {
        beta,
        z,
        values: raw.iter().map(|d| d / z).collect(),
        mean_v2: mv2 / z,
        mean_x2: mx2 / z,
        mean_f: mf / z,
        potential: p.clone(),
    })
}

/// `E[f]` under the position marginal `exp(-2 f / beta)` on the potential's
/// box, tensor trapezoid with `n` nodes per axis (endpoints included).
pub fn position_gibbs_mean(p: &Potential, beta: f64, n: usize) -> Result<f64> {
    if !(beta > 0.0) || n < 3 {
        return Err(Error::Domain("need beta > 0 and at least 3 nodes".into()));
    }
    let d = p.dim();
    let pts: Vec<Vec<f64>> = crate::potentials::box_grid(p.lower(), p.upper(), n).collect();
    let fs: Vec<f64> = pts.iter().map(|x| p.value(x)).collect();
    let fmin = fs.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut z, mut m) = (0.0, 0.0);
    for (idx, f) in fs.iter().enumerate() {
        let mut w = 1.0;
        let mut rem = idx;
        for _ in 0..d {
            let i = rem % n;
            rem /= n;
            if i == 0 || i == n - 1 {
                w *= 0.5;
            }
        }
        let e = w * (-2.0 * (f - fmin) / beta).exp();
        z += e;
        m += e * f;
    }
    Ok(m / z)
}

/// Witten-form Poincare constant of the Gibbs measure on phase space.
#[derive(Clone, Debug)]
pub struct PoincareEstimate {
    pub chi: f64,
    pub eigenvalues: Vec<f64>,
    /// More than one eigenvalue within `1e-3 chi`-scale of zero.
    pub cluster_warning: bool,
}

/// `chi = lambda_1 / eps` for `-eps Lap + |grad H|^2/(4 eps) - Lap H / 2`
/// with `H = f(x) + v^2/2` and `eps = beta / 2`.
pub fn phase_space_poincare(p: &Potential, beta: f64, grid: &PhaseGrid) -> Result<PoincareEstimate> {
    if p.dim() != 1 {
        return Err(Error::Usage("phase-space Poincare estimates need a one-dimensional potential".into()));
    }
    let pg = PositionGrid { lower: vec![grid.x_range.0, grid.v_range.0], upper: vec![grid.x_range.1, grid.v_range.1], n: vec![grid.nx, grid.nv] };
    let eps = 0.5 * beta;
    let m = assemble_witten(&pg, eps, |z| {
        let (_, fp, fh) = p.eval1(z[0]);
        (fp * fp + z[1] * z[1], fh + 1.0)
    });
    let ground: Vec<f64> = {
        let fs: Vec<f64> = grid.xs().iter().map(|&x| p.eval1(x).0).collect();
        let fmin = fs.iter().copied().fold(f64::INFINITY, f64::min);
        let mut g = Vec::with_capacity(grid.len());
        for f in &fs {
            for v in grid.vs() {
                g.push((-(f - fmin + 0.5 * v * v) / (2.0 * eps)).exp());
            }
        }
        g
    };
    let opts = EigenOptions { k: 4, shift: -0.01 * eps, ..EigenOptions::default() };
    let r = smallest_eigenvalues(&m, &opts, Some(&ground))?;
    let ex: Vec<f64> = r.excited().iter().map(|z| z.re).collect();
    let lam1 = ex[0];
    let cluster_warning = lam1 < 1e-3 * ex.last().copied().unwrap_or(lam1);
    if cluster_warning {
        log::warn!("eigenvalue cluster at zero beyond the kernel; sublevel sets may be disconnected");
    }
    Ok(PoincareEstimate { chi: lam1 / eps, eigenvalues: r.eigenvalues.iter().map(|z| z.re).collect(), cluster_warning })
}

#[derive(Clone, Debug)]
pub struct ExponentLaw {
    pub betas: Vec<f64>,
    pub zetas: Vec<f64>,
    /// Slope of `ln zeta_1` against `1 / beta`.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Regress `ln zeta_1` on `1/beta` at fixed `mu` (`s = (2 beta sqrt(mu))^2`).
pub fn exponent_law(p: &Potential, mu: f64, betas: &[f64], n: usize, opts: &EigenOptions) -> Result<ExponentLaw> {
    if betas.len() < 2 {
        return Err(Error::Usage("need at least two temperatures".into()));
    }
    let mut zetas = Vec::with_capacity(betas.len());
    for &beta in betas {
        let s = (2.0 * beta * mu.sqrt()).powi(2);
        let hp = Hyperparams::from_mu(s, mu)?;
        let grid = PhaseGrid::auto(p, hp.beta, n, n)?;
        zetas.push(kramers_spectrum(p, &hp, &grid, opts)?.zeta1);
    }
    let x: Vec<f64> = betas.iter().map(|b| 1.0 / b).collect();
    let y: Vec<f64> = zetas.iter().map(|z| z.ln()).collect();
    let (slope, intercept, r_squared) = linear_fit(&x, &y);
    Ok(ExponentLaw { betas: betas.to_vec(), zetas, slope, intercept, r_squared })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_setup(n: usize) -> (Potential, Hyperparams, PhaseGrid) {
        let p = Potential::quadratic(0.5);
        let hp = Hyperparams::derive(0.04, 2.0 / 3.0).unwrap();
        let grid = PhaseGrid::auto(&p, hp.beta, n, n).unwrap();
        (p, hp, grid)
    }

    #[test]
    fn auto_grid_covers_gibbs() {
        let (_, hp, grid) = quad_setup(64);
        let sx = (hp.beta / 1.0).sqrt();
        let sv = (hp.beta / 2.0).sqrt();
        assert!(grid.x_range.1 >= 6.0 * sx && grid.v_range.1 >= 6.0 * sv);
    }

    #[test]
    fn kramers_row_structure() {
        let (_, hp, grid) = quad_setup(40);
        let flat = Potential::flat(1).with_box(vec![-5.0], vec![5.0]).unwrap();
        let op = assemble_kramers(&flat, &hp, &grid).unwrap();
        assert!(op.matrix.max_row_nnz() <= 9);
        let diff = 0.5 * hp.s.sqrt();
        for i in 0..grid.nx {
            for j in 1..grid.nv - 1 {
                let r = grid.idx(i, j);
                let v = grid.v(j);
                let same_column: f64 = op.matrix.row(r).filter(|(c, _)| c / grid.nv == i).map(|(_, w)| w).sum();
                let upwind_diagonal = 1.5 * v.abs() / grid.hx;
                let reaction = -diff * (1.0 / hp.beta - v * v / (hp.beta * hp.beta));
                assert!((same_column - upwind_diagonal - reaction).abs() < 1e-9 * (1.0 + same_column.abs()));
            }
        }
    }

    #[test]
    fn rescaling_multiplies_spectrum() {
        let (p, hp, grid) = quad_setup(40);
        let op = assemble_kramers(&p, &hp, &grid).unwrap();
        let opts = EigenOptions { k: 4, ..EigenOptions::default() };
        let r = smallest_eigenvalues(&op.matrix, &opts, None).unwrap();
        let scaled = op.scaled(hp.beta);
        let opts_s = EigenOptions { shift: opts.shift * hp.beta, ..opts };
        let rs = smallest_eigenvalues(&scaled.matrix, &opts_s, None).unwrap();
        for (a, b) in r.eigenvalues.iter().zip(&rs.eigenvalues) {
            assert!((a * hp.beta - b).norm() < 1e-8 * (1.0 + b.norm()));
        }
    }

    #[test]
    fn quadratic_kramers_gap_small_grid() {
        let (p, hp, grid) = quad_setup(60);
        let k = kramers_spectrum(&p, &hp, &grid, &EigenOptions::default()).unwrap();
        let exact = 1.0 - 0.5f64.sqrt();
        assert!((k.zeta1 / exact - 1.0).abs() < 0.05, "{}", k.zeta1);
        assert!(k.result.kernel_overlap.unwrap() >= 0.99);
        assert!(k.kernel_residual < 2e-2);
    }

    #[test]
    fn quadratic_kramers_matches_dense_oracle() {
        let p = Potential::quadratic(0.5);
        let hp = Hyperparams::derive(0.04, 2.0 / 3.0).unwrap();
        let grid = PhaseGrid::auto(&p, hp.beta, 32, 32).unwrap();
        let op = assemble_kramers(&p, &hp, &grid).unwrap();
        let mut dense: Vec<Complex64> = op.matrix.to_dense().complex_eigenvalues().iter().copied().collect();
        dense.sort_by(|a, b| a.re.total_cmp(&b.re));
        let r = smallest_eigenvalues(&op.matrix, &EigenOptions { k: 3, ..EigenOptions::default() }, None).unwrap();
        for z in &r.eigenvalues {
            assert!(dense.iter().any(|d| (d - z).norm() < 1e-7), "{z} not in dense spectrum");
        }
    }

    #[test]
    fn witten_quadratic_ladder() {
        let p = Potential::quadratic(0.5);
        let grid = PositionGrid::new(vec![-3.0], vec![3.0], vec![400]).unwrap();
        let s = 0.1;
        let op = assemble_overdamped_witten(&p, s, &grid).unwrap();
        assert!(op.matrix.asymmetry() <= 1e-12);
        let g = overdamped_ground_state(&p, s, &grid);
        assert!(nrm(&op.matrix.matvec(&g)) / nrm(&g) <= 1e-3);
        let r = smallest_eigenvalues(&op.matrix, &EigenOptions { k: 3, shift: -0.01, ..EigenOptions::default() }, Some(&g)).unwrap();
        assert!((r.gap() / 0.5 - 1.0).abs() < 0.02, "{:?}", r.eigenvalues);
        assert!((r.excited()[1].re / 1.0 - 1.0).abs() < 0.02);
    }

    #[test]
    fn witten_dense_oracle() {
        let p = Potential::tilted_double_well(0.1);
        let grid = PositionGrid::new(vec![-2.0], vec![2.0], vec![100]).unwrap();
        let op = assemble_overdamped_witten(&p, 0.3, &grid).unwrap();
        let mut dense: Vec<f64> = nalgebra::SymmetricEigen::new(op.matrix.to_dense()).eigenvalues.iter().copied().collect();
        dense.sort_by(|a, b| a.total_cmp(b));
        let r = smallest_eigenvalues(&op.matrix, &EigenOptions { k: 3, ..EigenOptions::default() }, None).unwrap();
        for (a, b) in r.eigenvalues.iter().zip(&dense) {
            assert!((a.re - b).abs() < 1e-8 && a.im.abs() < 1e-8);
        }
    }

    #[test]
    fn gibbs_quadratic_oracle() {
        let (p, _, grid) = quad_setup(150);
        let beta = 0.1;
        let g = gibbs_density(&p, beta, &grid).unwrap();
        let z = std::f64::consts::PI * beta / 0.5f64.sqrt();
        assert!((g.z / z - 1.0).abs() < 1e-8, "{} vs {z}", g.z);
        assert!((g.mean_v2 - 0.05).abs() < 1e-8);
        assert!((g.mean_x2 - 0.1).abs() < 1e-8);
        assert!(g.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn gibbs_flat_is_uniform_in_x() {
        let p = Potential::flat(1);
        let grid = PhaseGrid::new((-1.0, 1.0), (-2.0, 2.0), 40, 40).unwrap();
        let g = gibbs_density(&p, 0.1, &grid).unwrap();
        for j in 0..grid.nv {
            let col: Vec<f64> = (0..grid.nx).map(|i| g.values[grid.idx(i, j)]).collect();
            assert!(col.iter().all(|&c| (c - col[0]).abs() <= 1e-15 * col[0].max(1e-300)));
        }
    }

    #[test]
    fn gibbs_small_box_rejected() {
        let p = Potential::quadratic(0.5);
        let grid = PhaseGrid::new((-0.3, 0.3), (-1.5, 1.5), 40, 40).unwrap();
        assert!(matches!(gibbs_density(&p, 0.1, &grid), Err(Error::BoxTooSmall { .. })));
    }

    #[test]
    fn commutators() {
        let p = Potential::tilted_double_well(0.1);
        let hp = Hyperparams::derive(0.04, 2.0 / 3.0).unwrap();
        let grid = PhaseGrid::new((-2.0, 2.0), (-1.5, 1.5), 40, 40).unwrap();
        let r = commutator_residuals(&p, &hp, &grid).unwrap();
        assert!(r.a_astar <= 1e-10, "{r:?}");
        assert!(r.a_c <= 1e-12);
        assert!(r.a_t_minus_c <= 1e-10);
        let r2 = commutator_residuals(&p, &hp, &grid.refined().unwrap()).unwrap();
        let ratio = r.c_t_plus_hess_a / r2.c_t_plus_hess_a;
        assert!((3.5..4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn semigroup_kernel_is_stationary() {
        let (p, hp, grid) = quad_setup(40);
        let op = assemble_kramers(&p, &hp, &grid).unwrap();
        let g = sqrt_gibbs(&p, hp.beta, &grid);
        let d = semigroup_decay(&op.matrix, &g, &g, 5.0, 0.05).unwrap();
        assert_eq!(d.rate, 0.0);
        assert!((d.total_norms.last().unwrap() - 1.0).abs() < 0.01);
    }

    #[test]
    fn poincare_gaussian() {
        let p = Potential::quadratic(1.0);
        let beta = 0.1;
        let grid = PhaseGrid::auto(&p, beta, 60, 60).unwrap();
        let e = phase_space_poincare(&p, beta, &grid).unwrap();
        assert!((e.chi / 20.0 - 1.0).abs() < 0.02, "{}", e.chi);
        let p = Potential::quadratic(0.5);
        let grid = PhaseGrid::auto(&p, beta, 60, 60).unwrap();
        let e = phase_space_poincare(&p, beta, &grid).unwrap();
        assert!((e.chi / 10.0 - 1.0).abs() < 0.02, "{}", e.chi);
    }

    #[test]
    fn position_mean_increases_with_beta() {
        let p = Potential::tilted_double_well(0.1);
        let a = position_gibbs_mean(&p, 0.1, 2001).unwrap();
        let b = position_gibbs_mean(&p, 0.2, 2001).unwrap();
        assert!(b > a);
    }
}
