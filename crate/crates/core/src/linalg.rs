//! Dense numerical kernels shared by the attack and defense analyses.
//!
//! Everything here works on `nalgebra` dynamic matrices and makes rank
//! decisions through an explicit [`RankPolicy`] so that repeated runs take
//! identical decisions.

use alloc::vec::Vec;

use nalgebra::{Complex, ComplexField, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};

/// Singular-value cutoff used for every rank decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankPolicy {
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for RankPolicy {
    fn default() -> Self {
        Self { rel_tol: 1e-9, abs_tol: 1e-12 }
    }
}

impl RankPolicy {
    pub fn new(rel_tol: f64, abs_tol: f64) -> Result<Self> {
        if !(rel_tol > 0.0) || !(abs_tol >= 0.0) || !rel_tol.is_finite() || !abs_tol.is_finite() {
            return Err(invalid("rank policy needs rel_tol > 0 and abs_tol >= 0"));
        }
        Ok(Self { rel_tol, abs_tol })
    }

    /// Singular values at or below this value count as zero.
    pub fn threshold(&self, scale: f64) -> f64 {
        (self.rel_tol * scale).max(self.abs_tol)
    }

    /// True when `sigma` sits within a factor of ten of the cutoff.
    fn is_borderline(&self, sigma: f64, scale: f64) -> bool {
        let thr = self.threshold(scale);
        sigma > thr / 10.0 && sigma < thr * 10.0
    }
}

pub(crate) fn ensure_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(invalid(alloc::format!("{what} has non-finite entries")))
    }
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().singular_values().max()
}

/// Singular values (padded with zeros to `ncols`) and the full right
/// singular basis as columns of an `ncols x ncols` matrix.
fn full_right_svd(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (r, c) = m.shape();
    if c == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let padded = if r < c {
        let mut p = DMatrix::zeros(c, c);
        p.view_mut((0, 0), (r, c)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let v = svd.v_t.expect("right singular vectors requested").transpose();
    (svd.singular_values.iter().copied().collect(), v)
}

/// Full left singular basis (`nrows x nrows`) with the matching singular
/// values, padded with zeros.
fn full_left_svd(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (sig, v) = full_right_svd(&m.transpose());
    (sig, v)
}

fn complex_full_right_svd(m: &DMatrix<Complex<f64>>) -> (Vec<f64>, DMatrix<Complex<f64>>) {
    let (r, c) = m.shape();
    let padded = if r < c {
        let mut p = DMatrix::zeros(c, c);
        p.view_mut((0, 0), (r, c)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let v = svd.v_t.expect("right singular vectors requested").adjoint();
    (svd.singular_values.iter().copied().collect(), v)
}

/// A linear subspace of `R^n` stored as an orthonormal basis (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    basis: DMatrix<f64>,
}

impl Subspace {
    pub fn zero(ambient_dim: usize) -> Self {
        Self { basis: DMatrix::zeros(ambient_dim, 0) }
    }

    pub fn full(ambient_dim: usize) -> Self {
        Self { basis: DMatrix::identity(ambient_dim, ambient_dim) }
    }

    /// Orthonormal basis of the column span of `vectors`.
    pub fn span(vectors: &DMatrix<f64>, policy: &RankPolicy) -> Self {
        let n = vectors.nrows();
        if vectors.ncols() == 0 || n == 0 {
            return Self::zero(n);
        }
        let svd = vectors.clone().svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let scale = svd.singular_values.max();
        let thr = policy.threshold(scale);
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] > thr)
            .collect();
        Self { basis: select_columns(&u, &keep) }
    }

    /// Span of the given vectors, which must all share one length.
    pub fn span_of(vectors: &[DVector<f64>], ambient_dim: usize, policy: &RankPolicy) -> Self {
        let mut m = DMatrix::zeros(ambient_dim, vectors.len());
        for (j, v) in vectors.iter().enumerate() {
            m.set_column(j, v);
        }
        Self::span(&m, policy)
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn projector(&self) -> DMatrix<f64> {
        &self.basis * self.basis.transpose()
    }

    /// Distance from `v` to the subspace.
    pub fn residual(&self, v: &DVector<f64>) -> f64 {
        if self.dim() == 0 {
            return v.norm();
        }
        let coords = self.basis.tr_mul(v);
        (v - &self.basis * coords).norm()
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        self.residual(v) <= tol * v.norm().max(1.0)
    }

    /// Spectral norm of the difference of orthogonal projectors; 1 when the
    /// dimensions differ.
    pub fn distance(&self, other: &Subspace) -> f64 {
        if self.ambient_dim() != other.ambient_dim() || self.dim() != other.dim() {
            return 1.0;
        }
        if self.dim() == 0 {
            return 0.0;
        }
        spectral_norm(&(self.projector() - other.projector()))
    }

    /// Image of the subspace under an invertible map. Dimension is kept.
    pub fn image_invertible(&self, map: &DMatrix<f64>) -> Self {
        let n = self.ambient_dim();
        let k = self.dim();
        if k == 0 {
            return Self::zero(n);
        }
        let mapped = map * &self.basis;
        let svd = mapped.svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        order.truncate(k);
        order.sort_unstable();
        Self { basis: select_columns(&u, &order) }
    }

    /// Largest deviation of the basis from orthonormality.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.basis.tr_mul(&self.basis);
        (g - DMatrix::identity(self.dim(), self.dim())).amax()
    }
}

fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), cols.len());
    for (j, &c) in cols.iter().enumerate() {
        out.set_column(j, &m.column(c));
    }
    out
}

/// Orthonormal basis of `ker(m)`, cutoff relative to `‖m‖₂`.
pub fn nullspace_basis(m: &DMatrix<f64>, policy: &RankPolicy) -> Result<Subspace> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(invalid("nullspace_basis needs at least one row and one column"));
    }
    ensure_finite(m, "matrix")?;
    let scale = spectral_norm(m);
    Ok(nullspace_scaled(m, scale, policy))
}

/// Kernel with the cutoff taken relative to a caller-supplied scale, for
/// matrices whose own norm is not meaningful (projected residual maps).
pub(crate) fn nullspace_scaled(m: &DMatrix<f64>, scale: f64, policy: &RankPolicy) -> Subspace {
    let c = m.ncols();
    if m.nrows() == 0 {
        return Subspace::full(c);
    }
    let (sigma, v) = full_right_svd(m);
    let thr = policy.threshold(scale);
    let keep: Vec<usize> = (0..c).filter(|&i| sigma[i] <= thr).collect();
    Subspace { basis: select_columns(&v, &keep) }
}

/// `U ∩ W` via the kernel of `(I - P_W) U`.
pub fn subspace_intersection(u: &Subspace, w: &Subspace, policy: &RankPolicy) -> Result<Subspace> {
    if u.ambient_dim() != w.ambient_dim() {
        return Err(invalid("subspace ambient dimensions differ"));
    }
    let n = u.ambient_dim();
    if u.dim() == 0 || w.dim() == 0 {
        return Ok(Subspace::zero(n));
    }
    let off = &u.basis - &w.basis * w.basis.tr_mul(&u.basis);
    let coeffs = nullspace_scaled(&off, 1.0, policy);
    if coeffs.dim() == 0 {
        return Ok(Subspace::zero(n));
    }
    let vectors = &u.basis * coeffs.basis();
    Ok(Subspace::span(&vectors, policy))
}

/// `{z : m z ∈ target}`.
pub fn preimage(m: &DMatrix<f64>, target: &Subspace, policy: &RankPolicy) -> Subspace {
    let n = m.ncols();
    let scale = spectral_norm(m).max(1.0);
    let residual_map = if target.dim() == 0 {
        m.clone()
    } else {
        m - &target.basis * target.basis.tr_mul(m)
    };
    if n == 0 {
        return Subspace::zero(0);
    }
    nullspace_scaled(&residual_map, scale, policy)
}

/// Largest `A`-invariant subspace contained in `start`.
pub fn largest_invariant_subspace(a: &DMatrix<f64>, start: &Subspace, policy: &RankPolicy) -> Subspace {
    let scale = spectral_norm(a).max(1.0);
    let mut current = start.clone();
    loop {
        if current.dim() == 0 {
            return current;
        }
        let image = a * current.basis();
        let off = &image - current.basis() * current.basis().tr_mul(&image);
        let coeffs = nullspace_scaled(&off, scale, policy);
        if coeffs.dim() == current.dim() {
            return current;
        }
        let next = current.basis() * coeffs.basis();
        current = Subspace::span(&next, policy);
    }
}

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539_398_330_063_23e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA13: f64 = 5.371920351148152e0;

fn one_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols()).map(|j| m.column(j).iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn pade_low(a: &DMatrix<f64>, coeffs: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let mut power = ident.clone();
    let mut u_even = DMatrix::zeros(n, n);
    let mut v = DMatrix::zeros(n, n);
    for k in (0..coeffs.len()).step_by(2) {
        v += &power * coeffs[k];
        u_even += &power * coeffs[k + 1];
        power = &power * &a2;
    }
    (a * u_even, v)
}

fn pade13(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let b = &PADE13;
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = a * (inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &ident * b[1]);
    let inner_v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &ident * b[0];
    (u, v)
}

fn pade_ratio(u: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let den = v - u;
    let num = v + u;
    den.lu().solve(&num).expect("Padé denominator is nonsingular inside the scaling bound")
}

/// `e^{m t}` by Padé scaling and squaring.
pub fn matrix_exponential(m: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(invalid("matrix exponential needs a square matrix"));
    }
    if !t.is_finite() {
        return Err(invalid("time must be finite"));
    }
    ensure_finite(m, "matrix")?;
    let scaled = m * t;
    let norm = one_norm(&scaled);
    for (order, theta) in THETA {
        if norm <= theta {
            let coeffs: &[f64] = match order {
                3 => &PADE3,
                5 => &PADE5,
                7 => &PADE7,
                _ => &PADE9,
            };
            let (u, v) = pade_low(&scaled, coeffs);
            return Ok(pade_ratio(&u, &v));
        }
    }
    let squarings = libm::ceil(libm::log2(norm / THETA13)).max(0.0) as i32;
    let reduced = scaled * libm::exp2(-f64::from(squarings));
    let (u, v) = pade13(&reduced);
    let mut result = pade_ratio(&u, &v);
    for _ in 0..squarings {
        result = &result * &result;
    }
    Ok(result)
}

/// Exact one-step propagator for `ż = A z + w e^{η (t - t_ref)}`: the
/// exponential of `[[A, w], [0, η]]` over `dt`, acting on `[z; e^{η(t - t_ref)}]`.
pub fn forced_exponential(a: &DMatrix<f64>, w: &DVector<f64>, eta: f64, dt: f64) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || w.len() != n {
        return Err(invalid("forcing direction does not match the state dimension"));
    }
    let mut aug = DMatrix::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(a);
    aug.view_mut((0, n), (n, 1)).copy_from(w);
    aug[(n, n)] = eta;
    matrix_exponential(&aug, dt)
}

/// One invariant zero of a state-space system with a kernel witness.
///
/// The witness satisfies `(ηI - A) z - B g = 0` and `C z + D g = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantZero {
    pub eta: Complex<f64>,
    pub state_dir: DVector<Complex<f64>>,
    pub input_dir: DVector<Complex<f64>>,
    pub residual: f64,
}

impl InvariantZero {
    pub fn is_real(&self, tol: f64) -> bool {
        self.eta.im.abs() <= tol * (1.0 + self.eta.re.abs())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PencilZeros {
    /// Finite points where the system pencil drops below its normal rank.
    pub zeros: Vec<InvariantZero>,
    /// The pencil has a nontrivial kernel for every `η` (more effective
    /// inputs than the input-output map can see).
    pub free_kernel: bool,
    /// Some rank decision fell within a factor of ten of the cutoff.
    pub uncertain: bool,
}

#[derive(Clone)]
struct StateSpace {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl StateSpace {
    fn dual(&self) -> Self {
        Self {
            a: self.a.transpose(),
            b: self.c.transpose(),
            c: self.b.transpose(),
            d: self.d.transpose(),
        }
    }
}

fn check_system(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<()> {
    let n = a.nrows();
    if !a.is_square() || n == 0 {
        return Err(invalid("A must be square and non-empty"));
    }
    if b.nrows() != n || c.ncols() != n || d.nrows() != c.nrows() || d.ncols() != b.ncols() {
        return Err(invalid("system matrix dimensions are inconsistent"));
    }
    if b.ncols() == 0 || c.nrows() == 0 {
        return Err(invalid("system needs at least one input and one output"));
    }
    ensure_finite(a, "A")?;
    ensure_finite(b, "B")?;
    ensure_finite(c, "C")?;
    ensure_finite(d, "D")
}

/// `[[sI - A, -B], [C, D]]`.
fn rosenbrock(sys: &StateSpace, s: Complex<f64>) -> DMatrix<Complex<f64>> {
    let n = sys.a.nrows();
    let m = sys.b.ncols();
    let p = sys.c.nrows();
    let mut r = DMatrix::<Complex<f64>>::zeros(n + p, n + m);
    for i in 0..n {
        for j in 0..n {
            r[(i, j)] = Complex::new(-sys.a[(i, j)], 0.0);
        }
        r[(i, i)] += s;
        for j in 0..m {
            r[(i, n + j)] = Complex::new(-sys.b[(i, j)], 0.0);
        }
    }
    for i in 0..p {
        for j in 0..n {
            r[(n + i, j)] = Complex::new(sys.c[(i, j)], 0.0);
        }
        for j in 0..m {
            r[(n + i, n + j)] = Complex::new(sys.d[(i, j)], 0.0);
        }
    }
    r
}

fn real_rosenbrock(sys: &StateSpace, s: f64) -> DMatrix<f64> {
    rosenbrock(sys, Complex::new(s, 0.0)).map(|z| z.re)
}

fn system_scale(sys: &StateSpace) -> f64 {
    sys.a.norm() + sys.b.norm() + sys.c.norm() + sys.d.norm()
}

struct Decisions<'a> {
    policy: &'a RankPolicy,
    scale: f64,
    uncertain: bool,
}

impl Decisions<'_> {
    fn rank(&mut self, sigma: &[f64]) -> usize {
        let thr = self.policy.threshold(self.scale);
        let mut r = 0;
        for &s in sigma {
            if self.policy.is_borderline(s, self.scale) {
                self.uncertain = true;
            }
            if s > thr {
                r += 1;
            }
        }
        r
    }
}

/// Columns ordered so the `rank` dominant singular directions come first.
fn ordered_basis(sigma: &[f64], basis: &DMatrix<f64>, thr: f64, dominant_first: bool) -> (DMatrix<f64>, usize) {
    let big: Vec<usize> = (0..basis.ncols()).filter(|&i| sigma.get(i).copied().unwrap_or(0.0) > thr).collect();
    let small: Vec<usize> = (0..basis.ncols()).filter(|&i| sigma.get(i).copied().unwrap_or(0.0) <= thr).collect();
    let order: Vec<usize> = if dominant_first {
        big.iter().chain(small.iter()).copied().collect()
    } else {
        small.iter().chain(big.iter()).copied().collect()
    };
    (select_columns(basis, &order), big.len())
}

/// Removes infinite zeros and output-side null structure until `D` has
/// full row rank, keeping the finite zeros intact.
fn reduce(mut sys: StateSpace, dec: &mut Decisions) -> StateSpace {
    let thr = dec.policy.threshold(dec.scale);
    loop {
        let n = sys.a.nrows();
        let p = sys.c.nrows();
        let m = sys.b.ncols();
        if n == 0 || p == 0 {
            return sys;
        }
        let (sig_d, u) = if m == 0 {
            (alloc::vec![0.0; p], DMatrix::identity(p, p))
        } else {
            full_left_svd(&sys.d)
        };
        let sigma = dec.rank(&sig_d[..p.min(m)]);
        if sigma == p {
            return sys;
        }
        let (u, _) = ordered_basis(&sig_d, &u, thr, true);
        let ud = u.tr_mul(&sys.d);
        let uc = u.tr_mul(&sys.c);
        let d_top = ud.rows(0, sigma).into_owned();
        let c_top = uc.rows(0, sigma).into_owned();
        let c_bot = uc.rows(sigma, p - sigma).into_owned();

        let (sig_c, v) = full_right_svd(&c_bot);
        let rho = dec.rank(&sig_c[..(p - sigma).min(n)]);
        if rho == 0 {
            sys = StateSpace { a: sys.a, b: sys.b, c: c_top, d: d_top };
            continue;
        }
        let (v, _) = ordered_basis(&sig_c, &v, thr, false);
        let k = n - rho;
        let at = v.tr_mul(&sys.a) * &v;
        let bt = v.tr_mul(&sys.b);
        let ct = &c_top * &v;

        let a_new = at.view((0, 0), (k, k)).into_owned();
        let a21 = at.view((k, 0), (rho, k)).into_owned();
        let b_new = bt.rows(0, k).into_owned();
        let b2 = bt.rows(k, rho).into_owned();

        let mut c_new = DMatrix::zeros(sigma + rho, k);
        c_new.view_mut((0, 0), (sigma, k)).copy_from(&ct.columns(0, k));
        c_new.view_mut((sigma, 0), (rho, k)).copy_from(&a21);
        let mut d_new = DMatrix::zeros(sigma + rho, m);
        d_new.view_mut((0, 0), (sigma, m)).copy_from(&d_top);
        d_new.view_mut((sigma, 0), (rho, m)).copy_from(&b2);

        sys = StateSpace { a: a_new, b: b_new, c: c_new, d: d_new };
    }
}

/// Finite zeros of a square system with a regular system pencil.
fn square_zeros(sys: &StateSpace, dec: &mut Decisions) -> Vec<Complex<f64>> {
    let stage1 = reduce(sys.clone(), dec);
    let stage2 = reduce(stage1.dual(), dec).dual();
    let n = stage2.a.nrows();
    if n == 0 {
        return Vec::new();
    }
    let (p, m) = stage2.d.shape();
    let reduced = if p == 0 && m == 0 {
        stage2.a.clone()
    } else {
        if p != m {
            dec.uncertain = true;
            return Vec::new();
        }
        let Some(d_inv) = stage2.d.clone().try_inverse() else {
            dec.uncertain = true;
            return Vec::new();
        };
        &stage2.a - &stage2.b * d_inv * &stage2.c
    };
    reduced.complex_eigenvalues().iter().copied().collect()
}

fn complex_rank(r: &DMatrix<Complex<f64>>, policy: &RankPolicy, dec_uncertain: &mut bool) -> usize {
    let sigma = r.clone().singular_values();
    let scale = sigma.max();
    let thr = policy.threshold(scale);
    let mut rank = 0;
    for &s in sigma.iter() {
        if policy.is_borderline(s, scale) {
            *dec_uncertain = true;
        }
        if s > thr {
            rank += 1;
        }
    }
    rank
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Kernel witness of the complex pencil at `eta` with the largest state part.
fn witness(sys: &StateSpace, eta: Complex<f64>) -> InvariantZero {
    let n = sys.a.nrows();
    let m = sys.b.ncols();
    let r = rosenbrock(sys, eta);
    let (sigma, v) = complex_full_right_svd(&r);
    let smallest = sigma.iter().copied().fold(f64::INFINITY, f64::min);
    let tie = smallest.max(1e-300) * 1e3;
    let mut best = 0;
    let mut best_state = -1.0;
    let mut best_sigma = f64::INFINITY;
    for (j, &s) in sigma.iter().enumerate() {
        if s <= tie {
            let state_norm = v.view((0, j), (n, 1)).norm();
            if state_norm > best_state + 1e-12 || (state_norm >= best_state - 1e-12 && s < best_sigma) {
                best = j;
                best_state = state_norm;
                best_sigma = s;
            }
        }
    }
    let col: DVector<Complex<f64>> = v.column(best).into_owned();
    let residual = (&r * &col).norm();
    InvariantZero {
        eta,
        state_dir: col.rows(0, n).into_owned(),
        input_dir: col.rows(n, m).into_owned(),
        residual,
    }
}

/// Invariant zeros of `(A, B, C, D)`: the finite `η` where the system pencil
/// `[[ηI - A, -B], [C, D]]` loses rank, each with a kernel witness.
pub fn pencil_zeros(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    policy: &RankPolicy,
) -> Result<PencilZeros> {
    check_system(a, b, c, d)?;
    let sys = StateSpace { a: a.clone(), b: b.clone(), c: c.clone(), d: d.clone() };
    let n = a.nrows();
    let m = b.ncols();
    let p = c.nrows();
    let scale = system_scale(&sys).max(1.0);
    let mut uncertain = false;

    let probe = 1.0 + a.norm();
    let probes = [Complex::new(0.5377 * probe, 1.8339 * probe), Complex::new(-1.3077 * probe, 0.3426 * probe)];
    let normal_rank = probes
        .iter()
        .map(|&s| complex_rank(&rosenbrock(&sys, s), policy, &mut uncertain))
        .max()
        .unwrap_or(0);
    let io_rank = normal_rank.saturating_sub(n);
    let free_kernel = normal_rank < n + m;

    let mut dec = Decisions { policy, scale, uncertain: false };
    let projected = io_rank != p || io_rank != m;
    let candidates = if io_rank == 0 {
        a.complex_eigenvalues().iter().copied().collect()
    } else if !projected {
        square_zeros(&sys, &mut dec)
    } else {
        let mut found = Vec::new();
        for seed in 1..=4u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let out = random_matrix(&mut rng, io_rank, p);
            let inp = random_matrix(&mut rng, m, io_rank);
            let square = StateSpace { a: a.clone(), b: b * &inp, c: &out * c, d: &out * d * &inp };
            let rank = probes
                .iter()
                .map(|&s| complex_rank(&rosenbrock(&square, s), policy, &mut uncertain))
                .max()
                .unwrap_or(0);
            if rank == n + io_rank {
                let mut local = Decisions { policy, scale, uncertain: false };
                found = square_zeros(&square, &mut local);
                dec.uncertain |= local.uncertain;
                break;
            }
        }
        found
    };
    uncertain |= dec.uncertain;

    let mut zeros = Vec::new();
    for eta in candidates {
        let r = rosenbrock(&sys, eta);
        if projected || io_rank == 0 {
            let sigma = r.clone().singular_values();
            let mut sorted: Vec<f64> = sigma.iter().copied().collect();
            sorted.sort_by(|x, y| y.total_cmp(x));
            let drop = sorted.get(normal_rank.saturating_sub(1)).copied().unwrap_or(0.0);
            let verify = (1e-6 * sorted[0]).max(policy.abs_tol);
            if normal_rank == 0 || drop > verify {
                continue;
            }
        }
        let w = witness(&sys, eta);
        if w.state_dir.norm() <= policy.threshold(1.0) {
            continue;
        }
        if w.residual > 1e-6 * scale {
            uncertain = true;
        }
        zeros.push(w);
    }
    zeros.sort_by(|x, y| y.eta.re.total_cmp(&x.eta.re).then(y.eta.im.total_cmp(&x.eta.im)));
    Ok(PencilZeros { zeros, free_kernel, uncertain })
}

/// Real kernel basis of the system pencil at a real `eta`, each vector split
/// into `(state part, input part)`.
pub fn pencil_kernel(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    eta: f64,
    policy: &RankPolicy,
) -> Result<Vec<(DVector<f64>, DVector<f64>)>> {
    check_system(a, b, c, d)?;
    if !eta.is_finite() {
        return Err(invalid("eta must be finite"));
    }
    let sys = StateSpace { a: a.clone(), b: b.clone(), c: c.clone(), d: d.clone() };
    let n = a.nrows();
    let m = b.ncols();
    let r = real_rosenbrock(&sys, eta);
    let scale = spectral_norm(&r).max(system_scale(&sys));
    let ker = nullspace_scaled(&r, scale, policy);
    Ok((0..ker.dim())
        .map(|j| {
            let col = ker.basis().column(j);
            (col.rows(0, n).into_owned(), col.rows(n, m).into_owned())
        })
        .collect())
}
