//! Reduced-coordinate affine-normal (YAND) direction.
//!
//! In tangent coordinates `y` with reduced gradient `ḡ = U^T ∇f`, the
//! direction is
//!
//! ```text
//! ν = ḡ / ||ḡ||,   Q ⟂ ν (Householder),
//! H_T = Q^T ∇²φ Q + λ I,   h = Q^T ∇²φ ν,
//! a_j = tr(H_T^{-1} T_j),  (T_j)_{kl} = D³φ[Q e_k, Q e_l, Q e_j],
//! u = H_T^{-1} (h - ||ḡ|| / n · a),   d_y = Q u - ν,
//! ```
//!
//! and the ambient step is `d = U d_y`. Since `Q^T ν = 0`, `ḡ^T d_y = -||ḡ||`
//! for every `u`, so truncated or approximate tangent solves never break
//! descent.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MvskError, Result};
use crate::householder::Reflector;
use crate::linalg::{axpy, dot, norm2};
use crate::oracle::OracleCache;
use crate::simplex::TangentBasis;

/// Largest ambient dimension for which dense tangent assembly is allowed.
pub const DIRECT_CAP: usize = 512;
/// Above this tangent dimension PCG mode estimates the trace stochastically.
pub const EXACT_TRACE_CAP: usize = 256;
/// Regularization used when an unregularized factorization fails.
pub const FALLBACK_LAMBDA: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMode {
    Direct,
    Pcg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangentSolveConfig {
    pub mode: SolveMode,
    pub lambda: f64,
    pub krylov_tol: f64,
    pub krylov_maxit: usize,
    /// Jacobi preconditioning from a probed diagonal.
    pub jacobi: bool,
    /// Force the exact trace in PCG mode regardless of dimension.
    pub exact_trace: bool,
    pub hutchinson_probes: usize,
    pub seed: u64,
    /// Tangent dimension that selects the trace mode in PCG mode. Defaults
    /// to the dimension of the operator being solved.
    #[serde(default)]
    pub trace_dim: Option<usize>,
}

impl TangentSolveConfig {
    pub fn direct() -> Self {
        Self {
            mode: SolveMode::Direct,
            lambda: 0.0,
            krylov_tol: 1e-10,
            krylov_maxit: 1000,
            jacobi: false,
            exact_trace: true,
            hutchinson_probes: 8,
            seed: 0,
            trace_dim: None,
        }
    }

    pub fn pcg(krylov_tol: f64, krylov_maxit: usize, lambda: f64) -> Self {
        Self {
            mode: SolveMode::Pcg,
            lambda,
            krylov_tol,
            krylov_maxit,
            jacobi: false,
            exact_trace: false,
            hutchinson_probes: 8,
            seed: 0,
            trace_dim: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || self.krylov_maxit == 0 || !(self.krylov_tol > 0.0) || self.hutchinson_probes == 0
        {
            return Err(MvskError::Domain("invalid tangent solve configuration".into()));
        }
        Ok(())
    }
}

/// Normalized reduced gradient and the Householder frame orthogonal to it.
#[derive(Clone, Debug)]
pub struct ReducedFrame {
    nu: Vec<f64>,
    grad_norm: f64,
    refl: Option<Reflector>,
}

pub fn householder_frame(reduced_grad: &[f64]) -> Result<ReducedFrame> {
    let gn = norm2(reduced_grad);
    if reduced_grad.is_empty() {
        return Err(MvskError::Dimension("empty reduced gradient".into()));
    }
    if !(gn > 0.0) || !gn.is_finite() {
        return Err(MvskError::Contract("reduced gradient is zero".into()));
    }
    let nu: Vec<f64> = reduced_grad.iter().map(|v| v / gn).collect();
    let refl = (nu.len() >= 2).then(|| Reflector::onto(&nu));
    Ok(ReducedFrame { nu, grad_norm: gn, refl })
}

impl ReducedFrame {
    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn grad_norm(&self) -> f64 {
        self.grad_norm
    }

    /// Reduced dimension `m`.
    pub fn dim(&self) -> usize {
        self.nu.len()
    }

    /// Frame dimension `m - 1`.
    pub fn frame_dim(&self) -> usize {
        self.nu.len() - 1
    }

    /// `Q η`.
    pub fn q(&self, eta: &[f64]) -> Vec<f64> {
        match &self.refl {
            Some(r) => r.tail_columns(eta),
            None => vec![0.0; self.dim()],
        }
    }

    /// `Q^T v`.
    pub fn qt(&self, v: &[f64]) -> Vec<f64> {
        match &self.refl {
            Some(r) => r.tail_transpose(v),
            None => Vec::new(),
        }
    }

    pub fn q_dense(&self) -> DMatrix<f64> {
        match &self.refl {
            Some(r) => r.tail_dense(),
            None => DMatrix::zeros(self.dim(), 0),
        }
    }
}

/// The regularized tangent Hessian `η ↦ Q^T U^T ∇²f U Q η + λ η`, applied
/// matrix-free through Hessian-vector products.
pub struct TangentOperator<'c, 'a> {
    cache: &'c OracleCache<'a>,
    basis: &'c TangentBasis,
    frame: &'c ReducedFrame,
    lambda: f64,
}

impl<'c, 'a> TangentOperator<'c, 'a> {
    pub fn new(cache: &'c OracleCache<'a>, basis: &'c TangentBasis, frame: &'c ReducedFrame, lambda: f64) -> Self {
        Self { cache, basis, frame, lambda }
    }

    pub fn dim(&self) -> usize {
        self.frame.frame_dim()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..*self }
    }

    /// `U Q η`.
    pub fn lift(&self, eta: &[f64]) -> Vec<f64> {
        self.basis.apply(&self.frame.q(eta))
    }

    /// `Q^T U^T v`.
    pub fn restrict(&self, v: &[f64]) -> Vec<f64> {
        self.frame.qt(&self.basis.apply_transpose(v))
    }

    /// `U^T ∇²f U y`.
    pub fn reduced_hvp(&self, y: &[f64]) -> Result<Vec<f64>> {
        let hv = self.cache.hvp(&self.basis.apply(y))?;
        Ok(self.basis.apply_transpose(&hv))
    }

    pub fn apply(&self, eta: &[f64]) -> Result<Vec<f64>> {
        let hv = self.cache.hvp(&self.lift(eta))?;
        let mut out = self.restrict(&hv);
        axpy(self.lambda, eta, &mut out);
        Ok(out)
    }

    /// `h = Q^T U^T ∇²f U ν`.
    pub fn curvature_vector(&self) -> Result<Vec<f64>> {
        let hv = self.cache.hvp(&self.basis.apply(self.frame.nu()))?;
        Ok(self.restrict(&hv))
    }

    /// `Q^T U^T D³f[U Q p, U Q q, ·]`.
    pub fn third(&self, p: &[f64], q: &[f64]) -> Result<Vec<f64>> {
        let t = self.cache.third_action(&self.lift(p), &self.lift(q))?;
        Ok(self.restrict(&t))
    }

    /// Dense symmetrized operator from `dim` products.
    pub fn assemble(&self) -> Result<DMatrix<f64>> {
        let k = self.dim();
        let mut h = DMatrix::zeros(k, k);
        let mut e = vec![0.0; k];
        for j in 0..k {
            e[j] = 1.0;
            let col = self.apply(&e)?;
            h.column_mut(j).copy_from_slice(&col);
            e[j] = 0.0;
        }
        let ht = h.transpose();
        Ok((h + ht) * 0.5)
    }
}

/// `a_j = Σ_k (Q^T U^T D³f[U Q H^{-1} e_k, U Q e_k, ·])_j`, one solve and one
/// third-order action per frame column.
pub fn logdet_correction_exact<F>(op: &TangentOperator<'_, '_>, mut solve: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let k = op.dim();
    let mut a = vec![0.0; k];
    let mut e = vec![0.0; k];
    for j in 0..k {
        e[j] = 1.0;
        let p = solve(&e)?;
        let t = op.third(&p, &e)?;
        axpy(1.0, &t, &mut a);
        e[j] = 0.0;
    }
    Ok(a)
}

/// Hutchinson estimate of the same trace with Rademacher probes:
/// `a ≈ (1/P) Σ_p third(H^{-1} z_p, z_p)`.
pub fn logdet_correction_hutchinson<F>(
    op: &TangentOperator<'_, '_>,
    mut solve: F,
    probes: usize,
    seed: u64,
) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let k = op.dim();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut a = vec![0.0; k];
    for _ in 0..probes {
        let z: Vec<f64> = (0..k).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let p = solve(&z)?;
        let t = op.third(&p, &z)?;
        axpy(1.0 / probes as f64, &t, &mut a);
    }
    Ok(a)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub rel_residual: f64,
    pub breakdown: bool,
}

/// (Preconditioned) conjugate gradient from zero. Stops at relative residual
/// `tol`, after `maxit` iterations, or on nonpositive curvature, in which case
/// the current iterate is returned with `breakdown` set.
pub fn conjugate_gradient<F>(mut apply: F, b: &[f64], tol: f64, maxit: usize, diag: Option<&[f64]>) -> Result<CgOutcome>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = b.len();
    let bn = norm2(b);
    let mut x = vec![0.0; n];
    if bn == 0.0 {
        return Ok(CgOutcome { x, iterations: 0, rel_residual: 0.0, breakdown: false });
    }
    let precond = |r: &[f64]| -> Vec<f64> {
        match diag {
            Some(d) => r.iter().zip(d).map(|(a, b)| a / b).collect(),
            None => r.to_vec(),
        }
    };
    let mut r = b.to_vec();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut it = 0;
    let mut rel = 1.0;
    let mut breakdown = false;
    while it < maxit {
        let ap = apply(&p)?;
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            breakdown = true;
            break;
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        it += 1;
        rel = norm2(&r) / bn;
        if rel <= tol {
            break;
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    Ok(CgOutcome { x, iterations: it, rel_residual: rel, breakdown })
}

/// Stochastic estimate of the operator diagonal, floored to stay positive.
pub fn probe_diagonal(op: &TangentOperator<'_, '_>, probes: usize, seed: u64) -> Result<Vec<f64>> {
    let k = op.dim();
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut d = vec![0.0; k];
    for _ in 0..probes {
        let z: Vec<f64> = (0..k).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let hz = op.apply(&z)?;
        d.iter_mut().zip(z.iter().zip(&hz)).for_each(|(di, (a, b))| *di += a * b / probes as f64);
    }
    let top = d.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let floor = (1e-8 * top).max(op.lambda()).max(f64::MIN_POSITIVE);
    d.iter_mut().for_each(|v| *v = v.max(floor));
    Ok(d)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    /// No tangent frame (`m = 1`).
    None,
    Exact,
    Hutchinson,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionDiagnostics {
    pub mode: SolveMode,
    pub trace: TraceMode,
    pub krylov_iters: usize,
    /// Relative residual of the final tangent solve.
    pub residual: f64,
    pub u_norm: f64,
    pub breakdown: bool,
    pub lambda_used: f64,
    /// Dense factorization fell back to LU after Cholesky failed.
    pub lu_fallback: bool,
}

#[derive(Clone, Debug)]
pub struct Direction {
    /// Ambient direction `U d_y`, summing to zero.
    pub d: Vec<f64>,
    pub d_y: Vec<f64>,
    pub u: Vec<f64>,
    pub frame: ReducedFrame,
    pub diagnostics: DirectionDiagnostics,
}

impl Direction {
    pub fn grad_norm(&self) -> f64 {
        self.frame.grad_norm()
    }
}

enum DenseFactor {
    Chol(Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl DenseFactor {
    fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let rhs = DVector::from_column_slice(b);
        let x = match self {
            DenseFactor::Chol(c) => c.solve(&rhs),
            DenseFactor::Lu(l) => l.solve(&rhs).ok_or_else(|| MvskError::Numeric("singular tangent Hessian".into()))?,
        };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(MvskError::Numeric("non-finite tangent solve".into()));
        }
        Ok(x.as_slice().to_vec())
    }
}

/// Builds the YAND direction at the cached iterate. `basis` must match the
/// objective's dimension; its dimension is the ambient `n` in the correction
/// weight `||ḡ|| / n`.
pub fn yand_direction(cache: &OracleCache<'_>, basis: &TangentBasis, config: &TangentSolveConfig) -> Result<Direction> {
    config.validate()?;
    let n = basis.dim();
    if cache.x().len() != n {
        return Err(MvskError::Dimension(format!("basis of dimension {n} for a {}-asset iterate", cache.x().len())));
    }
    if config.mode == SolveMode::Direct && n > DIRECT_CAP {
        return Err(MvskError::SizeCap(format!("direct tangent solve is limited to n <= {DIRECT_CAP}, got {n}")));
    }
    let g = cache.gradient()?;
    let gbar = basis.apply_transpose(g);
    let frame = householder_frame(&gbar)?;
    let k = frame.frame_dim();
    let nu = frame.nu().to_vec();

    if k == 0 {
        let d_y: Vec<f64> = nu.iter().map(|v| -v).collect();
        let d = basis.apply(&d_y);
        let diagnostics = DirectionDiagnostics {
            mode: config.mode,
            trace: TraceMode::None,
            krylov_iters: 0,
            residual: 0.0,
            u_norm: 0.0,
            breakdown: false,
            lambda_used: config.lambda,
            lu_fallback: false,
        };
        return Ok(Direction { d, d_y, u: Vec::new(), frame, diagnostics });
    }

    let op = TangentOperator::new(cache, basis, &frame, config.lambda);
    let h = op.curvature_vector()?;
    let weight = frame.grad_norm() / n as f64;

    let (u, diagnostics) = match config.mode {
        SolveMode::Direct => direct_solve(&op, &h, weight)?,
        SolveMode::Pcg => pcg_solve(&op, &h, weight, config)?,
    };

    let mut d_y = frame.q(&u);
    axpy(-1.0, &nu, &mut d_y);
    let d = basis.apply(&d_y);
    Ok(Direction { d, d_y, u, frame, diagnostics })
}

fn direct_solve(op: &TangentOperator<'_, '_>, h: &[f64], weight: f64) -> Result<(Vec<f64>, DirectionDiagnostics)> {
    let mut mat = op.assemble()?;
    let mut lambda = op.lambda();
    let mut lu_fallback = false;
    let factor = match Cholesky::new(mat.clone()) {
        Some(c) => DenseFactor::Chol(c),
        None => {
            if lambda == 0.0 {
                lambda = FALLBACK_LAMBDA;
                for i in 0..mat.nrows() {
                    mat[(i, i)] += lambda;
                }
            }
            match Cholesky::new(mat.clone()) {
                Some(c) => DenseFactor::Chol(c),
                None => {
                    lu_fallback = true;
                    DenseFactor::Lu(mat.clone().lu())
                }
            }
        }
    };
    let op = op.with_lambda(lambda);
    let a = logdet_correction_exact(&op, |b| factor.solve(b))?;
    let rhs: Vec<f64> = h.iter().zip(&a).map(|(hi, ai)| hi - weight * ai).collect();
    let u = factor.solve(&rhs)?;

    let r = &mat * DVector::from_column_slice(&u) - DVector::from_column_slice(&rhs);
    let rn = norm2(&rhs);
    let diagnostics = DirectionDiagnostics {
        mode: SolveMode::Direct,
        trace: TraceMode::Exact,
        krylov_iters: 0,
        residual: if rn > 0.0 { r.norm() / rn } else { r.norm() },
        u_norm: norm2(&u),
        breakdown: false,
        lambda_used: lambda,
        lu_fallback,
    };
    Ok((u, diagnostics))
}

fn pcg_solve(
    op: &TangentOperator<'_, '_>,
    h: &[f64],
    weight: f64,
    config: &TangentSolveConfig,
) -> Result<(Vec<f64>, DirectionDiagnostics)> {
    let k = op.dim();
    let diag = if config.jacobi { Some(probe_diagonal(op, 8, config.seed)?) } else { None };
    let mut total_iters = 0usize;
    let mut any_breakdown = false;
    let mut solve = |b: &[f64]| -> Result<Vec<f64>> {
        let out = conjugate_gradient(|v| op.apply(v), b, config.krylov_tol, config.krylov_maxit, diag.as_deref())?;
        total_iters += out.iterations;
        any_breakdown |= out.breakdown;
        Ok(out.x)
    };
    let exact = config.exact_trace || config.trace_dim.unwrap_or(k) <= EXACT_TRACE_CAP;
    let a = if exact {
        logdet_correction_exact(op, &mut solve)?
    } else {
        logdet_correction_hutchinson(op, &mut solve, config.hutchinson_probes, config.seed)?
    };
    let rhs: Vec<f64> = h.iter().zip(&a).map(|(hi, ai)| hi - weight * ai).collect();
    let out = conjugate_gradient(|v| op.apply(v), &rhs, config.krylov_tol, config.krylov_maxit, diag.as_deref())?;
    let diagnostics = DirectionDiagnostics {
        mode: SolveMode::Pcg,
        trace: if exact { TraceMode::Exact } else { TraceMode::Hutchinson },
        krylov_iters: total_iters + out.iterations,
        residual: out.rel_residual,
        u_norm: norm2(&out.x),
        breakdown: any_breakdown || out.breakdown,
        lambda_used: op.lambda(),
        lu_fallback: false,
    };
    Ok((out.x, diagnostics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::gen_conditioned_instance;
    use crate::instance::{center_panel, crra_coefficients, PreferenceCoefficients, ReturnPanel};
    use crate::linalg::RowMatrix;
    use crate::oracle::Objective;
    use crate::testutil::{random_point, Lcg};
    use nalgebra::SymmetricEigen;

    fn panel(rng: &mut Lcg, n: usize, t: usize) -> ReturnPanel {
        let data = (0..n * t).map(|_| rng.uniform(-0.1, 0.4)).collect();
        center_panel(RowMatrix::from_row_major(t, n, data)).unwrap()
    }

    /// Dense Hessian and third-order tensor of `f` at `x`.
    struct Dense {
        hess: DMatrix<f64>,
        third: Vec<f64>,
        n: usize,
    }

    impl Dense {
        fn new(obj: &Objective, x: &[f64]) -> Self {
            let a = obj.matrix().to_dmatrix();
            let (t, n) = a.shape();
            let z = &a * DVector::from_column_slice(x);
            let psi = obj.psi();
            let w2 = DVector::from_fn(t, |i, _| psi.d2(z[i]) / t as f64);
            let hess = a.transpose() * DMatrix::from_diagonal(&w2) * &a;
            let mut third = vec![0.0; n * n * n];
            for r in 0..t {
                let w = psi.d3(z[r]) / t as f64;
                for i in 0..n {
                    for j in 0..n {
                        for k in 0..n {
                            third[(i * n + j) * n + k] += w * a[(r, i)] * a[(r, j)] * a[(r, k)];
                        }
                    }
                }
            }
            Self { hess, third, n }
        }

        fn contract(&self, u: &DVector<f64>, v: &DVector<f64>, w: &DVector<f64>) -> f64 {
            let n = self.n;
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        s += self.third[(i * n + j) * n + k] * u[i] * v[j] * w[k];
                    }
                }
            }
            s
        }
    }

    /// Direction from dense linear algebra, independent of the matrix-free path.
    fn dense_direction(obj: &Objective, x: &[f64], lambda: f64) -> (Vec<f64>, Vec<f64>) {
        let n = x.len();
        let dense = Dense::new(obj, x);
        let cache = obj.evaluate(x).unwrap();
        let basis = TangentBasis::centered_at_equal_weight(n, 1.0).unwrap();
        let u_mat = basis.to_dense();
        let gbar = u_mat.transpose() * DVector::from_column_slice(cache.gradient().unwrap());
        let frame = householder_frame(gbar.as_slice()).unwrap();
        let q = frame.q_dense();
        let uq = &u_mat * &q;
        let k = q.ncols();
        let ht = uq.transpose() * &dense.hess * &uq + DMatrix::identity(k, k) * lambda;
        let nu = DVector::from_column_slice(frame.nu());
        let h = uq.transpose() * &dense.hess * (&u_mat * &nu);
        let inv = ht.clone().try_inverse().unwrap();
        let a = DVector::from_fn(k, |j, _| {
            let mut s = 0.0;
            for p in 0..k {
                for l in 0..k {
                    s += inv[(p, l)] * dense.contract(&uq.column(p).into(), &uq.column(l).into(), &uq.column(j).into());
                }
            }
            s
        });
        let u = &inv * (h - a * (gbar.norm() / n as f64));
        let d = &u_mat * (&q * &u - nu);
        (u.as_slice().to_vec(), d.as_slice().to_vec())
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
        norm2(&diff) / norm2(b).max(1e-300)
    }

    #[test]
    fn direct_matches_dense_oracle() {
        let mut rng = Lcg::new(31);
        for (n, gamma) in [(5, 6.0), (7, 2.0), (4, 10.0)] {
            let p = panel(&mut rng, n, 40);
            let obj = Objective::new(&p, &crra_coefficients(gamma).unwrap());
            let x = random_point(&mut rng, n);
            let (u_ref, d_ref) = dense_direction(&obj, &x, 0.0);
            let cache = obj.evaluate(&x).unwrap();
            let basis = TangentBasis::centered_at_equal_weight(n, 1.0).unwrap();
            let dir = yand_direction(&cache, &basis, &TangentSolveConfig::direct()).unwrap();
            assert!(rel_err(&dir.u, &u_ref) < 1e-8, "u mismatch {}", rel_err(&dir.u, &u_ref));
            assert!(rel_err(&dir.d, &d_ref) < 1e-9);
            assert_eq!(dir.diagnostics.trace, TraceMode::Exact);
            assert!(!dir.diagnostics.lu_fallback);
        }
    }

    #[test]
    fn quadratic_case_is_newton_in_the_frame() {
        let mut rng = Lcg::new(32);
        let p = panel(&mut rng, 6, 30);
        let obj = Objective::new(&p, &PreferenceCoefficients::new(1.0, 3.0, 0.0, 0.0).unwrap());
        let x = random_point(&mut rng, 6);
        let cache = obj.evaluate(&x).unwrap();
        let basis = TangentBasis::centered_at_equal_weight(6, 1.0).unwrap();
        let frame = householder_frame(&basis.apply_transpose(cache.gradient().unwrap())).unwrap();
        let op = TangentOperator::new(&cache, &basis, &frame, 0.0);
        let a = logdet_correction_exact(&op, |b| Ok(b.to_vec())).unwrap();
        assert!(a.iter().all(|v| *v == 0.0));
        let (u_ref, _) = dense_direction(&obj, &x, 0.0);
        let dir = yand_direction(&cache, &basis, &TangentSolveConfig::direct()).unwrap();
        assert!(rel_err(&dir.u, &u_ref) < 1e-8);
    }

    #[test]
    fn descent_identity_in_both_modes() {
        let mut rng = Lcg::new(33);
        let configs = [TangentSolveConfig::direct(), TangentSolveConfig::pcg(1e-3, 3, 1e-4)];
        for trial in 0..50 {
            let n = 3 + trial % 7;
            let p = panel(&mut rng, n, 25);
            let obj = Objective::new(&p, &PreferenceCoefficients::new(1.0, 10.0, 10.0 * rng.next_f64(), 10.0).unwrap());
            let x = random_point(&mut rng, n);
            let cache = obj.evaluate(&x).unwrap();
            let basis = TangentBasis::centered_at_equal_weight(n, 1.0).unwrap();
            let g = cache.gradient().unwrap().to_vec();
            let gbar = basis.apply_transpose(&g);
            let gn = norm2(&gbar);
            for cfg in &configs {
                let dir = yand_direction(&cache, &basis, cfg).unwrap();
                assert!((dot(&gbar, &dir.d_y) + gn).abs() <= 1e-10 * gn);
                assert!((dot(&g, &dir.d) + gn).abs() <= 1e-10 * gn.max(norm2(&g)));
                assert!(dir.d.iter().sum::<f64>().abs() < 1e-12 * (1.0 + norm2(&dir.d)));
            }
        }
    }

    #[test]
    fn two_assets_give_reduced_gradient_descent() {
        let mut rng = Lcg::new(34);
        let p = panel(&mut rng, 2, 20);
        let obj = Objective::new(&p, &crra_coefficients(4.0).unwrap());
        let cache = obj.evaluate(&[0.3, 0.7]).unwrap();
        let basis = TangentBasis::centered_at_equal_weight(2, 1.0).unwrap();
        let dir = yand_direction(&cache, &basis, &TangentSolveConfig::direct()).unwrap();
        assert_eq!(dir.diagnostics.trace, TraceMode::None);
        assert!(dir.u.is_empty());
        assert_eq!(dir.d_y.len(), 1);
        assert!((dir.d_y[0] + dir.frame.nu()[0]).abs() == 0.0);
        assert!((dir.d_y[0].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn operator_is_symmetric() {
        let mut rng = Lcg::new(35);
        let p = panel(&mut rng, 8, 30);
        let obj = Objective::new(&p, &PreferenceCoefficients::new(1.0, 10.0, 1.0, 10.0).unwrap());
        let x = random_point(&mut rng, 8);
        let cache = obj.evaluate(&x).unwrap();
        let basis = TangentBasis::centered_at_equal_weight(8, 1.0).unwrap();
        let frame = householder_frame(&basis.apply_transpose(cache.gradient().unwrap())).unwrap();
        let op = TangentOperator::new(&cache, &basis, &frame, 1e-3);
        for _ in 0..10 {
            let u = crate::testutil::random_vec(&mut rng, op.dim());
            let v = crate::testutil::random_vec(&mut rng, op.dim());
            let lhs = dot(&u, &op.apply(&v).unwrap());
            let rhs = dot(&op.apply(&u).unwrap(), &v);
            assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn zero_panel_operator_is_lambda_identity() {
        let p = center_panel(RowMatrix::from_rows(&vec![vec![0.1, 0.2, 0.3, 0.4]; 6])).unwrap();
        let obj = Objective::new(&p, &crra_coefficients(6.0).unwrap());
        let cache = obj.evaluate(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let basis = TangentBasis::centered_at_equal_weight(4, 1.0).unwrap();
        let frame = householder_frame(&basis.apply_transpose(cache.gradient().unwrap())).unwrap();
        let op = TangentOperator::new(&cache, &basis, &frame, 0.25);
        let m = op.assemble().unwrap();
        assert!((m - DMatrix::identity(2, 2) * 0.25).abs().max() < 1e-15);
        assert!(op.curvature_vector().unwrap().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn pcg_agrees_with_direct_on_well_conditioned_instances() {
        let mut rng = Lcg::new(36);
        for n in [4, 6, 9] {
            let p = panel(&mut rng, n, 60);
            let obj = Objective::new(&p, &crra_coefficients(6.0).unwrap());
            let x = random_point(&mut rng, n);
            let cache = obj.evaluate(&x).unwrap();
            let basis = TangentBasis::centered_at_equal_weight(n, 1.0).unwrap();
            let frame = householder_frame(&basis.apply_transpose(cache.gradient().unwrap())).unwrap();
            let eig = SymmetricEigen::new(TangentOperator::new(&cache, &basis, &frame, 0.0).assemble().unwrap());
            assert!(eig.eigenvalues.max() / eig.eigenvalues.min() <= 1e2);

            let direct = yand_direction(&cache, &basis, &TangentSolveConfig::direct()).unwrap();
            let mut cfg = TangentSolveConfig::pcg(1e-12, 10 * n, 0.0);
            cfg.exact_trace = true;
            let pcg = yand_direction(&cache, &basis, &cfg).unwrap();
            assert!(rel_err(&pcg.d, &direct.d) < 1e-6);
            assert!(pcg.diagnostics.residual <= 1e-12);
        }
    }

    #[test]
    fn tangential_magnitude_is_bounded() {
        let mut rng = Lcg::new(37);
        for _ in 0..10 {
            let p = panel(&mut rng, 6, 40);
            let obj = Objective::new(&p, &crra_coefficients(6.0).unwrap());
            let x = random_point(&mut rng, 6);
            let cache = obj.evaluate(&x).unwrap();
            let basis = TangentBasis::centered_at_equal_weight(6, 1.0).unwrap();
            let dir = yand_direction(&cache, &basis, &TangentSolveConfig::direct()).unwrap();
            let op = TangentOperator::new(&cache, &basis, &dir.frame, 0.0);
            let mat = op.assemble().unwrap();
            let inv_norm = 1.0 / SymmetricEigen::new(mat.clone()).eigenvalues.min();
            let h = op.curvature_vector().unwrap();
            let chol = Cholesky::new(mat).unwrap();
            let a = logdet_correction_exact(&op, |b| Ok(chol.solve(&DVector::from_column_slice(b)).as_slice().to_vec()))
                .unwrap();
            let bound = inv_norm * (norm2(&h) + dir.grad_norm() * norm2(&a) / 6.0);
            assert!(dir.diagnostics.u_norm <= bound * (1.0 + 1e-10));
        }
    }

    #[test]
    fn correction_scales_with_third_order_coefficients() {
        // At equal weight z = 0, so the operator depends on c2 only.
        let (p, _) = gen_conditioned_instance(6, 12, 10.0, 6.0, 3).unwrap();
        let x = vec![1.0 / 6.0; 6];
        let basis = TangentBasis::centered_at_equal_weight(6, 1.0).unwrap();
        let corr = |c3: f64, c4: f64| {
            let obj = Objective::new(&p, &PreferenceCoefficients::new(1.0, 3.0, c3, c4).unwrap());
            let cache = obj.evaluate(&x).unwrap();
            let frame = householder_frame(&basis.apply_transpose(cache.gradient().unwrap())).unwrap();
            let op = TangentOperator::new(&cache, &basis, &frame, 0.0);
            let chol = Cholesky::new(op.assemble().unwrap()).unwrap();
            logdet_correction_exact(&op, |b| Ok(chol.solve(&DVector::from_column_slice(b)).as_slice().to_vec())).unwrap()
        };
        let a1 = corr(2.0, 5.0);
        let a2 = corr(4.0, 10.0);
        let twice: Vec<f64> = a1.iter().map(|v| 2.0 * v).collect();
        assert!(rel_err(&a2, &twice) < 1e-10);
    }

    #[test]
    fn hutchinson_estimate_is_unbiased() {
        let mut rng = Lcg::new(38);
        let p = panel(&mut rng, 5, 30);
        let obj = Objective::new(&p, &crra_coefficients(6.0).unwrap());
        let x = random_point(&mut rng, 5);
        let cache = obj.evaluate(&x).unwrap();
        let basis = TangentBasis::centered_at_equal_weight(5, 1.0).unwrap();
        let frame = householder_frame(&basis.apply_transpose(cache.gradient().unwrap())).unwrap();
        let op = TangentOperator::new(&cache, &basis, &frame, 0.0);
        let chol = Cholesky::new(op.assemble().unwrap()).unwrap();
        let solve = |b: &[f64]| Ok(chol.solve(&DVector::from_column_slice(b)).as_slice().to_vec());
        let exact = logdet_correction_exact(&op, solve).unwrap();
        let est = logdet_correction_hutchinson(&op, solve, 20_000, 5).unwrap();
        assert!(rel_err(&est, &exact) < 0.05, "{}", rel_err(&est, &exact));
    }

    #[test]
    fn cg_solves_spd_and_flags_indefinite() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let b = [1.0, -2.0, 0.5];
        let apply = |v: &[f64]| Ok((&m * DVector::from_column_slice(v)).as_slice().to_vec());
        let out = conjugate_gradient(apply, &b, 1e-14, 50, None).unwrap();
        let x_ref = m.clone().lu().solve(&DVector::from_column_slice(&b)).unwrap();
        assert!(rel_err(&out.x, x_ref.as_slice()) < 1e-12);
        assert!(!out.breakdown);
        let jac = conjugate_gradient(apply, &b, 1e-14, 50, Some(&[4.0, 3.0, 2.0])).unwrap();
        assert!(rel_err(&jac.x, x_ref.as_slice()) < 1e-12);

        let ind = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, -1.0]));
        let out = conjugate_gradient(|v| Ok((&ind * DVector::from_column_slice(v)).as_slice().to_vec()), &[1.0, 1.0], 1e-12, 10, None)
            .unwrap();
        assert!(out.breakdown);
        assert!(out.x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn direct_mode_rejects_large_problems() {
        let n = DIRECT_CAP + 1;
        let rows = vec![(0..n).map(|i| i as f64 * 1e-3).collect::<Vec<_>>(), vec![0.0; n]];
        let p = center_panel(RowMatrix::from_rows(&rows)).unwrap();
        let obj = Objective::new(&p, &crra_coefficients(6.0).unwrap());
        let cache = obj.evaluate(&vec![1.0 / n as f64; n]).unwrap();
        let basis = TangentBasis::centered_at_equal_weight(n, 1.0).unwrap();
        assert!(matches!(yand_direction(&cache, &basis, &TangentSolveConfig::direct()), Err(MvskError::SizeCap(_))));
        assert!(yand_direction(&cache, &basis, &TangentSolveConfig::pcg(1e-3, 15, 1e-4)).is_ok());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut cfg = TangentSolveConfig::pcg(1e-3, 15, 1e-4);
        cfg.krylov_maxit = 0;
        assert!(cfg.validate().is_err());
        cfg = TangentSolveConfig::direct();
        cfg.lambda = -1.0;
        assert!(cfg.validate().is_err());
    }
}
