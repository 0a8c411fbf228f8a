//! Independent oracles and certificates used to check the solver.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::driver::{SolveReport, SolveStatus};
use crate::error::{MvskError, Result};
use crate::instance::{PreferenceCoefficients, ReturnPanel};
use crate::linalg::{dot, norm2, RowMatrix};
use crate::oracle::Objective;
use crate::simplex::{check_in_slice, kkt_residual_from_gradient, project_capped_simplex, TangentBasis};

/// Largest `n` for which dense comoment tensors are built.
pub const TENSOR_CAP: usize = 32;
/// Largest `n` for dense reduced-Hessian spectra.
pub const SPECTRUM_CAP: usize = 2048;
/// Largest `n` for the dense SVD behind the structural-PL constants.
pub const SVD_CAP: usize = 512;

/// Dense covariance, coskewness and cokurtosis of the centered panel.
#[derive(Clone, Debug)]
pub struct ExplicitTensors {
    n: usize,
    pub sigma: DMatrix<f64>,
    s: Vec<f64>,
    k: Vec<f64>,
}

pub fn build_explicit_tensors(panel: &ReturnPanel) -> Result<ExplicitTensors> {
    build_tensors_from_matrix(panel.centered())
}

pub fn build_tensors_from_matrix(a: &RowMatrix) -> Result<ExplicitTensors> {
    let n = a.cols();
    if n > TENSOR_CAP {
        return Err(MvskError::SizeCap(format!("explicit tensors are limited to n <= {TENSOR_CAP}, got {n}")));
    }
    let t = a.rows() as f64;
    let mut sigma = DMatrix::zeros(n, n);
    let mut s = vec![0.0; n * n * n];
    let mut k = vec![0.0; n * n * n * n];
    for row in a.row_iter() {
        for i in 0..n {
            for j in 0..n {
                let rij = row[i] * row[j];
                sigma[(i, j)] += rij / t;
                for l in 0..n {
                    let rijl = rij * row[l];
                    s[(i * n + j) * n + l] += rijl / t;
                    let base = ((i * n + j) * n + l) * n;
                    for m in 0..n {
                        k[base + m] += rijl * row[m] / t;
                    }
                }
            }
        }
    }
    Ok(ExplicitTensors { n, sigma, s, k })
}

impl ExplicitTensors {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn coskew(&self, i: usize, j: usize, l: usize) -> f64 {
        self.s[(i * self.n + j) * self.n + l]
    }

    pub fn cokurt(&self, i: usize, j: usize, l: usize, m: usize) -> f64 {
        self.k[((i * self.n + j) * self.n + l) * self.n + m]
    }

    /// `S[x, x, ·]`.
    pub fn coskew_xx(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                let w = x[i] * x[j];
                for (l, o) in out.iter_mut().enumerate() {
                    *o += w * self.coskew(i, j, l);
                }
            }
        }
        out
    }

    /// `K[x, x, x, ·]`.
    pub fn cokurt_xxx(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                for l in 0..n {
                    let w = x[i] * x[j] * x[l];
                    for (m, o) in out.iter_mut().enumerate() {
                        *o += w * self.cokurt(i, j, l, m);
                    }
                }
            }
        }
        out
    }

    /// `(x^T Σ x, S[x,x,x], K[x,x,x,x])`.
    pub fn moments(&self, x: &[f64]) -> (f64, f64, f64) {
        let sx = &self.sigma * DVector::from_column_slice(x);
        (dot(x, sx.as_slice()), dot(x, &self.coskew_xx(x)), dot(x, &self.cokurt_xxx(x)))
    }
}

/// Objective value and gradient by tensor contraction.
pub fn tensor_value_grad(
    tensors: &ExplicitTensors,
    mu: &[f64],
    coeffs: &PreferenceCoefficients,
    x: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let n = tensors.dim();
    if x.len() != n || mu.len() != n {
        return Err(MvskError::Dimension(format!("tensor contraction of dimension {n}")));
    }
    let sx = &tensors.sigma * DVector::from_column_slice(x);
    let sxx = tensors.coskew_xx(x);
    let kxxx = tensors.cokurt_xxx(x);
    let c = coeffs;
    let f = -c.c1 * dot(mu, x) + c.c2 * dot(x, sx.as_slice()) - c.c3 * dot(x, &sxx) + c.c4 * dot(x, &kxxx);
    let g = (0..n)
        .map(|i| -c.c1 * mu[i] + 2.0 * c.c2 * sx[i] - 3.0 * c.c3 * sxx[i] + 4.0 * c.c4 * kxxx[i])
        .collect();
    Ok((f, g))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityCertificate {
    pub certified: bool,
    /// `8 c2 c4 - 3 c3²`.
    pub discriminant: f64,
    /// Lower bound `2 c2 - 3 c3² / (4 c4)` on `ψ''`; absent when `c4 = 0`.
    pub margin: Option<f64>,
}

/// Data-free convexity test: `c4 > 0` and `8 c2 c4 > 3 c3²` make `ψ` convex,
/// hence `f` convex for every panel.
pub fn convexity_certificate(coeffs: &PreferenceCoefficients) -> ConvexityCertificate {
    let disc = coeffs.convexity_discriminant();
    let margin = (coeffs.c4 > 0.0).then(|| 2.0 * coeffs.c2 - 3.0 * coeffs.c3 * coeffs.c3 / (4.0 * coeffs.c4));
    ConvexityCertificate { certified: coeffs.c4 > 0.0 && disc > 0.0, discriminant: disc, margin }
}

/// Extremes of `ψ''(s) = 2c2 - 6c3 s + 12c4 s²` over `[-b, b]`.
pub fn psi2_range(coeffs: &PreferenceCoefficients, b: f64) -> (f64, f64) {
    let p = |s: f64| 2.0 * coeffs.c2 - 6.0 * coeffs.c3 * s + 12.0 * coeffs.c4 * s * s;
    let mut lo = p(-b).min(p(b));
    let hi = p(-b).max(p(b));
    if coeffs.c4 > 0.0 {
        let v = coeffs.c3 / (4.0 * coeffs.c4);
        if v.abs() <= b {
            lo = lo.min(p(v));
        }
    }
    (lo, hi)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub tau: f64,
    pub a_opnorm: f64,
    pub b_tau_bound: f64,
    pub l_tau: f64,
    pub m_tau: f64,
    pub gamma_lo: f64,
    pub gamma_hi: f64,
    pub sigma_min_au: Option<f64>,
    pub sigma_max_au: Option<f64>,
    pub mu_tau: Option<f64>,
    pub l_tau_phi: Option<f64>,
    pub rho_tau: Option<f64>,
    /// Armijo parameter used for `rho_tau`.
    pub armijo_sigma: f64,
    /// Set when the structural constants were not computed, with the reason.
    pub pl_skipped: Option<String>,
}

/// `||A||_op` by power iteration on `A^T A` from a seeded start.
pub fn operator_norm(a: &RowMatrix, tol: f64, max_iter: usize, seed: u64) -> f64 {
    let n = a.cols();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    let vn = norm2(&v);
    if vn == 0.0 {
        return 0.0;
    }
    v.iter_mut().for_each(|x| *x /= vn);
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let w = a.tr_mul_vec(&a.mul_vec(&v));
        let wn = norm2(&w);
        if wn == 0.0 {
            return 0.0;
        }
        let next = dot(&v, &w);
        v = w.iter().map(|x| x / wn).collect();
        if (next - lambda).abs() <= tol * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    // Rayleigh quotient at the final vector.
    let av = a.mul_vec(&v);
    dot(&av, &av).max(lambda).sqrt()
}

/// `A U` as a dense `T x (n-1)` matrix.
pub fn tangent_sample_matrix(a: &RowMatrix) -> Result<DMatrix<f64>> {
    let n = a.cols();
    let basis = TangentBasis::centered_at_equal_weight(n, 1.0)?;
    let mut out = DMatrix::zeros(a.rows(), n - 1);
    for (t, row) in a.row_iter().enumerate() {
        let r = basis.apply_transpose(row);
        for (j, v) in r.iter().enumerate() {
            out[(t, j)] = *v;
        }
    }
    Ok(out)
}

pub fn regularity_constants(
    panel: &ReturnPanel,
    coeffs: &PreferenceCoefficients,
    tau: f64,
) -> Result<RegularityReport> {
    let a = panel.centered();
    let (t, n) = (a.rows(), a.cols());
    if !(tau > 0.0 && tau * (n as f64) < 1.0) {
        return Err(MvskError::Domain(format!("tau = {tau} must lie in (0, 1/{n})")));
    }
    let tf = t as f64;
    let norm = operator_norm(a, 1e-8, 500, 0x5eed);
    let b = norm;
    let c = coeffs;
    let l_tau = norm * norm / tf * (2.0 * c.c2 + 6.0 * c.c3 * b + 12.0 * c.c4 * b * b);
    let m_tau = norm.powi(3) / tf * (6.0 * c.c3 + 24.0 * c.c4 * b);
    let (gamma_lo, gamma_hi) = psi2_range(c, b);
    let armijo_sigma = 1e-4;

    let mut report = RegularityReport {
        tau,
        a_opnorm: norm,
        b_tau_bound: b,
        l_tau,
        m_tau,
        gamma_lo,
        gamma_hi,
        sigma_min_au: None,
        sigma_max_au: None,
        mu_tau: None,
        l_tau_phi: None,
        rho_tau: None,
        armijo_sigma,
        pl_skipped: None,
    };
    if n < 2 {
        report.pl_skipped = Some("no tangent space for n = 1".into());
    } else if n > t {
        report.pl_skipped = Some(format!("n = {n} exceeds T = {t}"));
    } else if n > SVD_CAP {
        report.pl_skipped = Some(format!("dense SVD limited to n <= {SVD_CAP}"));
    } else {
        let au = tangent_sample_matrix(a)?;
        let sv = au.singular_values();
        let smax = sv.iter().cloned().fold(0.0, f64::max);
        let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        report.sigma_min_au = Some(smin);
        report.sigma_max_au = Some(smax);
        if smin <= 1e-10 {
            report.pl_skipped = Some("A U is rank deficient".into());
        } else if gamma_lo <= 0.0 {
            report.pl_skipped = Some("psi'' is not bounded below by a positive constant on [-B, B]".into());
        } else {
            let mu = gamma_lo / tf * smin * smin;
            let l = gamma_hi / tf * smax * smax;
            let beta: f64 = 0.0;
            report.mu_tau = Some(mu);
            report.l_tau_phi = Some(l);
            report.rho_tau = Some(2.0 * armijo_sigma * (1.0 - armijo_sigma) * mu / (l * (1.0 + beta * beta)));
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    /// Ascending eigenvalues of `U^T ∇²f(x) U`.
    pub eigenvalues: Vec<f64>,
    /// Ratio of the extreme positive eigenvalues; absent if none is positive.
    pub kappa_plus: Option<f64>,
    pub num_negative: usize,
}

/// Dense reduced Hessian `U^T ∇²f(x) U`, assembled from `n - 1` Hessian-vector
/// products.
pub fn reduced_hessian(obj: &Objective, x: &[f64]) -> Result<DMatrix<f64>> {
    let n = obj.dim();
    if n < 2 {
        return Err(MvskError::Dimension("reduced Hessian needs n >= 2".into()));
    }
    if n > SPECTRUM_CAP {
        return Err(MvskError::SizeCap(format!("dense reduced Hessian limited to n <= {SPECTRUM_CAP}, got {n}")));
    }
    let basis = TangentBasis::centered_at_equal_weight(n, 1.0)?;
    let cache = obj.evaluate(x)?;
    let m = n - 1;
    let mut h = DMatrix::zeros(m, m);
    let mut e = vec![0.0; m];
    for j in 0..m {
        e[j] = 1.0;
        let hv = cache.hvp(&basis.apply(&e))?;
        h.column_mut(j).copy_from_slice(&basis.apply_transpose(&hv));
        e[j] = 0.0;
    }
    let ht = h.transpose();
    Ok((h + ht) * 0.5)
}

pub fn reduced_hessian_spectrum(obj: &Objective, x: &[f64]) -> Result<SpectrumReport> {
    let h = reduced_hessian(obj, x)?;
    Ok(spectrum_of(h))
}

pub fn spectrum_of(h: DMatrix<f64>) -> SpectrumReport {
    let mut eig: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| a.total_cmp(b));
    let scale = eig.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let thresh = 1e-10 * scale;
    let positive: Vec<f64> = eig.iter().copied().filter(|v| *v > thresh).collect();
    let kappa_plus = match (positive.first(), positive.last()) {
        (Some(lo), Some(hi)) => Some(hi / lo),
        _ => None,
    };
    let num_negative = eig.iter().filter(|v| **v < -thresh).count();
    SpectrumReport { eigenvalues: eig, kappa_plus, num_negative }
}

/// Dense `(1/T) A^T diag(ψ''(z)) A`.
pub fn factored_hessian(obj: &Objective, x: &[f64]) -> Result<DMatrix<f64>> {
    let cache = obj.evaluate(x)?;
    let w = cache.hessian_diag_weights();
    let a = obj.matrix();
    let n = a.cols();
    let t = a.rows() as f64;
    let mut h = DMatrix::zeros(n, n);
    for (row, wt) in a.row_iter().zip(&w) {
        for i in 0..n {
            let ri = row[i] * wt / t;
            for j in 0..n {
                h[(i, j)] += ri * row[j];
            }
        }
    }
    Ok(h)
}

/// Default finite-difference step at `x`.
pub fn fd_step(x: &[f64]) -> f64 {
    1e-6 * (1.0 + x.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
}

fn shifted(x: &[f64], v: &[f64], h: f64) -> Vec<f64> {
    x.iter().zip(v).map(|(a, b)| a + h * b).collect()
}

/// Central differences of the value along each coordinate.
pub fn fd_gradient(obj: &Objective, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut e = vec![0.0; n];
    for i in 0..n {
        e[i] = 1.0;
        let fp = obj.value_at(&shifted(x, &e, h))?;
        let fm = obj.value_at(&shifted(x, &e, -h))?;
        g[i] = (fp - fm) / (2.0 * h);
        e[i] = 0.0;
    }
    Ok(g)
}

/// Central difference of the gradient along `v`.
pub fn fd_hvp(obj: &Objective, x: &[f64], v: &[f64], h: f64) -> Result<Vec<f64>> {
    let gp = obj.evaluate(&shifted(x, v, h))?.gradient()?.to_vec();
    let gm = obj.evaluate(&shifted(x, v, -h))?.gradient()?.to_vec();
    Ok(gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect())
}

/// Central difference of `∇²f[v]` along `u`.
pub fn fd_third(obj: &Objective, x: &[f64], u: &[f64], v: &[f64], h: f64) -> Result<Vec<f64>> {
    let hp = obj.evaluate(&shifted(x, u, h))?.hvp(v)?;
    let hm = obj.evaluate(&shifted(x, u, -h))?.hvp(v)?;
    Ok(hp.iter().zip(&hm).map(|(a, b)| (a - b) / (2.0 * h)).collect())
}

/// Dense Hessian from central differences of the gradient, symmetrized.
pub fn fd_hessian(obj: &Objective, x: &[f64], h: f64) -> Result<DMatrix<f64>> {
    let n = x.len();
    let mut hm = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = fd_hvp(obj, x, &e, h)?;
        hm.column_mut(j).copy_from_slice(&col);
        e[j] = 0.0;
    }
    let ht = hm.transpose();
    Ok((hm + ht) * 0.5)
}

/// Projected gradient with Armijo backtracking on `Δ(τ)`, as an independent
/// reference solver. Stops when the slice gradient mapping
/// `||x - Π_{Δ(τ)}(x - ∇f)||` falls below `tol`.
pub fn projected_gradient_baseline(
    obj: &Objective,
    x0: Option<&[f64]>,
    tau: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SolveReport> {
    let start = Instant::now();
    let n = obj.dim();
    if !(tau >= 0.0 && tau * (n as f64) < 1.0) {
        return Err(MvskError::Domain(format!("tau = {tau} must lie in [0, 1/{n})")));
    }
    let mut x = match x0 {
        Some(x0) => {
            check_in_slice(x0, tau, 1.0)?;
            x0.to_vec()
        }
        None => vec![1.0 / n as f64; n],
    };
    let counts0 = obj.counters().snapshot();
    let sigma = 1e-4;
    let mut step: f64 = 1.0;
    let mut iterations = 0;
    let mut status = SolveStatus::MaxIter;
    let mut cache = obj.evaluate(&x)?;
    loop {
        let g = cache.gradient()?.to_vec();
        let f = cache.value();
        let trial: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - b).collect();
        let p = project_capped_simplex(&trial, 1.0, tau);
        let mapping = norm2(&p.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>());
        if mapping <= tol || n == 1 {
            status = SolveStatus::Converged;
            break;
        }
        if iterations >= max_iter {
            break;
        }
        iterations += 1;
        let mut t = (2.0 * step).min(1e6);
        let mut accepted = None;
        for _ in 0..100 {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - t * b).collect();
            let y = project_capped_simplex(&trial, 1.0, tau);
            let dy: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
            let c = obj.evaluate(&y)?;
            if c.value() <= f + sigma * dot(&g, &dy) {
                accepted = Some((y, c));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((y, c)) => {
                x = y;
                cache = c;
                step = t;
            }
            None => {
                status = SolveStatus::Stalled;
                break;
            }
        }
    }
    let f_star = cache.value();
    let kkt = kkt_residual_from_gradient(&x, cache.gradient()?, tau);
    drop(cache);
    let kernels = obj.counters().snapshot() - counts0;
    Ok(SolveReport {
        x_star: x,
        f_star,
        kkt_residual: kkt,
        iterations,
        face_events: 0,
        restarts: 0,
        krylov_iters_total: 0,
        oracle_passes: kernels.passes,
        kernels,
        wall_seconds: start.elapsed().as_secs_f64(),
        status,
        trace: Vec::new(),
    })
}
