//! Exact matrix-free MVSK sample oracle.
//!
//! The objective is stored in lifted form
//!
//! ```text
//! f(x) = -c1 (mu^T x + m0) + (1/T) sum_t psi(z_t),   z = A x + z0,
//! psi(s) = c2 s^2 - c3 s^3 + c4 s^4,
//! ```
//!
//! where `m0` and `z0` are zero for a full panel and carry the contribution of
//! pinned coordinates when the objective is restricted to a simplex face.
//! Every derivative query is a handful of passes over `A` plus elementwise
//! work on `z`; no comoment tensor is ever formed.

use std::cell::OnceCell;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{MvskError, Result};
use crate::instance::{PreferenceCoefficients, ReturnPanel};
use crate::linalg::{all_finite, dot, RowMatrix};

/// Kernel call counters, shared between an objective and its face restrictions.
#[derive(Debug, Default)]
pub struct KernelCounters {
    passes: AtomicU64,
    value_grad: AtomicU64,
    hvp: AtomicU64,
    third: AtomicU64,
}

/// Point-in-time copy of [`KernelCounters`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelCounts {
    /// Multiplications by `A` or `A^T`.
    pub passes: u64,
    pub value_grad: u64,
    pub hvp: u64,
    pub third: u64,
}

impl KernelCounters {
    pub fn snapshot(&self) -> KernelCounts {
        KernelCounts {
            passes: self.passes.load(Ordering::Relaxed),
            value_grad: self.value_grad.load(Ordering::Relaxed),
            hvp: self.hvp.load(Ordering::Relaxed),
            third: self.third.load(Ordering::Relaxed),
        }
    }

    fn pass(&self, k: u64) {
        self.passes.fetch_add(k, Ordering::Relaxed);
    }
}

impl std::ops::Sub for KernelCounts {
    type Output = KernelCounts;
    fn sub(self, rhs: Self) -> Self {
        KernelCounts {
            passes: self.passes - rhs.passes,
            value_grad: self.value_grad - rhs.value_grad,
            hvp: self.hvp - rhs.hvp,
            third: self.third - rhs.third,
        }
    }
}

/// Scalar response `psi` and its derivatives for fixed coefficients.
#[derive(Clone, Copy, Debug)]
pub struct Psi {
    c2: f64,
    c3: f64,
    c4: f64,
}

impl Psi {
    pub fn new(c: &PreferenceCoefficients) -> Self {
        Self { c2: c.c2, c3: c.c3, c4: c.c4 }
    }

    #[inline]
    pub fn value(&self, s: f64) -> f64 {
        s * s * (self.c2 + s * (-self.c3 + s * self.c4))
    }

    #[inline]
    pub fn d1(&self, s: f64) -> f64 {
        s * (2.0 * self.c2 + s * (-3.0 * self.c3 + 4.0 * self.c4 * s))
    }

    #[inline]
    pub fn d2(&self, s: f64) -> f64 {
        2.0 * self.c2 + s * (-6.0 * self.c3 + 12.0 * self.c4 * s)
    }

    #[inline]
    pub fn d3(&self, s: f64) -> f64 {
        -6.0 * self.c3 + 24.0 * self.c4 * s
    }
}

/// The MVSK objective over a (possibly face-restricted) sample matrix.
#[derive(Debug)]
pub struct Objective {
    a: RowMatrix,
    mu: Vec<f64>,
    z_offset: Option<Vec<f64>>,
    mean_offset: f64,
    coeffs: PreferenceCoefficients,
    psi: Psi,
    counters: Arc<KernelCounters>,
}

impl Objective {
    pub fn new(panel: &ReturnPanel, coeffs: &PreferenceCoefficients) -> Self {
        Self::from_parts(panel.centered().clone(), panel.mu().to_vec(), coeffs.clone())
    }

    /// Builds an objective from an arbitrary sample matrix and mean vector.
    /// Panics if the shapes disagree.
    pub fn from_parts(a: RowMatrix, mu: Vec<f64>, coeffs: PreferenceCoefficients) -> Self {
        assert_eq!(a.cols(), mu.len(), "mu length must match the number of columns");
        Self {
            a,
            mu,
            z_offset: None,
            mean_offset: 0.0,
            psi: Psi::new(&coeffs),
            coeffs,
            counters: Arc::new(KernelCounters::default()),
        }
    }

    pub fn dim(&self) -> usize {
        self.a.cols()
    }

    pub fn periods(&self) -> usize {
        self.a.rows()
    }

    pub fn matrix(&self) -> &RowMatrix {
        &self.a
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn coeffs(&self) -> &PreferenceCoefficients {
        &self.coeffs
    }

    pub fn psi(&self) -> Psi {
        self.psi
    }

    pub fn z_offset(&self) -> Option<&[f64]> {
        self.z_offset.as_deref()
    }

    pub fn mean_offset(&self) -> f64 {
        self.mean_offset
    }

    pub fn counters(&self) -> &Arc<KernelCounters> {
        &self.counters
    }

    /// Keeps the columns in `free` and folds every other coordinate, held at
    /// `pinned_value`, into the affine offsets. The restricted objective shares
    /// this objective's kernel counters.
    pub fn restrict(&self, free: &[usize], pinned_value: f64) -> Result<Objective> {
        if free.is_empty() {
            return Err(MvskError::DegenerateFace);
        }
        let n = self.dim();
        let mut is_free = vec![false; n];
        for &i in free {
            if i >= n || is_free[i] {
                return Err(MvskError::Dimension(format!("bad free index {i} for dimension {n}")));
            }
            is_free[i] = true;
        }
        let pinned: Vec<usize> = (0..n).filter(|&i| !is_free[i]).collect();

        let mut z_offset = self.z_offset.clone().unwrap_or_else(|| vec![0.0; self.periods()]);
        if !pinned.is_empty() && pinned_value != 0.0 {
            for (t, zt) in z_offset.iter_mut().enumerate() {
                let row = self.a.row(t);
                *zt += pinned_value * pinned.iter().map(|&i| row[i]).sum::<f64>();
            }
        }
        let mean_offset = self.mean_offset + pinned_value * pinned.iter().map(|&i| self.mu[i]).sum::<f64>();

        Ok(Objective {
            a: self.a.select_columns(free),
            mu: free.iter().map(|&i| self.mu[i]).collect(),
            z_offset: if z_offset.iter().all(|v| *v == 0.0) { None } else { Some(z_offset) },
            mean_offset,
            coeffs: self.coeffs.clone(),
            psi: self.psi,
            counters: Arc::clone(&self.counters),
        })
    }

    /// `A v` (one pass).
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        self.counters.pass(1);
        self.a.mul_vec(v)
    }

    /// `A^T w` (one pass).
    pub fn back_project(&self, w: &[f64]) -> Vec<f64> {
        self.counters.pass(1);
        self.a.tr_mul_vec(w)
    }

    /// Builds the per-iterate cache: one pass to form `z = A x + z0`.
    pub fn evaluate(&self, x: &[f64]) -> Result<OracleCache<'_>> {
        if x.len() != self.dim() {
            return Err(MvskError::Dimension(format!("x has length {}, expected {}", x.len(), self.dim())));
        }
        if !all_finite(x) {
            return Err(MvskError::Numeric("non-finite portfolio".into()));
        }
        let mut z = self.project(x);
        if let Some(off) = &self.z_offset {
            z.iter_mut().zip(off).for_each(|(a, b)| *a += b);
        }
        if !all_finite(&z) {
            return Err(MvskError::Numeric("non-finite sample projection A x".into()));
        }
        let z2: Vec<f64> = z.iter().map(|v| v * v).collect();
        let z3: Vec<f64> = z.iter().zip(&z2).map(|(a, b)| a * b).collect();

        let t = self.periods() as f64;
        let mean = dot(&self.mu, x) + self.mean_offset;
        let (mut p2, mut p3, mut p4) = (0.0, 0.0, 0.0);
        for (&a2, &a3) in z2.iter().zip(&z3) {
            p2 += a2;
            p3 += a3;
            p4 += a2 * a2;
        }
        let moments = Moments { m1: mean, m2: p2 / t, m3: p3 / t, m4: p4 / t };
        let c = &self.coeffs;
        let value = -c.c1 * moments.m1 + c.c2 * moments.m2 - c.c3 * moments.m3 + c.c4 * moments.m4;
        if !value.is_finite() {
            return Err(MvskError::Numeric("non-finite objective value".into()));
        }
        self.counters.value_grad.fetch_add(1, Ordering::Relaxed);
        Ok(OracleCache { obj: self, x: x.to_vec(), z, z2, z3, moments, value, grad: OnceCell::new() })
    }

    pub fn value_at(&self, x: &[f64]) -> Result<f64> {
        Ok(self.evaluate(x)?.value())
    }

    /// Gradient from a precomputed `z` (one pass).
    pub fn gradient_from_z(&self, z: &[f64]) -> Result<Vec<f64>> {
        let t = self.periods() as f64;
        let w: Vec<f64> = z.iter().map(|&s| self.psi.d1(s) / t).collect();
        let mut g = self.back_project(&w);
        let c1 = self.coeffs.c1;
        g.iter_mut().zip(&self.mu).for_each(|(gi, mi)| *gi -= c1 * mi);
        if !all_finite(&g) {
            return Err(MvskError::Numeric("non-finite gradient".into()));
        }
        Ok(g)
    }
}

/// Sample moments `m1..m4` of the portfolio return.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub m4: f64,
}

/// Everything reusable at a fixed iterate: `z`, its powers and the value.
/// The gradient is filled on first request.
#[derive(Debug)]
pub struct OracleCache<'a> {
    obj: &'a Objective,
    x: Vec<f64>,
    z: Vec<f64>,
    z2: Vec<f64>,
    z3: Vec<f64>,
    moments: Moments,
    value: f64,
    grad: OnceCell<Vec<f64>>,
}

impl<'a> OracleCache<'a> {
    pub fn objective(&self) -> &'a Objective {
        self.obj
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn z2(&self) -> &[f64] {
        &self.z2
    }

    pub fn z3(&self) -> &[f64] {
        &self.z3
    }

    pub fn moments(&self) -> Moments {
        self.moments
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    /// `-c1 mu + (2c2/T) A^T z - (3c3/T) A^T z^2 + (4c4/T) A^T z^3`, memoized.
    pub fn gradient(&self) -> Result<&[f64]> {
        if let Some(g) = self.grad.get() {
            return Ok(g);
        }
        let c = &self.obj.coeffs;
        let t = self.obj.periods() as f64;
        let w: Vec<f64> = (0..self.z.len())
            .map(|k| (2.0 * c.c2 * self.z[k] - 3.0 * c.c3 * self.z2[k] + 4.0 * c.c4 * self.z3[k]) / t)
            .collect();
        let mut g = self.obj.back_project(&w);
        g.iter_mut().zip(&self.obj.mu).for_each(|(gi, mi)| *gi -= c.c1 * mi);
        if !all_finite(&g) {
            return Err(MvskError::Numeric("non-finite gradient".into()));
        }
        Ok(self.grad.get_or_init(|| g))
    }

    /// Installs a gradient computed elsewhere (e.g. sliced from the parent
    /// objective on a face). Ignored if the gradient is already present.
    pub fn seed_gradient(&self, g: Vec<f64>) {
        debug_assert_eq!(g.len(), self.x.len());
        let _ = self.grad.set(g);
    }

    /// Hessian-vector product (two passes).
    pub fn hvp(&self, v: &[f64]) -> Result<Vec<f64>> {
        let c = &self.obj.coeffs;
        let t = self.obj.periods() as f64;
        let av = self.obj.project(v);
        let w: Vec<f64> = (0..av.len())
            .map(|k| (2.0 * c.c2 - 6.0 * c.c3 * self.z[k] + 12.0 * c.c4 * self.z2[k]) * av[k] / t)
            .collect();
        let out = self.obj.back_project(&w);
        self.obj.counters.hvp.fetch_add(1, Ordering::Relaxed);
        if !all_finite(&out) {
            return Err(MvskError::Numeric("non-finite Hessian-vector product".into()));
        }
        Ok(out)
    }

    /// Directional third derivative `D^3 f(x)[u, v, .]` (three passes).
    pub fn third_action(&self, u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let c = &self.obj.coeffs;
        let t = self.obj.periods() as f64;
        let au = self.obj.project(u);
        let av = self.obj.project(v);
        let w: Vec<f64> = (0..au.len())
            .map(|k| (-6.0 * c.c3 + 24.0 * c.c4 * self.z[k]) * au[k] * av[k] / t)
            .collect();
        let out = self.obj.back_project(&w);
        self.obj.counters.third.fetch_add(1, Ordering::Relaxed);
        if !all_finite(&out) {
            return Err(MvskError::Numeric("non-finite third-order action".into()));
        }
        Ok(out)
    }

    /// `psi''(z_t)` for every sample, so that `H = (1/T) A^T diag(.) A`.
    pub fn hessian_diag_weights(&self) -> Vec<f64> {
        self.z.iter().map(|&s| self.obj.psi.d2(s)).collect()
    }
}
