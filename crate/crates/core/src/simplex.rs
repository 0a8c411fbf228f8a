//! Geometry of the long-only simplex and its interior slices
//! `Δ(τ) = {x : 1^T x = 1, x_i >= τ}`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{MvskError, Result};
use crate::householder::Reflector;
use crate::linalg::{center, norm2};
use crate::oracle::Objective;

/// Coordinates within this distance of the floor are treated as pinned.
pub const PIN_TOL: f64 = 1e-12;

/// Orthonormal basis `U` of the zero-sum subspace, anchored at an interior
/// reference point so that `x = x_ref + U y`.
///
/// `U` is the trailing `n - 1` columns of the reflector sending `e1` to
/// `-1/sqrt(n)`, applied implicitly in `O(n)`.
#[derive(Clone, Debug)]
pub struct TangentBasis {
    x_ref: Vec<f64>,
    refl: Reflector,
}

impl TangentBasis {
    pub fn new(n: usize, x_ref: &[f64]) -> Result<Self> {
        if n < 2 {
            return Err(MvskError::Dimension(format!("tangent basis needs n >= 2, got {n}")));
        }
        if x_ref.len() != n {
            return Err(MvskError::Dimension(format!("x_ref has length {}, expected {n}", x_ref.len())));
        }
        let sum: f64 = x_ref.iter().sum();
        if x_ref.iter().any(|v| !(v.is_finite() && *v > 0.0)) || (sum - 1.0).abs() > 1e-10 {
            return Err(MvskError::Domain("reference portfolio must be strictly positive and sum to one".into()));
        }
        Ok(Self::from_parts(x_ref.to_vec()))
    }

    /// Basis at the equal-weight point of a face with total `mass`.
    pub fn centered_at_equal_weight(n: usize, mass: f64) -> Result<Self> {
        if n < 2 {
            return Err(MvskError::Dimension(format!("tangent basis needs n >= 2, got {n}")));
        }
        Ok(Self::from_parts(vec![mass / n as f64; n]))
    }

    fn from_parts(x_ref: Vec<f64>) -> Self {
        let n = x_ref.len();
        let t = vec![1.0 / (n as f64).sqrt(); n];
        Self { x_ref, refl: Reflector::onto(&t) }
    }

    pub fn dim(&self) -> usize {
        self.x_ref.len()
    }

    pub fn x_ref(&self) -> &[f64] {
        &self.x_ref
    }

    /// `U y`.
    pub fn apply(&self, y: &[f64]) -> Vec<f64> {
        self.refl.tail_columns(y)
    }

    /// `U^T v`.
    pub fn apply_transpose(&self, v: &[f64]) -> Vec<f64> {
        self.refl.tail_transpose(v)
    }

    /// `x_ref + U y`.
    pub fn lift(&self, y: &[f64]) -> Vec<f64> {
        let mut x = self.apply(y);
        x.iter_mut().zip(&self.x_ref).for_each(|(a, b)| *a += b);
        x
    }

    /// `U^T (x - x_ref)`.
    pub fn reduce(&self, x: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = x.iter().zip(&self.x_ref).map(|(a, b)| a - b).collect();
        self.apply_transpose(&d)
    }

    /// Dense `n x (n-1)` copy of `U`, for diagnostics.
    pub fn to_dense(&self) -> DMatrix<f64> {
        self.refl.tail_dense()
    }
}

/// Largest `α` keeping `x + α d >= τ` componentwise; `+inf` if no component
/// of `d` is negative. No feasibility checks.
pub fn step_cap(x: &[f64], d: &[f64], tau: f64) -> f64 {
    x.iter()
        .zip(d)
        .filter(|(_, di)| **di < 0.0)
        .map(|(xi, di)| ((xi - tau) / -di).max(0.0))
        .fold(f64::INFINITY, f64::min)
}

/// Feasibility cap for a tangent direction on `Δ(τ)`.
pub fn alpha_max(x: &[f64], d: &[f64], tau: f64) -> Result<f64> {
    check_in_slice(x, tau, 1.0)?;
    let dn = norm2(d);
    if dn == 0.0 {
        return Err(MvskError::Contract("zero direction".into()));
    }
    let s: f64 = d.iter().sum();
    if s.abs() > 1e-10 * dn.max(1.0) {
        return Err(MvskError::Contract(format!("direction is not tangent: 1^T d = {s:e}")));
    }
    let cap = step_cap(x, d, tau);
    if !cap.is_finite() {
        return Err(MvskError::Internal("tangent direction without a negative component".into()));
    }
    Ok(cap)
}

pub(crate) fn check_in_slice(x: &[f64], tau: f64, mass: f64) -> Result<()> {
    let s: f64 = x.iter().sum();
    let min = x.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min >= tau - PIN_TOL) || (s - mass).abs() > 1e-10 {
        return Err(MvskError::Domain(format!(
            "point is outside the slice: min = {min:e}, sum = {s}, tau = {tau:e}"
        )));
    }
    Ok(())
}

/// Euclidean projection onto `{u : 1^T u = mass, u >= τ}` by sort and
/// threshold. Requires `n τ < mass`.
pub fn project_capped_simplex(v: &[f64], mass: f64, tau: f64) -> Vec<f64> {
    let n = v.len();
    let budget = mass - n as f64 * tau;
    debug_assert!(budget > 0.0);
    let mut sorted: Vec<f64> = v.iter().map(|x| x - tau).collect();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let cand = (cumsum - budget) / (j + 1) as f64;
        if u - cand > 0.0 {
            theta = cand;
        }
    }
    v.iter().map(|x| tau + (x - tau - theta).max(0.0)).collect()
}

/// Projection onto the slice `Δ(τ)`.
pub fn project_slice(v: &[f64], tau: f64) -> Result<Vec<f64>> {
    let n = v.len();
    if n == 0 {
        return Err(MvskError::Dimension("empty vector".into()));
    }
    if !(tau >= 0.0 && tau * (n as f64) < 1.0) {
        return Err(MvskError::Domain(format!("slice floor {tau} must lie in [0, 1/{n})")));
    }
    Ok(project_capped_simplex(v, 1.0, tau))
}

/// `||(I - 11^T/n) g||_2`, which equals `||U^T g||_2`.
pub fn tangent_residual(g: &[f64]) -> f64 {
    norm2(&center(g))
}

/// Projected KKT residual `||x - Π_{Δ(τ)}(x - ∇f(x))||_2`.
///
/// For `x` away from the floor this is exactly the tangent-gradient
/// residual `||(I - 11^T/n) ∇f(x)||_2`; at floor points it vanishes iff
/// `x` satisfies the KKT conditions of the slice.
pub fn projected_kkt_residual(obj: &Objective, x: &[f64], tau: f64) -> Result<f64> {
    let cache = obj.evaluate(x)?;
    Ok(kkt_residual_from_gradient(x, cache.gradient()?, tau))
}

pub fn kkt_residual_from_gradient(x: &[f64], g: &[f64], tau: f64) -> f64 {
    let trial: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
    let mass: f64 = x.iter().sum();
    let p = project_capped_simplex(&trial, mass, tau);
    let d: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a - b).collect();
    norm2(&d)
}

/// Which coordinates are free and which sit at the slice floor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceState {
    pub free: Vec<usize>,
    pub pinned: Vec<usize>,
    pub fixed_value: f64,
    pub parent_dim: usize,
}

impl FaceState {
    pub fn full(n: usize, tau: f64) -> Self {
        Self { free: (0..n).collect(), pinned: Vec::new(), fixed_value: tau, parent_dim: n }
    }

    pub fn from_free(mut free: Vec<usize>, n: usize, tau: f64) -> Result<Self> {
        free.sort_unstable();
        free.dedup();
        if free.is_empty() {
            return Err(MvskError::DegenerateFace);
        }
        let mut is_free = vec![false; n];
        free.iter().for_each(|&i| is_free[i] = true);
        let pinned: Vec<usize> = (0..n).filter(|&i| !is_free[i]).collect();
        if pinned.len() as f64 * tau >= 1.0 {
            return Err(MvskError::Domain("pinned mass leaves an empty face".into()));
        }
        Ok(Self { free, pinned, fixed_value: tau, parent_dim: n })
    }

    /// Mass carried by the free coordinates.
    pub fn mass(&self) -> f64 {
        1.0 - self.pinned.len() as f64 * self.fixed_value
    }

    pub fn gather(&self, x: &[f64]) -> Vec<f64> {
        self.free.iter().map(|&i| x[i]).collect()
    }

    /// Ambient portfolio with pinned coordinates at the floor.
    pub fn merge(&self, x_free: &[f64]) -> Vec<f64> {
        let mut x = vec![self.fixed_value; self.parent_dim];
        for (&i, &v) in self.free.iter().zip(x_free) {
            x[i] = v;
        }
        x
    }

    pub fn scatter(&self, d_free: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0; self.parent_dim];
        for (&i, &v) in self.free.iter().zip(d_free) {
            d[i] = v;
        }
        d
    }
}

/// Pins every coordinate within [`PIN_TOL`] of `τ` and returns the face,
/// the restricted objective and the free part of `x` (carrying the full free
/// mass `1 - |pinned| τ`).
pub fn restrict_to_face(obj: &Objective, x: &[f64], tau: f64) -> Result<(FaceState, Objective, Vec<f64>)> {
    check_in_slice(x, tau, 1.0)?;
    let n = x.len();
    let free: Vec<usize> = (0..n).filter(|&i| x[i] > tau + PIN_TOL).collect();
    let face = FaceState::from_free(free, n, tau)?;
    let sub = obj.restrict(&face.free, tau)?;
    let xf = face.gather(x);
    Ok((face.clone(), sub, rebalance(&xf, face.mass())))
}

/// Shifts `x` uniformly so that it sums to `mass`.
pub(crate) fn rebalance(x: &[f64], mass: f64) -> Vec<f64> {
    let s: f64 = x.iter().sum();
    let shift = (mass - s) / x.len() as f64;
    x.iter().map(|v| v + shift).collect()
}
