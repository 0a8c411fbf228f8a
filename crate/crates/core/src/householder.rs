//! Implicit Householder reflectors.
//!
//! A reflector `H = I - beta v v^T` with `H e1 = ±t` for a unit vector `t`
//! yields an orthonormal basis of `t`'s orthogonal complement as columns
//! `2..m` of `H`. Both the simplex tangent basis and the level-set frame are
//! built this way and applied in `O(m)` without ever forming `H`.

use nalgebra::DMatrix;

use crate::linalg::dot;

#[derive(Clone, Debug)]
pub struct Reflector {
    v: Vec<f64>,
    beta: f64,
}

impl Reflector {
    /// Reflector whose first column is `-sign(t[0]) t`. `t` must be a unit
    /// vector. The sign choice keeps `v = e1 + sign(t[0]) t` away from zero.
    pub fn onto(t: &[f64]) -> Self {
        assert!(!t.is_empty(), "reflector needs a nonempty target");
        let sigma = if t[0] >= 0.0 { 1.0 } else { -1.0 };
        let mut v: Vec<f64> = t.iter().map(|x| sigma * x).collect();
        v[0] += 1.0;
        let vv = dot(&v, &v);
        Self { v, beta: 2.0 / vv }
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    /// `w <- H w`.
    pub fn apply(&self, w: &mut [f64]) {
        let s = self.beta * dot(&self.v, w);
        w.iter_mut().zip(&self.v).for_each(|(wi, vi)| *wi -= s * vi);
    }

    /// `Q eta`, where `Q` is columns `2..m` of `H`.
    pub fn tail_columns(&self, eta: &[f64]) -> Vec<f64> {
        debug_assert_eq!(eta.len() + 1, self.dim());
        let s = self.beta * dot(&self.v[1..], eta);
        let mut out = Vec::with_capacity(self.dim());
        out.push(-s * self.v[0]);
        out.extend(eta.iter().zip(&self.v[1..]).map(|(e, vi)| e - s * vi));
        out
    }

    /// `Q^T w`, i.e. entries `2..m` of `H w`.
    pub fn tail_transpose(&self, w: &[f64]) -> Vec<f64> {
        debug_assert_eq!(w.len(), self.dim());
        let s = self.beta * dot(&self.v, w);
        w[1..].iter().zip(&self.v[1..]).map(|(wi, vi)| wi - s * vi).collect()
    }

    /// `H e1`.
    pub fn first_column(&self) -> Vec<f64> {
        let s = self.beta * self.v[0];
        let mut out: Vec<f64> = self.v.iter().map(|vi| -s * vi).collect();
        out[0] += 1.0;
        out
    }

    /// Dense `m x (m-1)` copy of `Q`.
    pub fn tail_dense(&self) -> DMatrix<f64> {
        let m = self.dim();
        let mut q = DMatrix::zeros(m, m - 1);
        let mut e = vec![0.0; m - 1];
        for j in 0..m - 1 {
            e[j] = 1.0;
            let col = self.tail_columns(&e);
            q.column_mut(j).copy_from_slice(&col);
            e[j] = 0.0;
        }
        q
    }
}
