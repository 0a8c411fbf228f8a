//! Synthetic instance families.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{MvskError, Result};
use crate::instance::{center_panel, crra_coefficients, CoefficientOrigin, PreferenceCoefficients, ReturnPanel};
use crate::linalg::RowMatrix;
use crate::simplex::TangentBasis;

pub const UNIFORM_LO: f64 = -0.1;
pub const UNIFORM_HI: f64 = 0.4;

/// The generator behind every synthetic instance.
pub fn rng_from_seed(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// `T x n` returns with iid entries uniform on `[-0.1, 0.4]`.
pub fn gen_uniform_instance(n: usize, t: usize, seed: u64) -> Result<ReturnPanel> {
    if n < 1 || t < 2 {
        return Err(MvskError::Dimension(format!("uniform instance needs n >= 1 and T >= 2, got n = {n}, T = {t}")));
    }
    let mut rng = rng_from_seed(seed);
    let width = UNIFORM_HI - UNIFORM_LO;
    let data = (0..n * t).map(|_| UNIFORM_LO + width * rng.random::<f64>()).collect();
    center_panel(RowMatrix::from_row_major(t, n, data))
}

/// Return-seeking, risk-averse and balanced weightings, in that order.
pub fn stress_profiles() -> Vec<PreferenceCoefficients> {
    [("return_seeking", [10.0, 1.0, 10.0, 1.0]), ("risk_averse", [1.0, 10.0, 1.0, 10.0]), ("balanced", [10.0; 4])]
        .into_iter()
        .map(|(name, c)| {
            PreferenceCoefficients::with_origin(c, CoefficientOrigin::Profile { name: name.into() })
                .expect("stress profiles are valid")
        })
        .collect()
}

/// Singular values `κ^{i/(r-1)}`, `i = 0..r`: smallest 1, largest `κ`.
pub fn log_spaced_singular_values(r: usize, kappa: f64) -> Vec<f64> {
    if r == 1 {
        return vec![1.0];
    }
    (0..r).map(|i| kappa.powf(i as f64 / (r - 1) as f64)).collect()
}

/// Instance with prescribed tangent conditioning: `A = Q diag(s) W^T` with
/// `Q ⟂ 1`, `W = U V`, and `R = A + 1 mu^T`. At equal weight `A x = 0`, and
/// the singular values of `A U` are exactly `s`.
pub fn gen_conditioned_instance(
    n: usize,
    t: usize,
    kappa: f64,
    gamma: f64,
    seed: u64,
) -> Result<(ReturnPanel, PreferenceCoefficients)> {
    if !(kappa >= 1.0) || !kappa.is_finite() {
        return Err(MvskError::Domain(format!("kappa must be >= 1, got {kappa}")));
    }
    if n < 2 || t < 2 {
        return Err(MvskError::Dimension(format!("conditioned instance needs n, T >= 2, got n = {n}, T = {t}")));
    }
    let r = (n - 1).min(t - 1);
    if r < 2 {
        return Err(MvskError::Dimension(format!("rank budget min(n-1, T-1) = {r} is below 2")));
    }
    let coeffs = crra_coefficients(gamma)?;
    let mut rng = rng_from_seed(seed);

    let mut g = DMatrix::<f64>::from_fn(t, r, |_, _| rng.sample(StandardNormal));
    for mut col in g.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    let q = g.qr().q();
    // Re-project: orthonormalization keeps the columns in 1's complement up to
    // rounding; one more pass removes the residue.
    let mut q = q.columns(0, r).into_owned();
    for mut col in q.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }

    let v = DMatrix::<f64>::from_fn(n - 1, r, |_, _| rng.sample(StandardNormal)).qr().q();
    let basis = TangentBasis::centered_at_equal_weight(n, 1.0)?;
    let mut w = DMatrix::<f64>::zeros(n, r);
    for j in 0..r {
        let col: Vec<f64> = v.column(j).iter().copied().collect();
        w.column_mut(j).copy_from_slice(&basis.apply(&col));
    }

    let s = log_spaced_singular_values(r, kappa);
    for (j, sj) in s.iter().enumerate() {
        q.column_mut(j).scale_mut(*sj);
    }
    let a = q * w.transpose();

    let mu: Vec<f64> = (0..n).map(|_| 0.1 + 0.1 * rng.random::<f64>()).collect();
    let mut raw = RowMatrix::from_dmatrix(&a);
    for row in 0..t {
        for (x, m) in raw.row_mut(row).iter_mut().zip(&mu) {
            *x += m;
        }
    }
    Ok((center_panel(raw)?, coeffs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::norm_inf;
    use crate::verify::convexity_certificate;

    #[test]
    fn uniform_is_deterministic_and_in_range() {
        let a = gen_uniform_instance(7, 30, 42).unwrap();
        let b = gen_uniform_instance(7, 30, 42).unwrap();
        assert_eq!(a.raw(), b.raw());
        let c = gen_uniform_instance(7, 30, 43).unwrap();
        assert_ne!(a.raw(), c.raw());
    }

    #[test]
    fn uniform_support_and_mean() {
        let p = gen_uniform_instance(1000, 1000, 7).unwrap();
        let v = p.raw().as_slice();
        let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
        assert!(lo >= UNIFORM_LO && hi <= UNIFORM_HI);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let se = 0.5 / 12f64.sqrt() / (v.len() as f64).sqrt();
        assert!((mean - 0.15).abs() <= 3.0 * se, "mean {mean}");
    }

    #[test]
    fn stress_profile_classification() {
        let p = stress_profiles();
        assert_eq!(p.len(), 3);
        assert_eq!(p[0].as_array(), [10.0, 1.0, 10.0, 1.0]);
        assert!(!convexity_certificate(&p[0]).certified);
        assert!(convexity_certificate(&p[1]).certified);
        assert!(convexity_certificate(&p[2]).certified);
    }

    #[test]
    fn conditioned_null_start_and_centering() {
        let (p, c) = gen_conditioned_instance(30, 50, 100.0, 6.0, 3).unwrap();
        assert_eq!(c.as_array()[1], 3.0);
        let x = vec![1.0 / 30.0; 30];
        assert!(norm_inf(&p.centered().mul_vec(&x)) <= 1e-12);
        for m in p.mu() {
            assert!((0.1..=0.2).contains(m));
        }
    }

    #[test]
    fn conditioned_rank_budget() {
        assert!(matches!(gen_conditioned_instance(2, 10, 10.0, 2.0, 1), Err(MvskError::Dimension(_))));
        assert!(matches!(gen_conditioned_instance(10, 10, 0.5, 2.0, 1), Err(MvskError::Domain(_))));
    }
}
