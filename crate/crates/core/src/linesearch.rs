//! Exact line search along a tangent direction.
//!
//! Along `x + α d` the sample projection is `z + α w` with `w = A d`, so the
//! objective is a quartic in `α` whose coefficients are mixed power sums of
//! `z` and `w`. Minimizing it only needs the endpoints and the real roots of
//! a cubic.

use serde::{Deserialize, Serialize};

use crate::error::{MvskError, Result};
use crate::linalg::{dot, norm2};
use crate::oracle::OracleCache;
use crate::simplex::step_cap;

/// `s_rs = (1/T) Σ z_t^r w_t^s` for the pairs the quartic needs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PowerSums {
    pub s11: f64,
    pub s21: f64,
    pub s31: f64,
    pub s02: f64,
    pub s12: f64,
    pub s22: f64,
    pub s03: f64,
    pub s13: f64,
    pub s04: f64,
}

pub fn power_sums(z: &[f64], w: &[f64]) -> Result<PowerSums> {
    if z.len() != w.len() {
        return Err(MvskError::Dimension(format!("power sums: {} vs {}", z.len(), w.len())));
    }
    let mut s = PowerSums::default();
    for (&zt, &wt) in z.iter().zip(w) {
        let z2 = zt * zt;
        let w2 = wt * wt;
        s.s11 += zt * wt;
        s.s21 += z2 * wt;
        s.s31 += z2 * zt * wt;
        s.s02 += w2;
        s.s12 += zt * w2;
        s.s22 += z2 * w2;
        s.s03 += w2 * wt;
        s.s13 += zt * w2 * wt;
        s.s04 += w2 * w2;
    }
    let t = z.len().max(1) as f64;
    for v in [
        &mut s.s11, &mut s.s21, &mut s.s31, &mut s.s02, &mut s.s12, &mut s.s22, &mut s.s03, &mut s.s13, &mut s.s04,
    ] {
        *v /= t;
    }
    Ok(s)
}

/// `φ(α) = a0 + a1 α + a2 α² + a3 α³ + a4 α⁴` on `[0, alpha_max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineModel {
    pub a: [f64; 5],
    pub alpha_max: f64,
    pub sums: PowerSums,
}

impl LineModel {
    pub fn from_coefficients(a: [f64; 5], alpha_max: f64) -> Self {
        Self { a, alpha_max, sums: PowerSums::default() }
    }

    pub fn eval(&self, alpha: f64) -> f64 {
        let a = &self.a;
        a[0] + alpha * (a[1] + alpha * (a[2] + alpha * (a[3] + alpha * a[4])))
    }

    pub fn slope(&self, alpha: f64) -> f64 {
        let a = &self.a;
        a[1] + alpha * (2.0 * a[2] + alpha * (3.0 * a[3] + alpha * 4.0 * a[4]))
    }
}

/// Builds the quartic along `d` from the iterate cache, capping the step so
/// that `x + α d >= τ`. One extra pass over `A`.
pub fn line_model(cache: &OracleCache<'_>, d: &[f64], tau: f64) -> Result<LineModel> {
    let dn = norm2(d);
    if dn == 0.0 {
        return Err(MvskError::Contract("zero direction".into()));
    }
    let s: f64 = d.iter().sum();
    if s.abs() > 1e-10 * dn {
        return Err(MvskError::Contract(format!("direction is not tangent: 1^T d = {s:e}")));
    }
    let cap = step_cap(cache.x(), d, tau);
    line_model_capped(cache, d, cap)
}

/// As [`line_model`] with an externally supplied step cap.
pub fn line_model_capped(cache: &OracleCache<'_>, d: &[f64], alpha_max: f64) -> Result<LineModel> {
    if d.len() != cache.x().len() {
        return Err(MvskError::Dimension(format!("direction has length {}, expected {}", d.len(), cache.x().len())));
    }
    if !(alpha_max >= 0.0) {
        return Err(MvskError::Contract(format!("invalid step cap {alpha_max}")));
    }
    let obj = cache.objective();
    let w = obj.project(d);
    let sums = power_sums(cache.z(), &w)?;
    let c = obj.coeffs();
    let s = &sums;
    let a = [
        cache.value(),
        -c.c1 * dot(obj.mu(), d) + 2.0 * c.c2 * s.s11 - 3.0 * c.c3 * s.s21 + 4.0 * c.c4 * s.s31,
        c.c2 * s.s02 - 3.0 * c.c3 * s.s12 + 6.0 * c.c4 * s.s22,
        -c.c3 * s.s03 + 4.0 * c.c4 * s.s13,
        c.c4 * s.s04,
    ];
    if a.iter().any(|v| !v.is_finite()) {
        return Err(MvskError::Numeric("non-finite line model".into()));
    }
    Ok(LineModel { a, alpha_max, sums })
}

/// Global minimizer of the quartic on `[0, alpha_max]`; ties go to the
/// smallest step. Returns `(α*, φ(α*))`.
pub fn minimize_line(model: &LineModel) -> (f64, f64) {
    let am = model.alpha_max;
    if !(am > 0.0) || !am.is_finite() {
        return (0.0, model.a[0]);
    }
    // Rescale to s = α / alpha_max on [0, 1].
    let b = [
        0.0,
        model.a[1] * am,
        model.a[2] * am * am,
        model.a[3] * am * am * am,
        model.a[4] * am * am * am * am,
    ];
    let slope = |s: f64| b[1] + s * (2.0 * b[2] + s * (3.0 * b[3] + s * 4.0 * b[4]));
    let curv = |s: f64| 2.0 * b[2] + s * (6.0 * b[3] + s * 12.0 * b[4]);

    let mut cands = vec![0.0, 1.0];
    for r in stationary_points(&b) {
        let mut s = r;
        for _ in 0..2 {
            let h = curv(s);
            if h == 0.0 || !h.is_finite() {
                break;
            }
            let next = s - slope(s) / h;
            if next.is_finite() && slope(next).abs() <= slope(s).abs() {
                s = next;
            }
        }
        if s > 0.0 && s < 1.0 {
            cands.push(s);
        }
        if r > 0.0 && r < 1.0 {
            cands.push(r);
        }
    }
    cands.sort_by(|p, q| p.total_cmp(q));
    let mut best = (0.0, model.a[0]);
    for &s in &cands[1..] {
        let alpha = if s == 1.0 { am } else { s * am };
        let v = model.eval(alpha);
        if v < best.1 {
            best = (alpha, v);
        }
    }
    best
}

/// Candidate roots of `b1 + 2 b2 s + 3 b3 s² + 4 b4 s³`, including the real
/// parts of nearly real complex pairs.
fn stationary_points(b: &[f64; 5]) -> Vec<f64> {
    let scale = b[1..].iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let tiny = 1e-14 * scale;
    let (c0, c1, c2, c3) = (b[1], 2.0 * b[2], 3.0 * b[3], 4.0 * b[4]);
    if b[4].abs() > tiny {
        cubic_roots(c3, c2, c1, c0)
    } else if b[3].abs() > tiny {
        quadratic_roots(c2, c1, c0)
    } else if b[2].abs() > tiny {
        vec![-c0 / c1]
    } else {
        Vec::new()
    }
}

fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        // Keep the vertex; polishing and value comparison decide.
        return vec![-b / (2.0 * a)];
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let mut out = Vec::with_capacity(2);
    if q != 0.0 {
        out.push(c / q);
        out.push(q / a);
    } else {
        out.push(0.0);
    }
    out
}

fn cubic_roots(a: f64, b: f64, c: f64, d: f64) -> Vec<f64> {
    let (p, q, r) = (b / a, c / a, d / a);
    let qq = (p * p - 3.0 * q) / 9.0;
    let rr = (2.0 * p * p * p - 9.0 * p * q + 27.0 * r) / 54.0;
    let shift = p / 3.0;
    let q3 = qq * qq * qq;
    if rr * rr < q3 {
        let theta = (rr / q3.sqrt()).clamp(-1.0, 1.0).acos();
        let m = -2.0 * qq.sqrt();
        let tau = std::f64::consts::TAU;
        vec![
            m * (theta / 3.0).cos() - shift,
            m * ((theta + tau) / 3.0).cos() - shift,
            m * ((theta - tau) / 3.0).cos() - shift,
        ]
    } else {
        let big = -rr.signum() * (rr.abs() + (rr * rr - q3).sqrt()).cbrt();
        let small = if big != 0.0 { qq / big } else { 0.0 };
        let mut out = vec![big + small - shift];
        // Real part of the complex pair; harmless as an extra candidate and
        // catches near-double roots.
        out.push(-0.5 * (big + small) - shift);
        out
    }
}

/// Result of a backtracking search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmijoOutcome {
    pub alpha: f64,
    pub value: f64,
    pub evaluations: usize,
    pub stalled: bool,
}

pub const ARMIJO_MAX_SHRINKS: usize = 60;

/// Backtracking: accept the first `α = alpha_init · shrink^k` with
/// `φ(α) <= φ(0) + σ α g_dot_d`.
pub fn armijo_search<F>(
    mut phi: F,
    phi0: f64,
    g_dot_d: f64,
    alpha_init: f64,
    sigma: f64,
    shrink: f64,
) -> Result<ArmijoOutcome>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(g_dot_d < 0.0) {
        return Err(MvskError::Contract(format!("not a descent direction: slope {g_dot_d:e}")));
    }
    if !(sigma > 0.0 && sigma < 1.0 && shrink > 0.0 && shrink < 1.0 && alpha_init > 0.0) {
        return Err(MvskError::Contract("armijo parameters out of range".into()));
    }
    let mut alpha = alpha_init;
    for k in 0..=ARMIJO_MAX_SHRINKS {
        let v = phi(alpha)?;
        if v <= phi0 + sigma * alpha * g_dot_d {
            return Ok(ArmijoOutcome { alpha, value: v, evaluations: k + 1, stalled: false });
        }
        alpha *= shrink;
    }
    Ok(ArmijoOutcome { alpha: 0.0, value: phi0, evaluations: ARMIJO_MAX_SHRINKS + 1, stalled: true })
}
