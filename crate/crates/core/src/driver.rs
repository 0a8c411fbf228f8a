//! The outer descent loop on `Δ(τ)`.
//!
//! Iterates live on a face of the slice: coordinates within [`PIN_TOL`] of
//! the floor are pinned and folded into the objective, and the affine-normal
//! direction is computed on the free coordinates only. Each pass
//!
//! 1. evaluates the face cache and the full gradient, and stops when the
//!    full-simplex KKT residual is below `epsilon`;
//! 2. releases pinned coordinates with a negative multiplier once the face is
//!    solved;
//! 3. otherwise builds the direction and line-searches the raw ray when a
//!    trial step of length `η` stays feasible. When it does not, the best of
//!    the capped raw step, the segment towards the projected trial point and
//!    the projected arc at lengths `η, η/2, ...` is accepted.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::direction::{yand_direction, SolveMode, TangentSolveConfig, DIRECT_CAP};
use crate::error::{MvskError, Result};
use crate::instance::{PreferenceCoefficients, ReturnPanel};
use crate::linalg::{dot, norm2};
use crate::linesearch::{armijo_search, line_model_capped, minimize_line};
use crate::oracle::{KernelCounts, Objective};
use crate::simplex::{
    check_in_slice, kkt_residual_from_gradient, project_capped_simplex, rebalance, step_cap, tangent_residual,
    FaceState, TangentBasis, PIN_TOL,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Small,
    Large,
    Custom,
}

impl std::str::FromStr for Preset {
    type Err = MvskError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(Preset::Small),
            "large" => Ok(Preset::Large),
            "custom" => Ok(Preset::Custom),
            _ => Err(MvskError::Domain(format!("unknown preset '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineSearchKind {
    ExactQuartic,
    Armijo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub mode: Preset,
    pub epsilon: f64,
    pub tau: f64,
    pub max_iter: usize,
    pub max_elapsed_seconds: Option<f64>,
    pub projected_trial_step: f64,
    pub restart_trial_steps: Vec<f64>,
    pub restart_max_iter: usize,
    pub tangent: TangentSolveConfig,
    pub line_search: LineSearchKind,
    /// Keep `(f, min x, 1^T x)` for every accepted iterate.
    pub record_trace: bool,
}

impl SolverConfig {
    pub fn preset(mode: Preset) -> Self {
        match mode {
            Preset::Small | Preset::Custom => Self {
                mode,
                epsilon: 1e-6,
                tau: 1e-8,
                max_iter: 300,
                max_elapsed_seconds: None,
                projected_trial_step: 0.05,
                restart_trial_steps: Vec::new(),
                restart_max_iter: 120,
                tangent: TangentSolveConfig::direct(),
                line_search: LineSearchKind::ExactQuartic,
                record_trace: true,
            },
            Preset::Large => Self {
                mode,
                epsilon: 1e-6,
                tau: 1e-8,
                max_iter: 40,
                max_elapsed_seconds: Some(60.0),
                projected_trial_step: 0.05,
                restart_trial_steps: vec![0.045, 0.02],
                restart_max_iter: 120,
                tangent: TangentSolveConfig::pcg(1e-3, 15, 1e-4),
                line_search: LineSearchKind::ExactQuartic,
                record_trace: true,
            },
        }
    }

    pub fn small() -> Self {
        Self::preset(Preset::Small)
    }

    pub fn large() -> Self {
        Self::preset(Preset::Large)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(MvskError::Domain(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.tau >= 0.0 && self.tau * (n as f64) < 1.0) {
            return Err(MvskError::Domain(format!("tau = {} must lie in [0, 1/{n})", self.tau)));
        }
        if !(self.projected_trial_step > 0.0) || self.restart_trial_steps.iter().any(|s| !(*s > 0.0)) {
            return Err(MvskError::Domain("projected trial steps must be positive".into()));
        }
        if self.tangent.mode == SolveMode::Direct && n > DIRECT_CAP {
            return Err(MvskError::SizeCap(format!(
                "direct tangent solve is limited to n <= {DIRECT_CAP}; use the large preset for n = {n}"
            )));
        }
        self.tangent.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    Stalled,
    MaxIter,
    MaxElapsed,
    DegenerateFace,
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Converged => "converged",
            SolveStatus::Stalled => "stalled",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::MaxElapsed => "max_elapsed",
            SolveStatus::DegenerateFace => "degenerate_face",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub f: f64,
    pub min_x: f64,
    pub sum_x: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub x_star: Vec<f64>,
    pub f_star: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub face_events: usize,
    pub restarts: usize,
    pub krylov_iters_total: usize,
    pub oracle_passes: u64,
    pub kernels: KernelCounts,
    pub wall_seconds: f64,
    pub status: SolveStatus,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<TracePoint>,
}

/// Solves from `x0` (equal weight if `None`).
pub fn solve(
    panel: &ReturnPanel,
    coeffs: &PreferenceCoefficients,
    x0: Option<&[f64]>,
    config: &SolverConfig,
) -> Result<SolveReport> {
    let obj = Objective::new(panel, coeffs);
    solve_objective(&obj, x0, config)
}

pub fn solve_objective(obj: &Objective, x0: Option<&[f64]>, config: &SolverConfig) -> Result<SolveReport> {
    let start = Instant::now();
    let n = obj.dim();
    if n == 0 {
        return Err(MvskError::Dimension("no assets".into()));
    }
    config.validate(n)?;
    let x = match x0 {
        Some(x0) => {
            if x0.len() != n {
                return Err(MvskError::Dimension(format!("x0 has length {}, expected {n}", x0.len())));
            }
            check_in_slice(x0, config.tau, 1.0)?;
            x0.to_vec()
        }
        None => vec![1.0 / n as f64; n],
    };
    let counts0 = obj.counters().snapshot();

    let mut state = State::new(obj, x, config);
    let status = if n == 1 {
        SolveStatus::Converged
    } else {
        let deadline = config.max_elapsed_seconds.map(|s| (start, s));
        let mut status = state.run(config.projected_trial_step, config.max_iter, deadline)?;
        let stall_like = matches!(status, Phase::Stalled) || (config.mode == Preset::Large && matches!(status, Phase::MaxIter));
        if stall_like && !config.restart_trial_steps.is_empty() {
            for &eta in &config.restart_trial_steps {
                state.restarts += 1;
                state.clear_face()?;
                status = state.run(eta, config.restart_max_iter, deadline)?;
                if !matches!(status, Phase::Stalled | Phase::MaxIter) {
                    break;
                }
            }
        }
        match status {
            Phase::Converged => SolveStatus::Converged,
            Phase::MaxIter if state.restarts > 0 => SolveStatus::Stalled,
            Phase::MaxIter => SolveStatus::MaxIter,
            Phase::Stalled => SolveStatus::Stalled,
            Phase::MaxElapsed => SolveStatus::MaxElapsed,
        }
    };

    let x_star = state.x.clone();
    let cache = obj.evaluate(&x_star)?;
    let f_star = cache.value();
    if state.pending_record {
        state.record(f_star);
    }
    let kkt = kkt_residual_from_gradient(&x_star, cache.gradient()?, config.tau);
    let status = if status == SolveStatus::Converged && kkt > config.epsilon && n > 1 {
        SolveStatus::Stalled
    } else {
        status
    };
    drop(cache);
    let kernels = obj.counters().snapshot() - counts0;
    Ok(SolveReport {
        x_star,
        f_star,
        kkt_residual: if n == 1 { 0.0 } else { kkt },
        iterations: state.iterations,
        face_events: state.face_events,
        restarts: state.restarts,
        krylov_iters_total: state.krylov_iters,
        oracle_passes: kernels.passes,
        kernels,
        wall_seconds: start.elapsed().as_secs_f64(),
        status,
        trace: state.trace,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    Converged,
    Stalled,
    MaxIter,
    MaxElapsed,
}

const STALL_REL_DECREASE: f64 = 1e-12;
const STALL_SMALL_STEPS: usize = 5;
const STALL_ZERO_STEPS: usize = 2;
const RELEASE_TOL: f64 = 1e-10;
/// Release pinned coordinates once the face residual drops below this
/// fraction of the largest multiplier violation.
const RELEASE_RATIO: f64 = 0.1;
const ARC_HALVINGS: usize = 40;

struct State<'r> {
    root: &'r Objective,
    config: &'r SolverConfig,
    tau: f64,
    x: Vec<f64>,
    face: FaceState,
    face_obj: Option<Objective>,
    basis: Option<TangentBasis>,
    iterations: usize,
    face_events: usize,
    restarts: usize,
    krylov_iters: usize,
    trace: Vec<TracePoint>,
    pending_record: bool,
}

impl<'r> State<'r> {
    fn new(root: &'r Objective, x: Vec<f64>, config: &'r SolverConfig) -> Self {
        let n = x.len();
        let mut s = Self {
            root,
            config,
            tau: config.tau,
            face: FaceState::full(n, config.tau),
            face_obj: None,
            basis: None,
            x,
            iterations: 0,
            face_events: 0,
            restarts: 0,
            krylov_iters: 0,
            trace: Vec::new(),
            pending_record: true,
        };
        s.basis = TangentBasis::centered_at_equal_weight(n, 1.0).ok();
        s
    }

    fn set_face(&mut self, free: Vec<usize>) -> Result<()> {
        let n = self.x.len();
        let face = FaceState::from_free(free, n, self.tau)?;
        self.face_obj = if face.pinned.is_empty() { None } else { Some(self.root.restrict(&face.free, self.tau)?) };
        let k = face.free.len();
        self.basis = if k >= 2 { Some(TangentBasis::centered_at_equal_weight(k, face.mass())?) } else { None };
        for &i in &face.pinned {
            self.x[i] = self.tau;
        }
        let xf = rebalance(&face.gather(&self.x), face.mass());
        for (&i, v) in face.free.iter().zip(xf) {
            self.x[i] = v;
        }
        self.face = face;
        Ok(())
    }

    fn clear_face(&mut self) -> Result<()> {
        let n = self.x.len();
        self.set_face((0..n).collect())
    }

    fn record(&mut self, f: f64) {
        self.pending_record = false;
        if self.config.record_trace {
            let min_x = self.x.iter().cloned().fold(f64::INFINITY, f64::min);
            self.trace.push(TracePoint { f, min_x, sum_x: self.x.iter().sum() });
        }
    }

    /// Pins free coordinates that reached the floor. Returns whether the face
    /// changed.
    fn pin_floor(&mut self) -> Result<bool> {
        let floor = self.tau + PIN_TOL;
        if !self.face.free.iter().any(|&i| self.x[i] <= floor) {
            return Ok(false);
        }
        let free: Vec<usize> = self.face.free.iter().copied().filter(|&i| self.x[i] > floor).collect();
        if free.is_empty() {
            // Keep the largest coordinate free.
            let best = self.face.free.iter().copied().max_by(|&a, &b| self.x[a].total_cmp(&self.x[b]));
            self.set_face(best.into_iter().collect())?;
        } else {
            self.set_face(free)?;
        }
        self.face_events += 1;
        Ok(true)
    }

    fn run(&mut self, eta: f64, max_iter: usize, deadline: Option<(Instant, f64)>) -> Result<Phase> {
        let cfg = self.config;
        let root = self.root;
        self.pin_floor()?;
        let mut small_steps = 0usize;
        let mut zero_steps = 0usize;
        let mut budget = max_iter;
        loop {
            if let Some((t0, limit)) = deadline {
                if t0.elapsed().as_secs_f64() > limit {
                    return Ok(Phase::MaxElapsed);
                }
            }
            let full = root.evaluate(&self.x)?;
            let g_full = full.gradient()?.to_vec();
            let f = full.value();
            drop(full);
            if self.pending_record {
                self.record(f);
            }
            let kkt = kkt_residual_from_gradient(&self.x, &g_full, self.tau);
            if kkt <= cfg.epsilon {
                return Ok(Phase::Converged);
            }
            if budget == 0 {
                return Ok(Phase::MaxIter);
            }

            let g_face = self.face.gather(&g_full);
            let face_res = if self.face.free.len() >= 2 { tangent_residual(&g_face) } else { 0.0 };
            let mean = g_face.iter().sum::<f64>() / g_face.len() as f64;
            let violation = self.face.pinned.iter().map(|&i| mean - g_full[i]).fold(0.0_f64, f64::max);
            if face_res <= (0.5 * cfg.epsilon).max(RELEASE_RATIO * violation) {
                let released: Vec<usize> =
                    self.face.pinned.iter().copied().filter(|&i| g_full[i] - mean < -RELEASE_TOL).collect();
                if released.is_empty() {
                    return Ok(Phase::Stalled);
                }
                let mut free = self.face.free.clone();
                free.extend(released);
                self.set_face(free)?;
                self.face_events += 1;
                continue;
            }

            budget -= 1;
            self.iterations += 1;
            let face_obj = self.face_obj.as_ref().unwrap_or(root);
            let xf = self.face.gather(&self.x);
            let cache = face_obj.evaluate(&xf)?;
            cache.seed_gradient(g_face.clone());
            let basis = self.basis.as_ref().expect("face with two or more free coordinates has a basis");
            let mut tcfg = cfg.tangent.clone();
            tcfg.seed = tcfg.seed.wrapping_add(self.iterations as u64);
            tcfg.trace_dim.get_or_insert(self.face.parent_dim.saturating_sub(1));
            let dir = yand_direction(&cache, basis, &tcfg)?;
            self.krylov_iters += dir.diagnostics.krylov_iters;

            let step = boundary_step(&cache, &xf, &dir.d, &g_face, self.face.mass(), self.tau, eta, cfg.line_search)?;
            drop(cache);
            let (x_new, f_new, alpha) = step;
            for (&i, v) in self.face.free.iter().zip(&x_new) {
                self.x[i] = *v;
            }
            self.pin_floor()?;
            self.pending_record = true;

            let rel = (f - f_new) / (1.0 + f.abs());
            small_steps = if rel < STALL_REL_DECREASE { small_steps + 1 } else { 0 };
            zero_steps = if alpha == 0.0 { zero_steps + 1 } else { 0 };
            if small_steps >= STALL_SMALL_STEPS || zero_steps >= STALL_ZERO_STEPS {
                return Ok(Phase::Stalled);
            }
        }
    }
}

/// One accepted step on the current face. Returns the new free coordinates,
/// their objective value and the step length used.
#[allow(clippy::too_many_arguments)]
fn boundary_step(
    cache: &crate::oracle::OracleCache<'_>,
    xf: &[f64],
    d: &[f64],
    g: &[f64],
    mass: f64,
    tau: f64,
    eta: f64,
    ls: LineSearchKind,
) -> Result<(Vec<f64>, f64, f64)> {
    let dn = norm2(d);
    let am = step_cap(xf, d, tau);
    let raw = |am: f64| -> Result<(Vec<f64>, f64, f64)> {
        let (alpha, fv) = line_search(cache, d, am, dot(g, d), ls)?;
        let mut y: Vec<f64> = xf.iter().zip(d).map(|(a, b)| a + alpha * b).collect();
        if alpha == am {
            snap_to_floor(&mut y, tau, mass);
        }
        Ok((y, fv, alpha))
    };
    if am * dn >= eta {
        return raw(am);
    }
    let mut best = raw(am)?;
    let trial: Vec<f64> = xf.iter().zip(d).map(|(a, b)| a + eta / dn * b).collect();
    let xbar = project_capped_simplex(&trial, mass, tau);
    let dbar: Vec<f64> = xbar.iter().zip(xf).map(|(a, b)| a - b).collect();
    let slope = dot(g, &dbar);
    if norm2(&dbar) > 1e-15 * (1.0 + norm2(xf)) && slope < 0.0 {
        let (alpha, fv) = line_search(cache, &dbar, 1.0, slope, ls)?;
        if fv < best.1 {
            let y = if alpha == 1.0 { xbar } else { xf.iter().zip(&dbar).map(|(a, b)| a + alpha * b).collect() };
            best = (y, fv, alpha);
        }
    }
    // Projected arc: shorter trial lengths pin fewer coordinates.
    let obj = cache.objective();
    let mut len = eta;
    for _ in 0..ARC_HALVINGS {
        if len <= am * dn {
            break;
        }
        let trial: Vec<f64> = xf.iter().zip(d).map(|(a, b)| a + len / dn * b).collect();
        let y = project_capped_simplex(&trial, mass, tau);
        let fv = obj.value_at(&y)?;
        if fv < best.1 {
            best = (y, fv, len / dn);
        }
        len *= 0.5;
    }
    Ok(best)
}

fn line_search(
    cache: &crate::oracle::OracleCache<'_>,
    d: &[f64],
    alpha_max: f64,
    slope: f64,
    ls: LineSearchKind,
) -> Result<(f64, f64)> {
    if !(alpha_max > 0.0) {
        return Ok((0.0, cache.value()));
    }
    match ls {
        LineSearchKind::ExactQuartic => {
            let model = line_model_capped(cache, d, alpha_max)?;
            Ok(minimize_line(&model))
        }
        LineSearchKind::Armijo => {
            if !(slope < 0.0) {
                return Ok((0.0, cache.value()));
            }
            let obj = cache.objective();
            let x = cache.x();
            let out = armijo_search(
                |a| obj.value_at(&x.iter().zip(d).map(|(p, q)| p + a * q).collect::<Vec<_>>()),
                cache.value(),
                slope,
                alpha_max.min(1.0),
                1e-4,
                0.5,
            )?;
            Ok((out.alpha, out.value))
        }
    }
}

/// Coordinates that overshot the floor by rounding are set to `τ`; the free
/// mass is restored on the others.
fn snap_to_floor(y: &mut [f64], tau: f64, mass: f64) {
    let mut hit = vec![false; y.len()];
    for (yi, h) in y.iter_mut().zip(hit.iter_mut()) {
        if *yi <= tau + PIN_TOL {
            *yi = tau;
            *h = true;
        }
    }
    let rest: usize = hit.iter().filter(|h| !**h).count();
    if rest == 0 {
        return;
    }
    let shift = (mass - y.iter().sum::<f64>()) / rest as f64;
    for (yi, h) in y.iter_mut().zip(&hit) {
        if !h {
            *yi += shift;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::gen_uniform_instance;
    use crate::instance::{center_panel, crra_coefficients};
    use crate::linalg::RowMatrix;
    use crate::testutil::{random_point, Lcg};

    fn assert_feasible_and_monotone(r: &SolveReport, tau: f64) {
        assert!(!r.trace.is_empty());
        for w in r.trace.windows(2) {
            assert!(w[1].f <= w[0].f + 1e-12 * (1.0 + w[0].f.abs()), "{} -> {}", w[0].f, w[1].f);
        }
        for p in &r.trace {
            assert!(p.min_x >= tau - 1e-12);
            assert!((p.sum_x - 1.0).abs() <= 1e-12);
        }
        assert!(r.x_star.iter().all(|v| *v >= tau - 1e-12));
        assert!((r.x_star.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn presets_match_the_parameter_table() {
        let s = SolverConfig::small();
        assert_eq!(s.tangent.mode, SolveMode::Direct);
        assert_eq!(s.line_search, LineSearchKind::ExactQuartic);
        assert_eq!((s.max_iter, s.tau, s.projected_trial_step, s.epsilon), (300, 1e-8, 0.05, 1e-6));
        let l = SolverConfig::large();
        assert_eq!(l.tangent.mode, SolveMode::Pcg);
        assert_eq!((l.tangent.krylov_tol, l.tangent.krylov_maxit, l.tangent.lambda), (1e-3, 15, 1e-4));
        assert_eq!((l.max_iter, l.max_elapsed_seconds, l.restart_max_iter), (40, Some(60.0), 120));
        assert_eq!(l.restart_trial_steps, vec![0.045, 0.02]);
        assert_eq!("large".parse::<Preset>().unwrap(), Preset::Large);
        assert!("medium".parse::<Preset>().is_err());
    }

    #[test]
    fn single_asset_is_trivially_optimal() {
        let p = center_panel(RowMatrix::from_rows(&[vec![0.1], vec![0.3], vec![-0.2]])).unwrap();
        let r = solve(&p, &crra_coefficients(6.0).unwrap(), None, &SolverConfig::small()).unwrap();
        assert_eq!(r.x_star, vec![1.0]);
        assert_eq!(r.status, SolveStatus::Converged);
        assert_eq!(r.kkt_residual, 0.0);
    }

    #[test]
    fn two_asset_minimum_variance_closed_form() {
        let rows = vec![vec![0.02, 0.01], vec![-0.01, 0.03], vec![0.04, -0.02], vec![0.00, 0.01], vec![-0.03, 0.02]];
        let p = center_panel(RowMatrix::from_rows(&rows)).unwrap();
        let a = p.centered();
        let t = a.rows() as f64;
        let s = |i: usize, j: usize| (0..a.rows()).map(|r| a.get(r, i) * a.get(r, j)).sum::<f64>() / t;
        let w = (s(1, 1) - s(0, 1)) / (s(0, 0) + s(1, 1) - 2.0 * s(0, 1));
        assert!(w > 0.0 && w < 1.0);
        let coeffs = PreferenceCoefficients::new(0.0, 1.0, 0.0, 0.0).unwrap();
        let r = solve(&p, &coeffs, None, &SolverConfig::small()).unwrap();
        assert_eq!(r.status, SolveStatus::Converged);
        assert!((r.x_star[0] - w).abs() < 1e-9, "{} vs {w}", r.x_star[0]);
    }

    #[test]
    fn certified_instance_converges_in_both_presets() {
        let p = gen_uniform_instance(50, 200, 5).unwrap();
        let c = crra_coefficients(6.0).unwrap();
        let small = solve(&p, &c, None, &SolverConfig::small()).unwrap();
        assert_eq!(small.status, SolveStatus::Converged);
        assert!(small.kkt_residual <= 1e-6);
        assert_feasible_and_monotone(&small, 1e-8);
        let obj = Objective::new(&p, &c);
        assert!((obj.value_at(&small.x_star).unwrap() - small.f_star).abs() <= 1e-12 * (1.0 + small.f_star.abs()));

        let large = solve(&p, &c, None, &SolverConfig::large()).unwrap();
        assert_eq!(large.status, SolveStatus::Converged);
        assert_feasible_and_monotone(&large, 1e-8);
        assert!((large.f_star - small.f_star).abs() <= 1e-8 * (1.0 + small.f_star.abs()));
        assert!(large.krylov_iters_total > 0);
    }

    #[test]
    fn armijo_line_search_reaches_the_same_point() {
        let p = gen_uniform_instance(12, 60, 8).unwrap();
        let c = crra_coefficients(2.0).unwrap();
        let exact = solve(&p, &c, None, &SolverConfig::small()).unwrap();
        let mut cfg = SolverConfig::small();
        cfg.line_search = LineSearchKind::Armijo;
        let armijo = solve(&p, &c, None, &cfg).unwrap();
        assert_eq!(armijo.status, SolveStatus::Converged);
        assert_feasible_and_monotone(&armijo, cfg.tau);
        assert!((armijo.f_star - exact.f_star).abs() <= 1e-9);
    }

    #[test]
    fn nonconvex_profiles_stay_feasible_and_monotone() {
        let p = gen_uniform_instance(30, 80, 9).unwrap();
        let mut rng = Lcg::new(3);
        for c in [(10.0, 1.0, 10.0, 1.0), (10.0, 10.0, 10.0, 10.0)] {
            let coeffs = PreferenceCoefficients::new(c.0, c.1, c.2, c.3).unwrap();
            let x0 = random_point(&mut rng, 30);
            let r = solve(&p, &coeffs, Some(&x0), &SolverConfig::small()).unwrap();
            assert_feasible_and_monotone(&r, 1e-8);
            assert!(r.f_star <= Objective::new(&p, &coeffs).value_at(&x0).unwrap());
        }
    }

    #[test]
    fn solves_are_deterministic() {
        let p = gen_uniform_instance(20, 60, 10).unwrap();
        let c = crra_coefficients(6.0).unwrap();
        for cfg in [SolverConfig::small(), SolverConfig::large()] {
            let a = solve(&p, &c, None, &cfg).unwrap();
            let b = solve(&p, &c, None, &cfg).unwrap();
            assert_eq!(a.x_star, b.x_star);
            assert_eq!(a.iterations, b.iterations);
            assert_eq!(a.kernels, b.kernels);
        }
    }

    #[test]
    fn budget_and_deadline_are_reported() {
        let p = gen_uniform_instance(30, 80, 11).unwrap();
        let c = crra_coefficients(6.0).unwrap();
        let mut cfg = SolverConfig::small();
        cfg.max_iter = 1;
        let r = solve(&p, &c, None, &cfg).unwrap();
        assert_eq!(r.status, SolveStatus::MaxIter);
        assert_eq!(r.iterations, 1);
        let mut cfg = SolverConfig::large();
        cfg.max_elapsed_seconds = Some(0.0);
        assert_eq!(solve(&p, &c, None, &cfg).unwrap().status, SolveStatus::MaxElapsed);
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let p = gen_uniform_instance(4, 20, 12).unwrap();
        let c = crra_coefficients(6.0).unwrap();
        let cfg = SolverConfig::small();
        assert!(matches!(solve(&p, &c, Some(&[0.5, 0.5]), &cfg), Err(MvskError::Dimension(_))));
        assert!(matches!(solve(&p, &c, Some(&[0.7, 0.7, -0.2, -0.2]), &cfg), Err(MvskError::Domain(_))));
        assert!(solve(&p, &c, Some(&[0.3, 0.3, 0.3, 0.3]), &cfg).is_err());
        let mut bad = cfg.clone();
        bad.tau = 0.25;
        assert!(solve(&p, &c, None, &bad).is_err());
        let mut bad = cfg.clone();
        bad.epsilon = 0.0;
        assert!(solve(&p, &c, None, &bad).is_err());
        let mut bad = cfg;
        bad.restart_trial_steps = vec![-0.1];
        assert!(solve(&p, &c, None, &bad).is_err());
    }

    #[test]
    fn boundary_start_releases_coordinates() {
        let p = gen_uniform_instance(6, 40, 13).unwrap();
        let c = crra_coefficients(2.0).unwrap();
        let x0 = [1.0 - 5e-8, 1e-8, 1e-8, 1e-8, 1e-8, 1e-8];
        let r = solve(&p, &c, Some(&x0), &SolverConfig::small()).unwrap();
        let reference = solve(&p, &c, None, &SolverConfig::small()).unwrap();
        assert_eq!(r.status, SolveStatus::Converged);
        assert!(r.face_events > 0);
        assert!((r.f_star - reference.f_star).abs() <= 1e-9);
    }
}
