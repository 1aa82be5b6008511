//! Confidence radius, confidence-set membership and the projection programs.
//!
//! The generalized projection solves
//!
//! ```text
//! min_{θ', η}  ‖g_t(θ') + β Ṽ^{1/2} η − g_t(θ̂)‖_{V⁻²}   s.t. ‖θ'‖ ≤ S, ‖η‖ ≤ 1
//! ```
//!
//! and returns the `θ'` component. Its slack `η` certifies the result: with
//! `θ_p = g_t⁻¹(g_t(θ') + β Ṽ^{1/2} η)` we get
//! `‖g_t(θ') − g_t(θ_p)‖_{Ṽ⁻¹} = β‖η‖ ≤ β`, so `θ'` lies in both the
//! admissible ball and the confidence set around `θ_p`.
//!
//! The program is nonconvex in `θ'`; it is solved locally by projected
//! gradient descent with Barzilai-Borwein trial steps and monotone Armijo
//! backtracking. Both balls are enforced by closed-form rescaling, so every
//! returned point is feasible whether or not the solver converged. The direct
//! projection (no slack) is solved by projected Gauss-Newton.

use serde::{Deserialize, Serialize};

use crate::config::ProblemConfig;
use crate::design::DiscountedState;
use crate::error::{GlbError, Result};
use crate::estimator::{g_inverse_from, g_map, g_with_jacobian};
use crate::glm::LinkSpec;
use crate::{Matrix, Vector};

/// Objective values (squared) below this are treated as an exact zero.
const ZERO_OBJECTIVE_SQ: f64 = 1e-24;
const MAX_BACKTRACKS: usize = 60;

/// `β_t(δ) = √λ c_μ S + σ √(2 log(1/δ) + d log(1 + L²(1−γ^{2t}) / (λ d (1−γ²))))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRadius {
    pub beta: f64,
    pub ridge_term: f64,
    pub deviation_term: f64,
}

/// Confidence radius at round `t`. For `γ = 1` the ratio
/// `(1−γ^{2t})/(1−γ²)` is replaced by its limit `t`.
pub fn beta(t: usize, config: &ProblemConfig, c_mu: f64) -> ConfidenceRadius {
    let t = t.max(1) as f64;
    let gamma = config.gamma;
    let ratio = if gamma >= 1.0 {
        t
    } else {
        // (1 − γ^{2t}) / (1 − γ²), stable for γ close to 1
        let lg = gamma.ln();
        (-(2.0 * t * lg).exp_m1()) / (-(2.0 * lg).exp_m1())
    };
    let d = config.d as f64;
    let ridge_term = config.lambda.sqrt() * c_mu * config.s_bound;
    let inside =
        2.0 * (1.0 / config.delta).ln() + d * (1.0 + config.l_bound.powi(2) * ratio / (config.lambda * d)).ln();
    let deviation_term = config.sigma * inside.max(0.0).sqrt();
    ConfidenceRadius {
        beta: ridge_term + deviation_term,
        ridge_term,
        deviation_term,
    }
}

/// `‖g_t(candidate) − g_t(center)‖_{Ṽ⁻¹} ≤ β`.
pub fn in_confidence_set(
    state: &DiscountedState,
    link: &LinkSpec,
    c_mu: f64,
    center: &Vector,
    candidate: &Vector,
    beta: f64,
) -> Result<bool> {
    Ok(confidence_gap(state, link, c_mu, center, candidate)? <= beta)
}

/// `‖g_t(a) − g_t(b)‖_{Ṽ⁻¹}`.
pub fn confidence_gap(state: &DiscountedState, link: &LinkSpec, c_mu: f64, a: &Vector, b: &Vector) -> Result<f64> {
    let diff = g_map(state, link, c_mu, a)? - g_map(state, link, c_mu, b)?;
    state.mahalanobis_tilde_inv(&diff)
}

/// Solver controls, exposed in the experiment configuration under `"projection"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionOptions {
    /// Stop once the projected-gradient norm falls below this, relative to the
    /// initial gradient norm when that exceeds 1.
    pub tolerance: f64,
    pub max_iters: usize,
    pub armijo_c: f64,
    pub shrink: f64,
    pub initial_step: f64,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iters: 500,
            armijo_c: 1e-4,
            shrink: 0.5,
            initial_step: 1.0,
        }
    }
}

impl ProjectionOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tolerance > 0.0
            && self.max_iters > 0
            && self.armijo_c > 0.0
            && self.armijo_c < 1.0
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.initial_step > 0.0;
        if ok {
            Ok(())
        } else {
            Err(GlbError::InvalidConfig(format!("invalid projection options {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionOutcome {
    /// The admissible parameter `θ̃`.
    pub theta_tilde: Vector,
    /// Slack variable, `‖η‖ ≤ 1`.
    pub eta: Vector,
    /// Final objective value (a norm, not its square).
    pub objective: f64,
    /// Reconstructed `θ_p = g⁻¹(g(θ̃) + β Ṽ^{1/2} η)`.
    pub theta_p: Vector,
    pub solver_iters: usize,
    pub converged: bool,
    /// True when `θ̂` was already admissible and returned unchanged.
    pub fast_path: bool,
    /// Objective value after every accepted step, starting at the initial point.
    pub trace: Vec<f64>,
}

impl ProjectionOutcome {
    fn identity(theta_hat: &Vector) -> Self {
        Self {
            theta_tilde: theta_hat.clone(),
            eta: Vector::zeros(theta_hat.len()),
            objective: 0.0,
            theta_p: theta_hat.clone(),
            solver_iters: 0,
            converged: true,
            fast_path: true,
            trace: vec![0.0],
        }
    }
}

pub(crate) fn project_ball(x: &mut [f64], radius: f64) {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > radius {
        let s = radius / n;
        x.iter_mut().for_each(|v| *v *= s);
    }
}

trait SmoothProblem {
    fn value(&self, x: &Vector) -> Result<f64>;
    fn value_grad(&self, x: &Vector) -> Result<(f64, Vector)>;
    fn project(&self, x: &mut Vector);
}

struct SolverRun {
    x: Vector,
    value: f64,
    iters: usize,
    converged: bool,
    trace: Vec<f64>,
}

fn projected_gradient(problem: &impl SmoothProblem, x0: Vector, opts: &ProjectionOptions) -> Result<SolverRun> {
    let mut x = x0;
    problem.project(&mut x);
    let (mut f, mut g) = problem.value_grad(&x)?;
    let mut trace = vec![f];
    let mut step = opts.initial_step;
    let mut iters = 0;
    let pg_norm = |x: &Vector, g: &Vector| {
        let mut p = x - g;
        problem.project(&mut p);
        (x - p).norm()
    };
    let tol = opts.tolerance * g.norm().max(1.0);
    let mut converged = f <= ZERO_OBJECTIVE_SQ || pg_norm(&x, &g) <= tol;
    while !converged && iters < opts.max_iters {
        iters += 1;
        let mut a = step;
        let mut next = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut cand = &x - &g * a;
            problem.project(&mut cand);
            let dir = &cand - &x;
            let fc = problem.value(&cand)?;
            if fc <= f + opts.armijo_c * g.dot(&dir) {
                next = Some(cand);
                break;
            }
            a *= opts.shrink;
        }
        let Some(cand) = next else {
            break;
        };
        let (fc, gc) = problem.value_grad(&cand)?;
        let s = &cand - &x;
        let y = &gc - &g;
        let sy = s.dot(&y);
        step = if sy > 0.0 {
            (s.norm_squared() / sy).clamp(1e-12, 1e12)
        } else {
            opts.initial_step
        };
        x = cand;
        f = fc.min(f);
        g = gc;
        trace.push(f);
        converged = f <= ZERO_OBJECTIVE_SQ || pg_norm(&x, &g) <= tol;
    }
    Ok(SolverRun {
        x,
        value: f,
        iters,
        converged,
        trace,
    })
}

/// Joint variable `(θ', η)` of the generalized projection.
struct GeneralizedProgram<'a> {
    state: &'a DiscountedState,
    link: &'a LinkSpec,
    c_mu: f64,
    /// `β Ṽ^{1/2}`
    slack_map: Matrix,
    g_hat: Vector,
    s_bound: f64,
}

impl GeneralizedProgram<'_> {
    fn split(&self, x: &Vector) -> (Vector, Vector) {
        let d = self.state.d();
        (x.rows(0, d).into_owned(), x.rows(d, d).into_owned())
    }

    fn residual(&self, g_theta: &Vector, eta: &Vector) -> Vector {
        g_theta + &self.slack_map * eta - &self.g_hat
    }
}

impl SmoothProblem for GeneralizedProgram<'_> {
    fn value(&self, x: &Vector) -> Result<f64> {
        let (theta, eta) = self.split(x);
        let g = g_map(self.state, self.link, self.c_mu, &theta)?;
        Ok(self.state.solve_v(&self.residual(&g, &eta))?.norm_squared())
    }

    fn value_grad(&self, x: &Vector) -> Result<(f64, Vector)> {
        let d = self.state.d();
        let (theta, eta) = self.split(x);
        let (g, jac) = g_with_jacobian(self.state, self.link, self.c_mu, &theta)?;
        let u = self.state.solve_v(&self.residual(&g, &eta))?;
        let w = self.state.solve_v(&u)?;
        let mut grad = Vector::zeros(2 * d);
        grad.rows_mut(0, d).copy_from(&(&jac * &w * 2.0));
        grad.rows_mut(d, d).copy_from(&(self.slack_map.transpose() * &w * 2.0));
        Ok((u.norm_squared(), grad))
    }

    fn project(&self, x: &mut Vector) {
        let d = self.state.d();
        project_ball(&mut x.as_mut_slice()[..d], self.s_bound);
        project_ball(&mut x.as_mut_slice()[d..], 1.0);
    }
}

/// Generalized projection of `θ̂` onto the admissible ball of radius `s_bound`.
pub fn project(
    state: &DiscountedState,
    link: &LinkSpec,
    c_mu: f64,
    theta_hat: &Vector,
    beta: f64,
    s_bound: f64,
    opts: &ProjectionOptions,
) -> Result<ProjectionOutcome> {
    if !(beta > 0.0) {
        return Err(GlbError::InvalidConfig(format!(
            "projection needs beta > 0, got {beta}"
        )));
    }
    let d = state.d();
    if theta_hat.len() != d {
        return Err(GlbError::DimensionMismatch {
            expected: d,
            actual: theta_hat.len(),
        });
    }
    let norm = theta_hat.norm();
    if norm <= s_bound {
        return Ok(ProjectionOutcome::identity(theta_hat));
    }

    let roots = state.tilde_roots();
    let g_hat = g_map(state, link, c_mu, theta_hat)?;
    let theta0 = theta_hat * (s_bound / norm);
    let g0 = g_map(state, link, c_mu, &theta0)?;
    let mut eta0 = &roots.inv_sqrt * (&g_hat - &g0) / beta;
    project_ball(eta0.as_mut_slice(), 1.0);

    let program = GeneralizedProgram {
        state,
        link,
        c_mu,
        slack_map: &roots.sqrt * beta,
        g_hat,
        s_bound,
    };
    let mut x0 = Vector::zeros(2 * d);
    x0.rows_mut(0, d).copy_from(&theta0);
    x0.rows_mut(d, d).copy_from(&eta0);
    let run = projected_gradient(&program, x0, opts)?;
    let (theta_tilde, eta) = program.split(&run.x);

    let z = g_map(state, link, c_mu, &theta_tilde)? + &program.slack_map * &eta;
    let theta_p = g_inverse_from(state, link, c_mu, &z, Some(&theta_tilde))?;
    Ok(ProjectionOutcome {
        theta_tilde,
        eta,
        objective: run.value.sqrt(),
        theta_p,
        solver_iters: run.iters,
        converged: run.converged,
        fast_path: false,
        trace: run.trace.into_iter().map(f64::sqrt).collect(),
    })
}

/// Minimizer of `½ zᵀHz + bᵀz` over `‖z‖ ≤ radius` for positive definite `H`.
///
/// Interior when the unconstrained minimizer is feasible; otherwise
/// `z = −(H + νI)⁻¹ b` with `ν > 0` chosen by bisection so that `‖z‖ = radius`.
pub(crate) fn ball_quadratic_min(h: &Matrix, b: &Vector, radius: f64) -> Vector {
    let eig = h.clone().symmetric_eigen();
    let c = eig.eigenvectors.transpose() * b;
    let lam = &eig.eigenvalues;
    let floor = lam.iter().cloned().fold(f64::INFINITY, f64::min).max(0.0);
    let solve = |nu: f64| -> Vector { Vector::from_fn(c.len(), |i, _| -c[i] / (lam[i] + nu).max(1e-300)) };
    let z0 = solve(0.0);
    let z = if floor > 0.0 && z0.norm() <= radius {
        z0
    } else {
        let (mut lo, mut hi) = (0.0, b.norm() / radius + 1.0);
        while solve(hi).norm() > radius {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if solve(mid).norm() > radius {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        solve(hi)
    };
    let mut z = &eig.eigenvectors * z;
    project_ball(z.as_mut_slice(), radius);
    z
}

/// `min_{‖θ‖≤S} ‖g_t(θ) − g_t(θ̂)‖_{Ṽ⁻¹}`, the projection used by stationary GLM-UCB.
///
/// Solved by projected Gauss-Newton: each step minimizes the quadratic model
/// with Hessian `2 J Ṽ⁻¹ J` exactly over the ball, followed by Armijo
/// backtracking along the segment to the model minimizer.
struct DirectProgram<'a> {
    state: &'a DiscountedState,
    link: &'a LinkSpec,
    c_mu: f64,
    g_hat: Vector,
}

impl DirectProgram<'_> {
    fn value(&self, x: &Vector) -> Result<f64> {
        let r = g_map(self.state, self.link, self.c_mu, x)? - &self.g_hat;
        Ok(r.dot(&self.state.solve_v_tilde(&r)?))
    }

    fn model(&self, x: &Vector) -> Result<(f64, Vector, Matrix)> {
        let (g, jac) = g_with_jacobian(self.state, self.link, self.c_mu, x)?;
        let r = g - &self.g_hat;
        let w = self.state.solve_v_tilde(&r)?;
        let mut vj = jac.clone();
        for mut col in vj.column_iter_mut() {
            let solved = self.state.solve_v_tilde(&col.clone_owned())?;
            col.copy_from(&solved);
        }
        let hess = &jac * vj * 2.0;
        Ok((r.dot(&w), &jac * w * 2.0, (&hess + hess.transpose()) * 0.5))
    }
}

fn gauss_newton_ball(
    program: &DirectProgram<'_>,
    x0: Vector,
    s_bound: f64,
    opts: &ProjectionOptions,
) -> Result<SolverRun> {
    let mut x = x0;
    project_ball(x.as_mut_slice(), s_bound);
    let (mut f, mut g, mut h) = program.model(&x)?;
    let mut trace = vec![f];
    let tol = opts.tolerance * g.norm().max(1.0);
    let stationary = |x: &Vector, g: &Vector| {
        let mut p = x - g;
        project_ball(p.as_mut_slice(), s_bound);
        (x - p).norm()
    };
    let mut converged = f <= ZERO_OBJECTIVE_SQ || stationary(&x, &g) <= tol;
    let mut iters = 0;
    while !converged && iters < opts.max_iters {
        iters += 1;
        let b = &g - &h * &x;
        let dir = ball_quadratic_min(&h, &b, s_bound) - &x;
        if dir.norm() <= opts.tolerance * x.norm().max(1.0) {
            converged = true;
            break;
        }
        let slope = g.dot(&dir);
        let mut a = 1.0;
        let mut next = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut cand = &x + &dir * a;
            project_ball(cand.as_mut_slice(), s_bound);
            let fc = program.value(&cand)?;
            if fc <= f + opts.armijo_c * a * slope {
                next = Some(cand);
                break;
            }
            a *= opts.shrink;
        }
        // Near the optimum rounding can stall the line search; that counts
        // as converged once the model step itself is small.
        let near = dir.norm() <= opts.tolerance.sqrt() * x.norm().max(1.0);
        let Some(cand) = next else {
            converged = near;
            break;
        };
        if (&cand - &x).norm() <= 1e-14 * x.norm().max(1.0) {
            converged = near;
            break;
        }
        x = cand;
        let (fc, gc, hc) = program.model(&x)?;
        f = fc.min(f);
        g = gc;
        h = hc;
        trace.push(f);
        converged = f <= ZERO_OBJECTIVE_SQ || stationary(&x, &g) <= tol;
    }
    Ok(SolverRun {
        x,
        value: f,
        iters,
        converged,
        trace,
    })
}

/// Direct projection of `θ̂` onto the ball in the `g`-image metric. The returned
/// outcome has `η = 0` and `θ_p = θ̂`.
pub fn project_direct(
    state: &DiscountedState,
    link: &LinkSpec,
    c_mu: f64,
    theta_hat: &Vector,
    s_bound: f64,
    opts: &ProjectionOptions,
) -> Result<ProjectionOutcome> {
    let norm = theta_hat.norm();
    if norm <= s_bound {
        return Ok(ProjectionOutcome::identity(theta_hat));
    }
    let program = DirectProgram {
        state,
        link,
        c_mu,
        g_hat: g_map(state, link, c_mu, theta_hat)?,
    };
    let run = gauss_newton_ball(&program, theta_hat * (s_bound / norm), s_bound, opts)?;
    Ok(ProjectionOutcome {
        eta: Vector::zeros(state.d()),
        objective: run.value.max(0.0).sqrt(),
        theta_p: theta_hat.clone(),
        theta_tilde: run.x,
        solver_iters: run.iters,
        converged: run.converged,
        fast_path: false,
        trace: run.trace.into_iter().map(|v| v.max(0.0).sqrt()).collect(),
    })
}

/// Result of checking a [`ProjectionOutcome`] against its invariants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateCheck {
    pub theta_norm: f64,
    pub eta_norm: f64,
    /// `‖g(θ̃) − g(θ_p)‖_{Ṽ⁻¹}`.
    pub confidence_gap: f64,
    /// `‖θ_p − g⁻¹(g(θ̃) + βṼ^{1/2}η)‖` for an independent reconstruction.
    pub reconstruction_error: f64,
    pub feasible: bool,
    pub certified: bool,
}

impl CertificateCheck {
    pub fn ok(&self) -> bool {
        self.feasible && self.certified
    }
}

/// Verify feasibility and the confidence-set certificate of a generalized projection.
pub fn verify_certificate(
    state: &DiscountedState,
    link: &LinkSpec,
    c_mu: f64,
    outcome: &ProjectionOutcome,
    beta: f64,
    s_bound: f64,
) -> Result<CertificateCheck> {
    let theta_norm = outcome.theta_tilde.norm();
    let eta_norm = outcome.eta.norm();
    let gap = confidence_gap(state, link, c_mu, &outcome.theta_tilde, &outcome.theta_p)?;
    let z = g_map(state, link, c_mu, &outcome.theta_tilde)? + state.sqrt_tilde() * &outcome.eta * beta;
    let rebuilt = g_inverse_from(state, link, c_mu, &z, None)?;
    let reconstruction_error = (rebuilt - &outcome.theta_p).norm();
    Ok(CertificateCheck {
        theta_norm,
        eta_norm,
        confidence_gap: gap,
        reconstruction_error,
        feasible: theta_norm <= s_bound + 1e-9 && eta_norm <= 1.0 + 1e-9,
        certified: gap <= beta * (1.0 + 1e-6) && reconstruction_error <= 1e-6,
    })
}

/// Value of the generalized projection objective at `(θ', η)`.
pub fn generalized_objective(
    state: &DiscountedState,
    link: &LinkSpec,
    c_mu: f64,
    theta_hat: &Vector,
    beta: f64,
    theta: &Vector,
    eta: &Vector,
) -> Result<f64> {
    let r = g_map(state, link, c_mu, theta)? + state.sqrt_tilde() * eta * beta - g_map(state, link, c_mu, theta_hat)?;
    state.mahalanobis_inv2(&r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::compute_constants;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> ProblemConfig {
        ProblemConfig {
            d: 2,
            s_bound: 1.0,
            l_bound: 1.0,
            sigma: 0.5,
            lambda: 1.0,
            gamma: 0.9,
            delta: 0.1,
            horizon: 1000,
        }
    }

    #[test]
    fn beta_examples() {
        let c_mu = compute_constants(&LinkSpec::logistic(), 1.0, 1.0).unwrap().c_mu;
        let b = beta(1, &cfg(), c_mu);
        assert!((b.beta - 1.3602378).abs() < 1e-6);
        assert!((b.ridge_term - c_mu).abs() < 1e-15);

        let noiseless = ProblemConfig { sigma: 0.0, ..cfg() };
        for t in [1, 10, 1000] {
            assert_eq!(beta(t, &noiseless, c_mu).beta, c_mu);
        }
    }

    #[test]
    fn beta_monotonicity() {
        for gamma in [0.5, 0.9, 0.999, 1.0] {
            let c = ProblemConfig { gamma, ..cfg() };
            let mut prev = 0.0;
            for t in 1..=1000 {
                let b = beta(t, &c, 0.2).beta;
                assert!(b >= prev && b > 0.0);
                prev = b;
            }
        }
        let b1 = beta(50, &ProblemConfig { delta: 0.01, ..cfg() }, 0.2).beta;
        let b2 = beta(50, &ProblemConfig { delta: 0.2, ..cfg() }, 0.2).beta;
        assert!(b1 > b2);
    }

    #[test]
    fn beta_undiscounted_limit() {
        let near = beta(
            100,
            &ProblemConfig {
                gamma: 1.0 - 1e-10,
                ..cfg()
            },
            0.2,
        )
        .beta;
        let at = beta(100, &ProblemConfig { gamma: 1.0, ..cfg() }, 0.2).beta;
        assert!((near - at).abs() < 1e-6);
    }

    #[test]
    fn confidence_set_membership() {
        let link = LinkSpec::logistic();
        let s = DiscountedState::new(2, 4.0, 0.9).unwrap();
        let c_mu = 0.2;
        let center = Vector::from_vec(vec![0.1, 0.2]);
        assert!(in_confidence_set(&s, &link, c_mu, &center, &center, 0.5).unwrap());
        let other = Vector::from_vec(vec![0.3, 0.2]);
        assert!(!in_confidence_set(&s, &link, c_mu, &center, &other, 0.0).unwrap());
        // empty history: ‖λc(a−b)‖/√λ ≤ β  ⇔  ‖a−b‖ ≤ β√λ/(λc)
        let radius = 0.5 * 4f64.sqrt() / (4.0 * c_mu);
        let inside = &center + Vector::from_vec(vec![radius * 0.999, 0.0]);
        let outside = &center + Vector::from_vec(vec![radius * 1.001, 0.0]);
        assert!(in_confidence_set(&s, &link, c_mu, &center, &inside, 0.5).unwrap());
        assert!(!in_confidence_set(&s, &link, c_mu, &center, &outside, 0.5).unwrap());
    }

    #[test]
    fn fast_path_is_identity() {
        let s = DiscountedState::new(2, 1.0, 0.9).unwrap();
        let th = Vector::from_vec(vec![0.3, -0.4]);
        let out = project(&s, &LinkSpec::logistic(), 0.2, &th, 1.0, 1.0, &Default::default()).unwrap();
        assert!(out.fast_path && out.converged);
        assert_eq!(out.theta_tilde, th);
        assert!(out.objective <= 1e-12);
        assert!(project(&s, &LinkSpec::logistic(), 0.2, &th, 0.0, 1.0, &Default::default()).is_err());
    }

    #[test]
    fn linear_case_lands_on_boundary() {
        // empty history: g(θ) = λcθ, P2 optimum is 0 and attained at the radial projection
        let s = DiscountedState::new(2, 1.0, 0.9).unwrap();
        let th = Vector::from_vec(vec![2.0, 0.0]);
        let link = LinkSpec::logistic();
        let out = project(&s, &link, 0.25, &th, 1.0, 1.0, &Default::default()).unwrap();
        assert!(out.objective <= 1e-12);
        assert!((&out.theta_tilde - Vector::from_vec(vec![1.0, 0.0])).norm() < 1e-12);
        let check = verify_certificate(&s, &link, 0.25, &out, 1.0, 1.0).unwrap();
        assert!(check.ok());
        // line-search oracle along [0, θ̂]: the smallest admissible residual is 0
        let best = (0..=1000)
            .map(|i| {
                let p = &th * (0.5 * i as f64 / 1000.0);
                let gap = 0.25 * (&th - &p).norm();
                (gap - 1.0).max(0.0)
            })
            .fold(f64::INFINITY, f64::min);
        assert_eq!(best, 0.0);
    }

    fn random_state(rng: &mut ChaCha8Rng, d: usize, n: usize) -> DiscountedState {
        let mut s = DiscountedState::new(d, 1.0, rng.random_range(0.8..0.99)).unwrap();
        for _ in 0..n {
            let x = Vector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
            let x = if x.norm() > 1.0 { x.normalize() } else { x };
            s.update(&x, if rng.random_bool(0.7) { 1.0 } else { 0.0 }).unwrap();
        }
        s
    }

    #[test]
    fn outcomes_are_feasible_certified_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let link = LinkSpec::logistic();
        for _ in 0..60 {
            let d = rng.random_range(1..=4);
            let n = rng.random_range(0..=80);
            let s = random_state(&mut rng, d, n);
            let th = Vector::from_fn(d, |_, _| rng.random_range(-4.0..4.0));
            let beta = rng.random_range(0.05..2.0);
            let out = project(&s, &link, 0.2, &th, beta, 1.0, &Default::default()).unwrap();
            assert!(out.theta_tilde.norm() <= 1.0 + 1e-9);
            assert!(out.eta.norm() <= 1.0 + 1e-9);
            assert!(out.trace.windows(2).all(|w| w[1] <= w[0]), "{:?}", out.trace);
            let check = verify_certificate(&s, &link, 0.2, &out, beta, 1.0).unwrap();
            assert!(check.ok(), "{check:?}");
            let obj = generalized_objective(&s, &link, 0.2, &th, beta, &out.theta_tilde, &out.eta).unwrap();
            assert!((obj - out.objective).abs() <= 1e-9 * (1.0 + obj));
        }
    }

    #[test]
    fn direct_projection_is_feasible_and_optimal_in_linear_case() {
        let s = DiscountedState::new(2, 1.0, 0.9).unwrap();
        let th = Vector::from_vec(vec![3.0, 4.0]);
        let out = project_direct(&s, &LinkSpec::logistic(), 0.2, &th, 1.0, &Default::default()).unwrap();
        assert!((out.theta_tilde - Vector::from_vec(vec![0.6, 0.8])).norm() < 1e-6);
        assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn ball_quadratic_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let a = Matrix::from_fn(2, 2, |_, _| rng.random::<f64>() - 0.5);
            let h = &a * a.transpose() + Matrix::identity(2, 2) * 0.05;
            let b = Vector::from_fn(2, |_, _| 4.0 * (rng.random::<f64>() - 0.5));
            let z = ball_quadratic_min(&h, &b, 1.0);
            assert!(z.norm() <= 1.0 + 1e-12);
            let q = |z: &Vector| 0.5 * z.dot(&(&h * z)) + b.dot(z);
            let mut best = f64::INFINITY;
            for i in 0..=400 {
                for j in 0..=400 {
                    let p = Vector::from_vec(vec![-1.0 + i as f64 / 200.0, -1.0 + j as f64 / 200.0]);
                    if p.norm() <= 1.0 {
                        best = best.min(q(&p));
                    }
                }
            }
            assert!(q(&z) <= best + 1e-12, "{} vs {}", q(&z), best);
            assert!(q(&z) >= best - 2e-2);
        }
    }

    #[test]
    fn direct_projection_is_stationary_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let link = LinkSpec::logistic();
        for _ in 0..30 {
            let s = random_state(&mut rng, 2, 200);
            let th = Vector::from_fn(2, |_, _| 6.0 * (rng.random::<f64>() - 0.5));
            if th.norm() <= 1.0 {
                continue;
            }
            let out = project_direct(&s, &link, 0.2, &th, 1.0, &Default::default()).unwrap();
            assert!(out.converged);
            assert!(out.theta_tilde.norm() <= 1.0 + 1e-12);
            assert!(out.trace.windows(2).all(|w| w[1] <= w[0]));
            // no boundary point on a fine angular grid does better
            let g_hat = g_map(&s, &link, 0.2, &th).unwrap();
            let best = (0..2000)
                .map(|k| {
                    let a = std::f64::consts::TAU * k as f64 / 2000.0;
                    let p = Vector::from_vec(vec![a.cos(), a.sin()]);
                    let r = g_map(&s, &link, 0.2, &p).unwrap() - &g_hat;
                    s.mahalanobis_tilde_inv(&r).unwrap()
                })
                .fold(f64::INFINITY, f64::min);
            assert!(out.objective <= best + 1e-6, "{} vs {}", out.objective, best);
        }
    }

    #[test]
    fn non_convergence_keeps_feasibility() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let s = random_state(&mut rng, 3, 60);
        let opts = ProjectionOptions {
            max_iters: 1,
            ..Default::default()
        };
        let th = Vector::from_vec(vec![5.0, -3.0, 2.0]);
        let out = project(&s, &LinkSpec::logistic(), 0.2, &th, 0.01, 1.0, &opts).unwrap();
        assert!(out.theta_tilde.norm() <= 1.0 + 1e-9);
        assert!(out.eta.norm() <= 1.0 + 1e-9);
        assert!(out.solver_iters <= 1);
    }
}
