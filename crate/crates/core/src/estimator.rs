//! Discounted quasi-maximum-likelihood estimation.
//!
//! With weights `w_s = γ^{t-1-s}` the estimator minimizes
//!
//! ```text
//! L(θ) = Σ_s w_s [b(⟨x_s,θ⟩) − r_{s+1}⟨x_s,θ⟩] + (λ c_μ / 2)‖θ‖²
//! ```
//!
//! whose gradient is `g_t(θ) − Σ_s w_s r_{s+1} x_s` with
//! `g_t(θ) = Σ_s w_s μ(⟨x_s,θ⟩) x_s + λ c_μ θ`. The Jacobian of `g_t` (the
//! Hessian of `L`) dominates `λ c_μ I`, so `g_t` is a bijection of `ℝ^d` and
//! Newton's method is well defined everywhere.

use serde::{Deserialize, Serialize};

use crate::design::DiscountedState;
use crate::error::{GlbError, Result};
use crate::glm::LinkSpec;
use crate::{Matrix, Vector};

pub const QMLE_GRAD_TOL: f64 = 1e-8;
pub const QMLE_MAX_ITERS: usize = 100;
pub const G_INVERSE_TOL: f64 = 1e-8;
pub const G_INVERSE_MAX_ITERS: usize = 200;

const ARMIJO_C: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QmleResult {
    pub theta_hat: Vector,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// One pass over the history: `Σ w μ(⟨x,θ⟩) x` and optionally `Σ w μ'(⟨x,θ⟩) x xᵀ`
/// and `Σ w b(⟨x,θ⟩)`.
struct Pass {
    weighted_mean: Vector,
    curvature: Option<Matrix>,
    primitive_sum: f64,
}

fn history_pass(
    state: &DiscountedState,
    link: &LinkSpec,
    theta: &Vector,
    with_curvature: bool,
    with_primitive: bool,
) -> Pass {
    let d = state.d();
    let th = theta.as_slice();
    let mut mean = vec![0.0; d];
    let mut curv = if with_curvature { vec![0.0; d * d] } else { Vec::new() };
    let mut prim = 0.0;
    for (x, w) in state.arms_flat().chunks_exact(d).zip(state.weights()) {
        let z: f64 = x.iter().zip(th).map(|(a, b)| a * b).sum();
        let m = w * link.eval(z);
        for (acc, xi) in mean.iter_mut().zip(x) {
            *acc += m * xi;
        }
        if with_curvature {
            let c = w * link.deriv(z);
            for i in 0..d {
                let ci = c * x[i];
                for j in 0..=i {
                    curv[i * d + j] += ci * x[j];
                }
            }
        }
        if with_primitive {
            prim += w * link.primitive(z);
        }
    }
    let curvature =
        with_curvature.then(|| Matrix::from_fn(d, d, |i, j| if j <= i { curv[i * d + j] } else { curv[j * d + i] }));
    Pass {
        weighted_mean: Vector::from_vec(mean),
        curvature,
        primitive_sum: prim,
    }
}

fn check_dim(state: &DiscountedState, v: &Vector) -> Result<()> {
    if v.len() != state.d() {
        return Err(GlbError::DimensionMismatch {
            expected: state.d(),
            actual: v.len(),
        });
    }
    Ok(())
}

fn ridge(state: &DiscountedState, c_mu: f64) -> f64 {
    state.lambda() * c_mu
}

/// `g_t(θ) = Σ_s w_s μ(⟨x_s,θ⟩) x_s + λ c_μ θ`.
pub fn g_map(state: &DiscountedState, link: &LinkSpec, c_mu: f64, theta: &Vector) -> Result<Vector> {
    check_dim(state, theta)?;
    let pass = history_pass(state, link, theta, false, false);
    Ok(pass.weighted_mean + theta * ridge(state, c_mu))
}

/// `g_t(θ)` together with its Jacobian `Σ_s w_s μ'(⟨x_s,θ⟩) x_s x_sᵀ + λ c_μ I`.
pub fn g_with_jacobian(
    state: &DiscountedState,
    link: &LinkSpec,
    c_mu: f64,
    theta: &Vector,
) -> Result<(Vector, Matrix)> {
    check_dim(state, theta)?;
    let rho = ridge(state, c_mu);
    let pass = history_pass(state, link, theta, true, false);
    let mut jac = pass.curvature.expect("requested");
    for i in 0..state.d() {
        jac[(i, i)] += rho;
    }
    Ok((pass.weighted_mean + theta * rho, jac))
}

/// The penalized discounted negative quasi-log-likelihood `L(θ)`.
pub fn qmle_objective(state: &DiscountedState, link: &LinkSpec, c_mu: f64, theta: &Vector) -> Result<f64> {
    check_dim(state, theta)?;
    let pass = history_pass(state, link, theta, false, true);
    Ok(pass.primitive_sum - state.reward_moment().dot(theta) + 0.5 * ridge(state, c_mu) * theta.norm_squared())
}

fn newton_direction(jac: &Matrix, rhs: &Vector) -> Vector {
    match jac.clone().cholesky() {
        Some(ch) => -ch.solve(rhs),
        // unreachable in exact arithmetic: the Jacobian dominates λ c_μ I
        None => -rhs.clone(),
    }
}

/// Solve `g_t(θ) = z` by damped Newton starting from `θ = 0`.
pub fn g_inverse(state: &DiscountedState, link: &LinkSpec, c_mu: f64, z: &Vector) -> Result<Vector> {
    g_inverse_from(state, link, c_mu, z, None)
}

/// Solve `g_t(θ) = z` by damped Newton from an optional starting point.
///
/// Steps are halved until the residual norm decreases. Failing to reach the
/// tolerance in [`G_INVERSE_MAX_ITERS`] iterations is reported as an error.
pub fn g_inverse_from(
    state: &DiscountedState,
    link: &LinkSpec,
    c_mu: f64,
    z: &Vector,
    init: Option<&Vector>,
) -> Result<Vector> {
    check_dim(state, z)?;
    let mut theta = match init {
        Some(t) => {
            check_dim(state, t)?;
            t.clone()
        }
        None => Vector::zeros(state.d()),
    };
    let (mut g, mut jac) = g_with_jacobian(state, link, c_mu, &theta)?;
    let mut resid = &g - z;
    let mut norm = resid.norm();
    for _ in 0..G_INVERSE_MAX_ITERS {
        if norm <= G_INVERSE_TOL {
            return Ok(theta);
        }
        let step = newton_direction(&jac, &resid);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let cand = &theta + &step * alpha;
            let (gc, jc) = g_with_jacobian(state, link, c_mu, &cand)?;
            let rc = &gc - z;
            let nc = rc.norm();
            if nc < norm {
                theta = cand;
                g = gc;
                jac = jc;
                resid = rc;
                norm = nc;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let _ = g;
    if norm <= G_INVERSE_TOL {
        return Ok(theta);
    }
    Err(GlbError::NoConvergence {
        solver: "g_inverse",
        iterations: G_INVERSE_MAX_ITERS,
        residual: norm,
    })
}

/// Discounted quasi-MLE by Newton's method with Armijo backtracking.
///
/// Starts from `warm_start` when given, else from zero. A run that fails to
/// reach `‖∇L‖ ≤ 1e-8` within [`QMLE_MAX_ITERS`] iterations is returned with
/// `converged = false`.
pub fn fit_qmle(
    state: &DiscountedState,
    link: &LinkSpec,
    c_mu: f64,
    warm_start: Option<&Vector>,
) -> Result<QmleResult> {
    let d = state.d();
    let rho = ridge(state, c_mu);
    let mut theta = match warm_start {
        Some(t) => {
            check_dim(state, t)?;
            t.clone()
        }
        None => Vector::zeros(d),
    };
    let moment = state.reward_moment();
    let eval = |th: &Vector| {
        let pass = history_pass(state, link, th, true, true);
        let value = pass.primitive_sum - moment.dot(th) + 0.5 * rho * th.norm_squared();
        let grad = pass.weighted_mean + th * rho - moment;
        let mut hess = pass.curvature.expect("requested");
        for i in 0..d {
            hess[(i, i)] += rho;
        }
        (value, grad, hess)
    };

    let (mut value, mut grad, mut hess) = eval(&theta);
    let mut iterations = 0;
    while iterations < QMLE_MAX_ITERS && grad.norm() > QMLE_GRAD_TOL {
        iterations += 1;
        let step = newton_direction(&hess, &grad);
        let slope = grad.dot(&step);
        let mut alpha = 1.0;
        let mut accepted = false;
        for k in 0..MAX_HALVINGS {
            let cand = &theta + &step * alpha;
            let (v, g, h) = eval(&cand);
            // Near the optimum the decrease drowns in rounding; a full step that
            // shrinks the gradient is accepted as well.
            let armijo = v <= value + ARMIJO_C * alpha * slope;
            if armijo || (k == 0 && g.norm() < grad.norm()) {
                theta = cand;
                value = v;
                grad = g;
                hess = h;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let grad_norm = grad.norm();
    Ok(QmleResult {
        theta_hat: theta,
        grad_norm,
        iterations,
        converged: grad_norm <= QMLE_GRAD_TOL,
    })
}

/// Noiseless tracking estimator: the minimizer of
/// `Σ_s w_s [b(⟨x_s,θ⟩) − μ(⟨x_s,θ*_s⟩)⟨x_s,θ⟩] + (λ c_μ/2)‖θ − θ*_t‖²`.
///
/// Computed from its stationarity condition
/// `g_t(θ̄) = Σ_s w_s μ(⟨x_s,θ*_s⟩) x_s + λ c_μ θ*_t`. `true_params[i]` is the
/// parameter in force when history entry `i` was observed.
pub fn theta_bar_oracle(
    state: &DiscountedState,
    link: &LinkSpec,
    c_mu: f64,
    true_params: &[Vector],
    theta_star_t: &Vector,
) -> Result<Vector> {
    if true_params.len() != state.len() {
        return Err(GlbError::LengthMismatch(format!(
            "{} true parameters for {} history entries",
            true_params.len(),
            state.len()
        )));
    }
    check_dim(state, theta_star_t)?;
    let target = tracking_target(state, link, c_mu, true_params, theta_star_t)?;
    g_inverse_from(state, link, c_mu, &target, Some(theta_star_t))
}

/// Right-hand side `Σ_s w_s μ(⟨x_s,θ*_s⟩) x_s + λ c_μ θ*_t` of the tracking identity.
pub fn tracking_target(
    state: &DiscountedState,
    link: &LinkSpec,
    c_mu: f64,
    true_params: &[Vector],
    theta_star_t: &Vector,
) -> Result<Vector> {
    let mut target = theta_star_t * ridge(state, c_mu);
    for ((x, _, w), p) in state.history().zip(true_params) {
        check_dim(state, p)?;
        let x = Vector::from_column_slice(x);
        target += &x * (w * link.eval(x.dot(p)));
    }
    Ok(target)
}
