//! Discounted design matrices and the weighted observation history.
//!
//! After `t - 1` observations `(x_s, r_{s+1})` the state holds
//!
//! ```text
//! V_t = Σ_s γ^{t-1-s} x_s x_sᵀ + λ I
//! Ṽ_t = Σ_s γ^{2(t-1-s)} x_s x_sᵀ + λ I
//! ```
//!
//! maintained by the rank-one recursions `V ← γV + xxᵀ + (1-γ)λI` and
//! `Ṽ ← γ²(Ṽ - λI) + xxᵀ + λI`. The full history is kept because the map
//! `g_t` re-evaluates the link at arbitrary parameters. Weights are stored
//! implicitly by age and materialized as `γ^age` once per round.

use nalgebra::linalg::Cholesky;
use nalgebra::Dyn;

use crate::config::MIN_LAMBDA;
use crate::error::{GlbError, Result};
use crate::{Matrix, Vector};

#[derive(Debug, Clone)]
pub struct DiscountedState {
    d: usize,
    lambda: f64,
    gamma: f64,
    t: usize,
    v: Matrix,
    v_tilde: Matrix,
    v_chol: Cholesky<f64, Dyn>,
    v_tilde_chol: Cholesky<f64, Dyn>,
    /// Row-major `len × d` arm history, oldest first.
    arms: Vec<f64>,
    rewards: Vec<f64>,
    /// `weights[i] = γ^{len-1-i}`.
    weights: Vec<f64>,
    /// `Σ_s w_s r_{s+1} x_s`.
    reward_moment: Vector,
    arm_bound: Option<f64>,
    reward_max: Option<f64>,
    weight_floor: Option<f64>,
}

/// `Ṽ^{1/2}` and `Ṽ^{-1/2}` from one symmetric eigendecomposition.
#[derive(Debug, Clone)]
pub struct TildeRoots {
    pub sqrt: Matrix,
    pub inv_sqrt: Matrix,
}

fn factor(m: &Matrix) -> Cholesky<f64, Dyn> {
    Cholesky::new(m.clone()).expect("λI floor keeps the design matrix positive definite")
}

impl DiscountedState {
    pub fn new(d: usize, lambda: f64, gamma: f64) -> Result<Self> {
        if d == 0 {
            return Err(GlbError::InvalidConfig("d must be at least 1".into()));
        }
        if !(lambda >= MIN_LAMBDA) || !lambda.is_finite() {
            return Err(GlbError::InvalidConfig(format!(
                "lambda must be >= {MIN_LAMBDA}, got {lambda}"
            )));
        }
        // gamma = 1 is the undiscounted (stationary) design
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(GlbError::InvalidConfig(format!(
                "gamma must lie in (0, 1], got {gamma}"
            )));
        }
        let v = Matrix::identity(d, d) * lambda;
        let chol = factor(&v);
        Ok(Self {
            d,
            lambda,
            gamma,
            t: 1,
            v_tilde: v.clone(),
            v_chol: chol.clone(),
            v_tilde_chol: chol,
            v,
            arms: Vec::new(),
            rewards: Vec::new(),
            weights: Vec::new(),
            reward_moment: Vector::zeros(d),
            arm_bound: None,
            reward_max: None,
            weight_floor: None,
        })
    }

    /// Enforce `‖x‖ ≤ L` and `r ∈ [0, reward_max]` on every update.
    pub fn with_bounds(mut self, arm_bound: f64, reward_max: f64) -> Self {
        self.arm_bound = Some(arm_bound);
        self.reward_max = Some(reward_max);
        self
    }

    /// Drop history entries whose weight falls below `floor`. Off by default.
    pub fn with_weight_floor(mut self, floor: Option<f64>) -> Self {
        self.weight_floor = floor;
        self
    }

    pub fn update(&mut self, x: &Vector, r: f64) -> Result<()> {
        self.check_dim(x.len())?;
        if let Some(bound) = self.arm_bound {
            let norm = x.norm();
            if norm > bound * (1.0 + 1e-12) {
                return Err(GlbError::ArmNormViolation { norm, bound });
            }
        }
        if let Some(max) = self.reward_max {
            if !(0.0..=max).contains(&r) {
                return Err(GlbError::RewardOutOfRange { reward: r, max });
            }
        } else if !r.is_finite() {
            return Err(GlbError::RewardOutOfRange {
                reward: r,
                max: f64::INFINITY,
            });
        }

        let (g, lam) = (self.gamma, self.lambda);
        let outer = x * x.transpose();
        let mut v = &self.v * g + &outer;
        for i in 0..self.d {
            v[(i, i)] += (1.0 - g) * lam;
        }
        let mut vt = &self.v_tilde * (g * g) + &outer;
        for i in 0..self.d {
            vt[(i, i)] += lam * (1.0 - g * g);
        }
        // keep exact symmetry so eigen/Cholesky see a symmetric matrix
        v = (&v + v.transpose()) * 0.5;
        vt = (&vt + vt.transpose()) * 0.5;

        self.v_chol = factor(&v);
        self.v_tilde_chol = factor(&vt);
        self.v = v;
        self.v_tilde = vt;

        self.reward_moment *= g;
        self.reward_moment.axpy(r, x, 1.0);
        self.arms.extend_from_slice(x.as_slice());
        self.rewards.push(r);
        self.t += 1;
        self.refresh_weights();
        self.apply_weight_floor();
        Ok(())
    }

    fn refresh_weights(&mut self) {
        let n = self.rewards.len();
        self.weights.clear();
        self.weights.extend((0..n).map(|i| self.gamma.powi((n - 1 - i) as i32)));
    }

    fn apply_weight_floor(&mut self) {
        let Some(floor) = self.weight_floor else {
            return;
        };
        let drop = self.weights.iter().take_while(|&&w| w < floor).count();
        if drop == 0 {
            return;
        }
        for i in 0..drop {
            let w = self.weights[i] * self.rewards[i];
            let x = &self.arms[i * self.d..(i + 1) * self.d];
            for (m, xi) in self.reward_moment.iter_mut().zip(x) {
                *m -= w * xi;
            }
        }
        self.arms.drain(..drop * self.d);
        self.rewards.drain(..drop);
        self.weights.drain(..drop);
    }

    fn check_dim(&self, actual: usize) -> Result<()> {
        if actual != self.d {
            return Err(GlbError::DimensionMismatch {
                expected: self.d,
                actual,
            });
        }
        Ok(())
    }

    /// Current round index (1 before any observation).
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn v(&self) -> &Matrix {
        &self.v
    }

    pub fn v_tilde(&self) -> &Matrix {
        &self.v_tilde
    }

    /// Number of retained history entries.
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    /// Row-major arm history, oldest first.
    pub fn arms_flat(&self) -> &[f64] {
        &self.arms
    }

    pub fn arm(&self, i: usize) -> &[f64] {
        &self.arms[i * self.d..(i + 1) * self.d]
    }

    /// Iterator over `(x_s, r_{s+1}, w_s)`, oldest first.
    pub fn history(&self) -> impl Iterator<Item = (&[f64], f64, f64)> + '_ {
        self.arms
            .chunks_exact(self.d)
            .zip(self.rewards.iter().zip(&self.weights))
            .map(|(x, (&r, &w))| (x, r, w))
    }

    /// `Σ_s w_s r_{s+1} x_s`.
    pub fn reward_moment(&self) -> &Vector {
        &self.reward_moment
    }

    /// `V⁻¹ v`.
    pub fn solve_v(&self, v: &Vector) -> Result<Vector> {
        self.check_dim(v.len())?;
        Ok(self.v_chol.solve(v))
    }

    /// `Ṽ⁻¹ v`.
    pub fn solve_v_tilde(&self, v: &Vector) -> Result<Vector> {
        self.check_dim(v.len())?;
        Ok(self.v_tilde_chol.solve(v))
    }

    /// `‖x‖_{V⁻¹}`, through the Cholesky factor `V = LLᵀ` as `‖L⁻¹x‖₂`.
    pub fn mahalanobis_inv(&self, x: &Vector) -> Result<f64> {
        self.check_dim(x.len())?;
        Ok(lower_solve_norm(&self.v_chol, x))
    }

    /// `‖v‖_{V⁻²} = ‖V⁻¹v‖₂`.
    pub fn mahalanobis_inv2(&self, v: &Vector) -> Result<f64> {
        Ok(self.solve_v(v)?.norm())
    }

    /// `‖v‖_{Ṽ⁻¹}`.
    pub fn mahalanobis_tilde_inv(&self, v: &Vector) -> Result<f64> {
        self.check_dim(v.len())?;
        Ok(lower_solve_norm(&self.v_tilde_chol, v))
    }

    /// `‖x‖_{V⁻¹ṼV⁻¹}`, the width used by discounted linear UCB.
    pub fn sandwich_norm(&self, x: &Vector) -> Result<f64> {
        let y = self.solve_v(x)?;
        Ok(y.dot(&(&self.v_tilde * &y)).max(0.0).sqrt())
    }

    /// Symmetric square root `Ṽ^{1/2}`.
    pub fn sqrt_tilde(&self) -> Matrix {
        self.tilde_roots().sqrt
    }

    pub fn tilde_roots(&self) -> TildeRoots {
        let eig = self.v_tilde.clone().symmetric_eigen();
        let q = &eig.eigenvectors;
        let vals = &eig.eigenvalues;
        let sqrt_diag = Matrix::from_diagonal(&vals.map(|e| e.max(0.0).sqrt()));
        let inv_diag = Matrix::from_diagonal(&vals.map(|e| 1.0 / e.max(self.lambda).sqrt()));
        let sqrt = q * sqrt_diag * q.transpose();
        let inv_sqrt = q * inv_diag * q.transpose();
        TildeRoots {
            sqrt: (&sqrt + sqrt.transpose()) * 0.5,
            inv_sqrt: (&inv_sqrt + inv_sqrt.transpose()) * 0.5,
        }
    }

    /// `log det V`.
    pub fn log_det_v(&self) -> f64 {
        let l = self.v_chol.l_dirty();
        (0..self.d).map(|i| 2.0 * l[(i, i)].ln()).sum()
    }

    /// `V` and `Ṽ` recomputed from their defining sums over the retained history.
    pub fn recompute_from_history(&self) -> (Matrix, Matrix) {
        let mut v = Matrix::identity(self.d, self.d) * self.lambda;
        let mut vt = v.clone();
        for (x, _, w) in self.history() {
            let x = Vector::from_column_slice(x);
            let outer = &x * x.transpose();
            v += &outer * w;
            vt += &outer * (w * w);
        }
        (v, vt)
    }
}

fn lower_solve_norm(chol: &Cholesky<f64, Dyn>, x: &Vector) -> f64 {
    let l = chol.l_dirty();
    let n = x.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = x[i];
        for (j, yj) in y.iter().enumerate().take(i) {
            s -= l[(i, j)] * yj;
        }
        y[i] = s / l[(i, i)];
    }
    y.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel_frob(a: &Matrix, b: &Matrix) -> f64 {
        (a - b).norm() / b.norm()
    }

    fn random_unit_ball(rng: &mut impl Rng, d: usize) -> Vector {
        let x = Vector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let n = x.norm();
        if n > 1.0 {
            x / n
        } else {
            x
        }
    }

    #[test]
    fn init_is_ridge() {
        let s = DiscountedState::new(2, 1.0, 0.9).unwrap();
        assert_eq!(s.v(), &Matrix::identity(2, 2));
        assert_eq!(s.t(), 1);
        assert!(s.is_empty());
        let s = DiscountedState::new(1, 2.0, 0.5).unwrap();
        assert_eq!(s.v()[(0, 0)], 2.0);
        let s = DiscountedState::new(3, 1.0, 0.99).unwrap();
        assert_eq!(s.v_tilde(), &Matrix::identity(3, 3));
    }

    #[test]
    fn init_rejects_bad_parameters() {
        assert!(DiscountedState::new(2, 1.0, 0.0).is_err());
        assert!(DiscountedState::new(2, 1.0, 1.2).is_err());
        assert!(DiscountedState::new(2, 0.0, 0.5).is_err());
        assert!(DiscountedState::new(0, 1.0, 0.5).is_err());
    }

    #[test]
    fn scalar_recursion_by_hand() {
        let mut s = DiscountedState::new(1, 1.0, 0.5).unwrap();
        s.update(&Vector::from_element(1, 1.0), 1.0).unwrap();
        assert!((s.v()[(0, 0)] - 2.0).abs() < 1e-15);
        s.update(&Vector::from_element(1, 1.0), 0.0).unwrap();
        assert!((s.v()[(0, 0)] - 2.5).abs() < 1e-15);
        assert_eq!(s.weights(), &[0.5, 1.0]);
        assert_eq!(s.t(), 3);
    }

    #[test]
    fn zero_arm_shrinks_toward_ridge() {
        let mut s = DiscountedState::new(2, 1.0, 0.8).unwrap();
        s.update(&Vector::from_vec(vec![1.0, 0.0]), 0.3).unwrap();
        let before = s.v().clone();
        s.update(&Vector::zeros(2), 0.0).unwrap();
        let expected = &before * 0.8 + Matrix::identity(2, 2) * 0.2;
        assert!((s.v() - expected).norm() < 1e-14);
    }

    #[test]
    fn reward_bounds_are_enforced() {
        let mut s = DiscountedState::new(2, 1.0, 0.9).unwrap().with_bounds(1.0, 1.0);
        let x = Vector::from_vec(vec![0.6, 0.0]);
        assert!(matches!(s.update(&x, 1.5), Err(GlbError::RewardOutOfRange { .. })));
        assert!(matches!(s.update(&x, -0.1), Err(GlbError::RewardOutOfRange { .. })));
        let long = Vector::from_vec(vec![2.0, 0.0]);
        assert!(matches!(s.update(&long, 0.5), Err(GlbError::ArmNormViolation { .. })));
        assert!(matches!(
            s.update(&Vector::zeros(3), 0.5),
            Err(GlbError::DimensionMismatch { .. })
        ));
        s.update(&x, 1.0).unwrap();
    }

    #[test]
    fn recursion_matches_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let d = rng.random_range(1..=5);
            let gamma = rng.random_range(0.5..0.999);
            let lambda = rng.random_range(0.1..3.0);
            let mut s = DiscountedState::new(d, lambda, gamma).unwrap();
            let k = rng.random_range(1..=50);
            for _ in 0..k {
                let x = random_unit_ball(&mut rng, d);
                s.update(&x, rng.random_range(0.0..1.0)).unwrap();
            }
            let (v, vt) = s.recompute_from_history();
            assert!(rel_frob(s.v(), &v) < 1e-8);
            assert!(rel_frob(s.v_tilde(), &vt) < 1e-8);
            // Loewner order V ⪰ Ṽ ⪰ λI
            let gap = (s.v() - s.v_tilde()).symmetric_eigen();
            assert!(gap.eigenvalues.iter().all(|&e| e >= -1e-10));
            let floor = (s.v_tilde() - Matrix::identity(d, d) * lambda).symmetric_eigen();
            assert!(floor.eigenvalues.iter().all(|&e| e >= -1e-10));
            // weights positive, decreasing with age, newest is 1
            let w = s.weights();
            assert_eq!(*w.last().unwrap(), 1.0);
            assert!(w.windows(2).all(|p| p[0] < p[1] && p[0] > 0.0));
            let mut m = Vector::zeros(d);
            for (x, r, w) in s.history() {
                m += Vector::from_column_slice(x) * (w * r);
            }
            assert!((s.reward_moment() - m).norm() < 1e-10);
        }
    }

    #[test]
    fn norms_isotropic_and_scalar() {
        let s = DiscountedState::new(3, 4.0, 0.9).unwrap();
        let x = Vector::from_vec(vec![1.0, 2.0, 2.0]);
        assert!((s.mahalanobis_inv(&x).unwrap() - 3.0 / 2.0).abs() < 1e-14);
        assert!((s.mahalanobis_inv2(&x).unwrap() - 3.0 / 4.0).abs() < 1e-14);
        assert!((s.mahalanobis_tilde_inv(&x).unwrap() - 1.5).abs() < 1e-14);
        assert!(s.mahalanobis_inv(&Vector::zeros(2)).is_err());

        let mut s = DiscountedState::new(1, 1.0, 0.5).unwrap();
        s.update(&Vector::from_element(1, 1.0), 1.0).unwrap();
        let n = s.mahalanobis_inv(&Vector::from_element(1, 3.0)).unwrap();
        assert!((n - 3.0 / 2f64.sqrt()).abs() < 1e-12);
        assert!((n - 2.12132).abs() < 1e-5);
    }

    #[test]
    fn norms_match_explicit_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = DiscountedState::new(3, 0.5, 0.95).unwrap();
        for _ in 0..40 {
            let x = random_unit_ball(&mut rng, 3);
            s.update(&x, 0.5).unwrap();
        }
        let x = Vector::from_vec(vec![0.3, -0.7, 0.2]);
        let vinv = s.v().clone().try_inverse().unwrap();
        let vtinv = s.v_tilde().clone().try_inverse().unwrap();
        assert!((s.mahalanobis_inv(&x).unwrap() - x.dot(&(&vinv * &x)).sqrt()).abs() < 1e-12);
        assert!((s.mahalanobis_tilde_inv(&x).unwrap() - x.dot(&(&vtinv * &x)).sqrt()).abs() < 1e-12);
        assert!((s.mahalanobis_inv2(&x).unwrap() - (&vinv * &x).norm()).abs() < 1e-12);
        let sand = &vinv * s.v_tilde() * &vinv;
        assert!((s.sandwich_norm(&x).unwrap() - x.dot(&(&sand * &x)).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn square_roots() {
        let mut s = DiscountedState::new(2, 4.0, 0.9).unwrap();
        assert!((s.sqrt_tilde() - Matrix::identity(2, 2) * 2.0).norm() < 1e-12);
        s.v_tilde = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 9.0]));
        let r = s.sqrt_tilde();
        assert!((r - Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 3.0]))).norm() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut s = DiscountedState::new(4, 1.0, 0.97).unwrap();
        for _ in 0..60 {
            s.update(&random_unit_ball(&mut rng, 4), 0.0).unwrap();
        }
        let roots = s.tilde_roots();
        assert!((&roots.sqrt * &roots.sqrt - s.v_tilde()).norm() < 1e-8);
        assert!((&roots.sqrt * &roots.inv_sqrt - Matrix::identity(4, 4)).norm() < 1e-8);
    }

    #[test]
    fn undiscounted_design_has_equal_matrices() {
        let mut s = DiscountedState::new(2, 1.0, 1.0).unwrap();
        for i in 0..10 {
            let a = i as f64 * 0.3;
            s.update(&Vector::from_vec(vec![a.cos(), a.sin()]), 1.0).unwrap();
        }
        assert!((s.v() - s.v_tilde()).norm() < 1e-12);
        assert!(s.weights().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn weight_floor_drops_old_entries() {
        let mut s = DiscountedState::new(1, 1.0, 0.5).unwrap().with_weight_floor(Some(0.1));
        for _ in 0..10 {
            s.update(&Vector::from_element(1, 1.0), 1.0).unwrap();
        }
        assert!(s.weights().iter().all(|&w| w >= 0.1));
        assert_eq!(s.len(), 4);
        let expected: f64 = s.weights().iter().sum();
        assert!((s.reward_moment()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn log_det_matches_determinant() {
        let mut s = DiscountedState::new(2, 1.0, 0.9).unwrap();
        s.update(&Vector::from_vec(vec![0.6, 0.8]), 0.0).unwrap();
        assert!((s.log_det_v() - s.v().determinant().ln()).abs() < 1e-12);
    }
}
