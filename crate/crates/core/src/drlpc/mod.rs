//! Barrier-regularized actor-critic predictive controller.
//!
//! Within each receding horizon an actor `û = W_aᵀh(ŝ, τ)` and a critic
//! `λ̂ = W_cᵀh(ŝ, τ)` are trained by incremental dual heuristic programming
//! on the lifted predictor. The applied plan passes a safety and
//! monotonicity gate, with the shifted previous plan as backup.

mod rollout;

pub use rollout::{
    actor_plan, backup_plan, learning_pass, feasibility_margin, horizon_rollout, monotonicity_check, safety_check, step_drlpc, Branch, FeasibilityMargin,
    HorizonPlan, PlanSource, StepOutcome, plan_cost,
};

use rand::Rng;

use crate::barriers::RelaxedBarrier;
use crate::drmpc::{ControllerConfig, StageBarriers, TubeSets};
use crate::geometry::{Ellipsoid, Polytope};
use crate::koopman::LiftedLinearModel;
use crate::{DMat, DVec, Error, Real, Result};

/// Features `h(ŝ, τ) = (ŝ, ντ, ντ²)` with `τ` counted from the start of the
/// horizon.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BasisSpec<T: Real> {
    pub lifted_dim: usize,
    pub nu: T,
}

impl<T: Real> BasisSpec<T> {
    pub fn len(&self) -> usize {
        self.lifted_dim + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn features(&self, s: &DVec<T>, tau: usize) -> DVec<T> {
        let mut h = DVec::zeros(self.len());
        h.rows_mut(0, self.lifted_dim).copy_from(s);
        let t = self.nu * T::lit(tau as f64);
        h[self.lifted_dim] = t;
        h[self.lifted_dim + 1] = t * T::lit(tau as f64);
        h
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActorCriticState<T: Real> {
    pub basis: BasisSpec<T>,
    /// `N_c × n̄`.
    pub w_c: DMat<T>,
    /// `N_u × m`.
    pub w_a: DMat<T>,
    /// Critic rate (before normalization).
    pub beta: T,
    /// Actor rate (before normalization).
    pub gamma: T,
    /// Outer-loop stopping threshold on `Σ‖ΔW‖`.
    pub eps_w: T,
    /// Outer-loop cap.
    pub i_bar: usize,
    /// Divergence cap on `‖W‖_F`.
    pub weight_cap: T,
    /// `(‖ε_c‖, ‖ε_a‖)` from each update.
    pub residual_log: Vec<(f64, f64)>,
}

impl<T: Real> ActorCriticState<T> {
    /// Weights uniform in `[−scale, scale]`.
    pub fn random<R: Rng>(basis: BasisSpec<T>, input_dim: usize, scale: T, rng: &mut R) -> Self {
        let nf = basis.len();
        let mut draw = |r: usize, c: usize| DMat::from_fn(r, c, |_, _| scale * T::lit(rng.gen_range(-1.0..=1.0)));
        let w_c = draw(nf, basis.lifted_dim);
        let w_a = draw(nf, input_dim);
        Self::with_weights(basis, w_c, w_a)
    }

    pub fn zeros(basis: BasisSpec<T>, input_dim: usize) -> Self {
        let nf = basis.len();
        Self::with_weights(basis, DMat::zeros(nf, basis.lifted_dim), DMat::zeros(nf, input_dim))
    }

    /// Default rates `β = γ = 0.01`, `ε_W = 1e-4`, `ī = 10`.
    pub fn with_weights(basis: BasisSpec<T>, w_c: DMat<T>, w_a: DMat<T>) -> Self {
        ActorCriticState {
            basis,
            w_c,
            w_a,
            beta: T::lit(0.01),
            gamma: T::lit(0.01),
            eps_w: T::lit(1e-4),
            i_bar: 10,
            weight_cap: T::lit(1e6),
            residual_log: Vec::new(),
        }
    }

    fn guard(&self) -> Result<()> {
        let nc = self.w_c.norm();
        let na = self.w_a.norm();
        if !(nc.is_finite() && na.is_finite()) || nc > self.weight_cap || na > self.weight_cap {
            return Err(Error::DivergenceDetected(nc.max(na).f64()));
        }
        Ok(())
    }
}

/// `λ̂ = W_cᵀ h(ŝ, τ)`.
pub fn critic_eval<T: Real>(state: &ActorCriticState<T>, s: &DVec<T>, tau: usize) -> DVec<T> {
    state.w_c.transpose() * state.basis.features(s, tau)
}

/// `û = W_aᵀ h(ŝ, τ)`.
pub fn actor_eval<T: Real>(state: &ActorCriticState<T>, s: &DVec<T>, tau: usize) -> DVec<T> {
    state.w_a.transpose() * state.basis.features(s, tau)
}

/// Matrices, sets and barriers of the learning problem.
#[derive(Clone, Debug)]
pub struct LearningContext<T: Real> {
    pub a: DMat<T>,
    pub b: DMat<T>,
    pub qbar: DMat<T>,
    pub r: DMat<T>,
    pub p: DMat<T>,
    pub mu: T,
    pub mu_bar: T,
    pub state_barrier: RelaxedBarrier<T>,
    pub input_barrier: RelaxedBarrier<T>,
    pub terminal_barrier: RelaxedBarrier<T>,
    /// Barriers on `λ̂ ∈ Λʲ`, `j = 1..N` at index `j − 1`.
    pub costate_barriers: Vec<RelaxedBarrier<T>>,
    pub k: DMat<T>,
    pub sets: TubeSets<T>,
    /// Physical input box `𝒰` as `(lo, hi)`.
    pub input_box: (DVec<T>, DVec<T>),
    /// `L` with `LLᵀ = ϱZ⁻¹`, mapping the unit ball onto `𝒮_f`.
    terminal_factor: DMat<T>,
}

impl<T: Real> LearningContext<T> {
    /// Relaxed re-centered barriers on `𝒮`, `Û` and `Λʲ`, and a re-centered
    /// barrier on `𝒮_f` (relaxed only on request).
    pub fn new(
        model: &LiftedLinearModel<T>,
        cfg: &ControllerConfig<T>,
        costates: &[Ellipsoid<T>],
        input_box: &Polytope<T>,
        relaxed_terminal: bool,
    ) -> Result<Self> {
        cfg.check(model)?;
        if costates.len() != cfg.horizon {
            return Err(Error::Dimension(format!("{} costate sets for horizon {}", costates.len(), cfg.horizon)));
        }
        let bars = StageBarriers::new(&cfg.sets, cfg.kappa, relaxed_terminal)?;
        let costate_barriers =
            costates.iter().map(|e| RelaxedBarrier::ellipsoid(e, cfg.kappa, true, true)).collect::<Result<Vec<_>>>()?;
        let cov = crate::geometry::shape_matrix(&cfg.sets.terminal)?;
        let terminal_factor = nalgebra::Cholesky::new(crate::linalg::sym(&cov))
            .ok_or_else(|| Error::Degenerate("terminal ellipsoid".into()))?
            .l();
        Ok(LearningContext {
            a: model.a.clone(),
            b: model.b.clone(),
            qbar: cfg.qbar.clone(),
            r: cfg.r.clone(),
            p: cfg.p.clone(),
            mu: cfg.mu,
            mu_bar: cfg.mu_bar,
            state_barrier: bars.state,
            input_barrier: bars.input,
            terminal_barrier: bars.terminal,
            costate_barriers,
            k: cfg.k.clone(),
            sets: cfg.sets.clone(),
            input_box: input_box.axis_bounds()?,
            terminal_factor,
        })
    }

    pub fn horizon(&self) -> usize {
        self.costate_barriers.len()
    }

    pub fn lifted_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Uniform draw from `𝒮_f`.
    pub fn sample_terminal<R: Rng>(&self, rng: &mut R) -> DVec<T> {
        &self.terminal_factor * crate::geometry::unit_ball_sample::<T, R>(rng, self.lifted_dim())
    }
}

/// Costate target: `μ∇B(ŝ) + 2Q̄ŝ + Aᵀλ̂⁺` inside the horizon, and
/// `μ∇B_f(ŝ) + 2Pŝ` at the terminal step (`lambda_next = None`).
pub fn costate_target<T: Real>(s: &DVec<T>, lambda_next: Option<&DVec<T>>, ctx: &LearningContext<T>) -> Result<DVec<T>> {
    let two = T::lit(2.0);
    match lambda_next {
        Some(l) => {
            let mut t = &ctx.qbar * s * two + ctx.a.transpose() * l;
            if ctx.mu != T::zero() {
                t += ctx.state_barrier.gradient(s)? * ctx.mu;
            }
            Ok(t)
        }
        None => {
            let mut t = &ctx.p * s * two;
            if ctx.mu != T::zero() {
                t += ctx.terminal_barrier.gradient(s)? * ctx.mu;
            }
            Ok(t)
        }
    }
}

/// Critic loss `‖λ_d − λ̂‖² + ‖λ_dN − λ̂_N‖² + μ̄(B_j(λ̂) + B_N(λ̂_N))` at the
/// given weights, with targets held fixed.
pub fn critic_loss<T: Real>(
    w_c: &DMat<T>,
    h: &DVec<T>,
    target: &DVec<T>,
    h_n: &DVec<T>,
    target_n: &DVec<T>,
    costate_barrier: &RelaxedBarrier<T>,
    terminal_costate_barrier: &RelaxedBarrier<T>,
    mu_bar: T,
) -> T {
    let lam = w_c.transpose() * h;
    let lam_n = w_c.transpose() * h_n;
    let mut v = (target - &lam).norm_squared() + (target_n - &lam_n).norm_squared();
    if mu_bar != T::zero() {
        v += mu_bar * (costate_barrier.value(&lam) + terminal_costate_barrier.value(&lam_n));
    }
    v
}

/// `∂δ_c/∂W_c` of [`critic_loss`].
#[allow(clippy::too_many_arguments)]
pub fn critic_gradient<T: Real>(
    w_c: &DMat<T>,
    h: &DVec<T>,
    target: &DVec<T>,
    h_n: &DVec<T>,
    target_n: &DVec<T>,
    costate_barrier: &RelaxedBarrier<T>,
    terminal_costate_barrier: &RelaxedBarrier<T>,
    mu_bar: T,
) -> Result<DMat<T>> {
    let two = T::lit(2.0);
    let lam = w_c.transpose() * h;
    let lam_n = w_c.transpose() * h_n;
    let mut d = -(target - &lam) * two;
    let mut d_n = -(target_n - &lam_n) * two;
    if mu_bar != T::zero() {
        d += costate_barrier.gradient(&lam)? * mu_bar;
        d_n += terminal_costate_barrier.gradient(&lam_n)? * mu_bar;
    }
    Ok(h * d.transpose() + h_n * d_n.transpose())
}

/// One normalized critic step `W_c ← W_c − β_eff ∂δ_c/∂W_c` with
/// `β_eff = β / (2(‖h‖² + ‖h_N‖²) + 1e-8)`.
#[allow(clippy::too_many_arguments)]
pub fn critic_update<T: Real>(
    state: &mut ActorCriticState<T>,
    h: &DVec<T>,
    target: &DVec<T>,
    h_n: &DVec<T>,
    target_n: &DVec<T>,
    costate_barrier: &RelaxedBarrier<T>,
    terminal_costate_barrier: &RelaxedBarrier<T>,
    mu_bar: T,
) -> Result<T> {
    let grad = critic_gradient(&state.w_c, h, target, h_n, target_n, costate_barrier, terminal_costate_barrier, mu_bar)?;
    let rate = state.beta / (T::lit(2.0) * (h.norm_squared() + h_n.norm_squared()) + T::lit(1e-8));
    let residual = (target - state.w_c.transpose() * h).norm();
    state.w_c -= grad * rate;
    state.guard()?;
    Ok(residual)
}

/// `G_u(u) = μ∇B_u(u) + 2Ru`.
pub fn control_map<T: Real>(u: &DVec<T>, ctx: &LearningContext<T>) -> Result<DVec<T>> {
    let mut g = &ctx.r * u * T::lit(2.0);
    if ctx.mu != T::zero() {
        g += ctx.input_barrier.gradient(u)? * ctx.mu;
    }
    Ok(g)
}

/// `∂G_u/∂u = μ∇²B_u(u) + 2R`.
pub fn control_map_jacobian<T: Real>(u: &DVec<T>, ctx: &LearningContext<T>) -> Result<DMat<T>> {
    let mut j = &ctx.r * T::lit(2.0);
    if ctx.mu != T::zero() {
        j += ctx.input_barrier.hessian(u)? * ctx.mu;
    }
    Ok(j)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DesiredControl<T: Real> {
    pub u: DVec<T>,
    pub residual: T,
    pub iterations: usize,
    pub converged: bool,
}

/// Solves `μ∇B_u(u) + 2Ru = −Bᵀλ⁺` by damped Newton on the strongly convex
/// potential `uᵀRu + μB_u(u) + λ⁺ᵀBu`, starting from the barrier-free
/// solution pulled radially into `0.9·Û`.
pub fn desired_control<T: Real>(lambda_next: &DVec<T>, ctx: &LearningContext<T>) -> Result<DesiredControl<T>> {
    let rhs = -(ctx.b.transpose() * lambda_next);
    let free = spd_half_solve(&ctx.r, &rhs)?;
    if ctx.mu == T::zero() {
        return Ok(DesiredControl { u: free, residual: T::zero(), iterations: 0, converged: true });
    }
    let mut u = radial_pull(&free, &ctx.input_barrier, T::lit(0.9));
    let potential = |u: &DVec<T>| (&ctx.r * u).dot(u) + ctx.mu * ctx.input_barrier.value(u) - rhs.dot(u);
    let mut f = potential(&u);
    let tol = T::lit(1e-9);
    for it in 0..100 {
        let res = control_map(&u, ctx)? - &rhs;
        let rn = res.norm();
        if rn <= tol {
            return Ok(DesiredControl { u, residual: rn, iterations: it, converged: true });
        }
        let jac = control_map_jacobian(&u, ctx)?;
        let step = -nalgebra::Cholesky::new(crate::linalg::sym(&jac)).ok_or(Error::NoConvergence("desired control".into()))?.solve(&res);
        let slope = res.dot(&step);
        let mut t = T::one();
        loop {
            let cand = &u + &step * t;
            let fc = potential(&cand);
            if fc <= f + T::lit(1e-4) * t * slope || t < T::lit(1e-12) {
                u = cand;
                f = fc;
                break;
            }
            t *= T::lit(0.5);
        }
    }
    let residual = (control_map(&u, ctx)? - &rhs).norm();
    Ok(DesiredControl { u, converged: residual <= tol, residual, iterations: 100 })
}

fn spd_half_solve<T: Real>(r: &DMat<T>, rhs: &DVec<T>) -> Result<DVec<T>> {
    let sol = crate::linalg::spd_solve(&(r * T::lit(2.0)), &DMat::from_column_slice(rhs.len(), 1, rhs.as_slice()))?;
    Ok(sol.column(0).into_owned())
}

/// Largest `αu`, `α ≤ 1`, inside `fraction` times the barrier's polytope.
fn radial_pull<T: Real>(u: &DVec<T>, barrier: &RelaxedBarrier<T>, fraction: T) -> DVec<T> {
    let crate::barriers::BarrierSet::Polytope(p) = &barrier.set else {
        return u.clone();
    };
    let mut alpha = T::one();
    for i in 0..p.len() {
        let au = p.normals.row(i).transpose().dot(u);
        let lim = fraction * p.offsets[i];
        if au > lim && au > T::zero() {
            alpha = alpha.min(lim / au);
        }
    }
    u * alpha
}

/// Actor loss `‖G_u(u_d) − G_u(û)‖² + μ̄B_u(û)` with `û = W_aᵀh`.
pub fn actor_loss<T: Real>(w_a: &DMat<T>, h: &DVec<T>, u_d: &DVec<T>, ctx: &LearningContext<T>) -> Result<T> {
    let u_hat = w_a.transpose() * h;
    let eps = control_map(u_d, ctx)? - control_map(&u_hat, ctx)?;
    let mut v = eps.norm_squared();
    if ctx.mu_bar != T::zero() {
        v += ctx.mu_bar * ctx.input_barrier.value(&u_hat);
    }
    Ok(v)
}

/// `∂δ_a/∂W_a = h(−2J_Gᵀε_a + μ̄∇B_u(û))ᵀ`.
pub fn actor_gradient<T: Real>(w_a: &DMat<T>, h: &DVec<T>, u_d: &DVec<T>, ctx: &LearningContext<T>) -> Result<(DMat<T>, T, T)> {
    let u_hat = w_a.transpose() * h;
    let eps = control_map(u_d, ctx)? - control_map(&u_hat, ctx)?;
    let jac = control_map_jacobian(&u_hat, ctx)?;
    let mut d = -(jac.transpose() * &eps) * T::lit(2.0);
    if ctx.mu_bar != T::zero() {
        d += ctx.input_barrier.gradient(&u_hat)? * ctx.mu_bar;
    }
    let jn = jac.norm();
    Ok((h * d.transpose(), eps.norm(), jn))
}

/// One normalized actor step with `γ_eff = γ / (2‖h‖²‖J_G‖² + 1e-8)`.
/// Returns `‖ε_a‖` before the step.
pub fn actor_update<T: Real>(state: &mut ActorCriticState<T>, h: &DVec<T>, u_d: &DVec<T>, ctx: &LearningContext<T>) -> Result<T> {
    let (grad, eps, jn) = actor_gradient(&state.w_a, h, u_d, ctx)?;
    let rate = state.gamma / (T::lit(2.0) * h.norm_squared() * jn * jn + T::lit(1e-8));
    state.w_a -= grad * rate;
    state.guard()?;
    Ok(eps)
}
