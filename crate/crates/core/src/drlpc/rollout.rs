use rand::Rng;

use super::{actor_eval, actor_update, costate_target, critic_eval, critic_update, desired_control, ActorCriticState};
use super::LearningContext;
use crate::drmpc::clamp_to_box;
use crate::linalg::sigma_max;
use crate::{DMat, DVec, Error, Real, Result};

/// Membership tolerance of the safety gate.
const SAFETY_TOL: f64 = 1e-9;
/// Slack of the monotonicity gate.
const MONOTONE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlanSource {
    /// Rolled out from the measured lifted state.
    Measured,
    /// Rolled out from the previous plan's one-step prediction.
    Predicted,
    /// Shifted previous plan closed by the terminal gain.
    Shifted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HorizonPlan<T: Real> {
    pub s_hat0: DVec<T>,
    /// `û₀ … û_{N−1}`.
    pub u_sequence: Vec<DVec<T>>,
    /// `ŝ₀ … ŝ_N`.
    pub s_sequence: Vec<DVec<T>>,
    /// Penalized cost of the plan.
    pub v_b: T,
    pub safe: bool,
    pub source: PlanSource,
}

/// Which branch of the gate produced the applied plan.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Learned,
    Backup,
    /// No safe plan exists and the previous plan was unsafe too; the best
    /// learned plan is applied.
    Recovery,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome<T: Real> {
    /// Input after tube feedback and clamping to `𝒰`.
    pub u: DVec<T>,
    /// Whether clamping changed the input.
    pub saturated: bool,
    pub plan: HorizonPlan<T>,
    pub branch: Branch,
    /// Outer learning passes taken.
    pub passes: usize,
    /// Largest actor residual seen during learning.
    pub max_actor_residual: f64,
}

/// Penalized cost `Σ(ŝᵀQ̄ŝ + ûᵀRû + μB(ŝ) + μB_u(û)) + ŝ_NᵀPŝ_N + μB_f(ŝ_N)`.
pub fn plan_cost<T: Real>(states: &[DVec<T>], inputs: &[DVec<T>], ctx: &LearningContext<T>) -> T {
    let n = inputs.len();
    let mut v = T::zero();
    for i in 0..n {
        v += (&ctx.qbar * &states[i]).dot(&states[i]) + (&ctx.r * &inputs[i]).dot(&inputs[i]);
        if ctx.mu != T::zero() {
            v += ctx.mu * (ctx.state_barrier.value(&states[i]) + ctx.input_barrier.value(&inputs[i]));
        }
    }
    v += (&ctx.p * &states[n]).dot(&states[n]);
    if ctx.mu != T::zero() {
        v += ctx.mu * ctx.terminal_barrier.value(&states[n]);
    }
    v
}

/// `ŝ_j ∈ 𝒮`, `û_j ∈ Û` and `ŝ_N ∈ 𝒮_f`.
pub fn safety_check<T: Real>(states: &[DVec<T>], inputs: &[DVec<T>], ctx: &LearningContext<T>) -> bool {
    let tol = T::lit(SAFETY_TOL);
    let n = inputs.len();
    states.len() == n + 1
        && states.iter().all(|s| s.iter().all(|v| v.is_finite()))
        && inputs.iter().all(|u| ctx.sets.input.contains(u, tol))
        && states[..n].iter().all(|s| ctx.sets.state.contains(s, tol))
        && ctx.sets.terminal.contains(&states[n], tol)
}

/// `V_b ≤ V_b_prev` up to a fixed slack.
pub fn monotonicity_check<T: Real>(v_b: T, v_b_prev: T) -> bool {
    v_b.is_finite() && v_b <= v_b_prev + T::lit(MONOTONE_TOL)
}

fn finish<T: Real>(s_hat0: DVec<T>, inputs: Vec<DVec<T>>, states: Vec<DVec<T>>, source: PlanSource, ctx: &LearningContext<T>) -> HorizonPlan<T> {
    let v_b = plan_cost(&states, &inputs, ctx);
    let safe = safety_check(&states, &inputs, ctx);
    HorizonPlan { s_hat0, u_sequence: inputs, s_sequence: states, v_b, safe, source }
}

/// One learning pass of actor and critic along the horizon from `ŝ₀`.
/// Returns the weight change `‖ΔW_c‖ + ‖ΔW_a‖` and the largest actor
/// residual.
pub fn learning_pass<T: Real, R: Rng>(state: &mut ActorCriticState<T>, s_hat0: &DVec<T>, ctx: &LearningContext<T>, rng: &mut R) -> Result<(f64, f64)> {
    let n = ctx.horizon();
    if s_hat0.len() != ctx.lifted_dim() || state.basis.lifted_dim != ctx.lifted_dim() {
        return Err(Error::Dimension("rollout state disagrees with the learning context".into()));
    }
    let mut max_eps = 0.0f64;
    let wc0 = state.w_c.clone();
    let wa0 = state.w_a.clone();
    let mut s = s_hat0.clone();
    for tau in 0..n {
        let h = state.basis.features(&s, tau);
        let u_hat = state.w_a.transpose() * &h;
        let s1 = &ctx.a * &s + &ctx.b * &u_hat;
        let lam1 = critic_eval(state, &s1, tau + 1);
        let target = costate_target(&s, Some(&lam1), ctx)?;
        let s_f = ctx.sample_terminal(rng);
        let h_n = state.basis.features(&s_f, n);
        let target_n = costate_target(&s_f, None, ctx)?;
        let eps_c =
            critic_update(state, &h, &target, &h_n, &target_n, &ctx.costate_barriers[tau], &ctx.costate_barriers[n - 1], ctx.mu_bar)?;
        let ud = desired_control(&lam1, ctx)?;
        let eps_a = actor_update(state, &h, &ud.u, ctx)?;
        max_eps = max_eps.max(eps_a.f64());
        state.residual_log.push((eps_c.f64(), eps_a.f64()));
        s = s1;
    }
    let dw = (&state.w_c - wc0).norm() + (&state.w_a - wa0).norm();
    Ok((dw.f64(), max_eps))
}

/// Rolls the current actor out over the horizon from `ŝ₀`.
pub fn actor_plan<T: Real>(state: &ActorCriticState<T>, s_hat0: &DVec<T>, source: PlanSource, ctx: &LearningContext<T>) -> HorizonPlan<T> {
    let n = ctx.horizon();
    let mut states = Vec::with_capacity(n + 1);
    let mut inputs = Vec::with_capacity(n);
    states.push(s_hat0.clone());
    for tau in 0..n {
        let u = actor_eval(state, &states[tau], tau);
        let next = &ctx.a * &states[tau] + &ctx.b * &u;
        inputs.push(u);
        states.push(next);
    }
    finish(s_hat0.clone(), inputs, states, source, ctx)
}

/// Up to `ī` learning passes from `ŝ₀`, stopping once a pass changes the
/// weights by at most `ε_W`, then the actor's plan. Returns the plan, the
/// number of passes and the largest actor residual.
pub fn horizon_rollout<T: Real, R: Rng>(
    state: &mut ActorCriticState<T>,
    s_hat0: &DVec<T>,
    source: PlanSource,
    ctx: &LearningContext<T>,
    rng: &mut R,
) -> Result<(HorizonPlan<T>, usize, f64)> {
    let mut passes = 0;
    let mut max_eps = 0.0f64;
    for _ in 0..state.i_bar {
        passes += 1;
        let (dw, e) = learning_pass(state, s_hat0, ctx, rng)?;
        max_eps = max_eps.max(e);
        if dw <= state.eps_w.f64() {
            break;
        }
    }
    Ok((actor_plan(state, s_hat0, source, ctx), passes, max_eps))
}

/// Shifted previous plan closed by `K`: inputs `û₁ … û_{N−1}, Kŝ_N` and
/// states `ŝ₁ … ŝ_N, Fŝ_N`.
pub fn backup_plan<T: Real>(prev: &HorizonPlan<T>, ctx: &LearningContext<T>) -> HorizonPlan<T> {
    let n = prev.u_sequence.len();
    let last = &prev.s_sequence[n];
    let u_n = &ctx.k * last;
    let s_next = &ctx.a * last + &ctx.b * &u_n;
    let mut inputs: Vec<DVec<T>> = prev.u_sequence[1..].to_vec();
    inputs.push(u_n);
    let mut states: Vec<DVec<T>> = prev.s_sequence[1..].to_vec();
    states.push(s_next);
    finish(states[0].clone(), inputs, states, PlanSource::Shifted, ctx)
}

/// One receding-horizon step. Each outer pass trains on every candidate
/// start (the measured state and, after the first step, the previous plan's
/// prediction) with shared weights and then consults the gate: the first
/// step accepts the cheaper candidate unconditionally, later steps the
/// cheapest safe candidate whose cost does not exceed the previous one.
/// Passes stop on acceptance, on `Σ‖ΔW‖ ≤ ε_W` or after `ī`; without an
/// accepted candidate the backup plan is applied.
pub fn step_drlpc<T: Real, R: Rng>(
    state: &mut ActorCriticState<T>,
    s_now: &DVec<T>,
    prev: Option<&HorizonPlan<T>>,
    ctx: &LearningContext<T>,
    rng: &mut R,
) -> Result<StepOutcome<T>> {
    let mut starts = vec![(s_now.clone(), PlanSource::Measured)];
    if let Some(p) = prev {
        starts.push((p.s_sequence[1].clone(), PlanSource::Predicted));
    }
    let cheapest = |plans: &[HorizonPlan<T>], ok: &dyn Fn(&HorizonPlan<T>) -> bool| {
        let mut best: Option<usize> = None;
        for (i, p) in plans.iter().enumerate() {
            if ok(p) && best.map_or(true, |b| p.v_b < plans[b].v_b) {
                best = Some(i);
            }
        }
        best
    };
    let mut passes = 0;
    let mut max_eps = 0.0f64;
    let mut plans = Vec::new();
    let mut accepted = None;
    for _ in 0..state.i_bar.max(1) {
        passes += 1;
        let mut dw = 0.0;
        for (s0, _) in &starts {
            let (d, e) = learning_pass(state, s0, ctx, rng)?;
            dw += d;
            max_eps = max_eps.max(e);
        }
        plans = starts.iter().map(|(s0, src)| actor_plan(state, s0, *src, ctx)).collect();
        accepted = match prev {
            None => cheapest(&plans, &|_| true),
            Some(p) => cheapest(&plans, &|c| c.safe && monotonicity_check(c.v_b, p.v_b)),
        };
        if accepted.is_some() || dw <= state.eps_w.f64() {
            break;
        }
    }
    let (plan, branch) = match (accepted, prev) {
        (Some(i), _) => (plans[i].clone(), Branch::Learned),
        (None, None) => (plans[0].clone(), Branch::Learned),
        (None, Some(p)) => {
            let backup = backup_plan(p, ctx);
            if backup.safe {
                (backup, Branch::Backup)
            } else if !p.safe {
                let i = cheapest(&plans, &|c| c.safe).or_else(|| cheapest(&plans, &|_| true)).unwrap_or(0);
                (plans[i].clone(), Branch::Recovery)
            } else {
                return Err(Error::NoSafePolicy);
            }
        }
    };
    let u_tube = &plan.u_sequence[0] + &ctx.k * (s_now - &plan.s_hat0);
    let (u, saturated) = clamp_to_box(&u_tube, &ctx.input_box.0, &ctx.input_box.1);
    Ok(StepOutcome { u, saturated, plan, branch, passes, max_actor_residual: max_eps })
}

/// Sufficient condition for recursive feasibility under imperfect learning:
/// `√N ‖Σ_{j<N} AʲB‖ η_a ≤ (1 − ϱ) / σ_max(Z̄ / ϱ_L)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeasibilityMargin {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `eta_a` bounds the input error `‖û − u*‖`; `terminal_shape` is the
/// normalized terminal matrix `Z̄ / level`.
pub fn feasibility_margin<T: Real>(a: &DMat<T>, b: &DMat<T>, horizon: usize, eta_a: T, varrho: T, terminal_shape: &DMat<T>) -> FeasibilityMargin {
    let mut acc = DMat::zeros(a.nrows(), b.ncols());
    let mut pow_b = b.clone();
    for _ in 0..horizon {
        acc += &pow_b;
        pow_b = a * pow_b;
    }
    let lhs = T::lit(horizon as f64).sqrt() * sigma_max(&acc) * eta_a;
    let rhs = (T::one() - varrho) / sigma_max(terminal_shape);
    FeasibilityMargin { lhs: lhs.f64(), rhs: rhs.f64(), holds: lhs <= rhs }
}
