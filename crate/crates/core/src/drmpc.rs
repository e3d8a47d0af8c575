//! Tube-based robust MPC on the lifted predictor: gain and terminal penalty
//! design, the condensed horizon QP, a barrier-penalized variant, and the
//! tube feedback law.

use crate::barriers::RelaxedBarrier;
use crate::geometry::{Ellipsoid, Polytope, Template};
use crate::koopman::LiftedLinearModel;
use crate::linalg::{dare, dlyap, spectral_radius, sym};
use crate::qp;
use crate::{DMat, DVec, Error, Real, Result};

/// Sets of one tube design: lifted state set, nominal input set, terminal
/// ellipsoid, tube cross-section and its output image.
#[derive(Clone, Debug)]
pub struct TubeSets<T: Real> {
    /// Tightened lifted state set `𝒮`.
    pub state: Polytope<T>,
    /// Tightened nominal input set `Û`.
    pub input: Polytope<T>,
    /// Terminal ellipsoid `𝒮_f`.
    pub terminal: Ellipsoid<T>,
    /// Robust invariant tube cross-section `𝒵` in lifted coordinates.
    pub tube: Polytope<T>,
    /// Output error set `𝒪 ⊇ C𝒵 ⊕ 𝒱` in physical coordinates.
    pub output: Polytope<T>,
}

#[derive(Clone, Debug)]
pub struct ControllerConfig<T: Real> {
    pub q: DMat<T>,
    pub r: DMat<T>,
    /// `CᵀQC`.
    pub qbar: DMat<T>,
    pub horizon: usize,
    pub mu: T,
    pub mu_bar: T,
    pub kappa: T,
    pub k: DMat<T>,
    pub p: DMat<T>,
    pub sets: TubeSets<T>,
}

impl<T: Real> ControllerConfig<T> {
    pub fn f(&self, model: &LiftedLinearModel<T>) -> DMat<T> {
        &model.a + &model.b * &self.k
    }

    pub fn check(&self, model: &LiftedLinearModel<T>) -> Result<()> {
        let nb = model.lifted_dim();
        let m = model.input_dim();
        if self.qbar.shape() != (nb, nb) || self.r.shape() != (m, m) || self.k.shape() != (m, nb) || self.p.shape() != (nb, nb) {
            return Err(Error::Dimension("controller weights disagree with the model".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        Ok(())
    }
}

/// Barriers entering the penalized cost: state set, input set, terminal set.
#[derive(Clone, Debug)]
pub struct StageBarriers<T: Real> {
    pub state: RelaxedBarrier<T>,
    pub input: RelaxedBarrier<T>,
    pub terminal: RelaxedBarrier<T>,
}

impl<T: Real> StageBarriers<T> {
    /// Relaxed re-centered polytope barriers; the terminal barrier is
    /// re-centered and relaxed only on request.
    pub fn new(sets: &TubeSets<T>, kappa: T, relaxed_terminal: bool) -> Result<Self> {
        Ok(StageBarriers {
            state: RelaxedBarrier::polytope(&sets.state, kappa, true, true)?,
            input: RelaxedBarrier::polytope(&sets.input, kappa, true, true)?,
            terminal: RelaxedBarrier::ellipsoid(&sets.terminal, kappa, true, relaxed_terminal)?,
        })
    }

    /// `H = H_s + Kᵀ H_u K`.
    pub fn bound_matrix(&self, k: &DMat<T>) -> DMat<T> {
        let hs = self.state.quadratic_bound().expect("polytope barrier");
        let hu = self.input.quadratic_bound().expect("polytope barrier");
        sym(&(hs + k.transpose() * hu * k))
    }
}

/// LQR gain `K` of the lifted pair; `F = A + BK` is Schur.
pub fn design_feedback_gain<T: Real>(a: &DMat<T>, b: &DMat<T>, qbar: &DMat<T>, r: &DMat<T>) -> Result<DMat<T>> {
    let (_, k) = dare(a, b, qbar, r)?;
    Ok(k)
}

/// `P` with `FᵀPF − P = −(Q̄ + KᵀRK + μH)`.
pub fn terminal_penalty<T: Real>(f: &DMat<T>, qbar: &DMat<T>, r: &DMat<T>, k: &DMat<T>, mu: T, h: &DMat<T>) -> Result<DMat<T>> {
    let rhs = sym(&(qbar + k.transpose() * r * k + h * mu));
    dlyap(f, &rhs)
}

/// `‖FᵀPF − P + Q̄ + KᵀRK + μH‖_F`.
pub fn lyapunov_residual<T: Real>(f: &DMat<T>, p: &DMat<T>, qbar: &DMat<T>, r: &DMat<T>, k: &DMat<T>, mu: T, h: &DMat<T>) -> T {
    (f.transpose() * p * f - p + qbar + k.transpose() * r * k + h * mu).norm()
}

/// Choice of the nominal initial state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialState {
    /// Free `ŝ(k)` with `s(k) − ŝ(k) ∈ 𝒵`.
    Tube,
    /// Best of the fixed candidates `s(k)` and `ŝ(k|k−1)`.
    Candidates,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialSource {
    Free,
    Measured,
    Predicted,
}

#[derive(Clone, Debug)]
pub struct MpcSolution<T: Real> {
    pub s_hat0: DVec<T>,
    pub u_sequence: Vec<DVec<T>>,
    pub s_sequence: Vec<DVec<T>>,
    pub value: T,
    pub source: InitialSource,
}

/// Condensed prediction `ŝᵢ = Φᵢ z + cᵢ` with `z = (ŝ₀?, u₀ … u_{N−1})`.
struct Condensed<T: Real> {
    phi: Vec<DMat<T>>,
    offset: Vec<DVec<T>>,
    /// Column offset of the inputs in `z`.
    u0: usize,
    nz: usize,
}

fn condense<T: Real>(model: &LiftedLinearModel<T>, horizon: usize, s0: Option<&DVec<T>>) -> Condensed<T> {
    let nb = model.lifted_dim();
    let m = model.input_dim();
    let u0 = if s0.is_none() { nb } else { 0 };
    let nz = u0 + horizon * m;
    let mut phi = Vec::with_capacity(horizon + 1);
    let mut offset = Vec::with_capacity(horizon + 1);
    let mut cur = DMat::zeros(nb, nz);
    if s0.is_none() {
        cur.view_mut((0, 0), (nb, nb)).copy_from(&DMat::identity(nb, nb));
    }
    let mut c = s0.cloned().unwrap_or_else(|| DVec::zeros(nb));
    for i in 0..=horizon {
        phi.push(cur.clone());
        offset.push(c.clone());
        if i < horizon {
            let mut next = &model.a * &cur;
            let mut blk = next.view_mut((0, u0 + i * m), (nb, m));
            blk += &model.b;
            cur = next;
            c = &model.a * c;
        }
    }
    Condensed { phi, offset, u0, nz }
}

impl<T: Real> Condensed<T> {
    fn input(&self, z: &DVec<T>, i: usize, m: usize) -> DVec<T> {
        z.rows(self.u0 + i * m, m).into_owned()
    }

    fn states(&self, z: &DVec<T>) -> Vec<DVec<T>> {
        self.phi.iter().zip(&self.offset).map(|(p, c)| p * z + c).collect()
    }

    /// Quadratic cost `½zᵀHz + gᵀz + c` of the stage and terminal weights.
    fn cost(&self, qbar: &DMat<T>, r: &DMat<T>, p: &DMat<T>, m: usize) -> (DMat<T>, DVec<T>, T) {
        let n = self.phi.len() - 1;
        let two = T::lit(2.0);
        let mut h = DMat::zeros(self.nz, self.nz);
        let mut g = DVec::zeros(self.nz);
        let mut c = T::zero();
        for i in 0..=n {
            let w = if i < n { qbar } else { p };
            let pw = self.phi[i].transpose() * w;
            h += &pw * &self.phi[i] * two;
            g += &pw * &self.offset[i] * two;
            c += (w * &self.offset[i]).dot(&self.offset[i]);
        }
        for i in 0..n {
            let mut blk = h.view_mut((self.u0 + i * m, self.u0 + i * m), (m, m));
            blk += r * two;
        }
        (sym(&h), g, c)
    }
}

fn stack<T: Real>(rows: &mut Vec<DVec<T>>, rhs: &mut Vec<T>, g: &DMat<T>, h: &DVec<T>) {
    for i in 0..g.nrows() {
        rows.push(g.row(i).transpose());
        rhs.push(h[i]);
    }
}

const TERMINAL_CUTS: usize = 20;
const TERMINAL_TOL: f64 = 1e-8;

/// Solves the hard-constrained horizon problem for one initial-state
/// parameterization (`s_fixed = None` frees `ŝ₀` inside `s_now ⊖ 𝒵`).
fn solve_one<T: Real>(
    model: &LiftedLinearModel<T>,
    s_now: &DVec<T>,
    s_fixed: Option<&DVec<T>>,
    cfg: &ControllerConfig<T>,
    terminal_dirs: &[DVec<T>],
) -> Result<(DVec<T>, Condensed<T>, T)> {
    let m = model.input_dim();
    let n = cfg.horizon;
    let cond = condense(model, n, s_fixed);
    let (h, g, c0) = cond.cost(&cfg.qbar, &cfg.r, &cfg.p, m);
    let mut rows: Vec<DVec<T>> = Vec::new();
    let mut rhs: Vec<T> = Vec::new();
    let st = &cfg.sets.state;
    for i in 0..n {
        stack(&mut rows, &mut rhs, &(&st.normals * &cond.phi[i]), &(&st.offsets - &st.normals * &cond.offset[i]));
        let mut sel = DMat::zeros(m, cond.nz);
        sel.view_mut((0, cond.u0 + i * m), (m, m)).copy_from(&DMat::identity(m, m));
        stack(&mut rows, &mut rhs, &(&cfg.sets.input.normals * sel), &cfg.sets.input.offsets);
    }
    if s_fixed.is_none() {
        let tube = &cfg.sets.tube;
        let nb = model.lifted_dim();
        let mut sel = DMat::zeros(nb, cond.nz);
        sel.view_mut((0, 0), (nb, nb)).copy_from(&DMat::identity(nb, nb));
        stack(&mut rows, &mut rhs, &(-(&tube.normals * sel)), &(&tube.offsets - &tube.normals * s_now));
    }
    let ell = &cfg.sets.terminal;
    let phi_n = &cond.phi[n];
    let c_n = &cond.offset[n];
    for d in terminal_dirs {
        rows.push(phi_n.transpose() * d);
        rhs.push(ell.support(d)? - d.dot(c_n));
    }
    let mut warm: Option<DVec<T>> = None;
    for _ in 0..TERMINAL_CUTS {
        let a = DMat::from_rows(&rows.iter().map(|r| r.transpose()).collect::<Vec<_>>());
        let b = DVec::from_vec(rhs.clone());
        let sol = qp::solve(&h, &g, &a, &b, warm.as_ref())?;
        let s_n = phi_n * &sol.z + c_n;
        let q = ell.normalized_quad(&s_n);
        if q <= T::one() + T::lit(TERMINAL_TOL) {
            return Ok((sol.z.clone(), cond, sol.objective + c0));
        }
        // Tangent plane at the radial projection of ŝ_N onto the boundary.
        let p = &s_n / q.sqrt();
        let normal = &ell.shape * &p;
        rows.push(phi_n.transpose() * &normal);
        rhs.push(normal.dot(&p) - normal.dot(c_n));
        warm = None;
    }
    Err(Error::MaxIterations("terminal cutting planes"))
}

/// Hard-constrained dr-MPC step.
///
/// `Tube` optimizes `ŝ(k)` freely within `s(k) ⊖ 𝒵`; `Candidates` evaluates
/// `s(k)` and `ŝ(k|k−1)` and keeps the cheaper feasible one (ties to `s(k)`).
pub fn solve_drmpc<T: Real>(
    model: &LiftedLinearModel<T>,
    s_now: &DVec<T>,
    s_hat_prev: Option<&DVec<T>>,
    cfg: &ControllerConfig<T>,
    mode: InitialState,
) -> Result<MpcSolution<T>> {
    cfg.check(model)?;
    if s_now.len() != model.lifted_dim() {
        return Err(Error::Dimension("solve_drmpc state".into()));
    }
    let m = model.input_dim();
    let dirs = Template::<T>::default_for(model.lifted_dim(), 17).dirs;
    let finish = |z: DVec<T>, cond: Condensed<T>, value: T, source| {
        let states = cond.states(&z);
        let inputs = (0..cfg.horizon).map(|i| cond.input(&z, i, m)).collect();
        MpcSolution { s_hat0: states[0].clone(), u_sequence: inputs, s_sequence: states, value, source }
    };
    match mode {
        InitialState::Tube => {
            let (z, cond, v) = solve_one(model, s_now, None, cfg, &dirs)?;
            Ok(finish(z, cond, v, InitialSource::Free))
        }
        InitialState::Candidates => {
            let mut best: Option<MpcSolution<T>> = None;
            let mut last_err = Error::Infeasible;
            let cands: Vec<(&DVec<T>, InitialSource)> = std::iter::once((s_now, InitialSource::Measured))
                .chain(s_hat_prev.map(|p| (p, InitialSource::Predicted)))
                .collect();
            for (s0, source) in cands {
                match solve_one(model, s_now, Some(s0), cfg, &dirs) {
                    Ok((z, cond, v)) => {
                        if best.as_ref().map_or(true, |b| v < b.value) {
                            best = Some(finish(z, cond, v, source));
                        }
                    }
                    Err(e @ (Error::Infeasible | Error::MaxIterations(_))) => last_err = e,
                    Err(e) => return Err(e),
                }
            }
            best.ok_or(last_err)
        }
    }
}

/// Penalized cost `V_b` of a nominal plan: stage costs with state and input
/// barriers plus terminal cost and terminal barrier, all weighted by `μ`.
pub fn penalized_cost<T: Real>(
    states: &[DVec<T>],
    inputs: &[DVec<T>],
    cfg: &ControllerConfig<T>,
    barriers: &StageBarriers<T>,
) -> T {
    let n = inputs.len();
    let mut v = T::zero();
    for i in 0..n {
        v += (&cfg.qbar * &states[i]).dot(&states[i]) + (&cfg.r * &inputs[i]).dot(&inputs[i]);
        if cfg.mu != T::zero() {
            v += cfg.mu * (barriers.state.value(&states[i]) + barriers.input.value(&inputs[i]));
        }
    }
    v += (&cfg.p * &states[n]).dot(&states[n]);
    if cfg.mu != T::zero() {
        v += cfg.mu * barriers.terminal.value(&states[n]);
    }
    v
}

/// Unconstrained damped-Newton minimization of the penalized cost over the
/// inputs from a fixed `ŝ₀`. The terminal barrier should be relaxed so the
/// objective is finite everywhere.
pub fn solve_drmpc_barrier<T: Real>(
    model: &LiftedLinearModel<T>,
    s_hat0: &DVec<T>,
    cfg: &ControllerConfig<T>,
    barriers: &StageBarriers<T>,
) -> Result<MpcSolution<T>> {
    cfg.check(model)?;
    let m = model.input_dim();
    let n = cfg.horizon;
    let cond = condense(model, n, Some(s_hat0));
    let (hq, gq, _) = cond.cost(&cfg.qbar, &cfg.r, &cfg.p, m);
    let objective = |z: &DVec<T>| {
        let states = cond.states(z);
        let inputs: Vec<DVec<T>> = (0..n).map(|i| cond.input(z, i, m)).collect();
        penalized_cost(&states, &inputs, cfg, barriers)
    };
    let mut z = DVec::zeros(cond.nz);
    let mut fz = objective(&z);
    if !fz.is_finite() {
        return Err(Error::BoundaryEvaluation);
    }
    for _ in 0..100 {
        let states = cond.states(&z);
        let mut grad = &hq * &z + &gq;
        let mut hess = hq.clone();
        if cfg.mu != T::zero() {
            for i in 0..=n {
                let bar = if i < n { &barriers.state } else { &barriers.terminal };
                let gi = bar.gradient(&states[i])?;
                let hi = bar.hessian(&states[i])?;
                grad += cond.phi[i].transpose() * gi * cfg.mu;
                hess += cond.phi[i].transpose() * hi * &cond.phi[i] * cfg.mu;
                if i < n {
                    let u = cond.input(&z, i, m);
                    let gu = barriers.input.gradient(&u)? * cfg.mu;
                    let hu = barriers.input.hessian(&u)? * cfg.mu;
                    let o = cond.u0 + i * m;
                    let mut gb = grad.rows_mut(o, m);
                    gb += gu;
                    let mut hb = hess.view_mut((o, o), (m, m));
                    hb += hu;
                }
            }
        }
        if grad.norm() <= T::lit(1e-10) * (T::one() + fz.abs()) {
            break;
        }
        let chol = nalgebra::Cholesky::new(sym(&hess)).ok_or(Error::NoConvergence("barrier Newton Hessian".into()))?;
        let step = -chol.solve(&grad);
        let slope = grad.dot(&step);
        let mut t = T::one();
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &z + &step * t;
            let fc = objective(&cand);
            if fc.is_finite() && fc <= fz + T::lit(1e-4) * t * slope {
                z = cand;
                fz = fc;
                accepted = true;
                break;
            }
            t *= T::lit(0.5);
        }
        if !accepted {
            break;
        }
    }
    let states = cond.states(&z);
    let inputs = (0..n).map(|i| cond.input(&z, i, m)).collect();
    Ok(MpcSolution { s_hat0: s_hat0.clone(), u_sequence: inputs, s_sequence: states, value: fz, source: InitialSource::Measured })
}

/// `u = û° + K(s − ŝ)`.
pub fn tube_control<T: Real>(u_hat0: &DVec<T>, k: &DMat<T>, s_now: &DVec<T>, s_hat0: &DVec<T>) -> DVec<T> {
    u_hat0 + k * (s_now - s_hat0)
}

/// Projects `u` onto the box described by `input_box` (per-axis clamp) and
/// reports whether any component moved.
pub fn clamp_to_box<T: Real>(u: &DVec<T>, lo: &DVec<T>, hi: &DVec<T>) -> (DVec<T>, bool) {
    let mut out = u.clone();
    let mut hit = false;
    for i in 0..u.len() {
        if out[i] > hi[i] {
            out[i] = hi[i];
            hit = true;
        } else if out[i] < lo[i] {
            out[i] = lo[i];
            hit = true;
        }
    }
    (out, hit)
}

/// Finite-horizon LQR by backward Riccati recursion from terminal weight
/// `P`: the gains `K₀ … K_{N−1}` and cost matrices `P₀ … P_N`.
pub fn backward_riccati<T: Real>(
    a: &DMat<T>,
    b: &DMat<T>,
    qbar: &DMat<T>,
    r: &DMat<T>,
    p_terminal: &DMat<T>,
    horizon: usize,
) -> Result<(Vec<DMat<T>>, Vec<DMat<T>>)> {
    let mut ps = vec![p_terminal.clone()];
    let mut ks = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let p = ps.last().unwrap();
        let k = crate::linalg::riccati_gain(a, b, r, p)?;
        let f = a + b * &k;
        let next = sym(&(qbar + k.transpose() * r * &k + f.transpose() * p * f));
        ks.push(k);
        ps.push(next);
    }
    ps.reverse();
    ks.reverse();
    Ok((ks, ps))
}

/// Schur check used by configuration validation.
pub fn is_schur<T: Real>(f: &DMat<T>) -> bool {
    spectral_radius(f) < T::one()
}
