use rand::Rng;

use crate::koopman::{lift, LiftingDictionary};
use crate::plants::{step_discrete, step_jacobians, PlantSpec};
use crate::{DMat, DVec, Error, Mat64, Result, Vec64};

const WEIGHT_CAP: f64 = 1e6;

/// Infinite-horizon incremental DHP on the physical state, with features
/// `Φ(x)`: critic `λ̂ = W_cᵀΦ(x)`, actor `u = W_aᵀΦ(x)`. No horizon, barriers,
/// terminal term or safety gate.
#[derive(Clone, Debug, PartialEq)]
pub struct DhpState {
    /// `n̄ × n`.
    pub w_c: Mat64,
    /// `n̄ × m`.
    pub w_a: Mat64,
    pub beta: f64,
    pub gamma: f64,
}

impl DhpState {
    pub fn random<R: Rng>(dict: &LiftingDictionary<f64>, input_dim: usize, scale: f64, beta: f64, gamma: f64, rng: &mut R) -> Self {
        let nb = dict.lifted_dim();
        let n = dict.state_dim();
        let mut draw = |r: usize, c: usize| DMat::from_fn(r, c, |_, _| scale * rng.gen_range(-1.0..=1.0));
        let w_c = draw(nb, n);
        let w_a = draw(nb, input_dim);
        DhpState { w_c, w_a, beta, gamma }
    }

    pub fn with_weights(w_c: Mat64, w_a: Mat64, beta: f64, gamma: f64) -> Self {
        DhpState { w_c, w_a, beta, gamma }
    }
}

/// Applies `u = W_aᵀΦ(x)`, then makes one normalized critic step toward
/// `λ_d = 2Qx + f_xᵀλ̂(x⁺)` and one actor step toward
/// `u_d = −½R⁻¹f_uᵀλ̂(x⁺)`, with `x⁺` the undisturbed successor. Returns the
/// applied input and the successor.
pub fn dhp_baseline_step(
    state: &mut DhpState,
    x: &Vec64,
    spec: &PlantSpec<f64>,
    dict: &LiftingDictionary<f64>,
    q: &Mat64,
    r: &Mat64,
) -> Result<(Vec64, Vec64)> {
    let h = lift(x, dict)?;
    let u = state.w_a.transpose() * &h;
    let x_next = step_discrete(spec, x, &u, &DVec::zeros(spec.disturbance_dim()))?;
    let (fx, fu) = step_jacobians(spec, x, &u)?;
    let lam_next = state.w_c.transpose() * lift(&x_next, dict)?;
    let hn = h.norm_squared();

    let lam_d = q * x * 2.0 + fx.transpose() * &lam_next;
    let eps_c = lam_d - state.w_c.transpose() * &h;
    state.w_c += &h * eps_c.transpose() * (state.beta / (hn + 1e-8));

    let two_r = r * 2.0;
    let rhs = -(fu.transpose() * &lam_next);
    let u_d = crate::linalg::spd_solve(&two_r, &DMat::from_column_slice(rhs.len(), 1, rhs.as_slice()))?.column(0).into_owned();
    let eps_a = &two_r * (u_d - &u);
    let jn = two_r.norm();
    let grad = -(&h * (two_r.transpose() * eps_a).transpose()) * 2.0;
    state.w_a -= grad * (state.gamma / (2.0 * hn * jn * jn + 1e-8));

    let nc = state.w_c.norm();
    let na = state.w_a.norm();
    if !(nc.is_finite() && na.is_finite()) || nc.max(na) > WEIGHT_CAP {
        return Err(Error::DivergenceDetected(nc.max(na)));
    }
    Ok((u, x_next))
}
