use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dhp::{dhp_baseline_step, DhpState};
use super::{ControllerKind, DesignBundle, ExperimentConfig};
use crate::drlpc::{step_drlpc, ActorCriticState, Branch, HorizonPlan, LearningContext};
use crate::drmpc::{clamp_to_box, solve_drmpc, ControllerConfig, InitialState, MpcSolution};
use crate::koopman::lift;
use crate::plants::{sample_disturbance, step_discrete, PlantSpec};
use crate::{Error, LiftedModel64, Mat64, Result, Vec64};

/// Random streams of one episode, all derived from its seed.
const STREAM_DISTURBANCE: u64 = 1;
const STREAM_WEIGHTS: u64 = 2;
const STREAM_TERMINAL: u64 = 3;

/// Threshold on `‖x‖∞` past which an episode counts as diverged.
const BLOWUP: f64 = 1e6;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepBranch {
    Learned,
    Backup,
    Recovery,
    /// Tube MPC solution or its shifted fallback.
    Qp,
    Shifted,
    Baseline,
}

impl StepBranch {
    pub fn name(self) -> &'static str {
        match self {
            StepBranch::Learned => "learned",
            StepBranch::Backup => "backup",
            StepBranch::Recovery => "recovery",
            StepBranch::Qp => "qp",
            StepBranch::Shifted => "shifted",
            StepBranch::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for StepBranch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [StepBranch::Learned, StepBranch::Backup, StepBranch::Recovery, StepBranch::Qp, StepBranch::Shifted, StepBranch::Baseline]
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown branch {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    /// Cost of the applied plan (`NaN` for the baseline).
    pub v_b: f64,
    pub branch: StepBranch,
    /// Applied plan passed the safety check.
    pub safe: bool,
    /// Clamping to `𝒰` changed the input.
    pub saturated: bool,
    /// `x(k) ∉ 𝒳`.
    pub violation: bool,
    pub step_time_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceStatus {
    Success,
    ConstraintViolation,
    Divergence,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub seed: u64,
    pub controller: ControllerKind,
    pub steps: Vec<StepRecord>,
    pub status: TraceStatus,
    /// `NoSafePolicy` raised by the gate.
    pub no_safe_policy: bool,
    /// Largest actor residual `‖ε_a‖` per step (learning controller only).
    pub actor_residuals: Vec<f64>,
}

impl EpisodeTrace {
    pub fn success(&self) -> bool {
        self.status == TraceStatus::Success
    }

    /// Equality of everything except wall-clock times.
    pub fn same_trajectory(&self, other: &EpisodeTrace) -> bool {
        self.status == other.status
            && self.steps.len() == other.steps.len()
            && self.steps.iter().zip(&other.steps).all(|(a, b)| {
                a.k == b.k
                    && a.x == b.x
                    && a.u == b.u
                    && (a.v_b == b.v_b || (a.v_b.is_nan() && b.v_b.is_nan()))
                    && a.branch == b.branch
                    && a.safe == b.safe
                    && a.violation == b.violation
            })
    }

    pub fn mean_step_time(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| s.step_time_s).sum::<f64>() / self.steps.len() as f64
    }
}

struct Decision {
    u: Vec64,
    v_b: f64,
    branch: StepBranch,
    safe: bool,
    saturated: bool,
    actor_residual: Option<f64>,
}

/// A controller instance; state mutates every step.
pub enum Controller {
    Drlpc {
        weights: ActorCriticState<f64>,
        ctx: Box<LearningContext<f64>>,
        prev: Option<HorizonPlan<f64>>,
        rng: ChaCha8Rng,
        rates: (f64, f64),
        decay: f64,
    },
    Drmpc {
        model: Box<LiftedModel64>,
        cfg: Box<ControllerConfig<f64>>,
        input_box: (Vec64, Vec64),
        prev: Option<(MpcSolution<f64>, usize)>,
    },
    Dhp { state: DhpState, spec: Box<PlantSpec<f64>>, q: Mat64, r: Mat64 },
}

impl Controller {
    /// Fresh controller; `weights` carries a learner across runs.
    pub fn new(
        kind: ControllerKind,
        bundle: &DesignBundle,
        cfg: &ExperimentConfig,
        seed: u64,
        weights: Option<(Mat64, Mat64)>,
    ) -> Result<Self> {
        let spec = cfg.plant_spec();
        let nb = bundle.model.lifted_dim();
        let m = bundle.model.input_dim();
        let mut wrng = stream(seed, STREAM_WEIGHTS);
        match kind {
            ControllerKind::Drlpc => {
                let basis = cfg.basis(nb);
                let mut st = match weights {
                    Some((w_c, w_a)) => {
                        if w_c.shape() != (basis.len(), nb) || w_a.shape() != (basis.len(), m) {
                            return Err(Error::Dimension("carried weights disagree with the basis".into()));
                        }
                        ActorCriticState::with_weights(basis, w_c, w_a)
                    }
                    None => ActorCriticState::random(basis, m, cfg.weight_init, &mut wrng),
                };
                st.beta = cfg.beta;
                st.gamma = cfg.gamma;
                st.eps_w = cfg.eps_w;
                st.i_bar = cfg.i_bar;
                let ctx =
                    LearningContext::new(&bundle.model, &bundle.lpc_config(cfg.mu_bar), &bundle.costates, &spec.input_box, true)?;
                Ok(Controller::Drlpc {
                    weights: st,
                    ctx: Box::new(ctx),
                    prev: None,
                    rng: stream(seed, STREAM_TERMINAL),
                    rates: (cfg.beta, cfg.gamma),
                    decay: cfg.rate_decay,
                })
            }
            ControllerKind::Drmpc => Ok(Controller::Drmpc {
                model: Box::new(bundle.model.clone()),
                cfg: Box::new(bundle.mpc_config()),
                input_box: spec.input_box.axis_bounds()?,
                prev: None,
            }),
            ControllerKind::DhpBaseline => {
                let state = match weights {
                    Some((w_c, w_a)) => DhpState::with_weights(w_c, w_a, cfg.beta, cfg.gamma),
                    None => DhpState::random(&bundle.model.dictionary, m, cfg.weight_init, cfg.beta, cfg.gamma, &mut wrng),
                };
                Ok(Controller::Dhp { state, spec: Box::new(spec), q: cfg.q_matrix(), r: cfg.r_matrix() })
            }
        }
    }

    /// Learned weights `(W_c, W_a)`, if any.
    pub fn weights(&self) -> Option<(Mat64, Mat64)> {
        match self {
            Controller::Drlpc { weights, .. } => Some((weights.w_c.clone(), weights.w_a.clone())),
            Controller::Dhp { state, .. } => Some((state.w_c.clone(), state.w_a.clone())),
            Controller::Drmpc { .. } => None,
        }
    }

    /// Replaces the learned weights; shapes must match the current ones.
    pub fn set_weights(&mut self, w_c: Mat64, w_a: Mat64) -> Result<()> {
        let (c, a) = match self {
            Controller::Drlpc { weights, .. } => (&mut weights.w_c, &mut weights.w_a),
            Controller::Dhp { state, .. } => (&mut state.w_c, &mut state.w_a),
            Controller::Drmpc { .. } => return Err(Error::Config("tube MPC has no learned weights".into())),
        };
        if c.shape() != w_c.shape() || a.shape() != w_a.shape() {
            return Err(Error::Dimension("replacement weights".into()));
        }
        *c = w_c;
        *a = w_a;
        Ok(())
    }

    fn step(&mut self, x: &Vec64, bundle: &DesignBundle) -> Result<Decision> {
        match self {
            Controller::Drlpc { weights, ctx, prev, rng, decay, .. } => {
                let s = lift(x, &bundle.model.dictionary)?;
                let out = step_drlpc(weights, &s, prev.as_ref(), ctx, rng)?;
                weights.beta *= *decay;
                weights.gamma *= *decay;
                let branch = match out.branch {
                    Branch::Learned => StepBranch::Learned,
                    Branch::Backup => StepBranch::Backup,
                    Branch::Recovery => StepBranch::Recovery,
                };
                let d = Decision {
                    u: out.u.clone(),
                    v_b: out.plan.v_b,
                    branch,
                    safe: out.plan.safe,
                    saturated: out.saturated,
                    actor_residual: Some(out.max_actor_residual),
                };
                *prev = Some(out.plan);
                Ok(d)
            }
            Controller::Drmpc { model, cfg, input_box, prev } => {
                let s = lift(x, &model.dictionary)?;
                let predicted = prev.as_ref().filter(|(_, shift)| *shift == 0).map(|(sol, _)| sol.s_sequence[1].clone());
                let (u_tube, v_b, branch, safe) = match solve_drmpc(model, &s, predicted.as_ref(), cfg, InitialState::Candidates) {
                    Ok(sol) => {
                        let u = &sol.u_sequence[0] + &cfg.k * (&s - &sol.s_hat0);
                        let v = sol.value;
                        *prev = Some((sol, 0));
                        (u, v, StepBranch::Qp, true)
                    }
                    Err(Error::Infeasible | Error::MaxIterations(_)) => {
                        let (sol, shift) = prev.as_mut().ok_or(Error::Infeasible)?;
                        *shift += 1;
                        let i = *shift;
                        let n = sol.u_sequence.len();
                        let (u_hat, s_hat) = if i < n {
                            (sol.u_sequence[i].clone(), sol.s_sequence[i].clone())
                        } else {
                            let mut s_hat = sol.s_sequence[n].clone();
                            for _ in n..i {
                                s_hat = &model.a * &s_hat + &model.b * (&cfg.k * &s_hat);
                            }
                            (&cfg.k * &s_hat, s_hat)
                        };
                        (u_hat + &cfg.k * (&s - &s_hat), f64::NAN, StepBranch::Shifted, false)
                    }
                    Err(e) => return Err(e),
                };
                let (u, saturated) = clamp_to_box(&u_tube, &input_box.0, &input_box.1);
                Ok(Decision { u, v_b, branch, safe, saturated, actor_residual: None })
            }
            Controller::Dhp { state, spec, q, r } => {
                let (u_raw, _) = dhp_baseline_step(state, x, spec, &bundle.model.dictionary, q, r)?;
                let (lo, hi) = spec.input_box.axis_bounds()?;
                let (u, saturated) = clamp_to_box(&u_raw, &lo, &hi);
                Ok(Decision { u, v_b: f64::NAN, branch: StepBranch::Baseline, safe: true, saturated, actor_residual: None })
            }
        }
    }
}

/// Closed loop of the plant and `cfg.controller` from `x0`, with
/// disturbances drawn from `seed`.
pub fn run_episode(bundle: &DesignBundle, cfg: &ExperimentConfig, x0: &Vec64, seed: u64) -> Result<EpisodeTrace> {
    let mut ctrl = Controller::new(cfg.controller, bundle, cfg, seed, None)?;
    run_episode_with(&mut ctrl, bundle, cfg, x0, seed)
}

/// [`run_episode`] with a caller-owned controller, so learned weights can be
/// carried to the next run.
pub fn run_episode_with(
    ctrl: &mut Controller,
    bundle: &DesignBundle,
    cfg: &ExperimentConfig,
    x0: &Vec64,
    seed: u64,
) -> Result<EpisodeTrace> {
    let spec = cfg.plant_spec();
    if x0.len() != spec.state_dim {
        return Err(Error::Dimension("initial state".into()));
    }
    if !spec.state_box.contains(x0, 0.0) {
        return Err(Error::Config("initial state lies outside the state constraints".into()));
    }
    let kind = match ctrl {
        Controller::Drlpc { .. } => ControllerKind::Drlpc,
        Controller::Drmpc { .. } => ControllerKind::Drmpc,
        Controller::Dhp { .. } => ControllerKind::DhpBaseline,
    };
    if let Controller::Drlpc { weights, rates, prev, .. } = ctrl {
        weights.beta = rates.0;
        weights.gamma = rates.1;
        *prev = None;
    }
    let mut drng = stream(seed, STREAM_DISTURBANCE);
    let mut x = x0.clone();
    let mut steps = Vec::with_capacity(cfg.n_sim);
    let mut status = TraceStatus::Success;
    let mut no_safe_policy = false;
    let mut actor_residuals = Vec::new();
    let zero_w = Vec64::zeros(spec.disturbance_dim());
    for k in 0..cfg.n_sim {
        let violation = !spec.state_box.contains(&x, 1e-9);
        if violation {
            status = TraceStatus::ConstraintViolation;
        }
        let t0 = Instant::now();
        let decision = match ctrl.step(&x, bundle) {
            Ok(d) => d,
            Err(e @ (Error::DivergenceDetected(_) | Error::NoSafePolicy | Error::Infeasible | Error::BoundaryEvaluation)) => {
                no_safe_policy |= e == Error::NoSafePolicy;
                status = TraceStatus::Divergence;
                break;
            }
            Err(e) => return Err(e),
        };
        let dt = t0.elapsed().as_secs_f64();
        if let Some(r) = decision.actor_residual {
            actor_residuals.push(r);
        }
        steps.push(StepRecord {
            k,
            x: x.iter().copied().collect(),
            u: decision.u.iter().copied().collect(),
            v_b: decision.v_b,
            branch: decision.branch,
            safe: decision.safe,
            saturated: decision.saturated,
            violation,
            step_time_s: dt,
        });
        let w = if cfg.noise { sample_disturbance(&spec, &mut drng) } else { zero_w.clone() };
        x = step_discrete(&spec, &x, &decision.u, &w)?;
        if !x.iter().all(|v| v.is_finite() && v.abs() < BLOWUP) {
            status = TraceStatus::Divergence;
            break;
        }
    }
    Ok(EpisodeTrace { seed, controller: kind, steps, status, no_safe_policy, actor_residuals })
}
