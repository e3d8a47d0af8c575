use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ExperimentConfig;
use crate::drlpc::{feasibility_margin, FeasibilityMargin};
use crate::drmpc::{design_feedback_gain, terminal_penalty, ControllerConfig, StageBarriers, TubeSets};
use crate::geometry::{
    feasible_and_costate_sets, output_preimage, pontryagin_diff, robust_invariant_set, terminal_set, ConvexSet, Polytope,
    RpiOptions, Template,
};
use crate::koopman::{
    collect_snapshots, collect_snapshots_scaled, empirical_residual_boxes, fit_model, lift, validate_residual_bounds, LiftingDictionary, ResidualBound,
    ResidualReport,
};
use crate::linalg::sym;
use crate::{DVec, Ellipsoid64, Error, LiftedModel64, Mat64, Polytope64, Result, Vec64};

/// Everything both controllers consume: the fitted predictor, gains,
/// terminal penalties, tube sets, costate bounds and the residual
/// certificate.
#[derive(Clone, Debug)]
pub struct DesignBundle {
    pub model: LiftedModel64,
    pub q: Mat64,
    pub r: Mat64,
    pub qbar: Mat64,
    pub k: Mat64,
    /// Terminal penalty without barrier bound (`μ = 0`).
    pub p_mpc: Mat64,
    /// Terminal penalty with the barrier bound `μH`.
    pub p_lpc: Mat64,
    /// `H = H_s + KᵀH_uK`.
    pub h: Mat64,
    pub sets: TubeSets<f64>,
    pub costates: Vec<Ellipsoid64>,
    /// Per-component bounds on the lifted residual `w`.
    pub w_box: Vec64,
    /// Per-component bounds on the output residual `v`.
    pub v_box: Vec64,
    pub validation: ResidualReport,
    pub mu: f64,
    pub kappa: f64,
    pub horizon: usize,
    pub varrho: f64,
}

impl DesignBundle {
    /// Hard-constrained tube MPC configuration.
    pub fn mpc_config(&self) -> ControllerConfig<f64> {
        ControllerConfig {
            q: self.q.clone(),
            r: self.r.clone(),
            qbar: self.qbar.clone(),
            horizon: self.horizon,
            mu: 0.0,
            mu_bar: 0.0,
            kappa: self.kappa,
            k: self.k.clone(),
            p: self.p_mpc.clone(),
            sets: self.sets.clone(),
        }
    }

    /// Barrier-penalized configuration of the learning controller.
    pub fn lpc_config(&self, mu_bar: f64) -> ControllerConfig<f64> {
        ControllerConfig { mu: self.mu, mu_bar, p: self.p_lpc.clone(), ..self.mpc_config() }
    }

    pub fn f(&self) -> Mat64 {
        &self.model.a + &self.model.b * &self.k
    }

    /// Recursive-feasibility margin for an actor error bound `eta_a`.
    pub fn feasibility_margin(&self, eta_a: f64) -> FeasibilityMargin {
        let z = &self.sets.terminal.shape / self.sets.terminal.level;
        feasibility_margin(&self.model.a, &self.model.b, self.horizon, eta_a, self.varrho, &z)
    }
}

/// Symmetric box containing `Φ(𝒳)`, from the box corners and uniform samples.
pub fn lifted_range_box(dict: &LiftingDictionary<f64>, state_box: &Polytope64, seed: u64) -> Result<Polytope64> {
    let (lo, hi) = state_box.axis_bounds()?;
    let n = lo.len();
    let mut bound = DVec::zeros(dict.lifted_dim());
    let mut visit = |x: &Vec64| -> Result<()> {
        let s = lift(x, dict)?;
        bound.zip_apply(&s, |b: &mut f64, v: f64| *b = b.max(v.abs()));
        Ok(())
    };
    for corner in 0..(1usize << n) {
        let x = DVec::from_fn(n, |i, _| if corner >> i & 1 == 1 { hi[i] } else { lo[i] });
        visit(&x)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..20_000 {
        let x = DVec::from_fn(n, |i, _| lo[i] + (hi[i] - lo[i]) * rng.gen::<f64>());
        visit(&x)?;
    }
    let r: Vec<f64> = bound.iter().map(|b| b.max(1e-9)).collect();
    Ok(Polytope::symmetric_box(&r))
}

/// Fitted predictor with its residual boxes and their certificate.
#[derive(Clone, Debug)]
pub struct FitResult {
    pub model: LiftedModel64,
    pub w_box: Vec64,
    pub v_box: Vec64,
    pub validation: ResidualReport,
}

/// Fits the predictor, then bounds and certifies its residuals on fresh,
/// independent samples of the design region.
pub fn fit_and_validate(cfg: &ExperimentConfig) -> Result<FitResult> {
    cfg.validate()?;
    let spec = cfg.plant_spec();
    let dict = cfg.dictionary()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.design_seed);
    let train = collect_snapshots(&spec, cfg.snapshots, &mut rng)?;
    let model = fit_model(&train, dict, cfg.theta, true)?;
    let region = ((cfg.snapshots as f64) * cfg.validation_fraction).ceil() as usize;
    let fit_region = collect_snapshots_scaled(&spec, region, cfg.design_state_scale, cfg.design_input_scale, &mut rng)?;
    let hold_region = collect_snapshots_scaled(&spec, region, cfg.design_state_scale, cfg.design_input_scale, &mut rng)?;
    let (w_box, v_box) = empirical_residual_boxes(&model, &fit_region, cfg.residual_inflation)?;
    let validation = validate_residual_bounds(
        &model,
        &hold_region,
        &ResidualBound::Box(w_box.clone()),
        &ResidualBound::Box(v_box.clone()),
        cfg.delta_r,
        cfg.target_risk,
    )?;
    Ok(FitResult { model, w_box, v_box, validation })
}

/// Offline design: fit the predictor, bound and certify its residuals, then
/// build the tube, tightened sets, terminal ingredients and costate bounds.
pub fn offline_design(cfg: &ExperimentConfig) -> Result<DesignBundle> {
    let FitResult { model, w_box, v_box, validation } = fit_and_validate(cfg)?;
    let spec = cfg.plant_spec();
    let dict = model.dictionary.clone();
    let nb = dict.lifted_dim();

    let q = cfg.q_matrix();
    let r = cfg.r_matrix();
    let qbar = sym(&(model.c.transpose() * &q * &model.c));
    let k = design_feedback_gain(&model.a, &model.b, &qbar, &r)?;
    let f = &model.a + &model.b * &k;

    let rho = spec.disturbance_bound * cfg.tube_disturbance_scale;
    let d_set = ConvexSet::Sum(vec![
        ConvexSet::Image { map: model.d.clone(), set: Box::new(ConvexSet::Box(DVec::from_element(spec.disturbance_dim(), rho))) },
        ConvexSet::Box(w_box.clone()),
    ]);
    let template = Template::default_for(nb, cfg.design_seed);
    let tube = robust_invariant_set(&f, &d_set, &RpiOptions { eps: 1e-4, max_iter: 500, template: template.clone() })?;
    let out_template = Template::default_for(spec.state_dim, cfg.design_seed + 1);
    let output_sum = ConvexSet::Sum(vec![
        ConvexSet::Image { map: model.c.clone(), set: Box::new(ConvexSet::Polytope(tube.clone())) },
        ConvexSet::Box(v_box.clone()),
    ]);
    let output = Polytope::outer(&output_sum, &out_template.dirs)?;
    let x_tight = pontryagin_diff(&spec.state_box, &ConvexSet::Polytope(output.clone()))?;
    if x_tight.empty {
        return Err(Error::DesignInfeasible("state set is empty after tightening".into()));
    }
    let range = lifted_range_box(&dict, &spec.state_box, cfg.design_seed + 2)?;
    let state = output_preimage(&model.c, &x_tight)?.intersect(&range);
    let input = pontryagin_diff(&spec.input_box, &ConvexSet::Image { map: k.clone(), set: Box::new(ConvexSet::Polytope(tube.clone())) })?;
    if input.empty {
        return Err(Error::DesignInfeasible("input set is empty after tightening".into()));
    }
    let terminal = terminal_set(&f, &state, &input, &k, cfg.varrho)?;
    let sets = TubeSets { state, input, terminal, tube, output };

    let h = StageBarriers::new(&sets, cfg.kappa, true)?.bound_matrix(&k);
    let p_mpc = terminal_penalty(&f, &qbar, &r, &k, 0.0, &h)?;
    let p_lpc = terminal_penalty(&f, &qbar, &r, &k, cfg.mu, &h)?;
    let costates =
        feasible_and_costate_sets(&model.a, &model.b, &sets.state, &sets.input, &sets.terminal, &p_lpc, &qbar, cfg.horizon, &template)?
            .costates;
    Ok(DesignBundle {
        model,
        q,
        r,
        qbar,
        k,
        p_mpc,
        p_lpc,
        h,
        sets,
        costates,
        w_box,
        v_box,
        validation,
        mu: cfg.mu,
        kappa: cfg.kappa,
        horizon: cfg.horizon,
        varrho: cfg.varrho,
    })
}
