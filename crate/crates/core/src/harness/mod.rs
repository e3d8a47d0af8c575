//! Experiment orchestration: configuration, the offline design pipeline,
//! closed-loop episodes, metrics and multi-seed campaigns.

mod campaign;
mod design;
mod dhp;
mod episode;
mod metrics;

pub use campaign::{campaign, compare, feasibility_calibration, nu_sweep, persistent_learning_campaign, CampaignResult, NuSweepRow, PersistentResult, RunMetrics};
pub use design::{fit_and_validate, lifted_range_box, offline_design, DesignBundle, FitResult};
pub use dhp::{dhp_baseline_step, DhpState};
pub use episode::{run_episode, run_episode_with, Controller, EpisodeTrace, StepBranch, StepRecord, TraceStatus};
pub use metrics::{metrics, Metrics};

use serde::{Deserialize, Serialize};

use crate::drlpc::BasisSpec;
use crate::koopman::LiftingDictionary;
use crate::plants::{PlantSpec, VdpForm};
use crate::{DMat, DVec, Error, Mat64, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlantKind {
    Vdp,
    Pendulum,
    LinearTest,
}

impl std::str::FromStr for PlantKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vdp" => Ok(PlantKind::Vdp),
            "pendulum" => Ok(PlantKind::Pendulum),
            "linear-test" => Ok(PlantKind::LinearTest),
            _ => Err(Error::Config(format!("unknown plant `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    Drlpc,
    Drmpc,
    DhpBaseline,
}

impl ControllerKind {
    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Drlpc => "drlpc",
            ControllerKind::Drmpc => "drmpc",
            ControllerKind::DhpBaseline => "dhp-baseline",
        }
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drlpc" => Ok(ControllerKind::Drlpc),
            "drmpc" => Ok(ControllerKind::Drmpc),
            "dhp-baseline" | "dhp" => Ok(ControllerKind::DhpBaseline),
            _ => Err(Error::Config(format!("unknown controller `{s}`"))),
        }
    }
}

/// Every experiment parameter. Plant-specific defaults come from
/// [`ExperimentConfig::for_plant`]; a TOML file overrides any subset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantKind,
    pub vdp_form: VdpForm,
    pub controller: ControllerKind,
    /// Snapshot count `M`.
    pub snapshots: usize,
    /// Size of each design-region sample (residual fit and validation) as a
    /// share of `snapshots`.
    pub validation_fraction: f64,
    pub theta: f64,
    pub horizon: usize,
    pub n_sim: usize,
    pub seeds: Vec<u64>,
    pub nu: f64,
    /// Diagonal of `Q`.
    pub q: Vec<f64>,
    /// Diagonal of `R`.
    pub r: Vec<f64>,
    pub mu: f64,
    pub mu_bar: f64,
    pub kappa: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Per-step factor on `β` and `γ`, reset at the start of every run.
    pub rate_decay: f64,
    pub eps_w: f64,
    pub i_bar: usize,
    pub weight_init: f64,
    pub runs: usize,
    pub x0: Vec<f64>,
    /// Terminal level fraction `ϱ`.
    pub varrho: f64,
    /// Residual boxes are fitted on `|x| ≤ design_state_scale·x_max`,
    /// `|u| ≤ design_input_scale·u_max`.
    pub design_state_scale: f64,
    pub design_input_scale: f64,
    pub residual_inflation: f64,
    /// Fraction of the disturbance bound `ρ` the tube is designed for.
    pub tube_disturbance_scale: f64,
    pub delta_r: f64,
    pub target_risk: f64,
    /// Gaussian kernels in the pendulum dictionary.
    pub kernels: usize,
    pub dictionary_seed: u64,
    pub design_seed: u64,
    /// Disturbances active in closed loop.
    pub noise: bool,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    plant: Option<PlantKind>,
    vdp_form: Option<VdpForm>,
    controller: Option<ControllerKind>,
    #[serde(alias = "M")]
    snapshots: Option<usize>,
    validation_fraction: Option<f64>,
    theta: Option<f64>,
    #[serde(alias = "N")]
    horizon: Option<usize>,
    #[serde(alias = "N_sim")]
    n_sim: Option<usize>,
    seeds: Option<Vec<u64>>,
    nu: Option<f64>,
    q: Option<Vec<f64>>,
    r: Option<Vec<f64>>,
    mu: Option<f64>,
    mu_bar: Option<f64>,
    kappa: Option<f64>,
    beta: Option<f64>,
    gamma: Option<f64>,
    rate_decay: Option<f64>,
    eps_w: Option<f64>,
    i_bar: Option<usize>,
    weight_init: Option<f64>,
    runs: Option<usize>,
    x0: Option<Vec<f64>>,
    varrho: Option<f64>,
    design_state_scale: Option<f64>,
    design_input_scale: Option<f64>,
    residual_inflation: Option<f64>,
    tube_disturbance_scale: Option<f64>,
    delta_r: Option<f64>,
    target_risk: Option<f64>,
    kernels: Option<usize>,
    dictionary_seed: Option<u64>,
    design_seed: Option<u64>,
    noise: Option<bool>,
}

macro_rules! overlay {
    ($cfg:ident, $file:ident; $($f:ident),*) => {
        $(if let Some(v) = $file.$f { $cfg.$f = v; })*
    };
}

impl ExperimentConfig {
    /// Desk-scale defaults for a plant.
    pub fn for_plant(plant: PlantKind) -> Self {
        let base = ExperimentConfig {
            plant,
            vdp_form: VdpForm::Standard,
            controller: ControllerKind::Drlpc,
            snapshots: 50_000,
            validation_fraction: 0.2,
            theta: 100.0,
            horizon: 10,
            n_sim: 320,
            seeds: (0..10).collect(),
            nu: 0.01,
            q: vec![1.0, 1.0],
            r: vec![0.01],
            mu: 1e-3,
            mu_bar: 1e-3,
            kappa: 0.1,
            beta: 0.01,
            gamma: 0.01,
            rate_decay: 0.999,
            eps_w: 1e-4,
            i_bar: 10,
            weight_init: 0.01,
            runs: 5,
            x0: vec![0.1, -0.1],
            varrho: 0.9,
            design_state_scale: 0.2,
            design_input_scale: 0.1,
            residual_inflation: 0.1,
            tube_disturbance_scale: 1.0,
            delta_r: 0.01,
            target_risk: 0.05,
            kernels: 3,
            dictionary_seed: 7,
            design_seed: 2024,
            noise: true,
        };
        match plant {
            PlantKind::Vdp => base,
            PlantKind::Pendulum => ExperimentConfig {
                snapshots: 10_000,
                theta: 1.0,
                horizon: 20,
                n_sim: 300,
                q: vec![1.0; 4],
                r: vec![0.02],
                x0: vec![0.1, 0.0, 0.0, 0.0],
                ..base
            },
            PlantKind::LinearTest => ExperimentConfig {
                snapshots: 2_000,
                theta: 0.0,
                horizon: 10,
                n_sim: 100,
                r: vec![0.1],
                x0: vec![0.5, -0.5],
                design_state_scale: 1.0,
                design_input_scale: 1.0,
                ..base
            },
        }
    }

    /// Full-scale sample sizes: `M = 4·10⁵` (Van der Pol) or `2·10⁴`
    /// (pendulum) and 50 seeds.
    pub fn full_scale(mut self) -> Self {
        self.snapshots = match self.plant {
            PlantKind::Vdp => 400_000,
            PlantKind::Pendulum => 20_000,
            PlantKind::LinearTest => self.snapshots,
        };
        self.seeds = (0..50).collect();
        self
    }

    /// Parses a TOML file over the defaults of its `plant` (or of
    /// `default_plant` when the file names none). Unknown keys are rejected.
    pub fn from_toml(text: &str, default_plant: PlantKind) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg = ExperimentConfig::for_plant(file.plant.unwrap_or(default_plant));
        overlay!(cfg, file; vdp_form, controller, snapshots, validation_fraction, theta, horizon, n_sim, seeds, nu, q, r,
            mu, mu_bar, kappa, beta, gamma, rate_decay, eps_w, i_bar, weight_init, runs, x0, varrho, design_state_scale,
            design_input_scale, residual_inflation, tube_disturbance_scale, delta_r, target_risk, kernels, dictionary_seed, design_seed, noise);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let plant = self.plant_spec();
        let pos = [
            ("snapshots", self.snapshots as f64),
            ("horizon", self.horizon as f64),
            ("n_sim", self.n_sim as f64),
            ("kappa", self.kappa),
            ("runs", self.runs as f64),
            ("i_bar", self.i_bar as f64),
            ("design_state_scale", self.design_state_scale),
            ("design_input_scale", self.design_input_scale),
        ];
        for (name, v) in pos {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let nonneg = [
            ("theta", self.theta),
            ("nu", self.nu),
            ("mu", self.mu),
            ("mu_bar", self.mu_bar),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("eps_w", self.eps_w),
            ("weight_init", self.weight_init),
            ("residual_inflation", self.residual_inflation),
            ("tube_disturbance_scale", self.tube_disturbance_scale),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) {
                return Err(Error::Config(format!("{name} must be nonnegative")));
            }
        }
        if !(self.rate_decay > 0.0 && self.rate_decay <= 1.0) {
            return Err(Error::Config("rate_decay must lie in (0, 1]".into()));
        }
        if !(self.varrho > 0.0 && self.varrho <= 1.0) {
            return Err(Error::Config("varrho must lie in (0, 1]".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config("validation_fraction must lie in (0, 1)".into()));
        }
        if self.q.len() != plant.state_dim || self.q.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Config(format!("q needs {} nonnegative entries", plant.state_dim)));
        }
        if self.r.len() != plant.input_dim || self.r.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config(format!("r needs {} positive entries", plant.input_dim)));
        }
        if self.x0.len() != plant.state_dim {
            return Err(Error::Config(format!("x0 needs {} entries", plant.state_dim)));
        }
        if !plant.state_box.contains(&DVec::from_vec(self.x0.clone()), 0.0) {
            return Err(Error::Config("x0 lies outside the state constraints".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be nonempty".into()));
        }
        if self.plant == PlantKind::Pendulum && self.kernels < 2 {
            return Err(Error::Config("the pendulum dictionary needs at least two kernels".into()));
        }
        Ok(())
    }

    pub fn plant_spec(&self) -> PlantSpec<f64> {
        match self.plant {
            PlantKind::Vdp => PlantSpec::van_der_pol(self.vdp_form),
            PlantKind::Pendulum => PlantSpec::pendulum(),
            PlantKind::LinearTest => linear_test_plant(),
        }
    }

    pub fn dictionary(&self) -> Result<LiftingDictionary<f64>> {
        match self.plant {
            PlantKind::Vdp => Ok(LiftingDictionary::van_der_pol()),
            PlantKind::Pendulum => LiftingDictionary::gaussian(&[0.25, 2.0, 1.0, 2.0], self.kernels, self.dictionary_seed),
            PlantKind::LinearTest => Ok(LiftingDictionary::Identity { dim: 2 }),
        }
    }

    pub fn q_matrix(&self) -> Mat64 {
        DMat::from_diagonal(&DVec::from_vec(self.q.clone()))
    }

    pub fn r_matrix(&self) -> Mat64 {
        DMat::from_diagonal(&DVec::from_vec(self.r.clone()))
    }

    pub fn basis(&self, lifted_dim: usize) -> BasisSpec<f64> {
        BasisSpec { lifted_dim, nu: self.nu }
    }
}

/// Lightly damped oscillator `ẍ = −x − 0.5ẋ + u` sampled at 0.1 s, with
/// `|xᵢ| ≤ 2`, `|u| ≤ 2` and disturbance bound 0.05.
pub fn linear_test_plant() -> PlantSpec<f64> {
    PlantSpec::linear(
        DMat::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.5]),
        DMat::from_row_slice(2, 1, &[0.0, 1.0]),
        0.1,
        0.05,
        &[2.0, 2.0],
        &[2.0],
    )
    .expect("static plant")
}

