use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::episode::Controller;
use super::{metrics, run_episode, run_episode_with, ControllerKind, DesignBundle, EpisodeTrace, ExperimentConfig, Metrics};
use crate::drlpc::FeasibilityMargin;
use crate::io::{from_json, to_json, WeightCheckpoint};
use crate::{Error, Result, Vec64};

#[derive(Clone, Debug)]
pub struct CampaignResult {
    /// One trace per seed, in seed order.
    pub traces: Vec<EpisodeTrace>,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub run: usize,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuSweepRow {
    pub nu: f64,
    pub metrics: Metrics,
}

#[derive(Clone, Debug)]
pub struct PersistentResult {
    pub runs: Vec<RunMetrics>,
    /// `traces[run][i]` is run `run` of seed `cfg.seeds[i]`.
    pub traces: Vec<Vec<EpisodeTrace>>,
    /// Final weights per seed; empty for tube MPC.
    pub checkpoints: Vec<WeightCheckpoint>,
}

/// Seed of run `run` of a persistent campaign; run 0 uses the base seed.
fn run_seed(seed: u64, run: usize) -> u64 {
    seed.wrapping_add((run as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// One episode per seed of `cfg.seeds`, in parallel, from `cfg.x0`.
pub fn campaign(bundle: &DesignBundle, cfg: &ExperimentConfig) -> Result<CampaignResult> {
    let x0 = Vec64::from_vec(cfg.x0.clone());
    let traces = cfg.seeds.par_iter().map(|&s| run_episode(bundle, cfg, &x0, s)).collect::<Result<Vec<_>>>()?;
    let metrics = metrics(&traces, &cfg.q_matrix(), &cfg.r_matrix())?;
    Ok(CampaignResult { traces, metrics })
}

/// `cfg.runs` successive episodes per seed. Between runs the learned weights
/// pass through a serialized checkpoint and initialize the next run.
pub fn persistent_learning_campaign(bundle: &DesignBundle, cfg: &ExperimentConfig) -> Result<PersistentResult> {
    if cfg.runs == 0 {
        return Err(Error::Config("runs must be positive".into()));
    }
    let x0 = Vec64::from_vec(cfg.x0.clone());
    let per_seed = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut ctrl = Controller::new(cfg.controller, bundle, cfg, seed, None)?;
            let mut traces = Vec::with_capacity(cfg.runs);
            let mut checkpoint = None;
            for run in 0..cfg.runs {
                traces.push(run_episode_with(&mut ctrl, bundle, cfg, &x0, run_seed(seed, run))?);
                if let Some((w_c, w_a)) = ctrl.weights() {
                    let text = to_json(&WeightCheckpoint::from_weights(bundle.model.lifted_dim(), cfg.nu, &w_c, &w_a))?;
                    let loaded: WeightCheckpoint = from_json(&text)?;
                    let (w_c, w_a) = loaded.weights()?;
                    ctrl.set_weights(w_c, w_a)?;
                    checkpoint = Some(loaded);
                }
            }
            Ok((traces, checkpoint))
        })
        .collect::<Result<Vec<_>>>()?;
    let checkpoints = per_seed.iter().filter_map(|(_, c)| c.clone()).collect();
    let per_seed: Vec<Vec<EpisodeTrace>> = per_seed.into_iter().map(|(t, _)| t).collect();
    let q = cfg.q_matrix();
    let r = cfg.r_matrix();
    let mut rows = Vec::with_capacity(cfg.runs);
    let mut by_run = Vec::with_capacity(cfg.runs);
    for run in 0..cfg.runs {
        let traces: Vec<EpisodeTrace> = per_seed.iter().map(|t| t[run].clone()).collect();
        rows.push(RunMetrics { run: run + 1, metrics: metrics(&traces, &q, &r)? });
        by_run.push(traces);
    }
    Ok(PersistentResult { runs: rows, traces: by_run, checkpoints })
}

/// Recursive-feasibility margin with `η_a` calibrated as the largest actor
/// residual over a learning-controller campaign on `cfg.seeds`.
pub fn feasibility_calibration(bundle: &DesignBundle, cfg: &ExperimentConfig) -> Result<(f64, FeasibilityMargin)> {
    let res = campaign(bundle, &ExperimentConfig { controller: ControllerKind::Drlpc, ..cfg.clone() })?;
    let eta = res.traces.iter().flat_map(|t| t.actor_residuals.iter().copied()).fold(0.0, f64::max);
    Ok((eta, bundle.feasibility_margin(eta)))
}

/// One campaign per `ν`, sharing seeds and design.
pub fn nu_sweep(bundle: &DesignBundle, cfg: &ExperimentConfig, nu_values: &[f64]) -> Result<Vec<NuSweepRow>> {
    if nu_values.is_empty() {
        return Err(Error::Config("nu sweep needs at least one value".into()));
    }
    nu_values
        .iter()
        .map(|&nu| {
            let c = ExperimentConfig { nu, controller: ControllerKind::Drlpc, ..cfg.clone() };
            Ok(NuSweepRow { nu, metrics: campaign(bundle, &c)?.metrics })
        })
        .collect()
}

/// Campaigns of the learning controller, tube MPC and the DHP baseline.
pub fn compare(bundle: &DesignBundle, cfg: &ExperimentConfig) -> Result<Vec<(ControllerKind, CampaignResult)>> {
    [ControllerKind::Drlpc, ControllerKind::Drmpc, ControllerKind::DhpBaseline]
        .into_iter()
        .map(|kind| Ok((kind, campaign(bundle, &ExperimentConfig { controller: kind, ..cfg.clone() })?)))
        .collect()
}
