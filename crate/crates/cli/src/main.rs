use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use lpc_core::harness::{
    campaign, compare, feasibility_calibration, fit_and_validate, nu_sweep, offline_design, persistent_learning_campaign, run_episode, ControllerKind,
    DesignBundle, EpisodeTrace, ExperimentConfig, Metrics, PlantKind,
};
use lpc_core::io::{
    read_json, trace_long_rows, write_json, write_long_csv, write_trace_csv, BundleRecord, LongRow, MetricsSummary, ModelRecord,
};
use lpc_core::koopman::ResidualReport;
use lpc_core::Vec64;

#[derive(Parser)]
#[command(name = "lpc", version, about = "Learning predictive control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// vdp, pendulum or linear-test.
    #[arg(long, global = true)]
    plant: Option<String>,
    /// drlpc, drmpc or dhp-baseline.
    #[arg(long, global = true)]
    controller: Option<String>,
    /// Seed of a single episode.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated campaign seeds.
    #[arg(long, global = true, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// TOML file overriding any subset of the configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Full-scale snapshot counts and 50 seeds.
    #[arg(long, global = true)]
    full_scale: bool,
    /// Reuse a bundle written by `design` instead of redesigning.
    #[arg(long, global = true)]
    bundle: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the lifted predictor and certify its residual bounds.
    Fit,
    /// Run the offline design and write the bundle.
    Design,
    /// One closed-loop episode.
    Run,
    /// One episode per seed.
    Campaign,
    /// Learning controller, tube MPC and DHP baseline on the same seeds.
    Compare,
    /// One learning-controller campaign per basis weight.
    SweepNu {
        #[arg(long, value_delimiter = ',', default_value = "0.01,1")]
        nu: Vec<f64>,
    },
    /// Successive runs carrying learned weights forward.
    Persist,
}

#[derive(Serialize)]
struct FitReport {
    model: ModelRecord,
    w_box: Vec<f64>,
    v_box: Vec<f64>,
    validation: ResidualReport,
}

#[derive(Serialize)]
struct SweepRow {
    nu: f64,
    metrics: Metrics,
}

fn config(c: &Common) -> Result<ExperimentConfig> {
    let plant: Option<PlantKind> = c.plant.as_deref().map(str::parse).transpose()?;
    let mut cfg = match &c.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let cfg = ExperimentConfig::from_toml(&text, plant.unwrap_or(PlantKind::Vdp))?;
            if plant.is_some_and(|p| p != cfg.plant) {
                bail!("--plant disagrees with the plant of {}", path.display());
            }
            cfg
        }
        None => ExperimentConfig::for_plant(plant.unwrap_or(PlantKind::Vdp)),
    };
    if c.full_scale {
        cfg = cfg.full_scale();
    }
    if let Some(k) = &c.controller {
        cfg.controller = k.parse()?;
    }
    if let Some(seeds) = &c.seeds {
        cfg.seeds = seeds.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn bundle(c: &Common, cfg: &ExperimentConfig) -> Result<DesignBundle> {
    match &c.bundle {
        Some(path) => Ok(read_json::<BundleRecord>(path)?.to_bundle()?),
        None => Ok(offline_design(cfg)?),
    }
}

fn write_traces(dir: &Path, traces: &[EpisodeTrace]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for t in traces {
        write_trace_csv(dir, t)?;
    }
    Ok(())
}

fn long_rows(series: &str, run: usize, traces: &[EpisodeTrace]) -> Vec<LongRow> {
    traces.iter().flat_map(|t| trace_long_rows(series, run, t)).collect()
}

fn print_metrics(label: &str, m: &Metrics) {
    let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
    println!(
        "{label:<14} J {:>10}  Jx {:>10}  Ju {:>10}  success {}/{}  step {:.3e} s",
        f(m.j),
        f(m.jx),
        f(m.ju),
        m.successes,
        m.traces,
        m.mean_step_time
    );
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let c = &cli.common;
    let mut cfg = config(c)?;
    fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    match &cli.command {
        Command::Fit => {
            let fit = fit_and_validate(&cfg)?;
            let report = FitReport {
                model: ModelRecord::from_model(&fit.model),
                w_box: fit.w_box.iter().copied().collect(),
                v_box: fit.v_box.iter().copied().collect(),
                validation: fit.validation.clone(),
            };
            write_json(&c.out.join("model.json"), &report)?;
            println!("{:#?}", fit.validation);
        }
        Command::Design => {
            let b = offline_design(&cfg)?;
            write_json(&c.out.join("bundle.json"), &BundleRecord::from_bundle(&b))?;
            let (eta, margin) = feasibility_calibration(&b, &cfg)?;
            println!("lifted dim {}  horizon {}", b.model.lifted_dim(), b.horizon);
            println!("feasibility margin at calibrated actor residual {eta:.3e}: {:.3e} <= {:.3e} {}", margin.lhs, margin.rhs, margin.holds);
        }
        Command::Run => {
            let b = bundle(c, &cfg)?;
            let seed = c.seed.or(cfg.seeds.first().copied()).unwrap_or(0);
            let trace = run_episode(&b, &cfg, &Vec64::from_vec(cfg.x0.clone()), seed)?;
            cfg.seeds = vec![seed];
            let m = lpc_core::harness::metrics(std::slice::from_ref(&trace), &cfg.q_matrix(), &cfg.r_matrix())?;
            write_trace_csv(&c.out, &trace)?;
            write_json(&c.out.join("metrics.json"), &MetricsSummary { controller: cfg.controller, metrics: m.clone(), step_time_ratio: None })?;
            println!("status {:?}", trace.status);
            print_metrics(cfg.controller.name(), &m);
        }
        Command::Campaign => {
            let b = bundle(c, &cfg)?;
            let res = campaign(&b, &cfg)?;
            write_traces(&c.out, &res.traces)?;
            write_long_csv(&c.out.join("long.csv"), &long_rows(cfg.controller.name(), 1, &res.traces))?;
            write_json(
                &c.out.join("metrics.json"),
                &MetricsSummary { controller: cfg.controller, metrics: res.metrics.clone(), step_time_ratio: None },
            )?;
            print_metrics(cfg.controller.name(), &res.metrics);
        }
        Command::Compare => {
            let b = bundle(c, &cfg)?;
            let results = compare(&b, &cfg)?;
            let reference = results
                .iter()
                .find(|(k, _)| *k == ControllerKind::Drmpc)
                .map(|(_, r)| r.metrics.mean_step_time)
                .filter(|t| *t > 0.0);
            let mut rows = Vec::new();
            let mut summaries = Vec::new();
            for (kind, res) in &results {
                write_traces(&c.out.join(kind.name()), &res.traces)?;
                rows.extend(long_rows(kind.name(), 1, &res.traces));
                summaries.push(MetricsSummary {
                    controller: *kind,
                    metrics: res.metrics.clone(),
                    step_time_ratio: reference.map(|t| res.metrics.mean_step_time / t),
                });
                print_metrics(kind.name(), &res.metrics);
            }
            write_long_csv(&c.out.join("long.csv"), &rows)?;
            write_json(&c.out.join("metrics.json"), &summaries)?;
        }
        Command::SweepNu { nu } => {
            let b = bundle(c, &cfg)?;
            let rows: Vec<SweepRow> = nu_sweep(&b, &cfg, nu)?.into_iter().map(|r| SweepRow { nu: r.nu, metrics: r.metrics }).collect();
            for r in &rows {
                print_metrics(&format!("nu = {}", r.nu), &r.metrics);
            }
            write_json(&c.out.join("metrics.json"), &rows)?;
        }
        Command::Persist => {
            let b = bundle(c, &cfg)?;
            let res = persistent_learning_campaign(&b, &cfg)?;
            let mut rows = Vec::new();
            for (run, traces) in res.traces.iter().enumerate() {
                write_traces(&c.out.join(format!("run{}", run + 1)), traces)?;
                rows.extend(long_rows(cfg.controller.name(), run + 1, traces));
            }
            for r in &res.runs {
                print_metrics(&format!("run {}", r.run), &r.metrics);
            }
            for (seed, ck) in cfg.seeds.iter().zip(&res.checkpoints) {
                write_json(&c.out.join(format!("weights_{seed}.json")), ck)?;
            }
            write_long_csv(&c.out.join("long.csv"), &rows)?;
            write_json(&c.out.join("metrics.json"), &res.runs)?;
        }
    }
    Ok(())
}
