use serde::{Deserialize, Serialize};

use super::EpisodeTrace;
use crate::{Error, Mat64, Result};

/// Averages over successful traces; failed traces only enter the success
/// rate, `jx_all` and the step time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean of `Σ(‖x‖²_Q + ‖u‖²_R)`.
    pub j: Option<f64>,
    /// Mean of `Σ xᵀx`.
    pub jx: Option<f64>,
    /// Mean of `Σ uᵀu`.
    pub ju: Option<f64>,
    /// `Σ xᵀx` averaged over every trace.
    pub jx_all: f64,
    pub success_rate: f64,
    pub successes: usize,
    pub traces: usize,
    pub mean_step_time: f64,
}

fn sums(t: &EpisodeTrace, q: &Mat64, r: &Mat64) -> (f64, f64, f64) {
    let mut j = 0.0;
    let mut jx = 0.0;
    let mut ju = 0.0;
    for s in &t.steps {
        let x = nalgebra::DVector::from_column_slice(&s.x);
        let u = nalgebra::DVector::from_column_slice(&s.u);
        let xx = x.norm_squared();
        let uu = u.norm_squared();
        jx += xx;
        ju += uu;
        j += (q * &x).dot(&x) + (r * &u).dot(&u);
    }
    (j, jx, ju)
}

pub fn metrics(traces: &[EpisodeTrace], q: &Mat64, r: &Mat64) -> Result<Metrics> {
    if traces.is_empty() {
        return Err(Error::Config("metrics need at least one trace".into()));
    }
    let mut acc = (0.0, 0.0, 0.0);
    let mut jx_all = 0.0;
    let mut successes = 0usize;
    let mut steps = 0usize;
    let mut time = 0.0;
    for t in traces {
        let (j, jx, ju) = sums(t, q, r);
        jx_all += jx;
        steps += t.steps.len();
        time += t.steps.iter().map(|s| s.step_time_s).sum::<f64>();
        if t.success() {
            successes += 1;
            acc.0 += j;
            acc.1 += jx;
            acc.2 += ju;
        }
    }
    let avg = |v: f64| (successes > 0).then(|| v / successes as f64);
    Ok(Metrics {
        j: avg(acc.0),
        jx: avg(acc.1),
        ju: avg(acc.2),
        jx_all: jx_all / traces.len() as f64,
        success_rate: successes as f64 / traces.len() as f64,
        successes,
        traces: traces.len(),
        mean_step_time: if steps > 0 { time / steps as f64 } else { 0.0 },
    })
}
