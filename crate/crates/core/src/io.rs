//! Structured-text artifacts: matrices as dimensions plus row-major entries
//! inside JSON documents, weight checkpoints, design bundles, per-seed trace
//! CSVs, metrics summaries and long-format plot tables.
//!
//! Floats are written with the shortest representation that parses back to
//! the same bits, so every artifact round-trips exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::drlpc::{ActorCriticState, BasisSpec};
use crate::drmpc::TubeSets;
use crate::geometry::{Ellipsoid, Polytope};
use crate::harness::{ControllerKind, DesignBundle, EpisodeTrace, Metrics, StepRecord};
use crate::koopman::{LiftedLinearModel, LiftingDictionary, ResidualReport};
use crate::{DMat, DVec, Error, Mat64, Result, Vec64};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    /// Row-major entries.
    pub data: Vec<f64>,
}

impl MatrixRecord {
    pub fn from_mat(m: &Mat64) -> Self {
        let data = (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)])).collect();
        MatrixRecord { rows: m.nrows(), cols: m.ncols(), data }
    }

    pub fn to_mat(&self) -> Result<Mat64> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Serialization(format!("{}x{} matrix with {} entries", self.rows, self.cols, self.data.len())));
        }
        Ok(DMat::from_row_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DictionaryRecord {
    Identity { dim: usize },
    Polynomial { dim: usize, exponents: Vec<Vec<u32>> },
    GaussianKernel { dim: usize, centers: Vec<Vec<f64>>, width: f64 },
}

impl DictionaryRecord {
    pub fn from_dictionary(d: &LiftingDictionary<f64>) -> Self {
        match d {
            LiftingDictionary::Identity { dim } => DictionaryRecord::Identity { dim: *dim },
            LiftingDictionary::Polynomial { dim, exponents } => DictionaryRecord::Polynomial { dim: *dim, exponents: exponents.clone() },
            LiftingDictionary::GaussianKernel { dim, centers, width } => DictionaryRecord::GaussianKernel {
                dim: *dim,
                centers: centers.iter().map(|c| c.iter().copied().collect()).collect(),
                width: *width,
            },
        }
    }

    pub fn to_dictionary(&self) -> Result<LiftingDictionary<f64>> {
        let d = match self {
            DictionaryRecord::Identity { dim } => LiftingDictionary::Identity { dim: *dim },
            DictionaryRecord::Polynomial { dim, exponents } => LiftingDictionary::Polynomial { dim: *dim, exponents: exponents.clone() },
            DictionaryRecord::GaussianKernel { dim, centers, width } => LiftingDictionary::GaussianKernel {
                dim: *dim,
                centers: centers.iter().map(|c| DVec::from_vec(c.clone())).collect(),
                width: *width,
            },
        };
        d.validate()?;
        Ok(d)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub a: MatrixRecord,
    pub b: MatrixRecord,
    pub c: MatrixRecord,
    pub d: MatrixRecord,
    pub dictionary: DictionaryRecord,
}

impl ModelRecord {
    pub fn from_model(m: &LiftedLinearModel<f64>) -> Self {
        ModelRecord {
            a: MatrixRecord::from_mat(&m.a),
            b: MatrixRecord::from_mat(&m.b),
            c: MatrixRecord::from_mat(&m.c),
            d: MatrixRecord::from_mat(&m.d),
            dictionary: DictionaryRecord::from_dictionary(&m.dictionary),
        }
    }

    pub fn to_model(&self) -> Result<LiftedLinearModel<f64>> {
        Ok(LiftedLinearModel {
            a: self.a.to_mat()?,
            b: self.b.to_mat()?,
            c: self.c.to_mat()?,
            d: self.d.to_mat()?,
            dictionary: self.dictionary.to_dictionary()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolytopeRecord {
    pub normals: MatrixRecord,
    pub offsets: Vec<f64>,
    pub empty: bool,
}

impl PolytopeRecord {
    pub fn from_polytope(p: &Polytope<f64>) -> Self {
        PolytopeRecord { normals: MatrixRecord::from_mat(&p.normals), offsets: p.offsets.iter().copied().collect(), empty: p.empty }
    }

    pub fn to_polytope(&self) -> Result<Polytope<f64>> {
        let normals = self.normals.to_mat()?;
        if normals.nrows() != self.offsets.len() {
            return Err(Error::Serialization("one offset per normal".into()));
        }
        Ok(Polytope { normals, offsets: DVec::from_vec(self.offsets.clone()), empty: self.empty })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidRecord {
    pub shape: MatrixRecord,
    pub level: f64,
}

impl EllipsoidRecord {
    pub fn from_ellipsoid(e: &Ellipsoid<f64>) -> Self {
        EllipsoidRecord { shape: MatrixRecord::from_mat(&e.shape), level: e.level }
    }

    pub fn to_ellipsoid(&self) -> Result<Ellipsoid<f64>> {
        Ellipsoid::new(self.shape.to_mat()?, self.level)
    }
}

/// Actor and critic weights with the basis they were trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightCheckpoint {
    pub lifted_dim: usize,
    pub nu: f64,
    pub w_c: MatrixRecord,
    pub w_a: MatrixRecord,
}

impl WeightCheckpoint {
    pub fn from_state(st: &ActorCriticState<f64>) -> Self {
        Self::from_weights(st.basis.lifted_dim, st.basis.nu, &st.w_c, &st.w_a)
    }

    pub fn from_weights(lifted_dim: usize, nu: f64, w_c: &Mat64, w_a: &Mat64) -> Self {
        WeightCheckpoint { lifted_dim, nu, w_c: MatrixRecord::from_mat(w_c), w_a: MatrixRecord::from_mat(w_a) }
    }

    /// `(W_c, W_a)`.
    pub fn weights(&self) -> Result<(Mat64, Mat64)> {
        Ok((self.w_c.to_mat()?, self.w_a.to_mat()?))
    }

    /// Weights under default rates; the caller sets rates and loop limits.
    pub fn to_state(&self) -> Result<ActorCriticState<f64>> {
        let basis = BasisSpec { lifted_dim: self.lifted_dim, nu: self.nu };
        let w_c = self.w_c.to_mat()?;
        let w_a = self.w_a.to_mat()?;
        if w_c.nrows() != basis.len() || w_a.nrows() != basis.len() || w_c.ncols() != self.lifted_dim {
            return Err(Error::Serialization("checkpoint weights disagree with the basis".into()));
        }
        Ok(ActorCriticState::with_weights(basis, w_c, w_a))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleRecord {
    pub model: ModelRecord,
    pub q: MatrixRecord,
    pub r: MatrixRecord,
    pub qbar: MatrixRecord,
    pub k: MatrixRecord,
    pub p_mpc: MatrixRecord,
    pub p_lpc: MatrixRecord,
    pub h: MatrixRecord,
    pub state_set: PolytopeRecord,
    pub input_set: PolytopeRecord,
    pub terminal_set: EllipsoidRecord,
    pub tube: PolytopeRecord,
    pub output_set: PolytopeRecord,
    pub costates: Vec<EllipsoidRecord>,
    pub w_box: Vec<f64>,
    pub v_box: Vec<f64>,
    pub validation: ResidualReport,
    pub mu: f64,
    pub kappa: f64,
    pub horizon: usize,
    pub varrho: f64,
}

impl BundleRecord {
    pub fn from_bundle(b: &DesignBundle) -> Self {
        let m = MatrixRecord::from_mat;
        BundleRecord {
            model: ModelRecord::from_model(&b.model),
            q: m(&b.q),
            r: m(&b.r),
            qbar: m(&b.qbar),
            k: m(&b.k),
            p_mpc: m(&b.p_mpc),
            p_lpc: m(&b.p_lpc),
            h: m(&b.h),
            state_set: PolytopeRecord::from_polytope(&b.sets.state),
            input_set: PolytopeRecord::from_polytope(&b.sets.input),
            terminal_set: EllipsoidRecord::from_ellipsoid(&b.sets.terminal),
            tube: PolytopeRecord::from_polytope(&b.sets.tube),
            output_set: PolytopeRecord::from_polytope(&b.sets.output),
            costates: b.costates.iter().map(EllipsoidRecord::from_ellipsoid).collect(),
            w_box: b.w_box.iter().copied().collect(),
            v_box: b.v_box.iter().copied().collect(),
            validation: b.validation.clone(),
            mu: b.mu,
            kappa: b.kappa,
            horizon: b.horizon,
            varrho: b.varrho,
        }
    }

    pub fn to_bundle(&self) -> Result<DesignBundle> {
        Ok(DesignBundle {
            model: self.model.to_model()?,
            q: self.q.to_mat()?,
            r: self.r.to_mat()?,
            qbar: self.qbar.to_mat()?,
            k: self.k.to_mat()?,
            p_mpc: self.p_mpc.to_mat()?,
            p_lpc: self.p_lpc.to_mat()?,
            h: self.h.to_mat()?,
            sets: TubeSets {
                state: self.state_set.to_polytope()?,
                input: self.input_set.to_polytope()?,
                terminal: self.terminal_set.to_ellipsoid()?,
                tube: self.tube.to_polytope()?,
                output: self.output_set.to_polytope()?,
            },
            costates: self.costates.iter().map(EllipsoidRecord::to_ellipsoid).collect::<Result<_>>()?,
            w_box: Vec64::from_vec(self.w_box.clone()),
            v_box: Vec64::from_vec(self.v_box.clone()),
            validation: self.validation.clone(),
            mu: self.mu,
            kappa: self.kappa,
            horizon: self.horizon,
            varrho: self.varrho,
        })
    }
}

/// Campaign summary written as `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub controller: ControllerKind,
    pub metrics: Metrics,
    /// Mean step time of this controller over that of the reference
    /// controller, when one was run.
    pub step_time_ratio: Option<f64>,
}

pub fn to_json<S: Serialize>(value: &S) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Serialization(e.to_string()))
}

pub fn from_json<D: DeserializeOwned>(text: &str) -> Result<D> {
    serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    fs::write(path, to_json(value)?)?;
    Ok(())
}

pub fn read_json<D: DeserializeOwned>(path: &Path) -> Result<D> {
    from_json(&fs::read_to_string(path)?)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Serialization(e.to_string())
}

/// `k,x1..xn,u1..um,V_b,branch,safe,violation,step_time_s`.
pub fn trace_header(n: usize, m: usize) -> Vec<String> {
    let mut h = vec!["k".to_string()];
    h.extend((1..=n).map(|i| format!("x{i}")));
    h.extend((1..=m).map(|i| format!("u{i}")));
    h.extend(["V_b", "branch", "safe", "violation", "step_time_s"].map(String::from));
    h
}

/// Writes `trace_<seed>.csv` into `dir`, one row per recorded step.
pub fn write_trace_csv(dir: &Path, trace: &EpisodeTrace) -> Result<PathBuf> {
    let (n, m) = trace.steps.first().map_or((0, 0), |s| (s.x.len(), s.u.len()));
    let path = dir.join(format!("trace_{}.csv", trace.seed));
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(trace_header(n, m)).map_err(csv_err)?;
    for s in &trace.steps {
        let mut row = vec![s.k.to_string()];
        row.extend(s.x.iter().chain(&s.u).map(f64::to_string));
        row.push(s.v_b.to_string());
        row.push(s.branch.name().to_string());
        row.push(s.safe.to_string());
        row.push(s.violation.to_string());
        row.push(s.step_time_s.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(path)
}

fn parse<F: std::str::FromStr>(field: &str) -> Result<F> {
    field.parse().map_err(|_| Error::Serialization(format!("unparsable field {field:?}")))
}

/// Reads a trace CSV back. Saturation is not exported and reads as `false`.
pub fn read_trace_csv(path: &Path) -> Result<Vec<StepRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    let n = header.iter().filter(|h| h.starts_with('x')).count();
    let m = header.iter().filter(|h| h.starts_with('u')).count();
    if header.iter().collect::<Vec<_>>() != trace_header(n, m) {
        return Err(Error::Serialization("unexpected trace header".into()));
    }
    let mut steps = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let f = |i: usize| rec.get(i).ok_or_else(|| Error::Serialization("short trace row".into()));
        let x = (1..=n).map(|i| parse(f(i)?)).collect::<Result<Vec<f64>>>()?;
        let u = (n + 1..=n + m).map(|i| parse(f(i)?)).collect::<Result<Vec<f64>>>()?;
        let o = n + m + 1;
        steps.push(StepRecord {
            k: parse(f(0)?)?,
            x,
            u,
            v_b: parse(f(o)?)?,
            branch: f(o + 1)?.parse()?,
            safe: parse(f(o + 2)?)?,
            saturated: false,
            violation: parse(f(o + 3)?)?,
            step_time_s: parse(f(o + 4)?)?,
        });
    }
    Ok(steps)
}

/// One observation of a plot-ready long table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub series: String,
    pub run: usize,
    pub seed: u64,
    pub k: usize,
    pub variable: String,
    pub value: f64,
}

/// States, inputs and `V_b` of a trace as long rows.
pub fn trace_long_rows(series: &str, run: usize, trace: &EpisodeTrace) -> Vec<LongRow> {
    let mut rows = Vec::new();
    for s in &trace.steps {
        let mut push = |variable: String, value: f64| {
            rows.push(LongRow { series: series.to_string(), run, seed: trace.seed, k: s.k, variable, value })
        };
        for (i, v) in s.x.iter().enumerate() {
            push(format!("x{}", i + 1), *v);
        }
        for (i, v) in s.u.iter().enumerate() {
            push(format!("u{}", i + 1), *v);
        }
        push("V_b".to_string(), s.v_b);
    }
    rows
}

/// Writes `series,run,seed,k,variable,value` rows.
pub fn write_long_csv(path: &Path, rows: &[LongRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_long_csv(path: &Path) -> Result<Vec<LongRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}
