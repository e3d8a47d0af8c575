//! Lifting dictionaries, EDMD regression and residual-bound validation.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::{pinv, spd_solve, sym, sym_eig_range};
use crate::plants::{sample_disturbance, step_discrete, PlantSpec};
use crate::{DMat, DVec, Error, Real, Result};

/// Ordered list of scalar observables `φ₁ … φ_n̄` with `Φ(0) = 0`.
#[derive(Clone, Debug, PartialEq)]
pub enum LiftingDictionary<T: Real> {
    /// `Φ(x) = x`.
    Identity { dim: usize },
    /// Monomials `Πⱼ xⱼ^{eⱼ}`, one exponent vector per observable. No
    /// exponent vector may be all zeros.
    Polynomial { dim: usize, exponents: Vec<Vec<u32>> },
    /// The state itself followed by Gaussian bumps
    /// `exp(−‖x − c‖² / 2w²) − exp(−‖c‖² / 2w²)`.
    GaussianKernel { dim: usize, centers: Vec<DVec<T>>, width: T },
}

impl<T: Real> LiftingDictionary<T> {
    /// `(x₁, x₂, x₁², x₁²x₂)`.
    pub fn van_der_pol() -> Self {
        LiftingDictionary::Polynomial { dim: 2, exponents: vec![vec![1, 0], vec![0, 1], vec![2, 0], vec![2, 1]] }
    }

    /// State plus `count` kernels with centers uniform on the box `|xᵢ| ≤ rᵢ`
    /// and width equal to the median pairwise center distance.
    pub fn gaussian(half_widths: &[T], count: usize, seed: u64) -> Result<Self> {
        if count < 2 {
            return Err(Error::Config("a kernel dictionary needs at least two centers".into()));
        }
        let dim = half_widths.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers: Vec<DVec<T>> = (0..count)
            .map(|_| DVec::from_fn(dim, |i, _| half_widths[i] * T::lit(rng.gen_range(-1.0..=1.0))))
            .collect();
        let mut dists: Vec<f64> = Vec::new();
        for i in 0..count {
            for j in i + 1..count {
                dists.push((&centers[i] - &centers[j]).norm().f64());
            }
        }
        dists.sort_by(|a, b| a.total_cmp(b));
        let mid = dists.len() / 2;
        let median = if dists.len() % 2 == 0 { 0.5 * (dists[mid - 1] + dists[mid]) } else { dists[mid] };
        if median <= 0.0 {
            return Err(Error::Degenerate("coincident kernel centers".into()));
        }
        Ok(LiftingDictionary::GaussianKernel { dim, centers, width: T::lit(median) })
    }

    pub fn state_dim(&self) -> usize {
        match self {
            LiftingDictionary::Identity { dim }
            | LiftingDictionary::Polynomial { dim, .. }
            | LiftingDictionary::GaussianKernel { dim, .. } => *dim,
        }
    }

    pub fn lifted_dim(&self) -> usize {
        match self {
            LiftingDictionary::Identity { dim } => *dim,
            LiftingDictionary::Polynomial { exponents, .. } => exponents.len(),
            LiftingDictionary::GaussianKernel { dim, centers, .. } => dim + centers.len(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LiftingDictionary::Identity { .. } => "identity",
            LiftingDictionary::Polynomial { .. } => "polynomial",
            LiftingDictionary::GaussianKernel { .. } => "gaussian-kernel",
        }
    }

    /// Rejects malformed dictionaries (wrong exponent arity, constant
    /// observables, nonpositive width).
    pub fn validate(&self) -> Result<()> {
        match self {
            LiftingDictionary::Identity { dim } if *dim == 0 => Err(Error::Config("empty dictionary".into())),
            LiftingDictionary::Polynomial { dim, exponents } => {
                if exponents.is_empty() {
                    return Err(Error::Config("empty dictionary".into()));
                }
                for e in exponents {
                    if e.len() != *dim {
                        return Err(Error::Config(format!("exponent vector of length {} for state dimension {dim}", e.len())));
                    }
                    if e.iter().all(|&p| p == 0) {
                        return Err(Error::Config("constant observable violates lift(0) = 0".into()));
                    }
                }
                Ok(())
            }
            LiftingDictionary::GaussianKernel { dim, centers, width } => {
                if *width <= T::zero() || centers.iter().any(|c| c.len() != *dim) {
                    return Err(Error::Config("invalid kernel dictionary".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// `Φ(x)`.
pub fn lift<T: Real>(x: &DVec<T>, dict: &LiftingDictionary<T>) -> Result<DVec<T>> {
    if x.len() != dict.state_dim() {
        return Err(Error::Dimension(format!("lift: state {} vs dictionary {}", x.len(), dict.state_dim())));
    }
    Ok(match dict {
        LiftingDictionary::Identity { .. } => x.clone(),
        LiftingDictionary::Polynomial { exponents, .. } => DVec::from_iterator(
            exponents.len(),
            exponents.iter().map(|e| e.iter().zip(x.iter()).fold(T::one(), |acc, (&p, &xi)| acc * xi.powi(p as i32))),
        ),
        LiftingDictionary::GaussianKernel { dim, centers, width } => {
            let scale = T::lit(-0.5) / (*width * *width);
            let mut out = DVec::zeros(dim + centers.len());
            out.rows_mut(0, *dim).copy_from(x);
            for (i, c) in centers.iter().enumerate() {
                out[dim + i] = ((x - c).norm_squared() * scale).exp() - (c.norm_squared() * scale).exp();
            }
            out
        }
    })
}

/// Lifted predictor `s⁺ = A s + B u + D w_o (+ w)`, `x = C s (+ v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedLinearModel<T: Real> {
    pub a: DMat<T>,
    pub b: DMat<T>,
    pub c: DMat<T>,
    pub d: DMat<T>,
    pub dictionary: LiftingDictionary<T>,
}

impl<T: Real> LiftedLinearModel<T> {
    pub fn lifted_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn state_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Nominal step `A s + B u`.
    pub fn predict(&self, s: &DVec<T>, u: &DVec<T>) -> DVec<T> {
        &self.a * s + &self.b * u
    }

    pub fn check(&self) -> Result<()> {
        let nb = self.dictionary.lifted_dim();
        let ok = self.a.nrows() == nb
            && self.a.ncols() == nb
            && self.b.nrows() == nb
            && self.c.ncols() == nb
            && self.c.nrows() == self.dictionary.state_dim()
            && self.d.nrows() == nb;
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension("lifted model blocks disagree with the dictionary".into()))
        }
    }

    /// `rank(A) = n̄` up to a relative singular-value cutoff.
    pub fn a_full_rank(&self) -> bool {
        crate::geometry::check_invertible(&self.a).is_ok()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot<T: Real> {
    pub x: DVec<T>,
    pub u: DVec<T>,
    pub w: DVec<T>,
    pub x_next: DVec<T>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SnapshotSet<T: Real> {
    pub records: Vec<Snapshot<T>>,
}

impl<T: Real> SnapshotSet<T> {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Splits into the first `fraction` of the records and the rest.
    pub fn split(&self, fraction: f64) -> (SnapshotSet<T>, SnapshotSet<T>) {
        let cut = ((self.len() as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
        (
            SnapshotSet { records: self.records[..cut].to_vec() },
            SnapshotSet { records: self.records[cut..].to_vec() },
        )
    }
}

fn regression_gram<T: Real>(
    data: &SnapshotSet<T>,
    dict: &LiftingDictionary<T>,
    fit_disturbance: bool,
) -> Result<(DMat<T>, DMat<T>, usize, usize, usize)> {
    let first = data.records.first().ok_or_else(|| Error::Config("no snapshots".into()))?;
    let nb = dict.lifted_dim();
    let m = first.u.len();
    let nw = first.w.len();
    let nz = nb + m + if fit_disturbance { nw } else { 0 };
    let mut gram = DMat::zeros(nz, nz);
    let mut cross = DMat::zeros(nb, nz);
    let mut z = DVec::zeros(nz);
    for r in &data.records {
        if r.u.len() != m || r.w.len() != nw {
            return Err(Error::Dimension("inconsistent snapshot dimensions".into()));
        }
        z.rows_mut(0, nb).copy_from(&lift(&r.x, dict)?);
        z.rows_mut(nb, m).copy_from(&r.u);
        if fit_disturbance {
            z.rows_mut(nb + m, nw).copy_from(&r.w);
        }
        let y = lift(&r.x_next, dict)?;
        gram.ger(T::one(), &z, &z, T::one());
        cross.ger(T::one(), &y, &z, T::one());
    }
    Ok((gram, cross, nb, m, nw))
}

/// Ridge EDMD: `𝒦 = argmin Σ‖𝒦 z − Φ(x⁺)‖² + θ‖𝒦‖²` with `z = (Φ(x), u, w_o)`,
/// returned as the blocks `(A, B, D)`. Without `fit_disturbance` the
/// disturbance column is dropped and `D = 0`.
pub fn fit_edmd<T: Real>(
    data: &SnapshotSet<T>,
    dict: &LiftingDictionary<T>,
    theta: T,
    fit_disturbance: bool,
) -> Result<(DMat<T>, DMat<T>, DMat<T>)> {
    if theta < T::zero() {
        return Err(Error::Config("regularization weight must be nonnegative".into()));
    }
    let (mut gram, cross, nb, m, nw) = regression_gram(data, dict, fit_disturbance)?;
    let gram_sym = sym(&gram);
    gram.copy_from(&gram_sym);
    if theta == T::zero() {
        let (lo, hi) = sym_eig_range(&gram);
        if hi <= T::zero() || lo <= hi * T::lit(1e-13) {
            return Err(Error::RankDeficient);
        }
    } else {
        for i in 0..gram.nrows() {
            gram[(i, i)] += theta;
        }
    }
    // 𝒦 G = cross  ⇔  G 𝒦ᵀ = crossᵀ.
    let kt = spd_solve(&gram, &cross.transpose()).map_err(|_| Error::RankDeficient)?;
    let k = kt.transpose();
    let a = k.columns(0, nb).into_owned();
    let b = k.columns(nb, m).into_owned();
    let d = if fit_disturbance { k.columns(nb + m, nw).into_owned() } else { DMat::zeros(nb, nw) };
    Ok((a, b, d))
}

/// Minimum-norm least-squares output map `C = argmin Σ‖C Φ(x) − x‖²`.
pub fn fit_output_map<T: Real>(data: &SnapshotSet<T>, dict: &LiftingDictionary<T>) -> Result<DMat<T>> {
    let nb = dict.lifted_dim();
    let n = dict.state_dim();
    let mut gram = DMat::zeros(nb, nb);
    let mut cross = DMat::zeros(n, nb);
    for r in &data.records {
        let phi = lift(&r.x, dict)?;
        gram.ger(T::one(), &phi, &phi, T::one());
        cross.ger(T::one(), &r.x, &phi, T::one());
    }
    Ok(cross * pinv(&sym(&gram)))
}

/// Fits all four blocks of the lifted predictor.
pub fn fit_model<T: Real>(
    data: &SnapshotSet<T>,
    dict: LiftingDictionary<T>,
    theta: T,
    fit_disturbance: bool,
) -> Result<LiftedLinearModel<T>> {
    dict.validate()?;
    let (a, b, d) = fit_edmd(data, &dict, theta, fit_disturbance)?;
    let c = fit_output_map(data, &dict)?;
    let model = LiftedLinearModel { a, b, c, d, dictionary: dict };
    model.check()?;
    Ok(model)
}

/// Random-restart snapshots with `x` uniform on `scale_x·𝒳` and `u` uniform
/// on `scale_u·𝒰` (both boxes); records with `x⁺ ∉ 𝒳` are discarded.
pub fn collect_snapshots_scaled<T: Real, R: Rng>(
    spec: &PlantSpec<T>,
    count: usize,
    scale_x: T,
    scale_u: T,
    rng: &mut R,
) -> Result<SnapshotSet<T>> {
    let mut records = Vec::with_capacity(count);
    if count == 0 {
        return Ok(SnapshotSet { records });
    }
    let (xlo, xhi) = spec.state_box.axis_bounds()?;
    let (ulo, uhi) = spec.input_box.axis_bounds()?;
    let draw = |lo: &DVec<T>, hi: &DVec<T>, s: T, rng: &mut R| {
        DVec::from_fn(lo.len(), |i, _| {
            let t = T::lit(rng.gen::<f64>());
            s * (lo[i] + (hi[i] - lo[i]) * t)
        })
    };
    let cap = count.saturating_mul(100);
    let mut attempts = 0;
    while records.len() < count {
        if attempts >= cap {
            return Err(Error::CollectionStalled { attempts, accepted: records.len() });
        }
        attempts += 1;
        let x = draw(&xlo, &xhi, scale_x, rng);
        let u = draw(&ulo, &uhi, scale_u, rng);
        let w = sample_disturbance(spec, rng);
        let x_next = step_discrete(spec, &x, &u, &w)?;
        if spec.state_box.contains(&x, T::zero()) && spec.state_box.contains(&x_next, T::zero()) {
            records.push(Snapshot { x, u, w, x_next });
        }
    }
    Ok(SnapshotSet { records })
}

/// Snapshots over the full constraint boxes.
pub fn collect_snapshots<T: Real, R: Rng>(spec: &PlantSpec<T>, count: usize, rng: &mut R) -> Result<SnapshotSet<T>> {
    collect_snapshots_scaled(spec, count, T::one(), T::one(), rng)
}

/// Residual bound: Euclidean ball or per-component box.
#[derive(Clone, Debug, PartialEq)]
pub enum ResidualBound<T: Real> {
    Ball(T),
    Box(DVec<T>),
}

impl<T: Real> ResidualBound<T> {
    pub fn admits(&self, r: &DVec<T>) -> bool {
        match self {
            ResidualBound::Ball(rho) => r.norm() <= *rho,
            ResidualBound::Box(b) => r.iter().zip(b.iter()).all(|(x, y)| x.abs() <= *y),
        }
    }

    pub fn as_set(&self, dim: usize) -> crate::geometry::ConvexSet<T> {
        match self {
            ResidualBound::Ball(r) => crate::geometry::ConvexSet::Ball { dim, radius: *r },
            ResidualBound::Box(b) => crate::geometry::ConvexSet::Box(b.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ResidualReport {
    pub empirical_risk: f64,
    pub epsilon: f64,
    pub confidence: f64,
    pub target_risk: f64,
    pub pass: bool,
    /// Largest Euclidean norms of `w` and `v` over the data.
    pub observed_w: f64,
    pub observed_v: f64,
    pub samples: usize,
}

/// Model residuals `w = Φ(x⁺) − AΦ(x) − Bu − Dw_o` and `v = x − CΦ(x)`.
pub fn residuals<T: Real>(model: &LiftedLinearModel<T>, r: &Snapshot<T>) -> Result<(DVec<T>, DVec<T>)> {
    let s = lift(&r.x, &model.dictionary)?;
    let s_next = lift(&r.x_next, &model.dictionary)?;
    let w = s_next - &model.a * &s - &model.b * &r.u - &model.d * &r.w;
    let v = &r.x - &model.c * s;
    Ok((w, v))
}

/// Hoeffding radius `√(−ln(δ_r/2) / 2M)`.
pub fn hoeffding_epsilon(samples: usize, delta_r: f64) -> Result<f64> {
    if !(delta_r > 0.0 && delta_r < 2.0) {
        return Err(Error::InvalidConfidence(delta_r));
    }
    if samples == 0 {
        return Err(Error::Config("no samples".into()));
    }
    Ok((-(0.5 * delta_r).ln() / (2.0 * samples as f64)).sqrt())
}

/// Statistical certificate that `w ∈ 𝒲` and `v ∈ 𝒱` hold with risk below
/// `target_risk` at confidence `1 − δ_r`.
pub fn validate_residual_bounds<T: Real>(
    model: &LiftedLinearModel<T>,
    data: &SnapshotSet<T>,
    w_bound: &ResidualBound<T>,
    v_bound: &ResidualBound<T>,
    delta_r: f64,
    target_risk: f64,
) -> Result<ResidualReport> {
    let epsilon = hoeffding_epsilon(data.len(), delta_r)?;
    let mut failures = 0usize;
    let mut ow = 0.0f64;
    let mut ov = 0.0f64;
    for r in &data.records {
        let (w, v) = residuals(model, r)?;
        ow = ow.max(w.norm().f64());
        ov = ov.max(v.norm().f64());
        if !(w_bound.admits(&w) && v_bound.admits(&v)) {
            failures += 1;
        }
    }
    let empirical_risk = failures as f64 / data.len() as f64;
    Ok(ResidualReport {
        empirical_risk,
        epsilon,
        confidence: 1.0 - delta_r,
        target_risk,
        pass: target_risk >= empirical_risk + epsilon,
        observed_w: ow,
        observed_v: ov,
        samples: data.len(),
    })
}

/// Per-component maxima `max |wᵢ|`, `max |vᵢ|` inflated by `1 + inflation`.
pub fn empirical_residual_boxes<T: Real>(
    model: &LiftedLinearModel<T>,
    data: &SnapshotSet<T>,
    inflation: T,
) -> Result<(DVec<T>, DVec<T>)> {
    let mut bw = DVec::zeros(model.lifted_dim());
    let mut bv = DVec::zeros(model.state_dim());
    for r in &data.records {
        let (w, v) = residuals(model, r)?;
        bw.zip_apply(&w, |a: &mut T, b: T| *a = a.max(b.abs()));
        bv.zip_apply(&v, |a: &mut T, b: T| *a = a.max(b.abs()));
    }
    let f = T::one() + inflation;
    Ok((bw * f, bv * f))
}
