use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::lp::{chebyshev_center, maximize, LpOutcome};
use crate::{DMat, DVec, Error, Real, Result};

/// `{z : Gz ≤ h}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Polytope<T: Real> {
    pub normals: DMat<T>,
    pub offsets: DVec<T>,
    pub empty: bool,
}

impl<T: Real> Polytope<T> {
    pub fn new(normals: DMat<T>, offsets: DVec<T>) -> Self {
        assert_eq!(normals.nrows(), offsets.len(), "one offset per normal");
        Polytope { normals, offsets, empty: false }
    }

    /// Axis-aligned box `lo ≤ z ≤ hi`.
    pub fn from_box(lo: &[T], hi: &[T]) -> Self {
        let n = lo.len();
        let mut g = DMat::zeros(2 * n, n);
        let mut h = DVec::zeros(2 * n);
        for i in 0..n {
            g[(2 * i, i)] = T::one();
            h[2 * i] = hi[i];
            g[(2 * i + 1, i)] = -T::one();
            h[2 * i + 1] = -lo[i];
        }
        Polytope::new(g, h)
    }

    pub fn symmetric_box(r: &[T]) -> Self {
        let lo: Vec<T> = r.iter().map(|&x| -x).collect();
        Polytope::from_box(&lo, r)
    }

    pub fn dim(&self) -> usize {
        self.normals.ncols()
    }

    pub fn len(&self) -> usize {
        self.normals.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.empty
    }

    pub fn contains(&self, z: &DVec<T>, tol: T) -> bool {
        !self.empty && (0..self.len()).all(|i| self.normals.row(i).dot(&z.transpose()) <= self.offsets[i] + tol)
    }

    /// Largest constraint value `max_i (aᵢᵀz − bᵢ)`.
    pub fn max_violation(&self, z: &DVec<T>) -> T {
        (0..self.len()).fold(-T::max_value().unwrap(), |m, i| {
            m.max(self.normals.row(i).dot(&z.transpose()) - self.offsets[i])
        })
    }

    /// Support function `max{dᵀz : z ∈ P}`.
    pub fn support(&self, d: &DVec<T>) -> Result<T> {
        if self.empty {
            return Err(Error::Degenerate("support of an empty polytope".into()));
        }
        match maximize(d, &self.normals, &self.offsets)? {
            LpOutcome::Optimal { value, .. } => Ok(value),
            LpOutcome::Unbounded => Err(Error::Degenerate("unbounded polytope".into())),
            LpOutcome::Infeasible => Err(Error::Degenerate("support of an empty polytope".into())),
        }
    }

    /// Radius of the largest inscribed ball, `None` if infeasible.
    pub fn interior_radius(&self) -> Result<Option<T>> {
        Ok(chebyshev_center(&self.normals, &self.offsets)?.map(|(_, r)| r))
    }

    pub fn intersect(&self, other: &Polytope<T>) -> Polytope<T> {
        assert_eq!(self.dim(), other.dim());
        let mut g = DMat::zeros(self.len() + other.len(), self.dim());
        g.rows_mut(0, self.len()).copy_from(&self.normals);
        g.rows_mut(self.len(), other.len()).copy_from(&other.normals);
        let mut h = DVec::zeros(self.len() + other.len());
        h.rows_mut(0, self.len()).copy_from(&self.offsets);
        h.rows_mut(self.len(), other.len()).copy_from(&other.offsets);
        let mut out = Polytope::new(g, h);
        out.empty = self.empty || other.empty;
        out
    }

    /// `αP` for `α > 0`.
    pub fn scaled(&self, alpha: T) -> Polytope<T> {
        let mut out = Polytope::new(self.normals.clone(), &self.offsets * alpha);
        out.empty = self.empty;
        out
    }

    /// Rows rescaled to unit norm; zero rows are dropped.
    pub fn normalized(&self) -> Polytope<T> {
        let mut rows = Vec::new();
        let mut offs = Vec::new();
        for i in 0..self.len() {
            let nrm = self.normals.row(i).norm();
            if nrm > T::zero() {
                rows.push(self.normals.row(i) / nrm);
                offs.push(self.offsets[i] / nrm);
            }
        }
        let mut out = if rows.is_empty() {
            Polytope::new(DMat::zeros(0, self.dim()), DVec::zeros(0))
        } else {
            Polytope::new(DMat::from_rows(&rows), DVec::from_vec(offs))
        };
        out.empty = self.empty;
        out
    }

    /// Per-coordinate bounds from supports along `±eᵢ`.
    pub fn axis_bounds(&self) -> Result<(DVec<T>, DVec<T>)> {
        let n = self.dim();
        let mut lo = DVec::zeros(n);
        let mut hi = DVec::zeros(n);
        for i in 0..n {
            let mut e = DVec::zeros(n);
            e[i] = T::one();
            hi[i] = self.support(&e)?;
            lo[i] = -self.support(&(-e))?;
        }
        Ok((lo, hi))
    }

    /// Outer approximation of `set` on `dirs`.
    pub fn outer(set: &ConvexSet<T>, dirs: &[DVec<T>]) -> Result<Polytope<T>> {
        let n = set.dim();
        let mut g = DMat::zeros(dirs.len(), n);
        let mut h = DVec::zeros(dirs.len());
        for (i, d) in dirs.iter().enumerate() {
            g.set_row(i, &d.transpose());
            h[i] = set.support(d)?;
        }
        Ok(Polytope::new(g, h))
    }

    /// Uniform samples by rejection from the bounding box.
    pub fn sample_uniform<R: Rng>(&self, rng: &mut R, count: usize) -> Result<Vec<DVec<T>>> {
        let (lo, hi) = self.axis_bounds()?;
        let mut out = Vec::with_capacity(count);
        let mut attempts = 0usize;
        while out.len() < count {
            attempts += 1;
            if attempts > 1000 * count + 1000 {
                return Err(Error::Degenerate("polytope has negligible volume".into()));
            }
            let z = DVec::from_fn(self.dim(), |i, _| lo[i] + (hi[i] - lo[i]) * T::lit(rng.gen::<f64>()));
            if self.contains(&z, T::zero()) {
                out.push(z);
            }
        }
        Ok(out)
    }
}

/// `{z : zᵀZz ≤ level}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ellipsoid<T: Real> {
    pub shape: DMat<T>,
    pub level: T,
}

impl<T: Real> Ellipsoid<T> {
    pub fn new(shape: DMat<T>, level: T) -> Result<Self> {
        if !shape.is_square() {
            return Err(Error::Dimension("ellipsoid shape must be square".into()));
        }
        let asym = (&shape - shape.transpose()).amax();
        if asym > T::lit(1e-12) * shape.amax().max(T::one()) {
            return Err(Error::Degenerate("ellipsoid shape is not symmetric".into()));
        }
        if level <= T::zero() {
            return Err(Error::Degenerate("ellipsoid level must be positive".into()));
        }
        let shape = crate::linalg::sym(&shape);
        if shape.nrows() > 0 && crate::linalg::sym_eig_range(&shape).0 <= T::zero() {
            return Err(Error::Degenerate("ellipsoid shape is not positive definite".into()));
        }
        Ok(Ellipsoid { shape, level })
    }

    pub fn ball(dim: usize, radius: T) -> Self {
        Ellipsoid { shape: DMat::identity(dim, dim), level: radius * radius }
    }

    pub fn dim(&self) -> usize {
        self.shape.nrows()
    }

    /// `zᵀZz / level`; the set is `{q ≤ 1}`.
    pub fn normalized_quad(&self, z: &DVec<T>) -> T {
        (&self.shape * z).dot(z) / self.level
    }

    pub fn contains(&self, z: &DVec<T>, tol: T) -> bool {
        self.normalized_quad(z) <= T::one() + tol
    }

    pub fn support(&self, d: &DVec<T>) -> Result<T> {
        let x = crate::linalg::spd_solve(&self.shape, &DMat::from_column_slice(d.len(), 1, d.as_slice()))?;
        Ok((d.dot(&x.column(0)) * self.level).max(T::zero()).sqrt())
    }

    /// Same set with `level = 1`.
    pub fn unit_level(&self) -> Ellipsoid<T> {
        Ellipsoid { shape: &self.shape / self.level, level: T::one() }
    }

    /// Uniform samples inside the ellipsoid.
    pub fn sample_uniform<R: Rng>(&self, rng: &mut R, count: usize) -> Result<Vec<DVec<T>>> {
        let n = self.dim();
        let l = nalgebra::Cholesky::new(self.shape.clone()).ok_or(Error::RankDeficient)?;
        let lt = l.l().transpose();
        let scale = self.level.sqrt();
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let b = unit_ball_sample::<T, R>(rng, n);
            // zᵀZz = ‖Lᵀz‖², so z = L⁻ᵀ b √level.
            let z = lt.clone().solve_upper_triangular(&(b * scale)).ok_or(Error::RankDeficient)?;
            out.push(z);
        }
        Ok(out)
    }
}

/// Uniform draw from the closed unit ball.
pub fn unit_ball_sample<T: Real, R: Rng>(rng: &mut R, n: usize) -> DVec<T> {
    let g = DVec::from_fn(n, |_, _| T::lit(rng.sample::<f64, _>(StandardNormal)));
    let norm = g.norm();
    let r = T::lit(rng.gen::<f64>().powf(1.0 / n as f64));
    if norm == T::zero() {
        return DVec::zeros(n);
    }
    g * (r / norm)
}

/// Convex sets described by their support functions.
#[derive(Clone, Debug)]
pub enum ConvexSet<T: Real> {
    Polytope(Polytope<T>),
    Ellipsoid(Ellipsoid<T>),
    /// Symmetric box `|zᵢ| ≤ rᵢ`.
    Box(DVec<T>),
    /// Euclidean ball.
    Ball { dim: usize, radius: T },
    /// `{0}`.
    Point(usize),
    Sum(Vec<ConvexSet<T>>),
    /// `{M z : z ∈ set}`.
    Image { map: DMat<T>, set: std::boxed::Box<ConvexSet<T>> },
}

impl<T: Real> ConvexSet<T> {
    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Polytope(p) => p.dim(),
            ConvexSet::Ellipsoid(e) => e.dim(),
            ConvexSet::Box(r) => r.len(),
            ConvexSet::Ball { dim, .. } => *dim,
            ConvexSet::Point(n) => *n,
            ConvexSet::Sum(v) => v.first().map_or(0, |s| s.dim()),
            ConvexSet::Image { map, .. } => map.nrows(),
        }
    }

    pub fn support(&self, d: &DVec<T>) -> Result<T> {
        if d.len() != self.dim() {
            return Err(Error::Dimension(format!("support: direction {} vs set {}", d.len(), self.dim())));
        }
        match self {
            ConvexSet::Polytope(p) => p.support(d),
            ConvexSet::Ellipsoid(e) => e.support(d),
            ConvexSet::Box(r) => Ok(d.iter().zip(r.iter()).fold(T::zero(), |a, (&x, &y)| a + x.abs() * y)),
            ConvexSet::Ball { radius, .. } => Ok(d.norm() * *radius),
            ConvexSet::Point(_) => Ok(T::zero()),
            ConvexSet::Sum(v) => v.iter().try_fold(T::zero(), |a, s| Ok(a + s.support(d)?)),
            ConvexSet::Image { map, set } => set.support(&(map.transpose() * d)),
        }
    }

    /// Draws a point of the set for Monte Carlo checks (uniform for the
    /// primitive sets, sum of draws for composites).
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<DVec<T>> {
        match self {
            ConvexSet::Polytope(p) => Ok(p.sample_uniform(rng, 1)?.remove(0)),
            ConvexSet::Ellipsoid(e) => Ok(e.sample_uniform(rng, 1)?.remove(0)),
            ConvexSet::Box(r) => Ok(DVec::from_fn(r.len(), |i, _| r[i] * T::lit(rng.gen_range(-1.0..=1.0)))),
            ConvexSet::Ball { dim, radius } => Ok(unit_ball_sample::<T, R>(rng, *dim) * *radius),
            ConvexSet::Point(n) => Ok(DVec::zeros(*n)),
            ConvexSet::Sum(v) => {
                let mut acc = DVec::zeros(self.dim());
                for s in v {
                    acc += s.sample(rng)?;
                }
                Ok(acc)
            }
            ConvexSet::Image { map, set } => Ok(map * set.sample(rng)?),
        }
    }

    /// Draws a point on the boundary of each primitive (vertices of boxes,
    /// sphere points of balls); such extreme draws stress invariance checks.
    pub fn sample_extreme<R: Rng>(&self, rng: &mut R) -> Result<DVec<T>> {
        match self {
            ConvexSet::Box(r) => Ok(DVec::from_fn(r.len(), |i, _| if rng.gen::<bool>() { r[i] } else { -r[i] })),
            ConvexSet::Ball { dim, radius } => {
                let g = DVec::<T>::from_fn(*dim, |_, _| T::lit(rng.sample::<f64, _>(StandardNormal)));
                let n = g.norm();
                Ok(if n > T::zero() { g * (*radius / n) } else { g })
            }
            ConvexSet::Sum(v) => {
                let mut acc = DVec::zeros(self.dim());
                for s in v {
                    acc += s.sample_extreme(rng)?;
                }
                Ok(acc)
            }
            ConvexSet::Image { map, set } => Ok(map * set.sample_extreme(rng)?),
            other => other.sample(rng),
        }
    }
}

/// Fixed set of (unit) directions used for outer approximations.
#[derive(Clone, Debug, PartialEq)]
pub struct Template<T: Real> {
    pub dirs: Vec<DVec<T>>,
}

impl<T: Real> Template<T> {
    pub fn dim(&self) -> usize {
        self.dirs.first().map_or(0, |d| d.len())
    }

    /// `±eᵢ` plus `random` seeded unit directions.
    pub fn standard(dim: usize, random: usize, seed: u64) -> Self {
        let mut dirs = Vec::with_capacity(2 * dim + random);
        for i in 0..dim {
            let mut e = DVec::zeros(dim);
            e[i] = T::one();
            dirs.push(e.clone());
            dirs.push(-e);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..random {
            let g = DVec::from_fn(dim, |_, _| T::lit(rng.sample::<f64, _>(StandardNormal)));
            dirs.push(g.normalize());
        }
        Template { dirs }
    }

    /// The default template: `2n` axis directions and `4n` random ones.
    pub fn default_for(dim: usize, seed: u64) -> Self {
        Template::standard(dim, 4 * dim, seed)
    }

    /// `count` equally spaced directions in the plane.
    pub fn circle(count: usize) -> Self {
        let dirs = (0..count)
            .map(|k| {
                let th = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                DVec::from_vec(vec![T::lit(th.cos()), T::lit(th.sin())])
            })
            .collect();
        Template { dirs }
    }

    pub fn from_dirs(dirs: Vec<DVec<T>>) -> Self {
        Template { dirs }
    }

    /// Appends `±d/‖d‖` for each nonzero `d`.
    pub fn with_symmetric(mut self, extra: &[DVec<T>]) -> Self {
        for d in extra {
            let n = d.norm();
            if n > T::zero() {
                self.dirs.push(d / n);
                self.dirs.push(-d / n);
            }
        }
        self
    }
}
