//! Logarithmic barriers for polytopes and ellipsoids, with gradient
//! re-centering and a quadratic relaxation below the margin `κ`.

use crate::geometry::{Ellipsoid, Polytope};
use crate::{DMat, DVec, Error, Real, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum BarrierSet<T: Real> {
    /// Rows normalized to unit length.
    Polytope(Polytope<T>),
    /// `{z : zᵀMz ≤ 1}` with `M = Z/ϱ`.
    Ellipsoid(DMat<T>),
}

/// `B(z) = Σᵢ f(σᵢ(z))` with slack `σᵢ = bᵢ − aᵢᵀz` (polytope) or
/// `σ = 1 − zᵀMz` (ellipsoid), `f = −ln` above `κ` and its quadratic
/// extension below when relaxed. Re-centering subtracts `B̄(0) + ∇B̄(0)ᵀz`.
#[derive(Clone, Debug, PartialEq)]
pub struct RelaxedBarrier<T: Real> {
    pub set: BarrierSet<T>,
    pub kappa: T,
    pub recentered: bool,
    pub relaxed: bool,
    value0: T,
    grad0: DVec<T>,
}

fn infinity<T: Real>() -> T {
    T::from_f64(f64::INFINITY).expect("infinite scalar")
}

impl<T: Real> RelaxedBarrier<T> {
    pub fn polytope(p: &Polytope<T>, kappa: T, recentered: bool, relaxed: bool) -> Result<Self> {
        Self::build(BarrierSet::Polytope(p.normalized()), kappa, recentered, relaxed)
    }

    pub fn ellipsoid(e: &Ellipsoid<T>, kappa: T, recentered: bool, relaxed: bool) -> Result<Self> {
        Self::build(BarrierSet::Ellipsoid(&e.shape / e.level), kappa, recentered, relaxed)
    }

    fn build(set: BarrierSet<T>, kappa: T, recentered: bool, relaxed: bool) -> Result<Self> {
        if kappa <= T::zero() {
            return Err(Error::Config("barrier margin must be positive".into()));
        }
        let dim = match &set {
            BarrierSet::Polytope(p) => p.dim(),
            BarrierSet::Ellipsoid(m) => m.nrows(),
        };
        let mut b = RelaxedBarrier { set, kappa, recentered: false, relaxed, value0: T::zero(), grad0: DVec::zeros(dim) };
        if recentered {
            let z0 = DVec::zeros(dim);
            let v0 = b.value(&z0);
            if !v0.is_finite() {
                return Err(Error::Degenerate("origin is not interior to the barrier set".into()));
            }
            b.grad0 = b.gradient(&z0)?;
            b.value0 = v0;
            b.recentered = true;
        }
        Ok(b)
    }

    pub fn dim(&self) -> usize {
        self.grad0.len()
    }

    /// `(f(σ), f'(σ), f''(σ))`; `None` outside the domain of an unrelaxed
    /// barrier.
    fn branch(&self, sigma: T) -> Option<(T, T, T)> {
        let k = self.kappa;
        if self.relaxed && sigma < k {
            let t = (sigma - k - k) / k;
            let half = T::lit(0.5);
            Some((-k.ln() + half * (t * t - T::one()), (sigma - k - k) / (k * k), T::one() / (k * k)))
        } else if sigma > T::zero() {
            Some((-sigma.ln(), -T::one() / sigma, T::one() / (sigma * sigma)))
        } else {
            None
        }
    }

    /// Value; `+∞` outside the interior when not relaxed.
    pub fn value(&self, z: &DVec<T>) -> T {
        let mut acc = T::zero();
        match &self.set {
            BarrierSet::Polytope(p) => {
                for i in 0..p.len() {
                    let sigma = p.offsets[i] - p.normals.row(i).transpose().dot(z);
                    match self.branch(sigma) {
                        Some((f, _, _)) => acc += f,
                        None => return infinity(),
                    }
                }
            }
            BarrierSet::Ellipsoid(m) => {
                let sigma = T::one() - (m * z).dot(z);
                match self.branch(sigma) {
                    Some((f, _, _)) => acc += f,
                    None => return infinity(),
                }
            }
        }
        acc - self.value0 - self.grad0.dot(z)
    }

    pub fn gradient(&self, z: &DVec<T>) -> Result<DVec<T>> {
        let mut g = DVec::zeros(z.len());
        match &self.set {
            BarrierSet::Polytope(p) => {
                for i in 0..p.len() {
                    let a = p.normals.row(i).transpose();
                    let sigma = p.offsets[i] - a.dot(z);
                    let (_, d1, _) = self.branch(sigma).ok_or(Error::BoundaryEvaluation)?;
                    g -= a * d1;
                }
            }
            BarrierSet::Ellipsoid(m) => {
                let mz = m * z;
                let sigma = T::one() - mz.dot(z);
                let (_, d1, _) = self.branch(sigma).ok_or(Error::BoundaryEvaluation)?;
                g -= mz * (d1 * T::lit(2.0));
            }
        }
        Ok(g - &self.grad0)
    }

    pub fn hessian(&self, z: &DVec<T>) -> Result<DMat<T>> {
        let n = z.len();
        let mut h = DMat::zeros(n, n);
        match &self.set {
            BarrierSet::Polytope(p) => {
                for i in 0..p.len() {
                    let a = p.normals.row(i).transpose();
                    let sigma = p.offsets[i] - a.dot(z);
                    let (_, _, d2) = self.branch(sigma).ok_or(Error::BoundaryEvaluation)?;
                    h.ger(d2, &a, &a, T::one());
                }
            }
            BarrierSet::Ellipsoid(m) => {
                let mz = m * z;
                let sigma = T::one() - mz.dot(z);
                let (_, d1, d2) = self.branch(sigma).ok_or(Error::BoundaryEvaluation)?;
                h.ger(d2 * T::lit(4.0), &mz, &mz, T::one());
                h -= m * (d1 * T::lit(2.0));
            }
        }
        Ok(h)
    }

    /// Quadratic bound matrix of a polytope barrier.
    pub fn quadratic_bound(&self) -> Option<DMat<T>> {
        match &self.set {
            BarrierSet::Polytope(p) => Some(quadratic_upper_bound(p, self.kappa)),
            BarrierSet::Ellipsoid(_) => None,
        }
    }
}

/// `H = κ⁻² Σᵢ aᵢaᵢᵀ`. The re-centered relaxed barrier on the same rows
/// satisfies `B(z) ≤ ½ zᵀHz ≤ zᵀHz` because every branch has `f'' ≤ κ⁻²`.
pub fn quadratic_upper_bound<T: Real>(p: &Polytope<T>, kappa: T) -> DMat<T> {
    let n = p.dim();
    let mut h = DMat::zeros(n, n);
    let w = T::one() / (kappa * kappa);
    for i in 0..p.len() {
        let a = p.normals.row(i).transpose();
        h.ger(w, &a, &a, T::one());
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVec<f64> {
        DVec::from_vec(x.to_vec())
    }

    fn square() -> Polytope<f64> {
        Polytope::symmetric_box(&[2.5, 1.0])
    }

    #[test]
    fn raw_scalar_box_value() {
        let b = RelaxedBarrier::polytope(&Polytope::symmetric_box(&[2.5]), 0.1, false, false).unwrap();
        assert!((b.value(&v(&[0.0])) + 2.0 * 2.5f64.ln()).abs() < 1e-14);
        assert!(b.value(&v(&[2.5])).is_infinite());
        assert_eq!(b.gradient(&v(&[3.0])).unwrap_err(), Error::BoundaryEvaluation);
    }

    #[test]
    fn recentering_zeroes_value_and_gradient() {
        let offset = Polytope::from_box(&[-1.0, -3.0], &[2.0, 0.5]);
        for b in [
            RelaxedBarrier::polytope(&offset, 0.1, true, true).unwrap(),
            RelaxedBarrier::ellipsoid(&Ellipsoid::new(DMat::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]), 0.7).unwrap(), 0.1, true, false)
                .unwrap(),
        ] {
            assert!(b.value(&v(&[0.0, 0.0])).abs() <= 1e-12);
            assert!(b.gradient(&v(&[0.0, 0.0])).unwrap().norm() <= 1e-12);
        }
    }

    #[test]
    fn gradients_and_hessians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = Ellipsoid::new(DMat::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]), 0.7).unwrap();
        let barriers = [
            RelaxedBarrier::polytope(&square(), 0.3, true, true).unwrap(),
            RelaxedBarrier::polytope(&square(), 0.3, true, false).unwrap(),
            RelaxedBarrier::ellipsoid(&e, 0.2, true, false).unwrap(),
            RelaxedBarrier::ellipsoid(&e, 0.2, true, true).unwrap(),
        ];
        for b in &barriers {
            for _ in 0..100 {
                let z = v(&[rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)]);
                let g = b.gradient(&z).unwrap();
                let h = b.hessian(&z).unwrap();
                let eps = 1e-6;
                for i in 0..2 {
                    let mut zp = z.clone();
                    let mut zm = z.clone();
                    zp[i] += eps;
                    zm[i] -= eps;
                    let fd = (b.value(&zp) - b.value(&zm)) / (2.0 * eps);
                    assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1.0));
                    let fdh = (b.gradient(&zp).unwrap() - b.gradient(&zm).unwrap()) / (2.0 * eps);
                    assert!((fdh - h.column(i)).norm() <= 1e-5 * h.norm().max(1.0));
                }
            }
        }
    }

    #[test]
    fn relaxed_branch_is_c1_at_switch() {
        let kappa = 0.1;
        let b = RelaxedBarrier::polytope(&Polytope::symmetric_box(&[1.0]), kappa, true, true).unwrap();
        let z = 1.0 - kappa;
        for h in [1e-9, 1e-10] {
            let l = v(&[z - h]);
            let r = v(&[z + h]);
            assert!((b.value(&l) - b.value(&r)).abs() <= 1e-6);
            assert!((b.gradient(&l).unwrap() - b.gradient(&r).unwrap()).norm() <= 1e-6);
        }
        assert!(b.value(&v(&[5.0])).is_finite());
    }

    #[test]
    fn bound_matrix_formula() {
        let single = Polytope::new(DMat::from_element(1, 1, 1.0), v(&[1.0]));
        assert!((quadratic_upper_bound(&single, 0.1)[(0, 0)] - 100.0).abs() < 1e-10);
        let h1 = quadratic_upper_bound(&square(), 0.1);
        let h2 = quadratic_upper_bound(&square(), 0.2);
        assert!((h1 - h2 * 4.0).norm() < 1e-9);
    }

    #[test]
    fn quadratic_dominance_and_convexity() {
        let b = RelaxedBarrier::polytope(&square(), 0.1, true, true).unwrap();
        let h = b.quadratic_bound().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10_000 {
            let z = v(&[rng.gen_range(-6.0..6.0), rng.gen_range(-3.0..3.0)]);
            assert!(b.value(&z) <= (&h * &z).dot(&z) + 1e-9);
        }
        let raw = RelaxedBarrier::polytope(&square(), 0.1, true, false).unwrap();
        for _ in 0..10_000 {
            let x = v(&[rng.gen_range(-2.49..2.49), rng.gen_range(-0.99..0.99)]);
            let y = v(&[rng.gen_range(-2.49..2.49), rng.gen_range(-0.99..0.99)]);
            let mid = raw.value(&((&x + &y) * 0.5));
            assert!(mid <= 0.5 * (raw.value(&x) + raw.value(&y)) + 1e-12);
            assert!(raw.value(&x) >= -1e-12);
        }
    }
}
