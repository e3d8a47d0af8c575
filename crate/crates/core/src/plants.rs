//! Benchmark plants, RK4 discretization and bounded disturbances.

use rand::Rng;

use crate::geometry::Polytope;
use crate::{DMat, DVec, Error, Real, Result};

/// Van der Pol drift as printed, with the constant forcing term:
/// `(x₂, 1 − x₁²x₂ − x₁ + u)`.
pub fn vdp_derivative<T: Real>(x: &DVec<T>, u: T) -> DVec<T> {
    DVec::from_vec(vec![x[1], T::one() - x[0] * x[0] * x[1] - x[0] + u])
}

/// Van der Pol oscillator in its unforced form `(x₂, x₂ − x₁²x₂ − x₁ + u)`,
/// for which the origin is an (unstable) equilibrium.
pub fn vdp_standard_derivative<T: Real>(x: &DVec<T>, u: T) -> DVec<T> {
    DVec::from_vec(vec![x[1], x[1] - x[0] * x[0] * x[1] - x[0] + u])
}

pub const PENDULUM_LENGTH: f64 = 0.5;
pub const GRAVITY: f64 = 9.8;

/// Cart-pole pendulum: `(x₂, (3/2l)(g sin x₁ + u cos x₁), x₄, u)`.
pub fn pendulum_derivative<T: Real>(x: &DVec<T>, u: T) -> DVec<T> {
    let c = T::lit(3.0 / (2.0 * PENDULUM_LENGTH));
    let g = T::lit(GRAVITY);
    DVec::from_vec(vec![x[1], c * (g * x[0].sin() + u * x[0].cos()), x[3], u])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VdpForm {
    /// Drift exactly as printed, including the constant `+1`.
    Printed,
    /// Unforced oscillator with origin equilibrium.
    Standard,
}

#[derive(Clone, Debug)]
pub enum Dynamics<T: Real> {
    VanDerPol(VdpForm),
    Pendulum,
    /// `ẋ = A x + B u`.
    Linear { a: DMat<T>, b: DMat<T> },
}

#[derive(Clone, Debug)]
pub struct PlantSpec<T: Real> {
    pub state_dim: usize,
    pub input_dim: usize,
    pub dynamics: Dynamics<T>,
    pub sample_period: T,
    /// ∞-norm bound on `w_o`.
    pub disturbance_bound: T,
    pub state_box: Polytope<T>,
    pub input_box: Polytope<T>,
}

impl<T: Real> PlantSpec<T> {
    pub fn van_der_pol(form: VdpForm) -> Self {
        PlantSpec {
            state_dim: 2,
            input_dim: 1,
            dynamics: Dynamics::VanDerPol(form),
            sample_period: T::lit(0.025),
            disturbance_bound: T::lit(0.08),
            state_box: Polytope::symmetric_box(&[T::lit(2.5), T::lit(2.5)]),
            input_box: Polytope::symmetric_box(&[T::lit(10.0)]),
        }
    }

    pub fn pendulum() -> Self {
        PlantSpec {
            state_dim: 4,
            input_dim: 1,
            dynamics: Dynamics::Pendulum,
            sample_period: T::lit(0.01),
            disturbance_bound: T::lit(0.5),
            state_box: Polytope::symmetric_box(&[T::lit(0.25), T::lit(2.0), T::lit(1.0), T::lit(2.0)]),
            input_box: Polytope::symmetric_box(&[T::lit(10.0)]),
        }
    }

    /// Linear plant `ẋ = A x + B u` with symmetric box constraints.
    pub fn linear(a: DMat<T>, b: DMat<T>, period: T, bound: T, x_max: &[T], u_max: &[T]) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || b.nrows() != n || x_max.len() != n || u_max.len() != b.ncols() {
            return Err(Error::Dimension("linear plant".into()));
        }
        if period <= T::zero() || bound < T::zero() {
            return Err(Error::Config("sample period must be positive and the bound nonnegative".into()));
        }
        Ok(PlantSpec {
            state_dim: n,
            input_dim: b.ncols(),
            dynamics: Dynamics::Linear { a, b },
            sample_period: period,
            disturbance_bound: bound,
            state_box: Polytope::symmetric_box(x_max),
            input_box: Polytope::symmetric_box(u_max),
        })
    }

    pub fn disturbance_dim(&self) -> usize {
        self.state_dim
    }

    pub fn derivative(&self, x: &DVec<T>, u: &DVec<T>) -> DVec<T> {
        match &self.dynamics {
            Dynamics::VanDerPol(VdpForm::Printed) => vdp_derivative(x, u[0]),
            Dynamics::VanDerPol(VdpForm::Standard) => vdp_standard_derivative(x, u[0]),
            Dynamics::Pendulum => pendulum_derivative(x, u[0]),
            Dynamics::Linear { a, b } => a * x + b * u,
        }
    }
}

/// One RK4 step over the sample period with `u` held constant, then the
/// additive disturbance `T·w_o`.
pub fn step_discrete<T: Real>(spec: &PlantSpec<T>, x: &DVec<T>, u: &DVec<T>, w_o: &DVec<T>) -> Result<DVec<T>> {
    if x.len() != spec.state_dim || u.len() != spec.input_dim || w_o.len() != spec.disturbance_dim() {
        return Err(Error::Dimension(format!(
            "step_discrete: x {} u {} w {} for plant ({}, {})",
            x.len(),
            u.len(),
            w_o.len(),
            spec.state_dim,
            spec.input_dim
        )));
    }
    let h = spec.sample_period;
    let half = T::lit(0.5);
    let k1 = spec.derivative(x, u);
    let k2 = spec.derivative(&(x + &k1 * (h * half)), u);
    let k3 = spec.derivative(&(x + &k2 * (h * half)), u);
    let k4 = spec.derivative(&(x + &k3 * h), u);
    let incr = (k1 + (k2 + k3) * T::lit(2.0) + k4) * (h / T::lit(6.0));
    Ok(x + incr + w_o * h)
}

/// Disturbance uniform on the box `‖w_o‖∞ ≤ ρ`.
pub fn sample_disturbance<T: Real, R: Rng>(spec: &PlantSpec<T>, rng: &mut R) -> DVec<T> {
    let rho = spec.disturbance_bound;
    DVec::from_fn(spec.disturbance_dim(), |_, _| {
        if rho == T::zero() {
            T::zero()
        } else {
            let v = rho * T::lit(rng.gen_range(-1.0..=1.0));
            v.max(-rho).min(rho)
        }
    })
}

/// Jacobians `(∂x⁺/∂x, ∂x⁺/∂u)` of the undisturbed step by central
/// differences.
pub fn step_jacobians<T: Real>(spec: &PlantSpec<T>, x: &DVec<T>, u: &DVec<T>) -> Result<(DMat<T>, DMat<T>)> {
    let n = spec.state_dim;
    let m = spec.input_dim;
    let w0 = DVec::zeros(n);
    let h = T::lit(1e-6);
    let mut fx = DMat::zeros(n, n);
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let col = (step_discrete(spec, &xp, u, &w0)? - step_discrete(spec, &xm, u, &w0)?) / (h + h);
        fx.set_column(j, &col);
    }
    let mut fu = DMat::zeros(n, m);
    for j in 0..m {
        let mut up = u.clone();
        let mut um = u.clone();
        up[j] += h;
        um[j] -= h;
        let col = (step_discrete(spec, x, &up, &w0)? - step_discrete(spec, x, &um, &w0)?) / (h + h);
        fu.set_column(j, &col);
    }
    Ok((fx, fu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVec<f64> {
        DVec::from_vec(x.to_vec())
    }

    #[test]
    fn vdp_printed_examples() {
        assert_eq!(vdp_derivative(&v(&[0.0, 0.0]), 0.0), v(&[0.0, 1.0]));
        assert_eq!(vdp_derivative(&v(&[1.0, 0.0]), 0.0), v(&[0.0, 0.0]));
        assert_eq!(vdp_derivative(&v(&[1.0, 1.0]), 2.0), v(&[1.0, 1.0]));
    }

    #[test]
    fn vdp_standard_has_origin_equilibrium() {
        assert_eq!(vdp_standard_derivative(&v(&[0.0, 0.0]), 0.0), v(&[0.0, 0.0]));
    }

    #[test]
    fn pendulum_examples() {
        assert_eq!(pendulum_derivative(&v(&[0.0; 4]), 0.0), v(&[0.0; 4]));
        let d = pendulum_derivative(&v(&[0.0; 4]), 1.0);
        assert!((d - v(&[0.0, 3.0, 0.0, 1.0])).norm() < 1e-15);
        let d = pendulum_derivative(&v(&[std::f64::consts::FRAC_PI_2, 0.0, 0.0, 0.0]), 0.0);
        assert!((d - v(&[0.0, 29.4, 0.0, 0.0])).norm() < 1e-12);
    }

    fn decay_plant(period: f64) -> PlantSpec<f64> {
        PlantSpec::linear(DMat::from_element(1, 1, -1.0), DMat::zeros(1, 1), period, 0.0, &[10.0], &[1.0]).unwrap()
    }

    #[test]
    fn rk4_matches_exponential() {
        let p = decay_plant(0.025);
        let x1 = step_discrete(&p, &v(&[1.0]), &v(&[0.0]), &v(&[0.0])).unwrap();
        assert!((x1[0] - (-0.025f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let err = |h: f64| {
            let p = decay_plant(h);
            (step_discrete(&p, &v(&[1.0]), &v(&[0.0]), &v(&[0.0])).unwrap()[0] - (-h).exp()).abs()
        };
        // One-step (local) error scales as h⁵; the per-step ratio on halving
        // is therefore ≈ 32, and the global-error ratio over a fixed horizon ≈ 16.
        let global = |h: f64| {
            let p = decay_plant(h);
            let steps = (0.4 / h).round() as usize;
            let mut x = v(&[1.0]);
            for _ in 0..steps {
                x = step_discrete(&p, &x, &v(&[0.0]), &v(&[0.0])).unwrap();
            }
            (x[0] - (-0.4f64).exp()).abs()
        };
        let ratio = global(0.1) / global(0.05);
        assert!((14.0..=18.0).contains(&ratio), "ratio {ratio}");
        assert!(err(0.1) > err(0.05));
    }

    #[test]
    fn disturbance_enters_additively() {
        let p = PlantSpec::<f64>::van_der_pol(VdpForm::Printed);
        let x = v(&[0.0, 0.0]);
        let u = v(&[0.0]);
        let a = step_discrete(&p, &x, &u, &v(&[0.0, 0.08])).unwrap();
        let b = step_discrete(&p, &x, &u, &v(&[0.0, 0.0])).unwrap();
        assert!((a - b - v(&[0.0, 0.025 * 0.08])).norm() < 1e-6);
    }

    #[test]
    fn equilibrium_is_fixed() {
        let p = PlantSpec::<f64>::pendulum();
        let x = step_discrete(&p, &v(&[0.0; 4]), &v(&[0.0]), &v(&[0.0; 4])).unwrap();
        assert_eq!(x, v(&[0.0; 4]));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = PlantSpec::<f64>::pendulum();
        assert!(matches!(step_discrete(&p, &v(&[0.0; 2]), &v(&[0.0]), &v(&[0.0; 4])), Err(Error::Dimension(_))));
    }

    #[test]
    fn disturbance_bounds_and_determinism() {
        let p = PlantSpec::<f64>::van_der_pol(VdpForm::Printed);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100_000 {
            assert!(sample_disturbance(&p, &mut rng).amax() <= 0.08);
        }
        let a = sample_disturbance(&p, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_disturbance(&p, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        let mut zero = p.clone();
        zero.disturbance_bound = 0.0;
        assert_eq!(sample_disturbance(&zero, &mut rng), v(&[0.0, 0.0]));
    }
}
