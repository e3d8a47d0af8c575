//! Data-driven predictive control of perturbed nonlinear systems.
//!
//! A lifted linear predictor is learned from snapshot data with extended
//! dynamic mode decomposition ([`koopman`]). Two controllers then regulate
//! the plant under hard state and input constraints:
//!
//! * [`drmpc`]: a tube-based robust MPC solving a condensed QP each step;
//! * [`drlpc`]: a barrier-regularized actor-critic predictive controller
//!   that learns costates and controls over a receding horizon.
//!
//! Set arithmetic for tubes, tightened constraints and costate bounds lives in
//! [`geometry`], logarithmic barriers in [`barriers`], benchmark plants in
//! [`plants`], and experiment orchestration in [`harness`].
//!
//! Core numerics are generic over [`Real`] (`f32` or `f64`). The harness runs
//! in `f64`; the aliases at the bottom of this file name the common
//! instantiations.

pub mod barriers;
pub mod drlpc;
pub mod drmpc;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod koopman;
pub mod linalg;
pub mod lp;
pub mod plants;
pub mod qp;

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

pub use error::{Error, Result};

/// Scalar type accepted by the numerical core.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Display + Debug + Send + Sync + 'static
{
    /// Converts an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    /// Widens to `f64` for reporting and serialization.
    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("real scalar")
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub type DMat<T> = nalgebra::DMatrix<T>;
pub type DVec<T> = nalgebra::DVector<T>;

pub type Mat64 = DMat<f64>;
pub type Vec64 = DVec<f64>;
pub type Polytope64 = geometry::Polytope<f64>;
pub type Ellipsoid64 = geometry::Ellipsoid<f64>;
pub type LiftedModel64 = koopman::LiftedLinearModel<f64>;
pub type Barrier64 = barriers::RelaxedBarrier<f64>;
