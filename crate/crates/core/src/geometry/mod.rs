//! Polytope and ellipsoid arithmetic on support functions.
//!
//! Outer approximations use a fixed direction [`Template`]: a set is stored
//! as the halfspaces `dᵀz ≤ h(d)` for every template direction `d`, where `h`
//! is the exact support function of the operand expression.

mod invariant;
mod sets;

pub use invariant::{feasible_and_costate_sets, robust_invariant_set, terminal_set, FeasibleSets, RpiOptions};
pub use sets::{unit_ball_sample, ConvexSet, Ellipsoid, Polytope, Template};

use crate::{DMat, DVec, Error, Real, Result};

/// Outer polytope of `P ⊕ Q`; normals are the template directions plus the
/// face normals of polytope operands.
pub fn minkowski_sum<T: Real>(p: &ConvexSet<T>, q: &ConvexSet<T>, template: &Template<T>) -> Result<Polytope<T>> {
    if p.dim() != q.dim() || template.dim() != p.dim() {
        return Err(Error::Dimension(format!("minkowski_sum: {} vs {}", p.dim(), q.dim())));
    }
    let mut dirs = template.dirs.clone();
    for s in [p, q] {
        if let ConvexSet::Polytope(poly) = s {
            for i in 0..poly.len() {
                dirs.push(poly.normals.row(i).transpose());
            }
        }
    }
    let sum = ConvexSet::Sum(vec![p.clone(), q.clone()]);
    Polytope::outer(&sum, &dirs)
}

/// `P ⊖ Q`: keeps the normals of `P` with offsets `bᵢ − h_Q(aᵢ)`. The result
/// carries `empty = true` when no interior point remains.
pub fn pontryagin_diff<T: Real>(p: &Polytope<T>, q: &ConvexSet<T>) -> Result<Polytope<T>> {
    if p.dim() != q.dim() {
        return Err(Error::Dimension(format!("pontryagin_diff: {} vs {}", p.dim(), q.dim())));
    }
    let mut offsets = p.offsets.clone();
    for i in 0..p.len() {
        let a = p.normals.row(i).transpose();
        offsets[i] -= q.support(&a)?;
    }
    let mut out = Polytope::new(p.normals.clone(), offsets);
    out.empty = p.empty || out.interior_radius()?.map_or(true, |r| r <= T::zero());
    Ok(out)
}

/// Image `{Mz : z ∈ P}`. Exact for invertible square `M`; otherwise the
/// outer approximation on `template` (directions in the image space).
pub fn linear_image_polytope<T: Real>(m: &DMat<T>, p: &Polytope<T>, template: &Template<T>) -> Result<Polytope<T>> {
    if m.ncols() != p.dim() {
        return Err(Error::Dimension("linear_image".into()));
    }
    if m.is_square() {
        if let Some(inv) = m.clone().try_inverse() {
            let mut out = Polytope::new(&p.normals * inv, p.offsets.clone());
            out.empty = p.empty;
            return Ok(out);
        }
    }
    if template.dim() != m.nrows() {
        return Err(Error::Dimension("linear_image template".into()));
    }
    let img = ConvexSet::Image { map: m.clone(), set: Box::new(ConvexSet::Polytope(p.clone())) };
    Polytope::outer(&img, &template.dirs)
}

/// Image of an ellipsoid under an invertible map: shape `M⁻ᵀ Z M⁻¹`.
pub fn linear_image_ellipsoid<T: Real>(m: &DMat<T>, e: &Ellipsoid<T>) -> Result<Ellipsoid<T>> {
    if !m.is_square() || m.nrows() != e.dim() {
        return Err(Error::Dimension("linear_image".into()));
    }
    let inv = m.clone().try_inverse().ok_or(Error::SingularMap)?;
    if crate::linalg::sigma_max(&inv) * crate::linalg::sigma_max(m) > T::lit(1e12) {
        return Err(Error::SingularMap);
    }
    let shape = crate::linalg::sym(&(inv.transpose() * &e.shape * inv));
    Ellipsoid::new(shape, e.level)
}

/// Preimage `{z : Az ∈ S}` under an invertible `A`: normals `aᵢᵀA`.
pub fn linear_preimage<T: Real>(a: &DMat<T>, s: &Polytope<T>) -> Result<Polytope<T>> {
    if !a.is_square() || a.nrows() != s.dim() {
        return Err(Error::Dimension("linear_preimage".into()));
    }
    check_invertible(a)?;
    let mut out = Polytope::new(&s.normals * a, s.offsets.clone());
    out.empty = s.empty;
    Ok(out)
}

pub(crate) fn check_invertible<T: Real>(a: &DMat<T>) -> Result<()> {
    let sv = a.clone().singular_values();
    let smax = sv.iter().fold(T::zero(), |m, &s| m.max(s));
    let smin = sv.iter().fold(T::max_value().unwrap(), |m, &s| m.min(s));
    if smax == T::zero() || smin <= smax * T::lit(1e-12) {
        return Err(Error::SingularMap);
    }
    Ok(())
}

/// Preimage under a possibly non-square map (used for `{ŝ : Cŝ ∈ X}`).
pub fn output_preimage<T: Real>(c: &DMat<T>, s: &Polytope<T>) -> Result<Polytope<T>> {
    if c.nrows() != s.dim() {
        return Err(Error::Dimension("output_preimage".into()));
    }
    let mut out = Polytope::new(&s.normals * c, s.offsets.clone());
    out.empty = s.empty;
    Ok(out)
}

/// Origin-centered bounding ellipsoid of a polytope from its symmetric axis
/// extents `rᵢ`: `Σ zᵢ² / (n rᵢ²) ≤ 1` contains the box `|zᵢ| ≤ rᵢ`.
pub fn bounding_ellipsoid<T: Real>(p: &Polytope<T>) -> Result<Ellipsoid<T>> {
    let n = p.dim();
    let (lo, hi) = p.axis_bounds()?;
    let mut shape = DMat::zeros(n, n);
    for i in 0..n {
        let r = lo[i].abs().max(hi[i].abs()).max(T::lit(1e-12));
        shape[(i, i)] = T::one() / (T::lit(n as f64) * r * r);
    }
    Ellipsoid::new(shape, T::one())
}

/// Shape-matrix (`E = {Q^{1/2} b : ‖b‖ ≤ 1}`) form of an ellipsoid.
pub fn shape_matrix<T: Real>(e: &Ellipsoid<T>) -> Result<DMat<T>> {
    Ok(crate::linalg::spd_inverse(&e.shape)? * e.level)
}

/// Trace-minimal outer ellipsoid of the sum of two origin-centered
/// ellipsoids in shape-matrix form (either may be degenerate).
pub fn ellipsoid_sum_shape<T: Real>(q1: &DMat<T>, q2: &DMat<T>) -> DMat<T> {
    let t1 = q1.trace();
    let t2 = q2.trace();
    if t1 <= T::zero() {
        return q2.clone();
    }
    if t2 <= T::zero() {
        return q1.clone();
    }
    let p = (t1 / t2).sqrt();
    q1 * (T::one() + T::one() / p) + q2 * (T::one() + p)
}

/// Hausdorff-style gap used in tests: largest support difference over
/// `dirs` between an outer set and an inner set.
pub fn support_gap<T: Real>(outer: &ConvexSet<T>, inner: &ConvexSet<T>, dirs: &[DVec<T>]) -> Result<T> {
    let mut gap = T::zero();
    for d in dirs {
        let dn = d.normalize();
        gap = gap.max(outer.support(&dn)? - inner.support(&dn)?);
    }
    Ok(gap)
}
