use super::sets::{ConvexSet, Ellipsoid, Polytope, Template};
use super::{bounding_ellipsoid, check_invertible, ellipsoid_sum_shape, shape_matrix};
use crate::linalg::{dlyap, modal_directions, spd_inverse, spectral_radius, sym, ModalDirection};
use crate::{DMat, DVec, Error, Real, Result};

#[derive(Clone, Debug)]
pub struct RpiOptions<T: Real> {
    /// Relative offset change below which the refinement stops.
    pub eps: T,
    pub max_iter: usize,
    /// Directions added to the modal ones (axis, random, problem-specific).
    pub template: Template<T>,
}

/// Robust positively invariant outer set `Z` with `F Z ⊕ D ⊆ Z`.
///
/// Starts from a polytope that is invariant by construction in the modal
/// coordinates of `F` (left eigen-directions, with polygons in the planes of
/// complex pairs), then contracts it with `b ← h_{Z(b)}(Fᵀd) + h_D(d)` over all
/// directions. Every iterate of the contraction is itself invariant, so
/// stopping early only costs tightness. Defective `F` falls back to growing
/// the set from `D` and certifying invariance after inflation.
pub fn robust_invariant_set<T: Real>(f: &DMat<T>, d_set: &ConvexSet<T>, opts: &RpiOptions<T>) -> Result<Polytope<T>> {
    let n = f.nrows();
    if !f.is_square() || d_set.dim() != n {
        return Err(Error::Dimension("robust_invariant_set".into()));
    }
    let rho = spectral_radius(f);
    if rho >= T::one() {
        return Err(Error::NotSchur(rho.f64()));
    }
    let mut dirs: Vec<DVec<T>> = Vec::new();
    let mut offsets: Vec<T> = Vec::new();
    let modal = modal_directions(f).and_then(|m| modal_polytope(&m, d_set).transpose()).transpose()?;
    let fallback = modal.is_none();
    if let Some((mdirs, moffs)) = modal {
        dirs.extend(mdirs);
        offsets.extend(moffs);
    }
    let n_modal = dirs.len();
    dirs.extend(opts.template.dirs.iter().cloned());
    if let ConvexSet::Polytope(p) = d_set {
        for i in 0..p.len() {
            dirs.push(p.normals.row(i).transpose());
        }
    }
    let g = DMat::from_rows(&dirs.iter().map(|d| d.transpose()).collect::<Vec<_>>());
    let fdirs: Vec<DVec<T>> = dirs.iter().map(|d| f.transpose() * d).collect();
    let hd: Vec<T> = dirs.iter().map(|d| d_set.support(d)).collect::<Result<_>>()?;

    if !fallback {
        let modal_poly = Polytope::new(
            g.rows(0, n_modal).into_owned(),
            DVec::from_vec(offsets.clone()),
        );
        for d in &dirs[n_modal..] {
            offsets.push(modal_poly.support(d)?);
        }
        let mut b = DVec::from_vec(offsets);
        for _ in 0..opts.max_iter {
            let poly = Polytope::new(g.clone(), b.clone());
            let mut next = b.clone();
            let mut change = T::zero();
            for j in 0..dirs.len() {
                let t = poly.support(&fdirs[j])? + hd[j];
                if t < b[j] {
                    next[j] = t;
                    change = change.max((b[j] - t) / (b[j].abs() + T::lit(1e-12)));
                }
            }
            b = next;
            if change <= opts.eps {
                break;
            }
        }
        return Ok(Polytope::new(g, b));
    }

    // Growing iteration from D, then inflation until the image check passes.
    let mut b = DVec::from_vec(hd.clone());
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let poly = Polytope::new(g.clone(), b.clone());
        let mut next = DVec::zeros(dirs.len());
        for j in 0..dirs.len() {
            next[j] = poly.support(&fdirs[j])? + hd[j];
        }
        let change = (0..dirs.len()).fold(T::zero(), |m, j| m.max((next[j] - b[j]).abs() / (b[j].abs() + T::lit(1e-12))));
        b = next;
        if change <= opts.eps {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence("robust invariant set".into()));
    }
    let mut inflate = opts.eps / (T::one() - rho);
    for _ in 0..20 {
        let cand = &b * (T::one() + inflate);
        let poly = Polytope::new(g.clone(), cand.clone());
        let ok = (0..dirs.len()).try_fold(true, |acc, j| -> Result<bool> {
            Ok(acc && poly.support(&fdirs[j])? + hd[j] <= cand[j] * (T::one() + T::lit(1e-12)))
        })?;
        if ok {
            return Ok(poly);
        }
        inflate *= T::lit(2.0);
    }
    Err(Error::NoConvergence("robust invariant set inflation".into()))
}

/// Invariant polytope in modal coordinates: rows and offsets, or `None` when
/// a complex pair rotates too fast for a bounded polygon.
fn modal_polytope<T: Real>(modes: &[ModalDirection<T>], d_set: &ConvexSet<T>) -> Result<Option<(Vec<DVec<T>>, Vec<T>)>> {
    let mut dirs = Vec::new();
    let mut offs = Vec::new();
    for m in modes {
        match m {
            ModalDirection::Real { t, modulus } => {
                let beta = d_set.support(t)?.max(d_set.support(&(-t))?) / (T::one() - *modulus);
                dirs.push(t.clone());
                offs.push(beta);
                dirs.push(-t);
                offs.push(beta);
            }
            ModalDirection::Plane { u, v, modulus, .. } => {
                let r = modulus.f64();
                let target = 2.0 * r / (1.0 + r);
                let sides = (std::f64::consts::PI / target.acos()).ceil().max(8.0);
                if !sides.is_finite() || sides > 720.0 {
                    return Ok(None);
                }
                let p = sides as usize;
                let slack = T::one() - *modulus / T::lit((std::f64::consts::PI / p as f64).cos());
                let cs: Vec<DVec<T>> = (0..p)
                    .map(|k| {
                        let th = 2.0 * std::f64::consts::PI * k as f64 / p as f64;
                        u * T::lit(th.cos()) + v * T::lit(th.sin())
                    })
                    .collect();
                let mut hmax = T::zero();
                for c in &cs {
                    hmax = hmax.max(d_set.support(c)?);
                }
                let beta = hmax / slack;
                for c in cs {
                    dirs.push(c);
                    offs.push(beta);
                }
            }
        }
    }
    Ok(Some((dirs, offs)))
}

/// Ellipsoidal terminal set `{ŝ : ŝᵀZ̄ŝ ≤ ϱ·L}` with `Z̄ = FᵀZ̄F + I`, where
/// `L` is the largest level whose ellipsoid lies in `state_set` and whose
/// image under `K` lies in `input_set`.
pub fn terminal_set<T: Real>(
    f: &DMat<T>,
    state_set: &Polytope<T>,
    input_set: &Polytope<T>,
    k: &DMat<T>,
    varrho: T,
) -> Result<Ellipsoid<T>> {
    if varrho <= T::zero() || varrho > T::one() {
        return Err(Error::Config(format!("terminal level fraction must lie in (0, 1], got {varrho}")));
    }
    let n = f.nrows();
    let z = dlyap(f, &DMat::identity(n, n))?;
    let zinv = spd_inverse(&z)?;
    let mut level = T::max_value().unwrap();
    let mut bounded = false;
    let mut visit = |a: DVec<T>, b: T| -> Result<()> {
        let q = (&zinv * &a).dot(&a);
        if q <= T::lit(1e-300) {
            return Ok(());
        }
        if b <= T::zero() {
            return Err(Error::Degenerate("origin is not interior to the terminal constraints".into()));
        }
        bounded = true;
        level = level.min(b * b / q);
        Ok(())
    };
    for i in 0..state_set.len() {
        visit(state_set.normals.row(i).transpose(), state_set.offsets[i])?;
    }
    for i in 0..input_set.len() {
        visit(k.transpose() * input_set.normals.row(i).transpose(), input_set.offsets[i])?;
    }
    if !bounded {
        return Err(Error::Degenerate("terminal set is unbounded".into()));
    }
    Ellipsoid::new(z, varrho * level)
}

/// Backward recursions for the feasible state sets `Sʲ` and the costate
/// bounds `Λʲ`, `j = 1..N` (index `j − 1` in the vectors).
#[derive(Clone, Debug)]
pub struct FeasibleSets<T: Real> {
    pub states: Vec<Polytope<T>>,
    pub costates: Vec<Ellipsoid<T>>,
}

#[allow(clippy::too_many_arguments)]
pub fn feasible_and_costate_sets<T: Real>(
    a: &DMat<T>,
    b: &DMat<T>,
    s: &Polytope<T>,
    u_hat: &Polytope<T>,
    s_f: &Ellipsoid<T>,
    p: &DMat<T>,
    qbar: &DMat<T>,
    horizon: usize,
    template: &Template<T>,
) -> Result<FeasibleSets<T>> {
    if horizon == 0 {
        return Err(Error::Config("horizon must be positive".into()));
    }
    check_invertible(a)?;
    let neg_u = ConvexSet::Image { map: -b, set: Box::new(ConvexSet::Polytope(u_hat.clone())) };
    let mut states = vec![Polytope::outer(&ConvexSet::Ellipsoid(s_f.clone()), &template.dirs)?];
    for j in (1..horizon).rev() {
        let next = states.last().unwrap();
        let sum = ConvexSet::Sum(vec![ConvexSet::Polytope(next.clone()), neg_u.clone()]);
        let grown = Polytope::outer(&sum, &template.dirs)?;
        let pre = super::linear_preimage(a, &grown)?;
        let mut sj = pre.intersect(s);
        match sj.interior_radius()? {
            Some(r) if r > T::zero() => {}
            _ => {
                sj.empty = true;
                return Err(Error::EmptyFeasibleSet(j));
            }
        }
        states.push(sj);
    }
    states.reverse();

    let two = T::lit(2.0);
    let mut shapes = vec![DMat::zeros(0, 0); horizon];
    let qf = shape_matrix(s_f)?;
    let m = p * two;
    shapes[horizon - 1] = sym(&(&m * qf * m.transpose()));
    for j in (0..horizon - 1).rev() {
        let qs = shape_matrix(&bounding_ellipsoid(&states[j])?)?;
        let g = qbar * two;
        let q1 = sym(&(&g * qs * g.transpose()));
        let q2 = sym(&(a.transpose() * &shapes[j + 1] * a));
        shapes[j] = sym(&ellipsoid_sum_shape(&q1, &q2));
    }
    let costates = shapes
        .iter()
        .map(|q| Ellipsoid::new(sym(&spd_inverse(q)?), T::one()))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeasibleSets { states, costates })
}
