//! Primal active-set solver for small strictly convex QPs.
//!
//! `min ½ zᵀHz + gᵀz  s.t.  A z ≤ b` with `H ≻ 0`. A feasible start comes
//! from the caller (warm start), the unconstrained minimizer, the origin, or a Chebyshev
//! center computed by [`crate::lp`].

use crate::lp::chebyshev_center;
use crate::{DMat, DVec, Error, Real, Result};

#[derive(Clone, Debug)]
pub struct QpSolution<T: Real> {
    pub z: DVec<T>,
    pub objective: T,
    pub active: Vec<usize>,
    pub iterations: usize,
}

pub fn max_violation<T: Real>(a: &DMat<T>, b: &DVec<T>, z: &DVec<T>) -> T {
    if a.nrows() == 0 {
        return T::zero();
    }
    (a * z - b).iter().fold(T::zero(), |m, &v| m.max(v))
}

pub fn solve<T: Real>(h: &DMat<T>, g: &DVec<T>, a: &DMat<T>, b: &DVec<T>, warm: Option<&DVec<T>>) -> Result<QpSolution<T>> {
    let n = h.nrows();
    if h.ncols() != n || g.len() != n || a.ncols() != n || a.nrows() != b.len() {
        return Err(Error::Dimension("qp".into()));
    }
    let chol = nalgebra::Cholesky::new(crate::linalg::sym(h)).ok_or(Error::RankDeficient)?;
    let scale = b.iter().fold(T::one(), |m, &x| m.max(x.abs()));
    let feas_tol = T::lit(1e-10) * scale;

    let unconstrained = -chol.solve(g);
    let objective = |z: &DVec<T>| (h * z).dot(z) * T::lit(0.5) + g.dot(z);
    if max_violation(a, b, &unconstrained) <= feas_tol {
        let objective = objective(&unconstrained);
        return Ok(QpSolution { z: unconstrained, objective, active: Vec::new(), iterations: 0 });
    }

    let origin = DVec::zeros(n);
    let start = warm.filter(|w| w.len() == n && max_violation(a, b, w) <= feas_tol).or_else(|| {
        Some(&origin).filter(|o| max_violation(a, b, o) <= feas_tol)
    });
    let mut z = match start {
        Some(w) => w.clone(),
        None => match chebyshev_center(a, b)? {
            Some((c, r)) if r >= -feas_tol => c,
            _ => return Err(Error::Infeasible),
        },
    };

    let m = a.nrows();
    let mut working: Vec<usize> = Vec::new();
    let mut in_w = vec![false; m];
    let max_iter = 10 * (n + m) + 50;
    for it in 0..max_iter {
        let q = h * &z + g;
        let hinv_q = chol.solve(&q);
        let (p, lambda) = if working.is_empty() {
            (-hinv_q, DVec::zeros(0))
        } else {
            let aw = DMat::from_rows(&working.iter().map(|&i| a.row(i).into_owned()).collect::<Vec<_>>());
            let y = chol.solve(&aw.transpose());
            let mmat = &aw * &y;
            let rhs = -(&aw * &hinv_q);
            let lambda = match nalgebra::Cholesky::new(crate::linalg::sym(&mmat)) {
                Some(c) => c.solve(&rhs),
                None => mmat.clone().lu().solve(&rhs).ok_or(Error::RankDeficient)?,
            };
            (-hinv_q - y * &lambda, lambda)
        };
        let pnorm = p.amax();
        // Roundoff in the null-space step sits near 1e-12; a tighter test cycles.
        if pnorm <= T::lit(1e-10) * (T::one() + z.amax()) {
            // Stationary on the working set: check multiplier signs.
            let (mut worst, mut wi) = (-T::lit(1e-12) * (T::one() + lambda.amax()), None);
            for (k, &l) in lambda.iter().enumerate() {
                if l < worst {
                    worst = l;
                    wi = Some(k);
                }
            }
            match wi {
                None => {
                    let objective = objective(&z);
                    return Ok(QpSolution { z, objective, active: working, iterations: it });
                }
                Some(k) => {
                    in_w[working[k]] = false;
                    working.remove(k);
                }
            }
            continue;
        }
        let mut alpha = T::one();
        let mut block = None;
        for i in 0..m {
            if in_w[i] {
                continue;
            }
            let ap = a.row(i).dot(&p.transpose());
            if ap > T::lit(1e-14) * (T::one() + pnorm) {
                let slack = (b[i] - a.row(i).dot(&z.transpose())).max(T::zero());
                let t = slack / ap;
                if t < alpha {
                    alpha = t;
                    block = Some(i);
                }
            }
        }
        z += &p * alpha;
        if let Some(i) = block {
            working.push(i);
            in_w[i] = true;
        }
    }
    Err(Error::MaxIterations("active-set QP"))
}
