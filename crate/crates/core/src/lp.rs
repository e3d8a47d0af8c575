//! Dense two-phase simplex for small linear programs over free variables.
//!
//! Solves `max cᵀx  s.t.  G x ≤ h` with `x` unrestricted in sign. Problems
//! here are tiny (tens of variables, a few hundred rows), so a full tableau
//! is the simplest robust choice.

use crate::{DMat, DVec, Error, Real, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome<T: Real> {
    Optimal { x: DVec<T>, value: T },
    Infeasible,
    Unbounded,
}

impl<T: Real> LpOutcome<T> {
    pub fn value(&self) -> Option<T> {
        match self {
            LpOutcome::Optimal { value, .. } => Some(*value),
            _ => None,
        }
    }
}

struct Tableau<T: Real> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
    basis: Vec<usize>,
}

impl<T: Real> Tableau<T> {
    #[inline]
    fn at(&self, r: usize, c: usize) -> T {
        self.data[r * (self.cols + 1) + c]
    }
    #[inline]
    fn rhs(&self, r: usize) -> T {
        self.data[r * (self.cols + 1) + self.cols]
    }

    fn pivot(&mut self, pr: usize, pc: usize, obj: &mut [T]) {
        let w = self.cols + 1;
        let piv = self.data[pr * w + pc];
        let inv = T::one() / piv;
        for c in 0..w {
            self.data[pr * w + c] *= inv;
        }
        self.data[pr * w + pc] = T::one();
        let prow: Vec<T> = self.data[pr * w..(pr + 1) * w].to_vec();
        for r in 0..self.rows {
            if r == pr {
                continue;
            }
            let f = self.data[r * w + pc];
            if f != T::zero() {
                let row = &mut self.data[r * w..(r + 1) * w];
                for (x, &p) in row.iter_mut().zip(prow.iter()) {
                    *x -= f * p;
                }
                row[pc] = T::zero();
            }
        }
        let f = obj[pc];
        if f != T::zero() {
            for (x, &p) in obj.iter_mut().zip(prow.iter()) {
                *x -= f * p;
            }
            obj[pc] = T::zero();
        }
        self.basis[pr] = pc;
    }

    /// Minimizes the objective whose reduced-cost row is `obj` (last entry is
    /// the negated objective value). Columns in `blocked` never enter.
    fn run(&mut self, obj: &mut [T], blocked: &dyn Fn(usize) -> bool, tol: T) -> Result<bool> {
        let max_iter = 50 * (self.rows + self.cols) + 100;
        let mut degenerate_run = 0usize;
        for _ in 0..max_iter {
            let bland = degenerate_run > 30;
            let mut enter = None;
            let mut best = -tol;
            for c in 0..self.cols {
                if blocked(c) {
                    continue;
                }
                let rc = obj[c];
                if rc < best {
                    enter = Some(c);
                    if bland {
                        break;
                    }
                    best = rc;
                }
            }
            let Some(pc) = enter else {
                return Ok(true);
            };
            let mut leave = None;
            let mut best_ratio = T::zero();
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a > tol {
                    let ratio = self.rhs(r) / a;
                    let better = match leave {
                        None => true,
                        Some(lr) => {
                            ratio < best_ratio - tol
                                || (ratio <= best_ratio + tol && self.basis[r] < self.basis[lr])
                        }
                    };
                    if better {
                        leave = Some(r);
                        best_ratio = ratio;
                    }
                }
            }
            let Some(pr) = leave else {
                return Ok(false);
            };
            if best_ratio <= tol {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(pr, pc, obj);
        }
        Err(Error::MaxIterations("simplex"))
    }
}

/// Maximizes `cᵀx` subject to `G x ≤ h` over free `x`.
pub fn maximize<T: Real>(c: &DVec<T>, g: &DMat<T>, h: &DVec<T>) -> Result<LpOutcome<T>> {
    let (m, n) = g.shape();
    if c.len() != n || h.len() != m {
        return Err(Error::Dimension(format!("lp: G is {m}x{n}, c {}, h {}", c.len(), h.len())));
    }
    let scale = g.iter().chain(h.iter()).fold(T::one(), |a, &x| a.max(x.abs()));
    let tol = T::lit(1e-11) * scale;
    // Columns: x⁺ (n), x⁻ (n), slack (m), artificial (one per negative row).
    let neg: Vec<usize> = (0..m).filter(|&i| h[i] < T::zero()).collect();
    let n_art = neg.len();
    let cols = 2 * n + m + n_art;
    let w = cols + 1;
    let mut data = vec![T::zero(); m * w];
    let mut basis = vec![0usize; m];
    let mut art_k = 0;
    for i in 0..m {
        let sgn = if h[i] < T::zero() { -T::one() } else { T::one() };
        for j in 0..n {
            data[i * w + j] = sgn * g[(i, j)];
            data[i * w + n + j] = -sgn * g[(i, j)];
        }
        data[i * w + 2 * n + i] = sgn;
        data[i * w + cols] = sgn * h[i];
        if h[i] < T::zero() {
            let col = 2 * n + m + art_k;
            data[i * w + col] = T::one();
            basis[i] = col;
            art_k += 1;
        } else {
            basis[i] = 2 * n + i;
        }
    }
    let mut tab = Tableau { rows: m, cols, data, basis };
    let is_art = |col: usize| col >= 2 * n + m;

    if n_art > 0 {
        // Phase 1: minimize the sum of artificials.
        let mut obj = vec![T::zero(); w];
        for k in 0..n_art {
            obj[2 * n + m + k] = T::one();
        }
        for &i in &neg {
            for col in 0..w {
                obj[col] -= tab.data[i * w + col];
            }
        }
        tab.run(&mut obj, &|_| false, tol)?;
        let infeas = -obj[cols];
        if infeas > T::lit(1e-9) * scale {
            return Ok(LpOutcome::Infeasible);
        }
        // Drive remaining artificials out of the basis where possible.
        for r in 0..m {
            if is_art(tab.basis[r]) {
                if let Some(pc) = (0..2 * n + m).find(|&col| tab.at(r, col).abs() > tol) {
                    let mut dummy = vec![T::zero(); w];
                    tab.pivot(r, pc, &mut dummy);
                }
            }
        }
    }

    // Phase 2: minimize −cᵀx.
    let mut obj = vec![T::zero(); w];
    for j in 0..n {
        obj[j] = -c[j];
        obj[n + j] = c[j];
    }
    for r in 0..m {
        let b = tab.basis[r];
        let f = obj[b];
        if f != T::zero() {
            for col in 0..w {
                obj[col] -= f * tab.data[r * w + col];
            }
        }
    }
    let bounded = tab.run(&mut obj, &is_art, tol)?;
    if !bounded {
        return Ok(LpOutcome::Unbounded);
    }
    let mut x = DVec::zeros(n);
    for r in 0..m {
        let b = tab.basis[r];
        if b < n {
            x[b] += tab.rhs(r);
        } else if b < 2 * n {
            x[b - n] -= tab.rhs(r);
        }
    }
    let value = c.dot(&x);
    Ok(LpOutcome::Optimal { x, value })
}

/// Chebyshev center of `{x : G x ≤ h}` (rows need not be normalized):
/// returns the center and the inscribed radius, or `None` when empty or
/// unbounded.
pub fn chebyshev_center<T: Real>(g: &DMat<T>, h: &DVec<T>) -> Result<Option<(DVec<T>, T)>> {
    let (m, n) = g.shape();
    let mut ga = DMat::zeros(m + 1, n + 1);
    let mut ha = DVec::zeros(m + 1);
    for i in 0..m {
        let norm = g.row(i).norm();
        for j in 0..n {
            ga[(i, j)] = g[(i, j)];
        }
        ga[(i, n)] = norm;
        ha[i] = h[i];
    }
    // Cap the radius so unbounded sets still report a center.
    ga[(m, n)] = T::one();
    ha[m] = T::lit(1e9);
    let mut c = DVec::zeros(n + 1);
    c[n] = T::one();
    match maximize(&c, &ga, &ha)? {
        LpOutcome::Optimal { x, value } => Ok(Some((x.rows(0, n).into_owned(), value))),
        _ => Ok(None),
    }
}
