//! Dense linear-algebra helpers shared by the design pipeline.

use nalgebra::Complex;

use crate::{DMat, DVec, Error, Real, Result};

/// Returns `(M + Mᵀ)/2`.
pub fn sym<T: Real>(m: &DMat<T>) -> DMat<T> {
    (m + m.transpose()) * T::lit(0.5)
}

pub fn frobenius<T: Real>(m: &DMat<T>) -> T {
    m.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
}

/// Solves `M X = R` for symmetric positive-definite `M`.
pub fn spd_solve<T: Real>(m: &DMat<T>, rhs: &DMat<T>) -> Result<DMat<T>> {
    let chol = nalgebra::Cholesky::new(sym(m)).ok_or(Error::RankDeficient)?;
    Ok(chol.solve(rhs))
}

pub fn spd_inverse<T: Real>(m: &DMat<T>) -> Result<DMat<T>> {
    let chol = nalgebra::Cholesky::new(sym(m)).ok_or(Error::RankDeficient)?;
    Ok(chol.inverse())
}

/// Moore-Penrose pseudo-inverse with relative singular-value cutoff.
pub fn pinv<T: Real>(m: &DMat<T>) -> DMat<T> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return DMat::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(T::zero(), |a, &s| a.max(s));
    let cutoff = smax * T::lit(r.max(c) as f64) * T::default_epsilon();
    svd.pseudo_inverse(cutoff).unwrap_or_else(|_| DMat::zeros(c, r))
}

pub fn eigenvalues<T: Real>(m: &DMat<T>) -> Vec<Complex<T>> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    m.clone().complex_eigenvalues().iter().cloned().collect()
}

pub fn spectral_radius<T: Real>(m: &DMat<T>) -> T {
    eigenvalues(m)
        .iter()
        .fold(T::zero(), |acc, z| acc.max((z.re * z.re + z.im * z.im).sqrt()))
}

/// Smallest and largest eigenvalues of a symmetric matrix.
pub fn sym_eig_range<T: Real>(m: &DMat<T>) -> (T, T) {
    let ev = sym(m).symmetric_eigenvalues();
    let lo = ev.iter().fold(T::max_value().unwrap(), |a, &x| a.min(x));
    let hi = ev.iter().fold(T::min_value().unwrap(), |a, &x| a.max(x));
    (lo, hi)
}

/// Largest singular value.
pub fn sigma_max<T: Real>(m: &DMat<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    m.clone()
        .singular_values()
        .iter()
        .fold(T::zero(), |a, &s| a.max(s))
}

/// Solves `P = Fᵀ P F + Q` by squaring the series `Σ (Fᵀ)ᵏ Q Fᵏ`, followed by
/// residual refinement passes.
pub fn dlyap<T: Real>(f: &DMat<T>, q: &DMat<T>) -> Result<DMat<T>> {
    let rho = spectral_radius(f);
    if rho >= T::one() {
        return Err(Error::NotSchur(rho.f64()));
    }
    let mut p = doubling_series(f, q)?;
    for _ in 0..4 {
        let res = f.transpose() * &p * f + q - &p;
        if frobenius(&res) <= T::default_epsilon() * frobenius(&p) {
            break;
        }
        p += doubling_series(f, &res)?;
        p = sym(&p);
    }
    Ok(p)
}

fn doubling_series<T: Real>(f: &DMat<T>, q: &DMat<T>) -> Result<DMat<T>> {
    let mut a = f.clone();
    let mut p = sym(q);
    for _ in 0..80 {
        let next = &p + a.transpose() * &p * &a;
        a = &a * &a;
        let done = frobenius(&a) <= T::default_epsilon() * T::lit(1e-2);
        p = sym(&next);
        if !p.iter().all(|x| x.is_finite()) {
            return Err(Error::NoConvergence("Lyapunov doubling".into()));
        }
        if done {
            return Ok(p);
        }
    }
    Err(Error::NoConvergence("Lyapunov doubling".into()))
}

/// Stabilizing solution of the discrete algebraic Riccati equation
/// `P = Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA` and the gain
/// `K = −(R + BᵀPB)⁻¹BᵀPA`.
///
/// Uses the structure-preserving doubling form of the Riccati recursion,
/// where iterate `k` equals the plain recursion after `2ᵏ` steps from `P = Q`.
pub fn dare<T: Real>(a: &DMat<T>, b: &DMat<T>, q: &DMat<T>, r: &DMat<T>) -> Result<(DMat<T>, DMat<T>)> {
    let n = a.nrows();
    let g0 = b * spd_solve(r, &b.transpose()).map_err(|_| Error::NotStabilizable)?;
    let mut ak = a.clone();
    let mut gk = sym(&g0);
    let mut hk = sym(q);
    let eye = DMat::<T>::identity(n, n);
    let tol = T::lit(1e-13);
    let mut converged = false;
    for _ in 0..100 {
        let w = (&eye + &gk * &hk).lu();
        let w_ak = w.solve(&ak).ok_or(Error::NotStabilizable)?;
        let w_gk = w.solve(&gk).ok_or(Error::NotStabilizable)?;
        let a_next = &ak * &w_ak;
        let g_next = sym(&(&gk + &ak * w_gk * ak.transpose()));
        let h_next = sym(&(&hk + ak.transpose() * &hk * &w_ak));
        let delta = frobenius(&(&h_next - &hk));
        let scale = frobenius(&h_next).max(T::one());
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if !hk.iter().all(|x| x.is_finite()) || scale > T::lit(1e15) {
            return Err(Error::NotStabilizable);
        }
        if delta <= tol * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NotStabilizable);
    }
    let mut p = hk;
    // Polish with plain Riccati steps; each one contracts the error.
    for _ in 0..3 {
        p = riccati_step(a, b, q, r, &p)?;
    }
    let k = riccati_gain(a, b, r, &p)?;
    let rho = spectral_radius(&(a + b * &k));
    if rho >= T::one() {
        return Err(Error::NotStabilizable);
    }
    Ok((p, k))
}

/// `K = −(R + BᵀPB)⁻¹BᵀPA`.
pub fn riccati_gain<T: Real>(a: &DMat<T>, b: &DMat<T>, r: &DMat<T>, p: &DMat<T>) -> Result<DMat<T>> {
    let s = r + b.transpose() * p * b;
    let k = spd_solve(&s, &(b.transpose() * p * a))?;
    Ok(-k)
}

/// One backward step `P ← Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA`.
pub fn riccati_step<T: Real>(
    a: &DMat<T>,
    b: &DMat<T>,
    q: &DMat<T>,
    r: &DMat<T>,
    p: &DMat<T>,
) -> Result<DMat<T>> {
    let k = riccati_gain(a, b, r, p)?;
    let f = a + b * &k;
    // Joseph form keeps the iterate symmetric positive semidefinite.
    Ok(sym(&(q + k.transpose() * r * &k + f.transpose() * p * f)))
}

/// A left-invariant direction family of `F`: either a real left eigenvector
/// (`Fᵀt = λt`) or the real/imaginary pair of a complex one, which spans a
/// plane on which `Fᵀ` acts as a scaled rotation.
#[derive(Clone, Debug)]
pub enum ModalDirection<T: Real> {
    Real { t: DVec<T>, modulus: T },
    Plane { u: DVec<T>, v: DVec<T>, modulus: T, angle: T },
}

/// Left eigen-directions of `F` spanning the whole space, or `None` when `F`
/// is (numerically) defective.
pub fn modal_directions<T: Real>(f: &DMat<T>) -> Option<Vec<ModalDirection<T>>> {
    let n = f.nrows();
    let ft = f.transpose();
    let scale = sigma_max(f).max(T::one());
    let tol = T::lit(1e-7) * scale;
    let mut evs = eigenvalues(f);
    evs.sort_by(|a, b| {
        (b.re * b.re + b.im * b.im)
            .partial_cmp(&(a.re * a.re + a.im * a.im))
            .unwrap()
            .then(b.im.partial_cmp(&a.im).unwrap())
    });
    let mut out = Vec::new();
    let mut basis: Vec<DVec<T>> = Vec::new();
    let mut used = vec![false; evs.len()];
    for i in 0..evs.len() {
        if used[i] {
            continue;
        }
        let lam = evs[i];
        if lam.im.abs() <= tol {
            // Cluster of (numerically) equal real eigenvalues.
            let mut mult = 0;
            for j in i..evs.len() {
                if !used[j] && evs[j].im.abs() <= tol && (evs[j].re - lam.re).abs() <= T::lit(1e-6) * scale {
                    used[j] = true;
                    mult += 1;
                }
            }
            let m = &ft - DMat::identity(n, n) * lam.re;
            let svd = m.svd(false, true);
            let vt = svd.v_t?;
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| svd.singular_values[a].partial_cmp(&svd.singular_values[b]).unwrap());
            for &k in idx.iter().take(mult) {
                if svd.singular_values[k] > T::lit(1e-5) * scale {
                    return None;
                }
                let t = vt.row(k).transpose().normalize();
                out.push(ModalDirection::Real { t: t.clone(), modulus: lam.re.abs() });
                basis.push(t);
            }
        } else {
            // Complex pair: mark the conjugate as used.
            used[i] = true;
            if let Some(j) = (i + 1..evs.len())
                .find(|&j| !used[j] && (evs[j].re - lam.re).abs() <= tol && (evs[j].im + lam.im).abs() <= tol)
            {
                used[j] = true;
            }
            let (a, b) = (lam.re, lam.im.abs());
            // [[Fᵀ − aI, bI], [−bI, Fᵀ − aI]] [u; v] = 0  ⇔  Fᵀ(u + iv) = (a + ib)(u + iv).
            let mut big = DMat::<T>::zeros(2 * n, 2 * n);
            let blk = &ft - DMat::identity(n, n) * a;
            big.view_mut((0, 0), (n, n)).copy_from(&blk);
            big.view_mut((n, n), (n, n)).copy_from(&blk);
            for d in 0..n {
                big[(d, n + d)] = b;
                big[(n + d, d)] = -b;
            }
            let svd = big.svd(false, true);
            let vt = svd.v_t?;
            let k = (0..2 * n)
                .min_by(|&x, &y| svd.singular_values[x].partial_cmp(&svd.singular_values[y]).unwrap())?;
            if svd.singular_values[k] > T::lit(1e-5) * scale {
                return None;
            }
            let w = vt.row(k).transpose();
            let mut u = w.rows(0, n).into_owned();
            let mut v = w.rows(n, n).into_owned();
            // A common rescaling keeps Fᵀ acting as a scaled rotation in (u, v).
            let nu = u.norm();
            let nv = v.norm();
            if nu <= T::default_epsilon() || nv <= T::default_epsilon() {
                return None;
            }
            u /= nu.max(nv);
            v /= nu.max(nv);
            let modulus = (a * a + b * b).sqrt();
            out.push(ModalDirection::Plane { u: u.clone(), v: v.clone(), modulus, angle: b.atan2(a) });
            basis.push(u);
            basis.push(v);
        }
    }
    if basis.len() != n {
        return None;
    }
    let t = DMat::from_columns(&basis);
    let sv = t.singular_values();
    let smin = sv.iter().fold(T::max_value().unwrap(), |a, &s| a.min(s));
    let smax = sv.iter().fold(T::zero(), |a, &s| a.max(s));
    if smin <= T::lit(1e-9) * smax {
        return None;
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::*;

    mod approx_eq {
        pub fn close(a: f64, b: f64, tol: f64) -> bool {
            (a - b).abs() <= tol
        }
    }

    #[test]
    fn scalar_dare_matches_golden_ratio() {
        let one = DMat::from_element(1, 1, 1.0);
        let (p, k) = dare(&one, &one, &one, &one).unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!(close(p[(0, 0)], phi, 1e-12));
        assert!(close(k[(0, 0)], -phi / (1.0 + phi), 1e-12));
    }

    #[test]
    fn zero_weight_gives_zero_gain_for_stable_plant() {
        let a = DMat::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.3]);
        let b = DMat::from_row_slice(2, 1, &[0.0, 1.0]);
        let (_, k) = dare(&a, &b, &DMat::zeros(2, 2), &DMat::identity(1, 1)).unwrap();
        assert!(k.norm() < 1e-12);
    }

    #[test]
    fn lyapunov_scalar() {
        let f = DMat::from_element(1, 1, 0.5);
        let p = dlyap(&f, &DMat::from_element(1, 1, 0.75)).unwrap();
        assert!(close(p[(0, 0)], 1.0, 1e-14));
    }

    #[test]
    fn lyapunov_rejects_unstable() {
        let f = DMat::from_element(1, 1, 1.1);
        assert!(matches!(dlyap(&f, &DMat::identity(1, 1)), Err(Error::NotSchur(_))));
    }

    #[test]
    fn modal_directions_are_left_invariant() {
        let f = DMat::from_row_slice(3, 3, &[0.9, 0.2, 0.0, -0.2, 0.9, 0.1, 0.0, 0.0, 0.5]);
        let dirs = modal_directions(&f).unwrap();
        for d in dirs {
            match d {
                ModalDirection::Real { t, modulus } => {
                    let ft = f.transpose() * &t;
                    let lam: f64 = ft.dot(&t);
                    assert!((ft - &t * lam).norm() < 1e-10);
                    assert!(close(lam.abs(), modulus, 1e-10));
                }
                ModalDirection::Plane { u, v, .. } => {
                    let basis = DMat::from_columns(&[u.clone(), v.clone()]);
                    let proj = &basis * pinv(&basis);
                    let fu = f.transpose() * &u;
                    assert!((&proj * &fu - &fu).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn defective_matrix_has_no_modal_basis() {
        let f = DMat::from_row_slice(2, 2, &[0.5, 1.0, 0.0, 0.5]);
        assert!(modal_directions(&f).is_none());
    }
}
