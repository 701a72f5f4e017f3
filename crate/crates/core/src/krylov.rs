//! Restarted GMRES for complex non-Hermitian systems.
//!
//! Reductions use fixed-size chunks so results do not depend on the number of
//! worker threads.

use num_complex::Complex64;
use rayon::prelude::*;

type C64 = Complex64;

const CHUNK: usize = 8192;

/// `sum conj(a_i) b_i`, bitwise reproducible across thread counts.
pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    debug_assert_eq!(a.len(), b.len());
    let partials: Vec<C64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u.conj() * v).sum::<C64>())
        .collect();
    partials.into_iter().sum()
}

pub fn norm(a: &[C64]) -> f64 {
    let partials: Vec<f64> = a
        .par_chunks(CHUNK)
        .map(|x| x.iter().map(|u| u.norm_sqr()).sum::<f64>())
        .collect();
    partials.into_iter().sum::<f64>().sqrt()
}

pub fn norm_real(a: &[f64]) -> f64 {
    let partials: Vec<f64> = a
        .par_chunks(CHUNK)
        .map(|x| x.iter().map(|u| u * u).sum::<f64>())
        .collect();
    partials.into_iter().sum::<f64>().sqrt()
}

#[derive(Clone, Copy, Debug)]
pub struct GmresSettings {
    /// Relative residual target `||b - Ax|| / ||b||`.
    pub tol: f64,
    /// Cap on operator applications.
    pub max_iter: usize,
    pub restart: usize,
}

impl Default for GmresSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 500,
            restart: crate::grid::KRYLOV_RESTART,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GmresOutcome {
    pub iterations: usize,
    /// Explicitly recomputed relative residual of the returned iterate.
    pub residual: f64,
    pub converged: bool,
}

/// Right preconditioner: writes an approximate `A^-1 x` into the second slice.
pub type Preconditioner<'a> = &'a (dyn Fn(&[C64], &mut [C64]) + Sync);

/// Solves `A x = b` starting from the contents of `x`. `precond`, if given,
/// applies an approximate inverse of `A` (right preconditioning).
pub fn gmres<A>(
    apply: A,
    precond: Option<Preconditioner<'_>>,
    b: &[C64],
    x: &mut [C64],
    settings: &GmresSettings,
) -> GmresOutcome
where
    A: Fn(&[C64], &mut [C64]),
{
    let n = b.len();
    assert_eq!(x.len(), n);
    let b_norm = norm(b);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = C64::default());
        return GmresOutcome {
            iterations: 0,
            residual: 0.0,
            converged: true,
        };
    }
    let m = settings.restart.max(1).min(n.max(1));
    let mut total = 0usize;
    let mut r = vec![C64::default(); n];
    let mut w = vec![C64::default(); n];
    let mut z = vec![C64::default(); n];

    let residual_into = |x: &[C64], r: &mut [C64]| {
        apply(x, r);
        r.par_iter_mut().zip(b.par_iter()).for_each(|(ri, bi)| *ri = bi - *ri);
    };

    loop {
        residual_into(x, &mut r);
        let beta = norm(&r);
        let rel = beta / b_norm;
        if rel <= settings.tol || total >= settings.max_iter || !rel.is_finite() {
            return GmresOutcome {
                iterations: total,
                residual: rel,
                converged: rel <= settings.tol,
            };
        }

        let mut basis: Vec<Vec<C64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut h = vec![vec![C64::default(); m]; m + 1];
        let mut cs = vec![0.0f64; m];
        let mut sn = vec![C64::default(); m];
        let mut g = vec![C64::default(); m + 1];
        g[0] = C64::new(beta, 0.0);
        let mut cols = 0;

        for j in 0..m {
            let vj = &basis[j];
            let zin: &[C64] = match precond {
                Some(p) => {
                    p(vj, &mut z);
                    &z
                }
                None => vj,
            };
            apply(zin, &mut w);
            total += 1;

            for (i, vi) in basis.iter().enumerate() {
                let hij = dot(vi, &w);
                h[i][j] = hij;
                w.par_iter_mut().zip(vi.par_iter()).for_each(|(wk, vk)| *wk -= hij * vk);
            }
            let hn = norm(&w);
            h[j + 1][j] = C64::new(hn, 0.0);

            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i].conj() * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let a = h[j][j];
            let d = (a.norm_sqr() + hn * hn).sqrt();
            if d == 0.0 {
                cs[j] = 1.0;
                sn[j] = C64::default();
            } else if a.norm() == 0.0 {
                cs[j] = 0.0;
                sn[j] = C64::new(1.0, 0.0);
            } else {
                cs[j] = a.norm() / d;
                sn[j] = (a / a.norm()) * hn / d;
            }
            h[j][j] = cs[j] * a + sn[j] * h[j + 1][j];
            h[j + 1][j] = C64::default();
            g[j + 1] = -sn[j].conj() * g[j];
            g[j] *= cs[j];
            cols = j + 1;

            let est = g[j + 1].norm() / b_norm;
            if est <= settings.tol || total >= settings.max_iter || hn <= 1e-14 * beta {
                break;
            }
            basis.push(w.iter().map(|v| v / hn).collect());
        }

        // back substitution for the least-squares coefficients
        let mut y = vec![C64::default(); cols];
        for i in (0..cols).rev() {
            let mut s = g[i];
            for k in i + 1..cols {
                s -= h[i][k] * y[k];
            }
            y[i] = if h[i][i].norm() > 0.0 {
                s / h[i][i]
            } else {
                C64::default()
            };
        }
        let mut update = vec![C64::default(); n];
        for (yi, vi) in y.iter().zip(&basis) {
            update.par_iter_mut().zip(vi.par_iter()).for_each(|(u, v)| *u += yi * v);
        }
        match precond {
            Some(p) => {
                p(&update, &mut z);
                x.par_iter_mut().zip(z.par_iter()).for_each(|(xi, zi)| *xi += zi);
            }
            None => x.par_iter_mut().zip(update.par_iter()).for_each(|(xi, u)| *xi += u),
        }
    }
}
