//! Second-order finite-difference Dirichlet solvers on box grids.
//!
//! Unknowns are the interior nodes. GMRES is right-preconditioned with the
//! exact inverse of the constant-drift operator obtained by averaging the
//! drift, applied by sine transforms.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::fft::Dst3;
use crate::grid::{ComplexField3, Grid3};
use crate::krylov::{gmres, norm, GmresSettings};

type C64 = Complex64;

pub const PDE_TOLERANCE: f64 = 1e-8;
pub const PDE_MAX_ITER: usize = 2000;
/// Cell Péclet number above which a warning is logged.
pub const PECLET_WARN: f64 = 2.0;

/// `diffusion * Lap(q) + drift_coefficient * drift . grad(q) = rhs` in the
/// interior, `q = boundary` on every face.
#[derive(Clone, Debug)]
pub struct DirichletProblem {
    pub grid: Grid3,
    pub diffusion: f64,
    pub drift_coefficient: f64,
    pub drift: Option<[ComplexField3; 3]>,
    /// Only interior entries are read.
    pub rhs: ComplexField3,
    /// Only boundary entries are read.
    pub boundary: ComplexField3,
    /// One-sided differences for the drift, chosen by the sign of its real part.
    pub upwind: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub peclet: f64,
}

impl DirichletProblem {
    pub fn laplace(boundary: ComplexField3) -> Self {
        let grid = boundary.grid().clone();
        Self {
            rhs: ComplexField3::filled(grid.clone(), C64::default()),
            grid,
            diffusion: 1.0,
            drift_coefficient: 0.0,
            drift: None,
            boundary,
            upwind: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.diffusion > 0.0 && self.diffusion.is_finite()) {
            return invalid(format!("diffusion must be > 0, got {}", self.diffusion));
        }
        if self.grid.counts().iter().any(|&c| c < 3) {
            return invalid("a Dirichlet problem needs at least one interior node per axis");
        }
        let same = |f: &ComplexField3| f.grid() == &self.grid;
        if !same(&self.rhs) || !same(&self.boundary) || self.drift.as_ref().is_some_and(|d| !d.iter().all(same)) {
            return invalid("problem fields must share the problem grid");
        }
        let finite = |f: &ComplexField3| f.all_finite();
        if !finite(&self.rhs) || !finite(&self.boundary) || self.drift.as_ref().is_some_and(|d| !d.iter().all(finite)) {
            return Err(Error::NonFinite("Dirichlet problem data".into()));
        }
        Ok(())
    }

    /// `max |c drift_a| h_a / (2 diffusion)`.
    pub fn peclet(&self) -> f64 {
        let Some(d) = &self.drift else { return 0.0 };
        let h = self.grid.spacing();
        (0..3)
            .map(|a| {
                let m = d[a].values().iter().map(|v| v.norm()).fold(0.0, f64::max);
                (self.drift_coefficient * m).abs() * h[a] / (2.0 * self.diffusion)
            })
            .fold(0.0, f64::max)
    }

    /// Interior mean of `drift_coefficient * drift`, per axis.
    fn mean_drift(&self) -> [C64; 3] {
        let Some(d) = &self.drift else {
            return [C64::default(); 3];
        };
        let g = &self.grid;
        let [n0, n1, n2] = g.counts();
        let mut sum = [C64::default(); 3];
        for k in 1..n2 - 1 {
            for j in 1..n1 - 1 {
                for i in 1..n0 - 1 {
                    let p = g.index(i, j, k);
                    for a in 0..3 {
                        sum[a] += d[a].values()[p];
                    }
                }
            }
        }
        let count = ((n0 - 2) * (n1 - 2) * (n2 - 2)) as f64;
        sum.map(|v| self.drift_coefficient * v / count)
    }

    fn interior_counts(&self) -> [usize; 3] {
        self.grid.counts().map(|c| c - 2)
    }

    /// Applies the difference operator at interior nodes of a full-grid array.
    fn apply_full(&self, q: &[C64], out: &mut [C64]) {
        let g = &self.grid;
        let [n0, n1, _] = g.counts();
        let [m0, m1, m2] = self.interior_counts();
        let h = g.spacing();
        let inv2 = h.map(|v| self.diffusion / (v * v));
        let diag = -2.0 * (inv2[0] + inv2[1] + inv2[2]);
        let stride = [1, n0, n0 * n1];
        let c = self.drift_coefficient;
        out.par_chunks_mut(m0 * m1).enumerate().for_each(|(kk, slab)| {
            let k = kk + 1;
            for j in 1..=m1 {
                for i in 1..=m0 {
                    let p = g.index(i, j, k);
                    let mut s = diag * q[p];
                    for a in 0..3 {
                        s += inv2[a] * (q[p + stride[a]] + q[p - stride[a]]);
                    }
                    if let Some(d) = &self.drift {
                        for a in 0..3 {
                            let b = c * d[a].values()[p];
                            if b == C64::default() {
                                continue;
                            }
                            let grad = if self.upwind {
                                if b.re >= 0.0 {
                                    (q[p + stride[a]] - q[p]) / h[a]
                                } else {
                                    (q[p] - q[p - stride[a]]) / h[a]
                                }
                            } else {
                                (q[p + stride[a]] - q[p - stride[a]]) / (2.0 * h[a])
                            };
                            s += b * grad;
                        }
                    }
                    slab[(i - 1) + m0 * (j - 1)] = s;
                }
            }
        });
        debug_assert_eq!(out.len(), m0 * m1 * m2);
    }

    fn embed(&self, x: &[C64], full: &mut [C64]) {
        let g = &self.grid;
        let [m0, m1, m2] = self.interior_counts();
        for k in 0..m2 {
            for j in 0..m1 {
                let start = g.index(1, j + 1, k + 1);
                full[start..start + m0].copy_from_slice(&x[m0 * (j + m1 * k)..][..m0]);
            }
        }
    }

    fn interior_values(&self, f: &ComplexField3) -> Vec<C64> {
        let g = &self.grid;
        let [m0, m1, m2] = self.interior_counts();
        let mut out = Vec::with_capacity(m0 * m1 * m2);
        for k in 0..m2 {
            for j in 0..m1 {
                let start = g.index(1, j + 1, k + 1);
                out.extend_from_slice(&f.values()[start..start + m0]);
            }
        }
        out
    }

    fn boundary_only(&self) -> Vec<C64> {
        let g = &self.grid;
        let mut v = self.boundary.values().to_vec();
        let [m0, m1, m2] = self.interior_counts();
        for k in 0..m2 {
            for j in 0..m1 {
                let start = g.index(1, j + 1, k + 1);
                v[start..start + m0].iter_mut().for_each(|x| *x = C64::default());
            }
        }
        v
    }

    /// Right-hand side with the Dirichlet data moved over.
    fn reduced_rhs(&self) -> Vec<C64> {
        let qb = self.boundary_only();
        let mut lb = vec![C64::default(); self.interior_counts().iter().product()];
        self.apply_full(&qb, &mut lb);
        self.interior_values(&self.rhs)
            .into_iter()
            .zip(lb)
            .map(|(r, l)| r - l)
            .collect()
    }

    /// Relative residual of a full-grid candidate, recomputed from the stencil.
    pub fn residual(&self, q: &ComplexField3) -> f64 {
        let mut full = self.boundary_only();
        let x = self.interior_values(q);
        self.embed(&x, &mut full);
        let mut lq = vec![C64::default(); x.len()];
        self.apply_full(&full, &mut lq);
        let rhs = self.interior_values(&self.rhs);
        let r: Vec<C64> = lq.iter().zip(&rhs).map(|(a, b)| a - b).collect();
        let scale = norm(&self.reduced_rhs()).max(norm(&rhs));
        if scale == 0.0 {
            norm(&r)
        } else {
            norm(&r) / scale
        }
    }
}

/// Exact inverse of the centered operator with constant drift and homogeneous
/// Dirichlet data. Per axis the tridiagonal stencil `(A-, diag, A+)` becomes
/// symmetric after scaling node `j` by `rho^j`, `rho^2 = A- / A+`, and is then
/// diagonalized by sine transforms. Only the phase of `rho` is kept so the
/// scaling stays bounded; the inverse is exact when `|A+| = |A-|`.
struct ConstantDriftInverse {
    dst: Dst3,
    m: [usize; 3],
    inv_eig: Vec<C64>,
    scale: [Vec<C64>; 3],
}

impl ConstantDriftInverse {
    fn new(m: [usize; 3], h: [f64; 3], diffusion: f64, drift: [C64; 3]) -> Self {
        let mut scale: [Vec<C64>; 3] = Default::default();
        let mut eig: [Vec<C64>; 3] = Default::default();
        for a in 0..3 {
            let d = diffusion / (h[a] * h[a]);
            let plus = d + drift[a] / (2.0 * h[a]);
            let minus = d - drift[a] / (2.0 * h[a]);
            let ratio = minus / plus;
            let rho = if ratio.norm() > 0.0 && ratio.is_finite() {
                C64::from_polar(1.0, 0.5 * ratio.arg())
            } else {
                C64::new(1.0, 0.0)
            };
            let off = 0.5 * (plus * rho + minus / rho);
            scale[a] = (0..m[a]).map(|j| rho.powu(j as u32 + 1)).collect();
            eig[a] = (0..m[a])
                .map(|j| {
                    let c = (std::f64::consts::PI * (j + 1) as f64 / (m[a] + 1) as f64).cos();
                    -2.0 * d + 2.0 * off * c
                })
                .collect();
        }
        let norm = m.iter().map(|&v| (v + 1) as f64 / 2.0).product::<f64>();
        let mut inv_eig = Vec::with_capacity(m[0] * m[1] * m[2]);
        for c in &eig[2] {
            for b in &eig[1] {
                for a in &eig[0] {
                    let l = (a + b + c) * norm;
                    // a vanishing eigenvalue means the constant-coefficient problem is
                    // singular; leave that mode to the Krylov iteration
                    inv_eig.push(if l.norm() > 1e-300 { 1.0 / l } else { C64::default() });
                }
            }
        }
        Self {
            dst: Dst3::new(m),
            m,
            inv_eig,
            scale,
        }
    }

    fn scale_by(&self, y: &mut [C64], inverse: bool) {
        let [m0, m1, _] = self.m;
        let s = &self.scale;
        y.par_chunks_mut(m0 * m1).enumerate().for_each(|(k, slab)| {
            for j in 0..m1 {
                for i in 0..m0 {
                    let f = s[0][i] * s[1][j] * s[2][k];
                    let v = &mut slab[i + m0 * j];
                    *v = if inverse { *v / f } else { *v * f };
                }
            }
        });
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        y.copy_from_slice(x);
        self.scale_by(y, true);
        self.dst.apply(y);
        y.par_iter_mut().zip(self.inv_eig.par_iter()).for_each(|(v, e)| *v *= e);
        self.dst.apply(y);
        self.scale_by(y, false);
    }
}

/// Solves the problem by preconditioned GMRES. Non-convergence is reported in
/// the report with the best iterate returned.
pub fn solve_drift(problem: &DirichletProblem) -> Result<(ComplexField3, SolveReport)> {
    problem.validate()?;
    let peclet = problem.peclet();
    if peclet > PECLET_WARN {
        log::warn!("cell Péclet number {peclet:.2} exceeds {PECLET_WARN}; centered differences may oscillate");
    }
    let m = problem.interior_counts();
    let b = problem.reduced_rhs();
    let pre = ConstantDriftInverse::new(m, problem.grid.spacing(), problem.diffusion, problem.mean_drift());
    let mut full = vec![C64::default(); problem.grid.len()];
    let full_cell = std::sync::Mutex::new(&mut full);
    let apply = |x: &[C64], y: &mut [C64]| {
        let mut f = full_cell.lock().expect("scratch lock");
        problem.embed(x, &mut f);
        problem.apply_full(&f, y);
    };
    let precond = |x: &[C64], y: &mut [C64]| pre.apply(x, y);
    let mut x = vec![C64::default(); b.len()];
    let settings = GmresSettings {
        tol: PDE_TOLERANCE,
        max_iter: PDE_MAX_ITER,
        restart: 60,
    };
    let out = gmres(apply, Some(&precond), &b, &mut x, &settings);
    let mut q = problem.boundary_only();
    problem.embed(&x, &mut q);
    let field = ComplexField3::from_values(problem.grid.clone(), q)?;
    if !field.all_finite() {
        return Err(Error::NonFinite("Dirichlet solution".into()));
    }
    if !out.converged {
        log::warn!(
            "Dirichlet solve stopped at residual {:.3e} after {} iterations",
            out.residual,
            out.iterations
        );
    }
    Ok((
        field,
        SolveReport {
            iterations: out.iterations,
            residual: out.residual,
            converged: out.converged,
            peclet,
        },
    ))
}

pub fn solve_laplace(boundary: &ComplexField3) -> Result<(ComplexField3, SolveReport)> {
    solve_drift(&DirichletProblem::laplace(boundary.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundingBox;

    fn grid(n: usize) -> Grid3 {
        Grid3::new(
            [n, n + 1, n + 2],
            BoundingBox::new([-1.0, -1.2, -0.8], [1.0, 0.9, 1.1]).unwrap(),
        )
        .unwrap()
    }

    fn traced(g: &Grid3, f: impl Fn([f64; 3]) -> C64) -> ComplexField3 {
        ComplexField3::from_fn(g.clone(), f)
    }

    fn max_err(a: &ComplexField3, b: &ComplexField3) -> f64 {
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn laplace_examples() {
        let g = grid(9);
        let c = C64::new(0.3, -2.0);
        let (q, rep) = solve_laplace(&ComplexField3::filled(g.clone(), c)).unwrap();
        assert!(rep.converged && rep.iterations <= 2);
        assert!(q.values().iter().all(|v| (v - c).norm() < 1e-10));

        let exact = traced(&g, |x| C64::new(x[0] * x[0] - x[1] * x[1], 0.0));
        let (q, _) = solve_laplace(&exact).unwrap();
        assert!(max_err(&q, &exact) < 1e-9);
        assert!(q.values().iter().all(|v| v.im.abs() <= 1e-12));

        let exact = traced(&g, |x| C64::new(x[2], 0.0));
        let (q, _) = solve_laplace(&exact).unwrap();
        assert!(max_err(&q, &exact) < 1e-10);
    }

    fn manufactured(n: usize, upwind: bool) -> f64 {
        let g = Grid3::new([n; 3], BoundingBox::new([-1.0, -1.2, -0.8], [1.0, 0.9, 1.1]).unwrap()).unwrap();
        let qs = |x: [f64; 3]| C64::from_polar(1.0, x[0] + x[2]);
        let drift_fn = |x: [f64; 3]| [C64::new(0.5, x[1]), C64::new(x[0], -0.2), C64::new(0.0, 1.0)];
        let drift = [0, 1, 2].map(|a| traced(&g, |x| drift_fn(x)[a]));
        let (dif, kc) = (0.7, 3.0);
        let rhs = traced(&g, |x| {
            let d = drift_fn(x);
            let q = qs(x);
            let grad = [C64::i() * q, C64::default(), C64::i() * q];
            dif * (-2.0) * q + kc * (d[0] * grad[0] + d[1] * grad[1] + d[2] * grad[2])
        });
        let exact = traced(&g, qs);
        let p = DirichletProblem {
            grid: g.clone(),
            diffusion: dif,
            drift_coefficient: kc,
            drift: Some(drift),
            rhs,
            boundary: exact.clone(),
            upwind,
        };
        let (q, rep) = solve_drift(&p).unwrap();
        assert!(rep.converged);
        assert!(p.residual(&q) <= PDE_TOLERANCE * 1.01);
        max_err(&q, &exact)
    }

    #[test]
    fn manufactured_second_order() {
        let (a, b) = (manufactured(9, false), manufactured(17, false));
        assert!(a < 2e-2, "{a}");
        assert!(a / b >= 3.5, "{a} {b}");
        // upwinding trades accuracy for stability
        assert!(manufactured(9, true) < 0.1);
    }

    #[test]
    fn constant_oscillatory_drift_is_preconditioned_exactly() {
        // (k/2) Lap q + k (i beta) d3 q, the vacuum form of the q equation
        let g = Grid3::new(
            [20, 18, 24],
            BoundingBox::new([-2.0, -2.0, -3.0], [2.0, 2.0, 1.0]).unwrap(),
        )
        .unwrap();
        let (k, beta) = (9.0, 4.0);
        let exact = traced(&g, |x| C64::new((x[0] * x[1]).cos(), x[2]));
        let rhs = traced(&g, |x| {
            let lap = -(x[0] * x[0] + x[1] * x[1]) * (x[0] * x[1]).cos();
            0.5 * k * lap + k * C64::new(0.0, beta) * C64::new(0.0, 1.0)
        });
        let p = DirichletProblem {
            grid: g.clone(),
            diffusion: 0.5 * k,
            drift_coefficient: k,
            drift: Some([
                traced(&g, |_| C64::default()),
                traced(&g, |_| C64::default()),
                traced(&g, |_| C64::new(0.0, beta)),
            ]),
            rhs,
            boundary: exact.clone(),
            upwind: false,
        };
        let (q, rep) = solve_drift(&p).unwrap();
        assert!(rep.converged && rep.iterations <= 3, "{rep:?}");
        let e = max_err(&q, &exact);
        assert!(e < 0.05, "{e}");
    }

    #[test]
    fn mirror_symmetry() {
        let g = grid(10);
        let field = |f: &dyn Fn([f64; 3]) -> C64| traced(&g, f);
        let rhs = |x: [f64; 3]| C64::new(x[0].sin() + x[1], x[2] * x[0]);
        let bnd = |x: [f64; 3]| C64::new(x[0] * x[0] + x[1], 0.5 * x[0]);
        let d0 = |x: [f64; 3]| C64::new(x[0], 0.3);
        let d1 = |x: [f64; 3]| C64::new(x[0] * x[0], x[2]);
        let d2 = |x: [f64; 3]| C64::new(x[1], -x[0] * x[0]);
        let mk = |s: f64| DirichletProblem {
            grid: g.clone(),
            diffusion: 1.0,
            drift_coefficient: 2.0,
            drift: Some([
                field(&|x| s * d0([s * x[0], x[1], x[2]])),
                field(&|x| d1([s * x[0], x[1], x[2]])),
                field(&|x| d2([s * x[0], x[1], x[2]])),
            ]),
            rhs: field(&|x| rhs([s * x[0], x[1], x[2]])),
            boundary: field(&|x| bnd([s * x[0], x[1], x[2]])),
            upwind: false,
        };
        let (a, _) = solve_drift(&mk(1.0)).unwrap();
        let (b, _) = solve_drift(&mk(-1.0)).unwrap();
        let n0 = g.counts()[0];
        for k in 0..g.counts()[2] {
            for j in 0..g.counts()[1] {
                for i in 0..n0 {
                    let u = a.at(i, j, k);
                    let v = b.at(n0 - 1 - i, j, k);
                    assert!((u - v).norm() <= 1e-12 * (1.0 + u.norm()), "{u} {v}");
                }
            }
        }
    }

    #[test]
    fn rejects_bad_problems() {
        let g = grid(5);
        let mut p = DirichletProblem::laplace(ComplexField3::filled(g.clone(), C64::default()));
        p.diffusion = 0.0;
        assert!(solve_drift(&p).is_err());
        let g2 = Grid3::new([2, 5, 5], BoundingBox::new([0.0; 3], [1.0; 3]).unwrap()).unwrap();
        assert!(solve_laplace(&ComplexField3::filled(g2, C64::default())).is_err());
    }
}
