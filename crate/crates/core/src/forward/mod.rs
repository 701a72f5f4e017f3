//! Volume-integral forward solver and field evaluation on planes.

mod born;
pub mod kernel;
mod mie;
pub mod oracle;
mod simulate;

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

pub use born::born_reference;
pub use kernel::{green, Convolution, GreenKernel};
pub use mie::{legendre, mie_coefficients, mie_reference, spherical_j, spherical_y, MieField};
pub use simulate::{simulate, simulation_grid, Simulation, SimulationRow};

use crate::error::{invalid, Error, Result};
use crate::grid::{ComplexField3, Grid3, PlaneGrid, RealField3, DEFAULT_MEMORY_BUDGET, KRYLOV_RESTART};
use crate::krylov::{gmres, norm, GmresSettings};
use crate::phase::ComplexPlaneData;

type C64 = Complex64;

/// `exp(i k x3)`.
pub fn incident(x: [f64; 3], k: f64) -> C64 {
    C64::from_polar(1.0, k * x[2])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub points_per_wavelength: f64,
    pub memory_budget: u64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 500,
            points_per_wavelength: 10.0,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return invalid(format!("solver tolerance must lie in (0, 1), got {}", self.tol));
        }
        if self.max_iter == 0 {
            return invalid("solver needs at least one iteration");
        }
        if !(self.points_per_wavelength >= 2.0) {
            return invalid("points per wavelength must be >= 2");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ForwardSolution {
    pub k: f64,
    pub u: ComplexField3,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Index box enclosing every node with nonzero contrast.
fn contrast_box(n2: &RealField3) -> Option<([usize; 3], [usize; 3])> {
    let g = n2.grid();
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for (idx, v) in n2.values().iter().enumerate() {
        if *v != 1.0 {
            any = true;
            let p = g.unravel(idx);
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
    }
    any.then(|| (lo, [0, 1, 2].map(|a| hi[a] - lo[a] + 1)))
}

fn extract_box<T: Copy>(grid: &Grid3, values: &[T], off: [usize; 3], counts: [usize; 3]) -> Vec<T> {
    let mut out = Vec::with_capacity(counts.iter().product());
    for k in 0..counts[2] {
        for j in 0..counts[1] {
            let start = grid.index(off[0], off[1] + j, off[2] + k);
            out.extend_from_slice(&values[start..start + counts[0]]);
        }
    }
    out
}

/// The discrete operator `u - k^2 T * ((n^2 - 1) u)` restricted to the contrast box.
pub struct LsOperator<'a> {
    k: f64,
    offset: [usize; 3],
    counts: [usize; 3],
    beta: Vec<f64>,
    inner: Convolution,
    kernel: &'a GreenKernel,
}

impl<'a> LsOperator<'a> {
    /// `None` when `n2` has no contrast. The kernel must be built for the grid of `n2`.
    pub fn new(n2: &RealField3, kernel: &'a GreenKernel) -> Option<Self> {
        let g = n2.grid();
        let k = kernel.k();
        let (offset, counts) = contrast_box(n2)?;
        let inner = Convolution::new(kernel, offset, counts, offset, counts);
        let beta = extract_box(g, n2.values(), offset, counts)
            .into_iter()
            .map(|v| v - 1.0)
            .collect();
        Some(Self {
            k,
            offset,
            counts,
            beta,
            inner,
            kernel,
        })
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn apply(&self, x: &[C64], y: &mut [C64]) {
        let w: Vec<C64> = x.par_iter().zip(self.beta.par_iter()).map(|(u, b)| u * b).collect();
        self.inner.apply(&w, y);
        let k2 = self.k * self.k;
        y.par_iter_mut()
            .zip(x.par_iter())
            .for_each(|(yi, xi)| *yi = xi - k2 * *yi);
    }

    /// `||A u - u_inc|| / ||u_inc||` over the contrast box for a full-grid field.
    pub fn relative_residual(&self, u: &ComplexField3) -> f64 {
        let g = u.grid();
        let x = extract_box(g, u.values(), self.offset, self.counts);
        let inc = self.box_incident(g);
        let mut y = vec![C64::default(); x.len()];
        self.apply(&x, &mut y);
        let r: Vec<C64> = y.iter().zip(&inc).map(|(a, b)| a - b).collect();
        norm(&r) / norm(&inc)
    }

    fn box_incident(&self, g: &Grid3) -> Vec<C64> {
        let mut out = Vec::with_capacity(self.len());
        for k in 0..self.counts[2] {
            for j in 0..self.counts[1] {
                for i in 0..self.counts[0] {
                    let x = g.coord(self.offset[0] + i, self.offset[1] + j, self.offset[2] + k);
                    out.push(incident(x, self.k));
                }
            }
        }
        out
    }
}

/// Solves `u = u_inc + k^2 G[(n^2 - 1) u]` on the grid of `n2`.
/// Non-convergence is reported through `converged = false` with the best iterate.
pub fn solve_ls(n2: &RealField3, k: f64, settings: &SolverSettings) -> Result<ForwardSolution> {
    check_request(n2, k, settings)?;
    if contrast_box(n2).is_none() {
        return Ok(vacuum_solution(n2.grid(), k));
    }
    let g = n2.grid();
    let kernel = GreenKernel::new(g.counts(), g.spacing(), k);
    solve_ls_with(n2, &kernel, settings, None)
}

fn vacuum_solution(g: &Grid3, k: f64) -> ForwardSolution {
    ForwardSolution {
        k,
        u: ComplexField3::from_fn(g.clone(), |x| incident(x, k)),
        residual: 0.0,
        iterations: 0,
        converged: true,
    }
}

fn check_request(n2: &RealField3, k: f64, settings: &SolverSettings) -> Result<()> {
    settings.validate()?;
    if !(k > 0.0 && k.is_finite()) {
        return invalid(format!("wavenumber must be positive, got {k}"));
    }
    let g = n2.grid();
    if let Some(v) = n2.values().iter().find(|v| !(**v >= 1.0 && v.is_finite())) {
        return invalid(format!("n^2 must be finite and >= 1, found {v}"));
    }
    let ppw = g.points_per_wavelength(k);
    if ppw < settings.points_per_wavelength * (1.0 - 1e-9) {
        return Err(Error::Resolution(format!(
            "{ppw:.2} points per wavelength at k = {k}, need {}",
            settings.points_per_wavelength
        )));
    }
    let needed = g.ls_memory_bytes();
    if needed > settings.memory_budget {
        return Err(Error::ResourceRefused {
            what: format!("volume solve on {:?} nodes", g.counts()),
            needed_bytes: needed,
            budget_bytes: settings.memory_budget,
        });
    }
    Ok(())
}

/// As [`solve_ls`] with a prebuilt kernel and an optional starting field.
pub fn solve_ls_with(
    n2: &RealField3,
    kernel: &GreenKernel,
    settings: &SolverSettings,
    guess: Option<&ComplexField3>,
) -> Result<ForwardSolution> {
    let k = kernel.k();
    check_request(n2, k, settings)?;
    let g = n2.grid();
    if kernel.counts() != g.counts() || kernel.spacing() != g.spacing() {
        return invalid("kernel was built for a different grid");
    }
    let u_inc = ComplexField3::from_fn(g.clone(), |x| incident(x, k));
    let Some(op) = LsOperator::new(n2, kernel) else {
        return Ok(vacuum_solution(g, k));
    };
    let [i, j, l] = g.counts().map(|c| c - 1);
    for idx in [
        op.offset,
        [
            op.offset[0] + op.counts[0] - 1,
            op.offset[1] + op.counts[1] - 1,
            op.offset[2] + op.counts[2] - 1,
        ],
    ] {
        if idx[0] == 0 || idx[1] == 0 || idx[2] == 0 || idx[0] == i || idx[1] == j || idx[2] == l {
            return invalid("contrast support touches the grid boundary");
        }
    }

    let b = op.box_incident(g);
    let mut x = match guess {
        Some(u0) if u0.grid() == g => extract_box(g, u0.values(), op.offset, op.counts),
        _ => b.clone(),
    };
    let gm = GmresSettings {
        tol: settings.tol,
        max_iter: settings.max_iter,
        restart: KRYLOV_RESTART,
    };
    let out = gmres(|a, y| op.apply(a, y), None, &b, &mut x, &gm);
    if !out.converged {
        log::warn!(
            "volume solve at k = {k} stopped at residual {:.3e} after {} iterations",
            out.residual,
            out.iterations
        );
    }

    // extend to the full grid through the same discrete operator
    let w: Vec<C64> = x.iter().zip(&op.beta).map(|(u, b)| u * b).collect();
    let to_grid = Convolution::new(op.kernel, op.offset, op.counts, [0; 3], g.counts());
    let mut scattered = vec![C64::default(); g.len()];
    to_grid.apply(&w, &mut scattered);
    let k2 = k * k;
    let values = u_inc.values().iter().zip(&scattered).map(|(a, s)| a + k2 * s).collect();
    let u = ComplexField3::from_values(g.clone(), values)?;
    if !u.all_finite() {
        return Err(Error::NonFinite("volume solution".into()));
    }
    Ok(ForwardSolution {
        k,
        u,
        residual: out.residual,
        iterations: out.iterations,
        converged: out.converged,
    })
}

/// Nodes with contrast and their quadrature weights `(n^2 - 1) u dV`.
fn sources(solution: &ForwardSolution, n2: &RealField3) -> Result<Vec<([f64; 3], C64)>> {
    if solution.u.grid() != n2.grid() {
        return invalid("solution and refractive field live on different grids");
    }
    let g = n2.grid();
    let dv = g.cell_volume();
    Ok(n2
        .values()
        .iter()
        .zip(solution.u.values())
        .enumerate()
        .filter(|(_, (v, _))| **v != 1.0)
        .map(|(idx, (v, u))| (g.coord_of(idx), (v - 1.0) * dv * u))
        .collect())
}

/// Total field on `targets` by direct quadrature of the volume integral.
pub fn evaluate_exterior(solution: &ForwardSolution, n2: &RealField3, targets: &PlaneGrid) -> Result<ComplexPlaneData> {
    let src = sources(solution, n2)?;
    let z = targets.z;
    let (zmin, zmax) = src.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (x, _)| {
        (a.min(x[2]), b.max(x[2]))
    });
    if !src.is_empty() && z >= zmin && z <= zmax {
        return invalid(format!(
            "plane z = {z} intersects the contrast support [{zmin}, {zmax}]"
        ));
    }
    let k = solution.k;
    let k2 = k * k;
    let values = (0..targets.len())
        .into_par_iter()
        .map(|p| {
            let x = targets.point(p);
            let mut s = C64::default();
            for (xi, w) in &src {
                let r = ((x[0] - xi[0]).powi(2) + (x[1] - xi[1]).powi(2) + (x[2] - xi[2]).powi(2)).sqrt();
                s += green(k, r) * w;
            }
            incident(x, k) + k2 * s
        })
        .collect();
    ComplexPlaneData::single(*targets, k, values)
}

/// Far-zone scattered field `k^2 e^{ikR} / (4 pi R) int e^{-ik xi3} (n^2 - 1) u`,
/// the same at every plane node.
pub fn far_field_plane(solution: &ForwardSolution, n2: &RealField3, plane: &PlaneGrid) -> Result<ComplexPlaneData> {
    let b = plane.half_width;
    if plane.z < 5.0 * b.max(1.0) {
        log::warn!("far-field formula used at R = {} < 5 b", plane.z);
    }
    let k = solution.k;
    let src = sources(solution, n2)?;
    let integral: C64 = src.iter().map(|(x, w)| w * C64::from_polar(1.0, -k * x[2])).sum();
    let r = plane.z;
    let value = k * k / (4.0 * PI * r) * C64::from_polar(1.0, k * r) * integral;
    ComplexPlaneData::single(*plane, k, vec![value; plane.len()])
}

/// `max |u - u_inc|^2` over the plane slice at `k`.
pub fn phi_of_k(data: &ComplexPlaneData, k: f64) -> Result<f64> {
    let slice = data.slice_at(k)?;
    let plane = data.plane();
    Ok(slice
        .iter()
        .enumerate()
        .map(|(p, u)| (u - incident(plane.point(p), k)).norm_sqr())
        .fold(0.0, f64::max))
}

/// `(m k / (4 pi R))^2`.
pub fn analytic_bound(k: f64, r: f64, sphere_count: usize) -> Result<f64> {
    if !(r > 0.0) || sphere_count == 0 {
        return invalid("bound needs R > 0 and at least one sphere");
    }
    Ok((sphere_count as f64 * k / (4.0 * PI * r)).powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundingBox;
    use crate::phantom::{build_refractive_field, MicrosphereSpec, PhantomSpec};

    fn bump_field(counts: usize, half: f64, amp: f64, radius: f64) -> RealField3 {
        let g = Grid3::new([counts; 3], BoundingBox::new([-half; 3], [half; 3]).unwrap()).unwrap();
        let phantom = PhantomSpec {
            spheres: vec![MicrosphereSpec::new([0.0; 3], radius, amp).unwrap()],
        };
        build_refractive_field(&phantom, &g).unwrap()
    }

    #[test]
    fn incident_examples() {
        assert_eq!(incident([3.0, 1.0, 0.0], 7.0), C64::new(1.0, 0.0));
        assert_eq!(incident([3.0, 1.0, 2.0], 0.0), C64::new(1.0, 0.0));
        let v = incident([0.0, 0.0, 49.5], 119.7);
        assert!((v.norm() - 1.0).abs() < 1e-15);
        assert!((119.7f64 * 49.5 - 5925.15).abs() < 1e-9);
    }

    #[test]
    fn bound_examples() {
        assert!((analytic_bound(119.6, 49.5, 1).unwrap() - 0.0370).abs() < 5e-5);
        assert!((analytic_bound(119.6, 49.5, 2).unwrap() - 0.1479).abs() < 5e-5);
        assert_eq!(analytic_bound(0.0, 49.5, 3).unwrap(), 0.0);
        assert!(analytic_bound(1.0, 0.0, 1).is_err());
    }

    #[test]
    fn vacuum_solution_is_incident() {
        let n2 = bump_field(12, 0.6, 0.0, 0.5);
        let sol = solve_ls(&n2, 5.0, &SolverSettings::default()).unwrap();
        assert_eq!(sol.iterations, 0);
        for (idx, u) in sol.u.values().iter().enumerate() {
            assert_eq!(*u, incident(n2.grid().coord_of(idx), 5.0));
        }
        let plane = PlaneGrid::new(2.0, 1.0, [4, 4]).unwrap();
        let ext = evaluate_exterior(&sol, &n2, &plane).unwrap();
        assert!(ext.values().iter().all(|v| *v == C64::from_polar(1.0, 10.0)));
        assert_eq!(phi_of_k(&ext, 5.0).unwrap(), 0.0);
        let ff = far_field_plane(&sol, &n2, &plane).unwrap();
        assert!(ff.values().iter().all(|v| *v == C64::default()));
    }

    #[test]
    fn residual_certificate_and_far_field_constancy() {
        let n2 = bump_field(16, 0.6, 0.3, 0.5);
        let sol = solve_ls(&n2, 5.0, &SolverSettings::default()).unwrap();
        assert!(sol.converged);
        let g = n2.grid();
        let kern = GreenKernel::new(g.counts(), g.spacing(), 5.0);
        let op = LsOperator::new(&n2, &kern).unwrap();
        assert!(op.relative_residual(&sol.u) <= 1e-6 * 1.01);
        let plane = PlaneGrid::new(6.0, 1.0, [3, 3]).unwrap();
        let ff = far_field_plane(&sol, &n2, &plane).unwrap();
        assert!(ff.values().iter().all(|v| *v == ff.values()[0]));
        assert!(ff.values()[0].norm() > 0.0);
    }

    #[test]
    fn refuses_coarse_grid_and_boundary_contrast() {
        let n2 = bump_field(6, 0.6, 0.3, 0.5);
        assert!(matches!(
            solve_ls(&n2, 5.0, &SolverSettings::default()),
            Err(Error::Resolution(_))
        ));
        let n2 = bump_field(16, 0.5, 0.3, 0.5);
        let mut v = n2.values().to_vec();
        v[0] = 1.5;
        let n2 = RealField3::from_values(n2.grid().clone(), v).unwrap();
        assert!(solve_ls(&n2, 5.0, &SolverSettings::default()).is_err());
    }

    #[test]
    fn plane_through_support_is_rejected() {
        let n2 = bump_field(16, 0.6, 0.3, 0.5);
        let sol = solve_ls(&n2, 5.0, &SolverSettings::default()).unwrap();
        let plane = PlaneGrid::new(0.1, 1.0, [3, 3]).unwrap();
        assert!(evaluate_exterior(&sol, &n2, &plane).is_err());
    }

    #[test]
    fn thread_count_agreement() {
        let n2 = bump_field(16, 0.6, 0.3, 0.5);
        let run = |t: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap();
            pool.install(|| solve_ls(&n2, 5.0, &SolverSettings::default()).unwrap())
        };
        let (a, b) = (run(1), run(3));
        let num: f64 =
            a.u.values()
                .iter()
                .zip(b.u.values())
                .map(|(x, y)| (x - y).norm_sqr())
                .sum();
        let den: f64 = a.u.values().iter().map(|x| x.norm_sqr()).sum();
        assert!((num / den).sqrt() <= 1e-12);
    }
}
