//! Synthetic measurements: volume solves at every wavenumber, then exterior
//! evaluation on the measurement plane.

use serde::Serialize;

use super::{evaluate_exterior, incident, solve_ls_with, ForwardSolution, GreenKernel, SolverSettings};
use crate::error::{Error, Result};
use crate::grid::{make_grid, BoundingBox, Grid3, PlaneGrid, RealField3};
use crate::phantom::{build_refractive_field, PhantomSpec};
use crate::phase::ComplexPlaneData;

/// Per-wavenumber solver statistics.
#[derive(Clone, Debug, Serialize)]
pub struct SimulationRow {
    pub k: f64,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct Simulation {
    /// Total field on the plane, one slice per wavenumber in the given order.
    pub data: ComplexPlaneData,
    pub rows: Vec<SimulationRow>,
    /// `None` for an empty phantom.
    pub grid: Option<Grid3>,
}

/// Grid over the phantom support plus two spacings, resolving `k_max`.
/// Refuses grids whose solve would exceed the memory budget.
pub fn simulation_grid(phantom: &PhantomSpec, k_max: f64, settings: &SolverSettings) -> Result<Option<Grid3>> {
    let Some(support) = phantom.support_box() else {
        return Ok(None);
    };
    let h = 2.0 * std::f64::consts::PI / (k_max * settings.points_per_wavelength);
    let bbox = BoundingBox::new(support.min.map(|v| v - 2.0 * h), support.max.map(|v| v + 2.0 * h))?;
    make_grid(bbox, settings.points_per_wavelength, k_max, settings.memory_budget).map(Some)
}

/// Solves the volume equation at each `k` and evaluates the total field on `plane`.
pub fn simulate(phantom: &PhantomSpec, plane: &PlaneGrid, ks: &[f64], settings: &SolverSettings) -> Result<Simulation> {
    settings.validate()?;
    let k_max = ks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if ks.is_empty() || !(k_max > 0.0) {
        return Err(Error::InvalidInput("need at least one positive wavenumber".into()));
    }
    let grid = simulation_grid(phantom, k_max, settings)?;
    let mut slices = Vec::with_capacity(ks.len());
    let mut rows = Vec::with_capacity(ks.len());
    let n2: Option<RealField3> = grid.as_ref().map(|g| build_refractive_field(phantom, g)).transpose()?;
    for &k in ks {
        let (slice, row) = match (&grid, &n2) {
            (Some(g), Some(n2)) => {
                let kernel = GreenKernel::new(g.counts(), g.spacing(), k);
                let sol: ForwardSolution = solve_ls_with(n2, &kernel, settings, None)?;
                if !sol.converged {
                    return Err(Error::NonConvergence {
                        solver: "volume solve",
                        residual: sol.residual,
                        iterations: sol.iterations,
                    });
                }
                let row = SimulationRow {
                    k,
                    iterations: sol.iterations,
                    residual: sol.residual,
                    converged: sol.converged,
                };
                (evaluate_exterior(&sol, n2, plane)?, row)
            }
            _ => {
                let values = (0..plane.len()).map(|p| incident(plane.point(p), k)).collect();
                let row = SimulationRow {
                    k,
                    iterations: 0,
                    residual: 0.0,
                    converged: true,
                };
                (ComplexPlaneData::single(*plane, k, values)?, row)
            }
        };
        log::debug!("simulated k = {k} in {} iterations", row.iterations);
        slices.push(slice);
        rows.push(row);
    }
    Ok(Simulation {
        data: ComplexPlaneData::stack(slices)?,
        rows,
        grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DEFAULT_MEMORY_BUDGET;
    use crate::phantom::{paper_preset, MicrosphereSpec, PresetCase};
    use num_complex::Complex64;

    #[test]
    fn vacuum_gives_plane_waves() {
        let plane = PlaneGrid::new(3.0, 1.0, [5, 5]).unwrap();
        let sim = simulate(
            &PhantomSpec { spheres: vec![] },
            &plane,
            &[2.0, 1.5],
            &SolverSettings::default(),
        )
        .unwrap();
        assert!(sim.grid.is_none());
        for (i, k) in [2.0, 1.5].into_iter().enumerate() {
            let e = Complex64::from_polar(1.0, 3.0 * k);
            assert!(sim.data.slice(i).iter().all(|v| (v - e).norm() < 1e-15));
        }
    }

    #[test]
    fn paper_scale_is_refused() {
        let p = paper_preset(PresetCase::OneSphere, 1.0).unwrap();
        let err = simulate(
            &p.phantom,
            &p.geometry.measurement,
            p.band.values(),
            &SolverSettings::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::ResourceRefused { .. }), "{err}");
    }

    #[test]
    fn small_sphere_scatters_and_grid_contains_it() {
        let phantom = PhantomSpec {
            spheres: vec![MicrosphereSpec::new([0.2, 0.0, 0.0], 0.5, 1.04).unwrap()],
        };
        let settings = SolverSettings {
            memory_budget: DEFAULT_MEMORY_BUDGET,
            ..SolverSettings::default()
        };
        let g = simulation_grid(&phantom, 4.0, &settings).unwrap().unwrap();
        assert!(g.bbox().min[0] < -0.3 && g.bbox().max[0] > 0.7);
        let plane = PlaneGrid::new(5.0, 1.0, [4, 4]).unwrap();
        let sim = simulate(&phantom, &plane, &[4.0], &settings).unwrap();
        assert!(sim.rows[0].converged);
        let e = Complex64::from_polar(1.0, 20.0);
        assert!(sim.data.values().iter().all(|v| (v - e).norm() > 1e-3));
    }
}
