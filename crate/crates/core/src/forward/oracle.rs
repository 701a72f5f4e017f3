//! Solver checks against the Born and partial-wave references.

use num_complex::Complex64;
use serde::Serialize;

use super::{born_reference, evaluate_exterior, incident, mie_reference, solve_ls, SolverSettings};
use crate::error::Result;
use crate::grid::{make_grid, BoundingBox, PlaneGrid, DEFAULT_MEMORY_BUDGET};
use crate::phantom::{build_hard_sphere, build_refractive_field, MicrosphereSpec, PhantomSpec};

type C64 = Complex64;

pub const BORN_K: f64 = 5.0;
pub const BORN_CONTRAST: f64 = 1e-3;
pub const BORN_RADIUS: f64 = 0.4;
pub const MIE_K: f64 = 5.0;
pub const MIE_RADIUS: f64 = 1.0;
pub const MIE_INDEX: f64 = 1.2;
/// Resolution of the independent Born quadrature.
const BORN_REFERENCE_PPW: f64 = 80.0;
const HARD_SPHERE_SUBSAMPLES: usize = 8;

fn plane() -> PlaneGrid {
    PlaneGrid {
        z: 2.0,
        half_width: 1.5,
        counts: [21, 21],
    }
}

fn rel_diff(a: &[C64], b: &[C64], scale: &[C64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = scale.iter().map(|x| x.norm_sqr()).sum();
    (num / den).sqrt()
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleRow {
    pub points_per_wavelength: f64,
    pub spacing: f64,
    /// Relative L2 error of the scattered field on the test plane.
    pub error: f64,
    pub iterations: usize,
}

fn grid_for(radius: f64, ppw: f64, k: f64) -> Result<crate::grid::Grid3> {
    // two spacings of margin so the support stays strictly inside
    let h = 2.0 * std::f64::consts::PI / (k * ppw);
    let half = radius + 2.0 * h;
    make_grid(BoundingBox::new([-half; 3], [half; 3])?, ppw, k, DEFAULT_MEMORY_BUDGET)
}

/// Smooth bump of peak contrast 1e-3 at k = 5: solver vs first Born term.
pub fn born_oracle(ppw: f64) -> Result<OracleRow> {
    born_oracle_with_radius(ppw, BORN_RADIUS)
}

pub fn born_oracle_with_radius(ppw: f64, radius: f64) -> Result<OracleRow> {
    let phantom = PhantomSpec {
        spheres: vec![MicrosphereSpec::new([0.0; 3], radius, BORN_CONTRAST)?],
    };
    let plane = plane();
    let fine = grid_for(radius, BORN_REFERENCE_PPW, BORN_K)?;
    let reference = born_reference(&build_refractive_field(&phantom, &fine)?, BORN_K, &plane)?;

    let grid = grid_for(radius, ppw, BORN_K)?;
    let n2 = build_refractive_field(&phantom, &grid)?;
    let settings = SolverSettings {
        points_per_wavelength: ppw,
        ..SolverSettings::default()
    };
    let sol = solve_ls(&n2, BORN_K, &settings)?;
    let got = evaluate_exterior(&sol, &n2, &plane)?;
    let scattered: Vec<C64> = reference
        .values()
        .iter()
        .enumerate()
        .map(|(p, v)| v - incident(plane.point(p), BORN_K))
        .collect();
    Ok(OracleRow {
        points_per_wavelength: ppw,
        spacing: grid.max_spacing(),
        error: rel_diff(got.values(), reference.values(), &scattered),
        iterations: sol.iterations,
    })
}

/// Homogeneous sphere `n = 1.2`, `k r = 5`: solver vs partial-wave series.
pub fn mie_oracle(ppw: f64) -> Result<(OracleRow, f64)> {
    let plane = plane();
    let grid = grid_for(MIE_RADIUS, ppw, MIE_K)?;
    let n2 = build_hard_sphere([0.0; 3], MIE_RADIUS, MIE_INDEX, &grid, HARD_SPHERE_SUBSAMPLES)?;
    let settings = SolverSettings {
        points_per_wavelength: ppw,
        ..SolverSettings::default()
    };
    let sol = solve_ls(&n2, MIE_K, &settings)?;
    let got = evaluate_exterior(&sol, &n2, &plane)?;
    let points: Vec<[f64; 3]> = (0..plane.len()).map(|p| plane.point(p)).collect();
    let reference = mie_reference(MIE_RADIUS, MIE_INDEX, MIE_K, &points, None)?;
    let scattered: Vec<C64> = reference
        .values
        .iter()
        .zip(&points)
        .map(|(v, x)| v - incident(*x, MIE_K))
        .collect();
    Ok((
        OracleRow {
            points_per_wavelength: ppw,
            spacing: grid.max_spacing(),
            error: rel_diff(got.values(), &reference.values, &scattered),
            iterations: sol.iterations,
        },
        reference.tail_bound,
    ))
}
