//! Second-order finite differences on grid fields.
//!
//! Centered differences in the interior, three-point one-sided differences on
//! the faces.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::grid::{ComplexField3, Grid3};

type C64 = Complex64;

pub type VectorField3 = [ComplexField3; 3];

/// Floor on `|u|` before taking logarithms.
pub const MODULUS_FLOOR: f64 = 1e-12;

/// Derivative along `axis` built from node differences `delta(a, b)`, which
/// stands for `value(a) - value(b)`.
fn axis_derivative<D>(grid: &Grid3, axis: usize, delta: D) -> Vec<C64>
where
    D: Fn(usize, usize) -> C64 + Sync,
{
    let counts = grid.counts();
    let h = grid.spacing()[axis];
    let stride = [1, counts[0], counts[0] * counts[1]][axis];
    let n = counts[axis];
    (0..grid.len())
        .into_par_iter()
        .map(|p| {
            let i = grid.unravel(p)[axis];
            if i == 0 {
                (4.0 * delta(p + stride, p) - delta(p + 2 * stride, p)) / (2.0 * h)
            } else if i + 1 == n {
                (delta(p - 2 * stride, p) - 4.0 * delta(p - stride, p)) / (2.0 * h)
            } else {
                delta(p + stride, p - stride) / (2.0 * h)
            }
        })
        .collect()
}

fn field(grid: &Grid3, values: Vec<C64>) -> ComplexField3 {
    ComplexField3::from_values(grid.clone(), values).expect("length matches grid")
}

/// Partial derivative along `axis`.
pub fn partial(f: &ComplexField3, axis: usize) -> ComplexField3 {
    let v = f.values();
    let g = f.grid();
    assert!(g.counts()[axis] >= 3, "need three nodes per axis");
    field(g, axis_derivative(g, axis, |a, b| v[a] - v[b]))
}

pub fn gradient(f: &ComplexField3) -> VectorField3 {
    [0, 1, 2].map(|a| partial(f, a))
}

pub fn divergence(v: &VectorField3) -> ComplexField3 {
    let g = v[0].grid();
    let parts = [0, 1, 2].map(|a| partial(&v[a], a));
    let values = (0..g.len())
        .map(|p| parts[0].values()[p] + parts[1].values()[p] + parts[2].values()[p])
        .collect();
    field(g, values)
}

/// `grad(u) / u` through differences of `log(u exp(-i k_ref x3))`, plus
/// `(0, 0, i k_ref)`; exact for the plane wave `exp(i k_ref x3)`.
pub fn log_gradient(u: &ComplexField3, k_ref: f64) -> VectorField3 {
    let g = u.grid();
    let w: Vec<C64> = u
        .values()
        .iter()
        .enumerate()
        .map(|(p, v)| {
            let z = g.coord_of(p)[2];
            let r = v * C64::from_polar(1.0, -k_ref * z);
            if r.norm() < MODULUS_FLOOR {
                C64::new(MODULUS_FLOOR, 0.0)
            } else {
                r
            }
        })
        .collect();
    let mut out = [0, 1, 2].map(|a| field(g, axis_derivative(g, a, |x, y| (w[x] / w[y]).ln())));
    let shift = C64::new(0.0, k_ref);
    out[2].values_mut().iter_mut().for_each(|v| *v += shift);
    out
}

pub fn dot(a: &VectorField3, b: &VectorField3) -> ComplexField3 {
    let g = a[0].grid();
    let values = (0..g.len())
        .map(|p| (0..3).map(|c| a[c].values()[p] * b[c].values()[p]).sum())
        .collect();
    field(g, values)
}

/// `a * x + b * y` componentwise.
pub fn axpby(a: C64, x: &VectorField3, b: C64, y: &VectorField3) -> VectorField3 {
    [0, 1, 2].map(|c| {
        let values = x[c]
            .values()
            .iter()
            .zip(y[c].values())
            .map(|(u, v)| a * u + b * v)
            .collect();
        field(x[c].grid(), values)
    })
}

pub fn constant_vector(grid: &Grid3, v: [C64; 3]) -> VectorField3 {
    v.map(|c| ComplexField3::filled(grid.clone(), c))
}
