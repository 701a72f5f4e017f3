//! First Born approximation by direct quadrature.

use num_complex::Complex64;
use rayon::prelude::*;

use super::kernel::green;
use crate::error::Result;
use crate::grid::{PlaneGrid, RealField3};
use crate::phase::ComplexPlaneData;

type C64 = Complex64;

/// `exp(i k x3) + k^2 sum_j G(x - xi_j) (n^2 - 1)_j exp(i k xi_j3) dV` on `plane`,
/// summed over the nodes of `n2`'s own grid.
pub fn born_reference(n2: &RealField3, k: f64, plane: &PlaneGrid) -> Result<ComplexPlaneData> {
    let grid = n2.grid();
    let dv = grid.cell_volume();
    let sources: Vec<([f64; 3], C64)> = n2
        .values()
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 1.0)
        .map(|(idx, v)| {
            let x = grid.coord_of(idx);
            (x, (v - 1.0) * dv * C64::from_polar(1.0, k * x[2]))
        })
        .collect();
    let k2 = k * k;
    let values = (0..plane.len())
        .into_par_iter()
        .map(|p| {
            let x = plane.point(p);
            let mut s = C64::default();
            for (xi, w) in &sources {
                let r = ((x[0] - xi[0]).powi(2) + (x[1] - xi[1]).powi(2) + (x[2] - xi[2]).powi(2)).sqrt();
                s += green(k, r) * w;
            }
            C64::from_polar(1.0, k * x[2]) + k2 * s
        })
        .collect();
    ComplexPlaneData::single(*plane, k, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{BoundingBox, Grid3};
    use crate::phantom::{build_refractive_field, MicrosphereSpec, PhantomSpec};

    fn field(amp: f64) -> RealField3 {
        let g = Grid3::new([15; 3], BoundingBox::new([-0.6; 3], [0.6; 3]).unwrap()).unwrap();
        let phantom = PhantomSpec {
            spheres: vec![MicrosphereSpec::new([0.0; 3], 0.5, amp).unwrap()],
        };
        build_refractive_field(&phantom, &g).unwrap()
    }

    #[test]
    fn vacuum_is_incident() {
        let plane = PlaneGrid::new(2.0, 1.0, [5, 5]).unwrap();
        let u = born_reference(&field(0.0), 5.0, &plane).unwrap();
        assert!(u
            .values()
            .iter()
            .all(|v| (v - C64::from_polar(1.0, 10.0)).norm() == 0.0));
    }

    #[test]
    fn linear_in_amplitude() {
        let plane = PlaneGrid::new(2.0, 1.0, [5, 5]).unwrap();
        let inc = C64::from_polar(1.0, 10.0);
        let a = born_reference(&field(1e-3), 5.0, &plane).unwrap();
        let b = born_reference(&field(2e-3), 5.0, &plane).unwrap();
        for (u, v) in a.values().iter().zip(b.values()) {
            let (su, sv) = (u - inc, v - inc);
            assert!((sv - 2.0 * su).norm() < 1e-9 * sv.norm());
        }
    }
}
