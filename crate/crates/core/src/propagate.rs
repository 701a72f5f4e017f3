//! Angular-spectrum propagation between planes and Dirichlet data on the domain boundary.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::fft::Fft2;
use crate::grid::{ComplexField3, Grid3, PlaneGrid};
use crate::phase::ComplexPlaneData;

type C64 = Complex64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropagationOptions {
    /// Zero-extension factor per axis; 1 treats the plane as periodic.
    pub padding: usize,
    /// Propagate the plane mean separately as an exact plane wave.
    pub split_mean: bool,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        Self {
            padding: 2,
            split_mean: true,
        }
    }
}

fn propagate_slice(values: &[C64], plane: &PlaneGrid, k: f64, dz: f64, opts: &PropagationOptions) -> Vec<C64> {
    let [m0, m1] = plane.counts;
    let mean = if opts.split_mean {
        values.iter().sum::<C64>() / values.len() as f64
    } else {
        C64::default()
    };
    let p = [m0 * opts.padding, m1 * opts.padding];
    let mut buf = vec![C64::default(); p[0] * p[1]];
    for j in 0..m1 {
        for i in 0..m0 {
            buf[i + p[0] * j] = values[i + m0 * j] - mean;
        }
    }
    let fft = Fft2::new(p);
    fft.forward(&mut buf);
    let h = plane.spacing();
    let freq = |a: usize, i: usize| {
        let s = if i <= p[a] / 2 {
            i as f64
        } else {
            i as f64 - p[a] as f64
        };
        2.0 * PI * s / (p[a] as f64 * h[a])
    };
    let k2 = k * k;
    buf.par_chunks_mut(p[0]).enumerate().for_each(|(j, row)| {
        let q1 = freq(1, j);
        for (i, v) in row.iter_mut().enumerate() {
            let q0 = freq(0, i);
            let t = k2 - q0 * q0 - q1 * q1;
            *v = if t > 0.0 {
                *v * C64::from_polar(1.0, t.sqrt() * dz)
            } else {
                C64::default()
            };
        }
    });
    fft.inverse(&mut buf);
    let shifted_mean = mean * C64::from_polar(1.0, k * dz);
    let mut out = Vec::with_capacity(m0 * m1);
    for j in 0..m1 {
        out.extend(buf[p[0] * j..p[0] * j + m0].iter().map(|v| v + shifted_mean));
    }
    out
}

/// Moves every wavenumber slice of `data` to the plane `x3 = target_z`.
/// Propagating modes get `exp(i k3 dz)`, evanescent modes are dropped.
pub fn angular_spectrum(data: &ComplexPlaneData, target_z: f64, opts: &PropagationOptions) -> Result<ComplexPlaneData> {
    if opts.padding == 0 {
        return invalid("padding factor must be >= 1");
    }
    let plane = *data.plane();
    let dz = target_z - plane.z;
    let mut values = Vec::with_capacity(data.values().len());
    for (i, &k) in data.ks().iter().enumerate() {
        if !(k > 0.0) {
            return invalid(format!("wavenumber must be positive, got {k}"));
        }
        values.extend(propagate_slice(data.slice(i), &plane, k, dz, opts));
    }
    ComplexPlaneData::new(plane.at_z(target_z), data.ks().to_vec(), values)
}

/// `[p(z + eps) - p(z)] / eps` for the slice at `k`.
pub fn normal_derivative(
    data: &ComplexPlaneData,
    k: f64,
    target_z: f64,
    eps: f64,
    opts: &PropagationOptions,
) -> Result<Vec<C64>> {
    if !(eps > 0.0) {
        return invalid(format!("epsilon must be > 0, got {eps}"));
    }
    let slice = data.slice_at(k)?;
    let plane = data.plane();
    let a = propagate_slice(slice, plane, k, target_z - plane.z, opts);
    let b = propagate_slice(slice, plane, k, target_z + eps - plane.z, opts);
    Ok(a.iter().zip(&b).map(|(a, b)| (b - a) / eps).collect())
}

/// Bilinear interpolation of plane values at `(x1, x2)`; points outside are clamped to the edge.
pub fn interpolate_plane(values: &[C64], plane: &PlaneGrid, x1: f64, x2: f64) -> C64 {
    let h = plane.spacing();
    let locate = |a: usize, x: f64| {
        let t = ((x + plane.half_width) / h[a]).clamp(0.0, (plane.counts[a] - 1) as f64);
        let i = (t.floor() as usize).min(plane.counts[a] - 2);
        (i, t - i as f64)
    };
    let (i, s) = locate(0, x1);
    let (j, t) = locate(1, x2);
    let v = |a: usize, b: usize| values[plane.index(a, b)];
    (1.0 - s) * (1.0 - t) * v(i, j)
        + s * (1.0 - t) * v(i + 1, j)
        + (1.0 - s) * t * v(i, j + 1)
        + s * t * v(i + 1, j + 1)
}

/// Top-face values of `grid` interpolated from plane data, x1 fastest.
pub fn top_face_trace(values: &[C64], plane: &PlaneGrid, grid: &Grid3) -> Vec<C64> {
    let [n0, n1, _] = grid.counts();
    let mut out = Vec::with_capacity(n0 * n1);
    for j in 0..n1 {
        for i in 0..n0 {
            out.push(interpolate_plane(
                values,
                plane,
                grid.axis_coord(0, i),
                grid.axis_coord(1, j),
            ));
        }
    }
    out
}

/// Data propagated to the plane of the data boundary.
#[derive(Clone, Debug)]
pub struct PropagatedBoundary {
    /// `p(x, k)` on the plane `x3 = d2` for every wavenumber.
    pub p: ComplexPlaneData,
    /// x3-derivative estimate at the top wavenumber.
    pub p1: Vec<C64>,
    pub k_top: f64,
    pub epsilon: f64,
}

pub fn propagate_to_boundary(
    data: &ComplexPlaneData,
    target_z: f64,
    eps: f64,
    opts: &PropagationOptions,
) -> Result<PropagatedBoundary> {
    let k_top = data.ks().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let p = angular_spectrum(data, target_z, opts)?;
    let p1 = normal_derivative(data, k_top, target_z, eps, opts)?;
    Ok(PropagatedBoundary {
        p,
        p1,
        k_top,
        epsilon: eps,
    })
}

/// Dirichlet data on every face of `grid`: `gamma` (top-face values) on the
/// open top face, `exp(i k x3)` elsewhere. Interior entries are zero.
#[derive(Clone, Debug)]
pub struct ComplementedBoundary {
    pub k: f64,
    pub values: ComplexField3,
}

pub fn complement(gamma: &[C64], grid: &Grid3, k: f64) -> Result<ComplementedBoundary> {
    let [n0, n1, n2] = grid.counts();
    if gamma.len() != n0 * n1 {
        return invalid(format!(
            "top-face data has {} values, expected {}",
            gamma.len(),
            n0 * n1
        ));
    }
    let mut values = ComplexField3::filled(grid.clone(), C64::default());
    let v = values.values_mut();
    for kk in 0..n2 {
        for j in 0..n1 {
            for i in 0..n0 {
                if !grid.is_boundary(i, j, kk) {
                    continue;
                }
                let on_gamma = kk + 1 == n2 && i > 0 && j > 0 && i + 1 < n0 && j + 1 < n1;
                v[grid.index(i, j, kk)] = if on_gamma {
                    gamma[i + n0 * j]
                } else {
                    C64::from_polar(1.0, k * grid.axis_coord(2, kk))
                };
            }
        }
    }
    Ok(ComplementedBoundary { k, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundingBox;
    use proptest::prelude::*;

    fn plane() -> PlaneGrid {
        PlaneGrid::new(49.5, 3.75, [40, 40]).unwrap()
    }

    fn rel(a: &[C64], b: &[C64]) -> f64 {
        let n: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let d: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (n / d).sqrt()
    }

    #[test]
    fn constant_maps_to_plane_wave() {
        let k = 11.97;
        let p = plane();
        let data = ComplexPlaneData::single(p, k, vec![C64::from_polar(1.0, k * 49.5); p.len()]).unwrap();
        let out = angular_spectrum(&data, 0.7, &PropagationOptions::default()).unwrap();
        let expect = C64::from_polar(1.0, k * 0.7);
        assert!(out.values().iter().all(|v| (v - expect).norm() < 1e-10));
        assert_eq!(out.plane().z, 0.7);
    }

    #[test]
    fn periodic_round_trip_of_band_limited_data() {
        let k = 11.97;
        let p = plane();
        let h = p.spacing()[0];
        let period = 40.0 * h;
        let mut v = Vec::new();
        for j in 0..40 {
            for i in 0..40 {
                let (x, y) = (i as f64 * h, j as f64 * h);
                v.push(
                    C64::from_polar(1.0, 2.0 * PI * 3.0 * x / period)
                        + 0.5 * C64::from_polar(1.0, -2.0 * PI * (2.0 * x + 5.0 * y) / period),
                );
            }
        }
        let data = ComplexPlaneData::single(p, k, v.clone()).unwrap();
        let opts = PropagationOptions {
            padding: 1,
            split_mean: false,
        };
        let down = angular_spectrum(&data, 0.7, &opts).unwrap();
        let up = angular_spectrum(&down, 49.5, &opts).unwrap();
        let [r0, r1] = p.interior_half();
        let mut a = Vec::new();
        let mut b = Vec::new();
        for j in r1.clone() {
            for i in r0.clone() {
                a.push(up.values()[i + 40 * j]);
                b.push(v[i + 40 * j]);
            }
        }
        assert!(rel(&a, &b) < 1e-8);
    }

    #[test]
    fn derivative_of_vacuum_and_convergence() {
        let k = 11.97;
        let p = plane();
        let data = ComplexPlaneData::single(p, k, vec![C64::from_polar(1.0, k * 49.5); p.len()]).unwrap();
        let opts = PropagationOptions::default();
        let exact = C64::i() * k * C64::from_polar(1.0, k * 0.7);
        let dev = |eps: f64| {
            let p1 = normal_derivative(&data, k, 0.7, eps, &opts).unwrap();
            let fd = (C64::from_polar(1.0, k * (0.7 + eps)) - C64::from_polar(1.0, k * 0.7)) / eps;
            assert!((p1[0] - fd).norm() < 1e-8 * fd.norm() / eps.min(1.0));
            (p1[0] - exact).norm()
        };
        let (a, b) = (dev(1e-3), dev(5e-4));
        assert!((a / b - 2.0).abs() < 0.05, "{a} {b}");
        assert!(a / k < k * 1e-3);
    }

    #[test]
    fn complement_faces() {
        let g = Grid3::new(
            [5, 4, 6],
            BoundingBox::new([-3.75, -3.75, -6.8], [3.75, 3.75, 0.7]).unwrap(),
        )
        .unwrap();
        let k = 10.0;
        let gamma: Vec<C64> = (0..20).map(|i| C64::new(i as f64, 1.0)).collect();
        let c = complement(&gamma, &g, k).unwrap();
        assert_eq!(*c.values.at(2, 1, 5), gamma[2 + 5]);
        assert_eq!(*c.values.at(0, 1, 5), C64::from_polar(1.0, 7.0));
        assert_eq!(*c.values.at(2, 2, 0), C64::from_polar(1.0, -68.0));
        assert_eq!(*c.values.at(2, 2, 2), C64::default());
        // vacuum data is continuous across the rim of the top face
        let vac = vec![C64::from_polar(1.0, k * 0.7); 20];
        let c = complement(&vac, &g, k).unwrap();
        assert!((c.values.at(1, 1, 5) - c.values.at(0, 1, 5)).norm() < 1e-10);
    }

    #[test]
    fn bilinear_trace_is_exact_for_bilinear_data() {
        let p = PlaneGrid::new(0.7, 3.75, [11, 11]).unwrap();
        let f = |x: f64, y: f64| C64::new(1.0 + 2.0 * x - y + 0.5 * x * y, x);
        let v: Vec<C64> = (0..p.len())
            .map(|i| {
                let q = p.point(i);
                f(q[0], q[1])
            })
            .collect();
        let g = Grid3::new(
            [7, 9, 3],
            BoundingBox::new([-3.75, -3.75, -6.8], [3.75, 3.75, 0.7]).unwrap(),
        )
        .unwrap();
        let t = top_face_trace(&v, &p, &g);
        for j in 0..9 {
            for i in 0..7 {
                let e = f(g.axis_coord(0, i), g.axis_coord(1, j));
                assert!((t[i + 7 * j] - e).norm() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn energy_and_linearity(
            re in proptest::collection::vec(-1.0f64..1.0, 64),
            im in proptest::collection::vec(-1.0f64..1.0, 64),
            alpha in -2.0f64..2.0,
        ) {
            let p = PlaneGrid::new(49.5, 1.0, [8, 8]).unwrap();
            let k = 9.0;
            let mut u: Vec<C64> = re.iter().zip(&im).map(|(a, b)| C64::new(*a, *b)).collect();
            let mean = u.iter().sum::<C64>() / 64.0;
            u.iter_mut().for_each(|v| *v -= mean);
            let v: Vec<C64> = u.iter().rev().map(|x| x * C64::new(0.3, -1.1)).collect();
            let opts = PropagationOptions::default();
            let pu = angular_spectrum(&ComplexPlaneData::single(p, k, u.clone()).unwrap(), 0.7, &opts).unwrap();
            let pv = angular_spectrum(&ComplexPlaneData::single(p, k, v.clone()).unwrap(), 0.7, &opts).unwrap();
            let e_in: f64 = u.iter().map(|x| x.norm_sqr()).sum();
            let e_out: f64 = pu.values().iter().map(|x| x.norm_sqr()).sum();
            prop_assert!(e_out <= e_in * (1.0 + 1e-12));
            let w: Vec<C64> = u.iter().zip(&v).map(|(a, b)| alpha * a + b).collect();
            let pw = angular_spectrum(&ComplexPlaneData::single(p, k, w).unwrap(), 0.7, &opts).unwrap();
            let comb: Vec<C64> = pu.values().iter().zip(pv.values()).map(|(a, b)| alpha * a + b).collect();
            let scale: f64 = comb.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt().max(1e-300);
            let diff: f64 = comb.iter().zip(pw.values()).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            prop_assert!(diff <= 1e-12 * scale.max(1.0));
        }
    }
}
