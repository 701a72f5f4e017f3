//! Smooth microsphere phantoms and the reference measurement configurations.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{grid_counts, BoundingBox, Geometry, Grid3, PlaneGrid, RealField3, WavenumberPartition};

/// Peak of `n^2 - 1` for the simulated microspheres.
pub const DEFAULT_CONTRAST: f64 = 1.04;
pub const SPHERE_RADIUS: f64 = 0.45;
/// Background refractive index of the protective glass layer.
pub const BACKGROUND_INDEX: f64 = 1.5;
/// True refractive index of the microspheres.
pub const SPHERE_INDEX: f64 = 2.15;
pub const BAND: [f64; 2] = [108.3, 119.7];
pub const MEASUREMENT_Z: f64 = 49.5;
pub const HALF_WIDTH: f64 = 3.75;
pub const OMEGA_Z: [f64; 2] = [-6.8, 0.7];
pub const PLANE_COUNTS: [usize; 2] = [100, 100];
pub const TWO_SPHERE_SEPARATION: f64 = 1.2;
pub const DEFAULT_INTERVALS: usize = 10;
/// Points per wavelength of the reconstruction grid over the domain.
pub const DEFAULT_DOMAIN_PPW: f64 = 4.0;

fn default_contrast() -> f64 {
    DEFAULT_CONTRAST
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicrosphereSpec {
    pub center: [f64; 3],
    pub radius: f64,
    #[serde(default = "default_contrast")]
    pub amplitude: f64,
}

impl MicrosphereSpec {
    pub fn new(center: [f64; 3], radius: f64, amplitude: f64) -> Result<Self> {
        let s = Self {
            center,
            radius,
            amplitude,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return invalid(format!("sphere radius must be > 0, got {}", self.radius));
        }
        if !(self.amplitude >= 0.0) {
            return invalid(format!("sphere amplitude must be >= 0, got {}", self.amplitude));
        }
        if self.center.iter().any(|c| !c.is_finite()) {
            return invalid("sphere center must be finite");
        }
        Ok(())
    }

    fn value_at(&self, x: [f64; 3]) -> f64 {
        let rel = [0, 1, 2].map(|a| (x[a] - self.center[a]) / self.radius);
        self.amplitude * bump(rel)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub spheres: Vec<MicrosphereSpec>,
}

impl PhantomSpec {
    /// Smallest box containing every sphere support, or `None` for vacuum.
    pub fn support_box(&self) -> Option<BoundingBox> {
        let first = self.spheres.first()?;
        let mut min = first.center.map(|c| c - first.radius);
        let mut max = first.center.map(|c| c + first.radius);
        for s in &self.spheres[1..] {
            for a in 0..3 {
                min[a] = min[a].min(s.center[a] - s.radius);
                max[a] = max[a].max(s.center[a] + s.radius);
            }
        }
        BoundingBox::new(min, max).ok()
    }

    /// Pairs closer than one unit, reported rather than rejected.
    pub fn separation_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, a) in self.spheres.iter().enumerate() {
            for (j, b) in self.spheres.iter().enumerate().skip(i + 1) {
                let d = dist(a.center, b.center);
                if d <= 1.0 {
                    out.push(format!("spheres {i} and {j} are {d:.3} apart (<= 1)"));
                }
            }
        }
        out
    }

    pub fn max_amplitude(&self) -> f64 {
        self.spheres.iter().map(|s| s.amplitude).fold(0.0, f64::max)
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// `exp(-|x|^2 / (1 - |x|^2))` inside the unit ball, zero outside.
pub fn bump(x: [f64; 3]) -> f64 {
    let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
    if r2 >= 1.0 {
        0.0
    } else {
        (-r2 / (1.0 - r2)).exp()
    }
}

/// Samples `n^2(x) = 1 + sum_j a_j psi((x - x_j) / r_j)` on `grid`.
pub fn build_refractive_field(phantom: &PhantomSpec, grid: &Grid3) -> Result<RealField3> {
    for (i, s) in phantom.spheres.iter().enumerate() {
        s.validate()?;
        if !grid.bbox().contains_ball(s.center, s.radius) {
            return invalid(format!("support of sphere {i} leaves the grid box"));
        }
    }
    for w in phantom.separation_warnings() {
        log::warn!("{w}");
    }
    Ok(RealField3::from_fn(grid.clone(), |x| {
        let mut terms: Vec<f64> = phantom
            .spheres
            .iter()
            .map(|s| s.value_at(x))
            .filter(|&v| v != 0.0)
            .collect();
        // order-independent summation keeps the field bitwise invariant under
        // permutations of the sphere list
        terms.sort_by(|a, b| a.total_cmp(b));
        1.0 + terms.iter().sum::<f64>()
    }))
}

/// Homogeneous sphere `n^2 = n_inside^2`, each node carrying the volume
/// fraction of its cell inside the sphere (`subsamples^3` points per cell).
pub fn build_hard_sphere(
    center: [f64; 3],
    radius: f64,
    n_inside: f64,
    grid: &Grid3,
    subsamples: usize,
) -> Result<RealField3> {
    if !(radius > 0.0) || !(n_inside >= 1.0) || subsamples == 0 {
        return invalid("hard sphere needs radius > 0, n >= 1 and at least one subsample");
    }
    let h = grid.spacing();
    let half_diag = 0.5 * (h[0] * h[0] + h[1] * h[1] + h[2] * h[2]).sqrt();
    let contrast = n_inside * n_inside - 1.0;
    let s = subsamples;
    Ok(RealField3::from_fn(grid.clone(), |x| {
        let d = dist(x, center);
        let frac = if d + half_diag <= radius {
            1.0
        } else if d - half_diag >= radius {
            0.0
        } else {
            let mut inside = 0usize;
            for a in 0..s {
                for b in 0..s {
                    for c in 0..s {
                        let off = |i: usize, ax: usize| ((i as f64 + 0.5) / s as f64 - 0.5) * h[ax];
                        let p = [x[0] + off(a, 0), x[1] + off(b, 1), x[2] + off(c, 2)];
                        if dist(p, center) < radius {
                            inside += 1;
                        }
                    }
                }
            }
            inside as f64 / (s * s * s) as f64
        };
        1.0 + contrast * frac
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetCase {
    OneSphere,
    TwoSpheres,
}

/// A complete measurement configuration.
#[derive(Clone, Debug)]
pub struct Preset {
    pub phantom: PhantomSpec,
    pub geometry: Geometry,
    /// Reconstruction grid over the domain at [`DEFAULT_DOMAIN_PPW`].
    pub domain_grid: Grid3,
    pub band: WavenumberPartition,
}

/// The reference configuration with the wavenumber band multiplied by `k_scale`.
/// Sphere centers lie on `x3 = 0`: one at the origin, or two on the x1 axis
/// 1.2 apart.
pub fn paper_preset(case: PresetCase, k_scale: f64) -> Result<Preset> {
    if !(k_scale > 0.0 && k_scale <= 1.0) {
        return invalid(format!("k_scale must lie in (0, 1], got {k_scale}"));
    }
    let centers: Vec<[f64; 3]> = match case {
        PresetCase::OneSphere => vec![[0.0; 3]],
        PresetCase::TwoSpheres => {
            let c = 0.5 * TWO_SPHERE_SEPARATION;
            vec![[-c, 0.0, 0.0], [c, 0.0, 0.0]]
        }
    };
    let phantom = PhantomSpec {
        spheres: centers
            .into_iter()
            .map(|c| MicrosphereSpec::new(c, SPHERE_RADIUS, DEFAULT_CONTRAST))
            .collect::<Result<_>>()?,
    };
    let geometry = Geometry::paper();
    let band = WavenumberPartition::new(k_scale * BAND[0], k_scale * BAND[1], DEFAULT_INTERVALS)?;
    let counts = grid_counts(&geometry.omega, DEFAULT_DOMAIN_PPW, band.k_high());
    let domain_grid = Grid3::new(counts, geometry.omega)?;
    Ok(Preset {
        phantom,
        geometry,
        domain_grid,
        band,
    })
}

impl Geometry {
    /// `Omega = (-3.75, 3.75)^2 x (-6.8, 0.7)`, measurement square of
    /// half-width 3.75 at `x3 = 49.5`, 100 x 100 nodes.
    pub fn paper() -> Self {
        Geometry {
            omega: BoundingBox {
                min: [-HALF_WIDTH, -HALF_WIDTH, OMEGA_Z[0]],
                max: [HALF_WIDTH, HALF_WIDTH, OMEGA_Z[1]],
            },
            measurement: PlaneGrid {
                z: MEASUREMENT_Z,
                half_width: HALF_WIDTH,
                counts: PLANE_COUNTS,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(lo: f64, hi: f64, n: usize) -> Grid3 {
        Grid3::new([n; 3], BoundingBox::new([lo; 3], [hi; 3]).unwrap()).unwrap()
    }

    #[test]
    fn bump_values() {
        assert_eq!(bump([0.0; 3]), 1.0);
        assert_eq!(bump([1.0, 0.0, 0.0]), 0.0);
        assert_eq!(bump([0.8, 0.8, 0.0]), 0.0);
        assert!((bump([0.5, 0.0, 0.0]) - (-1.0f64 / 3.0).exp()).abs() < 1e-15);
        assert!((bump([0.5, 0.0, 0.0]) - 0.716531).abs() < 1e-6);
    }

    #[test]
    fn vacuum_phantom_is_one() {
        let f = build_refractive_field(&PhantomSpec::default(), &grid(-1.0, 1.0, 9)).unwrap();
        assert!(f.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn single_sphere_peak() {
        let phantom = PhantomSpec {
            spheres: vec![MicrosphereSpec::new([0.0; 3], 0.45, DEFAULT_CONTRAST).unwrap()],
        };
        let f = build_refractive_field(&phantom, &grid(-1.0, 1.0, 21)).unwrap();
        assert!((f.max() - 2.04).abs() < 1e-15);
        assert!(f.min() >= 1.0);
        // 1.43^2 rounds to the printed contrast
        assert!((1.43f64.powi(2) - 2.04).abs() < 0.01);
    }

    #[test]
    fn two_sphere_preset_supports_are_disjoint() {
        let p = paper_preset(PresetCase::TwoSpheres, 1.0).unwrap();
        assert_eq!(p.phantom.spheres.len(), 2);
        assert!(p.phantom.spheres.iter().all(|s| s.amplitude == 1.04));
        assert!(p.phantom.separation_warnings().is_empty());
        let g = Grid3::new(
            [45, 21, 21],
            BoundingBox::new([-1.1, -0.5, -0.5], [1.1, 0.5, 0.5]).unwrap(),
        )
        .unwrap();
        let f = build_refractive_field(&p.phantom, &g).unwrap();
        assert!((f.max() - 2.04).abs() < 1e-12);
        // no node sees both spheres
        for idx in 0..g.len() {
            let x = g.coord_of(idx);
            let hits = p.phantom.spheres.iter().filter(|s| s.value_at(x) > 0.0).count();
            assert!(hits <= 1);
        }
    }

    #[test]
    fn presets_scale_band() {
        let p = paper_preset(PresetCase::OneSphere, 1.0).unwrap();
        assert_eq!(p.band.k_low(), 108.3);
        assert_eq!(p.band.k_high(), 119.7);
        assert_eq!(p.geometry.measurement.z, 49.5);
        assert_eq!(p.geometry.gamma_z(), 0.7);
        assert_eq!(p.geometry.omega.min[2], -6.8);
        let p = paper_preset(PresetCase::OneSphere, 0.1).unwrap();
        assert!((p.band.k_low() - 10.83).abs() < 1e-12);
        assert!((p.band.k_high() - 11.97).abs() < 1e-12);
        assert!(paper_preset(PresetCase::OneSphere, 0.0).is_err());
        assert!(paper_preset(PresetCase::OneSphere, 1.5).is_err());
    }

    #[test]
    fn support_outside_box_is_rejected() {
        let phantom = PhantomSpec {
            spheres: vec![MicrosphereSpec::new([0.8, 0.0, 0.0], 0.45, 1.04).unwrap()],
        };
        assert!(build_refractive_field(&phantom, &grid(-1.0, 1.0, 5)).is_err());
    }

    #[test]
    fn overlap_is_a_warning_only() {
        let phantom = PhantomSpec {
            spheres: vec![
                MicrosphereSpec::new([0.0; 3], 0.45, 1.04).unwrap(),
                MicrosphereSpec::new([0.3, 0.0, 0.0], 0.45, 1.04).unwrap(),
            ],
        };
        assert_eq!(phantom.separation_warnings().len(), 1);
        assert!(build_refractive_field(&phantom, &grid(-1.0, 1.0, 11)).is_ok());
    }

    #[test]
    fn bump_smoothness_across_unit_sphere() {
        // centered second differences straddling |x| = 1 vanish faster than h^2
        let d2 = |h: f64| {
            let f = |r: f64| bump([r, 0.0, 0.0]);
            ((f(1.0 + h) - 2.0 * f(1.0) + f(1.0 - h)) / (h * h)).abs()
        };
        let (a, b, c) = (d2(0.1), d2(0.05), d2(0.025));
        assert!(b < a / 4.0 && c < b / 4.0, "{a} {b} {c}");
    }

    #[test]
    fn hard_sphere_volume_fraction() {
        let g = grid(-1.5, 1.5, 31);
        let f = build_hard_sphere([0.0; 3], 1.0, 1.2, &g, 6).unwrap();
        let contrast = 1.2f64 * 1.2 - 1.0;
        let vol: f64 = f.values().iter().map(|v| (v - 1.0) / contrast).sum::<f64>() * g.cell_volume();
        let exact = 4.0 / 3.0 * std::f64::consts::PI;
        assert!((vol - exact).abs() / exact < 5e-3, "{vol}");
    }

    proptest! {
        #[test]
        fn field_properties(
            cx in -0.5f64..0.5, cy in -0.5f64..0.5, dx in 1.01f64..1.4, r in 0.2f64..0.45
        ) {
            let spheres = vec![
                MicrosphereSpec::new([cx, cy, 0.0], r, 1.04).unwrap(),
                MicrosphereSpec::new([cx + dx, cy, 0.1], r, 0.7).unwrap(),
            ];
            let g = Grid3::new([37, 17, 17], BoundingBox::new([-1.0, -1.0, -1.0], [2.5, 1.0, 1.0]).unwrap()).unwrap();
            let a = build_refractive_field(&PhantomSpec { spheres: spheres.clone() }, &g).unwrap();
            let mut rev = spheres.clone();
            rev.reverse();
            let b = build_refractive_field(&PhantomSpec { spheres: rev }, &g).unwrap();
            prop_assert_eq!(a.values(), b.values());
            for idx in 0..g.len() {
                let x = g.coord_of(idx);
                let v = a.values()[idx];
                prop_assert!(v >= 1.0);
                if spheres.iter().all(|s| dist(x, s.center) >= s.radius) {
                    prop_assert_eq!(v, 1.0);
                }
            }
        }
    }
}
