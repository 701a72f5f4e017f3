//! Grids, unit scalings, wavenumber partitions and field containers.
//!
//! All internal computation happens in scaled coordinates: lengths are first
//! made dimensionless with a 10 μm unit and then multiplied by the background
//! refractive index so that the background becomes vacuum-like.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fft::smooth_size;

/// Length of one dimensionless unit, in microns.
pub const MICRONS_PER_UNIT: f64 = 10.0;

/// Default budget for a single volume solve.
pub const DEFAULT_MEMORY_BUDGET: u64 = 3 * 1024 * 1024 * 1024;

/// Krylov restart length used by the volume solver; also feeds the memory estimate.
pub const KRYLOV_RESTART: usize = 30;

pub fn to_dimensionless(length_microns: f64) -> f64 {
    length_microns / MICRONS_PER_UNIT
}

pub fn from_dimensionless(x: f64) -> f64 {
    x * MICRONS_PER_UNIT
}

pub fn to_background_scaled(x_dimensionless: f64, n0: f64) -> f64 {
    n0 * x_dimensionless
}

pub fn from_background_scaled(y: f64, n0: f64) -> f64 {
    y / n0
}

/// Axis-aligned box, `min[a] < max[a]` on every axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl BoundingBox {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        for a in 0..3 {
            if !(min[a].is_finite() && max[a].is_finite()) || max[a] <= min[a] {
                return invalid(format!(
                    "bounding box axis {a}: need finite min < max, got [{}, {}]",
                    min[a], max[a]
                ));
            }
        }
        Ok(Self { min, max })
    }

    pub fn extent(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| self.max[a] - self.min[a])
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    pub fn contains_ball(&self, center: [f64; 3], radius: f64) -> bool {
        (0..3).all(|a| center[a] - radius >= self.min[a] && center[a] + radius <= self.max[a])
    }

    pub fn as_array(&self) -> [f64; 6] {
        [
            self.min[0],
            self.max[0],
            self.min[1],
            self.max[1],
            self.min[2],
            self.max[2],
        ]
    }

    pub fn from_array(v: [f64; 6]) -> Result<Self> {
        Self::new([v[0], v[2], v[4]], [v[1], v[3], v[5]])
    }
}

/// Uniform rectilinear sampling of a box, endpoints included.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid3 {
    counts: [usize; 3],
    bbox: BoundingBox,
    spacing: [f64; 3],
}

impl Grid3 {
    pub fn new(counts: [usize; 3], bbox: BoundingBox) -> Result<Self> {
        if counts.iter().any(|&c| c < 2) {
            return invalid(format!("grid counts must be >= 2 per axis, got {counts:?}"));
        }
        let ext = bbox.extent();
        let spacing = [0, 1, 2].map(|a| ext[a] / (counts[a] - 1) as f64);
        Ok(Self { counts, bbox, spacing })
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn bbox(&self) -> &BoundingBox {
        &self.bbox
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(0.0, f64::max)
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Linear index, x1 fastest.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.counts[0] * (j + self.counts[1] * k)
    }

    #[inline]
    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.counts[0];
        let r = idx / self.counts[0];
        [i, r % self.counts[1], r / self.counts[1]]
    }

    #[inline]
    pub fn axis_coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.counts[axis] {
            self.bbox.max[axis]
        } else {
            self.bbox.min[axis] + i as f64 * self.spacing[axis]
        }
    }

    #[inline]
    pub fn coord(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [self.axis_coord(0, i), self.axis_coord(1, j), self.axis_coord(2, k)]
    }

    pub fn coord_of(&self, idx: usize) -> [f64; 3] {
        let [i, j, k] = self.unravel(idx);
        self.coord(i, j, k)
    }

    pub fn is_boundary(&self, i: usize, j: usize, k: usize) -> bool {
        i == 0 || j == 0 || k == 0 || i + 1 == self.counts[0] || j + 1 == self.counts[1] || k + 1 == self.counts[2]
    }

    /// Points per wavelength actually achieved at wavenumber `k`.
    pub fn points_per_wavelength(&self, k: f64) -> f64 {
        2.0 * PI / (k * self.max_spacing())
    }

    /// Estimated peak bytes for a volume-integral solve on this grid.
    pub fn ls_memory_bytes(&self) -> u64 {
        ls_memory_bytes(self.counts, self.spacing)
    }
}

fn ls_memory_bytes(counts: [usize; 3], spacing: [f64; 3]) -> u64 {
    const C: u64 = 16;
    let ext = [0, 1, 2].map(|a| spacing[a] * (counts[a] - 1) as f64);
    let diag = ext.iter().map(|e| e * e).sum::<f64>().sqrt();
    let mut kernel_grid = 1u64;
    let mut taps = 1u64;
    let mut conv = 1u64;
    let mut nodes = 1u64;
    for a in 0..3 {
        let m = ((ext[a] + diag) / spacing[a]).ceil() as usize + 2;
        kernel_grid *= smooth_size(m) as u64;
        taps *= (2 * counts[a] - 1) as u64;
        conv *= smooth_size(2 * counts[a]) as u64;
        nodes *= counts[a] as u64;
    }
    C * (kernel_grid + taps + 2 * conv + (KRYLOV_RESTART as u64 + 4) * nodes)
}

/// Builds a grid resolving `k_max` at `points_per_wavelength`, refusing it when
/// the solve would exceed `budget_bytes`.
pub fn make_grid(bbox: BoundingBox, points_per_wavelength: f64, k_max: f64, budget_bytes: u64) -> Result<Grid3> {
    if !(points_per_wavelength >= 2.0) {
        return invalid(format!(
            "points per wavelength must be >= 2, got {points_per_wavelength}"
        ));
    }
    if !(k_max > 0.0 && k_max.is_finite()) {
        return invalid(format!("k_max must be positive, got {k_max}"));
    }
    let counts = grid_counts(&bbox, points_per_wavelength, k_max);
    let ext = bbox.extent();
    let spacing = [0, 1, 2].map(|a| ext[a] / (counts[a] - 1) as f64);
    let needed = ls_memory_bytes(counts, spacing);
    if needed > budget_bytes {
        return Err(Error::ResourceRefused {
            what: format!("grid {}x{}x{}", counts[0], counts[1], counts[2]),
            needed_bytes: needed,
            budget_bytes,
        });
    }
    Grid3::new(counts, bbox)
}

/// Per-axis node counts `ceil(extent * k * ppw / 2π) + 1`, minimum 2.
pub fn grid_counts(bbox: &BoundingBox, points_per_wavelength: f64, k_max: f64) -> [usize; 3] {
    bbox.extent().map(|e| {
        let cells = e * k_max * points_per_wavelength / (2.0 * PI);
        // absorb rounding noise such as 2.0000000000000004
        ((cells - 1e-9).ceil().max(1.0) as usize + 1).max(2)
    })
}

/// Square sampling of `|x1|, |x2| <= b` on the plane `x3 = z`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneGrid {
    pub z: f64,
    pub half_width: f64,
    pub counts: [usize; 2],
}

impl PlaneGrid {
    pub fn new(z: f64, half_width: f64, counts: [usize; 2]) -> Result<Self> {
        if !(half_width > 0.0) || !z.is_finite() {
            return invalid(format!("plane needs b > 0 and finite z, got b = {half_width}, z = {z}"));
        }
        if counts.iter().any(|&c| c < 2) {
            return invalid(format!("plane counts must be >= 2, got {counts:?}"));
        }
        Ok(Self { z, half_width, counts })
    }

    pub fn len(&self) -> usize {
        self.counts[0] * self.counts[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self) -> [f64; 2] {
        [0, 1].map(|a| 2.0 * self.half_width / (self.counts[a] - 1) as f64)
    }

    #[inline]
    pub fn axis_coord(&self, axis: usize, i: usize) -> f64 {
        if i + 1 == self.counts[axis] {
            self.half_width
        } else {
            -self.half_width + i as f64 * self.spacing()[axis]
        }
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.counts[0] * j
    }

    pub fn point(&self, idx: usize) -> [f64; 3] {
        let i = idx % self.counts[0];
        let j = idx / self.counts[0];
        [self.axis_coord(0, i), self.axis_coord(1, j), self.z]
    }

    pub fn at_z(&self, z: f64) -> Self {
        Self { z, ..*self }
    }

    /// Index ranges of the central half of the plane on each axis.
    pub fn interior_half(&self) -> [std::ops::Range<usize>; 2] {
        [0, 1].map(|a| {
            let n = self.counts[a];
            n / 4..n - n / 4
        })
    }
}

/// Reconstruction domain plus the measurement plane above it. The data
/// boundary is the top face of `omega`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub omega: BoundingBox,
    pub measurement: PlaneGrid,
}

impl Geometry {
    pub fn new(omega: BoundingBox, measurement: PlaneGrid) -> Result<Self> {
        if measurement.z <= omega.max[2] {
            return invalid(format!(
                "measurement plane z = {} must lie above the domain top {}",
                measurement.z, omega.max[2]
            ));
        }
        Ok(Self { omega, measurement })
    }

    pub fn gamma_z(&self) -> f64 {
        self.omega.max[2]
    }

    /// Distance from the measurement plane down to the data boundary.
    pub fn propagation_distance(&self) -> f64 {
        self.measurement.z - self.gamma_z()
    }
}

/// Uniform, strictly decreasing wavenumbers `k_0 = k_high > ... > k_N = k_low`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WavenumberPartition {
    ks: Vec<f64>,
    step: f64,
}

impl WavenumberPartition {
    pub fn new(k_low: f64, k_high: f64, intervals: usize) -> Result<Self> {
        if intervals == 0 {
            return invalid("a wavenumber partition needs at least one interval");
        }
        if !(k_low > 0.0 && k_high > k_low && k_high.is_finite()) {
            return invalid(format!("need 0 < k_low < k_high, got [{k_low}, {k_high}]"));
        }
        let step = (k_high - k_low) / intervals as f64;
        let mut ks: Vec<f64> = (0..=intervals).map(|m| k_high - m as f64 * step).collect();
        ks[intervals] = k_low;
        Ok(Self { ks, step })
    }

    /// Builds a partition from explicit values, checking uniform spacing.
    pub fn from_values(ks: Vec<f64>) -> Result<Self> {
        if ks.len() < 2 {
            return invalid("a wavenumber partition needs at least two values");
        }
        let step = ks[0] - ks[1];
        if !(step > 0.0) {
            return invalid("wavenumbers must be strictly decreasing");
        }
        for w in ks.windows(2) {
            if ((w[0] - w[1]) - step).abs() > 1e-9 * ks[0].abs().max(1.0) {
                return invalid("wavenumbers are not uniformly spaced");
            }
        }
        Ok(Self { ks, step })
    }

    pub fn values(&self) -> &[f64] {
        &self.ks
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn intervals(&self) -> usize {
        self.ks.len() - 1
    }

    pub fn k_high(&self) -> f64 {
        self.ks[0]
    }

    pub fn k_low(&self) -> f64 {
        self.ks[self.ks.len() - 1]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            ks: self.ks.iter().map(|k| k * factor).collect(),
            step: self.step * factor,
        }
    }
}

/// Scalar field sampled on a [`Grid3`], x1 fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Field3<T> {
    grid: Grid3,
    values: Vec<T>,
}

pub type RealField3 = Field3<f64>;
pub type ComplexField3 = Field3<Complex64>;

impl<T: Clone> Field3<T> {
    pub fn filled(grid: Grid3, value: T) -> Self {
        let values = vec![value; grid.len()];
        Self { grid, values }
    }

    pub fn from_values(grid: Grid3, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.len() {
            return invalid(format!("field has {} values, grid needs {}", values.len(), grid.len()));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid3, f: impl Fn([f64; 3]) -> T) -> Self {
        let values = (0..grid.len()).map(|idx| f(grid.coord_of(idx))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid3 {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> &T {
        &self.values[self.grid.index(i, j, k)]
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Field3<U> {
        Field3 {
            grid: self.grid.clone(),
            values: self.values.iter().map(f).collect(),
        }
    }
}

impl RealField3 {
    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Index and value of the largest entry.
    pub fn argmax(&self) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, &v) in self.values.iter().enumerate() {
            if v > best.1 {
                best = (i, v);
            }
        }
        best
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl ComplexField3 {
    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_conversions() {
        assert_eq!(to_dimensionless(10.0), 1.0);
        assert_eq!(to_dimensionless(0.0), 0.0);
        assert!((to_dimensionless(4.5) - 0.45).abs() < 1e-15);
        assert_eq!(to_background_scaled(1.0, 1.5), 1.5);
        assert_eq!(to_background_scaled(0.7, 1.0), 0.7);
        assert!((to_background_scaled(0.3, 1.5) - 0.45).abs() < 1e-15);
        // a 0.45 scaled radius is a 3 μm physical radius
        let microns = from_dimensionless(from_background_scaled(0.45, 1.5));
        assert!((microns - 3.0).abs() < 1e-12);
    }

    #[test]
    fn grid_counts_match_resolution_rule() {
        let bb = BoundingBox::new([0.0; 3], [7.5; 3]).unwrap();
        assert_eq!(grid_counts(&bb, 8.0, 12.0), [116; 3]);
        let unit = BoundingBox::new([0.0; 3], [1.0; 3]).unwrap();
        assert_eq!(grid_counts(&unit, 2.0, 2.0 * PI), [3; 3]);
        let g = make_grid(unit, 2.0, 2.0 * PI, DEFAULT_MEMORY_BUDGET).unwrap();
        assert_eq!(g.counts(), [3; 3]);
    }

    #[test]
    fn paper_scale_grid_is_refused() {
        let bb = BoundingBox::new([-3.75, -3.75, -6.8], [3.75, 3.75, 0.7]).unwrap();
        let err = make_grid(bb, 10.0, 119.7, 16 * 1024 * 1024 * 1024).unwrap_err();
        match err {
            Error::ResourceRefused { needed_bytes, .. } => {
                // ~1430 nodes per axis; the node count alone is ~2.9e9 complex values
                assert!(needed_bytes > 16 * 2_900_000_000);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(grid_counts(&bb, 10.0, 119.7), [1430; 3]);
    }

    #[test]
    fn grid_rejects_degenerate_input() {
        let bb = BoundingBox::new([0.0; 3], [1.0; 3]).unwrap();
        assert!(Grid3::new([1, 4, 4], bb).is_err());
        assert!(BoundingBox::new([0.0; 3], [1.0, 0.0, 1.0]).is_err());
        assert!(make_grid(bb, 1.5, 1.0, DEFAULT_MEMORY_BUDGET).is_err());
    }

    #[test]
    fn partition_endpoints() {
        let p = WavenumberPartition::new(108.3, 119.7, 10).unwrap();
        assert_eq!(p.k_high(), 119.7);
        assert_eq!(p.k_low(), 108.3);
        assert_eq!(p.values().len(), 11);
        let rebuilt = WavenumberPartition::from_values(p.values().to_vec()).unwrap();
        assert!((rebuilt.step() - p.step()).abs() < 1e-12);
        assert!(WavenumberPartition::from_values(vec![3.0, 2.0, 0.5]).is_err());
    }

    proptest! {
        #[test]
        fn scaling_round_trip(x in -1e4f64..1e4, n0 in 1.0f64..3.0) {
            let back = from_dimensionless(to_dimensionless(x));
            prop_assert!((back - x).abs() <= 1e-15 * x.abs().max(1e-300));
            let back = from_background_scaled(to_background_scaled(x, n0), n0);
            prop_assert!((back - x).abs() <= 2e-16 * x.abs() + 1e-300);
        }

        #[test]
        fn spacing_times_cells_is_extent(
            lo in -10.0f64..0.0, ext in 0.1f64..20.0, n in 2usize..300
        ) {
            let bb = BoundingBox::new([lo; 3], [lo + ext; 3]).unwrap();
            let g = Grid3::new([n, n + 1, n + 2], bb).unwrap();
            for a in 0..3 {
                let span = g.spacing()[a] * (g.counts()[a] - 1) as f64;
                prop_assert!((span - ext).abs() <= 1e-12 * ext);
            }
        }

        #[test]
        fn partition_is_uniform(lo in 1.0f64..100.0, width in 0.1f64..50.0, n in 1usize..200) {
            let p = WavenumberPartition::new(lo, lo + width, n).unwrap();
            let k0 = p.values()[0];
            let kn = p.values()[n];
            prop_assert!(((k0 - n as f64 * p.step()) - kn).abs() <= 1e-12 * kn);
            for w in p.values().windows(2) {
                prop_assert!(((w[0] - w[1]) - p.step()).abs() <= 1e-12 * k0);
            }
        }
    }
}
