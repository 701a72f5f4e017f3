//! Plane data containers and closed-form phase retrieval from intensity.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::grid::{PlaneGrid, WavenumberPartition};

type C64 = Complex64;

/// Floor applied to intensities and to the retrieval denominator.
pub const INTENSITY_FLOOR: f64 = 1e-12;

fn find_k(ks: &[f64], k: f64) -> Option<usize> {
    ks.iter().position(|&v| (v - k).abs() <= 1e-9 * k.abs().max(1.0))
}

/// Complex field on a plane for a list of wavenumbers, one plane slice per k.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexPlaneData {
    plane: PlaneGrid,
    ks: Vec<f64>,
    values: Vec<C64>,
}

impl ComplexPlaneData {
    pub fn new(plane: PlaneGrid, ks: Vec<f64>, values: Vec<C64>) -> Result<Self> {
        if ks.is_empty() {
            return invalid("plane data needs at least one wavenumber");
        }
        if values.len() != ks.len() * plane.len() {
            return invalid(format!(
                "plane data has {} values, expected {} x {}",
                values.len(),
                ks.len(),
                plane.len()
            ));
        }
        if values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite("complex plane data".into()));
        }
        Ok(Self { plane, ks, values })
    }

    pub fn single(plane: PlaneGrid, k: f64, values: Vec<C64>) -> Result<Self> {
        Self::new(plane, vec![k], values)
    }

    /// Stacks single-k slices sharing one plane.
    pub fn stack(slices: Vec<ComplexPlaneData>) -> Result<Self> {
        let Some(first) = slices.first() else {
            return invalid("nothing to stack");
        };
        let plane = first.plane;
        let mut ks = Vec::new();
        let mut values = Vec::new();
        for s in slices {
            if s.plane != plane {
                return invalid("stacked slices must share a plane");
            }
            ks.extend_from_slice(&s.ks);
            values.extend(s.values);
        }
        Self::new(plane, ks, values)
    }

    pub fn plane(&self) -> &PlaneGrid {
        &self.plane
    }

    pub fn ks(&self) -> &[f64] {
        &self.ks
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn slice(&self, i: usize) -> &[C64] {
        let n = self.plane.len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn k_index(&self, k: f64) -> Option<usize> {
        find_k(&self.ks, k)
    }

    pub fn slice_at(&self, k: f64) -> Result<&[C64]> {
        match self.k_index(k) {
            Some(i) => Ok(self.slice(i)),
            None => invalid(format!("no data at k = {k}")),
        }
    }
}

/// Nonnegative intensities `f(x, k)` on a plane, one slice per k.
#[derive(Clone, Debug, PartialEq)]
pub struct IntensityData {
    plane: PlaneGrid,
    ks: Vec<f64>,
    values: Vec<f64>,
}

impl IntensityData {
    pub fn new(plane: PlaneGrid, ks: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if ks.is_empty() {
            return invalid("intensity data needs at least one wavenumber");
        }
        if values.len() != ks.len() * plane.len() {
            return invalid(format!(
                "intensity data has {} values, expected {} x {}",
                values.len(),
                ks.len(),
                plane.len()
            ));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return invalid(format!("intensities must be finite and >= 0, found {v}"));
        }
        Ok(Self { plane, ks, values })
    }

    pub fn plane(&self) -> &PlaneGrid {
        &self.plane
    }

    pub fn ks(&self) -> &[f64] {
        &self.ks
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slice(&self, i: usize) -> &[f64] {
        let n = self.plane.len();
        &self.values[i * n..(i + 1) * n]
    }

    pub fn k_index(&self, k: f64) -> Option<usize> {
        find_k(&self.ks, k)
    }

    /// Largest wavenumber present.
    pub fn k_top(&self) -> f64 {
        self.ks.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    fn top_slice(&self) -> &[f64] {
        let i = self.k_index(self.k_top()).expect("top k present");
        self.slice(i)
    }
}

pub fn synthesize_intensity(u: &ComplexPlaneData) -> IntensityData {
    IntensityData {
        plane: u.plane,
        ks: u.ks.clone(),
        values: u.values.iter().map(|v| v.norm_sqr()).collect(),
    }
}

/// Multiplicative noise `f (1 + level xi)`, `xi` uniform on [-1, 1], clipped at 0.
pub fn add_noise(f: &IntensityData, level: f64, seed: u64) -> Result<IntensityData> {
    if !(level >= 0.0 && level.is_finite()) {
        return invalid(format!("noise level must be >= 0, got {level}"));
    }
    if level == 0.0 {
        return Ok(f.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = f
        .values
        .iter()
        .map(|&v| (v * (1.0 + level * rng.gen_range(-1.0..=1.0))).max(0.0))
        .collect();
    Ok(IntensityData {
        plane: f.plane,
        ks: f.ks.clone(),
        values,
    })
}

/// Piecewise-linear interpolation in k onto `targets`.
pub fn interpolate_in_k(f: &IntensityData, targets: &WavenumberPartition) -> Result<IntensityData> {
    let mut order: Vec<usize> = (0..f.ks.len()).collect();
    order.sort_by(|&a, &b| f.ks[a].total_cmp(&f.ks[b]));
    let lo = f.ks[order[0]];
    let hi = f.ks[order[order.len() - 1]];
    let tol = 1e-12 * hi.abs().max(1.0);
    let n = f.plane.len();
    let mut values = Vec::with_capacity(n * targets.values().len());
    for &k in targets.values() {
        if k < lo - tol || k > hi + tol {
            return invalid(format!("target k = {k} outside the measured band [{lo}, {hi}]"));
        }
        if let Some(i) = f.k_index(k) {
            values.extend_from_slice(f.slice(i));
            continue;
        }
        let upper = order
            .iter()
            .position(|&i| f.ks[i] > k)
            .unwrap_or(order.len() - 1)
            .max(1);
        let (ia, ib) = (order[upper - 1], order[upper]);
        let t = (k - f.ks[ia]) / (f.ks[ib] - f.ks[ia]);
        values.extend(f.slice(ia).iter().zip(f.slice(ib)).map(|(a, b)| (1.0 - t) * a + t * b));
    }
    IntensityData::new(f.plane, targets.values().to_vec(), values)
}

/// `A = sqrt(max(f(., k_top), floor))`.
pub fn retrieve_amplitude(f: &IntensityData) -> Vec<f64> {
    f.top_slice().iter().map(|&v| v.max(INTENSITY_FLOOR).sqrt()).collect()
}

/// Argument of the arccos in the retrieval, or `None` where it must be clamped.
fn retrieval_argument(f_k: f64, f_top: f64) -> Option<f64> {
    let denom = 2.0 * f_top.sqrt();
    if denom < INTENSITY_FLOOR {
        return None;
    }
    let g = (f_k + 1.0) / denom;
    (g.abs() <= 1.0).then_some(g)
}

#[derive(Clone, Debug)]
pub struct TravelTime {
    pub tau: Vec<f64>,
    pub clamped: Vec<bool>,
    pub clamp_fraction: f64,
}

/// `tau = arccos(g) / k + R`, set to `R` wherever the argument is unusable.
pub fn retrieve_travel_time(f: &IntensityData, k: f64) -> Result<TravelTime> {
    let Some(i) = f.k_index(k) else {
        return invalid(format!("no intensity data at k = {k}"));
    };
    let r = f.plane.z;
    let mut clamped = Vec::with_capacity(f.plane.len());
    let tau = f
        .slice(i)
        .iter()
        .zip(f.top_slice())
        .map(|(&fk, &ft)| match retrieval_argument(fk, ft) {
            Some(g) => {
                clamped.push(false);
                g.acos() / k + r
            }
            None => {
                clamped.push(true);
                r
            }
        })
        .collect();
    let clamp_fraction = clamped.iter().filter(|&&c| c).count() as f64 / clamped.len() as f64;
    Ok(TravelTime {
        tau,
        clamped,
        clamp_fraction,
    })
}

#[derive(Clone, Debug)]
pub struct PhaseRetrieval {
    pub data: ComplexPlaneData,
    /// Clamped-node fraction for each wavenumber, in data order.
    pub clamp_fractions: Vec<f64>,
    /// Per-node clamp flags, laid out like the data values.
    pub clamped: Vec<bool>,
}

impl PhaseRetrieval {
    pub fn clamp_fraction(&self) -> f64 {
        self.clamp_fractions.iter().sum::<f64>() / self.clamp_fractions.len() as f64
    }
}

/// `u = A exp(i arccos(g) + i k R)`; clamped nodes get phase `k R`.
pub fn retrieve_phased(f: &IntensityData) -> Result<PhaseRetrieval> {
    let amp = retrieve_amplitude(f);
    let top = f.top_slice().to_vec();
    let r = f.plane.z;
    let n = f.plane.len();
    let mut values = vec![C64::default(); f.values.len()];
    let mut clamped = vec![false; f.values.len()];
    values
        .par_chunks_mut(n)
        .zip(clamped.par_chunks_mut(n))
        .enumerate()
        .for_each(|(i, (out, cl))| {
            let k = f.ks[i];
            for (p, &fk) in f.slice(i).iter().enumerate() {
                let phase = match retrieval_argument(fk, top[p]) {
                    Some(g) => g.acos() + k * r,
                    None => {
                        cl[p] = true;
                        k * r
                    }
                };
                out[p] = C64::from_polar(amp[p], phase);
            }
        });
    let clamp_fractions = clamped
        .chunks(n)
        .map(|c| c.iter().filter(|&&b| b).count() as f64 / n as f64)
        .collect();
    Ok(PhaseRetrieval {
        data: ComplexPlaneData::new(f.plane, f.ks.clone(), values)?,
        clamp_fractions,
        clamped,
    })
}
