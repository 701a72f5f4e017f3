//! Multi-dimensional FFT and sine-transform helpers on x1-fastest arrays.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

type C64 = Complex64;

/// Smallest size `>= n` whose prime factors are all in {2, 3, 5, 7}.
pub fn smooth_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5, 7] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Applies `line_fn` to every line of `data` along `axis`. The closure gets a
/// contiguous buffer holding a whole number of lines of length `dims[axis]`.
pub(crate) fn process_lines<F>(data: &mut [C64], dims: [usize; 3], axis: usize, line_fn: F)
where
    F: Fn(&mut [C64]) + Sync,
{
    let [d0, d1, d2] = dims;
    debug_assert_eq!(data.len(), d0 * d1 * d2);
    match axis {
        0 => {
            let batch = (4096 / d0).max(1) * d0;
            data.par_chunks_mut(batch).for_each(&line_fn);
        }
        1 => {
            data.par_chunks_mut(d0 * d1).for_each(|slab| {
                let mut buf = vec![C64::default(); d0 * d1];
                for j in 0..d1 {
                    for i in 0..d0 {
                        buf[i * d1 + j] = slab[j * d0 + i];
                    }
                }
                line_fn(&mut buf);
                for j in 0..d1 {
                    for i in 0..d0 {
                        slab[j * d0 + i] = buf[i * d1 + j];
                    }
                }
            });
        }
        2 => {
            let plane = d0 * d1;
            let mut buf = vec![C64::default(); d0 * d2];
            for j in 0..d1 {
                for k in 0..d2 {
                    let base = k * plane + j * d0;
                    for i in 0..d0 {
                        buf[i * d2 + k] = data[base + i];
                    }
                }
                line_fn(&mut buf);
                for k in 0..d2 {
                    let base = k * plane + j * d0;
                    for i in 0..d0 {
                        data[base + i] = buf[i * d2 + k];
                    }
                }
            }
        }
        _ => unreachable!("axis out of range"),
    }
}

/// Planned forward/inverse 3D FFT for fixed dimensions.
pub struct Fft3 {
    dims: [usize; 3],
    forward: [Arc<dyn Fft<f64>>; 3],
    inverse: [Arc<dyn Fft<f64>>; 3],
}

impl Fft3 {
    pub fn new(dims: [usize; 3]) -> Self {
        let mut planner = FftPlanner::new();
        let forward = dims.map(|d| planner.plan_fft_forward(d));
        let inverse = dims.map(|d| planner.plan_fft_inverse(d));
        Self { dims, forward, inverse }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn forward(&self, data: &mut [C64]) {
        self.run(data, &self.forward);
    }

    /// Inverse transform including the `1/N` normalization.
    pub fn inverse(&self, data: &mut [C64]) {
        self.run(data, &self.inverse);
        let scale = 1.0 / self.len() as f64;
        data.par_iter_mut().for_each(|v| *v *= scale);
    }

    fn run(&self, data: &mut [C64], plans: &[Arc<dyn Fft<f64>>; 3]) {
        assert_eq!(data.len(), self.len(), "fft buffer size mismatch");
        for axis in 0..3 {
            if self.dims[axis] == 1 {
                continue;
            }
            let plan = &plans[axis];
            process_lines(data, self.dims, axis, |buf| {
                let mut scratch = vec![C64::default(); plan.get_inplace_scratch_len()];
                plan.process_with_scratch(buf, &mut scratch);
            });
        }
    }
}

/// Planned 2D FFT on an x1-fastest `n0 x n1` array.
pub struct Fft2 {
    inner: Fft3,
}

impl Fft2 {
    pub fn new(dims: [usize; 2]) -> Self {
        Self {
            inner: Fft3::new([dims[0], dims[1], 1]),
        }
    }

    pub fn forward(&self, data: &mut [C64]) {
        self.inner.forward(data);
    }

    pub fn inverse(&self, data: &mut [C64]) {
        self.inner.inverse(data);
    }
}

/// Type-I discrete sine transform along all three axes,
/// `y_j = sum_n x_n sin(pi n j / (m + 1))`, unnormalized.
pub struct Dst3 {
    dims: [usize; 3],
    plans: [Arc<dyn Fft<f64>>; 3],
}

impl Dst3 {
    pub fn new(dims: [usize; 3]) -> Self {
        let mut planner = FftPlanner::new();
        let plans = dims.map(|m| planner.plan_fft_forward(2 * (m + 1)));
        Self { dims, plans }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Applies the transform in place. Applying it twice multiplies by
    /// `prod_a (m_a + 1) / 2`.
    pub fn apply(&self, data: &mut [C64]) {
        assert_eq!(data.len(), self.dims.iter().product::<usize>());
        for axis in 0..3 {
            let m = self.dims[axis];
            let plan = &self.plans[axis];
            process_lines(data, self.dims, axis, |buf| {
                let len = 2 * (m + 1);
                let mut ext = vec![C64::default(); len];
                let mut scratch = vec![C64::default(); plan.get_inplace_scratch_len()];
                let half_i = C64::new(0.0, 0.5);
                for line in buf.chunks_mut(m) {
                    ext[0] = C64::default();
                    ext[m + 1] = C64::default();
                    for n in 0..m {
                        ext[n + 1] = line[n];
                        ext[len - 1 - n] = -line[n];
                    }
                    plan.process_with_scratch(&mut ext, &mut scratch);
                    for j in 0..m {
                        line[j] = half_i * ext[j + 1];
                    }
                }
            });
        }
    }
}
