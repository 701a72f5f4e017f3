//! Discrete Helmholtz Green's function convolution.
//!
//! The free-space kernel is truncated at a radius `L` exceeding the grid
//! diagonal. Its Fourier transform is known in closed form, so sampling it on
//! a periodic cell of period at least `extent + L` and inverting gives
//! convolution weights whose discrete convolution matches the continuous one
//! for band-limited densities.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::fft::{smooth_size, Fft3};

type C64 = Complex64;

/// `exp(ik|x|) / (4 pi |x|)`.
pub fn green(k: f64, r: f64) -> C64 {
    C64::from_polar(1.0 / (4.0 * PI * r), k * r)
}

/// Fourier transform of the kernel truncated to `|x| < l`, at radial frequency `s`.
pub fn truncated_green_transform(k: f64, l: f64, s: f64) -> C64 {
    let i = C64::i();
    let e = C64::from_polar(1.0, k * l);
    if (s - k).abs() < 1e-6 * (1.0 + k) {
        // removable singularity at s = k
        let d = e * (-l * (k * l).sin() - i * k * (k * l * (k * l).cos() - (k * l).sin()) / (k * k));
        return d / (-2.0 * k);
    }
    let sinc = if s.abs() < 1e-12 { l } else { (s * l).sin() / s };
    (e * ((s * l).cos() - i * k * sinc) - 1.0) / (k * k - s * s)
}

/// Convolution weights `T(d)` for offsets `|d_a| < counts[a]`.
#[derive(Clone, Debug)]
pub struct GreenKernel {
    k: f64,
    counts: [usize; 3],
    spacing: [f64; 3],
    truncation: f64,
    taps: Vec<C64>,
}

impl GreenKernel {
    pub fn new(counts: [usize; 3], spacing: [f64; 3], k: f64) -> Self {
        let ext = [0, 1, 2].map(|a| (counts[a] - 1) as f64 * spacing[a]);
        let diag = ext.iter().map(|e| e * e).sum::<f64>().sqrt();
        let hmax = spacing.iter().cloned().fold(0.0, f64::max);
        let l = diag + hmax;
        let m = [0, 1, 2].map(|a| smooth_size(((ext[a] + l) / spacing[a]).ceil() as usize + 2));
        let freq = |a: usize, i: usize| {
            let signed = if i <= m[a] / 2 {
                i as f64
            } else {
                i as f64 - m[a] as f64
            };
            2.0 * PI * signed / (m[a] as f64 * spacing[a])
        };
        let s0: Vec<f64> = (0..m[0]).map(|i| freq(0, i)).collect();
        let s1: Vec<f64> = (0..m[1]).map(|i| freq(1, i)).collect();
        let s2: Vec<f64> = (0..m[2]).map(|i| freq(2, i)).collect();
        let mut grid = vec![C64::default(); m[0] * m[1] * m[2]];
        grid.par_chunks_mut(m[0] * m[1]).enumerate().for_each(|(i2, slab)| {
            for i1 in 0..m[1] {
                for i0 in 0..m[0] {
                    let s = (s0[i0] * s0[i0] + s1[i1] * s1[i1] + s2[i2] * s2[i2]).sqrt();
                    slab[i0 + m[0] * i1] = truncated_green_transform(k, l, s);
                }
            }
        });
        Fft3::new(m).inverse(&mut grid);

        let t = counts.map(|c| 2 * c - 1);
        let mut taps = vec![C64::default(); t[0] * t[1] * t[2]];
        taps.par_chunks_mut(t[0] * t[1]).enumerate().for_each(|(j2, slab)| {
            let d2 = j2 as isize - (counts[2] as isize - 1);
            let g2 = d2.rem_euclid(m[2] as isize) as usize;
            for j1 in 0..t[1] {
                let d1 = j1 as isize - (counts[1] as isize - 1);
                let g1 = d1.rem_euclid(m[1] as isize) as usize;
                for j0 in 0..t[0] {
                    let d0 = j0 as isize - (counts[0] as isize - 1);
                    let g0 = d0.rem_euclid(m[0] as isize) as usize;
                    slab[j0 + t[0] * j1] = grid[g0 + m[0] * (g1 + m[1] * g2)];
                }
            }
        });
        Self {
            k,
            counts,
            spacing,
            truncation: l,
            taps,
        }
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn truncation(&self) -> f64 {
        self.truncation
    }

    /// Weight for node offset `d`; approximately `h^3 G(d h)` away from the origin.
    pub fn tap(&self, d: [isize; 3]) -> C64 {
        let t = self.counts.map(|c| 2 * c - 1);
        let j = [0, 1, 2].map(|a| {
            let v = d[a] + self.counts[a] as isize - 1;
            assert!(v >= 0 && (v as usize) < t[a], "offset {d:?} outside kernel range");
            v as usize
        });
        self.taps[j[0] + t[0] * (j[1] + t[1] * j[2])]
    }
}

/// Maps a density on one sub-box of the kernel's grid to potentials on another.
pub struct Convolution {
    src_counts: [usize; 3],
    tgt_counts: [usize; 3],
    dims: [usize; 3],
    fft: Fft3,
    kernel_hat: Vec<C64>,
}

impl Convolution {
    /// `src_offset`/`tgt_offset` are the index origins of the boxes in the parent grid.
    pub fn new(
        kernel: &GreenKernel,
        src_offset: [usize; 3],
        src_counts: [usize; 3],
        tgt_offset: [usize; 3],
        tgt_counts: [usize; 3],
    ) -> Self {
        for a in 0..3 {
            assert!(src_offset[a] + src_counts[a] <= kernel.counts[a]);
            assert!(tgt_offset[a] + tgt_counts[a] <= kernel.counts[a]);
        }
        let dims = [0, 1, 2].map(|a| smooth_size(src_counts[a] + tgt_counts[a] - 1));
        let base = [0, 1, 2].map(|a| tgt_offset[a] as isize - src_offset[a] as isize);
        let mut kernel_hat = vec![C64::default(); dims[0] * dims[1] * dims[2]];
        let range = |a: usize| -(src_counts[a] as isize - 1)..=(tgt_counts[a] as isize - 1);
        for e2 in range(2) {
            let c2 = e2.rem_euclid(dims[2] as isize) as usize;
            for e1 in range(1) {
                let c1 = e1.rem_euclid(dims[1] as isize) as usize;
                for e0 in range(0) {
                    let c0 = e0.rem_euclid(dims[0] as isize) as usize;
                    kernel_hat[c0 + dims[0] * (c1 + dims[1] * c2)] =
                        kernel.tap([base[0] + e0, base[1] + e1, base[2] + e2]);
                }
            }
        }
        let fft = Fft3::new(dims);
        fft.forward(&mut kernel_hat);
        Self {
            src_counts,
            tgt_counts,
            dims,
            fft,
            kernel_hat,
        }
    }

    pub fn src_len(&self) -> usize {
        self.src_counts.iter().product()
    }

    pub fn tgt_len(&self) -> usize {
        self.tgt_counts.iter().product()
    }

    /// `y_i = sum_j T(i - j) x_j` over the two boxes.
    pub fn apply(&self, x: &[C64], y: &mut [C64]) {
        assert_eq!(x.len(), self.src_len());
        assert_eq!(y.len(), self.tgt_len());
        let [d0, d1, _] = self.dims;
        let [s0, s1, s2] = self.src_counts;
        let [t0, t1, t2] = self.tgt_counts;
        let mut buf = vec![C64::default(); self.fft.len()];
        for k in 0..s2 {
            for j in 0..s1 {
                let src = &x[s0 * (j + s1 * k)..][..s0];
                buf[d0 * (j + d1 * k)..][..s0].copy_from_slice(src);
            }
        }
        self.fft.forward(&mut buf);
        buf.par_iter_mut()
            .zip(self.kernel_hat.par_iter())
            .for_each(|(b, h)| *b *= h);
        self.fft.inverse(&mut buf);
        for k in 0..t2 {
            for j in 0..t1 {
                y[t0 * (j + t1 * k)..][..t0].copy_from_slice(&buf[d0 * (j + d1 * k)..][..t0]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transform_limits_are_continuous() {
        let (k, l) = (5.0, 3.0);
        for s in [0.0, k] {
            let a = truncated_green_transform(k, l, s);
            let b = truncated_green_transform(k, l, s + 1e-4);
            assert!((a - b).norm() < 1e-2 * a.norm().max(1.0), "{s}: {a} {b}");
        }
        // k -> 0 gives the truncated Coulomb transform (1 - cos sL) / s^2
        let s = 2.0;
        let c = truncated_green_transform(1e-8, l, s);
        assert!((c.re - (1.0 - (s * l).cos()) / (s * s)).abs() < 1e-8);
    }

    #[test]
    fn transform_matches_radial_quadrature() {
        let (k, l, s) = (4.0, 2.0, 3.0);
        let n = 200_000;
        let dr = l / n as f64;
        let mut acc = C64::default();
        for i in 0..n {
            let r = (i as f64 + 0.5) * dr;
            acc += C64::from_polar(1.0, k * r) * (s * r).sin() / s * dr;
        }
        assert!((acc - truncated_green_transform(k, l, s)).norm() < 1e-8);
    }

    #[test]
    fn taps_approach_pointwise_kernel() {
        let h = 0.1;
        let kern = GreenKernel::new([21; 3], [h; 3], 3.0);
        for d in [[10isize, 0, 0], [7, 7, 3], [-12, 5, 9]] {
            let r = ((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) as f64).sqrt() * h;
            let expect = green(3.0, r) * h * h * h;
            let got = kern.tap(d);
            assert!((got - expect).norm() < 0.02 * expect.norm(), "{d:?}: {got} vs {expect}");
        }
    }

    #[test]
    fn convolution_matches_direct_sum() {
        let kern = GreenKernel::new([9, 8, 7], [0.2, 0.25, 0.3], 2.0);
        let src_off = [2, 1, 3];
        let src = [4, 3, 2];
        let tgt_off = [0, 0, 0];
        let tgt = [9, 8, 7];
        let conv = Convolution::new(&kern, src_off, src, tgt_off, tgt);
        let x: Vec<C64> = (0..24)
            .map(|i| C64::new(i as f64 * 0.1, 1.0 - i as f64 * 0.05))
            .collect();
        let mut y = vec![C64::default(); 9 * 8 * 7];
        conv.apply(&x, &mut y);
        for (ti, yv) in y.iter().enumerate() {
            let t = [ti % 9, (ti / 9) % 8, ti / 72];
            let mut s = C64::default();
            for (si, xv) in x.iter().enumerate() {
                let p = [si % 4 + src_off[0], (si / 4) % 3 + src_off[1], si / 12 + src_off[2]];
                let d = [0, 1, 2].map(|a| (t[a] + tgt_off[a]) as isize - p[a] as isize);
                s += kern.tap(d) * xv;
            }
            assert!((s - yv).norm() < 1e-12 * (1.0 + s.norm()));
        }
    }
}
