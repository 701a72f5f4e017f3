//! Partial-wave series for a homogeneous sphere lit by `exp(i k x3)`.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};

type C64 = Complex64;

/// Spherical Bessel `j_0..=j_lmax` at `x > 0` by downward recurrence.
pub fn spherical_j(lmax: usize, x: f64) -> Vec<f64> {
    let start = lmax + 20 + x.ceil() as usize + (x.sqrt() * 10.0) as usize;
    let mut f = vec![0.0f64; start + 2];
    f[start] = 1e-300;
    for l in (1..=start).rev() {
        f[l - 1] = (2 * l + 1) as f64 / x * f[l] - f[l + 1];
        if f[l - 1].abs() > 1e250 {
            f[l - 1..].iter_mut().for_each(|v| *v *= 1e-250);
        }
    }
    f.truncate(lmax.max(1) + 1);
    let mut out = f;
    // normalize against whichever of j0, j1 is better conditioned
    let j0 = x.sin() / x;
    let j1 = x.sin() / (x * x) - x.cos() / x;
    let scale = if j0.abs() >= j1.abs() || lmax == 0 {
        j0 / out[0]
    } else {
        j1 / out[1]
    };
    out.iter_mut().for_each(|v| *v *= scale);
    out.truncate(lmax + 1);
    out
}

/// Spherical Neumann `y_0..=y_lmax` by upward recurrence.
pub fn spherical_y(lmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; lmax + 1];
    out[0] = -x.cos() / x;
    if lmax >= 1 {
        out[1] = -x.cos() / (x * x) - x.sin() / x;
    }
    for l in 1..lmax {
        out[l + 1] = (2 * l + 1) as f64 / x * out[l] - out[l - 1];
    }
    out
}

/// Legendre polynomials `P_0..=P_lmax` at `t`.
pub fn legendre(lmax: usize, t: f64) -> Vec<f64> {
    let mut p = vec![0.0; lmax + 1];
    p[0] = 1.0;
    if lmax >= 1 {
        p[1] = t;
    }
    for l in 1..lmax {
        p[l + 1] = ((2 * l + 1) as f64 * t * p[l] - l as f64 * p[l - 1]) / (l + 1) as f64;
    }
    p
}

/// Derivatives from `f_l' = (l / x) f_l - f_{l+1}`; needs `f` up to `lmax + 1`.
fn derivatives(f: &[f64], x: f64) -> Vec<f64> {
    (0..f.len() - 1).map(|l| l as f64 / x * f[l] - f[l + 1]).collect()
}

#[derive(Clone, Debug)]
pub struct MieField {
    pub values: Vec<C64>,
    pub order: usize,
    /// Largest magnitude among the last two retained scattered terms.
    pub tail_bound: f64,
}

/// Scattering coefficients `a_0..=a_order`.
pub fn mie_coefficients(radius: f64, n_inside: f64, k: f64, order: usize) -> Result<Vec<C64>> {
    let x = k * radius;
    let m = n_inside;
    let j = spherical_j(order + 1, x);
    let y = spherical_y(order + 1, x);
    let jj = spherical_j(order + 1, m * x);
    let dj = derivatives(&j, x);
    let dy = derivatives(&y, x);
    let djj = derivatives(&jj, m * x);
    let mut out = Vec::with_capacity(order + 1);
    for l in 0..=order {
        let h = C64::new(j[l], y[l]);
        let dh = C64::new(dj[l], dy[l]);
        let num = m * djj[l] * j[l] - dj[l] * jj[l];
        let den = dh * jj[l] - m * djj[l] * h;
        let a = num / den;
        if !(a.re.is_finite() && a.im.is_finite()) {
            return Err(Error::NonFinite(format!("partial-wave coefficient of order {l}")));
        }
        out.push(a);
    }
    Ok(out)
}

/// Total field at exterior points of a sphere centered at the origin,
/// truncated at `order` (at least `k radius + 10`; pass `None` for that).
pub fn mie_reference(
    radius: f64,
    n_inside: f64,
    k: f64,
    points: &[[f64; 3]],
    order: Option<usize>,
) -> Result<MieField> {
    if !(radius > 0.0 && n_inside >= 1.0 && k > 0.0) {
        return invalid("series needs radius > 0, n >= 1 and k > 0");
    }
    let min_order = (k * radius).ceil() as usize + 10;
    let order = order.unwrap_or(min_order).max(min_order);
    let a = mie_coefficients(radius, n_inside, k, order)?;
    let results: Vec<Result<(C64, f64)>> = points
        .par_iter()
        .map(|p| {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            if r <= radius {
                return invalid(format!("point {p:?} is not outside the sphere"));
            }
            let kr = k * r;
            let j = spherical_j(order, kr);
            let y = spherical_y(order, kr);
            let pl = legendre(order, p[2] / r);
            let mut sum = C64::default();
            let mut tail = 0.0f64;
            let mut il = C64::new(1.0, 0.0);
            for l in 0..=order {
                let w = il * (2 * l + 1) as f64 * pl[l];
                let scattered = w * a[l] * C64::new(j[l], y[l]);
                sum += scattered;
                if l + 2 > order {
                    tail = tail.max(scattered.norm());
                }
                il *= C64::i();
            }
            let total = C64::from_polar(1.0, k * p[2]) + sum;
            if !(total.re.is_finite() && total.im.is_finite()) {
                return Err(Error::NonFinite("partial-wave sum".into()));
            }
            Ok((total, tail))
        })
        .collect();
    let mut values = Vec::with_capacity(points.len());
    let mut tail_bound = 0.0f64;
    for r in results {
        let (v, t) = r?;
        values.push(v);
        tail_bound = tail_bound.max(t);
    }
    Ok(MieField {
        values,
        order,
        tail_bound,
    })
}
