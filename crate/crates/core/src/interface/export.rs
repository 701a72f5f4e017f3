//! Two-dimensional slices of volume or plane-stack data as CSV matrices or
//! 16-bit binary PGM images.
//!
//! A slice fixes one axis; the remaining axes `(b, c)` with `b < c` become
//! columns and rows. Row 0 holds the smallest index along `c` in both formats.
//! PGM samples are `round(65535 (v - min) / (max - min))`, with a constant
//! slice mapped to mid-gray; `min` and `max` go to a `<file>.minmax.txt`
//! sidecar.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Pgm,
}

impl FromStr for ExportFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(Self::Csv),
            "pgm" => Ok(Self::Pgm),
            other => Err(format!("unknown export format `{other}` (csv or pgm)")),
        }
    }
}

/// A row-major 2-D slice.
#[derive(Clone, Debug, PartialEq)]
pub struct Slice2 {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Slice2 {
    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Extracts the slice `index` along `axis` from x1-fastest data of shape `dims`.
pub fn take_slice(values: &[f64], dims: [usize; 3], axis: usize, index: usize) -> Result<Slice2> {
    if axis > 2 {
        return invalid(format!("axis must be 0, 1 or 2, got {axis}"));
    }
    if index >= dims[axis] {
        return invalid(format!(
            "slice index {index} out of range 0..{} on axis {axis}",
            dims[axis]
        ));
    }
    if values.len() != dims.iter().product::<usize>() {
        return invalid("value count does not match dims");
    }
    let (b, c) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let mut out = Vec::with_capacity(dims[b] * dims[c]);
    for jc in 0..dims[c] {
        for jb in 0..dims[b] {
            let mut ix = [0usize; 3];
            ix[axis] = index;
            ix[b] = jb;
            ix[c] = jc;
            out.push(values[ix[0] + dims[0] * (ix[1] + dims[1] * ix[2])]);
        }
    }
    Ok(Slice2 {
        width: dims[b],
        height: dims[c],
        values: out,
    })
}

pub fn csv_matrix(slice: &Slice2) -> String {
    let mut s = String::new();
    for row in slice.values.chunks(slice.width) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Binary P5 image with maxval 65535 and big-endian samples.
pub fn pgm16(slice: &Slice2) -> Vec<u8> {
    let (lo, hi) = slice.min_max();
    let mut out = format!("P5\n{} {}\n65535\n", slice.width, slice.height).into_bytes();
    for &v in &slice.values {
        let s = if hi > lo {
            (65535.0 * (v - lo) / (hi - lo)).round().clamp(0.0, 65535.0) as u16
        } else {
            32768
        };
        out.extend_from_slice(&s.to_be_bytes());
    }
    out
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".minmax.txt");
    PathBuf::from(s)
}

/// Writes the slice to `path`; PGM output also writes the min/max sidecar.
pub fn export_slice(
    values: &[f64],
    dims: [usize; 3],
    axis: usize,
    index: usize,
    format: ExportFormat,
    path: &Path,
) -> Result<Slice2> {
    let slice = take_slice(values, dims, axis, index)?;
    match format {
        ExportFormat::Csv => fs::write(path, csv_matrix(&slice))?,
        ExportFormat::Pgm => {
            fs::File::create(path)?.write_all(&pgm16(&slice))?;
            let (lo, hi) = slice.min_max();
            fs::write(sidecar_path(path), format!("min {lo}\nmax {hi}\n"))?;
        }
    }
    Ok(slice)
}
