//! Intensity tables: header `x1,x2,k,f`, one row per plane node and
//! wavenumber, sorted by `(k, x2, x1)`. Floats use the shortest
//! representation that reads back to the same value.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::PlaneGrid;
use crate::phase::IntensityData;

pub const HEADER: [&str; 4] = ["x1", "x2", "k", "f"];

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("intensity csv: {e}"))
}

pub fn write_intensity<W: Write>(out: W, f: &IntensityData) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER).map_err(csv_err)?;
    let plane = f.plane();
    let mut order: Vec<usize> = (0..f.ks().len()).collect();
    order.sort_by(|&a, &b| f.ks()[a].total_cmp(&f.ks()[b]));
    for m in order {
        let k = f.ks()[m];
        let slice = f.slice(m);
        for j in 0..plane.counts[1] {
            for i in 0..plane.counts[0] {
                let row = [
                    plane.axis_coord(0, i).to_string(),
                    plane.axis_coord(1, j).to_string(),
                    k.to_string(),
                    slice[plane.index(i, j)].to_string(),
                ];
                w.write_record(&row).map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_intensity_file(path: &Path, f: &IntensityData) -> Result<()> {
    write_intensity(std::fs::File::create(path)?, f)
}

/// Reads a table into data on the plane `x3 = z`, wavenumbers descending.
/// The nodes must form a complete centered square grid.
pub fn read_intensity<R: Read>(input: R, z: f64) -> Result<IntensityData> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(Error::Format(format!(
            "intensity csv header must be x1,x2,k,f, got {:?}",
            header
        )));
    }
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let mut vals = [0.0; 4];
        for (a, v) in vals.iter_mut().enumerate() {
            *v = rec
                .get(a)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    Error::Format(format!("row {}: column {} is not a finite number", line + 2, HEADER[a]))
                })?;
        }
        if vals[3] < 0.0 {
            return Err(Error::Format(format!(
                "row {}: negative intensity {}",
                line + 2,
                vals[3]
            )));
        }
        rows.push(vals);
    }
    if rows.is_empty() {
        return Err(Error::Format("intensity csv has no rows".into()));
    }
    let axis = |a: usize| -> Vec<f64> {
        let mut v: Vec<f64> = rows.iter().map(|r| r[a]).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let (xs, ys, mut ks) = (axis(0), axis(1), axis(2));
    ks.reverse();
    let hw = xs[xs.len() - 1];
    if xs[0] != -hw || ys[0] != -hw || ys[ys.len() - 1] != hw {
        return Err(Error::Format("plane nodes must span a centered square".into()));
    }
    let plane = PlaneGrid::new(z, hw, [xs.len(), ys.len()])?;
    let n = plane.len();
    if rows.len() != n * ks.len() {
        return Err(Error::Format(format!(
            "{} rows, but a complete {}x{} grid at {} wavenumbers needs {}",
            rows.len(),
            xs.len(),
            ys.len(),
            ks.len(),
            n * ks.len()
        )));
    }
    let lookup = |v: &[f64]| -> BTreeMap<u64, usize> { v.iter().enumerate().map(|(i, x)| (x.to_bits(), i)).collect() };
    let (xi, yi, ki) = (lookup(&xs), lookup(&ys), lookup(&ks));
    let mut values = vec![f64::NAN; n * ks.len()];
    for r in &rows {
        let idx = ki[&r[2].to_bits()] * n + plane.index(xi[&r[0].to_bits()], yi[&r[1].to_bits()]);
        if !values[idx].is_nan() {
            return Err(Error::Format(format!(
                "duplicate row at x1 = {}, x2 = {}, k = {}",
                r[0], r[1], r[2]
            )));
        }
        values[idx] = r[3];
    }
    // nodes must also sit on the uniform grid the plane describes
    for (a, v) in [&xs, &ys].into_iter().enumerate() {
        for (i, x) in v.iter().enumerate() {
            if (x - plane.axis_coord(a, i)).abs() > 1e-9 * hw.max(1.0) {
                return Err(Error::Format(format!("x{} nodes are not uniformly spaced", a + 1)));
            }
        }
    }
    IntensityData::new(plane, ks, values)
}

pub fn read_intensity_file(path: &Path, z: f64) -> Result<IntensityData> {
    read_intensity(std::fs::File::open(path)?, z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> IntensityData {
        let plane = PlaneGrid::new(7.0, 1.0, [3, 2]).unwrap();
        let values = (0..12).map(|i| 0.1 * i as f64 + 1.0 / 3.0).collect();
        IntensityData::new(plane, vec![2.5, 2.0], values).unwrap()
    }

    #[test]
    fn rows_sorted_by_k_then_x2_then_x1() {
        let mut buf = Vec::new();
        write_intensity(&mut buf, &sample()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x1,x2,k,f");
        assert_eq!(lines.len(), 13);
        assert!(lines[1].starts_with("-1,-1,2,"), "{}", lines[1]);
        assert!(lines[2].starts_with("0,-1,2,"), "{}", lines[2]);
        assert!(lines[4].starts_with("-1,1,2,"), "{}", lines[4]);
        assert!(lines[7].starts_with("-1,-1,2.5,"), "{}", lines[7]);
    }

    #[test]
    fn roundtrip_is_exact_and_deterministic() {
        let f = sample();
        let mut a = Vec::new();
        write_intensity(&mut a, &f).unwrap();
        let back = read_intensity(a.as_slice(), 7.0).unwrap();
        assert_eq!(back.plane(), f.plane());
        assert_eq!(back.ks(), f.ks());
        assert_eq!(back.values(), f.values());
        let mut b = Vec::new();
        write_intensity(&mut b, &back).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn malformed_tables_are_rejected() {
        let bad_header = "x,y,k,f\n0,0,1,1\n";
        assert!(read_intensity(bad_header.as_bytes(), 1.0).is_err());
        let negative = "x1,x2,k,f\n-1,-1,1,-0.5\n1,-1,1,1\n-1,1,1,1\n1,1,1,1\n";
        assert!(read_intensity(negative.as_bytes(), 1.0).is_err());
        let missing = "x1,x2,k,f\n-1,-1,1,1\n1,-1,1,1\n-1,1,1,1\n";
        assert!(read_intensity(missing.as_bytes(), 1.0).is_err());
        let ok = "x1,x2,k,f\n-1,-1,1,1\n1,-1,1,1\n-1,1,1,1\n1,1,1,1\n";
        assert_eq!(read_intensity(ok.as_bytes(), 1.0).unwrap().values(), &[1.0; 4]);
    }
}
