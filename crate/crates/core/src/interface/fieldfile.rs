//! PSF1 binary field files.
//!
//! Layout, all little-endian: magic `PSF1`, version `u32`, kind `u8`
//! (0 real, 1 complex), dims `3 x u64`, bounding box `6 x f64`
//! (`min` then `max`), then the payload as `f64` with x1 fastest. Complex
//! payloads interleave real and imaginary parts.
//!
//! Plane data on the measurement plane are stored with dims
//! `[m1, m2, number of wavenumbers]`; the wavenumbers go to a
//! `<file>.meta.json` sidecar.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BoundingBox, ComplexField3, Grid3, PlaneGrid, RealField3};
use crate::phase::ComplexPlaneData;

pub const MAGIC: &[u8; 4] = b"PSF1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 1 + 3 * 8 + 6 * 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    Real = 0,
    Complex = 1,
}

/// A decoded file before it is attached to a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RawField {
    pub kind: FieldKind,
    pub dims: [u64; 3],
    pub bbox: [f64; 6],
    /// Interleaved when complex.
    pub payload: Vec<f64>,
}

impl RawField {
    fn node_count(&self) -> Result<usize> {
        self.dims
            .iter()
            .try_fold(1u64, |a, &d| a.checked_mul(d))
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(|| Error::Format(format!("dims {:?} overflow", self.dims)))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.kind as u8);
        for d in self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for b in self.bbox {
            out.extend_from_slice(&b.to_le_bytes());
        }
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "file too short for a header: {} bytes",
                bytes.len()
            )));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", &bytes[0..4])));
        }
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let kind = match bytes[8] {
            0 => FieldKind::Real,
            1 => FieldKind::Complex,
            k => return Err(Error::Format(format!("unknown kind byte {k}"))),
        };
        let dims = [0, 1, 2].map(|a| u64_at(9 + 8 * a));
        let bbox = [0, 1, 2, 3, 4, 5].map(|a| f64_at(33 + 8 * a));
        let mut raw = RawField {
            kind,
            dims,
            bbox,
            payload: Vec::new(),
        };
        let per_node = if kind == FieldKind::Complex { 16 } else { 8 };
        let expected = raw
            .node_count()?
            .checked_mul(per_node)
            .ok_or_else(|| Error::Format("payload size overflows".into()))?;
        let body = &bytes[HEADER_LEN..];
        if body.len() != expected {
            return Err(Error::Format(format!(
                "payload has {} bytes, header implies {expected}",
                body.len()
            )));
        }
        raw.payload = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(raw)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.encode())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }

    fn grid(&self) -> Result<Grid3> {
        let counts = self.dims.map(|d| d as usize);
        Grid3::new(counts, BoundingBox::from_array(self.bbox)?)
    }

    pub fn into_real(self) -> Result<RealField3> {
        if self.kind != FieldKind::Real {
            return Err(Error::Format("expected a real field".into()));
        }
        RealField3::from_values(self.grid()?, self.payload)
    }

    pub fn into_complex(self) -> Result<ComplexField3> {
        if self.kind != FieldKind::Complex {
            return Err(Error::Format("expected a complex field".into()));
        }
        let values = complex_values(&self.payload);
        ComplexField3::from_values(self.grid()?, values)
    }

    /// Real fields are promoted to complex.
    pub fn values_complex(&self) -> Vec<Complex64> {
        match self.kind {
            FieldKind::Real => self.payload.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
            FieldKind::Complex => complex_values(&self.payload),
        }
    }
}

fn complex_values(payload: &[f64]) -> Vec<Complex64> {
    payload.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()
}

fn interleave(values: &[Complex64]) -> Vec<f64> {
    values.iter().flat_map(|v| [v.re, v.im]).collect()
}

pub fn real_to_raw(field: &RealField3) -> RawField {
    RawField {
        kind: FieldKind::Real,
        dims: field.grid().counts().map(|c| c as u64),
        bbox: field.grid().bbox().as_array(),
        payload: field.values().to_vec(),
    }
}

pub fn complex_to_raw(field: &ComplexField3) -> RawField {
    RawField {
        kind: FieldKind::Complex,
        dims: field.grid().counts().map(|c| c as u64),
        bbox: field.grid().bbox().as_array(),
        payload: interleave(field.values()),
    }
}

pub fn write_real(path: &Path, field: &RealField3) -> Result<()> {
    real_to_raw(field).write(path)
}

pub fn write_complex(path: &Path, field: &ComplexField3) -> Result<()> {
    complex_to_raw(field).write(path)
}

pub fn read_real(path: &Path) -> Result<RealField3> {
    RawField::read(path)?.into_real()
}

pub fn read_complex(path: &Path) -> Result<ComplexField3> {
    RawField::read(path)?.into_complex()
}

/// Sidecar for plane data: the wavenumber of each slice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneMeta {
    pub ks: Vec<f64>,
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn write_plane_data(path: &Path, data: &ComplexPlaneData) -> Result<()> {
    let p = data.plane();
    let hw = p.half_width;
    RawField {
        kind: FieldKind::Complex,
        dims: [p.counts[0] as u64, p.counts[1] as u64, data.ks().len() as u64],
        bbox: [-hw, -hw, p.z, hw, hw, p.z],
        payload: interleave(data.values()),
    }
    .write(path)?;
    let meta = PlaneMeta { ks: data.ks().to_vec() };
    fs::write(
        meta_path(path),
        serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n",
    )?;
    Ok(())
}

pub fn read_plane_data(path: &Path) -> Result<ComplexPlaneData> {
    let raw = RawField::read(path)?;
    let meta_file = meta_path(path);
    let meta: PlaneMeta = serde_json::from_str(&fs::read_to_string(&meta_file)?)
        .map_err(|e| Error::Format(format!("{}: {e}", meta_file.display())))?;
    let [x0, y0, z, x1, y1, z1] = raw.bbox;
    if x0 != -x1 || y0 != -y1 || x1 != y1 || z != z1 {
        return Err(Error::Format(
            "plane data need a centered square box at one height".into(),
        ));
    }
    if raw.dims[2] as usize != meta.ks.len() {
        return Err(Error::Format(format!(
            "{} slices but {} wavenumbers in the sidecar",
            raw.dims[2],
            meta.ks.len()
        )));
    }
    let plane = PlaneGrid::new(z, x1, [raw.dims[0] as usize, raw.dims[1] as usize])?;
    ComplexPlaneData::new(plane, meta.ks, raw.values_complex())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> Grid3 {
        Grid3::new([3, 4, 2], BoundingBox::new([-1.0, -2.0, 0.0], [1.0, 2.0, 0.5]).unwrap()).unwrap()
    }

    #[test]
    fn complex_roundtrip_is_bitwise() {
        let f = ComplexField3::from_fn(grid(), |x| Complex64::new(x[0].sin() + 1e-300, -x[1] / 3.0));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.psf");
        write_complex(&path, &f).unwrap();
        let g = read_complex(&path).unwrap();
        assert_eq!(g.grid(), f.grid());
        assert!(f
            .values()
            .iter()
            .zip(g.values())
            .all(|(a, b)| a.re.to_bits() == b.re.to_bits() && a.im.to_bits() == b.im.to_bits()));
    }

    #[test]
    fn header_layout() {
        let f = RealField3::filled(grid(), 2.5);
        let bytes = real_to_raw(&f).encode();
        assert_eq!(&bytes[..4], b"PSF1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(bytes[8], 0);
        assert_eq!(u64::from_le_bytes(bytes[9..17].try_into().unwrap()), 3);
        assert_eq!(f64::from_le_bytes(bytes[33..41].try_into().unwrap()), -1.0);
        assert_eq!(bytes.len(), HEADER_LEN + 8 * 24);
        assert_eq!(
            f64::from_le_bytes(bytes[HEADER_LEN..HEADER_LEN + 8].try_into().unwrap()),
            2.5
        );
    }

    #[test]
    fn wrong_magic_and_truncation_are_errors() {
        let f = ComplexField3::filled(grid(), Complex64::new(1.0, 2.0));
        let mut bytes = complex_to_raw(&f).encode();
        let mut bad = bytes.clone();
        bad[0] = b'Q';
        assert!(matches!(RawField::decode(&bad), Err(Error::Format(_))));
        bytes.truncate(bytes.len() - 8);
        assert!(matches!(RawField::decode(&bytes), Err(Error::Format(_))));
        assert!(matches!(RawField::decode(&bytes[..10]), Err(Error::Format(_))));
        // a complex payload read as real is refused
        let raw = RawField::decode(&complex_to_raw(&f).encode()).unwrap();
        assert!(raw.into_real().is_err());
    }

    #[test]
    fn plane_data_roundtrip() {
        let plane = PlaneGrid::new(4.0, 1.5, [3, 2]).unwrap();
        let values: Vec<Complex64> = (0..12).map(|i| Complex64::new(i as f64, 0.5 * i as f64)).collect();
        let data = ComplexPlaneData::new(plane, vec![2.0, 1.0], values).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.psf");
        write_plane_data(&path, &data).unwrap();
        let back = read_plane_data(&path).unwrap();
        assert_eq!(back.plane(), data.plane());
        assert_eq!(back.ks(), data.ks());
        assert_eq!(back.values(), data.values());
    }

    proptest! {
        #[test]
        fn real_roundtrip_any_values(vals in proptest::collection::vec(any::<f64>(), 24)) {
            let f = RealField3::from_values(grid(), vals).unwrap();
            let back = RawField::decode(&real_to_raw(&f).encode()).unwrap().into_real().unwrap();
            prop_assert!(f.values().iter().zip(back.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
