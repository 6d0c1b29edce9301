//! Binary caches for fields and measures, and CSV export.
//!
//! All binary data is little-endian. Field layout: magic `GRNF`, u32 version, u8 kind,
//! 4×u32 resolution, 4×f64 box radii, f64 mollification radius, f64 tol, then the
//! values. Measure layout: magic `EQMS`, u32 version, the same geometry block,
//! f64 clipped mass, f64 raw total, then the cell masses.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::GreenField;
use crate::green::GreenKind;
use crate::grid::Grid4;
use crate::measure::DiscreteMeasure;

pub const FORMAT_VERSION: u32 = 1;

fn put_f64s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 * 4096);
    for chunk in xs.chunks(4096) {
        buf.clear();
        for x in chunk {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn get_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; 8 * n];
    r.read_exact(&mut bytes)?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after payload".into()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

fn check_magic<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Format(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&m)
        )));
    }
    let v = get_u32(r)?;
    if v != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {v}")));
    }
    Ok(())
}

fn put_geometry<W: Write>(w: &mut W, g: &Grid4) -> Result<()> {
    for n in g.resolution {
        let n = u32::try_from(n).map_err(|_| Error::Format("resolution exceeds u32".into()))?;
        w.write_all(&n.to_le_bytes())?;
    }
    for r in g.radii {
        w.write_all(&r.to_le_bytes())?;
    }
    Ok(())
}

fn get_geometry<R: Read>(r: &mut R) -> Result<Grid4> {
    let mut res = [0usize; 4];
    for n in &mut res {
        *n = get_u32(r)? as usize;
    }
    let mut radii = [0.0; 4];
    for x in &mut radii {
        *x = get_f64(r)?;
    }
    Grid4::new(res, radii).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_field<W: Write>(w: &mut W, f: &GreenField) -> Result<()> {
    w.write_all(b"GRNF")?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[f.kind.code()])?;
    put_geometry(w, &f.geom)?;
    w.write_all(&f.mollification_radius.to_le_bytes())?;
    w.write_all(&f.tol.to_le_bytes())?;
    put_f64s(w, &f.values)
}

pub fn read_field<R: Read>(r: &mut R) -> Result<GreenField> {
    check_magic(r, b"GRNF")?;
    let mut k = [0u8; 1];
    r.read_exact(&mut k)?;
    let kind = GreenKind::from_code(k[0]).ok_or_else(|| Error::Format(format!("bad direction byte {}", k[0])))?;
    let geom = get_geometry(r)?;
    let mollification_radius = get_f64(r)?;
    let tol = get_f64(r)?;
    let values = get_f64s(r, geom.len())?;
    Ok(GreenField {
        geom,
        kind,
        mollification_radius,
        tol,
        values,
    })
}

pub fn save_field(path: &Path, f: &GreenField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_field(&mut w, f)?;
    w.flush()?;
    Ok(())
}

pub fn load_field(path: &Path) -> Result<GreenField> {
    read_field(&mut BufReader::new(File::open(path)?))
}

pub fn write_measure<W: Write>(w: &mut W, m: &DiscreteMeasure) -> Result<()> {
    w.write_all(b"EQMS")?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    put_geometry(w, &m.geom)?;
    w.write_all(&m.clipped_mass.to_le_bytes())?;
    w.write_all(&m.raw_total.to_le_bytes())?;
    put_f64s(w, &m.masses)
}

pub fn read_measure<R: Read>(r: &mut R) -> Result<DiscreteMeasure> {
    check_magic(r, b"EQMS")?;
    let geom = get_geometry(r)?;
    let clipped_mass = get_f64(r)?;
    let raw_total = get_f64(r)?;
    let masses = get_f64s(r, geom.len())?;
    DiscreteMeasure::from_parts(geom, masses, clipped_mass, raw_total)
}

pub fn save_measure(path: &Path, m: &DiscreteMeasure) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_measure(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn load_measure(path: &Path) -> Result<DiscreteMeasure> {
    read_measure(&mut BufReader::new(File::open(path)?))
}

/// One row per cell with positive mass: index, four center coordinates, mass.
pub fn write_measure_csv<W: Write>(w: &mut W, m: &DiscreteMeasure) -> Result<()> {
    writeln!(w, "cell,x1,y1,x2,y2,mass")?;
    for &idx in m.support() {
        let x = m.geom.node(m.geom.unravel(idx));
        writeln!(w, "{idx},{},{},{},{},{:e}", x[0], x[1], x[2], x[3], m.masses[idx])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field() -> GreenField {
        let geom = Grid4::new([3, 4, 2, 5], [1.0, 2.5, 0.5, 3.25]).unwrap();
        GreenField {
            geom,
            kind: GreenKind::Backward,
            mollification_radius: 0.125,
            tol: 1e-9,
            values: (0..geom.len()).map(|i| (i as f64).sqrt() * 1.000001 + 1e-300).collect(),
        }
    }

    #[test]
    fn field_roundtrip_is_bit_exact() {
        let f = field();
        let mut buf = Vec::new();
        write_field(&mut buf, &f).unwrap();
        assert_eq!(&buf[..4], b"GRNF");
        assert_eq!(buf.len(), 4 + 4 + 1 + 16 + 32 + 16 + 8 * f.geom.len());
        let g = read_field(&mut buf.as_slice()).unwrap();
        assert_eq!(g.geom, f.geom);
        assert_eq!(g.kind, f.kind);
        assert!(g.values.iter().zip(&f.values).all(|(a, b)| a.to_bits() == b.to_bits()));
        let mut again = Vec::new();
        write_field(&mut again, &g).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn corrupt_headers_are_rejected() {
        let mut buf = Vec::new();
        write_field(&mut buf, &field()).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_field(&mut bad.as_slice()), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[8] = 9;
        assert!(read_field(&mut bad.as_slice()).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(read_field(&mut long.as_slice()).is_err());
        assert!(read_field(&mut &buf[..buf.len() - 3]).is_err());
    }
}
