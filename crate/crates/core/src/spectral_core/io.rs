//! Flat binary and CSV encodings of [`Field`]s.
//!
//! Binary layout (little endian): `dim: u64`, `points_per_axis: u64`,
//! `extent: f64`, then `points_per_axis^dim` values as `f64`, row-major.

use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::{Field, Grid};

pub fn write_field<W: Write>(field: &Field, mut w: W) -> Result<()> {
    let g = field.grid();
    w.write_all(&(g.dim() as u64).to_le_bytes())?;
    w.write_all(&(g.points_per_axis() as u64).to_le_bytes())?;
    w.write_all(&g.extent().to_le_bytes())?;
    for v in field.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads one field; returns `Ok(None)` at a clean end of stream.
pub fn read_field<R: Read>(mut r: R) -> Result<Option<Field>> {
    let mut buf = [0u8; 8];
    match r.read_exact(&mut buf) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let dim = u64::from_le_bytes(buf) as usize;
    r.read_exact(&mut buf)?;
    let n = u64::from_le_bytes(buf) as usize;
    r.read_exact(&mut buf)?;
    let extent = f64::from_le_bytes(buf);
    let grid = Grid::new(dim, extent, n).map_err(|e| Error::Format(e.to_string()))?;
    let mut values = Vec::with_capacity(grid.len());
    for _ in 0..grid.len() {
        r.read_exact(&mut buf)?;
        values.push(f64::from_le_bytes(buf));
    }
    Field::new(grid, values).map(Some)
}

/// CSV with header `x,value` (1D) or `x,y,value` (2D).
pub fn write_field_csv<W: Write>(field: &Field, mut w: W) -> Result<()> {
    let g = field.grid();
    if g.dim() == 1 {
        writeln!(w, "x,value")?;
    } else {
        writeln!(w, "x,y,value")?;
    }
    for (i, v) in field.values().iter().enumerate() {
        let p = g.point(i);
        if g.dim() == 1 {
            writeln!(w, "{},{}", p[0], v)?;
        } else {
            writeln!(w, "{},{},{}", p[0], p[1], v)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let g = Grid::new(1, 2.5, 16).unwrap();
        let f = Field::from_fn(g, |x| x[0]);
        let mut buf = Vec::new();
        write_field(&f, &mut buf).unwrap();
        assert_eq!(buf.len(), 24 + 16 * 8);
        assert_eq!(&buf[0..8], &1u64.to_le_bytes());
        assert_eq!(&buf[8..16], &16u64.to_le_bytes());
        assert_eq!(&buf[16..24], &2.5f64.to_le_bytes());
        assert_eq!(&buf[24..32], &(-2.5f64).to_le_bytes());
    }

    #[test]
    fn truncated_stream_is_an_error() {
        let g = Grid::new(1, 1.0, 16).unwrap();
        let mut buf = Vec::new();
        write_field(&Field::zeros(g), &mut buf).unwrap();
        buf.truncate(40);
        assert!(read_field(&buf[..]).is_err());
        assert!(read_field(&[][..]).unwrap().is_none());
    }

    proptest! {
        #[test]
        fn binary_roundtrip(dim in 1usize..=2, half in 8usize..=12, extent in 0.1f64..100.0,
                            seed in any::<u64>()) {
            let g = Grid::new(dim, extent, 2 * half).unwrap();
            let f = Field::from_fn(g, |x| ((x[0] * 1.3 + x[1]) * (seed % 97) as f64).sin());
            let mut buf = Vec::new();
            write_field(&f, &mut buf).unwrap();
            write_field(&f, &mut buf).unwrap();
            let mut r = &buf[..];
            let a = read_field(&mut r).unwrap().unwrap();
            let b = read_field(&mut r).unwrap().unwrap();
            prop_assert_eq!(&a, &f);
            prop_assert_eq!(&b, &f);
            prop_assert!(read_field(&mut r).unwrap().is_none());
        }
    }
}
