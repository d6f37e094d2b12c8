//! Binary snapshot files.
//!
//! Layout (all little-endian): magic `SNLS`, version `u16`, `d: u8`,
//! `N: u32`, `L: f64`, time `t: f64`, then `N^d` pairs `(re, im)` of `f64`
//! in row-major axis order.

use std::io::{Read, Write};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec};

pub const MAGIC: &[u8; 4] = b"SNLS";
pub const FORMAT_VERSION: u16 = 1;

pub fn write_snapshot<W: Write>(mut out: W, field: &Field, time: f64) -> Result<()> {
    let g = field.grid();
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&[g.dim() as u8])?;
    out.write_all(&(g.n() as u32).to_le_bytes())?;
    out.write_all(&g.half_length().to_le_bytes())?;
    out.write_all(&time.to_le_bytes())?;
    let mut buf = Vec::with_capacity(16 * g.len());
    for z in field.values() {
        buf.extend_from_slice(&z.re.to_le_bytes());
        buf.extend_from_slice(&z.im.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_array<const K: usize, R: Read>(input: &mut R) -> Result<[u8; K]> {
    let mut b = [0u8; K];
    input
        .read_exact(&mut b)
        .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    Ok(b)
}

/// Reads a snapshot, returning the field and its time stamp.
pub fn read_snapshot<R: Read>(mut input: R) -> Result<(Field, f64)> {
    let magic: [u8; 4] = read_array(&mut input)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes(read_array(&mut input)?);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let [d] = read_array::<1, _>(&mut input)?;
    let n = u32::from_le_bytes(read_array(&mut input)?) as usize;
    let l = f64::from_le_bytes(read_array(&mut input)?);
    let t = f64::from_le_bytes(read_array(&mut input)?);
    let grid = GridSpec::new(d as usize, n, l)?;
    let mut raw = vec![0u8; 16 * grid.len()];
    input
        .read_exact(&mut raw)
        .map_err(|e| Error::Format(format!("truncated payload: {e}")))?;
    let data = raw
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..].try_into().unwrap());
            Complex64::new(re, im)
        })
        .collect();
    Ok((Field::from_vec(grid, data)?, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    #[test]
    fn header_layout_is_fixed() {
        let g = make_grid(2, 8, 1.5).unwrap();
        let f = Field::from_fn(g, |x| Complex64::new(x[0], -x[1]));
        let mut bytes = Vec::new();
        write_snapshot(&mut bytes, &f, 0.25).unwrap();
        assert_eq!(bytes.len(), 4 + 2 + 1 + 4 + 8 + 8 + 16 * 64);
        assert_eq!(&bytes[..4], b"SNLS");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(bytes[6], 2);
        assert_eq!(&bytes[7..11], &[8, 0, 0, 0]);
        assert_eq!(&bytes[11..19], &1.5f64.to_le_bytes());
        assert_eq!(&bytes[19..27], &0.25f64.to_le_bytes());
        // second point on the last axis: x = (-1.5, -1.125)
        assert_eq!(&bytes[27 + 16..27 + 24], &(-1.5f64).to_le_bytes());
        assert_eq!(&bytes[27 + 24..27 + 32], &1.125f64.to_le_bytes());
        let (back, t) = read_snapshot(&bytes[..]).unwrap();
        assert_eq!(back, f);
        assert_eq!(t, 0.25);
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(read_snapshot(&b"SNLX"[..]).is_err());
        let g = make_grid(1, 8, 1.0).unwrap();
        let mut bytes = Vec::new();
        write_snapshot(&mut bytes, &Field::zeros(g), 0.0).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(read_snapshot(&bytes[..]).is_err());
    }
}
