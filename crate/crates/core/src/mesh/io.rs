//! Field serialization.
//!
//! CSV: a header row, then one row per sample point with its coordinates
//! followed by the value (node coordinates for node fields, centroids for
//! cell fields). Values are written in shortest round-trip form.
//!
//! Binary: a 16-byte header
//!
//! ```text
//! magic "HMGF" | version u16 | dim u8 | kind u8 | n_axis u32 | n_slices u32
//! ```
//!
//! followed by `u32` metadata count, the metadata as `f64`, a `u64`
//! payload count and the payload as `f64`. All integers and floats are
//! little-endian, so a round trip is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::{Error, Result};

use super::{Centering, Field, SpatialGrid};

pub const MAGIC: [u8; 4] = *b"HMGF";
const VERSION: u16 = 1;

pub const KIND_NODE: u8 = 0;
pub const KIND_CELL: u8 = 1;
pub const KIND_VECTOR: u8 = 2;
pub const KIND_UNFOLDED: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinaryHeader {
    pub dim: u8,
    pub kind: u8,
    pub n_axis: u32,
    pub n_slices: u32,
}

impl BinaryHeader {
    fn to_bytes(self) -> [u8; 16] {
        let mut b = [0u8; 16];
        b[..4].copy_from_slice(&MAGIC);
        b[4..6].copy_from_slice(&VERSION.to_le_bytes());
        b[6] = self.dim;
        b[7] = self.kind;
        b[8..12].copy_from_slice(&self.n_axis.to_le_bytes());
        b[12..16].copy_from_slice(&self.n_slices.to_le_bytes());
        b
    }

    fn from_bytes(b: &[u8; 16]) -> Result<Self> {
        if b[..4] != MAGIC {
            return Err(Error::Format("bad magic, not an HMGF dump".into()));
        }
        let version = u16::from_le_bytes([b[4], b[5]]);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported HMGF version {version}")));
        }
        Ok(BinaryHeader {
            dim: b[6],
            kind: b[7],
            n_axis: u32::from_le_bytes(b[8..12].try_into().unwrap()),
            n_slices: u32::from_le_bytes(b[12..16].try_into().unwrap()),
        })
    }
}

pub fn write_binary(path: &Path, header: BinaryHeader, meta: &[f64], payload: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&header.to_bytes())?;
    w.write_all(&(meta.len() as u32).to_le_bytes())?;
    for m in meta {
        w.write_all(&m.to_le_bytes())?;
    }
    w.write_all(&(payload.len() as u64).to_le_bytes())?;
    for v in payload {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_binary(path: &Path) -> Result<(BinaryHeader, Vec<f64>, Vec<f64>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut hb = [0u8; 16];
    r.read_exact(&mut hb)?;
    let header = BinaryHeader::from_bytes(&hb)?;
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let nmeta = u32::from_le_bytes(b4) as usize;
    let mut b8 = [0u8; 8];
    let mut meta = Vec::with_capacity(nmeta);
    for _ in 0..nmeta {
        r.read_exact(&mut b8)?;
        meta.push(f64::from_le_bytes(b8));
    }
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    let mut payload = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut b8)?;
        payload.push(f64::from_le_bytes(b8));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after payload", rest.len())));
    }
    Ok((header, meta, payload))
}

pub fn write_field_binary(path: &Path, f: &Field) -> Result<()> {
    let header = BinaryHeader {
        dim: f.grid.dim as u8,
        kind: match f.centering {
            Centering::Node => KIND_NODE,
            Centering::Cell => KIND_CELL,
        },
        n_axis: f.grid.n as u32,
        n_slices: 1,
    };
    let meta = [f.grid.length, if f.grid.periodic { 1.0 } else { 0.0 }];
    write_binary(path, header, &meta, &f.values)
}

pub fn read_field_binary(path: &Path) -> Result<Field> {
    let (h, meta, payload) = read_binary(path)?;
    let centering = match h.kind {
        KIND_NODE => Centering::Node,
        KIND_CELL => Centering::Cell,
        k => return Err(Error::Format(format!("dump kind {k} is not a scalar field"))),
    };
    if meta.len() != 2 {
        return Err(Error::Format("scalar field dump needs 2 metadata entries".into()));
    }
    let grid = SpatialGrid {
        dim: h.dim as usize,
        n: h.n_axis as usize,
        length: meta[0],
        periodic: meta[1] != 0.0,
    };
    Field::new(grid, centering, payload)
}

fn sample_points(f: &Field) -> Vec<[f64; 2]> {
    match f.centering {
        Centering::Node => (0..f.grid.node_count()).map(|i| f.grid.node_coords(i)).collect(),
        Centering::Cell => (0..f.grid.cell_count()).map(|c| f.grid.cell_centroid(c)).collect(),
    }
}

pub fn write_field_csv(path: &Path, f: &Field) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    match f.grid.dim {
        1 => w.write_record(["x", "value"])?,
        _ => w.write_record(["x", "y", "value"])?,
    }
    for (pt, v) in sample_points(f).iter().zip(&f.values) {
        let mut row = vec![pt[0].to_string()];
        if f.grid.dim == 2 {
            row.push(pt[1].to_string());
        }
        row.push(v.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV written by [`write_field_csv`] for a known grid; coordinates
/// must match the grid's sample points.
pub fn read_field_csv(path: &Path, grid: SpatialGrid, centering: Centering) -> Result<Field> {
    let mut r = csv::Reader::from_path(path)?;
    let mut values = Vec::new();
    let template = Field {
        grid,
        centering,
        values: Vec::new(),
    };
    let points = sample_points(&template);
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != grid.dim + 1 {
            return Err(Error::Format(format!("row {}: expected {} columns", i + 2, grid.dim + 1)));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("row {}: {e}", i + 2)))
        };
        let pt = points
            .get(i)
            .ok_or_else(|| Error::Alignment(format!("more rows than grid samples ({})", points.len())))?;
        for d in 0..grid.dim {
            if (parse(&rec[d])? - pt[d]).abs() > 1e-9 * grid.length.max(1.0) {
                return Err(Error::Alignment(format!("row {}: coordinates do not match the grid", i + 2)));
            }
        }
        values.push(parse(&rec[grid.dim])?);
    }
    Field::new(grid, centering, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let g = SpatialGrid {
            dim: 2,
            n: 5,
            length: 1.5,
            periodic: false,
        };
        let f = Field::from_fn(g, Centering::Node, |x| (x[0] * 7.1).sin() / 3.0 + x[1]).unwrap();
        let p = dir.path().join("f.bin");
        write_field_binary(&p, &f).unwrap();
        let back = read_field_binary(&p).unwrap();
        assert_eq!(back.grid, f.grid);
        for (a, b) in f.values.iter().zip(&back.values) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"HMGF");
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let g = SpatialGrid {
            dim: 1,
            n: 9,
            length: 1.0,
            periodic: false,
        };
        let f = Field::from_fn(g, Centering::Cell, |x| 1.0 / (1.0 + x[0]) + 1e-17).unwrap();
        let p = dir.path().join("f.csv");
        write_field_csv(&p, &f).unwrap();
        let back = read_field_csv(&p, g, Centering::Cell).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk.bin");
        std::fs::write(&p, [0u8; 40]).unwrap();
        assert!(matches!(read_field_binary(&p), Err(Error::Format(_))));
    }
}
