//! Bit-exact field dumps.
//!
//! Text layout: a `m_max,n_cells,order` header line, one line with those three
//! values, then one value per line in row-major order. Values are written with
//! the shortest representation that parses back to the same `f64`.
//!
//! Binary layout (little endian): the 8-byte magic `COAGFLD1`, `m_max` as
//! `f64`, `n_cells` and `order` as `u64`, then the values as `f64`.

use std::io::{BufRead, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CoagError, Result};
use crate::model::field::Field;
use crate::model::grid::MassGrid;

const MAGIC: &[u8; 8] = b"COAGFLD1";
const HEADER: &str = "m_max,n_cells,order";

pub fn write_field_csv<W: Write>(field: &Field, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    let g = field.grid();
    writeln!(w, "{HEADER}")?;
    writeln!(w, "{},{},{}", g.m_max(), g.n_cells(), field.order())?;
    for v in field.values() {
        writeln!(w, "{v}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_field_csv<R: BufRead>(input: R) -> Result<Field> {
    let mut lines = input.lines();
    let mut next = || -> Result<String> {
        lines
            .next()
            .ok_or_else(|| CoagError::Parse("unexpected end of field file".into()))?
            .map_err(CoagError::from)
    };
    if next()?.trim() != HEADER {
        return Err(CoagError::Parse(format!("field file must start with `{HEADER}`")));
    }
    let head = next()?;
    let parts: Vec<&str> = head.trim().split(',').collect();
    if parts.len() != 3 {
        return Err(CoagError::Parse(format!("bad field header `{head}`")));
    }
    let m_max: f64 = parse(parts[0])?;
    let n_cells: usize = parse(parts[1])?;
    let order: usize = parse(parts[2])?;
    let grid = MassGrid::new(m_max, n_cells)?;
    let mut values = Vec::new();
    for line in lines {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() {
            values.push(parse(t)?);
        }
    }
    Field::from_values(grid, order, values)
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| CoagError::Parse(format!("cannot parse `{s}`")))
}

pub fn write_field_binary<W: Write>(field: &Field, out: W) -> Result<()> {
    let mut w = BufWriter::new(out);
    let g = field.grid();
    w.write_all(MAGIC)?;
    w.write_all(&g.m_max().to_le_bytes())?;
    w.write_all(&(g.n_cells() as u64).to_le_bytes())?;
    w.write_all(&(field.order() as u64).to_le_bytes())?;
    for v in field.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_field_binary<R: Read>(mut input: R) -> Result<Field> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    if &buf != MAGIC {
        return Err(CoagError::Parse("not a binary field file".into()));
    }
    input.read_exact(&mut buf)?;
    let m_max = f64::from_le_bytes(buf);
    input.read_exact(&mut buf)?;
    let n_cells = u64::from_le_bytes(buf) as usize;
    input.read_exact(&mut buf)?;
    let order = u64::from_le_bytes(buf) as usize;
    let grid = MassGrid::new(m_max, n_cells)?;
    let len = crate::model::field::tensor_len(n_cells, order)?;
    let mut bytes = Vec::with_capacity(len * 8);
    input.read_to_end(&mut bytes)?;
    if bytes.len() != len * 8 {
        return Err(CoagError::Parse(format!(
            "binary field holds {} bytes of values, expected {}",
            bytes.len(),
            len * 8
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Field::from_values(grid, order, values)
}

/// Writes a field, choosing the layout from the extension (`.bin` is binary,
/// anything else is text).
pub fn save_field(field: &Field, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    if path.extension().is_some_and(|e| e == "bin") {
        write_field_binary(field, file)
    } else {
        write_field_csv(field, file)
    }
}

pub fn load_field(path: &Path) -> Result<Field> {
    let file = std::fs::File::open(path)?;
    if path.extension().is_some_and(|e| e == "bin") {
        read_field_binary(std::io::BufReader::new(file))
    } else {
        read_field_csv(std::io::BufReader::new(file))
    }
}
