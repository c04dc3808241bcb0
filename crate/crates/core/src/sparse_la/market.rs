//! MatrixMarket coordinate I/O for symmetric matrices (debugging aid).

use std::io::{BufRead, Write};

use super::SparseSym;
use crate::error::{Error, Result};

pub fn write_matrix_market<W: Write>(a: &SparseSym, mut out: W) -> Result<()> {
    writeln!(out, "%%MatrixMarket matrix coordinate real symmetric")?;
    writeln!(out, "{} {} {}", a.dim(), a.dim(), a.nnz())?;
    for (i, j, v) in a.iter() {
        writeln!(out, "{} {} {:e}", i + 1, j + 1, v)?;
    }
    Ok(())
}

pub fn read_matrix_market<R: BufRead>(input: R) -> Result<SparseSym> {
    let mut lines = input.lines().enumerate();
    let bad = |line: usize, reason: &str| Error::UnparseableRow { line: line + 1, reason: reason.to_string() };

    let (no, header) = lines.next().ok_or(Error::EmptyInput)?;
    let header = header?.to_lowercase();
    if !header.starts_with("%%matrixmarket matrix coordinate") || !header.contains("symmetric") {
        return Err(bad(no, "expected a symmetric coordinate MatrixMarket header"));
    }
    let mut dim = None;
    let mut trip = Vec::new();
    for (no, line) in lines {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match dim {
            None => {
                let r: usize = fields.first().and_then(|s| s.parse().ok()).ok_or_else(|| bad(no, "size line"))?;
                let c: usize = fields.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad(no, "size line"))?;
                if r != c {
                    return Err(Error::DimensionMismatch { expected: r, found: c });
                }
                dim = Some(r);
            }
            Some(_) => {
                let parse_idx = |k: usize| -> Result<usize> {
                    fields
                        .get(k)
                        .and_then(|s| s.parse::<usize>().ok())
                        .filter(|&i| i >= 1)
                        .map(|i| i - 1)
                        .ok_or_else(|| bad(no, "index"))
                };
                let v: f64 = fields.get(2).and_then(|s| s.parse().ok()).ok_or_else(|| bad(no, "value"))?;
                trip.push((parse_idx(0)?, parse_idx(1)?, v));
            }
        }
    }
    SparseSym::from_triplets(dim.ok_or(Error::EmptyInput)?, trip)
}
