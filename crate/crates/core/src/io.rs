//! Matrix Market (symmetric coordinate) and dense CSV persistence.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::sparse::SparseSymMatrix;

const MM_HEADER: &str = "%%MatrixMarket matrix coordinate real symmetric";

/// Writes the lower triangle with 1-based indices. Values use the shortest
/// representation that round-trips exactly.
pub fn write_matrix_market<W: Write>(out: W, m: &SparseSymMatrix) -> Result<()> {
    let mut w = BufWriter::new(out);
    let entries: Vec<_> = m.lower_entries().collect();
    writeln!(w, "{MM_HEADER}")?;
    writeln!(w, "{} {} {}", m.dim(), m.dim(), entries.len())?;
    for (r, c, v) in entries {
        writeln!(w, "{} {} {v:e}", r + 1, c + 1)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_market<R: BufRead>(input: R) -> Result<SparseSymMatrix> {
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty Matrix Market file".into()))??;
    let banner: Vec<String> = header.split_whitespace().map(str::to_ascii_lowercase).collect();
    if banner.len() != 5 || banner[0] != "%%matrixmarket" || banner[1] != "matrix" || banner[2] != "coordinate" {
        return Err(Error::Parse(format!("unsupported Matrix Market header '{header}'")));
    }
    if banner[3] != "real" && banner[3] != "double" {
        return Err(Error::Parse(format!("unsupported field '{}'", banner[3])));
    }
    let symmetric = match banner[4].as_str() {
        "symmetric" => true,
        "general" => false,
        other => return Err(Error::Parse(format!("unsupported symmetry '{other}'"))),
    };
    let mut body = lines.filter(|l| !matches!(l, Ok(s) if s.trim().is_empty() || s.starts_with('%')));
    let size = body.next().ok_or_else(|| Error::Parse("missing size line".into()))??;
    let dims = parse_fields::<usize>(&size, 3)?;
    if dims[0] != dims[1] {
        return Err(Error::Parse(format!("matrix is {}x{}, expected square", dims[0], dims[1])));
    }
    let n = dims[0];
    let mut entries = Vec::with_capacity(dims[2]);
    for line in body.by_ref().take(dims[2]) {
        let line = line?;
        let mut it = line.split_whitespace();
        let mut index = || -> Result<usize> {
            let k: usize = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad entry line '{line}'")))?;
            if k == 0 || k > n {
                return Err(Error::Parse(format!("index {k} out of range in '{line}'")));
            }
            Ok(k - 1)
        };
        let (r, c) = (index()?, index()?);
        let v: f64 = line
            .split_whitespace()
            .nth(2)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Parse(format!("bad value in '{line}'")))?;
        entries.push((r, c, v));
    }
    if entries.len() != dims[2] {
        return Err(Error::Parse(format!("expected {} entries, found {}", dims[2], entries.len())));
    }
    if symmetric {
        if let Some(&(r, c, _)) = entries.iter().find(|(r, c, _)| r < c) {
            return Err(Error::Parse(format!("symmetric file has upper entry ({}, {})", r + 1, c + 1)));
        }
        return Ok(SparseSymMatrix::from_lower_entries(n, entries));
    }
    let mut summed = std::collections::BTreeMap::new();
    for (r, c, v) in entries {
        *summed.entry((r, c)).or_insert(0.0) += v;
    }
    if summed.iter().any(|(&(r, c), v)| summed.get(&(c, r)).copied().unwrap_or(0.0) != *v) {
        return Err(Error::Parse("general matrix is not symmetric".into()));
    }
    Ok(SparseSymMatrix::from_lower_entries(n, summed.into_iter().filter(|((r, c), _)| r >= c).map(|((r, c), v)| (r, c, v))))
}

fn parse_fields<T: std::str::FromStr>(line: &str, count: usize) -> Result<Vec<T>> {
    let out: Vec<T> = line.split_whitespace().filter_map(|t| t.parse().ok()).collect();
    if out.len() != count {
        return Err(Error::Parse(format!("expected {count} numbers in '{line}'")));
    }
    Ok(out)
}

pub fn save_matrix_market(path: &Path, m: &SparseSymMatrix) -> Result<()> {
    write_matrix_market(File::create(path)?, m)
}

pub fn load_matrix_market(path: &Path) -> Result<SparseSymMatrix> {
    read_matrix_market(BufReader::new(File::open(path)?))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Dense matrix as headerless CSV, one matrix row per line.
pub fn write_dense_csv<W: Write>(out: W, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dense_csv<R: std::io::Read>(input: R) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in r.records() {
        let record = record.map_err(|e| Error::Parse(e.to_string()))?;
        let row = record
            .iter()
            .map(|t| t.trim().parse::<f64>().map_err(|_| Error::Parse(format!("bad number '{t}'"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub fn save_dense_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_dense_csv(File::create(path)?, m)
}

pub fn load_dense_csv(path: &Path) -> Result<DMatrix<f64>> {
    read_dense_csv(File::open(path)?)
}

/// CSV table with a header row.
pub fn save_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}
