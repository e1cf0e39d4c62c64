//! CSV input/output for point sets and experiment records.
//!
//! Points are written one row per point under the header `x_0,…,x_{d−1}`.
//! Floats use Rust's shortest round-trip formatting, so writing, reading and
//! writing again is byte-identical.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiments::FrontierRecord;
use crate::points::Points;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::Io {
                path: path.to_path_buf(),
                source,
            },
            _ => unreachable!(),
        }
    } else {
        Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        }
    }
}

pub fn write_points_to<W: Write>(w: W, points: &Points) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record((0..points.dim()).map(|i| format!("x_{i}")))?;
    for row in points.rows() {
        wtr.write_record(row.iter().map(f64::to_string))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_points_from<R: Read>(r: R) -> std::result::Result<Points, String> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    let dim = headers.len();
    for (i, h) in headers.iter().enumerate() {
        if h != format!("x_{i}") {
            return Err(format!("unexpected column `{h}` at position {i}, expected `x_{i}`"));
        }
    }
    let mut data = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        for field in rec.iter() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| format!("row {}: `{field}` is not a number", line + 1))?;
            data.push(v);
        }
    }
    Points::from_vec(data, dim).map_err(|e| e.to_string())
}

pub fn write_points(path: &Path, points: &Points) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    write_points_to(file, points).map_err(|e| csv_err(path, e))
}

pub fn read_points(path: &Path) -> Result<Points> {
    let file = File::open(path).map_err(io_err(path))?;
    read_points_from(file).map_err(|msg| Error::Format {
        path: path.to_path_buf(),
        msg,
    })
}

pub fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut wtr = csv::Writer::from_writer(file);
    for r in records {
        wtr.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    wtr.flush().map_err(io_err(path))
}

/// Frontier members as CSV: the record columns followed by `frontier_rank`.
pub fn write_frontier(path: &Path, frontier: &[FrontierRecord]) -> Result<()> {
    #[derive(Serialize)]
    struct Rank {
        frontier_rank: usize,
    }
    let rows: Vec<_> = frontier
        .iter()
        .map(|f| {
            (
                &f.record,
                Rank {
                    frontier_rank: f.frontier_rank,
                },
            )
        })
        .collect();
    write_records(path, &rows)
}

pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(io_err(path))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .collect::<csv::Result<Vec<T>>>()
        .map_err(|e| csv_err(path, e))
}
