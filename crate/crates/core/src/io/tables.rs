//! CSV tables: UTF-8, LF line endings, one header row.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::RigidParams;

use super::write_atomic;

/// Column-ordered table serialized with a header row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        CsvTable { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push<I: IntoIterator<Item = String>>(&mut self, row: I) {
        self.rows.push(row.into_iter().collect());
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        let err = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
        w.write_record(&self.header).map_err(err)?;
        for r in &self.rows {
            w.write_record(r).map_err(err)?;
        }
        w.into_inner().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let header = r.headers().map_err(|e| csv_error(path, e))?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()).map_err(|e| csv_error(path, e)))
            .collect::<Result<_>>()?;
        Ok(CsvTable { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => {
            let csv::ErrorKind::Io(io) = e.into_kind() else { unreachable!() };
            Error::io(path, io)
        }
        _ => Error::MalformedData { path: path.into(), reason: e.to_string() },
    }
}

pub(crate) fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

pub(crate) fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(format!("csv: {e}")))?;
    write_atomic(path, &bytes)
}

/// One line of a trajectory file. Angles in degrees, translations in mm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: usize,
    pub m: usize,
    pub n: usize,
    pub alpha_deg: f64,
    pub beta_deg: f64,
    pub gamma_deg: f64,
    pub dx_mm: f64,
    pub dy_mm: f64,
    pub dz_mm: f64,
    pub status: String,
    pub objective: Option<f64>,
}

impl TrajectoryRow {
    pub fn new(t: usize, m: usize, n: usize, p: &RigidParams, status: &str, objective: Option<f64>) -> Self {
        let [alpha_deg, beta_deg, gamma_deg, dx_mm, dy_mm, dz_mm] = p.to_degrees_mm();
        TrajectoryRow { t, m, n, alpha_deg, beta_deg, gamma_deg, dx_mm, dy_mm, dz_mm, status: status.into(), objective }
    }

    pub fn params(&self) -> RigidParams {
        RigidParams::from_degrees_mm([self.alpha_deg, self.beta_deg, self.gamma_deg, self.dx_mm, self.dy_mm, self.dz_mm])
    }
}

pub fn write_trajectory(path: &Path, rows: &[TrajectoryRow]) -> Result<()> {
    write_rows(path, rows)
}

/// Reads a trajectory and checks that `t` runs `0, 1, 2, ...`.
pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let rows: Vec<TrajectoryRow> = read_rows(path)?;
    if let Some((i, r)) = rows.iter().enumerate().find(|(i, r)| r.t != *i) {
        return Err(Error::MalformedData { path: path.into(), reason: format!("row {i} has t = {}", r.t) });
    }
    Ok(rows)
}
