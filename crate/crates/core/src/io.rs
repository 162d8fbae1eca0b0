//! Dataset and estimate containers, and their CSV formats.
//!
//! * `covariates.csv`: header `id,x1,…,xp`, one row per subject.
//! * `responses.csv`: header `id,<s_1>,…,<s_r>` with decimal grid locations.
//! * `estimates.csv`: header `s,beta_1,…,beta_p,dbeta_1,…,dbeta_p`, one row
//!   per grid point.
//!
//! Numbers are written with 17 significant digits so files round-trip.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::scalar::Scalar;

/// `n` response curves on a common grid plus `n` covariate vectors.
#[derive(Debug, Clone)]
pub struct FunctionalDataset<T: Scalar> {
    grid: Grid<T>,
    responses: DMatrix<T>,
    covariates: DMatrix<T>,
    ids: Vec<String>,
}

impl<T: Scalar> FunctionalDataset<T> {
    /// `responses` is `n × r`, `covariates` is `n × p`. Subjects get ids
    /// `"1"…"n"`.
    pub fn new(grid: Grid<T>, responses: DMatrix<T>, covariates: DMatrix<T>) -> Result<Self> {
        let ids = (1..=responses.nrows()).map(|i| i.to_string()).collect();
        Self::with_ids(grid, responses, covariates, ids)
    }

    pub fn with_ids(grid: Grid<T>, responses: DMatrix<T>, covariates: DMatrix<T>, ids: Vec<String>) -> Result<Self> {
        let n = responses.nrows();
        if covariates.nrows() != n || ids.len() != n {
            return Err(Error::Dimension(format!(
                "{} response rows, {} covariate rows, {} ids",
                n,
                covariates.nrows(),
                ids.len()
            )));
        }
        if n < 2 {
            return Err(Error::Invalid(format!("need at least 2 subjects, got {n}")));
        }
        if covariates.ncols() == 0 {
            return Err(Error::Invalid("need at least one covariate".into()));
        }
        if responses.ncols() != grid.len() {
            return Err(Error::Dimension(format!(
                "responses have {} columns for a grid of {} points",
                responses.ncols(),
                grid.len()
            )));
        }
        if let Some(v) = responses.iter().chain(covariates.iter()).find(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite entry {:e}", v)));
        }
        Ok(FunctionalDataset { grid, responses, covariates, ids })
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }
    /// `n × r`.
    pub fn responses(&self) -> &DMatrix<T> {
        &self.responses
    }
    /// `n × p`.
    pub fn covariates(&self) -> &DMatrix<T> {
        &self.covariates
    }
    pub fn ids(&self) -> &[String] {
        &self.ids
    }
    pub fn n(&self) -> usize {
        self.responses.nrows()
    }
    pub fn r(&self) -> usize {
        self.grid.len()
    }
    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    /// Dataset restricted to the given subject rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let responses = self.responses.select_rows(rows.iter());
        let covariates = self.covariates.select_rows(rows.iter());
        let ids = rows.iter().map(|&i| self.ids[i].clone()).collect();
        Self::with_ids(self.grid.clone(), responses, covariates, ids)
    }

    /// Same design with a new response matrix.
    pub fn with_responses(&self, responses: DMatrix<T>) -> Result<Self> {
        Self::with_ids(self.grid.clone(), responses, self.covariates.clone(), self.ids.clone())
    }
}

/// `β̂(s_j)` and `h·β̇̂(s_j)` on a grid, each stored `r × p`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientEstimate<T: Scalar> {
    pub grid: Grid<T>,
    pub beta: DMatrix<T>,
    pub dbeta_scaled: DMatrix<T>,
    pub bandwidth: T,
}

impl<T: Scalar> CoefficientEstimate<T> {
    pub fn new(grid: Grid<T>, beta: DMatrix<T>, dbeta_scaled: DMatrix<T>, bandwidth: T) -> Result<Self> {
        if beta.nrows() != grid.len() || dbeta_scaled.shape() != beta.shape() || beta.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "beta {:?} and dbeta {:?} on a grid of {} points",
                beta.shape(),
                dbeta_scaled.shape(),
                grid.len()
            )));
        }
        if !(bandwidth > T::zero()) || !bandwidth.is_finite() {
            return Err(Error::Argument(format!("bandwidth must be positive, got {:e}", bandwidth)));
        }
        if beta.iter().chain(dbeta_scaled.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite coefficient estimate".into()));
        }
        Ok(CoefficientEstimate { grid, beta, dbeta_scaled, bandwidth })
    }

    pub fn p(&self) -> usize {
        self.beta.ncols()
    }
}

fn fmt_num<T: Scalar>(v: T) -> String {
    format!("{:.16e}", v.as_f64())
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let f = File::open(path)?;
    Ok(csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(f))
}

fn line_of(rec: &csv::StringRecord) -> usize {
    rec.position().map(|p| p.line() as usize).unwrap_or(0)
}

fn parse_cell<T: Scalar>(cell: &str, path: &str, line: usize, what: &str) -> Result<T> {
    let v: f64 = cell.parse().map_err(|_| Error::parse(path, line, format!("cannot parse {what} {cell:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(path, line, format!("non-finite {what} {cell:?}")));
    }
    Ok(T::lit(v))
}

/// Reads rows of `id,v_1,…,v_k` into a map, checking raggedness and ids.
fn read_table<T: Scalar>(path: &Path, what: &str) -> Result<(csv::StringRecord, Vec<(String, Vec<T>, usize)>)> {
    let name = path.display().to_string();
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers().map_err(|e| Error::parse(&name, 1, e.to_string()))?.clone();
    if header.len() < 2 || header.get(0) != Some("id") {
        return Err(Error::parse(&name, 1, "header must start with `id` followed by at least one column"));
    }
    let width = header.len();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::parse(&name, line, format!("ragged or malformed row: {e}"))
        })?;
        let line = line_of(&rec);
        if rec.len() != width {
            return Err(Error::parse(&name, line, format!("expected {width} fields, found {}", rec.len())));
        }
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(Error::parse(&name, line, "empty id"));
        }
        let vals = rec.iter().skip(1).map(|c| parse_cell(c, &name, line, what)).collect::<Result<Vec<T>>>()?;
        rows.push((id, vals, line));
    }
    Ok((header, rows))
}

/// Loads a dataset, pairing response and covariate rows by subject id.
/// Subjects appear in covariate-file order.
pub fn load_dataset<T: Scalar>(covariates_path: impl AsRef<Path>, responses_path: impl AsRef<Path>) -> Result<FunctionalDataset<T>> {
    let (cpath, rpath) = (covariates_path.as_ref(), responses_path.as_ref());
    let rname = rpath.display().to_string();
    let cname = cpath.display().to_string();

    let (rheader, rrows) = read_table::<T>(rpath, "response")?;
    let points = rheader
        .iter()
        .skip(1)
        .map(|c| parse_cell::<T>(c, &rname, 1, "grid location"))
        .collect::<Result<Vec<T>>>()?;
    for j in 1..points.len() {
        if points[j] == points[j - 1] {
            return Err(Error::parse(&rname, 1, format!("duplicate grid location {}", &rheader[j + 1])));
        }
        if points[j] < points[j - 1] {
            return Err(Error::parse(&rname, 1, format!("unsorted grid: {} follows {}", &rheader[j + 1], &rheader[j])));
        }
    }
    let grid = Grid::new(points).map_err(|e| Error::parse(&rname, 1, e.to_string()))?;

    let (_, crows) = read_table::<T>(cpath, "covariate")?;
    let p = crows.first().map(|r| r.1.len()).unwrap_or(0);

    let mut by_id: HashMap<&str, (&Vec<T>, usize)> = HashMap::new();
    for (id, vals, line) in &rrows {
        if by_id.insert(id.as_str(), (vals, *line)).is_some() {
            return Err(Error::parse(&rname, *line, format!("duplicate id {id:?}")));
        }
    }
    let n = crows.len();
    let r = grid.len();
    let mut y = DMatrix::zeros(n, r);
    let mut x = DMatrix::zeros(n, p);
    let mut ids = Vec::with_capacity(n);
    let mut seen = std::collections::HashSet::new();
    for (i, (id, vals, line)) in crows.iter().enumerate() {
        if !seen.insert(id.as_str()) {
            return Err(Error::parse(&cname, *line, format!("duplicate id {id:?}")));
        }
        let (yv, _) = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::parse(&cname, *line, format!("id {id:?} missing from {rname}")))?;
        for (j, v) in yv.iter().enumerate() {
            y[(i, j)] = *v;
        }
        for (k, v) in vals.iter().enumerate() {
            x[(i, k)] = *v;
        }
        ids.push(id.clone());
    }
    if let Some((id, _, line)) = rrows.iter().find(|(id, _, _)| !seen.contains(id.as_str())) {
        return Err(Error::parse(&rname, *line, format!("id {id:?} missing from {cname}")));
    }
    FunctionalDataset::with_ids(grid, y, x, ids)
}

/// Writes `covariates.csv` and `responses.csv` for a dataset.
pub fn write_dataset<T: Scalar>(data: &FunctionalDataset<T>, covariates_path: impl AsRef<Path>, responses_path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(covariates_path)?);
    let head: Vec<String> = (1..=data.p()).map(|k| format!("x{k}")).collect();
    writeln!(w, "id,{}", head.join(","))?;
    for (i, id) in data.ids().iter().enumerate() {
        let row: Vec<String> = data.covariates().row(i).iter().map(|&v| fmt_num(v)).collect();
        writeln!(w, "{id},{}", row.join(","))?;
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(responses_path)?);
    let head: Vec<String> = data.grid().points().iter().map(|s| format!("{}", s.as_f64())).collect();
    writeln!(w, "id,{}", head.join(","))?;
    for (i, id) in data.ids().iter().enumerate() {
        let row: Vec<String> = data.responses().row(i).iter().map(|&v| fmt_num(v)).collect();
        writeln!(w, "{id},{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_estimate<T: Scalar>(est: &CoefficientEstimate<T>, path: impl AsRef<Path>) -> Result<()> {
    let p = est.p();
    if est.grid.is_empty() || p == 0 {
        return Err(Error::Invalid("refusing to write an empty estimate".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    let mut head = vec!["s".to_string()];
    head.extend((1..=p).map(|k| format!("beta_{k}")));
    head.extend((1..=p).map(|k| format!("dbeta_{k}")));
    writeln!(w, "{}", head.join(","))?;
    for (j, &s) in est.grid.points().iter().enumerate() {
        let mut row = vec![fmt_num(s)];
        row.extend(est.beta.row(j).iter().map(|&v| fmt_num(v)));
        row.extend(est.dbeta_scaled.row(j).iter().map(|&v| fmt_num(v)));
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an estimate file. The bandwidth is not part of the file format, so
/// the caller supplies it (it is recorded in the diagnostics).
pub fn read_estimate<T: Scalar>(path: impl AsRef<Path>, bandwidth: T) -> Result<CoefficientEstimate<T>> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers().map_err(|e| Error::parse(&name, 1, e.to_string()))?.clone();
    if header.len() < 3 || (header.len() - 1) % 2 != 0 || header.get(0) != Some("s") {
        return Err(Error::parse(&name, 1, "header must be s,beta_1..beta_p,dbeta_1..dbeta_p"));
    }
    let p = (header.len() - 1) / 2;
    let mut s = Vec::new();
    let mut vals = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::parse(&name, e.position().map(|q| q.line() as usize).unwrap_or(0), e.to_string()))?;
        let line = line_of(&rec);
        let row = rec.iter().map(|c| parse_cell::<T>(c, &name, line, "value")).collect::<Result<Vec<T>>>()?;
        s.push(row[0]);
        vals.push(row);
    }
    let grid = Grid::new(s).map_err(|e| Error::parse(&name, 0, e.to_string()))?;
    let r = grid.len();
    let beta = DMatrix::from_fn(r, p, |j, k| vals[j][1 + k]);
    let dbeta = DMatrix::from_fn(r, p, |j, k| vals[j][1 + p + k]);
    CoefficientEstimate::new(grid, beta, dbeta, bandwidth)
}
