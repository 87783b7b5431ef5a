//! CSV formats and atomic file output.
//!
//! * log-likelihood: header of observation ids, one row per posterior draw
//! * exact LOO values: `obs_id,value` (may cover only the subsample)
//! * surrogate: `obs_id,value,pareto_k` (`pareto_k` empty when not computed)
//! * BLR dataset: `y,x1,…,xP`
//! * BLR draws: `beta1,…,betaP,log_sigma`, one row per draw

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::models::BlrDataset;
use crate::surrogates::{LogLikMatrix, SurrogateMethod, SurrogateVector};

/// Matrices above this many cells trigger a size warning.
pub const SIZE_WARNING_CELLS: usize = 100_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LogLikTable {
    pub obs_ids: Vec<String>,
    pub matrix: LogLikMatrix,
}

fn open(path: &Path) -> Result<csv::Reader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file)))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::UnequalLengths { pos, expected_len, len } => Error::parse(
            path,
            format!(
                "ragged row at line {}: expected {expected_len} fields, found {len}",
                pos.as_ref().map_or(0, |p| p.line())
            ),
        ),
        _ => Error::parse(path, e.to_string()),
    }
}

fn parse_cell(path: &Path, line: u64, column: &str, cell: &str) -> Result<f64> {
    let v: f64 = cell.parse().map_err(|_| {
        Error::parse(path, format!("line {line}, column '{column}': '{cell}' is not a number"))
    })?;
    if !v.is_finite() {
        return Err(Error::parse(
            path,
            format!("line {line}, column '{column}': non-finite value {cell}"),
        ));
    }
    Ok(v)
}

fn headers(path: &Path, reader: &mut csv::Reader<BufReader<File>>) -> Result<Vec<String>> {
    let h = reader.headers().map_err(|e| csv_err(path, e))?;
    if h.is_empty() || (h.len() == 1 && h[0].is_empty()) {
        return Err(Error::parse(path, "missing header row"));
    }
    Ok(h.iter().map(str::to_owned).collect())
}

/// Reads a draws × observations log-likelihood CSV.
pub fn ingest_loglik_csv(path: &Path) -> Result<LogLikTable> {
    let mut reader = open(path)?;
    let obs_ids = headers(path, &mut reader)?;
    let n = obs_ids.len();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record).map_err(|e| csv_err(path, e))? {
        let line = record.position().map_or(0, |p| p.line());
        for (i, cell) in record.iter().enumerate() {
            columns[i].push(parse_cell(path, line, &obs_ids[i], cell)?);
        }
    }
    if columns[0].is_empty() {
        return Err(Error::parse(path, "no draws"));
    }
    let matrix = LogLikMatrix::from_columns(columns)?;
    Ok(LogLikTable { obs_ids, matrix })
}

pub fn export_loglik_csv(path: &Path, obs_ids: &[String], matrix: &LogLikMatrix) -> Result<()> {
    use crate::surrogates::LogLikSource;
    crate::error::check_len("observation ids", matrix.obs_count(), obs_ids.len())?;
    let mut buf = String::with_capacity(matrix.obs_count() * (matrix.draw_count() + 1) * 20);
    buf.push_str(&obs_ids.join(","));
    buf.push('\n');
    for s in 0..matrix.draw_count() {
        push_row(&mut buf, (0..matrix.obs_count()).map(|i| matrix.get(s, i)));
    }
    write_atomic(path, buf.as_bytes())
}

fn push_row(buf: &mut String, values: impl Iterator<Item = f64>) {
    use std::fmt::Write as _;
    for (k, v) in values.enumerate() {
        if k > 0 {
            buf.push(',');
        }
        write!(buf, "{v}").expect("writing to a String cannot fail");
    }
    buf.push('\n');
}

/// Default observation ids `1..=n`.
pub fn default_obs_ids(n: usize) -> Vec<String> {
    (1..=n).map(|i| i.to_string()).collect()
}

/// `obs_id → value` for exact LOO values.
pub fn read_exact_csv(path: &Path) -> Result<HashMap<String, f64>> {
    let mut reader = open(path)?;
    let cols = headers(path, &mut reader)?;
    if cols.len() < 2 {
        return Err(Error::parse(path, "expected columns obs_id,value"));
    }
    let mut out = HashMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let v = parse_cell(path, line, &cols[1], &rec[1])?;
        if out.insert(rec[0].to_owned(), v).is_some() {
            return Err(Error::parse(path, format!("line {line}: duplicate obs_id '{}'", &rec[0])));
        }
    }
    Ok(out)
}

/// Looks up exact values for `ids` in order.
pub fn lookup_exact(path: &Path, table: &HashMap<String, f64>, ids: &[&str]) -> Result<Vec<f64>> {
    let missing: Vec<&str> = ids.iter().copied().filter(|id| !table.contains_key(*id)).collect();
    if !missing.is_empty() {
        let shown: Vec<&str> = missing.iter().copied().take(10).collect();
        return Err(Error::parse(
            path,
            format!(
                "missing exact LOO values for {} observation(s): {}{}",
                missing.len(),
                shown.join(", "),
                if missing.len() > 10 { ", …" } else { "" }
            ),
        ));
    }
    Ok(ids.iter().map(|id| table[*id]).collect())
}

pub fn write_exact_csv(path: &Path, obs_ids: &[String], values: &[f64]) -> Result<()> {
    crate::error::check_len("observation ids", values.len(), obs_ids.len())?;
    let mut buf = String::from("obs_id,value\n");
    for (id, v) in obs_ids.iter().zip(values) {
        buf.push_str(&format!("{id},{v}\n"));
    }
    write_atomic(path, buf.as_bytes())
}

pub fn write_surrogate_csv(path: &Path, obs_ids: &[String], surrogate: &SurrogateVector) -> Result<()> {
    crate::error::check_len("observation ids", surrogate.len(), obs_ids.len())?;
    let mut buf = String::from("obs_id,value,pareto_k\n");
    for (i, (id, v)) in obs_ids.iter().zip(surrogate.values()).enumerate() {
        let k = surrogate
            .pareto_k()
            .map(|k| format_k(k[i]))
            .unwrap_or_default();
        buf.push_str(&format!("{id},{v},{k}\n"));
    }
    write_atomic(path, buf.as_bytes())
}

fn format_k(k: f64) -> String {
    if k == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        k.to_string()
    }
}

/// Reads a surrogate CSV; the method tag is supplied by the caller.
pub fn read_surrogate_csv(path: &Path, method: SurrogateMethod) -> Result<(Vec<String>, SurrogateVector)> {
    let mut reader = open(path)?;
    let cols = headers(path, &mut reader)?;
    if cols.len() < 2 {
        return Err(Error::parse(path, "expected columns obs_id,value[,pareto_k]"));
    }
    let mut ids = Vec::new();
    let mut values = Vec::new();
    let mut ks = Vec::new();
    let mut any_k = false;
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        ids.push(rec[0].to_owned());
        values.push(parse_cell(path, line, &cols[1], &rec[1])?);
        match rec.get(2) {
            Some("") | None => ks.push(f64::NAN),
            Some("-inf") => {
                any_k = true;
                ks.push(f64::NEG_INFINITY)
            }
            Some(cell) => {
                any_k = true;
                ks.push(parse_cell(path, line, &cols[2], cell)?)
            }
        }
    }
    if values.is_empty() {
        return Err(Error::parse(path, "no surrogate values"));
    }
    let mut sv = SurrogateVector::new(values, method, 0)?;
    if any_k {
        sv = sv.with_pareto_k(ks)?;
    }
    Ok((ids, sv))
}

pub fn write_dataset_csv(path: &Path, data: &BlrDataset) -> Result<()> {
    let mut buf = String::from("y");
    for j in 1..=data.p() {
        buf.push_str(&format!(",x{j}"));
    }
    buf.push('\n');
    for i in 0..data.n() {
        push_row(
            &mut buf,
            std::iter::once(data.response[i]).chain(data.design.row(i).iter().copied()),
        );
    }
    write_atomic(path, buf.as_bytes())
}

fn read_numeric_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = open(path)?;
    let cols = headers(path, &mut reader)?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, cell)| parse_cell(path, line, &cols[j], cell))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::parse(path, "no data rows"));
    }
    Ok((cols, rows))
}

/// Reads `y,x1,…,xP`. True coefficients and noise level are unknown and set to NaN.
pub fn read_dataset_csv(path: &Path) -> Result<BlrDataset> {
    let (cols, rows) = read_numeric_table(path)?;
    if cols.len() < 2 {
        return Err(Error::parse(path, "expected columns y,x1,…"));
    }
    let p = cols.len() - 1;
    let n = rows.len();
    let response = DVector::from_iterator(n, rows.iter().map(|r| r[0]));
    let design = DMatrix::from_fn(n, p, |i, j| rows[i][j + 1]);
    Ok(BlrDataset {
        design,
        response,
        true_beta: DVector::from_element(p, f64::NAN),
        noise_sd: f64::NAN,
        target_r2: f64::NAN,
    })
}

pub fn write_draws_csv(path: &Path, draws: &DMatrix<f64>) -> Result<()> {
    let p = draws.ncols() - 1;
    let mut header: Vec<String> = (1..=p).map(|j| format!("beta{j}")).collect();
    header.push("log_sigma".into());
    let mut buf = header.join(",");
    buf.push('\n');
    for s in 0..draws.nrows() {
        push_row(&mut buf, draws.row(s).iter().copied());
    }
    write_atomic(path, buf.as_bytes())
}

pub fn read_draws_csv(path: &Path) -> Result<DMatrix<f64>> {
    let (cols, rows) = read_numeric_table(path)?;
    Ok(DMatrix::from_fn(rows.len(), cols.len(), |s, j| rows[s][j]))
}

/// Writes via a temporary file in the same directory and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
