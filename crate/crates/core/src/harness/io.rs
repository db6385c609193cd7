//! CSV input and output.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{invalid, Error, Result};
use crate::factortest::FactorPanel;
use crate::matgen::{Centering, SampleMatrix};

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(r)
}

fn records<R: Read>(r: R) -> Result<Vec<csv::StringRecord>> {
    let mut out = Vec::new();
    for rec in reader(r).records() {
        let rec = rec?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        out.push(rec);
    }
    Ok(out)
}

fn parse_row(rec: &csv::StringRecord, line: usize) -> Result<Vec<f64>> {
    rec.iter()
        .map(|f| f.parse::<f64>().map_err(|_| Error::InvalidInput(format!("row {line}: `{f}` is not a number"))))
        .collect()
}

fn to_array(rows: Vec<Vec<f64>>) -> Result<Array2<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    let nrows = rows.len();
    if rows.iter().any(|r| r.len() != ncols) {
        return invalid("rows have different lengths");
    }
    Array2::from_shape_vec((nrows, ncols), rows.into_iter().flatten().collect()).map_err(|e| Error::InvalidInput(e.to_string()))
}

/// Numeric table, skipping a first row that does not parse as numbers.
pub fn read_numeric_table<R: Read>(r: R) -> Result<(Option<Vec<String>>, Array2<f64>)> {
    let recs = records(r)?;
    if recs.is_empty() {
        return invalid("empty CSV input");
    }
    let header = parse_row(&recs[0], 1).is_err().then(|| recs[0].iter().map(str::to_string).collect());
    let skip = usize::from(header.is_some());
    let rows = recs.iter().enumerate().skip(skip).map(|(i, rec)| parse_row(rec, i + 1)).collect::<Result<Vec<_>>>()?;
    Ok((header, to_array(rows)?))
}

/// `p` rows of `p` values, no header.
pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let recs = records(std::fs::File::open(path)?)?;
    let rows = recs.iter().enumerate().map(|(i, rec)| parse_row(rec, i + 1)).collect::<Result<Vec<_>>>()?;
    let m = to_array(rows)?;
    if m.nrows() != m.ncols() {
        return invalid(format!("matrix file has {} rows and {} columns", m.nrows(), m.ncols()));
    }
    Ok(m)
}

pub fn write_matrix_csv<W: Write>(w: W, m: &Array2<f64>) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for row in m.rows() {
        wr.write_record(row.iter().map(|v| format!("{v}")))?;
    }
    wr.flush()?;
    Ok(())
}

/// `n` rows of `p` values with an optional header row.
pub fn read_sample_csv(path: &Path, centering: Centering) -> Result<SampleMatrix> {
    let (_, data) = read_numeric_table(std::fs::File::open(path)?)?;
    SampleMatrix::new(data, centering)
}

/// Dated table: first column a date label, a header row naming the other
/// columns. Empty cells and `NA`/`NaN` become `NaN`.
pub fn read_dated_table<R: Read>(r: R) -> Result<(Vec<String>, Vec<String>, Array2<f64>)> {
    let recs = records(r)?;
    let Some(head) = recs.first() else { return invalid("empty CSV input") };
    let names: Vec<String> = head.iter().skip(1).map(str::to_string).collect();
    let mut dates = Vec::new();
    let mut rows = Vec::new();
    for (i, rec) in recs.iter().enumerate().skip(1) {
        if rec.len() != names.len() + 1 {
            return invalid(format!("row {}: expected {} fields, got {}", i + 1, names.len() + 1, rec.len()));
        }
        dates.push(rec[0].to_string());
        let row = rec
            .iter()
            .skip(1)
            .map(|f| match f {
                "" | "NA" | "na" | "NaN" | "nan" => Ok(f64::NAN),
                _ => f.parse::<f64>().map_err(|_| Error::InvalidInput(format!("row {}: `{f}` is not a number", i + 1))),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return invalid("table has a header but no data rows");
    }
    Ok((dates, names, to_array(rows)?))
}

/// Inner join of returns and factors on the date column, in the order of the
/// returns file.
pub fn read_factor_panel(returns: &Path, factors: &Path) -> Result<FactorPanel> {
    let (rd, ids, ret) = read_dated_table(std::fs::File::open(returns)?)?;
    let (fd, _, fac) = read_dated_table(std::fs::File::open(factors)?)?;
    join_panel(&rd, ids, &ret, &fd, &fac)
}

pub fn join_panel(rd: &[String], ids: Vec<String>, ret: &Array2<f64>, fd: &[String], fac: &Array2<f64>) -> Result<FactorPanel> {
    let index: HashMap<&str, usize> = fd.iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect();
    let mut keep_r = Vec::new();
    let mut keep_f = Vec::new();
    for (i, d) in rd.iter().enumerate() {
        if let Some(&j) = index.get(d.as_str()) {
            keep_r.push(i);
            keep_f.push(j);
        }
    }
    if keep_r.is_empty() {
        return invalid("returns and factors share no dates");
    }
    let dropped = rd.len() - keep_r.len();
    if dropped > 0 {
        log::warn!("{dropped} return date(s) have no factor observation and were dropped");
    }
    FactorPanel::new(
        ret.select(ndarray::Axis(0), &keep_r),
        fac.select(ndarray::Axis(0), &keep_f),
        ids,
        keep_r.iter().map(|&i| rd[i].clone()).collect(),
    )
}
