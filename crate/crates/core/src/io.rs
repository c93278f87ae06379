//! File formats: `TNS3` tensors and CSV factor tables.
//!
//! A `TNS3` file starts with the header line `TNS3 I J K`, followed by the
//! `I·J·K` values in storage order, separated by any whitespace. The writer
//! puts one slice row (`J` values) per line with 17 significant digits, so a
//! write/read round trip is bit-exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::DenseTensor3;

const MAGIC: &str = "TNS3";

fn format_err<T>(line: usize, msg: impl Into<String>) -> Result<T> {
    Err(Error::Format { line, msg: msg.into() })
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Format { line, msg: format!("{kind:?}") },
    }
}

pub fn read_tns3<R: Read>(reader: R) -> Result<DenseTensor3> {
    let mut lines = BufReader::new(reader).lines();
    let header = match lines.next() {
        Some(line) => line?,
        None => return format_err(1, "empty input, expected `TNS3 I J K` header"),
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.first() != Some(&MAGIC) {
        return format_err(1, format!("expected `{MAGIC}` magic, found {:?}", fields.first().unwrap_or(&"")));
    }
    if fields.len() != 4 {
        return format_err(1, format!("header needs 3 dimensions, found {}", fields.len() - 1));
    }
    let mut dims = [0usize; 3];
    for (d, f) in dims.iter_mut().zip(&fields[1..]) {
        *d = match f.parse::<usize>() {
            Ok(v) if v > 0 => v,
            _ => return format_err(1, format!("invalid dimension `{f}`")),
        };
    }
    let expected = dims[0]
        .checked_mul(dims[1])
        .and_then(|n| n.checked_mul(dims[2]))
        .ok_or_else(|| Error::Format { line: 1, msg: "dimensions overflow".into() })?;

    let mut values = Vec::with_capacity(expected);
    let mut last_line = 1;
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        let line = line?;
        for tok in line.split_whitespace() {
            if values.len() == expected {
                return format_err(lineno, format!("more than the {expected} values declared in the header"));
            }
            let v: f64 = match tok.parse() {
                Ok(v) => v,
                Err(_) => return format_err(lineno, format!("cannot parse `{tok}` as a number")),
            };
            if !v.is_finite() {
                return format_err(lineno, format!("non-finite value `{tok}`"));
            }
            values.push(v);
        }
        last_line = lineno;
    }
    if values.len() != expected {
        return format_err(
            last_line,
            format!("header declares {expected} values, found {}", values.len()),
        );
    }
    DenseTensor3::new((dims[0], dims[1], dims[2]), values)
}

pub fn write_tns3<W: Write>(t: &DenseTensor3, writer: W) -> Result<()> {
    let (i, j, k) = t.dims();
    let mut w = BufWriter::new(writer);
    writeln!(w, "{MAGIC} {i} {j} {k}")?;
    for row in t.values().chunks(j) {
        let mut first = true;
        for v in row {
            if !first {
                w.write_all(b" ")?;
            }
            write!(w, "{v:.16e}")?;
            first = false;
        }
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_tns3(path: impl AsRef<Path>) -> Result<DenseTensor3> {
    read_tns3(File::open(path)?)
}

pub fn save_tns3(t: &DenseTensor3, path: impl AsRef<Path>) -> Result<()> {
    write_tns3(t, File::create(path)?)
}

fn component_header(r: usize) -> Vec<String> {
    (1..=r).map(|c| format!("component_{c}")).collect()
}

/// Writes a factor matrix with a `component_1..R` header row.
pub fn write_factor_csv<W: Write>(m: &DMatrix<f64>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(component_header(m.ncols())).map_err(csv_err)?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| format!("{v:.16e}"))).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_factor_csv<R: Read>(reader: R) -> Result<DMatrix<f64>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let ncols = rdr.headers().map_err(csv_err)?.len();
    if ncols == 0 {
        return format_err(1, "empty header");
    }
    let mut values = Vec::new();
    let mut nrows = 0;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        for field in rec.iter() {
            match field.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => return format_err(line, format!("invalid number `{field}`")),
            }
        }
        nrows += 1;
    }
    Ok(DMatrix::from_row_slice(nrows, ncols, &values))
}

/// Reads headerless CSV with one time series per row; rows must share a length.
pub fn read_series_csv<R: Read>(reader: R) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let mut series = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let row = rec
            .iter()
            .map(|field| match field.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => format_err(line, format!("invalid number `{field}`")),
            })
            .collect::<Result<Vec<f64>>>()?;
        series.push(row);
    }
    if series.is_empty() {
        return format_err(1, "no series");
    }
    Ok(series)
}

/// Writes `K` stacked matrices with a leading `k` column identifying the slice.
pub fn write_stacked_csv<W: Write, M: std::borrow::Borrow<DMatrix<f64>>>(mats: &[M], writer: W) -> Result<()> {
    let r = mats.first().map(|m| m.borrow().ncols()).unwrap_or(0);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["k".to_string()];
    header.extend(component_header(r));
    w.write_record(&header).map_err(csv_err)?;
    for (k, m) in mats.iter().enumerate() {
        for row in m.borrow().row_iter() {
            let mut rec = vec![k.to_string()];
            rec.extend(row.iter().map(|v| format!("{v:.16e}")));
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_stacked_csv<R: Read>(reader: R) -> Result<Vec<DMatrix<f64>>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let ncols = rdr.headers().map_err(csv_err)?.len();
    if ncols < 2 {
        return format_err(1, "expected a `k` column and at least one component");
    }
    let mut groups: Vec<Vec<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let k: usize = match rec[0].trim().parse() {
            Ok(k) => k,
            Err(_) => return format_err(line, format!("invalid slice index `{}`", &rec[0])),
        };
        if k + 1 < groups.len() || k > groups.len() {
            return format_err(line, format!("slice index {k} out of order"));
        }
        if k == groups.len() {
            groups.push(Vec::new());
        }
        for field in rec.iter().skip(1) {
            match field.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => groups[k].push(v),
                _ => return format_err(line, format!("invalid number `{field}`")),
            }
        }
    }
    let r = ncols - 1;
    Ok(groups
        .into_iter()
        .map(|g| DMatrix::from_row_slice(g.len() / r, r, &g))
        .collect())
}

pub fn write_labels_csv<W: Write>(labels: &[usize], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["label"]).map_err(csv_err)?;
    for l in labels {
        w.write_record([l.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels_csv<R: Read>(reader: R) -> Result<Vec<usize>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        match rec.get(0).map(|f| f.trim().parse::<usize>()) {
            Some(Ok(l)) => out.push(l),
            _ => return format_err(line, "invalid label"),
        }
    }
    Ok(out)
}
