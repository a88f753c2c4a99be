//! CSV formats.
//!
//! Every file starts with the comment line `# schema=1`. Data files then
//! have a header `x1,…,xp[,label]` and one observation per row; label files
//! have the header `label`; matrix files (covariances) have no header and
//! one matrix row per line. Floats are written in shortest round-trip form,
//! so reading back reproduces the values bit for bit.

use std::io::{BufRead, BufReader, Read, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{Assignment, Dataset};

pub const SCHEMA_LINE: &str = "# schema=1";

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

/// Reads all records, skipping blank lines and validating any schema line.
/// Returns `(line number, fields)` pairs with 1-based line numbers.
fn records<R: Read>(reader: R) -> Result<Vec<(u64, Vec<String>)>> {
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(v) = comment.strip_prefix("schema=") {
                if v != "1" {
                    return Err(parse_err(line_no, format!("unsupported schema version {v}")));
                }
            }
            continue;
        }
        out.push((line_no, line.split(',').map(|f| f.trim().to_string()).collect()));
    }
    Ok(out)
}

fn parse_f64(line: u64, col: usize, field: &str) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| parse_err(line, format!("column {}: `{field}` is not a number", col + 1)))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("column {}: non-finite value", col + 1)));
    }
    Ok(v)
}

/// Reads a data CSV into a `p × n` dataset. A trailing `label` column
/// becomes the truth, with `K` the largest label.
pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let recs = records(reader)?;
    let Some((header_line, header)) = recs.first() else {
        return Err(parse_err(1, "missing header"));
    };
    let has_label = header.last().map(|h| h == "label").unwrap_or(false);
    let p = header.len() - usize::from(has_label);
    if p == 0 {
        return Err(parse_err(*header_line, "no feature columns"));
    }
    for (j, h) in header[..p].iter().enumerate() {
        if *h != format!("x{}", j + 1) {
            return Err(parse_err(*header_line, format!("expected column `x{}`, found `{h}`", j + 1)));
        }
    }
    let n = recs.len() - 1;
    let mut x = DMatrix::zeros(p, n);
    let mut labels = Vec::with_capacity(if has_label { n } else { 0 });
    for (obs, (line, fields)) in recs[1..].iter().enumerate() {
        if fields.len() != header.len() {
            return Err(parse_err(*line, format!("expected {} fields, found {}", header.len(), fields.len())));
        }
        for j in 0..p {
            x[(j, obs)] = parse_f64(*line, j, &fields[j])?;
        }
        if has_label {
            let l: usize = fields[p]
                .parse()
                .ok()
                .filter(|&l| l >= 1)
                .ok_or_else(|| parse_err(*line, format!("label `{}` is not a positive integer", fields[p])))?;
            labels.push(l);
        }
    }
    let truth = if has_label {
        let k = labels.iter().copied().max().unwrap_or(1);
        Some(Assignment::new(labels, k)?)
    } else {
        None
    };
    Dataset::new(x, truth)
}

pub fn write_dataset<W: Write>(mut w: W, data: &Dataset, with_labels: bool) -> Result<()> {
    writeln!(w, "{SCHEMA_LINE}")?;
    let mut header: Vec<String> = (1..=data.p()).map(|j| format!("x{j}")).collect();
    let labels = if with_labels { data.truth.as_ref() } else { None };
    if labels.is_some() {
        header.push("label".into());
    }
    writeln!(w, "{}", header.join(","))?;
    for i in 0..data.n() {
        let mut row: Vec<String> = data.x.column(i).iter().map(|v| format!("{v:?}")).collect();
        if let Some(t) = labels {
            row.push(t.labels()[i].to_string());
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_labels<W: Write>(mut w: W, a: &Assignment) -> Result<()> {
    writeln!(w, "{SCHEMA_LINE}")?;
    writeln!(w, "label")?;
    for l in a.labels() {
        writeln!(w, "{l}")?;
    }
    Ok(())
}

pub fn read_labels<R: Read>(reader: R) -> Result<Assignment> {
    let recs = records(reader)?;
    match recs.first() {
        Some((_, h)) if h.len() == 1 && h[0] == "label" => {}
        Some((line, _)) => return Err(parse_err(*line, "expected header `label`")),
        None => return Err(parse_err(1, "missing header")),
    }
    let labels = recs[1..]
        .iter()
        .map(|(line, f)| {
            f.first()
                .filter(|_| f.len() == 1)
                .and_then(|s| s.parse::<usize>().ok())
                .filter(|&l| l >= 1)
                .ok_or_else(|| parse_err(*line, "expected one positive integer label"))
        })
        .collect::<Result<Vec<_>>>()?;
    let k = labels.iter().copied().max().unwrap_or(1);
    Assignment::new(labels, k)
}

pub fn read_matrix<R: Read>(reader: R) -> Result<DMatrix<f64>> {
    let recs = records(reader)?;
    let Some((_, first)) = recs.first() else {
        return Err(parse_err(1, "empty matrix file"));
    };
    let cols = first.len();
    let mut data = Vec::with_capacity(recs.len() * cols);
    for (line, fields) in &recs {
        if fields.len() != cols {
            return Err(parse_err(*line, format!("expected {cols} fields, found {}", fields.len())));
        }
        for (j, f) in fields.iter().enumerate() {
            data.push(parse_f64(*line, j, f)?);
        }
    }
    Ok(DMatrix::from_row_slice(recs.len(), cols, &data))
}

pub fn write_matrix<W: Write>(mut w: W, m: &DMatrix<f64>) -> Result<()> {
    writeln!(w, "{SCHEMA_LINE}")?;
    for row in m.row_iter() {
        let fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}
