//! Headerless CSV matrices of reals, shared by the graph and dataset
//! serializers. Values are written with 17 significant digits so `f64`
//! round trips exactly; `f32` values widen to `f64` losslessly first.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub(crate) fn write_matrix_csv<S: Scalar>(
    path: &Path,
    rows: usize,
    cols: usize,
    values: &[S],
) -> Result<()> {
    assert_eq!(rows * cols, values.len(), "matrix extent mismatch");
    let mut buf = String::with_capacity(values.len() * 24);
    for r in 0..rows {
        for c in 0..cols {
            if c > 0 {
                buf.push(',');
            }
            buf.push_str(&format!("{:.16e}", values[r * cols + c]));
        }
        buf.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(buf.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub(crate) fn read_matrix_csv<S: Scalar>(path: &Path) -> Result<(usize, usize, Vec<S>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let name = path.display().to_string();
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        match cols {
            None => cols = Some(fields.len()),
            Some(c) if c != fields.len() => {
                return Err(Error::Parse {
                    file: name,
                    line: idx + 1,
                    msg: format!("expected {c} columns, found {}", fields.len()),
                });
            }
            _ => {}
        }
        for field in fields {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                file: name.clone(),
                line: idx + 1,
                msg: format!("not a real number: {field:?}"),
            })?;
            values.push(S::from_f64(v));
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::Parse {
        file: name,
        line: 0,
        msg: "file is empty".into(),
    })?;
    Ok((rows, cols, values))
}
