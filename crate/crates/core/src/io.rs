//! Feature tables as CSV: a required header row, one record per line,
//! decimal floats.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Shortest text that still carries 17 significant digits.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub data: Matrix<f64>,
}

impl Table {
    pub fn new(header: Vec<String>, data: Matrix<f64>) -> Result<Self> {
        if header.len() != data.cols() {
            return Err(Error::Dimension(format!(
                "header has {} names, data has {} columns",
                header.len(),
                data.cols()
            )));
        }
        Ok(Self { header, data })
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Input(format!("missing column '{name}'")))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.data.column(self.column_index(name)?))
    }

    /// Every column except those named in `exclude`, in file order.
    pub fn without(&self, exclude: &[&str]) -> Result<Table> {
        for name in exclude {
            self.column_index(name)?;
        }
        let keep: Vec<usize> = (0..self.header.len())
            .filter(|&j| !exclude.contains(&self.header[j].as_str()))
            .collect();
        let data = Matrix::from_fn(self.data.rows(), keep.len(), |i, k| self.data[(i, keep[k])]);
        Table::new(keep.iter().map(|&j| self.header[j].clone()).collect(), data)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Table> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Input(format!("cannot open {}: {e}", path.display())))?;
        Self::read_from(file).map_err(|e| match e {
            Error::Input(msg) => Error::Input(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn read_from(reader: impl Read) -> Result<Table> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Input(format!("unreadable header: {e}")))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        if header.is_empty() || header.iter().all(|h| h.is_empty()) {
            return Err(Error::Input("missing header row".into()));
        }
        if let Some(h) = header.iter().find(|h| h.parse::<f64>().is_ok()) {
            return Err(Error::Input(format!("header field '{h}' is numeric; a header row is required")));
        }
        let mut values = Vec::new();
        let mut rows = 0;
        for record in rdr.records() {
            let record = record.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                Error::Input(format!("line {line}: {e}"))
            })?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != header.len() {
                return Err(Error::Dimension(format!(
                    "line {line}: {} fields, header has {}",
                    record.len(),
                    header.len()
                )));
            }
            for (field, name) in record.iter().zip(&header) {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Input(format!("line {line}: column '{name}' holds '{field}', not a number")))?;
                if !v.is_finite() {
                    return Err(Error::Input(format!("line {line}: column '{name}' is not finite")));
                }
                values.push(v);
            }
            rows += 1;
        }
        let cols = header.len();
        let data = if rows == 0 { Matrix::zeros(0, cols) } else { Matrix::from_row_major(rows, cols, values)? };
        Table::new(header, data)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path)
            .map_err(|e| Error::Input(format!("cannot create {}: {e}", path.display())))?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn write_to(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::Input(format!("write failed: {e}"));
        w.write_record(&self.header).map_err(io)?;
        for i in 0..self.data.rows() {
            w.write_record(self.data.row(i).iter().map(|&v| format_float(v))).map_err(io)?;
        }
        w.flush().map_err(|e| Error::Input(format!("write failed: {e}")))?;
        Ok(())
    }
}
