use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::config::Format;
use crate::Failure;

pub enum Cell {
    Int(u64),
    Real(f64),
}

fn real(v: f64) -> String {
    format!("{v:?}")
}

/// Streams a table as CSV or as a JSON array of records.
pub struct TableWriter {
    out: BufWriter<File>,
    columns: Vec<&'static str>,
    format: Format,
    rows: usize,
}

impl TableWriter {
    pub fn create(dir: &Path, stem: &str, columns: &[&'static str], format: Format) -> Result<Self, Failure> {
        let ext = match format {
            Format::Csv => "csv",
            Format::Json => "json",
        };
        let mut out = BufWriter::new(File::create(dir.join(format!("{stem}.{ext}")))?);
        match format {
            Format::Csv => writeln!(out, "{}", columns.join(","))?,
            Format::Json => write!(out, "[")?,
        }
        Ok(Self { out, columns: columns.to_vec(), format, rows: 0 })
    }

    pub fn row(&mut self, cells: &[Cell]) -> Result<(), Failure> {
        debug_assert_eq!(cells.len(), self.columns.len());
        let text: Vec<String> = cells
            .iter()
            .map(|c| match c {
                Cell::Int(i) => i.to_string(),
                Cell::Real(v) if self.format == Format::Json && !v.is_finite() => "null".into(),
                Cell::Real(v) => real(*v),
            })
            .collect();
        match self.format {
            Format::Csv => writeln!(self.out, "{}", text.join(","))?,
            Format::Json => {
                let sep = if self.rows == 0 { "\n" } else { ",\n" };
                let fields: Vec<String> = self.columns.iter().zip(&text).map(|(k, v)| format!("\"{k}\":{v}")).collect();
                write!(self.out, "{sep}{{{}}}", fields.join(","))?;
            }
        }
        self.rows += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), Failure> {
        if self.format == Format::Json {
            writeln!(self.out, "\n]")?;
        }
        self.out.flush()?;
        Ok(())
    }
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Runtime(e.to_string()))?;
    text.push('\n');
    std::fs::write(dir.join(name), text)?;
    Ok(())
}
