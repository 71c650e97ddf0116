//! Shared CSV/JSON helpers for the on-disk formats.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// 17 significant digits, which round-trips every finite `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

pub fn parse_f64(field: &str, row: usize, col: &str) -> Result<f64> {
    field.trim().parse().map_err(|_| Error::Parse {
        row,
        message: format!("column {col}: cannot parse {field:?} as a number"),
    })
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    if !path.exists() {
        return Err(Error::UpstreamMissing(path.to_path_buf()));
    }
    Ok(BufReader::new(File::open(path)?))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(open(path)?)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    use std::io::Write;
    w.write_all(b"\n")?;
    Ok(())
}

/// Writes a single-column CSV of numbers; `None` becomes `NA`.
pub fn write_column_csv(path: &Path, name: &str, values: &[Option<f64>]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(create(path)?);
    wr.write_record([name])?;
    for v in values {
        match v {
            Some(x) => wr.write_record([fmt_f64(*x)])?,
            None => wr.write_record(["NA"])?,
        }
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 123_456_789.123_456_78, f64::MIN_POSITIVE] {
            let s = fmt_f64(v);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{s}");
        }
    }
}
