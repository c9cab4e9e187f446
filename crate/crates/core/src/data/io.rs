//! Line-delimited JSON datasets: one [`ExampleRecord`] object per line, keys
//! in declaration order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::record::{Dataset, ExampleRecord};
use crate::error::{Error, Result};

pub fn write_records<W: Write>(records: &[ExampleRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Parses records; blank lines are skipped, anything else that fails to parse
/// or validate is reported with its 1-based line number.
pub fn read_records<R: BufRead>(input: R) -> Result<Dataset> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |message: String| Error::Parse { line: i + 1, message };
        let record: ExampleRecord = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        record.validate().map_err(|e| parse(e.to_string()))?;
        records.push(record);
    }
    Ok(records)
}

pub fn write_dataset(records: &[ExampleRecord], path: impl AsRef<Path>) -> Result<()> {
    write_records(records, BufWriter::new(File::create(path)?))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound("dataset", path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    read_records(BufReader::new(file))
}
